//! Time integration: the direct gradient flow of YMH, the heat flow of a
//! Hermitian metric, the gauge-fixing ODE, and the harness comparing them.

use std::time::Instant;

use num_complex::Complex64 as C;
use serde::{Deserialize, Serialize};

use crate::critical;
use crate::error::{LabError, Result};
use crate::fields::{
    self, apply_gauge, apply_gauge_field, flow_eval, higgs_residual, metric_norm, ComplexGauge, GaugeTransform,
    HiggsPair, Tangent,
};
use crate::geometry::{d_prime, dbar, FormDegree, MatrixField, Stencil, TorusGrid};
use crate::mat;
use crate::par;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Integrator {
    Rk4,
    Euler,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    /// dt = c_cfl h² / (1 + sup|∗μ₁|)
    pub c_cfl: f64,
    pub t_max: f64,
    pub integrator: Integrator,
    pub tol_grad: f64,
    /// Observable rows are recorded every this many steps while t ≤ 1.
    pub snapshot_every: usize,
    /// After t = 1 rows are recorded at geometric times t_{k+1} = growth · t_k.
    pub geometric_growth: f64,
    /// Keep full pairs at the recorded times (otherwise only the final pair).
    pub keep_snapshots: bool,
    /// Overrides the CFL rule with a fixed step.
    pub fixed_dt: Option<f64>,
}

impl FlowConfig {
    /// Defaults for a grid: c_cfl = 0.2 on the central stencil, 0.13 on the
    /// spectral one (its largest symbol is about π² times larger).
    pub fn for_grid(grid: &TorusGrid) -> Self {
        FlowConfig {
            c_cfl: match grid.stencil() {
                Stencil::Central => 0.2,
                Stencil::Spectral => 0.13,
            },
            t_max: 10.0,
            integrator: Integrator::Rk4,
            tol_grad: 1e-6,
            snapshot_every: 50,
            geometric_growth: 1.02,
            keep_snapshots: false,
            fixed_dt: None,
        }
    }

    pub fn dt(&self, grid: &TorusGrid, sup_mu: f64) -> f64 {
        match self.fixed_dt {
            Some(dt) => dt,
            None => self.c_cfl * grid.h().powi(2) / (1.0 + sup_mu),
        }
    }
}

pub const BLOWUP_NORM: f64 = 1e12;

/// Observables at one recorded time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observables {
    pub t: f64,
    pub ymh: f64,
    pub qh: f64,
    pub grad_norm: f64,
    pub sup_mu: f64,
    pub higgs_residual: f64,
    /// ∫ tr φ^k for k = 1..r
    pub tr_phi: Vec<C>,
    /// H_k for k = 1..r
    pub convex: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowStatus {
    Converged,
    Timeout,
    BlowUp,
}

/// Step-level checks accumulated during a run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FlowDiagnostics {
    pub steps: usize,
    /// max over steps of (YMH_{n+1} − YMH_n) / YMH_n
    pub max_ymh_rise: f64,
    /// max over steps of (sup_{n+1} − sup_n) / sup_n
    pub max_sup_mu_rise: f64,
    /// max over recorded intervals of (H_k(t₂) − H_k(t₁)) / max(|H_k|, YMH^{1/2})
    pub max_convex_rise: f64,
    pub ymh_drop: f64,
    /// 2 ∫ ‖V‖²_g dt by the trapezoid rule
    pub dissipation: f64,
    /// max over recorded times and sites of |tr φ^k(t) − tr φ^k(0)|
    pub max_trace_drift: f64,
    pub higgs_residual_initial: f64,
    pub higgs_residual_max: f64,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub observables: Vec<Observables>,
    pub snapshots: Vec<(f64, HiggsPair)>,
    pub final_pair: HiggsPair,
    pub final_time: f64,
    pub status: FlowStatus,
    pub diagnostics: FlowDiagnostics,
}

/// Pointwise tr φ^k, k = 1..r, as `[k-1][site]`.
pub fn trace_powers(phi: &MatrixField) -> Vec<Vec<C>> {
    let r = phi.r();
    let per_site: Vec<Vec<C>> = par::map_range(phi.grid().sites(), |s| {
        let f = phi.site(s);
        let mut pow = f.to_vec();
        let mut out = Vec::with_capacity(r);
        for k in 1..=r {
            if k > 1 {
                pow = mat::mul_new(&pow, f, r);
            }
            out.push(mat::trace(&pow, r));
        }
        out
    });
    (0..r).map(|k| per_site.iter().map(|v| v[k]).collect()).collect()
}

pub fn observe(p: &HiggsPair, t: f64, grad_norm: f64) -> Observables {
    let mu = fields::moment1(p);
    let ymh = mu.l2_norm().powi(2);
    let mc = fields::moment_c(p);
    let h2 = p.grid().h().powi(2);
    let tr_phi = trace_powers(p.phi()).iter().map(|v| v.iter().sum::<C>() * h2).collect();
    Observables {
        t,
        ymh,
        qh: ymh + mc.l2_norm().powi(2),
        grad_norm,
        sup_mu: mu.sup_norm(),
        higgs_residual: higgs_residual(p),
        tr_phi,
        convex: critical::convex_invariants(p),
    }
}

#[derive(Default)]
struct Recorder {
    tr0: Vec<Vec<C>>,
    keep: bool,
    times: Vec<f64>,
    observables: Vec<Observables>,
    snapshots: Vec<(f64, HiggsPair)>,
}

impl Recorder {
    fn record(&mut self, p: &HiggsPair, t: f64, g: f64, diag: &mut FlowDiagnostics) {
        let o = observe(p, t, g);
        if self.observables.is_empty() {
            diag.higgs_residual_initial = o.higgs_residual;
        }
        diag.higgs_residual_max = diag.higgs_residual_max.max(o.higgs_residual);
        if let Some(prev) = self.observables.last() {
            let scale = o.ymh.sqrt().max(1e-300);
            for (a, b) in prev.convex.iter().zip(&o.convex) {
                diag.max_convex_rise = diag.max_convex_rise.max((b - a) / a.abs().max(scale));
            }
        }
        let tr = trace_powers(p.phi());
        for (k, v) in tr.iter().enumerate() {
            for (x, y) in v.iter().zip(&self.tr0[k]) {
                diag.max_trace_drift = diag.max_trace_drift.max((x - y).norm());
            }
        }
        self.times.push(t);
        self.observables.push(o);
        if self.keep {
            self.snapshots.push((t, p.clone()));
        }
    }
}

/// One explicit step of the downward flow.
pub fn step_gradient_flow(p: &HiggsPair, dt: f64, integrator: Integrator) -> HiggsPair {
    let k1 = flow_eval(p).velocity;
    step_with_first_stage(p, &k1, dt, integrator)
}

fn step_with_first_stage(p: &HiggsPair, k1: &Tangent, dt: f64, integrator: Integrator) -> HiggsPair {
    match integrator {
        Integrator::Euler => p.displaced(k1, dt),
        Integrator::Rk4 => {
            let k2 = flow_eval(&p.displaced(k1, 0.5 * dt)).velocity;
            let k3 = flow_eval(&p.displaced(&k2, 0.5 * dt)).velocity;
            let k4 = flow_eval(&p.displaced(&k3, dt)).velocity;
            let mut incr = k1.clone();
            incr.axpy(C::new(2.0, 0.0), &k2);
            incr.axpy(C::new(2.0, 0.0), &k3);
            incr.axpy(mat::ONE, &k4);
            p.displaced(&incr, dt / 6.0)
        }
    }
}

/// Integrate until ‖grad‖ ≤ tol_grad or t = t_max.
pub fn run_gradient_flow(p0: &HiggsPair, cfg: &FlowConfig) -> Result<Trajectory> {
    let start = Instant::now();
    let grid = *p0.grid();
    let mut p = p0.clone();
    let mut t = 0.0;
    let mut diag = FlowDiagnostics::default();
    let mut rec = Recorder { tr0: trace_powers(p.phi()), keep: cfg.keep_snapshots, ..Default::default() };
    let mut eval = flow_eval(&p);
    let mut grad_norm = metric_norm(&eval.velocity);
    let ymh0 = eval.ymh;
    let mut next_geometric = 1.0;
    let mut since_record = 0usize;
    let mut status = FlowStatus::Timeout;

    rec.record(&p, t, grad_norm, &mut diag);
    loop {
        if grad_norm <= cfg.tol_grad {
            status = FlowStatus::Converged;
            break;
        }
        if t >= cfg.t_max * (1.0 - 1e-14) {
            break;
        }
        let dt = cfg.dt(&grid, eval.sup_mu).min(cfg.t_max - t);
        let next = step_with_first_stage(&p, &eval.velocity, dt, cfg.integrator);
        let norm = next.sup_field_norm();
        if !(norm <= BLOWUP_NORM) || !next.is_finite() {
            status = FlowStatus::BlowUp;
            break;
        }
        let next_eval = flow_eval(&next);
        let next_grad = metric_norm(&next_eval.velocity);
        if eval.ymh > 0.0 {
            diag.max_ymh_rise = diag.max_ymh_rise.max((next_eval.ymh - eval.ymh) / eval.ymh);
        }
        if eval.sup_mu > 0.0 {
            diag.max_sup_mu_rise = diag.max_sup_mu_rise.max((next_eval.sup_mu - eval.sup_mu) / eval.sup_mu);
        }
        diag.dissipation += dt * (grad_norm.powi(2) + next_grad.powi(2));
        diag.steps += 1;
        t += dt;
        p = next;
        eval = next_eval;
        grad_norm = next_grad;
        since_record += 1;
        let due = if t <= 1.0 {
            since_record >= cfg.snapshot_every.max(1)
        } else {
            t >= next_geometric
        };
        if due {
            if t > 1.0 {
                while next_geometric <= t {
                    next_geometric *= cfg.geometric_growth;
                }
            }
            since_record = 0;
            rec.record(&p, t, grad_norm, &mut diag);
        }
    }
    if rec.times.last() != Some(&t) {
        rec.record(&p, t, grad_norm, &mut diag);
    }
    diag.ymh_drop = ymh0 - eval.ymh;
    diag.wall_seconds = start.elapsed().as_secs_f64();
    Ok(Trajectory {
        times: rec.times,
        observables: rec.observables,
        snapshots: rec.snapshots,
        final_pair: p,
        final_time: t,
        status,
        diagnostics: diag,
    })
}

impl Trajectory {
    /// CSV with header: time, ymh, qh, grad_norm, sup_mu, higgs_residual,
    /// re_tr_phi_k, im_tr_phi_k for k = 1..r, H_1..H_r.
    pub fn to_csv(&self) -> String {
        let r = self.final_pair.r();
        let mut s = String::from("time,ymh,qh,grad_norm,sup_mu,higgs_residual");
        for k in 1..=r {
            s += &format!(",re_tr_phi_{k},im_tr_phi_{k}");
        }
        for k in 1..=r {
            s += &format!(",H_{k}");
        }
        s.push('\n');
        for o in &self.observables {
            s += &format!(
                "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
                o.t, o.ymh, o.qh, o.grad_norm, o.sup_mu, o.higgs_residual
            );
            for z in &o.tr_phi {
                s += &format!(",{:.17e},{:.17e}", z.re, z.im);
            }
            for h in &o.convex {
                s += &format!(",{h:.17e}");
            }
            s.push('\n');
        }
        s
    }
}

/// How the trace part λ of ΛF_H is removed in the metric flow.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LambdaRule {
    /// λ = spatial mean of (1/r) tr ΛF_H, a constant.
    #[default]
    Mean,
    /// λ = (1/r) tr ΛF_H at each site.
    Pointwise,
}

/// Hermitian positive metric h (H = H₀h) over a frozen base pair.
#[derive(Clone, Debug)]
pub struct HermitianMetric {
    pub h: MatrixField,
    pub base: HiggsPair,
    pub lambda_rule: LambdaRule,
    base_curvature: MatrixField,
}

impl HermitianMetric {
    pub fn new(base: HiggsPair) -> Self {
        let h = MatrixField::identity(*base.grid(), base.r());
        Self::with_metric(base, h)
    }

    pub fn with_metric(base: HiggsPair, h: MatrixField) -> Self {
        let base_curvature = fields::curvature(&base);
        HermitianMetric { h, base, lambda_rule: LambdaRule::Mean, base_curvature }
    }

    /// ΛF_H = F_{A₀} + d″_{A₀}(h⁻¹ d′_{A₀} h) + [φ₀, h⁻¹φ₀†h], as a dx∧dy coefficient field.
    pub fn lambda_f(&self, h: &MatrixField) -> Result<MatrixField> {
        let r = self.base.r();
        let q = r * r;
        let a0 = self.base.a2();
        let f0 = self.base.phi();
        let hinv = fields::pointwise_inverse(h)?;
        // d′_{A₀}h = ∂h − [a₀†, h]
        let dh = d_prime(h);
        let x = dh.zip_sites(&hinv, FormDegree::Dz, |s, d, hi, o| {
            let mut ad = vec![mat::ZERO; q];
            mat::adjoint(a0.site(s), &mut ad, r);
            let mut c = vec![mat::ZERO; q];
            mat::comm(&ad, h.site(s), &mut c, r);
            let t: Vec<C> = d.iter().zip(&c).map(|(a, b)| a - b).collect();
            mat::mul(hi, &t, o, r);
        });
        // d″_{A₀}X = (∂̄X + [a₀, X]) dz̄∧dz; dbar on a dz-field already carries the 2i
        let dx = dbar(&x);
        let out = dx.zip_sites(&hinv, FormDegree::Top, |s, d, hi, o| {
            let mut c = vec![mat::ZERO; q];
            mat::comm(a0.site(s), x.site(s), &mut c, r);
            let mut fd = vec![mat::ZERO; q];
            mat::adjoint(f0.site(s), &mut fd, r);
            let k = mat::mul_new(&mat::mul_new(hi, &fd, r), h.site(s), r);
            let mut ck = vec![mat::ZERO; q];
            mat::comm(f0.site(s), &k, &mut ck, r);
            let two_i = C::new(0.0, 2.0);
            for j in 0..q {
                o[j] = self.base_curvature.site(s)[j] + d[j] + two_i * c[j] - two_i * ck[j];
            }
        });
        Ok(out)
    }

    /// The trace part λ (as a rank-1 field of per-site values).
    pub fn lambda(&self, lf: &MatrixField) -> Vec<C> {
        let r = self.base.r();
        let per_site: Vec<C> = (0..lf.grid().sites()).map(|s| mat::trace(lf.site(s), r) / r as f64).collect();
        match self.lambda_rule {
            LambdaRule::Pointwise => per_site,
            LambdaRule::Mean => {
                let m = per_site.iter().sum::<C>() / per_site.len() as f64;
                vec![m; per_site.len()]
            }
        }
    }

    /// ∂h/∂t = −2i h (ΛF_H − λ Id).
    pub fn velocity(&self, h: &MatrixField) -> Result<(MatrixField, Vec<C>)> {
        let r = self.base.r();
        let lf = self.lambda_f(h)?;
        let lam = self.lambda(&lf);
        let v = lf.zip_sites(h, FormDegree::Zero, |s, l, hh, o| {
            let mut m = l.to_vec();
            for i in 0..r {
                m[i * r + i] -= lam[s];
            }
            mat::mul(hh, &m, o, r);
            for z in o.iter_mut() {
                *z *= C::new(0.0, -2.0);
            }
        });
        Ok((v, lam))
    }

    pub fn min_eigenvalue(&self) -> (f64, usize) {
        min_eigenvalue(&self.h)
    }
}

fn min_eigenvalue(h: &MatrixField) -> (f64, usize) {
    let r = h.r();
    let mins = par::map_range(h.grid().sites(), |s| mat::herm_eig(h.site(s), r).0[0]);
    mins.iter()
        .enumerate()
        .fold((f64::INFINITY, 0), |(m, i), (j, &v)| if v < m { (v, j) } else { (m, i) })
}

/// One step of the metric heat flow; returns the new metric and the λ used at the start.
pub fn step_simpson_heat(m: &HermitianMetric, dt: f64, integrator: Integrator) -> Result<(HermitianMetric, C)> {
    let (k1, lam) = m.velocity(&m.h)?;
    let h_new = match integrator {
        Integrator::Euler => {
            let mut h = m.h.clone();
            h.axpy(C::new(dt, 0.0), &k1);
            h
        }
        Integrator::Rk4 => {
            let stage = |k: &MatrixField, s: f64| {
                let mut h = m.h.clone();
                h.axpy(C::new(s, 0.0), k);
                h
            };
            let (k2, _) = m.velocity(&stage(&k1, 0.5 * dt))?;
            let (k3, _) = m.velocity(&stage(&k2, 0.5 * dt))?;
            let (k4, _) = m.velocity(&stage(&k3, dt))?;
            let mut h = m.h.clone();
            h.axpy(C::new(dt / 6.0, 0.0), &k1);
            h.axpy(C::new(dt / 3.0, 0.0), &k2);
            h.axpy(C::new(dt / 3.0, 0.0), &k3);
            h.axpy(C::new(dt / 6.0, 0.0), &k4);
            h
        }
    };
    let h_new = h_new.herm_part();
    let (min_eig, site) = min_eigenvalue(&h_new);
    if !(min_eig > 0.0) {
        return Err(LabError::Positivity { min_eig, site });
    }
    let mut out = m.clone();
    out.h = h_new;
    Ok((out, lam[0]))
}

/// g = h^{-1/2}, pointwise Hermitian positive.
pub fn inverse_sqrt(h: &MatrixField) -> MatrixField {
    let r = h.r();
    h.map_sites(FormDegree::Zero, |_, a, o| o.copy_from_slice(&mat::herm_fn(a, r, |l| 1.0 / l.sqrt())))
}

/// p = g·base with g = h^{-1/2}.
pub fn reconstruct_pair(m: &HermitianMetric) -> Result<(HiggsPair, ComplexGauge)> {
    let g = ComplexGauge::new(inverse_sqrt(&m.h))?;
    let p = apply_gauge(&g, &m.base)?;
    Ok((p, g))
}

/// α = ½(g⁻¹ġ − ġ†(g†)⁻¹) with ġ given.
pub fn alpha_from(g: &MatrixField, gdot: &MatrixField) -> Result<MatrixField> {
    let r = g.r();
    let ginv = fields::pointwise_inverse(g)?;
    Ok(ginv.zip_sites(gdot, FormDegree::Zero, |_, gi, gd, o| {
        let x = mat::mul_new(gi, gd, r);
        o.copy_from_slice(&x);
        mat::skew_part(o, r);
    }))
}

/// Centered-difference α at the middle of three consecutive g samples spaced dt.
pub fn alpha_centered(g_prev: &MatrixField, g_mid: &MatrixField, g_next: &MatrixField, dt: f64) -> Result<MatrixField> {
    let gdot = g_next.sub(g_prev).scaled(C::new(0.5 / dt, 0.0));
    alpha_from(g_mid, &gdot)
}

fn s_rhs(s: &MatrixField, alpha: &MatrixField, lam: C) -> MatrixField {
    let r = s.r();
    // only the skew part of −iλ acts; with ΛF_H skew, λ is imaginary and drops out
    let shift = C::new(0.0, (C::new(0.0, -1.0) * lam).im);
    s.zip_sites(alpha, FormDegree::Zero, |_, sm, a, o| {
        let mut m = a.to_vec();
        for i in 0..r {
            m[i * r + i] += shift;
        }
        mat::mul(sm, &m, o, r);
    })
}

/// One RK4 step of ∂S/∂t = S(α − iλ Id) over [t, t+step], given α at the start,
/// midpoint and end, followed by polar re-projection. Returns the drift that
/// the projection removed.
pub fn gauge_fix_step(
    s: &MatrixField,
    alpha: [&MatrixField; 3],
    lam: [C; 3],
    step: f64,
) -> (MatrixField, f64) {
    let k1 = s_rhs(s, alpha[0], lam[0]);
    let stage = |k: &MatrixField, c: f64| {
        let mut x = s.clone();
        x.axpy(C::new(c, 0.0), k);
        x
    };
    let k2 = s_rhs(&stage(&k1, 0.5 * step), alpha[1], lam[1]);
    let k3 = s_rhs(&stage(&k2, 0.5 * step), alpha[1], lam[1]);
    let k4 = s_rhs(&stage(&k3, step), alpha[2], lam[2]);
    let mut next = s.clone();
    next.axpy(C::new(step / 6.0, 0.0), &k1);
    next.axpy(C::new(step / 3.0, 0.0), &k2);
    next.axpy(C::new(step / 3.0, 0.0), &k3);
    next.axpy(C::new(step / 6.0, 0.0), &k4);
    let proj = GaugeTransform::from_polar(&next);
    let drift = proj.max_diff(&next);
    (proj.into_field(), drift)
}

/// Integrate the gauge-fixing ODE over samples of α, λ spaced dt; S is returned
/// at every second sample (RK4 with step 2dt using the middle sample).
pub fn gauge_fix_ode(alpha: &[MatrixField], lambda: &[C], dt: f64) -> Result<Vec<GaugeTransform>> {
    if alpha.is_empty() {
        return Ok(vec![]);
    }
    let grid = *alpha[0].grid();
    let r = alpha[0].r();
    let mut s = MatrixField::identity(grid, r);
    let mut out = vec![GaugeTransform::new(s.clone())?];
    let mut i = 0;
    while i + 2 < alpha.len() {
        let (next, drift) = gauge_fix_step(
            &s,
            [&alpha[i], &alpha[i + 1], &alpha[i + 2]],
            [lambda[i], lambda[i + 1], lambda[i + 2]],
            2.0 * dt,
        );
        if drift > 1e-6 {
            eprintln!("warning: gauge-fixing unitarity drift {drift:.3e} before projection");
        }
        s = next;
        out.push(GaugeTransform::new(s.clone())?);
        i += 2;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareConfig {
    pub t_end: f64,
    pub dt: f64,
    /// Number of comparison times, evenly spaced in (0, t_end].
    pub samples: usize,
    /// Generator of u(t) = exp(t ξ) for the square-root-choice check (skew-Hermitian, row-major).
    pub uniqueness_xi: Option<Vec<C>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceSample {
    pub t: f64,
    pub ymh_direct: f64,
    pub ymh_composed: f64,
    pub ymh_rel: f64,
    pub eigen_rel: f64,
    pub trace_rel: f64,
    pub pair_diff: f64,
    pub uniqueness_diff: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub dt: f64,
    pub samples: Vec<EquivalenceSample>,
    /// max over samples of the three relative observable discrepancies
    pub discrepancy: f64,
    pub max_pair_diff: f64,
    pub uniqueness_diff: Option<f64>,
    pub max_unitarity_drift: f64,
    pub partial: bool,
}

fn eigen_fields(p: &HiggsPair) -> Vec<f64> {
    critical::eigenvalue_fields(p).into_iter().flatten().collect()
}

fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let n: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    d / n.max(1e-300)
}

fn trace_rel(a: &HiggsPair, b: &HiggsPair) -> f64 {
    let ta = trace_powers(a.phi());
    let tb = trace_powers(b.phi());
    let mut d: f64 = 0.0;
    let mut n: f64 = 0.0;
    for (x, y) in ta.iter().zip(&tb) {
        for (u, v) in x.iter().zip(y) {
            d = d.max((u - v).norm());
            n = n.max(u.norm());
        }
    }
    d / n.max(1e-300)
}

/// Run the direct flow and the metric flow + reconstruction + gauge fixing
/// side by side with the same fixed dt, comparing gauge-invariant observables.
pub fn compare_flows(p0: &HiggsPair, cfg: &CompareConfig) -> Result<EquivalenceReport> {
    let dt = cfg.dt;
    let steps = (cfg.t_end / dt).round() as usize;
    let samples = cfg.samples.max(1);
    if steps == 0 || steps % (2 * samples) != 0 {
        return Err(LabError::Invalid(format!(
            "t_end/dt = {steps} must be a multiple of 2 x samples = {}",
            2 * samples
        )));
    }
    let every = steps / samples;
    let grid = *p0.grid();
    let r = p0.r();
    let u_of = |t: f64| -> Option<MatrixField> {
        cfg.uniqueness_xi.as_ref().map(|xi| {
            let m: Vec<C> = xi.iter().map(|z| z * t).collect();
            MatrixField::constant(grid, r, FormDegree::Zero, &mat::expm(&m, r))
        })
    };
    let mut direct = p0.clone();
    let mut metric = HermitianMetric::new(p0.clone());
    // rolling windows of g (and g·u)
    let mut g_hist: Vec<MatrixField> = vec![inverse_sqrt(&metric.h)];
    let mut gu_hist: Vec<MatrixField> = vec![];
    if let Some(u) = u_of(0.0) {
        gu_hist.push(g_hist[0].mul(&u, FormDegree::Zero));
    }
    let mut lam_hist: Vec<C> = vec![];
    let mut alpha_hist: Vec<MatrixField> = vec![];
    let mut alpha_u_hist: Vec<MatrixField> = vec![];
    let mut s = MatrixField::identity(grid, r);
    let mut s_u = MatrixField::identity(grid, r);
    let mut report = EquivalenceReport {
        dt,
        samples: vec![],
        discrepancy: 0.0,
        max_pair_diff: 0.0,
        uniqueness_diff: None,
        max_unitarity_drift: 0.0,
        partial: false,
    };
    // Iteration n: metric step to g_{n+1}, α_n, S over [n−2, n] for even n,
    // comparison at sample n, then the direct flow to step n+1.
    for n in 0..=steps {
        let (next, lam) = match step_simpson_heat(&metric, dt, Integrator::Rk4) {
            Ok(x) => x,
            Err(e) => {
                report.partial = true;
                eprintln!("metric flow aborted at step {n}: {e}");
                break;
            }
        };
        lam_hist.push(lam);
        metric = next;
        let g = inverse_sqrt(&metric.h);
        if let Some(u) = u_of((n + 1) as f64 * dt) {
            gu_hist.push(g.mul(&u, FormDegree::Zero));
        }
        g_hist.push(g);
        push_alpha(n, dt, &g_hist, &mut alpha_hist)?;
        if !gu_hist.is_empty() {
            push_alpha(n, dt, &gu_hist, &mut alpha_u_hist)?;
        }
        if n >= 2 && n % 2 == 0 {
            let lams = [lam_hist[n - 2], lam_hist[n - 1], lam_hist[n]];
            let k = alpha_hist.len();
            let (ns, drift) = gauge_fix_step(&s, [&alpha_hist[k - 3], &alpha_hist[k - 2], &alpha_hist[k - 1]], lams, 2.0 * dt);
            s = ns;
            report.max_unitarity_drift = report.max_unitarity_drift.max(drift);
            if !alpha_u_hist.is_empty() {
                let k = alpha_u_hist.len();
                let (ns, _) =
                    gauge_fix_step(&s_u, [&alpha_u_hist[k - 3], &alpha_u_hist[k - 2], &alpha_u_hist[k - 1]], lams, 2.0 * dt);
                s_u = ns;
            }
        }
        if n > 0 && n % every == 0 {
            let t = n as f64 * dt;
            let composed = compose(&g_hist[g_hist.len() - 2], &s, &metric.base)?;
            let uniqueness = if gu_hist.is_empty() {
                None
            } else {
                let c2 = compose(&gu_hist[gu_hist.len() - 2], &s_u, &metric.base)?;
                Some(c2.max_diff(&composed))
            };
            let yd = fields::ymh(&direct);
            let yc = fields::ymh(&composed);
            let sample = EquivalenceSample {
                t,
                ymh_direct: yd,
                ymh_composed: yc,
                ymh_rel: (yd - yc).abs() / yd.abs().max(1e-300),
                eigen_rel: rel_l2(&eigen_fields(&direct), &eigen_fields(&composed)),
                trace_rel: trace_rel(&direct, &composed),
                pair_diff: direct.max_diff(&composed),
                uniqueness_diff: uniqueness,
            };
            report.discrepancy = report.discrepancy.max(sample.ymh_rel.max(sample.eigen_rel).max(sample.trace_rel));
            report.max_pair_diff = report.max_pair_diff.max(sample.pair_diff);
            if let Some(u) = uniqueness {
                report.uniqueness_diff = Some(report.uniqueness_diff.unwrap_or(0.0).max(u));
            }
            report.samples.push(sample);
        }
        if n < steps {
            direct = step_gradient_flow(&direct, dt, Integrator::Rk4);
        }
        for w in [&mut g_hist, &mut gu_hist] {
            if w.len() > 2 {
                w.remove(0);
            }
        }
        for w in [&mut alpha_hist, &mut alpha_u_hist] {
            if w.len() > 3 {
                w.remove(0);
            }
        }
    }
    Ok(report)
}

/// Appends α_n given the window (g_{n−1}, g_n, g_{n+1}); at n = 1 also α₀ from a
/// one-sided second-order difference.
fn push_alpha(n: usize, dt: f64, hist: &[MatrixField], out: &mut Vec<MatrixField>) -> Result<()> {
    let m = hist.len();
    if n == 1 {
        let gd = hist[m - 3]
            .scaled(C::new(-3.0, 0.0))
            .add(&hist[m - 2].scaled(C::new(4.0, 0.0)))
            .sub(&hist[m - 1])
            .scaled(C::new(0.5 / dt, 0.0));
        out.push(alpha_from(&hist[m - 3], &gd)?);
    }
    if n >= 1 {
        out.push(alpha_centered(&hist[m - 3], &hist[m - 2], &hist[m - 1], dt)?);
    }
    Ok(())
}

/// S⁻¹·(g·base), applied in that order.
fn compose(g: &MatrixField, s: &MatrixField, base: &HiggsPair) -> Result<HiggsPair> {
    let p = apply_gauge_field(g, base)?;
    let s_inv = s.adjoint();
    apply_gauge_field(&s_inv, &p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::low_pass;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn smooth_pair(g: TorusGrid, seed: u64, amp: f64) -> HiggsPair {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rf = |deg| {
            let data = (0..g.sites() * 4)
                .map(|_| C::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect();
            let f = low_pass(&MatrixField::from_data(g, 2, deg, data).unwrap(), 3);
            let n = f.sup_norm();
            f.scaled(C::new(amp / n, 0.0))
        };
        let a = rf(FormDegree::Dzbar);
        let f = rf(FormDegree::Dz);
        HiggsPair::new(a, f, false).unwrap()
    }

    #[test]
    fn zero_pair_is_a_fixed_point() {
        let g = TorusGrid::new(16, 1.0).unwrap();
        let p = HiggsPair::zero(g, 2, false);
        let q = step_gradient_flow(&p, 1e-3, Integrator::Rk4);
        assert!(q.max_diff(&p) < 1e-14);
        let traj = run_gradient_flow(&p, &FlowConfig::for_grid(&g)).unwrap();
        assert_eq!(traj.status, FlowStatus::Converged);
        assert_eq!(traj.final_time, 0.0);
    }

    #[test]
    fn euler_step_is_p_plus_dt_velocity() {
        let g = TorusGrid::new(16, 1.0).unwrap();
        let p = smooth_pair(g, 1, 0.5);
        let dt = 1e-4;
        let q = step_gradient_flow(&p, dt, Integrator::Euler);
        let v = fields::grad_ymh(&p);
        for s in 0..g.sites() {
            for k in 0..4 {
                let ea = p.a2().site(s)[k] + v.a.site(s)[k] * dt;
                let ef = p.phi().site(s)[k] + v.psi.site(s)[k] * dt;
                assert!((q.a2().site(s)[k] - ea).norm() < 1e-15);
                assert!((q.phi().site(s)[k] - ef).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn short_run_is_monotone_with_energy_identity() {
        let g = TorusGrid::new(16, 1.0).unwrap().with_stencil(Stencil::Spectral);
        let p = smooth_pair(g, 2, 0.5);
        let mut cfg = FlowConfig::for_grid(&g);
        cfg.t_max = 0.05;
        let tr = run_gradient_flow(&p, &cfg).unwrap();
        let d = &tr.diagnostics;
        assert!(d.max_ymh_rise <= 1e-12, "{}", d.max_ymh_rise);
        assert!(((d.ymh_drop - d.dissipation) / d.ymh_drop).abs() < 1e-4, "{} {}", d.ymh_drop, d.dissipation);
        assert!(d.max_trace_drift < 1e-10);
    }

    #[test]
    fn simpson_fixed_point_and_euler_formula() {
        let g = TorusGrid::new(16, 1.0).unwrap().with_stencil(Stencil::Spectral);
        let m = HermitianMetric::new(HiggsPair::zero(g, 2, false));
        let (m2, _) = step_simpson_heat(&m, 1e-4, Integrator::Rk4).unwrap();
        assert!(m2.h.max_diff(&MatrixField::identity(g, 2)) < 1e-15);
        // Euler formula h(Id − 2i dt (ΛF_H − λ))
        let base = smooth_pair(g, 3, 0.4);
        let h = MatrixField::from_fn(g, 2, FormDegree::Zero, |x, y, o| {
            let s = 0.2 * (2.0 * std::f64::consts::PI * x).sin();
            let b = C::new(0.1 * (2.0 * std::f64::consts::PI * y).cos(), 0.05);
            o.copy_from_slice(&[C::new(1.0 + s, 0.0), b, b.conj(), C::new(1.0 - 0.5 * s, 0.0)]);
        });
        let m = HermitianMetric::with_metric(base, h.clone());
        let dt = 1e-5;
        let lf = m.lambda_f(&h).unwrap();
        let lam = m.lambda(&lf);
        let (m2, _) = step_simpson_heat(&m, dt, Integrator::Euler).unwrap();
        let mut expect = h.clone();
        for s in 0..g.sites() {
            let mut x = mat::identity(2);
            for k in 0..4 {
                let mut l = lf.site(s)[k];
                if k == 0 || k == 3 {
                    l -= lam[s];
                }
                x[k] -= C::new(0.0, 2.0) * dt * l;
            }
            expect.site_mut(s).copy_from_slice(&mat::mul_new(h.site(s), &x, 2));
        }
        assert!(m2.h.max_diff(&expect.herm_part()) < 1e-14);
    }

    #[test]
    fn metric_curvature_matches_gauge_transformed_curvature() {
        // g F_{g·A₀} g⁻¹ = F_H with h = (g g†)⁻¹
        let g = TorusGrid::new(32, 1.0).unwrap().with_stencil(Stencil::Spectral);
        let base = smooth_pair(g, 4, 0.4);
        let gauge = MatrixField::from_fn(g, 2, FormDegree::Zero, |x, y, o| {
            let w = 2.0 * std::f64::consts::PI;
            o.copy_from_slice(&[
                C::new(1.0 + 0.2 * (w * x).sin(), 0.1),
                C::new(0.1 * (w * y).cos(), 0.0),
                C::new(0.0, 0.15 * (w * (x - y)).sin()),
                C::new(0.9, -0.1 * (w * y).sin()),
            ]);
        });
        let ggd = gauge.mul(&gauge.adjoint(), FormDegree::Zero);
        let h = fields::pointwise_inverse(&ggd).unwrap();
        let m = HermitianMetric::with_metric(base.clone(), h.clone());
        let lf = m.lambda_f(&h).unwrap();
        let p = apply_gauge_field(&gauge, &base).unwrap();
        let mu = fields::moment1(&p);
        let ginv = fields::pointwise_inverse(&gauge).unwrap();
        let transported = gauge.mul(&mu, FormDegree::Zero).mul(&ginv, FormDegree::Top);
        let rel = lf.sub(&transported).l2_norm() / lf.l2_norm();
        assert!(rel < 1e-9, "{rel}");
    }

    #[test]
    fn rank_one_metric_flow_keeps_mean_log_h() {
        let g = TorusGrid::new(16, 1.0).unwrap().with_stencil(Stencil::Spectral);
        let a = MatrixField::from_fn(g, 1, FormDegree::Dzbar, |x, y, o| {
            let w = 2.0 * std::f64::consts::PI;
            o[0] = C::new(0.3 * (w * x).sin(), 0.2 * (w * y).cos());
        });
        let base = HiggsPair::new(a, MatrixField::zeros(g, 1, FormDegree::Dz), false).unwrap();
        let mut m = HermitianMetric::new(base);
        let mean_log = |h: &MatrixField| h.data().iter().map(|z| z.re.ln()).sum::<f64>() / g.sites() as f64;
        let dt = 0.05 * g.h().powi(2);
        for _ in 0..200 {
            m = step_simpson_heat(&m, dt, Integrator::Rk4).unwrap().0;
        }
        // the metric moves, its log-mean does not; scalar oracle:
        // ∂_t log h = −2i ΛF_{A₀} + Δ log h − 2iλ̄ has zero spatial mean
        assert!(m.h.max_diff(&MatrixField::identity(g, 1)) > 1e-3);
        assert!(mean_log(&m.h).abs() < 1e-12, "{}", mean_log(&m.h));
    }

    #[test]
    fn reconstruction_square_root() {
        let g = TorusGrid::new(8, 1.0).unwrap();
        let s: f64 = 0.3;
        let h = MatrixField::constant(
            g,
            2,
            FormDegree::Zero,
            &[C::new((2.0 * s).exp(), 0.0), mat::ZERO, mat::ZERO, C::new((-2.0 * s).exp(), 0.0)],
        );
        let m = HermitianMetric::with_metric(HiggsPair::zero(g, 2, false), h);
        let (p, gg) = reconstruct_pair(&m).unwrap();
        assert!((gg.site(0)[0].re - (-s).exp()).abs() < 1e-14);
        assert!((gg.site(0)[3].re - s.exp()).abs() < 1e-14);
        assert!(p.max_diff(&HiggsPair::zero(g, 2, false)) < 1e-14);
        // g g† = h⁻¹ for a random positive h
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let h = MatrixField::from_fn(g, 2, FormDegree::Zero, |_, _, o| {
            let b = C::new(0.3, -0.2);
            o.copy_from_slice(&[C::new(1.5, 0.0), b, b.conj(), C::new(0.8, 0.0)]);
        });
        let _ = rng.gen::<f64>();
        let gs = inverse_sqrt(&h);
        let prod = gs.mul(&gs.adjoint(), FormDegree::Zero).mul(&h, FormDegree::Zero);
        assert!(prod.max_diff(&MatrixField::identity(g, 2)) < 1e-12);
    }

    #[test]
    fn gauge_fix_ode_constant_alpha_is_exponential() {
        let g = TorusGrid::new(8, 1.0).unwrap();
        let xi = [C::new(0.0, 0.7), C::new(0.4, 0.2), C::new(-0.4, 0.2), C::new(0.0, -0.3)];
        let alpha = MatrixField::constant(g, 2, FormDegree::Zero, &xi);
        let dt = 1e-3;
        let n = 1001;
        let series = vec![alpha.clone(); n];
        let lam = vec![mat::ZERO; n];
        let s = gauge_fix_ode(&series, &lam, dt).unwrap();
        let t = (s.len() - 1) as f64 * 2.0 * dt;
        let m: Vec<C> = xi.iter().map(|z| z * t).collect();
        let e = mat::expm(&m, 2);
        for k in 0..4 {
            assert!((s.last().unwrap().site(3)[k] - e[k]).norm() < 1e-12);
        }
        assert!(s.iter().all(|x| x.unitarity_defect() < 1e-10));
        let zero = vec![MatrixField::zeros(g, 2, FormDegree::Zero); 11];
        let s0 = gauge_fix_ode(&zero, &vec![mat::ZERO; 11], dt).unwrap();
        assert!(s0.last().unwrap().max_diff(&MatrixField::identity(g, 2)) == 0.0);
    }

    #[test]
    fn compare_flows_trivial_at_critical_pair() {
        let g = TorusGrid::new(8, 1.0).unwrap().with_stencil(Stencil::Spectral);
        let p = HiggsPair::zero(g, 2, false);
        let rep = compare_flows(&p, &CompareConfig { t_end: 0.01, dt: 0.001, samples: 5, uniqueness_xi: None }).unwrap();
        assert!(rep.max_pair_diff == 0.0);
    }
}
