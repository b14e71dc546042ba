//! Critical points, Harder–Narasimhan types read off from i∗μ₁, Chern–Weil
//! degrees of eigenprojections, convex invariants and Łojasiewicz fits.

use std::cmp::Ordering;
use std::f64::consts::PI;

use num_complex::Complex64 as C;
use num_rational::Rational64;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::fields::{self, critical_residuals, metric_norm, HiggsPair};
use crate::flow::{trace_powers, Trajectory};
use crate::geometry::{dbar, integrate_trace, FormDegree, MatrixField, TorusGrid};
use crate::mat;
use crate::par;

pub const VAR_TOL: f64 = 1e-3;
pub const SNAP_AMBIGUITY: f64 = 0.05;
/// ‖·‖² weight of D″π in the degree formula for coefficient L² norms.
pub const KAPPA_DEFAULT: f64 = 1.0 / PI;

/// Slopes with multiplicity, non-increasing, summing to zero.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HnType {
    pub mu: Vec<Rational64>,
}

impl HnType {
    pub fn new(mut mu: Vec<Rational64>) -> Result<Self> {
        mu.sort_by(|a, b| b.cmp(a));
        if mu.iter().sum::<Rational64>() != Rational64::from_integer(0) {
            return Err(LabError::Invalid(format!("HN type {mu:?} does not sum to zero")));
        }
        Ok(HnType { mu })
    }

    pub fn semistable(r: usize) -> Self {
        HnType { mu: vec![Rational64::from_integer(0); r] }
    }

    pub fn from_integers(v: &[i64]) -> Result<Self> {
        Self::new(v.iter().map(|&x| Rational64::from_integer(x)).collect())
    }

    pub fn is_semistable(&self) -> bool {
        self.mu.iter().all(|x| *x == Rational64::from_integer(0))
    }

    /// Sizes of the clusters of equal slopes, top first.
    pub fn blocks(&self) -> Vec<usize> {
        let mut out: Vec<usize> = vec![];
        for (i, m) in self.mu.iter().enumerate() {
            if i > 0 && *m == self.mu[i - 1] {
                *out.last_mut().unwrap() += 1;
            } else {
                out.push(1);
            }
        }
        out
    }

    pub fn label(&self) -> String {
        let parts: Vec<String> = self.mu.iter().map(|x| x.to_string()).collect();
        format!("({})", parts.join(" "))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TypeOrder {
    Less,
    Equal,
    Greater,
    Incomparable,
}

/// Dominance order of partial sums.
pub fn hn_partial_order(a: &HnType, b: &HnType) -> TypeOrder {
    if a.mu.len() != b.mu.len() || a.mu.iter().sum::<Rational64>() != b.mu.iter().sum::<Rational64>() {
        return TypeOrder::Incomparable;
    }
    let (mut sa, mut sb) = (Rational64::from_integer(0), Rational64::from_integer(0));
    let (mut ge, mut le) = (true, true);
    for (x, y) in a.mu.iter().zip(&b.mu) {
        sa += x;
        sb += y;
        match sa.cmp(&sb) {
            Ordering::Less => ge = false,
            Ordering::Greater => le = false,
            Ordering::Equal => {}
        }
    }
    match (ge, le) {
        (true, true) => TypeOrder::Equal,
        (true, false) => TypeOrder::Greater,
        (false, true) => TypeOrder::Less,
        (false, false) => TypeOrder::Incomparable,
    }
}

/// Sorted (non-increasing) eigenvalues of i∗μ₁ as `[k][site]`.
pub fn eigenvalue_fields(p: &HiggsPair) -> Vec<Vec<f64>> {
    let mu = fields::moment1(p).into_field();
    eigenvalues_of_moment(&mu)
}

fn i_times(m: &[C]) -> Vec<C> {
    m.iter().map(|z| C::new(-z.im, z.re)).collect()
}

fn eigenvalues_of_moment(mu: &MatrixField) -> Vec<Vec<f64>> {
    let r = mu.r();
    let per_site = par::map_range(mu.grid().sites(), |s| {
        let mut v = mat::herm_eig(&i_times(mu.site(s)), r).0;
        v.reverse();
        v
    });
    (0..r).map(|k| per_site.iter().map(|v| v[k]).collect()).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenStats {
    pub mean: Vec<f64>,
    /// Var(λ_k) / max(|mean_k|, 2π/Vol)²
    pub spatial_variance: Vec<f64>,
}

pub fn eigen_stats(grid: &TorusGrid, ev: &[Vec<f64>]) -> EigenStats {
    let unit = 2.0 * PI / grid.vol();
    let mut mean = vec![];
    let mut var = vec![];
    for v in ev {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let s2 = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64;
        mean.push(m);
        var.push(s2 / m.abs().max(unit).powi(2));
    }
    EigenStats { mean, spatial_variance: var }
}

/// Nearest p/q with q ≤ r; `None` when two distinct candidates lie within the ambiguity radius.
pub fn snap_rational(x: f64, r: usize) -> Option<Rational64> {
    let mut cands: Vec<(f64, Rational64)> = (1..=r as i64)
        .map(|q| {
            let p = (x * q as f64).round() as i64;
            let c = Rational64::new(p, q);
            ((x - p as f64 / q as f64).abs(), c)
        })
        .collect();
    cands.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    cands.dedup_by(|a, b| a.1 == b.1);
    if cands.len() > 1 && cands[1].0 <= SNAP_AMBIGUITY {
        return None;
    }
    Some(cands[0].1)
}

/// HN type from the spatial means of the sorted eigenvalues of i∗μ₁.
pub fn hn_type(p: &HiggsPair) -> Result<HnType> {
    let ev = eigenvalue_fields(p);
    hn_type_from_eigen(p.grid(), &ev, VAR_TOL)
}

pub fn hn_type_from_eigen(grid: &TorusGrid, ev: &[Vec<f64>], var_tol: f64) -> Result<HnType> {
    let st = eigen_stats(grid, ev);
    let worst = st.spatial_variance.iter().cloned().fold(0.0, f64::max);
    if worst > var_tol {
        return Err(LabError::NotSettled(format!("eigenvalue spatial variance {worst:.3e} > {var_tol:.1e}")));
    }
    let r = ev.len();
    let scale = grid.vol() / (2.0 * PI);
    let mut mu = vec![];
    for m in &st.mean {
        match snap_rational(scale * m, r) {
            Some(q) => mu.push(q),
            None => return Err(LabError::NotSettled(format!("slope {:.4} is ambiguous", scale * m))),
        }
    }
    HnType::new(mu).map_err(|e| LabError::NotSettled(e.to_string()))
}

/// Projection onto the span of the top-k eigenvectors of i∗μ₁ at each site.
pub fn eigenprojector(p: &HiggsPair, k: usize, gap_tol: f64) -> Result<MatrixField> {
    let mu = fields::moment1(p).into_field();
    projector_of(&mu, k, gap_tol)
}

fn projector_of(mu: &MatrixField, k: usize, gap_tol: f64) -> Result<MatrixField> {
    let r = mu.r();
    if k == 0 || k > r {
        return Err(LabError::Invalid(format!("eigenprojector rank {k} outside 1..={r}")));
    }
    let grid = *mu.grid();
    let per_site = par::map_range(grid.sites(), |s| {
        let (vals, v) = mat::herm_eig(&i_times(mu.site(s)), r);
        // ascending: top k are the last k columns
        let gap = if k < r { vals[r - k] - vals[r - k - 1] } else { f64::INFINITY };
        let mut pm = vec![mat::ZERO; r * r];
        for c in r - k..r {
            for i in 0..r {
                for j in 0..r {
                    pm[i * r + j] += v[i * r + c] * v[j * r + c].conj();
                }
            }
        }
        (gap, pm)
    });
    let (mut gap, mut site) = (f64::INFINITY, 0);
    for (s, (g, _)) in per_site.iter().enumerate() {
        if *g < gap {
            gap = *g;
            site = s;
        }
    }
    if gap < gap_tol {
        return Err(LabError::GapCollapse { gap, site });
    }
    let data = per_site.into_iter().flat_map(|(_, m)| m).collect();
    MatrixField::from_data(grid, r, FormDegree::Zero, data)
}

/// max over sites of ‖π² − π‖ and ‖π† − π‖ (entrywise).
pub fn projection_defect(pi: &MatrixField) -> f64 {
    let sq = pi.mul(pi, FormDegree::Zero);
    sq.max_diff(pi).max(pi.adjoint().max_diff(pi))
}

/// D″π = (∂̄π + [a, π], [f, π]).
pub fn d2_of_projection(pi: &MatrixField, p: &HiggsPair) -> (MatrixField, MatrixField) {
    let mut da = dbar(pi);
    da.axpy(mat::ONE, &p.a2().comm(pi, FormDegree::Dzbar));
    let dphi = p.phi().comm(pi, FormDegree::Dz);
    (da, dphi)
}

/// (i/2π) ∫ tr(π ∗μ₁) − κ ‖D″π‖², with coefficient L² norms.
pub fn chern_weil_degree(pi: &MatrixField, p: &HiggsPair, kappa: f64) -> Result<f64> {
    let d = projection_defect(pi);
    if d > 1e-8 {
        return Err(LabError::Invalid(format!("not a projection field (defect {d:.3e})")));
    }
    let mu = fields::moment1(p).into_field();
    let curv = integrate_trace(&pi.mul(&mu, FormDegree::Top)) * C::new(0.0, 1.0 / (2.0 * PI));
    let (da, dphi) = d2_of_projection(pi, p);
    Ok(curv.re - kappa * (da.l2_norm().powi(2) + dphi.l2_norm().powi(2)))
}

/// Jacobi θ₁ for τ = i.
fn theta1(z: C) -> C {
    let q = (-PI).exp();
    let mut s = mat::ZERO;
    for n in 0..12 {
        let e = (n as f64 + 0.5).powi(2);
        let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
        s += sign * q.powf(e) * ((2 * n + 1) as f64 * PI * z).sin();
    }
    s * 2.0
}

/// The κ anchor: a degree −2 holomorphic line sub-bundle of the trivial rank-2 bundle
/// (A″ = 0, φ = 0), spanned by (θ₁(z−a₁)θ₁(z−a₂), θ₁(z−b₁)θ₁(z−b₂)) with a₁+a₂ = b₁+b₂.
/// Its projection has zero curvature term, so κ = 2 / ‖D″π‖².
pub fn anchor_projection(grid: TorusGrid) -> Result<MatrixField> {
    if (grid.l() - 1.0).abs() > 1e-14 {
        return Err(LabError::Invalid("κ anchor needs L = 1".into()));
    }
    let (a1, a2) = (C::new(0.13, 0.21), C::new(0.55, 0.67));
    let (b1, b2) = (C::new(0.41, 0.08), a1 + a2 - C::new(0.41, 0.08));
    Ok(MatrixField::from_fn(grid, 2, FormDegree::Zero, |x, y, o| {
        let z = C::new(x, y);
        let v = [theta1(z - a1) * theta1(z - a2), theta1(z - b1) * theta1(z - b2)];
        let n = v[0].norm_sqr() + v[1].norm_sqr();
        for i in 0..2 {
            for j in 0..2 {
                o[i * 2 + j] = v[i] * v[j].conj() / n;
            }
        }
    }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KappaCalibration {
    pub kappa: f64,
    /// κ measured on the degree −2 anchor
    pub anchor_kappa: f64,
    /// |deg| of a constant projection at the flat pair
    pub constant_anchor: f64,
    /// max distance of degrees to integers over the supplied settled limits
    pub suite_gap: f64,
    pub suite_size: usize,
}

/// Fixes κ from the anchor bundle and checks it on constant projections and on
/// top eigenprojections of settled nonminimal limits.
pub fn calibrate_kappa(grid: TorusGrid, suite: &[HiggsPair]) -> Result<KappaCalibration> {
    let pi = anchor_projection(grid)?;
    let flat = HiggsPair::zero(grid, 2, false);
    let d = chern_weil_degree(&pi, &flat, 1.0)?;
    let kappa = -2.0 / d;
    let c = MatrixField::constant(grid, 2, FormDegree::Zero, &[C::new(0.5, 0.0), C::new(0.5, 0.0), C::new(0.5, 0.0), C::new(0.5, 0.0)]);
    let constant_anchor = chern_weil_degree(&c, &flat, kappa)?.abs();
    let mut suite_gap: f64 = 0.0;
    for p in suite {
        let pi = eigenprojector(p, 1, 1e-6)?;
        let deg = chern_weil_degree(&pi, p, kappa)?;
        suite_gap = suite_gap.max((deg - deg.round()).abs());
    }
    Ok(KappaCalibration { kappa, anchor_kappa: kappa, constant_anchor, suite_gap, suite_size: suite.len() })
}

/// H_k = ∫ (sum of the top-k eigenvalues of i∗μ₁) for k = 1..r.
pub fn convex_invariants(p: &HiggsPair) -> Vec<f64> {
    let ev = eigenvalue_fields(p);
    let h2 = p.grid().h().powi(2);
    let mut acc = 0.0;
    ev.iter()
        .map(|v| {
            acc += v.iter().sum::<f64>() * h2;
            acc
        })
        .collect()
}

pub fn convex_invariant(p: &HiggsPair, k: usize) -> f64 {
    convex_invariants(p)[k - 1]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalReport {
    pub critical: bool,
    pub tol: f64,
    pub grad_norm: f64,
    /// ‖d_A″∗μ₁‖, ‖[φ, ∗μ₁]‖
    pub residuals: [f64; 2],
    /// max residual / grad_norm
    pub residual_constant: f64,
    pub eigen: EigenStats,
    pub hn_type: Option<HnType>,
    pub unsettled_reason: Option<String>,
    /// Chern–Weil degrees of the HN blocks, top first
    pub degrees: Vec<f64>,
    pub integrality_gap: f64,
    pub kappa: f64,
}

pub fn is_critical(p: &HiggsPair, tol: f64, kappa: f64) -> CriticalReport {
    let grad_norm = metric_norm(&fields::grad_ymh(p));
    let (r1, r2) = critical_residuals(p);
    let ev = eigenvalue_fields(p);
    let eigen = eigen_stats(p.grid(), &ev);
    let (hn, reason) = match hn_type_from_eigen(p.grid(), &ev, VAR_TOL) {
        Ok(t) => (Some(t), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let mut degrees = vec![];
    let mut reason = reason;
    if let Some(t) = &hn {
        match block_degrees(p, t, kappa) {
            Ok(d) => degrees = d,
            Err(e) => reason = Some(e.to_string()),
        }
    }
    let integrality_gap = degrees.iter().map(|d| (d - d.round()).abs()).fold(0.0, f64::max);
    CriticalReport {
        critical: grad_norm <= tol,
        tol,
        grad_norm,
        residuals: [r1, r2],
        residual_constant: if grad_norm > 0.0 { r1.max(r2) / grad_norm } else { 0.0 },
        eigen,
        hn_type: hn,
        unsettled_reason: reason,
        degrees,
        integrality_gap,
        kappa,
    }
}

/// Degrees of the blocks: differences of the degrees of nested top-k eigenprojections.
pub fn block_degrees(p: &HiggsPair, t: &HnType, kappa: f64) -> Result<Vec<f64>> {
    let r = p.r();
    if t.is_semistable() {
        return Ok(vec![0.0]);
    }
    let mut out = vec![];
    let mut k = 0;
    let mut prev = 0.0;
    for b in t.blocks() {
        k += b;
        let d = if k == r {
            0.0
        } else {
            chern_weil_degree(&eigenprojector(p, k, 1e-6)?, p, kappa)?
        };
        out.push(d - prev);
        prev = d;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LojaFit {
    pub theta: f64,
    pub fit_r2: f64,
    /// (t_start, t_end) of the tail window
    pub window: (f64, f64),
    pub decades: f64,
    pub points: usize,
    /// |θ(E∞ ± shift) − θ|, max of the two
    pub sensitivity: f64,
}

fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    (slope, r2)
}

/// Slope of log‖grad‖ against log(E − E∞) on a tail window; θ = 1 − slope.
///
/// The window keeps points with E − E∞ between `floor` and 1% of the total drop;
/// `floor` = max(100 shift, 1e-13 E₀). `shift` also drives the sensitivity refits.
pub fn loja_fit_series(t: &[f64], e: &[f64], grad: &[f64], shift: f64) -> Result<LojaFit> {
    let n = e.len();
    if n < 4 {
        return Err(LabError::Invalid("inconclusive: too few samples".into()));
    }
    let e_inf = e[n - 1];
    let fit_with = |e_inf: f64| -> Option<(f64, f64, usize, f64, (f64, f64))> {
        let hi = 1e-2 * (e[0] - e_inf);
        let lo = (100.0 * shift).max(1e-13 * e[0].abs());
        let idx: Vec<usize> = (0..n).filter(|&i| {
            let d = e[i] - e_inf;
            d > lo && d <= hi && grad[i] > 0.0
        })
        .collect();
        if idx.len() < 4 {
            return None;
        }
        let xs: Vec<f64> = idx.iter().map(|&i| (e[i] - e_inf).ln()).collect();
        let ys: Vec<f64> = idx.iter().map(|&i| grad[i].ln()).collect();
        let (s, r2) = linear_fit(&xs, &ys);
        let dmax = xs.iter().cloned().fold(f64::MIN, f64::max);
        let dmin = xs.iter().cloned().fold(f64::MAX, f64::min);
        Some((1.0 - s, r2, idx.len(), (dmax - dmin) / std::f64::consts::LN_10, (t[idx[0]], t[*idx.last().unwrap()])))
    };
    let (theta, r2, points, decades, window) =
        fit_with(e_inf).ok_or_else(|| LabError::Invalid("inconclusive: tail window too short".into()))?;
    if decades < 2.0 {
        return Err(LabError::Invalid(format!("inconclusive: tail spans {decades:.2} decades")));
    }
    let mut sens: f64 = 0.0;
    for s in [shift, -shift] {
        if let Some((th, ..)) = fit_with(e_inf + s) {
            sens = sens.max((th - theta).abs());
        } else {
            sens = f64::INFINITY;
        }
    }
    Ok(LojaFit { theta, fit_r2: r2, window, decades, points, sensitivity: sens })
}

pub fn loja_fit(traj: &Trajectory, tol_grad: f64) -> Result<LojaFit> {
    let t: Vec<f64> = traj.observables.iter().map(|o| o.t).collect();
    let e: Vec<f64> = traj.observables.iter().map(|o| o.ymh).collect();
    let g: Vec<f64> = traj.observables.iter().map(|o| o.grad_norm).collect();
    loja_fit_series(&t, &e, &g, tol_grad * tol_grad)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradedReport {
    pub settled: bool,
    pub hn_type: Option<HnType>,
    /// max over k and sites of |tr φ^k(limit) − tr φ^k(p0)|
    pub trace_drift: f64,
    /// per block projector: ‖∂̄π + [a, π]‖ and ‖[f, π]‖ (off-block parts in a frame adapted to π)
    pub off_block_a: Vec<f64>,
    pub off_block_phi: Vec<f64>,
    pub block_degrees: Vec<f64>,
    pub expected_degrees: Vec<f64>,
    pub degree_mismatch: f64,
}

pub fn graded_object_check(p0: &HiggsPair, limit: &HiggsPair, kappa: f64) -> GradedReport {
    let t0 = trace_powers(p0.phi());
    let t1 = trace_powers(limit.phi());
    let mut drift: f64 = 0.0;
    for (a, b) in t0.iter().zip(&t1) {
        for (x, y) in a.iter().zip(b) {
            drift = drift.max((x - y).norm());
        }
    }
    let mut rep = GradedReport {
        settled: false,
        hn_type: None,
        trace_drift: drift,
        off_block_a: vec![],
        off_block_phi: vec![],
        block_degrees: vec![],
        expected_degrees: vec![],
        degree_mismatch: f64::NAN,
    };
    let Ok(t) = hn_type(limit) else { return rep };
    let r = limit.r();
    let mut k = 0;
    for b in t.blocks() {
        k += b;
        if k == r {
            break;
        }
        match eigenprojector(limit, k, 1e-6) {
            Ok(pi) => {
                let (da, dphi) = d2_of_projection(&pi, limit);
                rep.off_block_a.push(da.l2_norm());
                rep.off_block_phi.push(dphi.l2_norm());
            }
            Err(_) => return rep,
        }
    }
    let Ok(deg) = block_degrees(limit, &t, kappa) else { return rep };
    let mut expected = vec![];
    let mut i = 0;
    for b in t.blocks() {
        let m = t.mu[i] * Rational64::from_integer(b as i64);
        expected.push(*m.numer() as f64 / *m.denom() as f64);
        i += b;
    }
    if t.is_semistable() {
        expected = vec![0.0];
    }
    rep.degree_mismatch = deg.iter().zip(&expected).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    rep.block_degrees = deg;
    rep.expected_degrees = expected;
    rep.hn_type = Some(t);
    rep.settled = true;
    rep
}

/// One row of a sweep summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub seed: u64,
    pub hn_type: String,
    pub degrees: Vec<f64>,
    pub theta: Option<f64>,
    pub runtime: f64,
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("seed,type,degrees,theta,runtime\n");
    for r in rows {
        let deg: Vec<String> = r.degrees.iter().map(|d| format!("{d:.6}")).collect();
        let theta = r.theta.map(|x| format!("{x:.6}")).unwrap_or_default();
        s += &format!("{},{},{},{},{:.3}\n", r.seed, r.hn_type, deg.join(" "), theta, r.runtime);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Stencil;

    fn rat(p: i64, q: i64) -> Rational64 {
        Rational64::new(p, q)
    }

    #[test]
    fn partial_order_examples() {
        let a = HnType::from_integers(&[1, -1]).unwrap();
        let z = HnType::semistable(2);
        assert_eq!(hn_partial_order(&a, &z), TypeOrder::Greater);
        assert_eq!(hn_partial_order(&z, &a), TypeOrder::Less);
        assert_eq!(hn_partial_order(&a, &a), TypeOrder::Equal);
        let b = HnType::from_integers(&[2, -1, -1]).unwrap();
        let c = HnType::from_integers(&[1, 1, -2]).unwrap();
        assert_eq!(hn_partial_order(&b, &c), TypeOrder::Incomparable);
        let h = HnType::new(vec![rat(1, 2), rat(1, 2), rat(-1, 1)]).unwrap();
        assert_eq!(h.blocks(), vec![2, 1]);
        assert!(HnType::from_integers(&[1, 0]).is_err());
    }

    #[test]
    fn snapping() {
        assert_eq!(snap_rational(0.98, 2), Some(rat(1, 1)));
        assert_eq!(snap_rational(-0.51, 2), Some(rat(-1, 2)));
        assert_eq!(snap_rational(0.29, 4), None);
        assert_eq!(snap_rational(0.27, 2), Some(rat(1, 2)));
        assert_eq!(snap_rational(0.33, 3), Some(rat(1, 3)));
    }

    fn constant_moment_pair(g: TorusGrid, c: f64) -> HiggsPair {
        // nilpotent φ: ∗μ₁ = −2i diag(c², −c²)
        let f = MatrixField::constant(g, 2, FormDegree::Dz, &[mat::ZERO, C::new(c, 0.0), mat::ZERO, mat::ZERO]);
        HiggsPair::new(MatrixField::zeros(g, 2, FormDegree::Dzbar), f, false).unwrap()
    }

    #[test]
    fn trivial_critical_and_types() {
        let g = TorusGrid::new(16, 1.0).unwrap();
        let rep = is_critical(&HiggsPair::zero(g, 2, false), 1e-6, KAPPA_DEFAULT);
        assert!(rep.critical);
        assert_eq!(rep.residuals, [0.0, 0.0]);
        assert_eq!(rep.hn_type, Some(HnType::semistable(2)));
        // i∗μ₁ = 2 diag(c², −c²) = ±2π ⇒ type (1, −1)
        let p = constant_moment_pair(g, PI.sqrt());
        assert_eq!(hn_type(&p).unwrap(), HnType::from_integers(&[1, -1]).unwrap());
        let h = convex_invariants(&p);
        assert!((h[0] - 2.0 * PI).abs() < 1e-12 && h[1].abs() < 1e-12);
        // constant nilpotent pairs are not critical: [φ, ∗μ₁] ≠ 0
        assert!(!is_critical(&p, 1e-6, KAPPA_DEFAULT).critical);
    }

    #[test]
    fn eigenprojector_examples() {
        let g = TorusGrid::new(16, 1.0).unwrap();
        let p = constant_moment_pair(g, 0.7);
        let pi = eigenprojector(&p, 1, 1e-6).unwrap();
        // i∗μ₁ = 2c² diag(1, −1): top eigenvector e₁
        assert!(pi.max_diff(&MatrixField::constant(g, 2, FormDegree::Zero, &[mat::ONE, mat::ZERO, mat::ZERO, mat::ZERO])) < 1e-14);
        assert!(projection_defect(&pi) < 1e-14);
        assert!((integrate_trace(&pi).re - 1.0).abs() < 1e-12);
        let z = HiggsPair::zero(g, 2, false);
        assert!(matches!(eigenprojector(&z, 1, 1e-6), Err(LabError::GapCollapse { .. })));
    }

    #[test]
    fn degree_trivial_anchors() {
        let g = TorusGrid::new(16, 1.0).unwrap();
        let z = HiggsPair::zero(g, 2, false);
        let id = MatrixField::identity(g, 2);
        let pc = MatrixField::constant(g, 2, FormDegree::Zero, &[mat::ONE, mat::ZERO, mat::ZERO, mat::ZERO]);
        assert_eq!(chern_weil_degree(&pc, &z, KAPPA_DEFAULT).unwrap(), 0.0);
        let p = constant_moment_pair(g, 0.8);
        assert!(chern_weil_degree(&id, &p, KAPPA_DEFAULT).unwrap().abs() < 1e-14);
        let bad = MatrixField::identity(g, 2).scaled(C::new(0.5, 0.0));
        assert!(chern_weil_degree(&bad, &z, KAPPA_DEFAULT).is_err());
    }

    #[test]
    fn anchor_bundle_fixes_kappa_to_one_over_pi() {
        let theta_quasi = {
            // θ₁(z+1) = −θ₁(z), θ₁(z+i) = −e^{π}e^{−2πiz}θ₁(z)
            let z = C::new(0.3, 0.2);
            let a = theta1(z + 1.0) + theta1(z);
            let b = theta1(z + C::new(0.0, 1.0)) + PI.exp() * (C::new(0.0, -2.0 * PI) * z).exp() * theta1(z);
            a.norm().max(b.norm())
        };
        assert!(theta_quasi < 1e-12);
        let g = TorusGrid::new(64, 1.0).unwrap().with_stencil(Stencil::Spectral);
        let pi = anchor_projection(g).unwrap();
        assert!(projection_defect(&pi) < 1e-12);
        let cal = calibrate_kappa(g, &[]).unwrap();
        assert!((cal.kappa * PI - 1.0).abs() < 1e-3, "{}", cal.kappa * PI);
        assert!(cal.constant_anchor == 0.0);
    }

    #[test]
    fn loja_fit_on_model_series() {
        // E = e^{-2t}, grad = E^{1/2}: θ = 1/2
        let t: Vec<f64> = (0..400).map(|i| i as f64 * 0.05).collect();
        let e: Vec<f64> = t.iter().map(|t| (-2.0 * t).exp()).collect();
        let g: Vec<f64> = e.iter().map(|e| e.sqrt()).collect();
        let f = loja_fit_series(&t, &e, &g, 1e-24).unwrap();
        assert!((f.theta - 0.5).abs() < 1e-3, "{}", f.theta);
        assert!(f.fit_r2 > 0.999 && f.decades >= 2.0);
        // polynomial model grad = E^{0.7}: θ = 0.3
        let t: Vec<f64> = (0..400).map(|i| (i as f64 * 0.02).exp()).collect();
        let e: Vec<f64> = t.iter().map(|t| (1.0 + t).powf(-3.0)).collect();
        let g: Vec<f64> = e.iter().map(|e| e.powf(0.7)).collect();
        let mut e2 = e.clone();
        e2.push(0.0);
        let mut g2 = g.clone();
        g2.push(0.0);
        let mut t2 = t.clone();
        t2.push(1e9);
        let f = loja_fit_series(&t2, &e2, &g2, 1e-30).unwrap();
        assert!((f.theta - 0.3).abs() < 1e-6, "{}", f.theta);
        // too short a tail
        assert!(loja_fit_series(&t[..10], &e[..10], &g[..10], 1e-12).is_err());
    }

    #[test]
    fn sweep_csv_header() {
        let s = sweep_csv(&[SweepRow { seed: 3, hn_type: "(0 0)".into(), degrees: vec![0.0], theta: Some(0.5), runtime: 1.0 }]);
        assert!(s.starts_with("seed,type,degrees,theta,runtime\n3,(0 0),"));
    }
}
