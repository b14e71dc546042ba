//! Higgs pairs (A″, φ), their moment maps, the YMH and Q_H functionals, the
//! downward gradient, gauge actions and the infinitesimal action with its adjoint.
//!
//! A″ = a dz̄ and φ = f dz are stored through their coefficients a, f. The unitary
//! connection is A = a dz̄ − a† dz, so only a is state.

use std::ops::Deref;

use num_complex::Complex64 as C;

use crate::error::{LabError, Result};
use crate::geometry::{self, d_prime, dbar, dbar_adjoint, l2_inner, FormDegree, MatrixField, TorusGrid};
use crate::mat;
use crate::par;

const MINUS_2I: C = C::new(0.0, -2.0);
/// Ranks up to this use stack buffers in the fused per-site kernels.

#[derive(Clone, Debug, PartialEq)]
pub struct HiggsPair {
    a2: MatrixField,
    phi: MatrixField,
    fixed_det: bool,
}

/// A tangent vector (a″, ψ) at a pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Tangent {
    pub a: MatrixField,
    pub psi: MatrixField,
}

impl HiggsPair {
    pub fn new(a2: MatrixField, phi: MatrixField, fixed_det: bool) -> Result<Self> {
        a2.grid().check_same(phi.grid())?;
        if a2.r() != phi.r() {
            return Err(LabError::GridMismatch(format!("rank {} vs {}", a2.r(), phi.r())));
        }
        if a2.degree() != FormDegree::Dzbar {
            return Err(LabError::DegreeMismatch { expected: FormDegree::Dzbar, got: a2.degree() });
        }
        if phi.degree() != FormDegree::Dz {
            return Err(LabError::DegreeMismatch { expected: FormDegree::Dz, got: phi.degree() });
        }
        a2.ensure_finite("A''")?;
        phi.ensure_finite("phi")?;
        if fixed_det {
            let scale = 1.0 + a2.sup_norm() + phi.sup_norm();
            let ta = a2.trace_field().sup_norm();
            let tp = phi.trace_field().sup_norm();
            if ta > 1e-10 * scale || tp > 1e-10 * scale {
                return Err(LabError::Invalid(format!(
                    "fixed-determinant pair has traces {ta:.3e}, {tp:.3e}"
                )));
            }
        }
        Ok(HiggsPair { a2, phi, fixed_det })
    }

    pub fn zero(grid: TorusGrid, r: usize, fixed_det: bool) -> Self {
        HiggsPair {
            a2: MatrixField::zeros(grid, r, FormDegree::Dzbar),
            phi: MatrixField::zeros(grid, r, FormDegree::Dz),
            fixed_det,
        }
    }

    pub fn a2(&self) -> &MatrixField {
        &self.a2
    }
    pub fn phi(&self) -> &MatrixField {
        &self.phi
    }
    pub fn fixed_det(&self) -> bool {
        self.fixed_det
    }
    pub fn grid(&self) -> &TorusGrid {
        self.a2.grid()
    }
    pub fn r(&self) -> usize {
        self.a2.r()
    }

    /// p + s X, trace parts dropped when the determinant is fixed.
    pub fn displaced(&self, x: &Tangent, s: f64) -> HiggsPair {
        let mut a2 = self.a2.clone();
        let mut phi = self.phi.clone();
        a2.axpy(C::new(s, 0.0), &x.a);
        phi.axpy(C::new(s, 0.0), &x.psi);
        if self.fixed_det {
            a2 = a2.trace_free();
            phi = phi.trace_free();
        }
        HiggsPair { a2, phi, fixed_det: self.fixed_det }
    }

    pub fn sup_field_norm(&self) -> f64 {
        self.a2.sup_norm().max(self.phi.sup_norm())
    }

    pub fn is_finite(&self) -> bool {
        self.a2.is_finite() && self.phi.is_finite()
    }

    pub fn max_diff(&self, other: &HiggsPair) -> f64 {
        self.a2.max_diff(&other.a2).max(self.phi.max_diff(&other.phi))
    }
}

impl Tangent {
    pub fn zeros(grid: TorusGrid, r: usize) -> Self {
        Tangent {
            a: MatrixField::zeros(grid, r, FormDegree::Dzbar),
            psi: MatrixField::zeros(grid, r, FormDegree::Dz),
        }
    }

    pub fn add(&self, o: &Tangent) -> Tangent {
        Tangent { a: self.a.add(&o.a), psi: self.psi.add(&o.psi) }
    }

    pub fn sub(&self, o: &Tangent) -> Tangent {
        Tangent { a: self.a.sub(&o.a), psi: self.psi.sub(&o.psi) }
    }

    pub fn scaled(&self, s: C) -> Tangent {
        Tangent { a: self.a.scaled(s), psi: self.psi.scaled(s) }
    }

    pub fn axpy(&mut self, s: C, o: &Tangent) {
        self.a.axpy(s, &o.a);
        self.psi.axpy(s, &o.psi);
    }

    pub fn max_abs(&self) -> f64 {
        self.a.sup_norm().max(self.psi.sup_norm())
    }

    pub fn trace_free(&self) -> Tangent {
        Tangent { a: self.a.trace_free(), psi: self.psi.trace_free() }
    }
}

/// The Kähler metric on tangent vectors: 2 Re ∫ tr(a₁ ∗̄ a₂) + 2 Re ∫ tr(ψ₁ ∗̄ ψ₂).
/// With a dz̄ ∧ ∗(b† dz) = 2 a b† dx∧dy this is 4 Σ Re tr(a₁a₂† + ψ₁ψ₂†) h².
pub fn metric(x: &Tangent, y: &Tangent) -> f64 {
    4.0 * (l2_inner(&x.a, &y.a).expect("tangent a-components")
        + l2_inner(&x.psi, &y.psi).expect("tangent psi-components"))
}

pub fn metric_norm(x: &Tangent) -> f64 {
    metric(x, x).sqrt()
}

/// Complex structure I. In these coordinates the structure compatible with the
/// flow ∂x/∂t = −Iρ_x(∗μ₁) and with ρ*Iρ(u) = −[∗μ₁, u] is multiplication by −i.
pub fn complex_i(x: &Tangent) -> Tangent {
    x.scaled(C::new(0.0, -1.0))
}

/// J(a″, ψ) = (ψ†, −a″†).
pub fn complex_j(x: &Tangent) -> Tangent {
    Tangent { a: x.psi.adjoint(), psi: x.a.adjoint().scaled(-mat::ONE) }
}

/// Skew-Hermitian 0-form field.
#[derive(Clone, Debug, PartialEq)]
pub struct LieField(MatrixField);

impl LieField {
    pub fn new(u: MatrixField) -> Result<Self> {
        if u.degree() != FormDegree::Zero {
            return Err(LabError::DegreeMismatch { expected: FormDegree::Zero, got: u.degree() });
        }
        let defect = u.add(&u.adjoint()).sup_norm();
        if defect > 1e-12 * (1.0 + u.sup_norm()) {
            return Err(LabError::Invalid(format!("field is not skew-Hermitian (defect {defect:.3e})")));
        }
        Ok(LieField(u))
    }

    /// Skew-Hermitian part of an arbitrary 0-form field.
    pub fn project(u: &MatrixField) -> Self {
        LieField(u.skew_part().with_degree(FormDegree::Zero))
    }

    pub fn into_field(self) -> MatrixField {
        self.0
    }
}

impl Deref for LieField {
    type Target = MatrixField;
    fn deref(&self) -> &MatrixField {
        &self.0
    }
}

/// Pointwise unitary gauge transformation.
#[derive(Clone, Debug, PartialEq)]
pub struct GaugeTransform(MatrixField);

pub const UNITARITY_TOL: f64 = 1e-10;

impl GaugeTransform {
    /// Accepts g if it is unitary to 1e-10; mild drift is repaired by polar projection.
    pub fn new(g: MatrixField) -> Result<Self> {
        let d = unitarity_defect(&g);
        if d <= UNITARITY_TOL {
            return Ok(GaugeTransform(g));
        }
        if d > 1e-6 {
            return Err(LabError::Invalid(format!("gauge not unitary (defect {d:.3e})")));
        }
        Ok(GaugeTransform(polar_project(&g)))
    }

    /// Polar re-projection of an arbitrary invertible field.
    pub fn from_polar(g: &MatrixField) -> Self {
        GaugeTransform(polar_project(g))
    }

    pub fn identity(grid: TorusGrid, r: usize) -> Self {
        GaugeTransform(MatrixField::identity(grid, r))
    }

    pub fn unitarity_defect(&self) -> f64 {
        unitarity_defect(&self.0)
    }

    pub fn into_field(self) -> MatrixField {
        self.0
    }
}

impl Deref for GaugeTransform {
    type Target = MatrixField;
    fn deref(&self) -> &MatrixField {
        &self.0
    }
}

/// Pointwise invertible complex gauge transformation.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexGauge {
    g: MatrixField,
    cond_max: f64,
}

pub const DEFAULT_COND_MAX: f64 = 1e8;

impl ComplexGauge {
    pub fn new(g: MatrixField) -> Result<Self> {
        Self::with_cond_max(g, DEFAULT_COND_MAX)
    }

    pub fn with_cond_max(g: MatrixField, cond_max: f64) -> Result<Self> {
        if g.degree() != FormDegree::Zero {
            return Err(LabError::DegreeMismatch { expected: FormDegree::Zero, got: g.degree() });
        }
        let (cond, site) = worst_condition(&g);
        if !(cond <= cond_max) {
            return Err(LabError::IllConditioned { cond, site });
        }
        Ok(ComplexGauge { g, cond_max })
    }

    pub fn cond_max(&self) -> f64 {
        self.cond_max
    }
}

impl Deref for ComplexGauge {
    type Target = MatrixField;
    fn deref(&self) -> &MatrixField {
        &self.g
    }
}

/// Anything that can act on pairs.
pub trait Gauge {
    fn field(&self) -> &MatrixField;
}

impl Gauge for GaugeTransform {
    fn field(&self) -> &MatrixField {
        &self.0
    }
}

impl Gauge for ComplexGauge {
    fn field(&self) -> &MatrixField {
        &self.g
    }
}

fn unitarity_defect(g: &MatrixField) -> f64 {
    let r = g.r();
    par::max_range(g.grid().sites(), |s| mat::unitarity_defect(g.site(s), r))
}

fn polar_project(g: &MatrixField) -> MatrixField {
    let r = g.r();
    g.map_sites(FormDegree::Zero, |_, a, o| o.copy_from_slice(&mat::polar_unitary(a, r)))
}

fn worst_condition(g: &MatrixField) -> (f64, usize) {
    let r = g.r();
    let conds = par::map_range(g.grid().sites(), |s| mat::condition_number(g.site(s), r));
    conds
        .iter()
        .enumerate()
        .fold((0.0, 0), |(c, i), (j, &x)| if !(x <= c) { (x, j) } else { (c, i) })
}

/// Pointwise inverse of a 0-form field; fails on singular sites.
pub fn pointwise_inverse(g: &MatrixField) -> Result<MatrixField> {
    let r = g.r();
    let inv: Vec<Option<Vec<C>>> = par::map_range(g.grid().sites(), |s| mat::inverse(g.site(s), r));
    let mut out = MatrixField::zeros(*g.grid(), r, g.degree());
    for (s, m) in inv.into_iter().enumerate() {
        match m {
            Some(m) => out.site_mut(s).copy_from_slice(&m),
            None => return Err(LabError::IllConditioned { cond: f64::INFINITY, site: s }),
        }
    }
    Ok(out)
}

/// (g⁻¹A″g + g⁻¹∂̄g, g⁻¹φg).
pub fn apply_gauge<G: Gauge>(g: &G, p: &HiggsPair) -> Result<HiggsPair> {
    apply_gauge_field(g.field(), p)
}

pub(crate) fn apply_gauge_field(g: &MatrixField, p: &HiggsPair) -> Result<HiggsPair> {
    g.grid().check_same(p.grid())?;
    let ginv = pointwise_inverse(g)?;
    let r = p.r();
    let dg = dbar(g);
    let a2 = conj_by(&ginv, &p.a2, g, FormDegree::Dzbar).add(&ginv.mul(&dg, FormDegree::Dzbar));
    let phi = conj_by(&ginv, &p.phi, g, FormDegree::Dz);
    let (a2, phi) = if p.fixed_det { (a2.trace_free(), phi.trace_free()) } else { (a2, phi) };
    let _ = r;
    a2.ensure_finite("gauge-transformed A''")?;
    Ok(HiggsPair { a2, phi, fixed_det: p.fixed_det })
}

/// ginv * x * g pointwise.
fn conj_by(ginv: &MatrixField, x: &MatrixField, g: &MatrixField, degree: FormDegree) -> MatrixField {
    let r = x.r();
    let q = r * r;
    let mut out = MatrixField::zeros(*x.grid(), r, degree);
    par::for_each_chunk(out.data_mut(), q, |s, o| {
        let mut t = vec![mat::ZERO; q];
        mat::mul(ginv.site(s), x.site(s), &mut t, r);
        mat::mul(&t, g.site(s), o, r);
    });
    out
}

/// F_A: the dx∧dy coefficient of dA + A∧A with A = a dz̄ − a† dz, that is
/// −2i(∂a + ∂̄a† + [a, a†]), returned skew-Hermitian.
pub fn curvature(p: &HiggsPair) -> MatrixField {
    let r = p.r();
    let da = d_prime(&p.a2); // −2i ∂a
    // dbar(−a†) = −(d_prime(a))†, so F = P − P† − 2i[a,a†] with P = d_prime(a)
    let f = da.zip_sites(&p.a2, FormDegree::Top, |_, pm, a, o| {
        let q = r * r;
        let mut ad = vec![mat::ZERO; q];
        mat::adjoint(a, &mut ad, r);
        let mut c = vec![mat::ZERO; q];
        mat::comm(a, &ad, &mut c, r);
        for i in 0..r {
            for j in 0..r {
                o[i * r + j] = pm[i * r + j] - pm[j * r + i].conj() + MINUS_2I * c[i * r + j];
            }
        }
    });
    f.skew_part()
}

/// The dx∧dy coefficient of [φ, φ*] = −2i[f, f†].
pub fn higgs_bracket(p: &HiggsPair) -> MatrixField {
    let r = p.r();
    p.phi.map_sites(FormDegree::Top, |_, f, o| {
        let mut fd = vec![mat::ZERO; r * r];
        mat::adjoint(f, &mut fd, r);
        mat::comm(f, &fd, o, r);
        for z in o.iter_mut() {
            *z *= MINUS_2I;
        }
    })
}

/// ∗μ₁ = ∗(F_A + [φ, φ*]) as a skew-Hermitian 0-form.
pub fn moment1(p: &HiggsPair) -> LieField {
    match p.r() {
        1 => moment1_fused::<1>(p),
        2 => moment1_fused::<4>(p),
        3 => moment1_fused::<9>(p),
        4 => moment1_fused::<16>(p),
        _ => {
            let m = curvature(p).add(&higgs_bracket(p)).with_degree(FormDegree::Zero);
            LieField::project(&m)
        }
    }
}

// one pass: skew(P − P† − 2i[a,a†] − 2i[f,f†]), Q = r²
fn moment1_fused<const Q: usize>(p: &HiggsPair) -> LieField {
    let r = p.r();
    let da = d_prime(&p.a2);
    let m = da.zip_sites(&p.a2, FormDegree::Zero, |s, pm, a, o| {
        let f = p.phi.site(s);
        let mut ad = [mat::ZERO; Q];
        let mut fd = [mat::ZERO; Q];
        let mut c1 = [mat::ZERO; Q];
        let mut c2 = [mat::ZERO; Q];
        mat::adjoint(a, &mut ad, r);
        mat::adjoint(f, &mut fd, r);
        mat::comm(a, &ad, &mut c1, r);
        mat::comm(f, &fd, &mut c2, r);
        for i in 0..r {
            for j in 0..r {
                let k = i * r + j;
                o[k] = pm[k] - pm[j * r + i].conj() + MINUS_2I * (c1[k] + c2[k]);
            }
        }
        mat::skew_part(o, r);
    });
    LieField(m)
}

/// d_A″φ coefficient: ∂̄f + [a, f] (the coefficient of dz̄∧dz).
pub fn holomorphicity(p: &HiggsPair) -> MatrixField {
    let r = p.r();
    let df = geometry::derivative(&p.phi, C::new(0.5, 0.0), C::new(0.0, 0.5), FormDegree::Top);
    df.zip_sites(&p.a2, FormDegree::Top, |s, d, a, o| {
        mat::comm(a, p.phi.site(s), o, r);
        for (x, y) in o.iter_mut().zip(d) {
            *x += y;
        }
    })
}

/// μ_C = 2i(∂̄φ + [A″, φ]).
pub fn moment_c(p: &HiggsPair) -> MatrixField {
    holomorphicity(p).scaled(C::new(0.0, 2.0))
}

/// ‖d_A″φ‖ in L².
pub fn higgs_residual(p: &HiggsPair) -> f64 {
    holomorphicity(p).l2_norm()
}

pub fn ymh(p: &HiggsPair) -> f64 {
    moment1(p).l2_norm().powi(2)
}

pub fn qh(p: &HiggsPair) -> f64 {
    ymh(p) + moment_c(p).l2_norm().powi(2)
}

/// d_A″u = ∂̄u + [a, u] for a 0-form u (complex entries allowed).
pub fn d_a2(p: &HiggsPair, u: &MatrixField) -> MatrixField {
    let r = p.r();
    dbar(u).zip_sites(&p.a2, FormDegree::Dzbar, |s, du, a, o| {
        mat::comm(a, u.site(s), o, r);
        for (x, y) in o.iter_mut().zip(du) {
            *x += y;
        }
    })
}

/// ρ(u) = (d_A″u, [φ, u]).
pub fn inf_action(p: &HiggsPair, u: &MatrixField) -> Tangent {
    Tangent { a: d_a2(p, u), psi: p.phi.comm(u, FormDegree::Dz) }
}

/// Adjoint of `inf_action` from the metric to `l2_inner`, landing in the
/// skew-Hermitian fields: ρ*(b, ψ) = skew(4(−∂b + [a†, b] + [f†, ψ])).
pub fn rho_star(p: &HiggsPair, x: &Tangent) -> LieField {
    let w = rho_star_full(p, x);
    LieField::project(&w)
}

/// Same adjoint but onto all complex 0-forms (no skew projection).
pub fn rho_star_full(p: &HiggsPair, x: &Tangent) -> MatrixField {
    let r = p.r();
    let ad = p.a2.adjoint();
    let fd = p.phi.adjoint();
    let db = dbar_adjoint(&x.a);
    let mut w = db.zip_sites(&ad, FormDegree::Zero, |s, d, a, o| {
        let q = r * r;
        let mut c1 = vec![mat::ZERO; q];
        let mut c2 = vec![mat::ZERO; q];
        mat::comm(a, x.a.site(s), &mut c1, r);
        mat::comm(fd.site(s), x.psi.site(s), &mut c2, r);
        for k in 0..q {
            o[k] = d[k] + c1[k] + c2[k];
        }
    });
    w.scale(C::new(4.0, 0.0));
    w
}

/// Everything one flow step needs from a single curvature evaluation.
pub struct FlowEval {
    /// −grad: (i d_A″(∗μ₁), i[φ, ∗μ₁])
    pub velocity: Tangent,
    pub mu: MatrixField,
    pub ymh: f64,
    pub sup_mu: f64,
}

pub fn flow_eval(p: &HiggsPair) -> FlowEval {
    let mu = moment1(p).into_field();
    let ymh = mu.l2_norm().powi(2);
    let sup_mu = mu.sup_norm();
    let r = p.r();
    let q = r * r;
    let i = C::new(0.0, 1.0);
    // i(∂̄m + [a, m]) and i[f, m] in one pass
    let dm = dbar(&mu);
    let mut a = MatrixField::zeros(*p.grid(), r, FormDegree::Dzbar);
    let mut psi = MatrixField::zeros(*p.grid(), r, FormDegree::Dz);
    par::for_each_chunk2(a.data_mut(), psi.data_mut(), q, |s, oa, op| {
        let m = mu.site(s);
        let d = dm.site(s);
        mat::comm(p.a2.site(s), m, oa, r);
        mat::comm(p.phi.site(s), m, op, r);
        for k in 0..q {
            oa[k] = i * (oa[k] + d[k]);
            op[k] *= i;
        }
    });
    let mut velocity = Tangent { a, psi };
    if p.fixed_det {
        velocity = velocity.trace_free();
    }
    FlowEval { velocity, mu, ymh, sup_mu }
}

/// The downward flow velocity (i d_A″(∗μ₁), i[φ, ∗μ₁]), i.e. minus the gradient.
pub fn grad_ymh(p: &HiggsPair) -> Tangent {
    flow_eval(p).velocity
}

/// Residuals of the two critical-point equations: ‖d_A″∗μ₁‖, ‖[φ, ∗μ₁]‖.
pub fn critical_residuals(p: &HiggsPair) -> (f64, f64) {
    let mu = moment1(p).into_field();
    let r1 = d_a2(p, &mu);
    let r2 = p.phi.comm(&mu, FormDegree::Dz);
    let (r1, r2) = if p.fixed_det { (r1.trace_free(), r2.trace_free()) } else { (r1, r2) };
    (r1.l2_norm(), r2.l2_norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{low_pass, Stencil};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_field(g: TorusGrid, r: usize, deg: FormDegree, seed: u64, kmax: usize) -> MatrixField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..g.sites() * r * r)
            .map(|_| C::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let f = MatrixField::from_data(g, r, deg, data).unwrap();
        if kmax > 0 {
            let s = low_pass(&f, kmax);
            let n = s.sup_norm();
            s.scaled(C::new(1.0 / n, 0.0))
        } else {
            f
        }
    }

    fn rand_pair(g: TorusGrid, seed: u64, kmax: usize) -> HiggsPair {
        let a = rand_field(g, 2, FormDegree::Dzbar, seed, kmax).scaled(C::new(0.4, 0.0));
        let f = rand_field(g, 2, FormDegree::Dz, seed + 100, kmax).scaled(C::new(0.4, 0.0));
        HiggsPair::new(a, f, false).unwrap()
    }

    fn spectral(n: usize) -> TorusGrid {
        TorusGrid::new(n, 1.0).unwrap().with_stencil(Stencil::Spectral)
    }

    fn central(n: usize) -> TorusGrid {
        TorusGrid::new(n, 1.0).unwrap()
    }

    #[test]
    fn zero_and_constant_pairs_are_flat() {
        let g = central(16);
        let p = HiggsPair::zero(g, 2, false);
        assert_eq!(curvature(&p).sup_norm(), 0.0);
        assert_eq!(moment1(&p).sup_norm(), 0.0);
        assert_eq!(ymh(&p), 0.0);
        assert_eq!(qh(&p), 0.0);
        assert!(grad_ymh(&p).max_abs() == 0.0);
        let d = [C::new(0.3, 0.1), mat::ZERO, mat::ZERO, C::new(-0.2, 0.5)];
        let a = MatrixField::constant(g, 2, FormDegree::Dzbar, &d);
        let f = MatrixField::constant(g, 2, FormDegree::Dz, &d);
        let p = HiggsPair::new(a, f, false).unwrap();
        assert!(curvature(&p).sup_norm() < 1e-15);
        assert!(moment1(&p).sup_norm() < 1e-15);
        assert!(moment_c(&p).sup_norm() < 1e-15);
    }

    #[test]
    fn nilpotent_higgs_field_moment() {
        // φ = c E12: φφ† − φ†φ = diag(|c|², −|c|²), so ∗μ₁ = −2i diag(|c|², −|c|²)
        let g = central(16);
        let c = C::new(0.7, -0.2);
        let f = MatrixField::constant(g, 2, FormDegree::Dz, &[mat::ZERO, c, mat::ZERO, mat::ZERO]);
        let p = HiggsPair::new(MatrixField::zeros(g, 2, FormDegree::Dzbar), f, true).unwrap();
        let m = moment1(&p);
        let n2 = c.norm_sqr();
        let expect = [C::new(0.0, -2.0 * n2), mat::ZERO, mat::ZERO, C::new(0.0, 2.0 * n2)];
        for s in 0..g.sites() {
            for k in 0..4 {
                assert!((m.site(s)[k] - expect[k]).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn quartic_homogeneity_in_phi() {
        let g = central(16);
        let p = rand_pair(g, 1, 0);
        let p = HiggsPair::new(MatrixField::zeros(g, 2, FormDegree::Dzbar), p.phi.clone(), false).unwrap();
        let t = 1.7;
        let q = HiggsPair::new(p.a2.clone(), p.phi.scaled(C::new(t, 0.0)), false).unwrap();
        assert!((ymh(&q) - t.powi(4) * ymh(&p)).abs() < 1e-12 * ymh(&q));
    }

    #[test]
    fn moment_map_is_skew_with_vanishing_trace_integral() {
        for g in [central(16), spectral(16)] {
            let p = rand_pair(g, 2, 0);
            let m = moment1(&p);
            assert!(m.add(&m.adjoint()).sup_norm() <= 1e-10);
            let f = curvature(&p);
            assert!(geometry::integrate_trace(&f).norm() < 1e-10);
        }
    }

    #[test]
    fn curvature_matches_unreduced_formula() {
        // independent assembly: dA + A∧A from both derivative terms separately
        let g = central(16);
        let p = rand_pair(g, 3, 0);
        let ad = p.a2.adjoint();
        let t1 = d_prime(&p.a2);
        let t2 = dbar(&ad.scaled(-mat::ONE));
        let t3 = p.a2.comm(&ad, FormDegree::Top).scaled(MINUS_2I);
        let reference = t1.add(&t2).add(&t3);
        assert!(reference.max_diff(&curvature(&p)) < 1e-12);
    }

    #[test]
    fn curvature_of_nilpotent_plane_wave_converges() {
        // A'' = ε e^{2πix} E12: compare the lattice curvature with the exact one
        let exact = |x: f64, o: &mut [C]| {
            let e = 0.3;
            let w = 2.0 * std::f64::consts::PI;
            let ph = C::new(0.0, w * x).exp();
            // ∂a = ½ ∂x a = (iπ) a ; ∂̄a† = conj(∂a)ᵀ ; [a,a†] = e² diag(1,−1)
            let da = ph * C::new(0.0, w / 2.0) * e;
            let m = [C::new(e * e, 0.0), da, da.conj(), C::new(-e * e, 0.0)];
            for k in 0..4 {
                o[k] = MINUS_2I * m[k];
            }
        };
        let mut errs = vec![];
        for n in [16usize, 32, 64] {
            let g = central(n);
            let a = MatrixField::from_fn(g, 2, FormDegree::Dzbar, |x, _, o| {
                let ph = C::new(0.0, 2.0 * std::f64::consts::PI * x).exp();
                o.copy_from_slice(&[mat::ZERO, ph * 0.3, mat::ZERO, mat::ZERO]);
            });
            let p = HiggsPair::new(a, MatrixField::zeros(g, 2, FormDegree::Dz), false).unwrap();
            let reference = MatrixField::from_fn(g, 2, FormDegree::Top, |x, _, o| exact(x, o));
            errs.push(curvature(&p).sub(&reference).l2_norm());
        }
        assert!(errs[0] / errs[1] > 3.5 && errs[1] / errs[2] > 3.5, "{errs:?}");
    }

    #[test]
    fn momentc_entrywise() {
        let g = central(16);
        let p = rand_pair(g, 4, 0);
        let mc = moment_c(&p);
        let db = geometry::derivative(&p.phi, C::new(0.5, 0.0), C::new(0.0, 0.5), FormDegree::Top);
        for s in 0..g.sites() {
            let a = p.a2.site(s);
            let f = p.phi.site(s);
            let af = mat::mul_new(a, f, 2);
            let fa = mat::mul_new(f, a, 2);
            for k in 0..4 {
                let e = C::new(0.0, 2.0) * (db.site(s)[k] + af[k] - fa[k]);
                assert!((mc.site(s)[k] - e).norm() < 1e-12);
            }
        }
        // qh by re-summation
        let mu = moment1(&p);
        let h2 = g.h().powi(2);
        let mut s1 = 0.0;
        let mut s2 = 0.0;
        for s in 0..g.sites() {
            s1 += mat::frob2(mu.site(s)) * h2;
            s2 += mat::frob2(mc.site(s)) * h2;
        }
        assert!((ymh(&p) - s1).abs() < 1e-12 * s1);
        assert!((qh(&p) - s1 - s2).abs() < 1e-12 * (s1 + s2));
    }

    fn fd_check(p: &HiggsPair, seed: u64) -> f64 {
        let g = *p.grid();
        let v = Tangent {
            a: rand_field(g, 2, FormDegree::Dzbar, seed, 0),
            psi: rand_field(g, 2, FormDegree::Dz, seed + 7, 0),
        };
        let eps = 1e-5;
        let fd = (ymh(&p.displaced(&v, eps)) - ymh(&p.displaced(&v, -eps))) / (2.0 * eps);
        let an = -2.0 * metric(&grad_ymh(p), &v);
        (fd - an).abs() / an.abs().max(1e-300)
    }

    #[test]
    fn gradient_matches_central_differences() {
        for g in [central(16), spectral(16)] {
            for seed in 0..5 {
                let p = rand_pair(g, 10 + seed, 0);
                let e = fd_check(&p, 50 + seed);
                assert!(e < 1e-5, "{:?} seed {seed}: {e}", g.stencil());
            }
        }
    }

    #[test]
    fn rho_star_is_adjoint() {
        for g in [central(16), spectral(16)] {
            let p = rand_pair(g, 5, 0);
            let u = LieField::project(&rand_field(g, 2, FormDegree::Zero, 6, 0));
            let x = Tangent {
                a: rand_field(g, 2, FormDegree::Dzbar, 7, 0),
                psi: rand_field(g, 2, FormDegree::Dz, 8, 0),
            };
            let lhs = metric(&inf_action(&p, &u), &x);
            let rhs = l2_inner(&u, &rho_star(&p, &x)).unwrap();
            assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
        }
    }

    #[test]
    fn adjoint_identity_with_constant_fields() {
        // constant fields: no Leibniz defect on any stencil
        let g = central(8);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut rm = || -> Vec<C> {
            (0..4).map(|_| C::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect()
        };
        let a = MatrixField::constant(g, 2, FormDegree::Dzbar, &rm());
        let f = MatrixField::constant(g, 2, FormDegree::Dz, &rm());
        let p = HiggsPair::new(a, f, false).unwrap();
        let u = LieField::project(&MatrixField::constant(g, 2, FormDegree::Zero, &rm()));
        let lhs = rho_star(&p, &complex_i(&inf_action(&p, &u)));
        let m = moment1(&p);
        let rhs = m.comm(&u, FormDegree::Zero).scaled(-mat::ONE);
        assert!(lhs.max_diff(&rhs) < 1e-12 * rhs.sup_norm());
    }

    #[test]
    fn adjoint_identity_spectral_band_limited() {
        let g = spectral(32);
        let p = rand_pair(g, 9, 3);
        let u = LieField::project(&rand_field(g, 2, FormDegree::Zero, 19, 3));
        let lhs = rho_star(&p, &complex_i(&inf_action(&p, &u)));
        let rhs = moment1(&p).comm(&u, FormDegree::Zero).scaled(-mat::ONE);
        let rel = lhs.sub(&rhs).l2_norm() / rhs.l2_norm();
        assert!(rel < 1e-8, "{rel}");
    }

    #[test]
    fn constant_unitary_gauge_invariance_and_equivariance() {
        for g in [central(16), spectral(16)] {
            let p = rand_pair(g, 21, 0);
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            let m: Vec<C> =
                (0..4).map(|_| C::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
            let u = mat::polar_unitary(&m, 2);
            let gt = GaugeTransform::new(MatrixField::constant(g, 2, FormDegree::Zero, &u)).unwrap();
            let q = apply_gauge(&gt, &p).unwrap();
            assert!((ymh(&q) - ymh(&p)).abs() < 1e-12 * ymh(&p));
            assert!((qh(&q) - qh(&p)).abs() < 1e-12 * qh(&p));
            // grad(g·p) = g⁻¹ grad(p) g
            let gp = grad_ymh(&p);
            let gq = grad_ymh(&q);
            let ud = mat::adjoint_new(&u, 2);
            let tr = |x: &MatrixField| {
                x.map_sites(x.degree(), |_, a, o| {
                    let t = mat::mul_new(&ud, a, 2);
                    mat::mul(&t, &u, o, 2)
                })
            };
            assert!(gq.a.max_diff(&tr(&gp.a)) < 1e-10);
            assert!(gq.psi.max_diff(&tr(&gp.psi)) < 1e-10);
        }
    }

    #[test]
    fn smooth_gauge_invariance_converges_at_second_order() {
        let mut diffs = vec![];
        for n in [32usize, 64, 128] {
            let g = central(n);
            let p = {
                let a = MatrixField::from_fn(g, 2, FormDegree::Dzbar, |x, y, o| {
                    let w = 2.0 * std::f64::consts::PI;
                    o[0] = C::new(0.2 * (w * y).sin(), 0.1);
                    o[1] = C::new(0.3 * (w * x).cos(), 0.0);
                    o[2] = C::new(0.0, 0.2 * (w * (x + y)).sin());
                    o[3] = C::new(-0.1, 0.05 * (w * x).cos());
                });
                HiggsPair::new(a, MatrixField::zeros(g, 2, FormDegree::Dz), false).unwrap()
            };
            let gauge = MatrixField::from_fn(g, 2, FormDegree::Zero, |x, y, o| {
                let th = 0.3 * (2.0 * std::f64::consts::PI * x).sin() + 0.2 * (2.0 * std::f64::consts::PI * y).cos();
                let (c, s) = (th.cos(), th.sin());
                o.copy_from_slice(&[C::new(c, 0.0), C::new(-s, 0.0), C::new(s, 0.0), C::new(c, 0.0)]);
            });
            let q = apply_gauge(&GaugeTransform::new(gauge).unwrap(), &p).unwrap();
            diffs.push((ymh(&q) - ymh(&p)).abs());
        }
        // pre-asymptotic on the coarsest pair, second order on the finest
        assert!(diffs[0] / diffs[1] > 3.0 && diffs[1] / diffs[2] > 3.5, "{diffs:?}");
    }

    #[test]
    fn orbit_derivative_matches_inf_action() {
        let g = spectral(16);
        let p = rand_pair(g, 31, 3);
        let u = LieField::project(&rand_field(g, 2, FormDegree::Zero, 32, 3));
        let t = 1e-6;
        let gt = u.map_sites(FormDegree::Zero, |_, a, o| {
            let m: Vec<C> = a.iter().map(|z| z * t).collect();
            o.copy_from_slice(&mat::expm(&m, 2))
        });
        let q = apply_gauge_field(&gt, &p).unwrap();
        let fd_a = q.a2.sub(&p.a2).scaled(C::new(1.0 / t, 0.0));
        let fd_f = q.phi.sub(&p.phi).scaled(C::new(1.0 / t, 0.0));
        let rho = inf_action(&p, &u);
        assert!(fd_a.max_diff(&rho.a) < 1e-5);
        // g⁻¹φg derivative is [φ,u]
        assert!(fd_f.max_diff(&rho.psi) < 1e-5);
    }

    #[test]
    fn group_law_holds_for_constant_gauges() {
        let g = central(8);
        let p = rand_pair(g, 41, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut rm = || -> Vec<C> {
            (0..4).map(|_| C::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect()
        };
        let g1 = rm();
        let g2 = rm();
        let f1 = ComplexGauge::new(MatrixField::constant(g, 2, FormDegree::Zero, &g1)).unwrap();
        let f2 = ComplexGauge::new(MatrixField::constant(g, 2, FormDegree::Zero, &g2)).unwrap();
        let f12 = ComplexGauge::new(MatrixField::constant(g, 2, FormDegree::Zero, &mat::mul_new(&g1, &g2, 2))).unwrap();
        let lhs = apply_gauge(&f2, &apply_gauge(&f1, &p).unwrap()).unwrap();
        let rhs = apply_gauge(&f12, &p).unwrap();
        assert!(lhs.max_diff(&rhs) < 1e-10);
    }

    #[test]
    fn ill_conditioned_gauge_is_rejected() {
        let g = central(8);
        let m = [mat::ONE, mat::ZERO, mat::ZERO, C::new(1e-12, 0.0)];
        let e = ComplexGauge::new(MatrixField::constant(g, 2, FormDegree::Zero, &m));
        assert!(matches!(e, Err(LabError::IllConditioned { .. })));
    }
}
