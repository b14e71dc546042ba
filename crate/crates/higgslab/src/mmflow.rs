//! Finite-dimensional hyperkähler sandbox: M = T*Cⁿ with a unitary group G ⊆ U(n).
//!
//! Conventions. A point is x = (v, w). The real metric is g(X, Y) = Re(Y_v†X_v + Y_w†X_w),
//! with complex structures I(v, w) = (iv, iw), J(v, w) = (−w̄, v̄), K = IJ. The Lie algebra
//! carries ⟨u, u'⟩ = Re tr(u u'†) and the generators are orthonormalized for it.
//!
//! G acts on the right, g·x = (g⁻¹v, gᵀw), so ρ_x(u) = (−uv, uᵀw) and
//! μ(g·x) = g⁻¹μ(x)g. This is the orientation under which ρ*Iρ(u) = −[μ₁, u].
//!
//! Real coordinates of a tangent vector: (Re v₀, Im v₀, …, Re w₀, Im w₀, …).

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::critical::{loja_fit_series, LojaFit};
use crate::error::{LabError, Result};

const I_UNIT: C = C::new(0.0, 1.0);

pub type Lie = DMatrix<C>;

fn lie_inner(a: &Lie, b: &Lie) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x * y.conj()).re).sum()
}

fn lie_norm(a: &Lie) -> f64 {
    lie_inner(a, a).sqrt()
}

fn bracket(a: &Lie, b: &Lie) -> Lie {
    a * b - b * a
}

#[derive(Clone, Debug)]
pub struct UnitaryRep {
    n: usize,
    generators: Vec<Lie>,
}

impl UnitaryRep {
    /// Checks skew-Hermiticity and independence, then orthonormalizes.
    pub fn new(n: usize, generators: Vec<Lie>) -> Result<Self> {
        let mut basis: Vec<Lie> = vec![];
        for (k, t) in generators.iter().enumerate() {
            if t.nrows() != n || t.ncols() != n {
                return Err(LabError::Invalid(format!("generator {k} is not {n}x{n}")));
            }
            let skew = (t + t.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
            if skew > 1e-14 * t.norm().max(1.0) {
                return Err(LabError::Invalid(format!("generator {k} is not skew-Hermitian ({skew:.2e})")));
            }
            let mut u = t.clone();
            for b in &basis {
                u -= b * C::new(lie_inner(&u, b), 0.0);
            }
            let nu = lie_norm(&u);
            if nu < 1e-10 * lie_norm(t).max(1e-300) {
                return Err(LabError::Invalid(format!("generator {k} is linearly dependent on earlier ones")));
            }
            basis.push(u / C::new(nu, 0.0));
        }
        if basis.is_empty() {
            return Err(LabError::Invalid("no generators".into()));
        }
        Ok(UnitaryRep { n, generators: basis })
    }

    /// U(2) acting on C² ⊕ C² (two copies of the fundamental), n = 4.
    pub fn u2_two_copies() -> Self {
        let z = C::new(0.0, 0.0);
        let one = C::new(1.0, 0.0);
        let paulis = [
            [I_UNIT, z, z, I_UNIT],
            [z, I_UNIT, I_UNIT, z],
            [z, one, -one, z],
            [I_UNIT, z, z, -I_UNIT],
        ];
        let gens = paulis
            .iter()
            .map(|p| {
                let mut m = DMatrix::zeros(4, 4);
                for blk in 0..2 {
                    for i in 0..2 {
                        for j in 0..2 {
                            m[(2 * blk + i, 2 * blk + j)] = p[i * 2 + j];
                        }
                    }
                }
                m
            })
            .collect();
        UnitaryRep::new(4, gens).expect("u(2) generators are valid")
    }

    /// U(1) acting on Cⁿ by scalars.
    pub fn circle(n: usize) -> Self {
        UnitaryRep::new(n, vec![DMatrix::identity(n, n) * I_UNIT]).expect("valid")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.generators.len()
    }

    pub fn generators(&self) -> &[Lie] {
        &self.generators
    }

    pub fn coords(&self, u: &Lie) -> DVector<f64> {
        DVector::from_iterator(self.dim(), self.generators.iter().map(|t| lie_inner(u, t)))
    }

    pub fn from_coords(&self, c: &DVector<f64>) -> Lie {
        let mut u = DMatrix::zeros(self.n, self.n);
        for (t, &ci) in self.generators.iter().zip(c.iter()) {
            u += t * C::new(ci, 0.0);
        }
        u
    }

    /// Orthogonal projection of an n×n matrix onto Lie(G).
    pub fn project(&self, m: &Lie) -> Lie {
        self.from_coords(&self.coords(m))
    }

    pub fn random_lie(&self, rng: &mut ChaCha8Rng) -> Lie {
        let c = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        self.from_coords(&c)
    }

    pub fn random_point(&self, rng: &mut ChaCha8Rng, scale: f64) -> HKPoint {
        let mut z = || C::new(rng.sample(StandardNormal), rng.sample(StandardNormal)) * scale;
        HKPoint {
            v: DVector::from_fn(self.n, |_, _| z()),
            w: DVector::from_fn(self.n, |_, _| z()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HKPoint {
    pub v: DVector<C>,
    pub w: DVector<C>,
}

impl HKPoint {
    pub fn zero(n: usize) -> Self {
        HKPoint { v: DVector::zeros(n), w: DVector::zeros(n) }
    }

    pub fn n(&self) -> usize {
        self.v.len()
    }

    pub fn add(&self, o: &HKPoint) -> HKPoint {
        HKPoint { v: &self.v + &o.v, w: &self.w + &o.w }
    }

    pub fn sub(&self, o: &HKPoint) -> HKPoint {
        HKPoint { v: &self.v - &o.v, w: &self.w - &o.w }
    }

    pub fn scale(&self, s: f64) -> HKPoint {
        HKPoint { v: &self.v * C::new(s, 0.0), w: &self.w * C::new(s, 0.0) }
    }

    pub fn axpy(&self, s: f64, o: &HKPoint) -> HKPoint {
        self.add(&o.scale(s))
    }

    pub fn norm(&self) -> f64 {
        metric(self, self).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.v.iter().chain(self.w.iter()).all(|z| z.is_finite())
    }

    pub fn to_real(&self) -> DVector<f64> {
        let n = self.n();
        DVector::from_fn(4 * n, |k, _| {
            let z = if k < 2 * n { self.v[k / 2] } else { self.w[(k - 2 * n) / 2] };
            if k % 2 == 0 {
                z.re
            } else {
                z.im
            }
        })
    }

    pub fn from_real(x: &DVector<f64>) -> HKPoint {
        let n = x.len() / 4;
        HKPoint {
            v: DVector::from_fn(n, |i, _| C::new(x[2 * i], x[2 * i + 1])),
            w: DVector::from_fn(n, |i, _| C::new(x[2 * n + 2 * i], x[2 * n + 2 * i + 1])),
        }
    }
}

pub fn metric(x: &HKPoint, y: &HKPoint) -> f64 {
    (y.v.dotc(&x.v) + y.w.dotc(&x.w)).re
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Structure {
    I,
    J,
    K,
}

pub const STRUCTURES: [Structure; 3] = [Structure::I, Structure::J, Structure::K];

pub fn apply_structure(s: Structure, x: &HKPoint) -> HKPoint {
    match s {
        Structure::I => HKPoint { v: &x.v * I_UNIT, w: &x.w * I_UNIT },
        Structure::J => HKPoint { v: -x.w.conjugate(), w: x.v.conjugate() },
        Structure::K => HKPoint { v: -x.w.conjugate() * I_UNIT, w: x.v.conjugate() * I_UNIT },
    }
}

/// Right action g·x = (g⁻¹v, gᵀw).
pub fn group_action(g: &DMatrix<C>, x: &HKPoint) -> Result<HKPoint> {
    let gi = g.clone().try_inverse().ok_or_else(|| LabError::Invalid("singular group element".into()))?;
    Ok(HKPoint { v: gi * &x.v, w: g.transpose() * &x.w })
}

/// Infinitesimal action ρ_x(u) = (−uv, uᵀw).
pub fn rho(x: &HKPoint, u: &Lie) -> HKPoint {
    HKPoint { v: -(u * &x.v), w: u.transpose() * &x.w }
}

/// ρ_x* : T_xM → Lie(G), adjoint of `rho` for g and ⟨·,·⟩.
pub fn rho_star(rep: &UnitaryRep, x: &HKPoint, y: &HKPoint) -> Lie {
    let c = DVector::from_iterator(rep.dim(), rep.generators.iter().map(|t| metric(&rho(x, t), y)));
    rep.from_coords(&c)
}

/// δρ_x(u)(X): derivative of ρ_x(u) in x along X. The action is linear, so this is ρ_X(u).
pub fn delta_rho(u: &Lie, xt: &HKPoint) -> HKPoint {
    rho(xt, u)
}

/// (δρ)_x*(X, Y), the adjoint of u ↦ δρ_x(u)(X) applied to Y.
pub fn delta_rho_star(rep: &UnitaryRep, xt: &HKPoint, y: &HKPoint) -> Lie {
    rho_star(rep, xt, y)
}

/// μ_s(x), defined by ⟨μ_s(x), u⟩ = ½ g(I_s ρ_x(u), x).
pub fn moment_map(rep: &UnitaryRep, s: Structure, x: &HKPoint) -> Lie {
    let c = DVector::from_iterator(
        rep.dim(),
        rep.generators.iter().map(|t| 0.5 * metric(&apply_structure(s, &rho(x, t)), x)),
    );
    rep.from_coords(&c)
}

pub fn moment_maps(rep: &UnitaryRep, x: &HKPoint) -> [Lie; 3] {
    STRUCTURES.map(|s| moment_map(rep, s, x))
}

/// Q_H = ‖μ₁‖² + ‖μ₂‖² + ‖μ₃‖².
pub fn qh(rep: &UnitaryRep, x: &HKPoint) -> f64 {
    moment_maps(rep, x).iter().map(|m| lie_inner(m, m)).sum()
}

pub fn energy(rep: &UnitaryRep, x: &HKPoint) -> f64 {
    let m = moment_map(rep, Structure::I, x);
    lie_inner(&m, &m)
}

/// Gradient of ‖μ₁‖²: 2Iρ_x(μ₁).
pub fn grad_energy(rep: &UnitaryRep, x: &HKPoint) -> HKPoint {
    apply_structure(Structure::I, &rho(x, &moment_map(rep, Structure::I, x))).scale(2.0)
}

/// Gradient of Q_H: 2 Σ I_s ρ_x(μ_s).
pub fn grad_qh(rep: &UnitaryRep, x: &HKPoint) -> HKPoint {
    let mut g = HKPoint::zero(x.n());
    for s in STRUCTURES {
        g = g.add(&apply_structure(s, &rho(x, &moment_map(rep, s, x))).scale(2.0));
    }
    g
}

/// |D⟨μ_s, u⟩(X) − g(I_s ρ_x(u), X)| per structure, the derivative taken by central
/// differences with step `eps`.
pub fn moment_defining_residual(rep: &UnitaryRep, x: &HKPoint, u: &Lie, xt: &HKPoint, eps: f64) -> [f64; 3] {
    STRUCTURES.map(|s| {
        let up = lie_inner(&moment_map(rep, s, &x.axpy(eps, xt)), u);
        let dn = lie_inner(&moment_map(rep, s, &x.axpy(-eps, xt)), u);
        let fd = (up - dn) / (2.0 * eps);
        (fd - metric(&apply_structure(s, &rho(x, u)), xt)).abs()
    })
}

/// max_s ‖μ_s(g·x) − g⁻¹μ_s(x)g‖.
pub fn equivariance_residual(rep: &UnitaryRep, x: &HKPoint, g: &DMatrix<C>) -> Result<f64> {
    let gx = group_action(g, x)?;
    let gi = g.clone().try_inverse().ok_or_else(|| LabError::Invalid("singular group element".into()))?;
    Ok(STRUCTURES
        .iter()
        .map(|&s| {
            let lhs = moment_map(rep, s, &gx);
            let rhs = &gi * moment_map(rep, s, x) * g;
            lie_norm(&(lhs - rhs))
        })
        .fold(0.0, f64::max))
}

/// ‖ρ*I_sρ(u) + [μ_s, u]‖ for s = I, J, K.
pub fn identity_adjoint(rep: &UnitaryRep, x: &HKPoint, u: &Lie) -> [f64; 3] {
    STRUCTURES.map(|s| {
        let lhs = rho_star(rep, x, &apply_structure(s, &rho(x, u)));
        lie_norm(&(lhs + bracket(&moment_map(rep, s, x), u)))
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProductResiduals {
    /// ρ*I_s δρ(u)(X) − [ρ*(I_sX), u] + (δρ)*(X, I_sρ(u)), per structure
    pub twisted: [f64; 3],
    /// I_s δρ(u)(X) − δρ(u)(I_sX), per structure
    pub commuting: [f64; 3],
    /// ρ*δρ(u)(X) − [ρ*X, u] − (δρ)*(X, ρ(u))
    pub plain: f64,
}

impl ProductResiduals {
    pub fn max(&self) -> f64 {
        self.twisted.iter().chain(&self.commuting).fold(self.plain, |a, &b| a.max(b))
    }
}

pub fn product_formulas(rep: &UnitaryRep, x: &HKPoint, u: &Lie, xt: &HKPoint) -> ProductResiduals {
    let dr = delta_rho(u, xt);
    let ru = rho(x, u);
    let twisted = STRUCTURES.map(|s| {
        let lhs = rho_star(rep, x, &apply_structure(s, &dr));
        let rhs = bracket(&rho_star(rep, x, &apply_structure(s, xt)), u) - delta_rho_star(rep, xt, &apply_structure(s, &ru));
        lie_norm(&(lhs - rhs))
    });
    let commuting = STRUCTURES.map(|s| {
        let a = apply_structure(s, &dr);
        let b = delta_rho(u, &apply_structure(s, xt));
        a.sub(&b).norm()
    });
    let lhs = rho_star(rep, x, &dr);
    let rhs = bracket(&rho_star(rep, x, xt), u) + delta_rho_star(rep, xt, &ru);
    ProductResiduals { twisted, commuting, plain: lie_norm(&(lhs - rhs)) }
}

/// Hessian of Q_H as a real 4n×4n matrix:
/// H X = 2 Σ_s (I_s δρ(μ_s)(X) − I_s ρ ρ*(I_s X)).
pub fn hessian_qh(rep: &UnitaryRep, x: &HKPoint) -> DMatrix<f64> {
    let d = 4 * x.n();
    let mus = moment_maps(rep, x);
    let mut h = DMatrix::zeros(d, d);
    for j in 0..d {
        let mut e = DVector::zeros(d);
        e[j] = 1.0;
        let xt = HKPoint::from_real(&e);
        let mut col = HKPoint::zero(x.n());
        for (k, s) in STRUCTURES.iter().enumerate() {
            let a = apply_structure(*s, &delta_rho(&mus[k], &xt));
            let b = apply_structure(*s, &rho(x, &rho_star(rep, x, &apply_structure(*s, &xt))));
            col = col.add(&a.sub(&b).scale(2.0));
        }
        h.set_column(j, &col.to_real());
    }
    h
}

/// Hessian of a scalar function by Richardson-extrapolated central second differences
/// (exact up to rounding for polynomials of degree ≤ 5).
pub fn fd_hessian(f: impl Fn(&DVector<f64>) -> f64, x: &DVector<f64>, h: f64) -> DMatrix<f64> {
    let d = x.len();
    let second = |i: usize, j: usize, h: f64| {
        let mut p = x.clone();
        let mut at = |si: f64, sj: f64| {
            p.copy_from(x);
            p[i] += si * h;
            p[j] += sj * h;
            f(&p)
        };
        (at(1.0, 1.0) - at(1.0, -1.0) - at(-1.0, 1.0) + at(-1.0, -1.0)) / (4.0 * h * h)
    };
    DMatrix::from_fn(d, d, |i, j| (4.0 * second(i, j, h / 2.0) - second(i, j, h)) / 3.0)
}

/// Matrix of ρ_x in real coordinates (columns ρ_x(T_a)); with orthonormal generators
/// ρ_x* is its transpose.
pub fn rho_matrix(rep: &UnitaryRep, x: &HKPoint) -> DMatrix<f64> {
    let cols: Vec<DVector<f64>> = rep.generators.iter().map(|t| rho(x, t).to_real()).collect();
    DMatrix::from_columns(&cols)
}

// ---- subspaces -------------------------------------------------------------

/// Orthonormal basis (columns) of the column space, rank cut at `tol` × max(1, σ_max).
pub fn image(m: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let d = m.nrows();
    if m.ncols() == 0 {
        return DMatrix::zeros(d, 0);
    }
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("u requested");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let cut = tol * smax.max(1.0);
    let keep: Vec<usize> = (0..svd.singular_values.len()).filter(|&k| svd.singular_values[k] > cut).collect();
    let cols: Vec<DVector<f64>> = keep.iter().map(|&k| u.column(k).into_owned()).collect();
    if cols.is_empty() {
        DMatrix::zeros(d, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

/// Orthonormal basis of the orthogonal complement of span(q) (q orthonormal) in R^d.
pub fn complement(q: &DMatrix<f64>, d: usize) -> DMatrix<f64> {
    let p = DMatrix::<f64>::identity(d, d) - q * q.transpose();
    let eig = p.symmetric_eigen();
    let cols: Vec<DVector<f64>> =
        (0..d).filter(|&k| eig.eigenvalues[k] > 0.5).map(|k| eig.eigenvectors.column(k).into_owned()).collect();
    if cols.is_empty() {
        DMatrix::zeros(d, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

/// Orthonormal basis of ker m.
pub fn kernel(m: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    complement(&image(&m.transpose(), tol), m.ncols())
}

fn hcat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.view_mut((0, 0), (a.nrows(), a.ncols())).copy_from(a);
    out.view_mut((0, a.ncols()), (b.nrows(), b.ncols())).copy_from(b);
    out
}

pub fn intersection(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let d = a.nrows();
    let ca = complement(a, d);
    let cb = complement(b, d);
    complement(&image(&hcat(&ca, &cb), tol), d)
}

/// Largest principal angle between two subspaces (orthonormal bases); π/2 if the
/// dimensions differ.
pub fn max_principal_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    if a.ncols() != b.ncols() {
        return std::f64::consts::FRAC_PI_2;
    }
    if a.ncols() == 0 {
        return 0.0;
    }
    let resid = b - a * (a.transpose() * b);
    let s = resid.singular_values().iter().cloned().fold(0.0, f64::max);
    s.min(1.0).asin()
}

/// Smallest principal angle's cosine: ‖aᵀb‖₂ (0 when orthogonal).
pub fn max_overlap(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    if a.ncols() == 0 || b.ncols() == 0 {
        return 0.0;
    }
    (a.transpose() * b).singular_values().iter().cloned().fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelReport {
    pub grad_norm: f64,
    pub dim_tangent: usize,
    pub dim_ker_rho_star: usize,
    pub dim_im_rho: usize,
    pub dim_ker_h: usize,
    pub dim_im_h: usize,
    pub dim_ker_l: usize,
    pub dim_im_l: usize,
    /// T = ker ρ* ⊕ im ρ: overlap cosine (0 for an orthogonal splitting)
    pub splitting_overlap: f64,
    pub splitting_spans: bool,
    /// ker L against ker H ∩ ker ρ*
    pub kernel_angle: f64,
    /// im L against im H + im ρ
    pub image_angle: f64,
    /// im H ∩ im ρ = 0
    pub image_direct: bool,
    pub max_angle: f64,
}

/// Subspace checks at a critical point of Q_H, with L = H + ρρ*.
pub fn kernel_decompositions(rep: &UnitaryRep, x: &HKPoint, tol: f64) -> Result<KernelReport> {
    let grad_norm = grad_qh(rep, x).norm();
    if grad_norm > 1e-10 {
        return Err(LabError::Invalid(format!("not a critical point: ‖grad Q_H‖ = {grad_norm:.3e}")));
    }
    let d = 4 * x.n();
    let r = rho_matrix(rep, x);
    let h = hessian_qh(rep, x);
    let l = &h + &r * r.transpose();
    let im_rho = image(&r, tol);
    let ker_rs = kernel(&r.transpose(), tol);
    let ker_h = kernel(&h, tol);
    let im_h = image(&h, tol);
    let ker_l = kernel(&l, tol);
    let im_l = image(&l, tol);
    let splitting_overlap = max_overlap(&ker_rs, &im_rho);
    let splitting_spans = ker_rs.ncols() + im_rho.ncols() == d;
    let kernel_angle = max_principal_angle(&ker_l, &intersection(&ker_h, &ker_rs, tol));
    let sum = image(&hcat(&im_h, &im_rho), tol);
    let image_angle = max_principal_angle(&im_l, &sum);
    let image_direct = sum.ncols() == im_h.ncols() + im_rho.ncols();
    let split_angle = if splitting_spans { splitting_overlap.min(1.0).asin() } else { std::f64::consts::FRAC_PI_2 };
    Ok(KernelReport {
        grad_norm,
        dim_tangent: d,
        dim_ker_rho_star: ker_rs.ncols(),
        dim_im_rho: im_rho.ncols(),
        dim_ker_h: ker_h.ncols(),
        dim_im_h: im_h.ncols(),
        dim_ker_l: ker_l.ncols(),
        dim_im_l: im_l.ncols(),
        splitting_overlap,
        splitting_spans,
        kernel_angle,
        image_angle,
        image_direct,
        max_angle: kernel_angle.max(image_angle).max(split_angle),
    })
}

/// A point of μ⁻¹(0) for [`UnitaryRep::u2_two_copies`]. Writing the two copies of v as
/// the columns of a 2×2 matrix V (same for w), μ = 0 means VV† = W̄Wᵀ and VWᵀ = 0; take
/// V = s·e a†, W̄ = s·e b† with e a unit vector and (a, b) orthonormal. The stabilizer
/// is the U(1) fixing e, so im ρ is 3-dimensional.
pub fn u2_zero_point(rng: &mut ChaCha8Rng, scale: f64) -> HKPoint {
    let mut gauss = || C::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
    let unit = |z: [C; 2]| {
        let n = (z[0].norm_sqr() + z[1].norm_sqr()).sqrt();
        [z[0] / n, z[1] / n]
    };
    let e = unit([gauss(), gauss()]);
    let a = unit([gauss(), gauss()]);
    // b ⊥ a
    let b = [-a[1].conj(), a[0].conj()];
    let mut v = DVector::zeros(4);
    let mut w = DVector::zeros(4);
    for col in 0..2 {
        for row in 0..2 {
            v[2 * col + row] = e[row] * a[col].conj() * scale;
            w[2 * col + row] = (e[row] * b[col].conj() * scale).conj();
        }
    }
    HKPoint { v, w }
}

/// A free point of μ⁻¹(0) for [`UnitaryRep::circle`] on C²: v = s e₁, w = s e₂.
pub fn circle_zero_point(scale: f64) -> HKPoint {
    let s = C::new(scale, 0.0);
    let z = C::new(0.0, 0.0);
    HKPoint { v: DVector::from_vec(vec![s, z]), w: DVector::from_vec(vec![z, s]) }
}

// ---- Coulomb slice ---------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoulombResult {
    /// coordinates of u in the generator basis
    pub u: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
    /// max r_{k+1} / r_k² over steps above the rounding floor
    pub max_ratio: f64,
}

fn expm_with_derivative(a: &DMatrix<C>, e: &DMatrix<C>) -> (DMatrix<C>, DMatrix<C>) {
    let n = a.nrows();
    let mut big = DMatrix::zeros(2 * n, 2 * n);
    big.view_mut((0, 0), (n, n)).copy_from(a);
    big.view_mut((n, n), (n, n)).copy_from(a);
    big.view_mut((0, n), (n, n)).copy_from(e);
    let x = big.exp();
    (x.view((0, 0), (n, n)).into_owned(), x.view((0, n), (n, n)).into_owned())
}

/// Orthogonal projection of u onto (ker ρ_x)^⊥.
pub fn slice_project(rep: &UnitaryRep, x: &HKPoint, u: &Lie) -> Lie {
    let basis = image(&rho_matrix(rep, x).transpose(), 1e-10);
    rep.from_coords(&(&basis * (basis.transpose() * rep.coords(u))))
}

/// Solve ρ_x*(e^{−u}·y − x) = 0 for u ∈ (ker ρ_x)^⊥ by Newton's method.
pub fn coulomb_newton(rep: &UnitaryRep, x: &HKPoint, y: &HKPoint, tol: f64) -> Result<CoulombResult> {
    let r = rho_matrix(rep, x);
    // (ker ρ_x)^⊥ in Lie coordinates is the row space of r
    let basis = image(&r.transpose(), 1e-10);
    let k = basis.ncols();
    if k == 0 {
        return Ok(CoulombResult { u: vec![0.0; rep.dim()], residual: 0.0, iterations: 0, residual_history: vec![], max_ratio: 0.0 });
    }
    let xr = x.to_real();
    let lie_of = |c: &DVector<f64>| rep.from_coords(&(&basis * c));
    // e^{−u}·y = (e^{u} y_v, e^{−uᵀ} y_w)
    let eval = |c: &DVector<f64>| -> (DVector<f64>, DMatrix<f64>) {
        let u = lie_of(c);
        let ut = -u.transpose();
        let mut jac = DMatrix::zeros(k, k);
        let mut point = None;
        for j in 0..k {
            let mut ej = DVector::zeros(k);
            ej[j] = 1.0;
            let du = lie_of(&ej);
            let (ev, dev) = expm_with_derivative(&u, &du);
            let (ew, dew) = expm_with_derivative(&ut, &(-du.transpose()));
            if point.is_none() {
                point = Some(HKPoint { v: &ev * &y.v, w: &ew * &y.w });
            }
            let dp = HKPoint { v: &dev * &y.v, w: &dew * &y.w };
            let col = basis.transpose() * (r.transpose() * dp.to_real());
            jac.set_column(j, &col);
        }
        let p = point.expect("k > 0");
        let g = basis.transpose() * (r.transpose() * (p.to_real() - &xr));
        (g, jac)
    };
    let mut c = DVector::zeros(k);
    let mut hist = vec![];
    for it in 0..50 {
        let (g, jac) = eval(&c);
        let res = g.norm();
        hist.push(res);
        if !res.is_finite() {
            break;
        }
        if res <= tol {
            let max_ratio = hist
                .windows(2)
                .filter(|w| w[1] > 1e3 * tol)
                .map(|w| w[1] / (w[0] * w[0]))
                .fold(0.0, f64::max);
            let u = (&basis * &c).iter().cloned().collect();
            return Ok(CoulombResult { u, residual: res, iterations: it, residual_history: hist, max_ratio });
        }
        let step = jac.lu().solve(&(-g)).ok_or_else(|| LabError::NoConvergence("singular slice Jacobian".into()))?;
        c += step;
    }
    Err(LabError::NoConvergence("outside slice neighborhood".into()))
}

// ---- flows -----------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SandboxFlowConfig {
    pub dt: f64,
    pub t_max: f64,
    pub record_every: usize,
}

impl Default for SandboxFlowConfig {
    fn default() -> Self {
        SandboxFlowConfig { dt: 1e-3, t_max: 10.0, record_every: 10 }
    }
}

#[derive(Clone, Debug)]
pub struct SandboxTrajectory {
    pub times: Vec<f64>,
    /// ‖μ₁‖² along the reduced flow
    pub energy: Vec<f64>,
    /// ‖grad ‖μ₁‖²‖ along the reduced flow
    pub grad_norm: Vec<f64>,
    /// ‖Ω − μ₁(x)‖ along the coupled flow
    pub omega_drift: Vec<f64>,
    /// max over recorded t > 0 of drift / t
    pub max_drift_rate: f64,
    /// max distance between the coupled and reduced x
    pub max_separation: f64,
    /// largest relative step-to-step rise of ‖μ₁‖²
    pub max_energy_rise: f64,
    pub final_x: HKPoint,
}

fn rk4<S: Clone>(s: &S, dt: f64, f: impl Fn(&S) -> S, axpy: impl Fn(&S, f64, &S) -> S) -> S {
    let k1 = f(s);
    let k2 = f(&axpy(s, 0.5 * dt, &k1));
    let k3 = f(&axpy(s, 0.5 * dt, &k2));
    let k4 = f(&axpy(s, dt, &k3));
    let s = axpy(s, dt / 6.0, &k1);
    let s = axpy(&s, dt / 3.0, &k2);
    let s = axpy(&s, dt / 3.0, &k3);
    axpy(&s, dt / 6.0, &k4)
}

/// Reduced flow ẋ = −Iρ_x(μ₁(x)) together with the coupled system
/// ẋ = −Iρ_x(Ω), Ω̇ = −ρ_x*ρ_x(Ω), Ω(0) = μ₁(x₀), both by RK4.
pub fn run_sandbox_flow(rep: &UnitaryRep, x0: &HKPoint, cfg: &SandboxFlowConfig) -> Result<SandboxTrajectory> {
    if !(cfg.dt > 0.0) || cfg.record_every == 0 {
        return Err(LabError::Invalid("sandbox flow needs dt > 0 and record_every >= 1".into()));
    }
    let steps = (cfg.t_max / cfg.dt).round() as usize;
    let reduced = |x: &HKPoint| apply_structure(Structure::I, &rho(x, &moment_map(rep, Structure::I, x))).scale(-1.0);
    let coupled = |s: &(HKPoint, Lie)| {
        let (x, om) = s;
        let xd = apply_structure(Structure::I, &rho(x, om)).scale(-1.0);
        let od = -rho_star(rep, x, &rho(x, om));
        (xd, od)
    };
    let pair_axpy = |s: &(HKPoint, Lie), a: f64, d: &(HKPoint, Lie)| (s.0.axpy(a, &d.0), &s.1 + &d.1 * C::new(a, 0.0));
    let mut x = x0.clone();
    let mut cs = (x0.clone(), moment_map(rep, Structure::I, x0));
    let mut tr = SandboxTrajectory {
        times: vec![],
        energy: vec![],
        grad_norm: vec![],
        omega_drift: vec![],
        max_drift_rate: 0.0,
        max_separation: 0.0,
        max_energy_rise: 0.0,
        final_x: x0.clone(),
    };
    let mut e_prev = energy(rep, &x);
    let record = |t: f64, x: &HKPoint, cs: &(HKPoint, Lie), tr: &mut SandboxTrajectory| {
        let drift = lie_norm(&(&cs.1 - moment_map(rep, Structure::I, &cs.0)));
        tr.times.push(t);
        tr.energy.push(energy(rep, x));
        tr.grad_norm.push(grad_energy(rep, x).norm());
        tr.omega_drift.push(drift);
        if t > 0.0 {
            tr.max_drift_rate = tr.max_drift_rate.max(drift / t);
        }
    };
    record(0.0, &x, &cs, &mut tr);
    for k in 1..=steps {
        x = rk4(&x, cfg.dt, reduced, |s, a, d| s.axpy(a, d));
        cs = rk4(&cs, cfg.dt, coupled, pair_axpy);
        if !x.is_finite() || !cs.0.is_finite() {
            return Err(LabError::NonFinite("sandbox flow"));
        }
        let e = energy(rep, &x);
        if e_prev > 0.0 {
            tr.max_energy_rise = tr.max_energy_rise.max((e - e_prev) / e_prev);
        }
        e_prev = e;
        tr.max_separation = tr.max_separation.max(x.sub(&cs.0).norm());
        if k % cfg.record_every == 0 || k == steps {
            record(k as f64 * cfg.dt, &x, &cs, &mut tr);
        }
    }
    tr.final_x = x;
    Ok(tr)
}

/// Łojasiewicz exponent of the reduced flow from x0, fitted like the lattice runs.
pub fn sandbox_loja(rep: &UnitaryRep, x0: &HKPoint, cfg: &SandboxFlowConfig) -> Result<LojaFit> {
    let tr = run_sandbox_flow(rep, x0, cfg)?;
    let shift = 1e-16 * tr.energy[0].max(1e-300);
    loja_fit_series(&tr.times, &tr.energy, &tr.grad_norm, shift)
}

// ---- suite -----------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub seed: u64,
    pub trials: usize,
    pub max_identity_adjoint: f64,
    pub max_product_twisted: f64,
    pub max_product_commuting: f64,
    pub max_product_plain: f64,
    pub max_defining_property: f64,
    pub max_equivariance: f64,
    pub max_hessian_asymmetry: f64,
    pub max_hessian_fd: f64,
    pub max_grad_fd_rel: f64,
    pub max_subspace_angle: f64,
    pub subspace_dims_ok: bool,
    pub coulomb_trials: usize,
    pub coulomb_converged: usize,
    pub coulomb_max_ratio: f64,
    /// max ‖u + u0‖ against the known answer
    pub coulomb_max_recovery: f64,
    pub wall_seconds: f64,
}

/// Random unitary exp(u) for u in Lie(G).
fn random_group(rep: &UnitaryRep, rng: &mut ChaCha8Rng) -> DMatrix<C> {
    rep.random_lie(rng).exp()
}

/// Every exactness check on `trials` random inputs for the default rep.
pub fn run_suite(seed: u64, trials: usize) -> Result<SuiteReport> {
    let start = std::time::Instant::now();
    let rep = UnitaryRep::u2_two_copies();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep_out = SuiteReport {
        seed,
        trials,
        max_identity_adjoint: 0.0,
        max_product_twisted: 0.0,
        max_product_commuting: 0.0,
        max_product_plain: 0.0,
        max_defining_property: 0.0,
        max_equivariance: 0.0,
        max_hessian_asymmetry: 0.0,
        max_hessian_fd: 0.0,
        max_grad_fd_rel: 0.0,
        max_subspace_angle: 0.0,
        subspace_dims_ok: true,
        coulomb_trials: 0,
        coulomb_converged: 0,
        coulomb_max_ratio: 0.0,
        coulomb_max_recovery: 0.0,
        wall_seconds: 0.0,
    };
    for _ in 0..trials {
        let x = rep.random_point(&mut rng, 1.0);
        let u = rep.random_lie(&mut rng);
        let xt = rep.random_point(&mut rng, 1.0);
        let m = |a: [f64; 3]| a.iter().cloned().fold(0.0, f64::max);
        rep_out.max_identity_adjoint = rep_out.max_identity_adjoint.max(m(identity_adjoint(&rep, &x, &u)));
        let pr = product_formulas(&rep, &x, &u, &xt);
        rep_out.max_product_twisted = rep_out.max_product_twisted.max(m(pr.twisted));
        rep_out.max_product_commuting = rep_out.max_product_commuting.max(m(pr.commuting));
        rep_out.max_product_plain = rep_out.max_product_plain.max(pr.plain);
        rep_out.max_defining_property =
            rep_out.max_defining_property.max(m(moment_defining_residual(&rep, &x, &u, &xt, 1e-4)));
        let g = random_group(&rep, &mut rng);
        rep_out.max_equivariance = rep_out.max_equivariance.max(equivariance_residual(&rep, &x, &g)?);
    }
    // Hessians and gradients: fewer points, each is O(d²) function evaluations
    for _ in 0..trials.min(10) {
        let x = rep.random_point(&mut rng, 1.0);
        let h = hessian_qh(&rep, &x);
        let asym = (&h - h.transpose()).amax();
        let fd = fd_hessian(|p| qh(&rep, &HKPoint::from_real(p)), &x.to_real(), 1e-2);
        rep_out.max_hessian_asymmetry = rep_out.max_hessian_asymmetry.max(asym);
        rep_out.max_hessian_fd = rep_out.max_hessian_fd.max((&h - fd).amax() / h.amax().max(1.0));
        let g = grad_energy(&rep, &x).to_real();
        let xr = x.to_real();
        let eps = 1e-5;
        let mut worst: f64 = 0.0;
        for j in 0..xr.len() {
            let mut p = xr.clone();
            p[j] += eps;
            let up = energy(&rep, &HKPoint::from_real(&p));
            p[j] -= 2.0 * eps;
            let dn = energy(&rep, &HKPoint::from_real(&p));
            worst = worst.max(((up - dn) / (2.0 * eps) - g[j]).abs());
        }
        rep_out.max_grad_fd_rel = rep_out.max_grad_fd_rel.max(worst / g.amax().max(1e-300));
    }
    // subspaces at μ-zero points and at the origin
    let origin = kernel_decompositions(&rep, &HKPoint::zero(rep.n()), 1e-9)?;
    rep_out.subspace_dims_ok &= origin.dim_ker_rho_star == origin.dim_tangent && origin.dim_im_rho == 0;
    rep_out.max_subspace_angle = rep_out.max_subspace_angle.max(origin.max_angle);
    let mut zeros = vec![];
    for _ in 0..3 {
        let x = u2_zero_point(&mut rng, 1.0);
        let k = kernel_decompositions(&rep, &x, 1e-9)?;
        rep_out.subspace_dims_ok &= k.splitting_spans && k.image_direct && k.dim_im_rho == 3;
        rep_out.max_subspace_angle = rep_out.max_subspace_angle.max(k.max_angle);
        zeros.push(x);
    }
    let circle = UnitaryRep::circle(2);
    let k = kernel_decompositions(&circle, &circle_zero_point(1.0), 1e-9)?;
    rep_out.subspace_dims_ok &= k.splitting_spans && k.image_direct && k.dim_im_rho == 1;
    rep_out.max_subspace_angle = rep_out.max_subspace_angle.max(k.max_angle);
    // slice Newton from y = e^{−u0}·x with u0 ∈ (ker ρ_x)^⊥ small; the answer is u = −u0
    for t in 0..20 {
        let x = &zeros[t % zeros.len()];
        let u0 = slice_project(&rep, x, &rep.random_lie(&mut rng)) * C::new(0.05, 0.0);
        let y = group_action(&(-&u0).exp(), x)?;
        rep_out.coulomb_trials += 1;
        if let Ok(res) = coulomb_newton(&rep, x, &y, 1e-12) {
            rep_out.coulomb_converged += 1;
            rep_out.coulomb_max_ratio = rep_out.coulomb_max_ratio.max(res.max_ratio);
            let u = rep.from_coords(&DVector::from_vec(res.u));
            rep_out.coulomb_max_recovery = rep_out.coulomb_max_recovery.max(lie_norm(&(u + &u0)));
        }
    }
    rep_out.wall_seconds = start.elapsed().as_secs_f64();
    Ok(rep_out)
}
