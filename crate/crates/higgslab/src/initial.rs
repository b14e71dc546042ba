//! Initial data: random smooth pairs with φ projected onto ker d_A″, and split
//! critical points of type (1, −1) with a stable extension perturbation.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64 as C;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::critical;
use crate::error::{LabError, Result};
use crate::fields::HiggsPair;
use crate::geometry::{derivative, FormDegree, MatrixField, TorusGrid};
use crate::mat;

/// L(f) = ∂̄f + [a, f] on dz-coefficients.
fn hol_op(a: &MatrixField, f: &MatrixField) -> MatrixField {
    let r = a.r();
    let df = derivative(f, C::new(0.5, 0.0), C::new(0.0, 0.5), FormDegree::Top);
    df.zip_sites(a, FormDegree::Top, |s, d, aa, o| {
        mat::comm(aa, f.site(s), o, r);
        for (x, y) in o.iter_mut().zip(d) {
            *x += y;
        }
    })
}

/// L†(w) = −½(∂x − i∂y)w + [a†, w].
fn hol_op_adjoint(a: &MatrixField, w: &MatrixField) -> MatrixField {
    let r = a.r();
    let dw = derivative(w, C::new(-0.5, 0.0), C::new(0.0, 0.5), FormDegree::Dz);
    dw.zip_sites(a, FormDegree::Dz, |s, d, aa, o| {
        let ad = mat::adjoint_new(aa, r);
        mat::comm(&ad, w.site(s), o, r);
        for (x, y) in o.iter_mut().zip(d) {
            *x += y;
        }
    })
}

fn dot(u: &MatrixField, v: &MatrixField) -> f64 {
    mat::re_inner(u.data(), v.data())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub iterations: usize,
    /// ‖∂̄φ + [a, φ]‖ after projection
    pub residual: f64,
}

/// Least-squares projection of v onto ker L: φ = v − L†w with LL†w = Lv (CG).
///
/// CG keeps its best iterate and stops once the residual climbs well above it;
/// a few refinement rounds then restart from the projected field.
pub fn project_holomorphic(a: &MatrixField, v: &MatrixField, tol: f64) -> Result<(MatrixField, Projection)> {
    let mut phi = v.clone();
    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    for _ in 0..4 {
        let (next, it) = cg_round(a, &phi, tol);
        iterations += it;
        phi = next;
        residual = hol_op(a, &phi).l2_norm();
        if residual <= 0.1 * tol || it == 0 {
            break;
        }
    }
    if !(residual <= tol) {
        return Err(LabError::NoConvergence(format!(
            "holomorphic projection residual {residual:.3e} after {iterations} CG iterations"
        )));
    }
    Ok((phi, Projection { iterations, residual }))
}

fn cg_round(a: &MatrixField, v: &MatrixField, tol: f64) -> (MatrixField, usize) {
    let b = hol_op(a, v);
    let mut w = MatrixField::zeros(*a.grid(), a.r(), FormDegree::Top);
    let mut res = b.clone();
    let mut p = res.clone();
    let mut rr = dot(&res, &res);
    // res = Lφ, so stop on its L² norm
    let h2 = a.grid().h().powi(2);
    let target = (0.01 * tol).powi(2) / h2;
    let mut best = (rr, w.clone());
    let mut it = 0;
    let max_it = 4 * a.grid().sites();
    while rr > target && it < max_it {
        let mp = hol_op(a, &hol_op_adjoint(a, &p));
        let pmp = dot(&p, &mp);
        if !(pmp > 0.0) {
            break;
        }
        let alpha = rr / pmp;
        w.axpy(C::new(alpha, 0.0), &p);
        res.axpy(C::new(-alpha, 0.0), &mp);
        let rr_new = dot(&res, &res);
        p = res.add(&p.scaled(C::new(rr_new / rr, 0.0)));
        rr = rr_new;
        it += 1;
        if rr < best.0 {
            best = (rr, w.clone());
        } else if rr > 1e4 * best.0 {
            break;
        }
    }
    (v.sub(&hol_op_adjoint(a, &best.1)), it)
}

/// Gaussian Fourier modes damped by exp(−|k|²/k0²), |k|_∞ ≤ kcut, times `amplitude`.
pub fn random_modes(grid: TorusGrid, r: usize, degree: FormDegree, k0: f64, amplitude: f64, rng: &mut ChaCha8Rng) -> MatrixField {
    let kcut = ((3.0 * k0).ceil() as i64).min(grid.n() as i64 / 2 - 1);
    let q = r * r;
    let mut modes = vec![];
    for kx in -kcut..=kcut {
        for ky in -kcut..=kcut {
            let w = amplitude * (-((kx * kx + ky * ky) as f64) / (k0 * k0)).exp();
            let c: Vec<C> = (0..q)
                .map(|_| {
                    let re: f64 = rng.sample(StandardNormal);
                    let im: f64 = rng.sample(StandardNormal);
                    C::new(re, im) * (w / 2f64.sqrt())
                })
                .collect();
            modes.push((kx, ky, c));
        }
    }
    let l = grid.l();
    MatrixField::from_fn(grid, r, degree, |x, y, o| {
        for z in o.iter_mut() {
            *z = mat::ZERO;
        }
        for (kx, ky, c) in &modes {
            let ph = C::new(0.0, 2.0 * PI * (*kx as f64 * x + *ky as f64 * y) / l).exp();
            for j in 0..q {
                o[j] += c[j] * ph;
            }
        }
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialInfo {
    pub seed: u64,
    pub kernel_dimension: Option<usize>,
    pub projection: Projection,
    pub attempts: usize,
}

/// Random smooth pair: A″ from damped Gaussian modes, φ a random smooth field
/// projected onto ker d_A″. Retries with a derived seed if the projection fails.
pub fn random_smooth(
    grid: TorusGrid,
    r: usize,
    fixed_det: bool,
    seed: u64,
    k0: f64,
    amplitude: f64,
    tol: f64,
) -> Result<(HiggsPair, InitialInfo)> {
    let mut last_err = None;
    for attempt in 0..4u64 {
        let s = seed.wrapping_add(attempt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let mut a = random_modes(grid, r, FormDegree::Dzbar, k0, amplitude, &mut rng);
        let mut v = random_modes(grid, r, FormDegree::Dz, k0, amplitude, &mut rng);
        if fixed_det {
            a = a.trace_free();
            v = v.trace_free();
        }
        match project_holomorphic(&a, &v, tol) {
            Ok((phi, proj)) => {
                let phi = if fixed_det { phi.trace_free() } else { phi };
                let info = InitialInfo { seed: s, kernel_dimension: None, projection: proj, attempts: attempt as usize + 1 };
                return Ok((HiggsPair::new(a, phi, fixed_det)?, info));
            }
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.unwrap())
}

/// Complex dimension of ker d_A″ on dz-fields, from the Gram matrix of `samples`
/// projected random fields (eigenvalues above `rel_tol` × largest count).
pub fn kernel_dimension(a: &MatrixField, samples: usize, seed: u64, rel_tol: f64) -> Result<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = *a.grid();
    let mut vecs = vec![];
    for _ in 0..samples {
        let v = random_modes(grid, a.r(), FormDegree::Dz, 1.5, 1.0, &mut rng);
        vecs.push(project_holomorphic(a, &v, 1e-9)?.0);
    }
    let gram = DMatrix::from_fn(samples, samples, |i, j| {
        vecs[i].data().iter().zip(vecs[j].data()).map(|(x, y)| x * y.conj()).sum::<C>()
    });
    let ev = gram.symmetric_eigenvalues();
    let top = ev.iter().cloned().fold(0.0, f64::max);
    Ok(ev.iter().filter(|&&x| x > rel_tol * top).count())
}

// Gaussian width of the twisting frame. Controls how well the normalized frame
// is resolved: at N = 32 the split point's residual is ~1e-13 at 1.4 and ~1e-9 at 1.
const ZAK_WIDTH: f64 = 1.4;

// Zak transform of the Gaussian e^{−πs(y+shift)²} and its x, y derivatives.
fn zak(x: f64, y: f64, shift: f64) -> [C; 3] {
    let mut out = [mat::ZERO; 3];
    let sw = ZAK_WIDTH;
    for n in -12i32..=12 {
        let u = y + shift + n as f64;
        let g = (-PI * sw * u * u).exp();
        let e = C::new(0.0, 2.0 * PI * n as f64 * x).exp();
        out[0] += e * g;
        out[1] += e * g * C::new(0.0, 2.0 * PI * n as f64);
        out[2] += e * g * (-2.0 * PI * sw * u);
    }
    out
}

/// Unitary G(x, y) with periodic columns up to G(x, y+1) = G · diag(e^{−2πix}, e^{2πix}),
/// and its partial derivatives. Needs L = 1.
fn twisting_frame(x: f64, y: f64) -> [[C; 4]; 3] {
    let v1 = zak(x, y, 0.0);
    let v2 = zak(x, y, 0.5);
    let n2 = v1[0].norm_sqr() + v2[0].norm_sqr();
    let n = n2.sqrt();
    let mut out = [[mat::ZERO; 4]; 3];
    // columns e1 = v/|v|, e2 = (−v̄₂, v̄₁)/|v|
    out[0] = [v1[0] / n, -v2[0].conj() / n, v2[0] / n, v1[0].conj() / n];
    for d in 1..3 {
        let dn = (v1[0].conj() * v1[d] + v2[0].conj() * v2[d]).re / n;
        let q = |w: C, dw: C| dw / n - w * dn / n2;
        out[d] = [
            q(v1[0], v1[d]),
            q(-v2[0].conj(), -v2[d].conj()),
            q(v2[0], v2[d]),
            q(v1[0].conj(), v1[d].conj()),
        ];
    }
    out
}

/// Split critical point of type (1, −1): in the twisted frame A = −2πi y σ₃ dx and
/// φ = diag(c, −c) dz; written in a periodic frame via `twisting_frame`.
pub fn split_critical(grid: TorusGrid, c: C) -> Result<HiggsPair> {
    if (grid.l() - 1.0).abs() > 1e-14 {
        return Err(LabError::Invalid("split critical points are built for L = 1".into()));
    }
    let a = MatrixField::from_fn(grid, 2, FormDegree::Dzbar, |x, y, o| {
        let [g, gx, gy] = twisting_frame(x, y);
        let gi = mat::adjoint_new(&g, 2);
        let s = [C::new(0.0, -2.0 * PI * y), mat::ZERO, mat::ZERO, C::new(0.0, 2.0 * PI * y)];
        // A_x = G A_s G⁻¹ − G_x G⁻¹, A_y = −G_y G⁻¹
        let ax: Vec<C> = mat::mul_new(&mat::mul_new(&g, &s, 2), &gi, 2)
            .iter()
            .zip(mat::mul_new(&gx, &gi, 2))
            .map(|(p, q)| p - q)
            .collect();
        let ay: Vec<C> = mat::mul_new(&gy, &gi, 2).iter().map(|z| -z).collect();
        for k in 0..4 {
            o[k] = 0.5 * (ax[k] + C::new(0.0, 1.0) * ay[k]);
        }
    });
    let phi = MatrixField::from_fn(grid, 2, FormDegree::Dz, |x, y, o| {
        let g = twisting_frame(x, y)[0];
        let d = [c, mat::ZERO, mat::ZERO, -c];
        o.copy_from_slice(&mat::mul_new(&mat::mul_new(&g, &d, 2), &mat::adjoint_new(&g, 2), 2));
    });
    HiggsPair::new(a, phi, false)
}

/// The split point plus δφ = π X (1 − π), π the top eigenprojection, with X random
/// smooth and the result projected into ker d_A″, scaled to sup-norm `eps`.
pub fn split_plus_perturbation(base: &HiggsPair, eps: f64, seed: u64, tol: f64) -> Result<HiggsPair> {
    let pi = critical::eigenprojector(base, 1, 1e-6)?;
    let r = base.r();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_modes(*base.grid(), r, FormDegree::Dz, 1.0, 1.0, &mut rng);
    let block = x.zip_sites(&pi, FormDegree::Dz, |_, xx, p, o| {
        let mut q = mat::identity(r);
        for (a, b) in q.iter_mut().zip(p) {
            *a -= b;
        }
        o.copy_from_slice(&mat::mul_new(&mat::mul_new(p, xx, r), &q, r));
    });
    let (dphi, _) = project_holomorphic(base.a2(), &block, tol)?;
    let n = dphi.sup_norm();
    if n < 1e-12 {
        return Err(LabError::Invalid("perturbation vanished after projection".into()));
    }
    let mut phi = base.phi().clone();
    phi.axpy(C::new(eps / n, 0.0), &dphi);
    HiggsPair::new(base.a2().clone(), phi, base.fixed_det())
}
