//! Flat square torus lattice, matrix-valued fields on it, and the discrete
//! complex derivatives, pairings and integrals everything else is built from.
//!
//! Sites are stored x-major: site `s = ix * N + iy` sits at `(ix h, iy h)`.
//! Each site holds an r x r complex matrix, row-major.
//!
//! Two-form fields (`FormDegree::Top`) store their `dx∧dy` coefficient, with
//! `dz∧dz̄ = -2i dx∧dy`. The derivatives below apply that factor whenever they
//! land in top degree.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64 as C;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::mat;
use crate::par;

/// How derivatives are discretized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Stencil {
    /// Second-order centered differences with periodic wrap.
    #[default]
    Central,
    /// Exact differentiation of the trigonometric interpolant (Nyquist mode dropped).
    Spectral,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TorusGrid {
    n: usize,
    l: f64,
    stencil: Stencil,
}

impl TorusGrid {
    pub fn new(n: usize, l: f64) -> Result<Self> {
        if n < 8 {
            return Err(LabError::Invalid(format!("grid needs N >= 8, got {n}")));
        }
        if !(l > 0.0 && l.is_finite()) {
            return Err(LabError::Invalid(format!("torus side must be positive, got {l}")));
        }
        Ok(TorusGrid { n, l, stencil: Stencil::Central })
    }

    pub fn with_stencil(mut self, stencil: Stencil) -> Self {
        self.stencil = stencil;
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn l(&self) -> f64 {
        self.l
    }
    pub fn stencil(&self) -> Stencil {
        self.stencil
    }
    pub fn h(&self) -> f64 {
        self.l / self.n as f64
    }
    pub fn vol(&self) -> f64 {
        self.l * self.l
    }
    pub fn sites(&self) -> usize {
        self.n * self.n
    }
    pub fn site(&self, ix: usize, iy: usize) -> usize {
        (ix % self.n) * self.n + (iy % self.n)
    }
    pub fn coords(&self, s: usize) -> (f64, f64) {
        let h = self.h();
        ((s / self.n) as f64 * h, (s % self.n) as f64 * h)
    }

    pub fn check_same(&self, other: &TorusGrid) -> Result<()> {
        if self != other {
            return Err(LabError::GridMismatch(format!("{self:?} vs {other:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FormDegree {
    Zero,
    Dz,
    Dzbar,
    Top,
}

impl FormDegree {
    /// Degree of the pointwise adjoint.
    pub fn conj(self) -> Self {
        match self {
            FormDegree::Dz => FormDegree::Dzbar,
            FormDegree::Dzbar => FormDegree::Dz,
            d => d,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatrixField {
    grid: TorusGrid,
    r: usize,
    degree: FormDegree,
    data: Vec<C>,
}

impl MatrixField {
    pub fn zeros(grid: TorusGrid, r: usize, degree: FormDegree) -> Self {
        assert!(r >= 1, "rank must be positive");
        MatrixField { grid, r, degree, data: vec![mat::ZERO; grid.sites() * r * r] }
    }

    pub fn identity(grid: TorusGrid, r: usize) -> Self {
        Self::constant(grid, r, FormDegree::Zero, &mat::identity(r))
    }

    pub fn constant(grid: TorusGrid, r: usize, degree: FormDegree, m: &[C]) -> Self {
        assert_eq!(m.len(), r * r);
        let mut f = Self::zeros(grid, r, degree);
        for c in f.data.chunks_mut(r * r) {
            c.copy_from_slice(m);
        }
        f
    }

    /// Fill from `fill(x, y, out)` evaluated at every site.
    pub fn from_fn(
        grid: TorusGrid,
        r: usize,
        degree: FormDegree,
        fill: impl Fn(f64, f64, &mut [C]) + Sync + Send,
    ) -> Self {
        let mut f = Self::zeros(grid, r, degree);
        par::for_each_chunk(&mut f.data, r * r, |s, out| {
            let (x, y) = grid.coords(s);
            fill(x, y, out);
        });
        f
    }

    pub fn from_data(grid: TorusGrid, r: usize, degree: FormDegree, data: Vec<C>) -> Result<Self> {
        if data.len() != grid.sites() * r * r {
            return Err(LabError::Invalid(format!(
                "field data has {} entries, expected {}",
                data.len(),
                grid.sites() * r * r
            )));
        }
        Ok(MatrixField { grid, r, degree, data })
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }
    pub fn r(&self) -> usize {
        self.r
    }
    pub fn degree(&self) -> FormDegree {
        self.degree
    }
    pub fn data(&self) -> &[C] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [C] {
        &mut self.data
    }
    pub fn into_data(self) -> Vec<C> {
        self.data
    }
    pub fn site(&self, s: usize) -> &[C] {
        let q = self.r * self.r;
        &self.data[s * q..(s + 1) * q]
    }
    pub fn site_mut(&mut self, s: usize) -> &mut [C] {
        let q = self.r * self.r;
        &mut self.data[s * q..(s + 1) * q]
    }

    pub fn with_degree(mut self, degree: FormDegree) -> Self {
        self.degree = degree;
        self
    }

    pub fn check_compatible(&self, other: &MatrixField) -> Result<()> {
        self.grid.check_same(&other.grid)?;
        if self.r != other.r {
            return Err(LabError::GridMismatch(format!("rank {} vs {}", self.r, other.r)));
        }
        if self.degree != other.degree {
            return Err(LabError::DegreeMismatch { expected: self.degree, got: other.degree });
        }
        Ok(())
    }

    fn assert_shape(&self, other: &MatrixField) {
        assert!(
            self.grid == other.grid && self.r == other.r,
            "field shape mismatch: {:?}/{} vs {:?}/{}",
            self.grid,
            self.r,
            other.grid,
            other.r
        );
    }

    /// Site-wise map producing a new field of the given degree.
    pub fn map_sites(
        &self,
        degree: FormDegree,
        f: impl Fn(usize, &[C], &mut [C]) + Sync + Send,
    ) -> MatrixField {
        let mut out = MatrixField::zeros(self.grid, self.r, degree);
        let q = self.r * self.r;
        let src = &self.data;
        par::for_each_chunk(&mut out.data, q, |s, o| f(s, &src[s * q..(s + 1) * q], o));
        out
    }

    /// Site-wise map over two fields.
    pub fn zip_sites(
        &self,
        other: &MatrixField,
        degree: FormDegree,
        f: impl Fn(usize, &[C], &[C], &mut [C]) + Sync + Send,
    ) -> MatrixField {
        self.assert_shape(other);
        let mut out = MatrixField::zeros(self.grid, self.r, degree);
        let q = self.r * self.r;
        let (a, b) = (&self.data, &other.data);
        par::for_each_chunk(&mut out.data, q, |s, o| {
            f(s, &a[s * q..(s + 1) * q], &b[s * q..(s + 1) * q], o)
        });
        out
    }

    pub fn add(&self, other: &MatrixField) -> MatrixField {
        self.assert_shape(other);
        let mut out = self.clone();
        out.axpy(mat::ONE, other);
        out
    }

    pub fn sub(&self, other: &MatrixField) -> MatrixField {
        self.assert_shape(other);
        let mut out = self.clone();
        out.axpy(-mat::ONE, other);
        out
    }

    /// self += alpha * x
    pub fn axpy(&mut self, alpha: C, x: &MatrixField) {
        self.assert_shape(x);
        for (a, b) in self.data.iter_mut().zip(&x.data) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: C) {
        for a in &mut self.data {
            *a *= alpha;
        }
    }

    pub fn scaled(&self, alpha: C) -> MatrixField {
        let mut out = self.clone();
        out.scale(alpha);
        out
    }

    /// Pointwise conjugate transpose; dz and dz̄ degrees swap.
    pub fn adjoint(&self) -> MatrixField {
        let r = self.r;
        self.map_sites(self.degree.conj(), |_, a, o| mat::adjoint(a, o, r))
    }

    /// Pointwise matrix product self * other.
    pub fn mul(&self, other: &MatrixField, degree: FormDegree) -> MatrixField {
        let r = self.r;
        self.zip_sites(other, degree, |_, a, b, o| mat::mul(a, b, o, r))
    }

    /// Pointwise commutator [self, other].
    pub fn comm(&self, other: &MatrixField, degree: FormDegree) -> MatrixField {
        let r = self.r;
        self.zip_sites(other, degree, |_, a, b, o| mat::comm(a, b, o, r))
    }

    pub fn skew_part(&self) -> MatrixField {
        let r = self.r;
        self.map_sites(self.degree, |_, a, o| {
            o.copy_from_slice(a);
            mat::skew_part(o, r)
        })
    }

    pub fn herm_part(&self) -> MatrixField {
        let r = self.r;
        self.map_sites(self.degree, |_, a, o| {
            o.copy_from_slice(a);
            mat::herm_part(o, r)
        })
    }

    /// Remove the pointwise trace part.
    pub fn trace_free(&self) -> MatrixField {
        let r = self.r;
        self.map_sites(self.degree, |_, a, o| {
            o.copy_from_slice(a);
            let t = mat::trace(a, r) / r as f64;
            for i in 0..r {
                o[i * r + i] -= t;
            }
        })
    }

    /// Pointwise trace as a rank-1 field.
    pub fn trace_field(&self) -> MatrixField {
        let r = self.r;
        let mut out = MatrixField::zeros(self.grid, 1, self.degree);
        for s in 0..self.grid.sites() {
            out.data[s] = mat::trace(self.site(s), r);
        }
        out
    }

    /// Sqrt of l2_inner(self, self).
    pub fn l2_norm(&self) -> f64 {
        let h2 = self.grid.h().powi(2);
        (mat::frob2(&self.data) * h2).sqrt()
    }

    /// Maximum over sites of the pointwise Frobenius norm.
    pub fn sup_norm(&self) -> f64 {
        let q = self.r * self.r;
        par::max_range(self.grid.sites(), |s| mat::frob2(&self.data[s * q..(s + 1) * q]).sqrt())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.is_finite())
    }

    pub fn ensure_finite(&self, ctx: &'static str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(LabError::NonFinite(ctx))
        }
    }

    /// Largest entrywise distance to another field.
    pub fn max_diff(&self, other: &MatrixField) -> f64 {
        self.assert_shape(other);
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }
}

/// Σ Re tr(u v†) h² over sites. Degrees must match.
pub fn l2_inner(u: &MatrixField, v: &MatrixField) -> Result<f64> {
    u.check_compatible(v)?;
    Ok(mat::re_inner(&u.data, &v.data) * u.grid.h().powi(2))
}

/// Σ tr(f) h² over sites.
pub fn integrate_trace(f: &MatrixField) -> C {
    let r = f.r;
    let sum: C = (0..f.grid.sites()).map(|s| mat::trace(f.site(s), r)).sum();
    sum * f.grid.h().powi(2)
}

/// ½(∂x + i∂y). Zero → dz̄; dz → top (dz̄∧dz = 2i dx∧dy).
pub fn dbar(f: &MatrixField) -> MatrixField {
    let (deg, k) = match f.degree {
        FormDegree::Zero => (FormDegree::Dzbar, mat::ONE),
        FormDegree::Dz => (FormDegree::Top, C::new(0.0, 2.0)),
        d => panic!("dbar is not defined on {d:?} fields"),
    };
    derivative(f, k * 0.5, k * C::new(0.0, 0.5), deg)
}

/// ½(∂x − i∂y). Zero → dz; dz̄ → top (dz∧dz̄ = −2i dx∧dy).
pub fn d_prime(f: &MatrixField) -> MatrixField {
    let (deg, k) = match f.degree {
        FormDegree::Zero => (FormDegree::Dz, mat::ONE),
        FormDegree::Dzbar => (FormDegree::Top, C::new(0.0, -2.0)),
        d => panic!("d_prime is not defined on {d:?} fields"),
    };
    derivative(f, k * 0.5, k * C::new(0.0, -0.5), deg)
}

/// Exact adjoint of `dbar` for the pairing `l2_inner`.
pub fn dbar_adjoint(v: &MatrixField) -> MatrixField {
    // dbar = c(Dx + iDy)/2 with Dx, Dy real and antisymmetric, so its adjoint is
    // -conj(c)(Dx - iDy)/2.
    let (deg, k) = match v.degree {
        FormDegree::Dzbar => (FormDegree::Zero, mat::ONE),
        FormDegree::Top => (FormDegree::Dz, C::new(0.0, 2.0)),
        d => panic!("dbar_adjoint is not defined on {d:?} fields"),
    };
    let c = -k.conj();
    derivative(v, c * 0.5, c * C::new(0.0, -0.5), deg)
}

/// Exact adjoint of `d_prime` for the pairing `l2_inner`.
pub fn d_prime_adjoint(v: &MatrixField) -> MatrixField {
    let (deg, k) = match v.degree {
        FormDegree::Dz => (FormDegree::Zero, mat::ONE),
        FormDegree::Top => (FormDegree::Dzbar, C::new(0.0, -2.0)),
        d => panic!("d_prime_adjoint is not defined on {d:?} fields"),
    };
    let c = -k.conj();
    derivative(v, c * 0.5, c * C::new(0.0, 0.5), deg)
}

/// cx ∂x f + cy ∂y f, componentwise, tagged with `degree`.
pub fn derivative(f: &MatrixField, cx: C, cy: C, degree: FormDegree) -> MatrixField {
    match f.grid.stencil {
        Stencil::Central => central_derivative(f, cx, cy, degree),
        Stencil::Spectral => spectral_derivative(f, cx, cy, degree),
    }
}

fn central_derivative(f: &MatrixField, cx: C, cy: C, degree: FormDegree) -> MatrixField {
    let n = f.grid.n;
    let q = f.r * f.r;
    let inv2h = 1.0 / (2.0 * f.grid.h());
    let (ax, ay) = (cx * inv2h, cy * inv2h);
    let mut out = MatrixField::zeros(f.grid, f.r, degree);
    let src = &f.data;
    par::for_each_chunk(&mut out.data, n * q, |ix, row| {
        let xp = ((ix + 1) % n) * n;
        let xm = ((ix + n - 1) % n) * n;
        let x0 = ix * n;
        for iy in 0..n {
            let yp = (iy + 1) % n;
            let ym = (iy + n - 1) % n;
            let o = &mut row[iy * q..(iy + 1) * q];
            for c in 0..q {
                let dx = src[(xp + iy) * q + c] - src[(xm + iy) * q + c];
                let dy = src[(x0 + yp) * q + c] - src[(x0 + ym) * q + c];
                o[c] = ax * dx + ay * dy;
            }
        }
    });
    out
}

struct Plans {
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

thread_local! {
    static PLANS: RefCell<HashMap<usize, Arc<Plans>>> = RefCell::new(HashMap::new());
}

fn plans(n: usize) -> Arc<Plans> {
    PLANS.with(|p| {
        p.borrow_mut()
            .entry(n)
            .or_insert_with(|| {
                let mut planner = FftPlanner::new();
                Arc::new(Plans { fwd: planner.plan_fft_forward(n), inv: planner.plan_fft_inverse(n) })
            })
            .clone()
    })
}

/// Integer wavenumber of FFT bin `j`; the Nyquist bin maps to 0 so the
/// derivative stays real-structure preserving and exactly antisymmetric.
fn wavenumber(j: usize, n: usize) -> f64 {
    if 2 * j < n {
        j as f64
    } else if 2 * j == n {
        0.0
    } else {
        j as f64 - n as f64
    }
}

fn transpose(buf: &mut [C], n: usize) {
    for i in 0..n {
        for j in (i + 1)..n {
            buf.swap(i * n + j, j * n + i);
        }
    }
}

type SymbolKey = (usize, u64, [u64; 4]);

thread_local! {
    static SYMBOLS: RefCell<HashMap<SymbolKey, Arc<Vec<C>>>> = RefCell::new(HashMap::new());
}

/// i (cx kx + cy ky) on the transposed spectrum layout `[jy * n + jx]`, cached.
fn spectral_symbol(n: usize, k0: f64, cx: C, cy: C) -> Arc<Vec<C>> {
    let key = (n, k0.to_bits(), [cx.re.to_bits(), cx.im.to_bits(), cy.re.to_bits(), cy.im.to_bits()]);
    SYMBOLS.with(|m| {
        m.borrow_mut()
            .entry(key)
            .or_insert_with(|| {
                let mut symbol = vec![mat::ZERO; n * n];
                for jy in 0..n {
                    for jx in 0..n {
                        let kx = k0 * wavenumber(jx, n);
                        let ky = k0 * wavenumber(jy, n);
                        symbol[jy * n + jx] = mat::I * (cx * kx + cy * ky);
                    }
                }
                Arc::new(symbol)
            })
            .clone()
    })
}

fn spectral_derivative(f: &MatrixField, cx: C, cy: C, degree: FormDegree) -> MatrixField {
    let n = f.grid.n;
    let q = f.r * f.r;
    let p = plans(n);
    let k0 = 2.0 * PI / f.grid.l;
    let scale = 1.0 / (n * n) as f64;
    let symbol = spectral_symbol(n, k0, cx * scale, cy * scale);
    let comps: Vec<Vec<C>> = par::map_range(q, |c| {
        let mut buf: Vec<C> = (0..n * n).map(|s| f.data[s * q + c]).collect();
        let mut scratch = vec![mat::ZERO; p.fwd.get_inplace_scratch_len()];
        p.fwd.process_with_scratch(&mut buf, &mut scratch);
        transpose(&mut buf, n);
        p.fwd.process_with_scratch(&mut buf, &mut scratch);
        for (b, s) in buf.iter_mut().zip(symbol.iter()) {
            *b *= s;
        }
        p.inv.process_with_scratch(&mut buf, &mut scratch);
        transpose(&mut buf, n);
        p.inv.process_with_scratch(&mut buf, &mut scratch);
        buf
    });
    let mut out = MatrixField::zeros(f.grid, f.r, degree);
    for (c, comp) in comps.iter().enumerate() {
        for s in 0..n * n {
            out.data[s * q + c] = comp[s];
        }
    }
    out
}

/// Low-pass projection: zero every Fourier mode with |k|_∞ ≥ kmax (integer
/// wavenumbers). Used to build smooth test and initial data.
pub fn low_pass(f: &MatrixField, kmax: usize) -> MatrixField {
    let n = f.grid.n;
    let q = f.r * f.r;
    let p = plans(n);
    let scale = 1.0 / (n * n) as f64;
    let mut out = f.clone();
    for c in 0..q {
        let mut buf: Vec<C> = (0..n * n).map(|s| f.data[s * q + c]).collect();
        p.fwd.process(&mut buf);
        transpose(&mut buf, n);
        p.fwd.process(&mut buf);
        for jy in 0..n {
            for jx in 0..n {
                let kx = wavenumber(jx, n).abs() as usize;
                let ky = wavenumber(jy, n).abs() as usize;
                let nyq = 2 * jx == n || 2 * jy == n;
                if kx >= kmax || ky >= kmax || nyq {
                    buf[jy * n + jx] = mat::ZERO;
                }
            }
        }
        p.inv.process(&mut buf);
        transpose(&mut buf, n);
        p.inv.process(&mut buf);
        for s in 0..n * n {
            out.data[s * q + c] = buf[s] * scale;
        }
    }
    out
}

/// Forward 2D Fourier coefficients of a scalar (rank-1) field, indexed
/// `[jx * N + jy]`, normalized so a constant c maps to c at bin 0.
pub fn fourier_coefficients(f: &MatrixField) -> Vec<C> {
    assert_eq!(f.r, 1);
    let n = f.grid.n;
    let p = plans(n);
    let mut buf = f.data.clone();
    p.fwd.process(&mut buf);
    transpose(&mut buf, n);
    p.fwd.process(&mut buf);
    transpose(&mut buf, n);
    let scale = 1.0 / (n * n) as f64;
    buf.iter().map(|z| z * scale).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(grid: TorusGrid, r: usize, deg: FormDegree, seed: u64) -> MatrixField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..grid.sites() * r * r)
            .map(|_| C::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        MatrixField::from_data(grid, r, deg, data).unwrap()
    }

    fn grids() -> Vec<TorusGrid> {
        let g = TorusGrid::new(16, 1.3).unwrap();
        vec![g, g.with_stencil(Stencil::Spectral)]
    }

    #[test]
    fn grid_rejects_bad_sizes() {
        assert!(TorusGrid::new(4, 1.0).is_err());
        assert!(TorusGrid::new(16, 0.0).is_err());
        let g = TorusGrid::new(32, 1.0).unwrap();
        assert_eq!(g.h() * 32.0, 1.0);
    }

    #[test]
    fn constant_has_zero_derivatives() {
        for g in grids() {
            let m = [C::new(1.0, 2.0), C::new(-0.5, 0.0), C::new(3.0, 1.0), C::new(0.0, -1.0)];
            let f = MatrixField::constant(g, 2, FormDegree::Zero, &m);
            assert!(dbar(&f).sup_norm() < 1e-12);
            assert!(d_prime(&f).sup_norm() < 1e-12);
        }
    }

    #[test]
    fn plane_wave_derivatives() {
        // f = exp(2πix/L) Id: ∂̄f = (πi/L) f ; g = exp(2πiy/L) Id: ∂g = (π/L) g
        let l = 1.0;
        for n in [32usize, 64] {
            for st in [Stencil::Central, Stencil::Spectral] {
                let g = TorusGrid::new(n, l).unwrap().with_stencil(st);
                let fx = MatrixField::from_fn(g, 2, FormDegree::Zero, |x, _, o| {
                    let e = C::new(0.0, 2.0 * PI * x / l).exp();
                    o.copy_from_slice(&[e, mat::ZERO, mat::ZERO, e]);
                });
                let fy = MatrixField::from_fn(g, 2, FormDegree::Zero, |_, y, o| {
                    let e = C::new(0.0, 2.0 * PI * y / l).exp();
                    o.copy_from_slice(&[e, mat::ZERO, mat::ZERO, e]);
                });
                let ex = fx.scaled(C::new(0.0, PI / l)).with_degree(FormDegree::Dzbar);
                let ey = fy.scaled(C::new(PI / l, 0.0)).with_degree(FormDegree::Dz);
                let ex_err = dbar(&fx).sub(&ex).l2_norm() / ex.l2_norm();
                let ey_err = d_prime(&fy).sub(&ey).l2_norm() / ey.l2_norm();
                let bound = match st {
                    Stencil::Central => (PI * g.h() / l * 2.0).powi(2) / 6.0,
                    Stencil::Spectral => 1e-13,
                };
                assert!(ex_err <= bound, "{st:?} n={n}: {ex_err} > {bound}");
                assert!(ey_err <= bound, "{st:?} n={n}: {ey_err} > {bound}");
            }
        }
    }

    #[test]
    fn central_stencil_is_second_order() {
        let f_exact = |g: TorusGrid| {
            let f = MatrixField::from_fn(g, 1, FormDegree::Zero, |x, y, o| {
                o[0] = C::new((2.0 * PI * x).sin() * (2.0 * PI * y).cos().exp(), 0.0);
            });
            let e = MatrixField::from_fn(g, 1, FormDegree::Dzbar, |x, y, o| {
                let base = (2.0 * PI * y).cos().exp();
                let dx = 2.0 * PI * (2.0 * PI * x).cos() * base;
                let dy = (2.0 * PI * x).sin() * base * (-2.0 * PI * (2.0 * PI * y).sin());
                o[0] = C::new(0.5 * dx, 0.5 * dy);
            });
            dbar(&f).sub(&e).l2_norm()
        };
        let e32 = f_exact(TorusGrid::new(32, 1.0).unwrap());
        let e64 = f_exact(TorusGrid::new(64, 1.0).unwrap());
        let ratio = e32 / e64;
        assert!(ratio > 3.8 && ratio < 4.2, "ratio {ratio}");
    }

    #[test]
    fn integration_by_parts_is_exact() {
        for g in grids() {
            let u = random_field(g, 2, FormDegree::Zero, 1);
            let v = random_field(g, 2, FormDegree::Dzbar, 2);
            let lhs = l2_inner(&dbar(&u), &v).unwrap();
            let rhs = l2_inner(&u, &dbar_adjoint(&v)).unwrap();
            let scale = u.l2_norm() * v.l2_norm();
            assert!((lhs - rhs).abs() <= 1e-12 * scale, "{:?}", g.stencil());
            let w = random_field(g, 2, FormDegree::Dz, 3);
            let t = random_field(g, 2, FormDegree::Top, 4);
            let lhs = l2_inner(&dbar(&w), &t).unwrap();
            let rhs = l2_inner(&w, &dbar_adjoint(&t)).unwrap();
            assert!((lhs - rhs).abs() <= 1e-12 * w.l2_norm() * t.l2_norm());
            let a = random_field(g, 2, FormDegree::Dzbar, 5);
            let lhs = l2_inner(&d_prime(&a), &t).unwrap();
            let rhs = l2_inner(&a, &d_prime_adjoint(&t)).unwrap();
            assert!((lhs - rhs).abs() <= 1e-12 * a.l2_norm() * t.l2_norm());
        }
    }

    #[test]
    fn conjugation_swaps_dbar_and_dprime() {
        for g in grids() {
            let f = random_field(g, 2, FormDegree::Zero, 7);
            let conj = f.map_sites(FormDegree::Zero, |_, a, o| {
                for (x, y) in o.iter_mut().zip(a) {
                    *x = y.conj();
                }
            });
            let lhs = dbar(&conj).map_sites(FormDegree::Dz, |_, a, o| {
                for (x, y) in o.iter_mut().zip(a) {
                    *x = y.conj();
                }
            });
            assert!(lhs.max_diff(&d_prime(&f)) < 1e-12);
        }
    }

    #[test]
    fn inner_product_and_trace_integral_of_identity() {
        let g = TorusGrid::new(16, 1.0).unwrap();
        let id = MatrixField::identity(g, 2);
        assert!((l2_inner(&id, &id).unwrap() - 2.0).abs() < 1e-12);
        assert!((integrate_trace(&id) - C::new(2.0, 0.0)).norm() < 1e-12);
        let z = MatrixField::zeros(g, 2, FormDegree::Zero);
        assert_eq!(integrate_trace(&z), mat::ZERO);
        assert!(l2_inner(&id, &id.clone().with_degree(FormDegree::Dz)).is_err());
    }

    #[test]
    fn spectral_leibniz_is_exact_for_band_limited_products() {
        let g = TorusGrid::new(32, 1.0).unwrap().with_stencil(Stencil::Spectral);
        let a = low_pass(&random_field(g, 2, FormDegree::Zero, 11), 5);
        let b = low_pass(&random_field(g, 2, FormDegree::Zero, 12), 5);
        let ab = a.mul(&b, FormDegree::Zero);
        let lhs = dbar(&ab);
        let rhs = dbar(&a).mul(&b, FormDegree::Dzbar).add(&a.mul(&dbar(&b), FormDegree::Dzbar));
        assert!(lhs.max_diff(&rhs) < 1e-11 * lhs.sup_norm());
    }
}
