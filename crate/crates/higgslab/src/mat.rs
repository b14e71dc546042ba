//! Small dense complex matrices stored row-major in slices of length r*r.
//! Rank 2 gets closed forms; larger ranks fall back to nalgebra.

use nalgebra::DMatrix;
use num_complex::Complex64 as C;

pub const ZERO: C = C::new(0.0, 0.0);
pub const ONE: C = C::new(1.0, 0.0);
pub const I: C = C::new(0.0, 1.0);

pub fn identity(r: usize) -> Vec<C> {
    let mut m = vec![ZERO; r * r];
    for i in 0..r {
        m[i * r + i] = ONE;
    }
    m
}

#[inline(always)]
pub fn mul(a: &[C], b: &[C], out: &mut [C], r: usize) {
    if r == 2 {
        let (a, b): (&[C; 4], &[C; 4]) = (a[..4].try_into().unwrap(), b[..4].try_into().unwrap());
        let o: &mut [C; 4] = (&mut out[..4]).try_into().unwrap();
        o[0] = a[0] * b[0] + a[1] * b[2];
        o[1] = a[0] * b[1] + a[1] * b[3];
        o[2] = a[2] * b[0] + a[3] * b[2];
        o[3] = a[2] * b[1] + a[3] * b[3];
        return;
    }
    mul_general(a, b, out, r)
}

#[inline(never)]
fn mul_general(a: &[C], b: &[C], out: &mut [C], r: usize) {
    for i in 0..r {
        for j in 0..r {
            let mut s = ZERO;
            for k in 0..r {
                s += a[i * r + k] * b[k * r + j];
            }
            out[i * r + j] = s;
        }
    }
}

pub fn mul_new(a: &[C], b: &[C], r: usize) -> Vec<C> {
    let mut out = vec![ZERO; r * r];
    mul(a, b, &mut out, r);
    out
}

/// out = a b - b a
#[inline(always)]
pub fn comm(a: &[C], b: &[C], out: &mut [C], r: usize) {
    if r == 2 {
        let (a, b): (&[C; 4], &[C; 4]) = (a[..4].try_into().unwrap(), b[..4].try_into().unwrap());
        let o: &mut [C; 4] = (&mut out[..4]).try_into().unwrap();
        o[0] = a[1] * b[2] - b[1] * a[2];
        o[1] = a[0] * b[1] + a[1] * b[3] - b[0] * a[1] - b[1] * a[3];
        o[2] = a[2] * b[0] + a[3] * b[2] - b[2] * a[0] - b[3] * a[2];
        o[3] = a[2] * b[1] - b[2] * a[1];
        return;
    }
    comm_general(a, b, out, r)
}

#[inline(never)]
fn comm_general(a: &[C], b: &[C], out: &mut [C], r: usize) {
    for i in 0..r {
        for j in 0..r {
            let mut s = ZERO;
            for k in 0..r {
                s += a[i * r + k] * b[k * r + j] - b[i * r + k] * a[k * r + j];
            }
            out[i * r + j] = s;
        }
    }
}

pub fn comm_new(a: &[C], b: &[C], r: usize) -> Vec<C> {
    let mut out = vec![ZERO; r * r];
    comm(a, b, &mut out, r);
    out
}

#[inline]
pub fn adjoint(a: &[C], out: &mut [C], r: usize) {
    for i in 0..r {
        for j in 0..r {
            out[i * r + j] = a[j * r + i].conj();
        }
    }
}

pub fn adjoint_new(a: &[C], r: usize) -> Vec<C> {
    let mut out = vec![ZERO; r * r];
    adjoint(a, &mut out, r);
    out
}

#[inline]
pub fn trace(a: &[C], r: usize) -> C {
    (0..r).map(|i| a[i * r + i]).sum()
}

#[inline]
pub fn frob2(a: &[C]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum()
}

/// Re tr(a b^dagger)
#[inline]
pub fn re_inner(a: &[C], b: &[C]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.re * y.re + x.im * y.im).sum()
}

/// Replace `a` by its skew-Hermitian part (a - a^dagger)/2.
pub fn skew_part(a: &mut [C], r: usize) {
    for i in 0..r {
        for j in i..r {
            let x = a[i * r + j];
            let y = a[j * r + i];
            let v = (x - y.conj()) * 0.5;
            a[i * r + j] = v;
            a[j * r + i] = -v.conj();
        }
    }
}

/// Replace `a` by its Hermitian part (a + a^dagger)/2.
pub fn herm_part(a: &mut [C], r: usize) {
    for i in 0..r {
        for j in i..r {
            let x = a[i * r + j];
            let y = a[j * r + i];
            let v = (x + y.conj()) * 0.5;
            a[i * r + j] = v;
            a[j * r + i] = v.conj();
        }
    }
}

pub fn to_dmatrix(a: &[C], r: usize) -> DMatrix<C> {
    DMatrix::from_row_slice(r, r, a)
}

pub fn from_dmatrix(m: &DMatrix<C>) -> Vec<C> {
    let r = m.nrows();
    let mut out = vec![ZERO; r * r];
    for i in 0..r {
        for j in 0..r {
            out[i * r + j] = m[(i, j)];
        }
    }
    out
}

/// Eigen-decomposition of a Hermitian matrix. Eigenvalues ascending; eigenvectors
/// are the columns of the returned row-major matrix.
pub fn herm_eig(a: &[C], r: usize) -> (Vec<f64>, Vec<C>) {
    if r == 1 {
        return (vec![a[0].re], vec![ONE]);
    }
    if r == 2 {
        let p = a[0].re;
        let q = a[3].re;
        let b = (a[1] + a[2].conj()) * 0.5;
        let m = 0.5 * (p + q);
        let d = 0.5 * (p - q);
        let rad = d.hypot(b.norm());
        if b.norm() == 0.0 {
            return if p >= q {
                (vec![q, p], vec![ZERO, ONE, ONE, ZERO])
            } else {
                (vec![p, q], vec![ONE, ZERO, ZERO, ONE])
            };
        }
        // top eigenvector, picking the row without cancellation
        let (v1, v2) = if d >= 0.0 {
            (C::new(d + rad, 0.0), b.conj())
        } else {
            (b, C::new(rad - d, 0.0))
        };
        let nv = (v1.norm_sqr() + v2.norm_sqr()).sqrt();
        let (v1, v2) = (v1 / nv, v2 / nv);
        let (w1, w2) = (-v2.conj(), v1.conj());
        return (vec![m - rad, m + rad], vec![w1, v1, w2, v2]);
    }
    let mut m = to_dmatrix(a, r);
    // symmetrize so the solver sees an exactly Hermitian input
    let mt = m.adjoint();
    m = (m + mt) * C::new(0.5, 0.0);
    let eig = m.symmetric_eigen();
    let mut idx: Vec<usize> = (0..r).collect();
    idx.sort_by(|&i, &j| eig.eigenvalues[i].partial_cmp(&eig.eigenvalues[j]).unwrap());
    let vals = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = vec![ZERO; r * r];
    for (col, &i) in idx.iter().enumerate() {
        for row in 0..r {
            vecs[row * r + col] = eig.eigenvectors[(row, i)];
        }
    }
    (vals, vecs)
}

/// V diag(f(lambda)) V^dagger for Hermitian `a`.
pub fn herm_fn(a: &[C], r: usize, f: impl Fn(f64) -> f64) -> Vec<C> {
    let (vals, v) = herm_eig(a, r);
    let mut out = vec![ZERO; r * r];
    for i in 0..r {
        for j in 0..r {
            let mut s = ZERO;
            for k in 0..r {
                s += v[i * r + k] * f(vals[k]) * v[j * r + k].conj();
            }
            out[i * r + j] = s;
        }
    }
    out
}

pub fn inverse(a: &[C], r: usize) -> Option<Vec<C>> {
    if r == 1 {
        return if a[0].norm() > 0.0 { Some(vec![a[0].inv()]) } else { None };
    }
    if r == 2 {
        let det = a[0] * a[3] - a[1] * a[2];
        if det.norm() == 0.0 || !det.is_finite() {
            return None;
        }
        let inv = det.inv();
        return Some(vec![a[3] * inv, -a[1] * inv, -a[2] * inv, a[0] * inv]);
    }
    to_dmatrix(a, r).try_inverse().map(|m| from_dmatrix(&m))
}

/// Singular values, descending.
pub fn singular_values(a: &[C], r: usize) -> Vec<f64> {
    let mut ata = vec![ZERO; r * r];
    let ad = adjoint_new(a, r);
    mul(&ad, a, &mut ata, r);
    let (vals, _) = herm_eig(&ata, r);
    let mut s: Vec<f64> = vals.into_iter().map(|v| v.max(0.0).sqrt()).rev().collect();
    s.sort_by(|x, y| y.partial_cmp(x).unwrap());
    s
}

pub fn condition_number(a: &[C], r: usize) -> f64 {
    let s = singular_values(a, r);
    let lo = *s.last().unwrap();
    if lo == 0.0 {
        f64::INFINITY
    } else {
        s[0] / lo
    }
}

/// Unitary factor of the polar decomposition a = U P.
pub fn polar_unitary(a: &[C], r: usize) -> Vec<C> {
    let ad = adjoint_new(a, r);
    let ata = mul_new(&ad, a, r);
    let inv_sqrt = herm_fn(&ata, r, |l| 1.0 / l.sqrt());
    mul_new(a, &inv_sqrt, r)
}

pub fn expm(a: &[C], r: usize) -> Vec<C> {
    if r == 1 {
        return vec![a[0].exp()];
    }
    from_dmatrix(&to_dmatrix(a, r).exp())
}

/// max |a a^dagger - Id| entrywise
pub fn unitarity_defect(a: &[C], r: usize) -> f64 {
    let ad = adjoint_new(a, r);
    let p = mul_new(a, &ad, r);
    let mut m: f64 = 0.0;
    for i in 0..r {
        for j in 0..r {
            let t = if i == j { ONE } else { ZERO };
            m = m.max((p[i * r + j] - t).norm());
        }
    }
    m
}
