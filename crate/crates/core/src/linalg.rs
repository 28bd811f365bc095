//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Eigenvalues in (-SQRT_CLAMP, 0) are treated as roundoff and clamped to zero.
pub const SQRT_CLAMP: f64 = 1e-10;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).amax()
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    symmetrize(m)
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

fn spectral_map(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> Result<DMatrix<f64>> {
    let eig = symmetrize(m).symmetric_eigen();
    let mut vals = eig.eigenvalues.clone();
    for v in vals.iter_mut() {
        if *v < -SQRT_CLAMP * (1.0 + m.amax()) {
            return Err(Error::SqrtFailure { eigenvalue: *v });
        }
        *v = f(v.max(0.0));
    }
    let q = &eig.eigenvectors;
    Ok(symmetrize(&(q * DMatrix::from_diagonal(&vals) * q.transpose())))
}

/// Principal square root of a symmetric positive semi-definite matrix.
pub fn sqrt_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    spectral_map(m, f64::sqrt)
}

/// Inverse principal square root of a symmetric positive definite matrix.
pub fn inv_sqrt_pd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let lmin = min_eigenvalue(m);
    if lmin <= 0.0 {
        return Err(Error::Singular {
            what: "matrix under inverse square root",
            cond: f64::INFINITY,
        });
    }
    spectral_map(m, |v| 1.0 / v.sqrt())
}

/// 2-norm condition number via singular values.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Inverse with an explicit conditioning guard.
pub fn inverse_checked(m: &DMatrix<f64>, what: &'static str, max_cond: f64) -> Result<DMatrix<f64>> {
    let cond = condition_number(m);
    if !cond.is_finite() || cond > max_cond {
        return Err(Error::Singular { what, cond });
    }
    m.clone()
        .try_inverse()
        .ok_or(Error::Singular { what, cond })
}

pub fn is_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// Row-major flattening, used by every CSV emitter.
pub fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

pub fn quad_form(m: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    v.dot(&(m * v))
}

/// One classical fourth-order Runge-Kutta step on a bundle of matrices.
pub fn rk4_step<F>(t: f64, h: f64, y: &[DMatrix<f64>], f: &F) -> Vec<DMatrix<f64>>
where
    F: Fn(f64, &[DMatrix<f64>]) -> Vec<DMatrix<f64>>,
{
    let shift = |base: &[DMatrix<f64>], k: &[DMatrix<f64>], s: f64| -> Vec<DMatrix<f64>> {
        base.iter().zip(k).map(|(b, k)| b + k * s).collect()
    };
    let k1 = f(t, y);
    let k2 = f(t + 0.5 * h, &shift(y, &k1, 0.5 * h));
    let k3 = f(t + 0.5 * h, &shift(y, &k2, 0.5 * h));
    let k4 = f(t + h, &shift(y, &k3, h));
    y.iter()
        .enumerate()
        .map(|(i, yi)| yi + (&k1[i] + &k2[i] * 2.0 + &k3[i] * 2.0 + &k4[i]) * (h / 6.0))
        .collect()
}

/// Uniform grid of `steps + 1` points on [0, 1].
pub fn unit_grid(steps: usize) -> Vec<f64> {
    (0..=steps).map(|k| k as f64 / steps as f64).collect()
}

/// Index `k` of the grid interval [t_k, t_{k+1}] containing `t` (clamped).
pub fn locate(grid: &[f64], t: f64) -> usize {
    let last = grid.len() - 2;
    match grid.binary_search_by(|g| g.partial_cmp(&t).unwrap()) {
        Ok(k) => k.min(last),
        Err(0) => 0,
        Err(k) => (k - 1).min(last),
    }
}
