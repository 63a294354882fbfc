//! Small dense kernels on row-major slices.
//!
//! The particle loops evaluate a Cholesky factor at every grid point of every
//! particle, so these routines work in caller-owned buffers and never allocate.
//! Everything off the hot path uses `nalgebra`.

use std::f64::consts::PI;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// In-place lower Cholesky factor of the `n×n` row-major matrix `a`.
///
/// Only the lower triangle is read; the strict upper triangle is zeroed.
/// Returns `false` when `a` is not numerically positive definite.
pub fn cholesky_in_place(a: &mut [f64], n: usize) -> bool {
    debug_assert_eq!(a.len(), n * n);
    for j in 0..n {
        let mut diag = a[j * n + j];
        for k in 0..j {
            diag -= a[j * n + k] * a[j * n + k];
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return false;
        }
        let ljj = diag.sqrt();
        a[j * n + j] = ljj;
        for i in (j + 1)..n {
            let mut v = a[i * n + j];
            for k in 0..j {
                v -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = v / ljj;
        }
        for k in (j + 1)..n {
            a[j * n + k] = 0.0;
        }
    }
    true
}

/// Solves `L z = b` in place for lower-triangular `l`.
pub fn forward_substitute(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let mut v = b[i];
        for k in 0..i {
            v -= l[i * n + k] * b[k];
        }
        b[i] = v / l[i * n + i];
    }
}

/// Solves `Lᵀ z = b` in place for lower-triangular `l`.
pub fn backward_substitute(l: &[f64], n: usize, b: &mut [f64]) {
    for i in (0..n).rev() {
        let mut v = b[i];
        for k in (i + 1)..n {
            v -= l[k * n + i] * b[k];
        }
        b[i] = v / l[i * n + i];
    }
}

/// Solves `(L Lᵀ) z = b` in place.
pub fn cholesky_solve(l: &[f64], n: usize, b: &mut [f64]) {
    forward_substitute(l, n, b);
    backward_substitute(l, n, b);
}

/// `log det(L Lᵀ)`.
pub fn cholesky_logdet(l: &[f64], n: usize) -> f64 {
    (0..n).map(|i| l[i * n + i].ln()).sum::<f64>() * 2.0
}

/// Solves `A z = b` in place by Gaussian elimination with partial pivoting.
/// `a` is destroyed. Returns `false` for a numerically singular `A`.
pub fn lu_solve_in_place(a: &mut [f64], n: usize, b: &mut [f64]) -> bool {
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(scale > 0.0) || !scale.is_finite() {
        return false;
    }
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
            .unwrap();
        if a[pivot * n + col].abs() <= 1e-14 * scale {
            return false;
        }
        if pivot != col {
            for k in 0..n {
                a.swap(pivot * n + k, col * n + k);
            }
            b.swap(pivot, col);
        }
        let p = a[col * n + col];
        for row in (col + 1)..n {
            let f = a[row * n + col] / p;
            if f != 0.0 {
                for k in col..n {
                    a[row * n + k] -= f * a[col * n + k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    for row in (0..n).rev() {
        let mut v = b[row];
        for k in (row + 1)..n {
            v -= a[row * n + k] * b[k];
        }
        b[row] = v / a[row * n + row];
    }
    true
}

/// `out = σ σᵀ` for a row-major `d×dw` matrix `sigma`.
pub fn outer_self(sigma: &[f64], d: usize, dw: usize, out: &mut [f64]) {
    for i in 0..d {
        for j in 0..=i {
            let mut v = 0.0;
            for k in 0..dw {
                v += sigma[i * dw + k] * sigma[j * dw + k];
            }
            out[i * d + j] = v;
            out[j * d + i] = v;
        }
    }
}

/// `out = A x` for row-major `rows×cols` matrix `a`.
pub fn mat_vec(a: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    for i in 0..rows {
        let row = &a[i * cols..(i + 1) * cols];
        out[i] = row.iter().zip(x).map(|(r, v)| r * v).sum();
    }
}

/// `out = Aᵀ x` for row-major `rows×cols` matrix `a`.
pub fn mat_t_vec(a: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    out[..cols].iter_mut().for_each(|o| *o = 0.0);
    for i in 0..rows {
        let xi = x[i];
        for j in 0..cols {
            out[j] += a[i * cols + j] * xi;
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Squared Mahalanobis norm `rᵀ (L Lᵀ)⁻¹ r`, using `work` as scratch.
pub fn mahalanobis_sq(l: &[f64], n: usize, r: &[f64], work: &mut [f64]) -> f64 {
    work[..n].copy_from_slice(&r[..n]);
    forward_substitute(l, n, &mut work[..n]);
    work[..n].iter().map(|v| v * v).sum()
}

/// Gaussian log-density of residual `r` with covariance `scale · L Lᵀ`.
pub fn gaussian_logpdf_chol(l: &[f64], n: usize, scale: f64, r: &[f64], work: &mut [f64]) -> f64 {
    let q = mahalanobis_sq(l, n, r, work) / scale;
    -0.5 * (q + cholesky_logdet(l, n) + n as f64 * (scale.ln() + LN_2PI))
}

/// Scalar normal log-density.
pub fn normal_logpdf(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * ((x - mean) * (x - mean) / var + (2.0 * PI * var).ln())
}

pub(crate) const LOG_2PI: f64 = LN_2PI;

/// Numerically stable `log Σ exp(v)`; `-inf` when every entry is `-inf`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max.is_nan() {
        return f64::NAN;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}
