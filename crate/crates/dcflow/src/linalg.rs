//! Small dense helpers for the low-dimensional matrices that show up in
//! density bookkeeping (spatial Hessians and forward-map Jacobians are d x d
//! with d typically 1..10). Row-major storage throughout.

use crate::error::{Error, Result};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

pub fn norm(a: &[f64]) -> f64 {
    norm_sq(a).sqrt()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Log-determinant of a symmetric positive-definite matrix via Cholesky.
///
/// On a failed pivot the factorization is retried once with `jitter` added to
/// the diagonal; a second failure reports the offending pivot.
pub fn spd_logdet(a: &[f64], d: usize, jitter: f64) -> Result<f64> {
    debug_assert_eq!(a.len(), d * d);
    match try_cholesky(a, d, 0.0) {
        Ok((_, v)) => Ok(v),
        Err(_) => try_cholesky(a, d, jitter).map(|(_, v)| v),
    }
}

/// Inverse and log-determinant of a symmetric positive-definite matrix from
/// one Cholesky factorization (jitter fallback as in [`spd_logdet`]).
pub fn spd_inverse_logdet(a: &[f64], d: usize, jitter: f64) -> Result<(Vec<f64>, f64)> {
    debug_assert_eq!(a.len(), d * d);
    let (l, logdet) = match try_cholesky(a, d, 0.0) {
        Ok(v) => v,
        Err(_) => try_cholesky(a, d, jitter)?,
    };
    // L^{-1} by forward substitution on the identity
    let mut linv = vec![0.0; d * d];
    for col in 0..d {
        linv[col * d + col] = 1.0 / l[col * d + col];
        for row in col + 1..d {
            let mut s = 0.0;
            for k in col..row {
                s -= l[row * d + k] * linv[k * d + col];
            }
            linv[row * d + col] = s / l[row * d + row];
        }
    }
    // A^{-1} = L^{-T} L^{-1}
    let mut inv = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut s = 0.0;
            for k in i.max(j)..d {
                s += linv[k * d + i] * linv[k * d + j];
            }
            inv[i * d + j] = s;
            inv[j * d + i] = s;
        }
    }
    Ok((inv, logdet))
}

fn try_cholesky(a: &[f64], d: usize, shift: f64) -> Result<(Vec<f64>, f64)> {
    let mut l = vec![0.0; d * d];
    let mut logdet = 0.0;
    for i in 0..d {
        for j in 0..=i {
            let mut s = a[i * d + j];
            if i == j {
                s += shift;
            }
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if !(s > 0.0) {
                    return Err(Error::NotPositiveDefinite { index: i, pivot: s });
                }
                let root = s.sqrt();
                l[i * d + i] = root;
                logdet += 2.0 * root.ln();
            } else {
                l[i * d + j] = s / l[j * d + j];
            }
        }
    }
    Ok((l, logdet))
}

/// `log |det A|` for a general square matrix via LU with partial pivoting.
/// Used for forward-map Jacobians, which may have negative determinant when a
/// gradient step folds space.
pub fn log_abs_det(a: &[f64], d: usize) -> Result<f64> {
    debug_assert_eq!(a.len(), d * d);
    let mut lu = a.to_vec();
    let mut log_abs = 0.0;
    for col in 0..d {
        let mut pivot_row = col;
        let mut pivot_val = lu[col * d + col].abs();
        for row in col + 1..d {
            let v = lu[row * d + col].abs();
            if v > pivot_val {
                pivot_val = v;
                pivot_row = row;
            }
        }
        if pivot_val == 0.0 || !pivot_val.is_finite() {
            return Err(Error::SingularJacobian);
        }
        if pivot_row != col {
            for k in 0..d {
                lu.swap(col * d + k, pivot_row * d + k);
            }
        }
        let pivot = lu[col * d + col];
        log_abs += pivot.abs().ln();
        for row in col + 1..d {
            let factor = lu[row * d + col] / pivot;
            lu[row * d + col] = factor;
            for k in col + 1..d {
                lu[row * d + k] -= factor * lu[col * d + k];
            }
        }
    }
    Ok(log_abs)
}

/// Mean and standard error of the mean.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
    (mean, (var / n as f64).sqrt())
}
