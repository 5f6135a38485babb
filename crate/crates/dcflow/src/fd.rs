//! Central finite differences, used as the independent oracle when validating
//! analytic gradients, Hessians, and parameter gradients. Nothing in the
//! library's own derivative paths calls into this module.

/// Central-difference gradient of a scalar function.
pub fn grad_central(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        xp[i] = x[i] + h;
        let fp = f(&xp);
        xp[i] = x[i] - h;
        let fm = f(&xp);
        xp[i] = x[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

/// Central-difference Jacobian (row-major, `f(x).len()` rows) of a vector map.
pub fn jacobian_central(f: impl Fn(&[f64]) -> Vec<f64>, x: &[f64], h: f64) -> Vec<f64> {
    let d = x.len();
    let m = f(x).len();
    let mut jac = vec![0.0; m * d];
    let mut xp = x.to_vec();
    for j in 0..d {
        xp[j] = x[j] + h;
        let fp = f(&xp);
        xp[j] = x[j] - h;
        let fm = f(&xp);
        xp[j] = x[j];
        for i in 0..m {
            jac[i * d + j] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    jac
}

/// Central-difference Hessian of a scalar function (row-major, symmetric).
pub fn hessian_central(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let d = x.len();
    let mut hess = vec![0.0; d * d];
    let mut xp = x.to_vec();
    for i in 0..d {
        for j in 0..=i {
            let v = if i == j {
                let f0 = f(x);
                xp[i] = x[i] + h;
                let fp = f(&xp);
                xp[i] = x[i] - h;
                let fm = f(&xp);
                xp[i] = x[i];
                (fp - 2.0 * f0 + fm) / (h * h)
            } else {
                xp[i] = x[i] + h;
                xp[j] = x[j] + h;
                let fpp = f(&xp);
                xp[j] = x[j] - h;
                let fpm = f(&xp);
                xp[i] = x[i] - h;
                xp[j] = x[j] + h;
                let fmp = f(&xp);
                xp[j] = x[j] - h;
                let fmm = f(&xp);
                xp[i] = x[i];
                xp[j] = x[j];
                (fpp - fpm - fmp + fmm) / (4.0 * h * h)
            };
            hess[i * d + j] = v;
            hess[j * d + i] = v;
        }
    }
    hess
}

/// Relative error with a unit floor: `|a - b| / max(1, |a|, |b|)`.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1.0_f64.max(a.abs()).max(b.abs())
}

/// Worst entrywise [`rel_err`] between two equally long slices.
pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| rel_err(x, y))
        .fold(0.0, f64::max)
}
