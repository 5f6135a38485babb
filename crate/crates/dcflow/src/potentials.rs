//! Difference-of-convex potentials F = G - H and the bundled target families.
//!
//! Every target is packaged as a [`DcPotential`]: evaluable component values,
//! a gradient for G, a Borel subgradient selector for H, and (where available)
//! component Hessians. The forward steps of the sampling schemes consume the
//! selector; the density bookkeeping consumes the Hessians.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{Kernel, KernelSpec};
use crate::linalg;
use crate::rng;
use crate::transport::EmpiricalMeasure;
use rand::Rng;

type ScalarFn = Box<dyn Fn(&[f64]) -> f64 + Send + Sync>;
/// Writes a length-d vector into the provided buffer.
type VectorFn = Box<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
/// Writes a row-major d x d matrix into the provided buffer.
type MatrixFn = Box<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// A potential F = G - H with both components convex.
pub struct DcPotential {
    dim: usize,
    g_value: ScalarFn,
    h_value: ScalarFn,
    g_grad: VectorFn,
    h_selector: VectorFn,
    g_hess: Option<MatrixFn>,
    h_hess: Option<MatrixFn>,
    lipschitz_h: Option<f64>,
    log_normalizer: Option<f64>,
}

impl std::fmt::Debug for DcPotential {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DcPotential")
            .field("dim", &self.dim)
            .field("has_g_hess", &self.g_hess.is_some())
            .field("has_h_hess", &self.h_hess.is_some())
            .field("lipschitz_h", &self.lipschitz_h)
            .field("log_normalizer", &self.log_normalizer)
            .finish()
    }
}

impl DcPotential {
    pub fn new(
        dim: usize,
        g_value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        h_value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        g_grad: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        h_selector: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        assert!(dim > 0, "potential dimension must be positive");
        Self {
            dim,
            g_value: Box::new(g_value),
            h_value: Box::new(h_value),
            g_grad: Box::new(g_grad),
            h_selector: Box::new(h_selector),
            g_hess: None,
            h_hess: None,
            lipschitz_h: None,
            log_normalizer: None,
        }
    }

    pub fn with_g_hess(mut self, f: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        self.g_hess = Some(Box::new(f));
        self
    }

    pub fn with_h_hess(mut self, f: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        self.h_hess = Some(Box::new(f));
        self
    }

    pub fn with_lipschitz_h(mut self, l: f64) -> Self {
        self.lipschitz_h = Some(l);
        self
    }

    pub fn with_log_normalizer(mut self, log_z: f64) -> Self {
        self.log_normalizer = Some(log_z);
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lipschitz_h(&self) -> Option<f64> {
        self.lipschitz_h
    }

    /// log Z of exp(-F), when known.
    pub fn log_normalizer(&self) -> Option<f64> {
        self.log_normalizer
    }

    pub fn g_value(&self, x: &[f64]) -> f64 {
        (self.g_value)(x)
    }

    pub fn h_value(&self, x: &[f64]) -> f64 {
        (self.h_value)(x)
    }

    pub fn f_value(&self, x: &[f64]) -> f64 {
        (self.g_value)(x) - (self.h_value)(x)
    }

    pub fn g_grad_into(&self, x: &[f64], out: &mut [f64]) {
        (self.g_grad)(x, out);
    }

    pub fn g_grad(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.g_grad_into(x, &mut out);
        out
    }

    pub fn h_selector_into(&self, x: &[f64], out: &mut [f64]) {
        (self.h_selector)(x, out);
    }

    pub fn h_selector(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.h_selector_into(x, &mut out);
        out
    }

    /// grad F = grad G - S; `scratch` must be length d.
    pub fn f_grad_into(&self, x: &[f64], out: &mut [f64], scratch: &mut [f64]) {
        (self.g_grad)(x, out);
        (self.h_selector)(x, scratch);
        for (o, s) in out.iter_mut().zip(scratch.iter()) {
            *o -= *s;
        }
    }

    pub fn f_grad(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        let mut scratch = vec![0.0; self.dim];
        self.f_grad_into(x, &mut out, &mut scratch);
        out
    }

    pub fn has_g_hess(&self) -> bool {
        self.g_hess.is_some()
    }

    pub fn has_h_hess(&self) -> bool {
        self.h_hess.is_some()
    }

    pub fn g_hess_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        match &self.g_hess {
            Some(f) => {
                f(x, out);
                Ok(())
            }
            None => Err(Error::InvalidParameter("G Hessian not available".into())),
        }
    }

    pub fn h_hess_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        match &self.h_hess {
            Some(f) => {
                f(x, out);
                Ok(())
            }
            None => Err(Error::InvalidParameter("H Hessian not available".into())),
        }
    }

    /// Hessian of F (a.e. where H is only twice differentiable off a null set).
    pub fn f_hess_into(&self, x: &[f64], out: &mut [f64], scratch: &mut [f64]) -> Result<()> {
        self.g_hess_into(x, out)?;
        self.h_hess_into(x, scratch)?;
        for (o, s) in out.iter_mut().zip(scratch.iter()) {
            *o -= *s;
        }
        Ok(())
    }

    pub fn g_hess(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim * self.dim];
        self.g_hess_into(x, &mut out)?;
        Ok(out)
    }

    pub fn h_hess(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim * self.dim];
        self.h_hess_into(x, &mut out)?;
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Convexity spot checks
// ---------------------------------------------------------------------------

/// Randomized convexity certificate: midpoint convexity plus, when a
/// subgradient selector is supplied, the subgradient inequality
/// `f(y) >= f(x) + <s(x), y - x>` on pairs drawn around `anchors`.
/// Deterministic for a fixed seed; returns the first violating pair.
pub fn convexity_spot_check(
    value: &dyn Fn(&[f64]) -> f64,
    subgrad: Option<&dyn Fn(&[f64]) -> Vec<f64>>,
    dim: usize,
    anchors: &[Vec<f64>],
    spread: f64,
    pairs: usize,
    seed: u64,
) -> Result<()> {
    let mut rng = rng::seeded(seed);
    let origin = vec![0.0; dim];
    let pick = |rng: &mut rand_chacha::ChaCha12Rng| -> Vec<f64> {
        let anchor = if anchors.is_empty() {
            &origin
        } else {
            &anchors[rng.random_range(0..anchors.len())]
        };
        let mut p = anchor.clone();
        for v in p.iter_mut() {
            let z: f64 = rng.sample(rand_distr::StandardNormal);
            *v += spread * z;
        }
        p
    };
    for _ in 0..pairs {
        let x = pick(&mut rng);
        let y = pick(&mut rng);
        let fx = value(&x);
        let fy = value(&y);
        let tol = 1e-9 * (1.0 + fx.abs() + fy.abs());
        let mid: Vec<f64> = x.iter().zip(&y).map(|(a, b)| 0.5 * (a + b)).collect();
        let fmid = value(&mid);
        if fmid > 0.5 * (fx + fy) + tol {
            return Err(Error::NotConvex(format!(
                "midpoint convexity violated: f(mid) = {fmid:.6e} > {:.6e}",
                0.5 * (fx + fy)
            )));
        }
        if let Some(s) = subgrad {
            let sx = s(&x);
            let affine = fx + sx.iter().zip(y.iter().zip(&x)).map(|(si, (yi, xi))| si * (yi - xi)).sum::<f64>();
            if fy < affine - tol {
                return Err(Error::NotConvex(format!(
                    "subgradient inequality violated: f(y) = {fy:.6e} < {affine:.6e}"
                )));
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Gaussian mixture target
// ---------------------------------------------------------------------------

/// Target density proportional to `sum_i pi_i exp(-||x - x_i||^2 / sigma^2)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixtureTarget {
    pub centers: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub sigma: f64,
}

impl GaussianMixtureTarget {
    pub fn new(centers: Vec<Vec<f64>>, weights: Vec<f64>, sigma: f64) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::InvalidParameter("mixture needs at least one center".into()));
        }
        let dim = centers[0].len();
        if dim == 0 || centers.iter().any(|c| c.len() != dim) {
            return Err(Error::InvalidParameter("mixture centers must share a positive dimension".into()));
        }
        if weights.len() != centers.len() {
            return Err(Error::SizeMismatch { left: weights.len(), right: centers.len() });
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidParameter("mixture weights must be nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "mixture weights must sum to 1, got {total}"
            )));
        }
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidParameter(format!("sigma must be positive, got {sigma}")));
        }
        Ok(Self { centers, weights, sigma })
    }

    /// Equal-weight convenience constructor.
    pub fn equal_weights(centers: Vec<Vec<f64>>, sigma: f64) -> Result<Self> {
        let k = centers.len().max(1);
        Self::new(centers, vec![1.0 / k as f64; k], sigma)
    }

    pub fn dim(&self) -> usize {
        self.centers[0].len()
    }

    /// log pi_i - (||x_i||^2 - 2 <x, x_i>) / sigma^2 for each component.
    fn component_exponents(&self, x: &[f64]) -> Vec<f64> {
        let s2 = self.sigma * self.sigma;
        self.centers
            .iter()
            .zip(&self.weights)
            .map(|(c, w)| w.ln() - (linalg::norm_sq(c) - 2.0 * linalg::dot(x, c)) / s2)
            .collect()
    }

    /// Softmax weights of the components inside the selector; they sum to 1.
    pub fn responsibilities(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.component_exponents(x))
    }

    /// log Z of exp(-F): `log sum_i pi_i (pi sigma^2)^{d/2}`.
    pub fn log_normalizer(&self) -> f64 {
        let d = self.dim() as f64;
        let total: f64 = self.weights.iter().sum();
        total.ln() + 0.5 * d * (std::f64::consts::PI * self.sigma * self.sigma).ln()
    }

    /// Normalized log-density, evaluated directly from the mixture form
    /// (independent of the DC split).
    pub fn log_density(&self, x: &[f64]) -> f64 {
        let s2 = self.sigma * self.sigma;
        let exps: Vec<f64> = self
            .centers
            .iter()
            .zip(&self.weights)
            .map(|(c, w)| w.ln() - linalg::dist_sq(x, c) / s2)
            .collect();
        log_sum_exp(&exps) - self.log_normalizer()
    }

    pub fn dc_potential(&self) -> DcPotential {
        let dim = self.dim();
        let s2 = self.sigma * self.sigma;
        let target = self.clone();
        let t_val = target.clone();
        let t_grad = target.clone();
        let t_hess = target.clone();

        // L_H from the selector being a softmax combination of b_i = 2 x_i / sigma^2:
        // the covariance of a vector supported on {b_i} is bounded by (diam/2)^2.
        let mut diam: f64 = 0.0;
        for (i, ci) in self.centers.iter().enumerate() {
            for cj in self.centers.iter().skip(i + 1) {
                diam = diam.max(linalg::dist_sq(ci, cj).sqrt() * 2.0 / s2);
            }
        }
        let lipschitz = (diam / 2.0) * (diam / 2.0);

        DcPotential::new(
            dim,
            move |x| linalg::norm_sq(x) / s2,
            move |x| log_sum_exp(&t_val.component_exponents(x)),
            move |x, out| {
                for (o, xi) in out.iter_mut().zip(x) {
                    *o = 2.0 * xi / s2;
                }
            },
            move |x, out| {
                let w = t_grad.responsibilities(x);
                out.fill(0.0);
                for (wi, c) in w.iter().zip(&t_grad.centers) {
                    for (o, cj) in out.iter_mut().zip(c) {
                        *o += wi * 2.0 * cj / s2;
                    }
                }
            },
        )
        .with_g_hess(move |_x, out| {
            out.fill(0.0);
            for i in 0..dim {
                out[i * dim + i] = 2.0 / s2;
            }
        })
        .with_h_hess(move |x, out| {
            // softmax covariance of b_i = 2 x_i / sigma^2
            let w = t_hess.responsibilities(x);
            let mut mean = vec![0.0; dim];
            for (wi, c) in w.iter().zip(&t_hess.centers) {
                for (m, cj) in mean.iter_mut().zip(c) {
                    *m += wi * 2.0 * cj / s2;
                }
            }
            out.fill(0.0);
            for (wi, c) in w.iter().zip(&t_hess.centers) {
                for a in 0..dim {
                    let ba = 2.0 * c[a] / s2;
                    for b in 0..dim {
                        let bb = 2.0 * c[b] / s2;
                        out[a * dim + b] += wi * ba * bb;
                    }
                }
            }
            for a in 0..dim {
                for b in 0..dim {
                    out[a * dim + b] -= mean[a] * mean[b];
                }
            }
        })
        .with_lipschitz_h(lipschitz)
        .with_log_normalizer(self.log_normalizer())
    }
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn softmax(values: &[f64]) -> Vec<f64> {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = values.iter().map(|v| (v - m).exp()).collect();
    let total: f64 = out.iter().sum();
    for v in out.iter_mut() {
        *v /= total;
    }
    out
}

// ---------------------------------------------------------------------------
// Distance-to-sphere relaxed von Mises-Fisher target
// ---------------------------------------------------------------------------

/// Gaussian factor around `center` times a distance-to-set penalty toward the
/// unit sphere of the same center:
/// `exp(-kappa ||t - mu||^2 / 2 - rho (||t - mu|| - 1)^2 / 2)`.
///
/// The penalty splits as DC with H proportional to a supremum of affine
/// functions over the sphere; H is convex but not differentiable at the
/// center, where the subgradient selector falls back to a fixed tie-break
/// direction (any measurable choice is admissible there).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelaxedVmfTarget {
    pub center: Vec<f64>,
    pub kappa: f64,
    pub rho: f64,
    pub tie_break_direction: Vec<f64>,
}

impl RelaxedVmfTarget {
    pub fn new(center: Vec<f64>, kappa: f64, rho: f64, tie_break: Option<Vec<f64>>) -> Result<Self> {
        let dim = center.len();
        if dim == 0 {
            return Err(Error::InvalidParameter("center must be non-empty".into()));
        }
        if !(kappa > 0.0) || !(rho > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "kappa and rho must be positive, got kappa = {kappa}, rho = {rho}"
            )));
        }
        let tie = match tie_break {
            Some(t) => {
                if t.len() != dim {
                    return Err(Error::DimensionMismatch { expected: dim, got: t.len() });
                }
                let n = linalg::norm(&t);
                if (n - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidParameter(format!(
                        "tie-break direction must be a unit vector, got norm {n}"
                    )));
                }
                t
            }
            None => {
                let mut t = vec![0.0; dim];
                t[0] = 1.0;
                t
            }
        };
        Ok(Self { center, kappa, rho, tie_break_direction: tie })
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    /// Radial projection onto the unit sphere around `center`; the tie-break
    /// direction resolves the singular point at the center itself.
    pub fn project_to_sphere(&self, theta: &[f64]) -> Vec<f64> {
        let diff = linalg::sub(theta, &self.center);
        let r = linalg::norm(&diff);
        if r < TIE_EPS {
            self.center
                .iter()
                .zip(&self.tie_break_direction)
                .map(|(c, t)| c + t)
                .collect()
        } else {
            self.center.iter().zip(&diff).map(|(c, d)| c + d / r).collect()
        }
    }

    pub fn f_value(&self, theta: &[f64]) -> f64 {
        let r = linalg::dist_sq(theta, &self.center).sqrt();
        0.5 * self.kappa * r * r + 0.5 * self.rho * (r - 1.0) * (r - 1.0)
    }

    pub fn log_normalizer(&self) -> f64 {
        vmf_log_normalizer(self.dim(), self.kappa, self.rho)
    }

    pub fn log_density(&self, theta: &[f64]) -> f64 {
        -self.f_value(theta) - self.log_normalizer()
    }

    pub fn dc_potential(&self) -> DcPotential {
        let dim = self.dim();
        let kappa = self.kappa;
        let rho = self.rho;
        let c_g = self.center.clone();
        let c_gg = self.center.clone();
        let c_h = self.center.clone();
        let c_s = self.center.clone();
        let c_hh = self.center.clone();
        let tie = self.tie_break_direction.clone();
        let curv = kappa + rho;
        DcPotential::new(
            dim,
            move |x| 0.5 * curv * linalg::dist_sq(x, &c_g),
            move |x| rho * linalg::dist_sq(x, &c_h).sqrt() - 0.5 * rho,
            move |x, out| {
                for ((o, xi), ci) in out.iter_mut().zip(x).zip(&c_gg) {
                    *o = curv * (xi - ci);
                }
            },
            move |x, out| {
                let r = linalg::dist_sq(x, &c_s).sqrt();
                if r < TIE_EPS {
                    for (o, t) in out.iter_mut().zip(&tie) {
                        *o = rho * t;
                    }
                } else {
                    for ((o, xi), ci) in out.iter_mut().zip(x).zip(&c_s) {
                        *o = rho * (xi - ci) / r;
                    }
                }
            },
        )
        .with_g_hess(move |_x, out| {
            out.fill(0.0);
            for i in 0..dim {
                out[i * dim + i] = curv;
            }
        })
        .with_h_hess(move |x, out| {
            // a.e. Hessian rho (I - u u^T) / r; the singular point at the
            // center (a null set) contributes zero curvature by convention.
            let diff = linalg::sub(x, &c_hh);
            let r = linalg::norm(&diff);
            out.fill(0.0);
            if r < TIE_EPS {
                return;
            }
            for a in 0..dim {
                for b in 0..dim {
                    let id = if a == b { 1.0 } else { 0.0 };
                    out[a * dim + b] = rho / r * (id - diff[a] * diff[b] / (r * r));
                }
            }
        })
        .with_log_normalizer(self.log_normalizer())
    }
}

const TIE_EPS: f64 = 1e-14;

/// log of the sphere surface area 2 pi^{d/2} / Gamma(d/2).
fn ln_sphere_area(dim: usize) -> f64 {
    let d = dim as f64;
    std::f64::consts::LN_2 + 0.5 * d * std::f64::consts::PI.ln() - ln_gamma_half(dim)
}

/// ln Gamma(n / 2) for positive integer n, via the recurrence from
/// Gamma(1) = 1 and Gamma(1/2) = sqrt(pi).
fn ln_gamma_half(n: usize) -> f64 {
    let mut acc;
    let mut k;
    if n % 2 == 0 {
        acc = 0.0; // ln Gamma(1)
        k = 1.0;
    } else {
        acc = 0.5 * std::f64::consts::PI.ln(); // ln Gamma(1/2)
        k = 0.5;
    }
    while k < n as f64 / 2.0 - 0.25 {
        acc += k.ln();
        k += 1.0;
    }
    acc
}

/// log integral of exp(-kappa r^2/2 - rho (r-1)^2/2) over R^d, by composite
/// Simpson quadrature of the radial profile.
fn vmf_log_normalizer(dim: usize, kappa: f64, rho: f64) -> f64 {
    let width = 1.0 / (kappa + rho).sqrt();
    let r_max = (1.0 + 14.0 * width).max((160.0 / kappa).sqrt() + 1.0).max(4.0);
    let n = 1usize << 16;
    let h = r_max / n as f64;
    let d = dim as f64;
    let exponent = |r: f64| -> f64 {
        if r <= 0.0 {
            if dim == 1 {
                -0.5 * rho
            } else {
                f64::NEG_INFINITY
            }
        } else {
            (d - 1.0) * r.ln() - 0.5 * kappa * r * r - 0.5 * rho * (r - 1.0) * (r - 1.0)
        }
    };
    let mut exps = Vec::with_capacity(n + 1);
    let mut peak = f64::NEG_INFINITY;
    for i in 0..=n {
        let e = exponent(i as f64 * h);
        peak = peak.max(e);
        exps.push(e);
    }
    let mut sum = 0.0;
    for (i, e) in exps.iter().enumerate() {
        let w = if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        sum += w * (e - peak).exp();
    }
    let log_radial = peak + (h / 3.0 * sum).ln();
    // d = 1 integrates over the two half-lines
    if dim == 1 {
        std::f64::consts::LN_2 + log_radial
    } else {
        ln_sphere_area(dim) + log_radial
    }
}

/// Free-function spelling of [`GaussianMixtureTarget::dc_potential`].
pub fn gaussian_mixture_dc(target: &GaussianMixtureTarget) -> DcPotential {
    target.dc_potential()
}

/// Free-function spelling of [`RelaxedVmfTarget::dc_potential`].
pub fn relaxed_vmf_dc(target: &RelaxedVmfTarget) -> DcPotential {
    target.dc_potential()
}

// ---------------------------------------------------------------------------
// Generic smooth splitting and the MMD potential
// ---------------------------------------------------------------------------

/// DC split of an L-smooth function: G = alpha ||x||^2, H = alpha ||x||^2 - F.
/// Requires alpha >= L/2; an alpha that is too small shows up as a failed
/// convexity spot check on H.
pub fn smooth_dc_split(
    dim: usize,
    f_value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    f_grad: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    alpha: f64,
) -> Result<DcPotential> {
    if dim == 0 {
        return Err(Error::InvalidParameter("dimension must be positive".into()));
    }
    if !(alpha > 0.0) {
        return Err(Error::InvalidParameter(format!("alpha must be positive, got {alpha}")));
    }
    let f_value = Arc::new(f_value);
    let f_grad = Arc::new(f_grad);

    let h_value = {
        let f_value = Arc::clone(&f_value);
        move |x: &[f64]| alpha * linalg::norm_sq(x) - f_value(x)
    };
    let h_subgrad = {
        let f_grad = Arc::clone(&f_grad);
        move |x: &[f64]| -> Vec<f64> {
            let g = f_grad(x);
            x.iter().zip(g).map(|(xi, gi)| 2.0 * alpha * xi - gi).collect()
        }
    };
    convexity_spot_check(&h_value, Some(&h_subgrad), dim, &[], 2.0, 256, CHECK_SEED)?;

    let hv = h_value.clone();
    let hs = h_subgrad.clone();
    Ok(DcPotential::new(
        dim,
        move |x| alpha * linalg::norm_sq(x),
        move |x| hv(x),
        move |x, out| {
            for (o, xi) in out.iter_mut().zip(x) {
                *o = 2.0 * alpha * xi;
            }
        },
        move |x, out| {
            out.copy_from_slice(&hs(x));
        },
    )
    .with_g_hess(move |_x, out| {
        out.fill(0.0);
        for i in 0..dim {
            out[i * dim + i] = 2.0 * alpha;
        }
    }))
}

const CHECK_SEED: u64 = 0x5eed_c0de;

/// Concave potential driving a flow toward an MMD target:
/// `F(x) = -2 [alpha ||x||^2 + mean_y k(x, y)]`, so G = 0 and
/// `H(x) = 2 alpha ||x||^2 + 2 mean_y k(x, y)` with Monte Carlo means over
/// the target samples. Requires the kernel gradient to be alpha-Lipschitz.
pub fn mmd_dc_potential(
    kernel: &Kernel,
    target_samples: &EmpiricalMeasure,
    alpha: f64,
) -> Result<DcPotential> {
    let dim = target_samples.dim();
    if !(alpha >= 0.0) {
        return Err(Error::InvalidParameter(format!("alpha must be nonnegative, got {alpha}")));
    }
    let samples: Vec<Vec<f64>> = target_samples.iter_points().map(|p| p.to_vec()).collect();
    let n = samples.len() as f64;

    let h_value = {
        let kernel = kernel.clone();
        let samples = samples.clone();
        move |x: &[f64]| -> f64 {
            let mean: f64 = samples.iter().map(|y| kernel.value(x, y)).sum::<f64>() / n;
            2.0 * alpha * linalg::norm_sq(x) + 2.0 * mean
        }
    };
    let h_subgrad = {
        let kernel = kernel.clone();
        let samples = samples.clone();
        move |x: &[f64]| -> Vec<f64> {
            let mut out: Vec<f64> = x.iter().map(|xi| 4.0 * alpha * xi).collect();
            for y in &samples {
                let g = kernel.grad_x(x, y);
                for (o, gi) in out.iter_mut().zip(g) {
                    *o += 2.0 * gi / n;
                }
            }
            out
        }
    };
    convexity_spot_check(&h_value, Some(&h_subgrad), dim, &samples, 2.0, 256, CHECK_SEED)?;

    let hv = h_value.clone();
    let hs = h_subgrad.clone();
    Ok(DcPotential::new(
        dim,
        move |_x| 0.0,
        move |x| hv(x),
        move |_x, out| out.fill(0.0),
        move |x, out| out.copy_from_slice(&hs(x)),
    )
    .with_g_hess(move |_x, out| out.fill(0.0)))
}

// ---------------------------------------------------------------------------
// Config-level target specification
// ---------------------------------------------------------------------------

/// Named smooth functions available to `smooth_dc` experiment configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SmoothFunction {
    /// F(x) = cos(x), one-dimensional.
    Cosine,
    /// F(x) = curvature * ||x||^2 / 2.
    IsotropicQuadratic { curvature: f64 },
}

/// Target families constructible by name from an experiment config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum TargetSpec {
    GaussianMixture {
        centers: Vec<Vec<f64>>,
        weights: Vec<f64>,
        sigma: f64,
    },
    RelaxedVmf {
        center: Vec<f64>,
        kappa: f64,
        rho: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tie_break_direction: Option<Vec<f64>>,
    },
    SmoothDc {
        dim: usize,
        function: SmoothFunction,
        alpha: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        log_normalizer: Option<f64>,
    },
    Mmd {
        kernel: KernelSpec,
        samples: Vec<Vec<f64>>,
        alpha: f64,
    },
}

impl TargetSpec {
    pub fn dim(&self) -> Result<usize> {
        match self {
            TargetSpec::GaussianMixture { centers, .. } => {
                Ok(centers.first().map(|c| c.len()).unwrap_or(0))
            }
            TargetSpec::RelaxedVmf { center, .. } => Ok(center.len()),
            TargetSpec::SmoothDc { dim, .. } => Ok(*dim),
            TargetSpec::Mmd { samples, .. } => Ok(samples.first().map(|s| s.len()).unwrap_or(0)),
        }
    }

    pub fn build(&self) -> Result<DcPotential> {
        match self {
            TargetSpec::GaussianMixture { centers, weights, sigma } => {
                Ok(GaussianMixtureTarget::new(centers.clone(), weights.clone(), *sigma)?.dc_potential())
            }
            TargetSpec::RelaxedVmf { center, kappa, rho, tie_break_direction } => {
                Ok(RelaxedVmfTarget::new(center.clone(), *kappa, *rho, tie_break_direction.clone())?
                    .dc_potential())
            }
            TargetSpec::SmoothDc { dim, function, alpha, log_normalizer } => {
                let dim = *dim;
                let pot = match function {
                    SmoothFunction::Cosine => {
                        if dim != 1 {
                            return Err(Error::InvalidParameter(
                                "cosine smooth_dc target is one-dimensional".into(),
                            ));
                        }
                        smooth_dc_split(1, |x| x[0].cos(), |x| vec![-x[0].sin()], *alpha)?
                    }
                    SmoothFunction::IsotropicQuadratic { curvature } => {
                        let c = *curvature;
                        if !(c >= 0.0) {
                            return Err(Error::InvalidParameter("curvature must be nonnegative".into()));
                        }
                        smooth_dc_split(
                            dim,
                            move |x| 0.5 * c * linalg::norm_sq(x),
                            move |x| x.iter().map(|xi| c * xi).collect(),
                            *alpha,
                        )?
                    }
                };
                Ok(match log_normalizer {
                    Some(z) => pot.with_log_normalizer(*z),
                    None => pot,
                })
            }
            TargetSpec::Mmd { kernel, samples, alpha } => {
                let kernel = kernel.build()?;
                let measure = EmpiricalMeasure::from_rows(samples)?;
                mmd_dc_potential(&kernel, &measure, *alpha)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fd;
    use approx::assert_relative_eq;

    fn probe_points(dim: usize, n: usize, seed: u64, scale: f64) -> Vec<Vec<f64>> {
        let mut rng = rng::seeded(seed);
        (0..n)
            .map(|_| {
                (0..dim)
                    .map(|_| {
                        let z: f64 = rng.sample(rand_distr::StandardNormal);
                        scale * z
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn single_zero_component_makes_h_constant() {
        let target = GaussianMixtureTarget::new(vec![vec![0.0, 0.0]], vec![1.0], 1.0).unwrap();
        let pot = target.dc_potential();
        for x in probe_points(2, 8, 1, 2.0) {
            assert_relative_eq!(pot.f_value(&x), linalg::norm_sq(&x), epsilon = 1e-12);
            assert!(linalg::norm(&pot.h_selector(&x)) < 1e-14);
        }
    }

    #[test]
    fn single_offset_component_closed_form() {
        let target = GaussianMixtureTarget::new(vec![vec![1.0, 0.0]], vec![1.0], 1.0).unwrap();
        let pot = target.dc_potential();
        let x = [0.0, 0.0];
        assert_relative_eq!(pot.f_value(&x), 1.0, epsilon = 1e-12);
        let sel = pot.h_selector(&x);
        assert_relative_eq!(sel[0], 2.0, epsilon = 1e-12);
        assert_relative_eq!(sel[1], 0.0, epsilon = 1e-12);
        // cross-check against finite differences of h_value
        let numeric = fd::grad_central(|p| pot.h_value(p), &x, 1e-6);
        assert!(fd::max_rel_err(&sel, &numeric) < 1e-8);
    }

    #[test]
    fn symmetric_two_component_selector_vanishes_on_axis() {
        let target = GaussianMixtureTarget::equal_weights(vec![vec![1.0, 0.0], vec![-1.0, 0.0]], 1.0).unwrap();
        let pot = target.dc_potential();
        for t in [-1.5, 0.0, 2.0] {
            let x = [0.0, t];
            let sel = pot.h_selector(&x);
            assert!(sel[0].abs() < 1e-12, "selector x-component {} at t = {t}", sel[0]);
            let numeric = fd::grad_central(|p| pot.h_value(p), &x, 1e-6);
            assert!(fd::max_rel_err(&sel, &numeric) < 1e-7);
        }
    }

    #[test]
    fn mixture_hessians_match_finite_differences() {
        let target = GaussianMixtureTarget::equal_weights(
            vec![vec![1.0, 0.5], vec![-0.5, 1.0], vec![0.0, -1.0]],
            0.9,
        )
        .unwrap();
        let pot = target.dc_potential();
        for x in probe_points(2, 5, 2, 1.5) {
            let hh = pot.h_hess(&x).unwrap();
            let numeric = fd::hessian_central(|p| pot.h_value(p), &x, 1e-4);
            assert!(fd::max_rel_err(&hh, &numeric) < 1e-4, "h_hess mismatch at {x:?}");
            let gh = pot.g_hess(&x).unwrap();
            let numeric_g = fd::hessian_central(|p| pot.g_value(p), &x, 1e-4);
            assert!(fd::max_rel_err(&gh, &numeric_g) < 1e-4);
        }
    }

    #[test]
    fn mixture_value_difference_matches_direct_density() {
        let target = GaussianMixtureTarget::equal_weights(vec![vec![2.0, 0.0], vec![0.0, -1.0]], 1.2).unwrap();
        let pot = target.dc_potential();
        let pts = probe_points(2, 10, 3, 2.5);
        for pair in pts.chunks_exact(2) {
            let (x1, x2) = (&pair[0], &pair[1]);
            let df = pot.f_value(x1) - pot.f_value(x2);
            let dlog = target.log_density(x2) - target.log_density(x1);
            assert!((df - dlog).abs() < 1e-10, "df = {df}, dlog = {dlog}");
        }
    }

    #[test]
    fn mixture_responsibilities_form_simplex() {
        let target = GaussianMixtureTarget::equal_weights(vec![vec![3.0, 0.0], vec![-3.0, 0.0]], 0.5).unwrap();
        for x in probe_points(2, 10, 4, 4.0) {
            let w = target.responsibilities(&x);
            assert!(w.iter().all(|wi| *wi >= 0.0));
            assert_relative_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn mixture_rejects_invalid_construction() {
        assert!(GaussianMixtureTarget::new(vec![], vec![], 1.0).is_err());
        assert!(GaussianMixtureTarget::new(vec![vec![0.0]], vec![0.7], 1.0).is_err());
        assert!(GaussianMixtureTarget::new(vec![vec![0.0]], vec![1.0], 0.0).is_err());
    }

    #[test]
    fn vmf_h_value_closed_form() {
        let target = RelaxedVmfTarget::new(vec![0.0, 0.0], 1.0, 100.0, None).unwrap();
        let pot = target.dc_potential();
        // sup over the unit circle gives (rho/2) (2 ||theta|| - 1)
        assert_relative_eq!(pot.h_value(&[2.0, 0.0]), 150.0, epsilon = 1e-10);
    }

    #[test]
    fn vmf_projection_and_tie_break() {
        let target = RelaxedVmfTarget::new(vec![0.0, 0.0], 1.0, 100.0, None).unwrap();
        let p = target.project_to_sphere(&[3.0, 4.0]);
        assert_relative_eq!(p[0], 0.6, epsilon = 1e-12);
        assert_relative_eq!(p[1], 0.8, epsilon = 1e-12);
        let pot = target.dc_potential();
        let sel = pot.h_selector(&[0.0, 0.0]);
        assert_relative_eq!(sel[0], 100.0, epsilon = 1e-12);
        assert_relative_eq!(sel[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn vmf_selector_norm_is_rho_everywhere() {
        let target = RelaxedVmfTarget::new(vec![1.0, 1.5], 1.0, 100.0, None).unwrap();
        let pot = target.dc_potential();
        for x in probe_points(2, 20, 5, 3.0) {
            let sel = pot.h_selector(&x);
            assert_relative_eq!(linalg::norm(&sel), 100.0, epsilon = 1e-9);
        }
        let sel0 = pot.h_selector(&[1.0, 1.5]);
        assert_relative_eq!(linalg::norm(&sel0), 100.0, epsilon = 1e-12);
    }

    #[test]
    fn vmf_components_match_finite_differences() {
        let target = RelaxedVmfTarget::new(vec![1.0, 1.5], 1.0, 100.0, None).unwrap();
        let pot = target.dc_potential();
        for x in probe_points(2, 6, 6, 2.0) {
            if linalg::dist_sq(&x, &target.center).sqrt() < 0.2 {
                continue; // keep probes away from the nonsmooth point
            }
            let sel = pot.h_selector(&x);
            let numeric = fd::grad_central(|p| pot.h_value(p), &x, 1e-6);
            assert!(fd::max_rel_err(&sel, &numeric) < 1e-6);
            let hh = pot.h_hess(&x).unwrap();
            let numeric_h = fd::hessian_central(|p| pot.h_value(p), &x, 1e-4);
            assert!(fd::max_rel_err(&hh, &numeric_h) < 2e-4);
        }
    }

    #[test]
    fn vmf_value_difference_matches_density_ratio() {
        let target = RelaxedVmfTarget::new(vec![1.0, 1.5], 1.0, 100.0, None).unwrap();
        let pot = target.dc_potential();
        let pts = probe_points(2, 10, 7, 2.0);
        for pair in pts.chunks_exact(2) {
            let (x1, x2) = (&pair[0], &pair[1]);
            let df = pot.f_value(x1) - pot.f_value(x2);
            let dlog = target.log_density(x2) - target.log_density(x1);
            assert!((df - dlog).abs() < 1e-10);
        }
    }

    #[test]
    fn vmf_normalizer_matches_naive_quadrature_in_1d() {
        // d = 1: integral over the real line, integrable by brute force
        let target = RelaxedVmfTarget::new(vec![0.5], 2.0, 30.0, None).unwrap();
        let log_z = target.log_normalizer();
        let mut acc = 0.0;
        let n = 400_000;
        let (a, b) = (-9.0, 10.0);
        let h = (b - a) / n as f64;
        for i in 0..=n {
            let x = a + i as f64 * h;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            acc += w * (-target.f_value(&[x])).exp();
        }
        let direct = (acc * h).ln();
        assert!((log_z - direct).abs() < 1e-8, "log_z = {log_z}, direct = {direct}");
    }

    #[test]
    fn smooth_split_reconstructs_f() {
        let pot = smooth_dc_split(1, |x| x[0].cos(), |x| vec![-x[0].sin()], 0.5).unwrap();
        for x in probe_points(1, 10, 8, 2.0) {
            assert_relative_eq!(pot.f_value(&x), x[0].cos(), epsilon = 1e-12);
        }
    }

    #[test]
    fn smooth_split_flags_small_alpha() {
        let err = smooth_dc_split(1, |x| x[0].cos(), |x| vec![-x[0].sin()], 0.1);
        assert!(matches!(err, Err(Error::NotConvex(_))), "alpha below L/2 must be flagged");
    }

    #[test]
    fn quadratic_split_with_alpha_one_is_exact() {
        let pot = smooth_dc_split(2, |x| linalg::norm_sq(x), |x| x.iter().map(|v| 2.0 * v).collect(), 1.0)
            .unwrap();
        for x in probe_points(2, 6, 9, 2.0) {
            assert_relative_eq!(pot.f_value(&x), linalg::norm_sq(&x), epsilon = 1e-12);
        }
    }

    #[test]
    fn mmd_potential_selector_matches_finite_differences() {
        let kernel = Kernel::gaussian(1.0);
        let samples = EmpiricalMeasure::from_rows(&probe_points(2, 6, 10, 1.0)).unwrap();
        let pot = mmd_dc_potential(&kernel, &samples, 1.0).unwrap();
        for x in probe_points(2, 5, 11, 1.5) {
            let sel = pot.h_selector(&x);
            let numeric = fd::grad_central(|p| pot.h_value(p), &x, 1e-6);
            assert!(fd::max_rel_err(&sel, &numeric) < 1e-4);
        }
    }

    #[test]
    fn mmd_selector_at_symmetric_point_is_zero() {
        let kernel = Kernel::gaussian(1.0);
        let samples = EmpiricalMeasure::new(2, vec![0.0, 0.0]).unwrap();
        let pot = mmd_dc_potential(&kernel, &samples, 1.0).unwrap();
        let sel = pot.h_selector(&[0.0, 0.0]);
        assert!(linalg::norm(&sel) < 1e-14);
    }

    #[test]
    fn mmd_with_zero_alpha_is_flagged_nonconvex() {
        let kernel = Kernel::gaussian(1.0);
        let samples = EmpiricalMeasure::from_rows(&probe_points(2, 4, 12, 1.0)).unwrap();
        assert!(matches!(
            mmd_dc_potential(&kernel, &samples, 0.0),
            Err(Error::NotConvex(_))
        ));
    }

    #[test]
    fn component_convexity_spot_checks_pass_for_bundled_targets() {
        let mixture = GaussianMixtureTarget::equal_weights(vec![vec![1.0, 0.0], vec![-1.0, 2.0]], 1.0)
            .unwrap()
            .dc_potential();
        let g = |x: &[f64]| mixture.g_value(x);
        let h = |x: &[f64]| mixture.h_value(x);
        let hs = |x: &[f64]| mixture.h_selector(x);
        convexity_spot_check(&g, None, 2, &[], 2.0, 128, 13).unwrap();
        convexity_spot_check(&h, Some(&hs), 2, &[], 2.0, 128, 13).unwrap();

        let vmf = RelaxedVmfTarget::new(vec![1.0, 1.5], 1.0, 100.0, None).unwrap().dc_potential();
        let gv = |x: &[f64]| vmf.g_value(x);
        let hv = |x: &[f64]| vmf.h_value(x);
        let hvs = |x: &[f64]| vmf.h_selector(x);
        convexity_spot_check(&gv, None, 2, &[], 2.0, 128, 14).unwrap();
        convexity_spot_check(&hv, Some(&hvs), 2, &[], 2.0, 128, 14).unwrap();
    }

    #[test]
    fn target_spec_round_trips_and_builds() {
        let spec = TargetSpec::GaussianMixture {
            centers: vec![vec![1.0, 0.0]],
            weights: vec![1.0],
            sigma: 1.0,
        };
        let json = serde_json::to_string(&spec).unwrap();
        let back: TargetSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(spec, back);
        let pot = back.build().unwrap();
        assert_eq!(pot.dim(), 2);
        assert!(pot.log_normalizer().is_some());

        let bad = TargetSpec::GaussianMixture {
            centers: vec![vec![1.0, 0.0]],
            weights: vec![0.5],
            sigma: 1.0,
        };
        assert!(bad.build().is_err());
    }
}
