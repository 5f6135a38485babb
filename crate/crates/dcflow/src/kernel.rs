//! Symmetric kernels with gradients, shared by the MMD potential, the
//! interaction-energy regularizer, and the two-sample estimator.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

type KernelValueFn = dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync;
type KernelGradFn = dyn Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync;

/// A symmetric kernel k(x, y) with its gradient in the first argument.
#[derive(Clone)]
pub struct Kernel {
    value: Arc<KernelValueFn>,
    grad_x: Arc<KernelGradFn>,
}

impl Kernel {
    pub fn new(
        value: impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
        grad_x: impl Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            value: Arc::new(value),
            grad_x: Arc::new(grad_x),
        }
    }

    /// Gaussian kernel `exp(-||x-y||^2 / (2 bandwidth^2))`.
    pub fn gaussian(bandwidth: f64) -> Self {
        let b2 = bandwidth * bandwidth;
        Self::new(
            move |x, y| (-linalg::dist_sq(x, y) / (2.0 * b2)).exp(),
            move |x, y| {
                let k = (-linalg::dist_sq(x, y) / (2.0 * b2)).exp();
                x.iter().zip(y).map(|(xi, yi)| -(xi - yi) / b2 * k).collect()
            },
        )
    }

    /// Constant kernel; useful for exercising cancellation in estimators.
    pub fn constant(c: f64) -> Self {
        Self::new(move |_, _| c, move |x, _| vec![0.0; x.len()])
    }

    pub fn value(&self, x: &[f64], y: &[f64]) -> f64 {
        (self.value)(x, y)
    }

    pub fn grad_x(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        (self.grad_x)(x, y)
    }
}

impl std::fmt::Debug for Kernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("Kernel {..}")
    }
}

/// Config-constructible kernel families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelSpec {
    Gaussian { bandwidth: f64 },
    Constant { value: f64 },
}

impl KernelSpec {
    pub fn build(&self) -> Result<Kernel> {
        match self {
            KernelSpec::Gaussian { bandwidth } => {
                if !(*bandwidth > 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "kernel bandwidth must be positive, got {bandwidth}"
                    )));
                }
                Ok(Kernel::gaussian(*bandwidth))
            }
            KernelSpec::Constant { value } => Ok(Kernel::constant(*value)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fd;

    #[test]
    fn gaussian_kernel_gradient_matches_finite_differences() {
        let k = Kernel::gaussian(0.8);
        let y = [0.3, -0.7];
        let x = [1.1, 0.4];
        let analytic = k.grad_x(&x, &y);
        let numeric = fd::grad_central(|p| k.value(p, &y), &x, 1e-6);
        assert!(fd::max_rel_err(&analytic, &numeric) < 1e-8);
    }
}
