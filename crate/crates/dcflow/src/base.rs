//! Base distributions for the map-based schemes. The chain of fitted maps is
//! applied to draws from one of these, so the log-density must be available in
//! closed form for the density bookkeeping to work.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng;

const LOG_2PI: f64 = 1.8378770664093453;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum BaseDistribution {
    /// Isotropic normal N(mean, variance * I).
    Gaussian { mean: Vec<f64>, variance: f64 },
}

impl BaseDistribution {
    pub fn standard(dim: usize) -> Self {
        Self::isotropic(dim, 1.0)
    }

    pub fn isotropic(dim: usize, variance: f64) -> Self {
        BaseDistribution::Gaussian {
            mean: vec![0.0; dim],
            variance,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            BaseDistribution::Gaussian { mean, .. } => mean.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            BaseDistribution::Gaussian { mean, variance } => {
                if mean.is_empty() {
                    return Err(Error::InvalidParameter("base mean must be non-empty".into()));
                }
                if !mean.iter().all(|m| m.is_finite()) {
                    return Err(Error::NonFinite("base mean".into()));
                }
                if !(*variance > 0.0) || !variance.is_finite() {
                    return Err(Error::InvalidParameter(format!(
                        "base variance must be positive, got {variance}"
                    )));
                }
                Ok(())
            }
        }
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        match self {
            BaseDistribution::Gaussian { mean, variance } => {
                let d = mean.len() as f64;
                let sq = linalg::dist_sq(x, mean);
                -0.5 * sq / variance - 0.5 * d * (LOG_2PI + variance.ln())
            }
        }
    }

    /// Fill `out` (length n*dim) with draws, row per point.
    pub fn sample_into(&self, rng: &mut rand_chacha::ChaCha12Rng, out: &mut [f64]) {
        match self {
            BaseDistribution::Gaussian { mean, variance } => {
                let d = mean.len();
                debug_assert_eq!(out.len() % d, 0);
                rng::standard_normal_into(rng, out);
                let sd = variance.sqrt();
                for row in out.chunks_exact_mut(d) {
                    for (v, m) in row.iter_mut().zip(mean) {
                        *v = m + sd * *v;
                    }
                }
            }
        }
    }

    /// Draw `n` points with a dedicated stream for `seed`.
    pub fn sample_cloud(&self, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = rng::seeded(seed);
        let mut out = vec![0.0; n * self.dim()];
        self.sample_into(&mut rng, &mut out);
        out
    }
}
