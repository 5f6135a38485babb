//! Experiment configuration: a JSON document naming the target family, the
//! scheme, the base distribution, and all solver hyperparameters. Defaults
//! reproduce the bundled two-dimensional sampling experiments (step 0.1, 40
//! outer iterations, batch 512, learning rate 5e-3 for the first half of the
//! outer iterations and 2e-3 afterwards, base N(0, 16 I)).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use dcflow::icnn::IcnnArchitecture;
use dcflow::jko::{ChainMode, JkoConfig, RateSpan, RegularizerConfig};
use dcflow::{Activation, BaseDistribution, Error, Result, SchemeKind, TargetSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub target: TargetSpec,
    pub scheme: SchemeKind,
    pub base: BaseDistribution,
    pub eta: f64,
    pub outer_iters: usize,
    #[serde(default)]
    pub regularizer: RegularizerDefault,
    #[serde(default)]
    pub jko: JkoSection,
    #[serde(default)]
    pub ula: UlaSection,
    #[serde(default)]
    pub eval: EvalSection,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Write a state snapshot every k outer iterations (0: final only).
    #[serde(default)]
    pub snapshot_every: usize,
}

/// Regularizer wrapper defaulting to negative entropy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RegularizerDefault(pub RegularizerConfig);

impl Default for RegularizerDefault {
    fn default() -> Self {
        RegularizerDefault(RegularizerConfig::NegativeEntropy)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JkoSection {
    pub inner_iters: usize,
    pub batch_size: usize,
    pub hidden_widths: Vec<usize>,
    pub activation: Activation,
    pub quadratic_skip: bool,
    pub init_scale: f64,
    /// Learning rate per outer iteration (constant within each inner loop).
    pub outer_lr_schedule: Vec<RateSpan>,
    /// Optional schedule over inner iterations, overriding the outer rate.
    pub inner_lr_schedule: Option<Vec<RateSpan>>,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    pub eta_max: f64,
    pub chain_mode: ChainMode,
}

impl Default for JkoSection {
    fn default() -> Self {
        Self {
            inner_iters: 300,
            batch_size: 512,
            hidden_widths: vec![64, 64],
            activation: Activation::Softplus,
            quadratic_skip: true,
            init_scale: 1e-3,
            outer_lr_schedule: vec![
                RateSpan { from: 1, to: 20, rate: 5e-3 },
                RateSpan { from: 21, to: 40, rate: 2e-3 },
            ],
            inner_lr_schedule: None,
            adam_betas: (0.9, 0.999),
            adam_eps: 1e-8,
            eta_max: 1.0,
            chain_mode: ChainMode::Literal,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UlaSection {
    pub n_chains: usize,
    /// Emit a metrics row every this many Langevin iterations.
    pub eval_every: usize,
}

impl Default for UlaSection {
    fn default() -> Self {
        Self { n_chains: 10_000, eval_every: 100 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub n_samples: usize,
    /// Cloud size cap for the exact-assignment W2 column.
    pub subsample: usize,
    pub metrics: Vec<MetricName>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            n_samples: 4096,
            subsample: 512,
            metrics: vec![
                MetricName::FreeEnergy,
                MetricName::Kl,
                MetricName::GradMapping,
                MetricName::W2,
            ],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    FreeEnergy,
    Kl,
    GradMapping,
    W2,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        // a manifest is a config wrapped with provenance fields
        let config_value = match value.get("config") {
            Some(inner) => inner.clone(),
            None => value,
        };
        let config: ExperimentConfig = serde_json::from_value(config_value)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.target.dim()?;
        if dim == 0 {
            return Err(Error::InvalidParameter("target: dimension resolves to zero".into()));
        }
        // resolve all names: target family, kernels, base
        self.target.build()?;
        self.base.validate()?;
        self.regularizer.0.build()?;
        if self.base.dim() != dim {
            return Err(Error::InvalidParameter(format!(
                "base: dimension {} does not match target dimension {dim}",
                self.base.dim()
            )));
        }
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(Error::InvalidParameter(format!("eta: must be positive, got {}", self.eta)));
        }
        if self.outer_iters == 0 {
            return Err(Error::InvalidParameter("outer_iters: must be at least 1".into()));
        }
        if self.output_dir.as_os_str().is_empty() {
            return Err(Error::InvalidParameter("output_dir: must be non-empty".into()));
        }
        match self.scheme {
            SchemeKind::Ula => {
                if self.ula.n_chains == 0 {
                    return Err(Error::InvalidParameter("ula.n_chains: must be at least 1".into()));
                }
                if self.ula.eval_every == 0 {
                    return Err(Error::InvalidParameter("ula.eval_every: must be at least 1".into()));
                }
            }
            SchemeKind::SemiFb | SchemeKind::Fb => {
                // every outer iteration must resolve a learning rate,
                // and every per-step solver config must validate
                self.jko_config_for(1)?.validate()?;
                for k in 2..=self.outer_iters {
                    self.jko_config_for(k)?;
                }
            }
        }
        if self.eval.n_samples == 0 {
            return Err(Error::InvalidParameter("eval.n_samples: must be at least 1".into()));
        }
        if self.eval.subsample == 0 {
            return Err(Error::InvalidParameter("eval.subsample: must be at least 1".into()));
        }
        Ok(())
    }

    pub fn architecture(&self) -> Result<IcnnArchitecture> {
        Ok(IcnnArchitecture {
            input_dim: self.target.dim()?,
            hidden_widths: self.jko.hidden_widths.clone(),
            activation: self.jko.activation,
            quadratic_skip: self.jko.quadratic_skip,
            init_scale: self.jko.init_scale,
        })
    }

    /// Solver config for outer iteration `k` (1-based): per-step seed stream
    /// and the learning rate resolved from the outer schedule unless an inner
    /// schedule overrides it.
    pub fn jko_config_for(&self, k: usize) -> Result<JkoConfig> {
        let schedule = match &self.jko.inner_lr_schedule {
            Some(spans) => spans.clone(),
            None => {
                let rate = self
                    .jko
                    .outer_lr_schedule
                    .iter()
                    .find(|s| s.from <= k && k <= s.to)
                    .map(|s| s.rate)
                    .ok_or_else(|| {
                        Error::InvalidParameter(format!(
                            "jko.outer_lr_schedule: no learning rate for outer iteration {k}"
                        ))
                    })?;
                vec![RateSpan { from: 1, to: self.jko.inner_iters.max(1), rate }]
            }
        };
        Ok(JkoConfig {
            eta: self.eta,
            eta_max: self.jko.eta_max,
            inner_iters: self.jko.inner_iters,
            batch_size: self.jko.batch_size,
            learning_rate_schedule: schedule,
            adam_betas: self.jko.adam_betas,
            adam_eps: self.jko.adam_eps,
            seed: dcflow::rng::mix(self.seed, STEP_SEED_LABEL + k as u64),
            chain_mode: self.jko.chain_mode,
        })
    }

    /// Output directory after applying the environment override for the root.
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) if self.output_dir.is_relative() => {
                PathBuf::from(root).join(&self.output_dir)
            }
            _ => self.output_dir.clone(),
        }
    }
}

pub const OUTPUT_ROOT_ENV: &str = "DCFLOW_OUTPUT_ROOT";

const STEP_SEED_LABEL: u64 = 0x57e9_0000;

/// Manifest written next to the run outputs: the full config plus provenance.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub library_version: String,
    pub seed: u64,
    pub config: ExperimentConfig,
}

impl Manifest {
    pub fn new(config: &ExperimentConfig) -> Self {
        Self {
            library_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: config.seed,
            config: config.clone(),
        }
    }
}
