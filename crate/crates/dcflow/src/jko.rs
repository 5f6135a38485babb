//! One proximal (JKO) step in the Wasserstein metric, solved by stochastic
//! optimization of the variational objective over an input-convex network.
//!
//! The objective splits into a squared-transport term, an optional potential
//! term, and a regularizer increment: negative entropy contributes
//! `-mean log det Hess psi` through the change-of-entropy formula, an
//! interaction energy contributes a distinct-pair kernel U-statistic, and
//! `none` contributes nothing. Fresh base batches are drawn every inner
//! iteration and pushed through the frozen chain of earlier maps.

use serde::{Deserialize, Serialize};

use crate::base::BaseDistribution;
use crate::chain::{self, DiffMap, PushStep};
use crate::error::{Error, Result};
use crate::icnn::{self, BrenierPotential, IcnnFunction, LossSpec, HESSIAN_JITTER};
use crate::kernel::Kernel;
use crate::linalg;
use crate::potentials::DcPotential;
use crate::rng;

/// Learning rate over an inclusive 1-based span of inner iterations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateSpan {
    pub from: usize,
    pub to: usize,
    pub rate: f64,
}

/// Hyperparameters of one inner solve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JkoConfig {
    pub eta: f64,
    /// Guard eta_0: the discretization step must stay below this.
    #[serde(default = "default_eta_max")]
    pub eta_max: f64,
    pub inner_iters: usize,
    pub batch_size: usize,
    pub learning_rate_schedule: Vec<RateSpan>,
    #[serde(default = "default_betas")]
    pub adam_betas: (f64, f64),
    #[serde(default = "default_eps")]
    pub adam_eps: f64,
    pub seed: u64,
    #[serde(default)]
    pub chain_mode: ChainMode,
}

fn default_eta_max() -> f64 {
    1.0
}

fn default_betas() -> (f64, f64) {
    (0.9, 0.999)
}

fn default_eps() -> f64 {
    1e-8
}

/// Whether each inner iteration re-pushes its fresh batch through the frozen
/// chain, or all batches are pushed once up front. The arithmetic per point is
/// identical, so both modes agree bit-for-bit.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainMode {
    #[default]
    Literal,
    Cached,
}

impl JkoConfig {
    pub fn new(eta: f64, inner_iters: usize, batch_size: usize, rate: f64, seed: u64) -> Self {
        Self {
            eta,
            eta_max: default_eta_max(),
            inner_iters,
            batch_size,
            learning_rate_schedule: vec![RateSpan { from: 1, to: inner_iters.max(1), rate }],
            adam_betas: default_betas(),
            adam_eps: default_eps(),
            seed,
            chain_mode: ChainMode::Literal,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(Error::InvalidParameter(format!("eta must be positive, got {}", self.eta)));
        }
        if self.eta >= self.eta_max {
            return Err(Error::InvalidParameter(format!(
                "eta = {} must stay below the eta_max guard = {}",
                self.eta, self.eta_max
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch_size must be at least 1".into()));
        }
        let (b1, b2) = self.adam_betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) {
            return Err(Error::InvalidParameter(format!(
                "adam betas must lie in [0, 1), got ({b1}, {b2})"
            )));
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::InvalidParameter("adam_eps must be positive".into()));
        }
        for i in 1..=self.inner_iters {
            if self.rate_at(i).is_none() {
                return Err(Error::InvalidParameter(format!(
                    "learning rate schedule does not cover inner iteration {i}"
                )));
            }
        }
        Ok(())
    }

    pub fn rate_at(&self, iteration: usize) -> Option<f64> {
        self.learning_rate_schedule
            .iter()
            .find(|s| s.from <= iteration && iteration <= s.to)
            .map(|s| s.rate)
    }
}

/// The regularizer of the free energy. The kernel travels with the
/// interaction variant, so it exists exactly when it is needed.
#[derive(Clone, Debug, Default)]
pub enum RegularizerSpec {
    #[default]
    NegativeEntropy,
    InteractionEnergy(Kernel),
    None,
}

/// Serializable form of [`RegularizerSpec`] for configs and snapshots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegularizerConfig {
    NegativeEntropy,
    InteractionEnergy { kernel: crate::kernel::KernelSpec },
    None,
}

impl RegularizerConfig {
    pub fn build(&self) -> Result<RegularizerSpec> {
        Ok(match self {
            RegularizerConfig::NegativeEntropy => RegularizerSpec::NegativeEntropy,
            RegularizerConfig::InteractionEnergy { kernel } => {
                RegularizerSpec::InteractionEnergy(kernel.build()?)
            }
            RegularizerConfig::None => RegularizerSpec::None,
        })
    }
}

/// Value of the variational objective split by term.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct JkoTerms {
    pub total: f64,
    /// (1 / 2 eta) mean ||map(x) - x||^2
    pub w2_term: f64,
    /// mean G(map(x))
    pub potential_term: f64,
    /// regularizer increment (entropy change or interaction U-statistic)
    pub reg_term: f64,
}

/// The variational objective `(1/2eta) W2^2 + U + reg` evaluated by direct
/// per-point computation on any convex potential. Independent of the
/// training-path evaluator, which makes it a cross-check in tests.
pub fn jko_objective(
    psi: &dyn BrenierPotential,
    batch: &[f64],
    potential: Option<&DcPotential>,
    regularizer: &RegularizerSpec,
    eta: f64,
) -> Result<JkoTerms> {
    let d = psi.dim();
    if batch.is_empty() || batch.len() % d != 0 {
        return Err(Error::InvalidParameter("batch must be a non-empty multiple of dim".into()));
    }
    let n = batch.len() / d;
    let mut w2 = 0.0;
    let mut pot = 0.0;
    let mut ent = 0.0;
    let mut mapped = vec![0.0; n * d];
    for i in 0..n {
        let x = &batch[i * d..(i + 1) * d];
        let y = psi.map(x);
        w2 += linalg::dist_sq(&y, x);
        if let Some(p) = potential {
            pot += p.g_value(&y);
        }
        if matches!(regularizer, RegularizerSpec::NegativeEntropy) {
            let h = psi.map_hessian(x);
            ent -= linalg::spd_logdet(&h, d, HESSIAN_JITTER)?;
        }
        mapped[i * d..(i + 1) * d].copy_from_slice(&y);
    }
    let reg_term = match regularizer {
        RegularizerSpec::NegativeEntropy => ent / n as f64,
        RegularizerSpec::InteractionEnergy(kernel) => {
            if n < 2 {
                0.0
            } else {
                let mut acc = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        if i != j {
                            acc += kernel.value(&mapped[i * d..(i + 1) * d], &mapped[j * d..(j + 1) * d]);
                        }
                    }
                }
                acc / (n * (n - 1)) as f64
            }
        }
        RegularizerSpec::None => 0.0,
    };
    let terms = JkoTerms {
        w2_term: w2 / (2.0 * eta * n as f64),
        potential_term: pot / n as f64,
        reg_term,
        total: 0.0,
    };
    let total = terms.w2_term + terms.potential_term + terms.reg_term;
    if !total.is_finite() {
        return Err(Error::NonFinite(format!("jko objective (total = {total})")));
    }
    Ok(JkoTerms { total, ..terms })
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

/// First/second moment state with step counter.
#[derive(Clone, Debug, Default)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }
}

/// Standard bias-corrected Adam update, in place.
pub fn adam_step(
    params: &mut [f64],
    grad: &[f64],
    state: &mut AdamState,
    rate: f64,
    betas: (f64, f64),
    eps: f64,
) -> Result<()> {
    if params.len() != grad.len() || state.m.len() != params.len() {
        return Err(Error::SizeMismatch { left: params.len(), right: grad.len() });
    }
    if !grad.iter().all(|g| g.is_finite()) {
        return Err(Error::NonFinite("gradient passed to the optimizer".into()));
    }
    let (b1, b2) = betas;
    state.step += 1;
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    for i in 0..params.len() {
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * grad[i];
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * grad[i] * grad[i];
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= rate * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// The inner solve
// ---------------------------------------------------------------------------

/// Everything a single JKO step needs to know about the outer state.
pub struct JkoProblem<'a> {
    /// Frozen chain mapping base draws to samples of the measure being
    /// proximally moved (for the Euler schemes: nu_{n+1}).
    pub chain: &'a [PushStep<'a>],
    /// Potential whose G component enters the objective (None for plain
    /// JKO on the regularizer alone).
    pub potential: Option<&'a DcPotential>,
    pub regularizer: &'a RegularizerSpec,
}

/// Per-iteration objective record.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ObjectiveSample {
    pub iteration: usize,
    pub total: f64,
    pub w2_term: f64,
    pub potential_term: f64,
    pub reg_term: f64,
    pub rate: f64,
}

pub struct JkoSolution {
    pub fitted: IcnnFunction,
    pub trace: Vec<ObjectiveSample>,
}

/// Abort when the objective exceeds `10 (1 + |initial|)` for this many
/// consecutive inner iterations.
const DIVERGENCE_PATIENCE: usize = 50;

/// Fit one JKO step by Adam on fresh base batches pushed through the frozen
/// chain, warm-started from `warm_start` (the previous step's map, or a
/// near-identity network on the first step). Deterministic given the config
/// seed; `inner_iters = 0` returns the warm start unchanged.
pub fn jko_solve(
    problem: &JkoProblem,
    cfg: &JkoConfig,
    base: &BaseDistribution,
    warm_start: &IcnnFunction,
) -> Result<JkoSolution> {
    cfg.validate()?;
    base.validate()?;
    let dim = warm_start.dim();
    if base.dim() != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: base.dim() });
    }
    let mut fitted = warm_start.clone();
    let mut trace = Vec::with_capacity(cfg.inner_iters);
    if cfg.inner_iters == 0 {
        return Ok(JkoSolution { fitted, trace });
    }

    let mut rng = rng::substream(cfg.seed, SOLVE_STREAM);
    let b = cfg.batch_size;

    // Pre-drawn, pre-pushed pool in cached mode: the same draws in the same
    // order, pushed through the same per-point arithmetic.
    let cached_pool = match cfg.chain_mode {
        ChainMode::Literal => None,
        ChainMode::Cached => {
            let mut pool = vec![0.0; cfg.inner_iters * b * dim];
            base.sample_into(&mut rng, &mut pool);
            chain::push_chain(problem.chain, dim, &mut pool)?;
            Some(pool)
        }
    };

    let spec = LossSpec {
        psi_weight: 0.0,
        fit_weight: 1.0 / (2.0 * cfg.eta),
        potential: problem.potential,
        potential_weight: if problem.potential.is_some() { 1.0 } else { 0.0 },
        entropy_weight: match problem.regularizer {
            RegularizerSpec::NegativeEntropy => 1.0,
            _ => 0.0,
        },
        pair_kernel: match problem.regularizer {
            RegularizerSpec::InteractionEnergy(k) => Some((k, 1.0)),
            _ => None,
        },
    };

    let mut adam = AdamState::new(fitted.layout().total);
    let mut grad = vec![0.0; fitted.layout().total];
    let mut batch = vec![0.0; b * dim];
    let mut guard_threshold = f64::INFINITY;
    let mut guard_hits = 0usize;

    for it in 1..=cfg.inner_iters {
        match &cached_pool {
            Some(pool) => {
                let lo = (it - 1) * b * dim;
                batch.copy_from_slice(&pool[lo..lo + b * dim]);
            }
            None => {
                base.sample_into(&mut rng, &mut batch);
                chain::push_chain(problem.chain, dim, &mut batch)?;
            }
        }
        let rate = cfg.rate_at(it).expect("validated schedule");
        let breakdown = icnn::loss_param_grad(&fitted, &batch, &spec, &mut grad)?;
        if it == 1 {
            guard_threshold = 10.0 * (1.0 + breakdown.total.abs());
        }
        if breakdown.total > guard_threshold {
            guard_hits += 1;
            if guard_hits >= DIVERGENCE_PATIENCE {
                return Err(Error::Diverged {
                    iteration: it,
                    objective: breakdown.total,
                    threshold: guard_threshold,
                });
            }
        } else {
            guard_hits = 0;
        }
        adam_step(fitted.params_mut(), &grad, &mut adam, rate, cfg.adam_betas, cfg.adam_eps)?;
        fitted.project_nonneg_in_place();
        trace.push(ObjectiveSample {
            iteration: it,
            total: breakdown.total,
            w2_term: breakdown.fit_term,
            potential_term: breakdown.potential_term,
            reg_term: breakdown.entropy_term + breakdown.pair_term,
            rate,
        });
    }
    Ok(JkoSolution { fitted, trace })
}

const SOLVE_STREAM: u64 = 0x50_17e;

/// Monte Carlo change of differential entropy under a pushforward:
/// `mean log |det grad T(x)|` over the batch.
pub fn entropy_change(map: &dyn DiffMap, batch: &[f64]) -> Result<f64> {
    let d = map.dim();
    if batch.is_empty() || batch.len() % d != 0 {
        return Err(Error::InvalidParameter("batch must be a non-empty multiple of dim".into()));
    }
    let n = batch.len() / d;
    let mut acc = 0.0;
    for i in 0..n {
        acc += map.log_abs_det_jacobian(&batch[i * d..(i + 1) * d])?;
    }
    Ok(acc / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{BrenierMap, LinearMap};
    use crate::icnn::{init_near_identity, IcnnArchitecture, QuadraticPsi};
    use crate::potentials::GaussianMixtureTarget;
    use approx::assert_relative_eq;

    fn unit_quadratic_potential() -> DcPotential {
        // F = ||x||^2 / 2 realized as a single zero-centered component with
        // sigma^2 = 2, which makes H identically zero.
        GaussianMixtureTarget::new(vec![vec![0.0]], vec![1.0], 2.0_f64.sqrt())
            .unwrap()
            .dc_potential()
    }

    #[test]
    fn objective_at_identity_map_is_mean_g() {
        let mut arch = IcnnArchitecture::new(1, vec![4]);
        arch.init_scale = 0.0;
        let f = init_near_identity(&arch, 1).unwrap();
        let pot = unit_quadratic_potential();
        let batch = vec![0.5, -1.0, 2.0, 0.0];
        let terms =
            jko_objective(&f, &batch, Some(&pot), &RegularizerSpec::NegativeEntropy, 0.1).unwrap();
        assert!(terms.w2_term.abs() < 1e-20);
        assert!(terms.reg_term.abs() < 1e-12);
        let mean_g: f64 = batch.iter().map(|x| 0.5 * x * x).sum::<f64>() / 4.0;
        assert_relative_eq!(terms.total, mean_g, epsilon = 1e-12);
    }

    #[test]
    fn objective_closed_form_for_diagonal_quadratic() {
        // map = diag(2,3) x, G = 0: objective = (1/2eta) mean ||(x1, 2x2)||^2 - log 6
        let q = QuadraticPsi::diagonal(&[2.0, 3.0]).unwrap();
        let eta = 0.1;
        let batch = vec![0.4, -0.3, 1.0, 0.2, -0.6, 0.9];
        let terms = jko_objective(&q, &batch, None, &RegularizerSpec::NegativeEntropy, eta).unwrap();
        let mut expect_w2 = 0.0;
        for p in batch.chunks_exact(2) {
            // (2x - x, 3y - y) = (x, 2y)
            expect_w2 += p[0] * p[0] + 4.0 * p[1] * p[1];
        }
        expect_w2 /= 2.0 * eta * 3.0;
        assert_relative_eq!(terms.w2_term, expect_w2, epsilon = 1e-12);
        assert_relative_eq!(terms.reg_term, -(6.0_f64.ln()), epsilon = 1e-12);
    }

    #[test]
    fn objective_with_constant_kernel_is_constant() {
        let mut arch = IcnnArchitecture::new(2, vec![3]);
        arch.init_scale = 0.0;
        let f = init_near_identity(&arch, 2).unwrap();
        let kernel = Kernel::constant(1.25);
        let reg = RegularizerSpec::InteractionEnergy(kernel);
        let batch = vec![0.1, 0.2, -0.4, 0.5, 0.8, -0.9, 0.0, 0.3];
        let terms = jko_objective(&f, &batch, None, &reg, 0.1).unwrap();
        assert_relative_eq!(terms.reg_term, 1.25, epsilon = 1e-12);
    }

    #[test]
    fn objective_agrees_with_training_evaluator() {
        let pot = GaussianMixtureTarget::equal_weights(vec![vec![1.0, 0.0], vec![0.0, 1.0]], 1.0)
            .unwrap()
            .dc_potential();
        let f = init_near_identity(&IcnnArchitecture::new(2, vec![6, 5]), 3).unwrap();
        let mut rng = crate::rng::seeded(4);
        let batch: Vec<f64> = (0..40)
            .map(|_| rand::Rng::sample(&mut rng, rand_distr::StandardNormal))
            .collect();
        let eta = 0.2;
        let direct =
            jko_objective(&f, &batch, Some(&pot), &RegularizerSpec::NegativeEntropy, eta).unwrap();
        let spec = LossSpec {
            fit_weight: 1.0 / (2.0 * eta),
            potential: Some(&pot),
            potential_weight: 1.0,
            entropy_weight: 1.0,
            ..Default::default()
        };
        let fast = icnn::loss_value(&f, &batch, &spec).unwrap();
        assert_relative_eq!(direct.total, fast.total, epsilon = 1e-10);
        assert_relative_eq!(direct.w2_term, fast.fit_term, epsilon = 1e-10);
        assert_relative_eq!(direct.reg_term, fast.entropy_term, epsilon = 1e-10);
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut params = vec![1.0, -2.0];
        let mut state = AdamState::new(2);
        state.m = vec![0.5, 0.5];
        state.v = vec![0.25, 0.25];
        adam_step(&mut params, &[0.0, 0.0], &mut state, 0.1, (0.9, 0.999), 1e-8).unwrap();
        // moments decay toward zero; params move only through the decayed momentum
        assert!(state.m[0] < 0.5);
        assert!(state.v[0] < 0.25);
    }

    #[test]
    fn adam_first_step_bias_correction() {
        let mut params = vec![0.0];
        let mut state = AdamState::new(1);
        adam_step(&mut params, &[1.0], &mut state, 0.1, (0.9, 0.999), 1e-8).unwrap();
        // m_hat = 1, v_hat = 1: update = -0.1 / (1 + 1e-8)
        assert_relative_eq!(params[0], -0.1 / (1.0 + 1e-8), epsilon = 1e-15);
        // second identical step: m_hat and v_hat are exactly 1 again, so the
        // update repeats
        adam_step(&mut params, &[1.0], &mut state, 0.1, (0.9, 0.999), 1e-8).unwrap();
        assert_relative_eq!(params[0], -0.2 / (1.0 + 1e-8), epsilon = 1e-12);
    }

    #[test]
    fn adam_rejects_non_finite_gradient() {
        let mut params = vec![0.0];
        let mut state = AdamState::new(1);
        assert!(adam_step(&mut params, &[f64::NAN], &mut state, 0.1, (0.9, 0.999), 1e-8).is_err());
    }

    #[test]
    fn zero_inner_iterations_returns_warm_start() {
        let arch = IcnnArchitecture::new(1, vec![4]);
        let warm = init_near_identity(&arch, 5).unwrap();
        let pot = unit_quadratic_potential();
        let mut cfg = JkoConfig::new(0.1, 0, 8, 5e-3, 7);
        cfg.learning_rate_schedule.clear();
        let problem = JkoProblem {
            chain: &[],
            potential: Some(&pot),
            regularizer: &RegularizerSpec::NegativeEntropy,
        };
        let base = BaseDistribution::standard(1);
        let solution = jko_solve(&problem, &cfg, &base, &warm).unwrap();
        assert_eq!(solution.fitted.params(), warm.params());
        assert!(solution.trace.is_empty());
    }

    #[test]
    fn solve_is_deterministic_and_modes_agree() {
        let arch = IcnnArchitecture::new(1, vec![8]);
        let warm = init_near_identity(&arch, 6).unwrap();
        let pot = unit_quadratic_potential();
        let cfg = JkoConfig::new(0.1, 15, 32, 5e-3, 1234);
        let problem = JkoProblem {
            chain: &[],
            potential: Some(&pot),
            regularizer: &RegularizerSpec::NegativeEntropy,
        };
        let base = BaseDistribution::standard(1);
        let a = jko_solve(&problem, &cfg, &base, &warm).unwrap();
        let b = jko_solve(&problem, &cfg, &base, &warm).unwrap();
        assert_eq!(a.fitted.params(), b.fitted.params());

        let mut cached_cfg = cfg.clone();
        cached_cfg.chain_mode = ChainMode::Cached;
        let c = jko_solve(&problem, &cached_cfg, &base, &warm).unwrap();
        let max_diff = a
            .fitted
            .params()
            .iter()
            .zip(c.fitted.params())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(max_diff <= 1e-10, "cached mode diverged from literal: {max_diff}");
    }

    #[test]
    fn quadratic_free_energy_fixed_point_stays_near_identity() {
        // G = ||x||^2/2, negative entropy, base standard normal: the JKO fixed
        // point of this free energy is the base itself, so the fitted map must
        // stay near the identity.
        let arch = IcnnArchitecture::new(1, vec![16, 16]);
        let warm = init_near_identity(&arch, 7).unwrap();
        let pot = unit_quadratic_potential();
        let cfg = JkoConfig::new(0.1, 250, 256, 4e-3, 99);
        let problem = JkoProblem {
            chain: &[],
            potential: Some(&pot),
            regularizer: &RegularizerSpec::NegativeEntropy,
        };
        let base = BaseDistribution::standard(1);
        let solution = jko_solve(&problem, &cfg, &base, &warm).unwrap();

        // final objective must not exceed the initial one
        let first = solution.trace.first().unwrap().total;
        let last_avg: f64 =
            solution.trace.iter().rev().take(20).map(|s| s.total).sum::<f64>() / 20.0;
        assert!(last_avg <= first + 0.05, "inner loop did not descend: {first} -> {last_avg}");

        // displacement of the base under the fitted map stays small
        let pts = base.sample_cloud(4096, 4242);
        let mut pushed = pts.clone();
        let steps = [PushStep::Brenier(&solution.fitted)];
        chain::push_chain(&steps, 1, &mut pushed).unwrap();
        let disp: f64 = pts
            .iter()
            .zip(&pushed)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / pts.len() as f64;
        assert!(disp.sqrt() <= 0.15, "W2 displacement {} too large", disp.sqrt());
    }

    #[test]
    fn entropy_change_closed_forms() {
        let identity = LinearMap::scaling(2, 1.0);
        let batch = vec![0.3, -0.4, 1.0, 0.5];
        assert_eq!(entropy_change(&identity, &batch).unwrap(), 0.0);

        let doubling = LinearMap::scaling(1, 2.0);
        let batch1 = vec![0.1, -0.2, 0.3];
        assert_relative_eq!(
            entropy_change(&doubling, &batch1).unwrap(),
            2.0_f64.ln(),
            epsilon = 1e-14
        );

        let q = QuadraticPsi::diagonal(&[2.0, 3.0]).unwrap();
        let map = BrenierMap(&q);
        assert_relative_eq!(entropy_change(&map, &batch).unwrap(), 6.0_f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn entropy_change_rejects_singular_jacobian() {
        let singular = LinearMap::scaling(1, 0.0);
        assert!(entropy_change(&singular, &[0.5]).is_err());
    }
}
