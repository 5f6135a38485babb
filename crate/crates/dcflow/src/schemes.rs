//! Time discretizations of the gradient flow: semi forward-backward Euler
//! (forward on the concave part via the subgradient selector, backward JKO on
//! potential plus regularizer), plain forward-backward Euler (forward on the
//! full potential gradient, backward JKO on the regularizer alone), and the
//! unadjusted Langevin algorithm as a particle baseline.
//!
//! Map-based schemes carry their measure implicitly as a chain of fitted maps
//! interleaved with forward steps applied to a base distribution with known
//! density, which is what makes exact density bookkeeping possible.

use serde::{Deserialize, Serialize};

use rayon::prelude::*;

use crate::base::BaseDistribution;
use crate::chain::{self, PushStep};
use crate::error::{Error, Result};
use crate::icnn::{init_near_identity, IcnnArchitecture, IcnnFunction};
use crate::jko::{self, JkoConfig, JkoProblem, ObjectiveSample, RegularizerConfig};
use crate::potentials::{DcPotential, TargetSpec};
use crate::rng;
use crate::transport::EmpiricalMeasure;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    SemiFb,
    Fb,
    Ula,
}

impl std::fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SchemeKind::SemiFb => f.write_str("semi_fb"),
            SchemeKind::Fb => f.write_str("fb"),
            SchemeKind::Ula => f.write_str("ula"),
        }
    }
}

/// The chain of fitted maps defining the current measure as a pushforward of
/// the base distribution.
pub struct FlowState {
    target: TargetSpec,
    base: BaseDistribution,
    arch: IcnnArchitecture,
    regularizer: RegularizerConfig,
    eta: f64,
    scheme: SchemeKind,
    maps: Vec<IcnnFunction>,
    iteration: usize,
    potential: DcPotential,
    /// Final particle cloud, for ULA runs only.
    cloud: Option<EmpiricalMeasure>,
}

impl FlowState {
    pub fn new(
        target: TargetSpec,
        base: BaseDistribution,
        arch: IcnnArchitecture,
        regularizer: RegularizerConfig,
        eta: f64,
        scheme: SchemeKind,
    ) -> Result<Self> {
        base.validate()?;
        arch.validate()?;
        let potential = target.build()?;
        let dim = potential.dim();
        if base.dim() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: base.dim() });
        }
        if arch.input_dim != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: arch.input_dim });
        }
        if !(eta > 0.0) || !eta.is_finite() {
            return Err(Error::InvalidParameter(format!("eta must be positive, got {eta}")));
        }
        Ok(Self {
            target,
            base,
            arch,
            regularizer,
            eta,
            scheme,
            maps: Vec::new(),
            iteration: 0,
            potential,
            cloud: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.potential.dim()
    }

    pub fn scheme(&self) -> SchemeKind {
        self.scheme
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn maps(&self) -> &[IcnnFunction] {
        &self.maps
    }

    pub fn target(&self) -> &TargetSpec {
        &self.target
    }

    pub fn base(&self) -> &BaseDistribution {
        &self.base
    }

    pub fn arch(&self) -> &IcnnArchitecture {
        &self.arch
    }

    pub fn regularizer(&self) -> &RegularizerConfig {
        &self.regularizer
    }

    pub fn potential(&self) -> &DcPotential {
        &self.potential
    }

    pub fn cloud(&self) -> Option<&EmpiricalMeasure> {
        self.cloud.as_ref()
    }

    fn forward_step(&self) -> PushStep<'_> {
        match self.scheme {
            SchemeKind::SemiFb => {
                PushStep::SubgradientForward { potential: &self.potential, eta: self.eta }
            }
            SchemeKind::Fb | SchemeKind::Ula => {
                PushStep::GradientForward { potential: &self.potential, eta: self.eta }
            }
        }
    }

    /// Chain realizing mu_n: forward then fitted map, once per completed step.
    pub fn chain_mu(&self) -> Vec<PushStep<'_>> {
        let mut steps = Vec::with_capacity(2 * self.maps.len());
        for map in &self.maps {
            steps.push(self.forward_step());
            steps.push(PushStep::Brenier(map));
        }
        steps
    }

    /// Chain realizing nu_{n+1}: mu_n with a trailing forward step.
    pub fn chain_nu(&self) -> Vec<PushStep<'_>> {
        let mut steps = self.chain_mu();
        steps.push(self.forward_step());
        steps
    }

    /// Draw `n` samples of mu_n (deterministic per seed). For a ULA state
    /// holding a final cloud this resamples the stored particles.
    pub fn sample_mu(&self, n: usize, seed: u64) -> Result<EmpiricalMeasure> {
        if n == 0 {
            return Err(Error::InvalidParameter("sample count must be at least 1".into()));
        }
        if let Some(cloud) = &self.cloud {
            return resample_cloud(cloud, n, seed);
        }
        let mut points = self.base.sample_cloud(n, rng::mix(seed, SAMPLE_STREAM));
        chain::push_chain(&self.chain_mu(), self.dim(), &mut points)?;
        EmpiricalMeasure::new(self.dim(), points)
    }

    /// Draw `n` samples of nu_{n+1}; shares base draws with [`sample_mu`]
    /// called at the same seed.
    pub fn sample_nu(&self, n: usize, seed: u64) -> Result<EmpiricalMeasure> {
        if n == 0 {
            return Err(Error::InvalidParameter("sample count must be at least 1".into()));
        }
        let mut points = self.base.sample_cloud(n, rng::mix(seed, SAMPLE_STREAM));
        chain::push_chain(&self.chain_nu(), self.dim(), &mut points)?;
        EmpiricalMeasure::new(self.dim(), points)
    }

    /// One semi FB Euler step: push forward by `(I + eta S)`, then fit the
    /// JKO step of (potential energy + regularizer) on top of it.
    pub fn semi_fb_step(self, cfg: &JkoConfig) -> Result<(FlowState, Vec<ObjectiveSample>)> {
        if self.scheme != SchemeKind::SemiFb {
            return Err(Error::InvalidParameter(format!(
                "semi_fb_step on a {} state",
                self.scheme
            )));
        }
        self.backward_fit(cfg, true)
    }

    /// One FB Euler step: push forward by `(I - eta grad F)`, then fit the
    /// JKO step of the regularizer alone (no potential term).
    pub fn fb_step(self, cfg: &JkoConfig) -> Result<(FlowState, Vec<ObjectiveSample>)> {
        if self.scheme != SchemeKind::Fb {
            return Err(Error::InvalidParameter(format!("fb_step on a {} state", self.scheme)));
        }
        self.backward_fit(cfg, false)
    }

    /// Dispatch on the state's own scheme.
    pub fn step(self, cfg: &JkoConfig) -> Result<(FlowState, Vec<ObjectiveSample>)> {
        match self.scheme {
            SchemeKind::SemiFb => self.semi_fb_step(cfg),
            SchemeKind::Fb => self.fb_step(cfg),
            SchemeKind::Ula => Err(Error::InvalidParameter(
                "ULA states advance through ula_run, not map fitting".into(),
            )),
        }
    }

    fn backward_fit(
        mut self,
        cfg: &JkoConfig,
        with_potential: bool,
    ) -> Result<(FlowState, Vec<ObjectiveSample>)> {
        if (cfg.eta - self.eta).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "config eta {} does not match flow eta {}",
                cfg.eta, self.eta
            )));
        }
        let warm = match self.maps.last() {
            Some(prev) => prev.clone(),
            None => init_near_identity(&self.arch, rng::mix(cfg.seed, WARM_START_STREAM))?,
        };
        let regularizer = self.regularizer.build()?;
        let solution = {
            let chain = self.chain_nu();
            let problem = JkoProblem {
                chain: &chain,
                potential: if with_potential { Some(&self.potential) } else { None },
                regularizer: &regularizer,
            };
            jko::jko_solve(&problem, cfg, &self.base, &warm)?
        };
        self.maps.push(solution.fitted);
        self.iteration += 1;
        Ok((self, solution.trace))
    }

    // -- persistence ---------------------------------------------------------

    pub fn to_snapshot(&self) -> FlowSnapshot {
        FlowSnapshot {
            format_version: FLOW_SNAPSHOT_VERSION,
            target: self.target.clone(),
            base: self.base.clone(),
            arch: self.arch.clone(),
            regularizer: self.regularizer.clone(),
            eta: self.eta,
            scheme: self.scheme,
            iteration: self.iteration,
            maps: self.maps.clone(),
            cloud: self.cloud.clone(),
        }
    }

    pub fn from_snapshot(snapshot: FlowSnapshot) -> Result<Self> {
        if snapshot.format_version != FLOW_SNAPSHOT_VERSION {
            return Err(Error::BadSnapshot(format!(
                "unsupported flow snapshot version {}",
                snapshot.format_version
            )));
        }
        let mut state = FlowState::new(
            snapshot.target,
            snapshot.base,
            snapshot.arch,
            snapshot.regularizer,
            snapshot.eta,
            snapshot.scheme,
        )?;
        let dim = state.dim();
        for map in &snapshot.maps {
            if map.dim() != dim {
                return Err(Error::BadSnapshot("map dimension mismatch in snapshot".into()));
            }
        }
        if snapshot.scheme != SchemeKind::Ula && snapshot.maps.len() != snapshot.iteration {
            return Err(Error::BadSnapshot(format!(
                "map count {} does not match iteration {}",
                snapshot.maps.len(),
                snapshot.iteration
            )));
        }
        state.maps = snapshot.maps;
        state.iteration = snapshot.iteration;
        state.cloud = snapshot.cloud;
        Ok(state)
    }

    pub fn save_json(&self, path: &std::path::Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), &self.to_snapshot())?;
        Ok(())
    }

    pub fn load_json(path: &std::path::Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let snapshot: FlowSnapshot = serde_json::from_reader(std::io::BufReader::new(file))?;
        Self::from_snapshot(snapshot)
    }

    /// Attach a terminal particle cloud (ULA runs).
    pub fn with_cloud(mut self, cloud: EmpiricalMeasure) -> Result<Self> {
        if cloud.dim() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: cloud.dim() });
        }
        self.cloud = Some(cloud);
        Ok(self)
    }

    pub fn set_iteration(&mut self, iteration: usize) {
        if self.scheme == SchemeKind::Ula {
            self.iteration = iteration;
        }
    }
}

const FLOW_SNAPSHOT_VERSION: u32 = 1;
const SAMPLE_STREAM: u64 = 0x5a4d_01;
const WARM_START_STREAM: u64 = 0x11d0_77;

/// On-disk form of a [`FlowState`]: config header plus per-map parameter
/// blocks, enough to resume a run or draw fresh samples.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FlowSnapshot {
    pub format_version: u32,
    pub target: TargetSpec,
    pub base: BaseDistribution,
    pub arch: IcnnArchitecture,
    pub regularizer: RegularizerConfig,
    pub eta: f64,
    pub scheme: SchemeKind,
    pub iteration: usize,
    pub maps: Vec<IcnnFunction>,
    pub cloud: Option<EmpiricalMeasure>,
}

fn resample_cloud(cloud: &EmpiricalMeasure, n: usize, seed: u64) -> Result<EmpiricalMeasure> {
    let mut rng = rng::substream(seed, SAMPLE_STREAM);
    let d = cloud.dim();
    let mut points = Vec::with_capacity(n * d);
    for _ in 0..n {
        let idx = rand::Rng::random_range(&mut rng, 0..cloud.len());
        points.extend_from_slice(cloud.point(idx));
    }
    EmpiricalMeasure::new(d, points)
}

// ---------------------------------------------------------------------------
// Unadjusted Langevin
// ---------------------------------------------------------------------------

const ULA_CHUNK: usize = 256;

/// Particle state of a Langevin run. Each chain owns a seed-derived stream,
/// so advancing in segments is bit-identical to one long run and independent
/// of the worker count.
pub struct UlaChains {
    dim: usize,
    points: Vec<f64>,
    rngs: Vec<rand_chacha::ChaCha12Rng>,
    iteration: usize,
}

impl UlaChains {
    pub fn init(base: &BaseDistribution, n_chains: usize, seed: u64) -> Result<Self> {
        if n_chains == 0 {
            return Err(Error::InvalidParameter("need at least one chain".into()));
        }
        base.validate()?;
        let d = base.dim();
        let mut points = vec![0.0; n_chains * d];
        let mut rngs = Vec::with_capacity(n_chains);
        for (chain_idx, x) in points.chunks_exact_mut(d).enumerate() {
            let mut chain_rng = rng::substream(rng::mix(seed, ULA_STREAM), chain_idx as u64);
            base.sample_into(&mut chain_rng, x);
            rngs.push(chain_rng);
        }
        Ok(Self { dim: d, points, rngs, iteration: 0 })
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn cloud(&self) -> Result<EmpiricalMeasure> {
        EmpiricalMeasure::new(self.dim, self.points.clone())
    }

    /// Run `n_iters` Langevin steps `x <- x - eta grad F(x) + sqrt(2 eta) z`.
    /// A non-finite iterate aborts with the offending chain index.
    pub fn advance(&mut self, potential: &DcPotential, eta: f64, n_iters: usize) -> Result<()> {
        if !(eta > 0.0) || !eta.is_finite() {
            return Err(Error::InvalidParameter(format!("eta must be positive, got {eta}")));
        }
        let d = self.dim;
        if potential.dim() != d {
            return Err(Error::DimensionMismatch { expected: d, got: potential.dim() });
        }
        let noise_scale = (2.0 * eta).sqrt();
        let start_iter = self.iteration;
        let results: Vec<Result<()>> = self
            .points
            .par_chunks_mut(ULA_CHUNK * d)
            .zip(self.rngs.par_chunks_mut(ULA_CHUNK))
            .enumerate()
            .map(|(c, (chunk, rngs))| {
                let mut grad = vec![0.0; d];
                let mut scratch = vec![0.0; d];
                let mut noise = vec![0.0; d];
                for (local, (x, chain_rng)) in
                    chunk.chunks_exact_mut(d).zip(rngs.iter_mut()).enumerate()
                {
                    for it in 0..n_iters {
                        potential.f_grad_into(x, &mut grad, &mut scratch);
                        rng::standard_normal_into(chain_rng, &mut noise);
                        for k in 0..d {
                            x[k] += -eta * grad[k] + noise_scale * noise[k];
                        }
                        if !x.iter().all(|v| v.is_finite()) {
                            return Err(Error::NonFinite(format!(
                                "ULA chain {} diverged at iteration {}",
                                c * ULA_CHUNK + local,
                                start_iter + it
                            )));
                        }
                    }
                }
                Ok(())
            })
            .collect();
        results.into_iter().collect::<Result<()>>()?;
        self.iteration += n_iters;
        Ok(())
    }
}

/// One-shot Langevin baseline over `n_iters` steps; see [`UlaChains`].
pub fn ula_run(
    potential: &DcPotential,
    eta: f64,
    n_chains: usize,
    n_iters: usize,
    base: &BaseDistribution,
    seed: u64,
) -> Result<EmpiricalMeasure> {
    let d = potential.dim();
    if base.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: base.dim() });
    }
    let mut chains = UlaChains::init(base, n_chains, seed)?;
    chains.advance(potential, eta, n_iters)?;
    chains.cloud()
}

const ULA_STREAM: u64 = 0x01a_27;
