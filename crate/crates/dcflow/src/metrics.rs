//! Measurable quantities along a run: free energy and KL with Monte Carlo
//! standard errors via exact pushforward density bookkeeping, the squared
//! gradient-mapping proxy from common-seed displacement, post-hoc rate
//! fitting, and the two-sample utilities (annulus mass, MMD, KDE cross-check
//! for particle clouds).

use serde::{Deserialize, Serialize};

use crate::chain;
use crate::error::{Error, Result};
use crate::jko::RegularizerConfig;
use crate::kernel::Kernel;
use crate::linalg;
use crate::potentials::DcPotential;
use crate::rng;
use crate::schemes::{FlowState, SchemeKind};
use crate::transport::{self, EmpiricalMeasure};

/// Per-iteration diagnostics written by the experiment runner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub iteration: usize,
    pub free_energy: f64,
    pub free_energy_se: f64,
    pub kl: Option<f64>,
    pub kl_se: Option<f64>,
    pub grad_mapping_sq: Option<f64>,
    pub w2_to_prev: Option<f64>,
    pub wallclock_s: f64,
}

/// Fixed CSV column schema.
pub const CSV_HEADER: &str =
    "iteration,free_energy,free_energy_se,kl,kl_se,grad_mapping_sq,w2_to_prev,wallclock_s";

fn csv_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn parse_opt(field: &str) -> Result<Option<f64>> {
    if field.is_empty() {
        return Ok(None);
    }
    field
        .parse::<f64>()
        .map(Some)
        .map_err(|e| Error::InvalidParameter(format!("bad metrics field {field:?}: {e}")))
}

impl MetricsRecord {
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.iteration,
            self.free_energy,
            self.free_energy_se,
            csv_opt(self.kl),
            csv_opt(self.kl_se),
            csv_opt(self.grad_mapping_sq),
            csv_opt(self.w2_to_prev),
            self.wallclock_s
        )
    }

    pub fn from_csv_row(row: &str) -> Result<Self> {
        let fields: Vec<&str> = row.split(',').collect();
        if fields.len() != 8 {
            return Err(Error::InvalidParameter(format!(
                "metrics row has {} fields, expected 8",
                fields.len()
            )));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|e| Error::InvalidParameter(format!("bad metrics field {s:?}: {e}")))
        };
        Ok(MetricsRecord {
            iteration: fields[0]
                .parse()
                .map_err(|e| Error::InvalidParameter(format!("bad iteration: {e}")))?,
            free_energy: parse(fields[1])?,
            free_energy_se: parse(fields[2])?,
            kl: parse_opt(fields[3])?,
            kl_se: parse_opt(fields[4])?,
            grad_mapping_sq: parse_opt(fields[5])?,
            w2_to_prev: parse_opt(fields[6])?,
            wallclock_s: parse(fields[7])?,
        })
    }
}

/// An estimate with its Monte Carlo standard error. `absolute` is false when
/// a missing normalizer leaves the value shifted by an unknown constant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
    pub absolute: bool,
}

// ---------------------------------------------------------------------------
// Exact density bookkeeping
// ---------------------------------------------------------------------------

/// Push base points through the state's chain, accumulating per-point
/// log-densities of the current measure at the pushed points.
pub fn chain_log_density(state: &FlowState, base_points: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = state.dim();
    if base_points.is_empty() || base_points.len() % d != 0 {
        return Err(Error::InvalidParameter("base points must be a non-empty multiple of dim".into()));
    }
    let mut points = base_points.to_vec();
    let mut logdens: Vec<f64> =
        points.chunks_exact(d).map(|p| state.base().log_density(p)).collect();
    chain::push_chain_logdens(&state.chain_mu(), d, &mut points, &mut logdens)?;
    Ok((points, logdens))
}

fn per_point_energy_terms(state: &FlowState, n: usize, seed: u64) -> Result<Vec<f64>> {
    let base_points = state.base().sample_cloud(n, rng::mix(seed, EVAL_STREAM));
    let (points, logdens) = chain_log_density(state, &base_points)?;
    let d = state.dim();
    let pot = state.potential();
    Ok(points
        .chunks_exact(d)
        .zip(&logdens)
        .map(|(x, ld)| pot.f_value(x) + ld)
        .collect())
}

const EVAL_STREAM: u64 = 0xe7a1;

/// Free energy `E[F] + E[log density]` (negative-entropy regularizer) or
/// `E[F] + interaction U-statistic`, with standard error.
pub fn free_energy_estimate(state: &FlowState, n: usize, seed: u64) -> Result<Estimate> {
    match state.regularizer() {
        RegularizerConfig::NegativeEntropy => {
            let terms = per_point_energy_terms(state, n, seed)?;
            let (mean, se) = linalg::mean_stderr(&terms);
            Ok(Estimate { value: mean, stderr: se, absolute: true })
        }
        RegularizerConfig::InteractionEnergy { kernel } => {
            let kernel = kernel.build()?;
            let cloud = state.sample_mu(n, seed)?;
            let pot = state.potential();
            let d = state.dim();
            let len = cloud.len();
            if len < 2 {
                return Err(Error::InvalidParameter("need at least 2 samples".into()));
            }
            // projection-based pseudo-values: F(x_i) + 2 * row-mean of the kernel
            let mut row_means = vec![0.0; len];
            for i in 0..len {
                let xi = cloud.point(i);
                let mut acc = 0.0;
                for j in 0..len {
                    if i != j {
                        acc += kernel.value(xi, cloud.point(j));
                    }
                }
                row_means[i] = acc / (len - 1) as f64;
            }
            let u_stat = row_means.iter().sum::<f64>() / len as f64;
            let mean_f =
                cloud.iter_points().map(|x| pot.f_value(x)).sum::<f64>() / len as f64;
            let pseudo: Vec<f64> = (0..len)
                .map(|i| pot.f_value(cloud.point(i)) + 2.0 * row_means[i])
                .collect();
            let (_, se) = linalg::mean_stderr(&pseudo);
            let _ = d;
            Ok(Estimate { value: mean_f + u_stat, stderr: se, absolute: true })
        }
        RegularizerConfig::None => {
            let cloud = state.sample_mu(n, seed)?;
            let pot = state.potential();
            let vals: Vec<f64> = cloud.iter_points().map(|x| pot.f_value(x)).collect();
            let (mean, se) = linalg::mean_stderr(&vals);
            Ok(Estimate { value: mean, stderr: se, absolute: true })
        }
    }
}

/// `KL(mu_n || pi)` via exact pushforward densities:
/// `mean[log p_n(x) + F(x)] + log Z`. Without a known normalizer the value is
/// shifted by an unknown constant and flagged `absolute = false`.
pub fn kl_estimate(state: &FlowState, n: usize, seed: u64) -> Result<Estimate> {
    let terms = per_point_energy_terms(state, n, seed)?;
    let (mean, se) = linalg::mean_stderr(&terms);
    match state.potential().log_normalizer() {
        Some(log_z) => Ok(Estimate { value: mean + log_z, stderr: se, absolute: true }),
        None => Ok(Estimate { value: mean, stderr: se, absolute: false }),
    }
}

// ---------------------------------------------------------------------------
// KDE cross-check for particle clouds
// ---------------------------------------------------------------------------

/// Leave-one-out Gaussian KDE log-density at every cloud point, with the
/// Silverman bandwidth. The cross-check route for ULA clouds, where no exact
/// density bookkeeping exists.
pub fn kde_log_density_loo(cloud: &EmpiricalMeasure) -> Result<Vec<f64>> {
    let n = cloud.len();
    let d = cloud.dim();
    if n < 2 {
        return Err(Error::InvalidParameter("KDE needs at least 2 points".into()));
    }
    // Silverman: sigma_hat * (4 / ((d + 2) n))^(1 / (d + 4))
    let mut var_acc = 0.0;
    for k in 0..d {
        let mean = cloud.iter_points().map(|p| p[k]).sum::<f64>() / n as f64;
        var_acc += cloud.iter_points().map(|p| (p[k] - mean) * (p[k] - mean)).sum::<f64>()
            / (n as f64 - 1.0);
    }
    let sigma_hat = (var_acc / d as f64).sqrt();
    let h = sigma_hat * (4.0 / ((d as f64 + 2.0) * n as f64)).powf(1.0 / (d as f64 + 4.0));
    if !(h > 0.0) {
        return Err(Error::InvalidParameter("degenerate cloud: zero bandwidth".into()));
    }
    let log_norm = -((n - 1) as f64).ln()
        - d as f64 * h.ln()
        - 0.5 * d as f64 * (2.0 * std::f64::consts::PI).ln();
    let two_h2 = 2.0 * h * h;
    use rayon::prelude::*;
    let out: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = cloud.point(i);
            // log-sum-exp over the other points
            let mut max_e = f64::NEG_INFINITY;
            let mut exps = Vec::with_capacity(n - 1);
            for j in 0..n {
                if i != j {
                    let e = -linalg::dist_sq(xi, cloud.point(j)) / two_h2;
                    max_e = max_e.max(e);
                    exps.push(e);
                }
            }
            let sum: f64 = exps.iter().map(|e| (e - max_e).exp()).sum();
            max_e + sum.ln() + log_norm
        })
        .collect();
    Ok(out)
}

/// KL of a particle cloud against the target, using leave-one-out KDE in
/// place of exact densities.
pub fn kl_estimate_kde(cloud: &EmpiricalMeasure, potential: &DcPotential) -> Result<Estimate> {
    let logdens = kde_log_density_loo(cloud)?;
    let terms: Vec<f64> = cloud
        .iter_points()
        .zip(&logdens)
        .map(|(x, ld)| potential.f_value(x) + ld)
        .collect();
    let (mean, se) = linalg::mean_stderr(&terms);
    match potential.log_normalizer() {
        Some(log_z) => Ok(Estimate { value: mean + log_z, stderr: se, absolute: true }),
        None => Ok(Estimate { value: mean, stderr: se, absolute: false }),
    }
}

// ---------------------------------------------------------------------------
// Gradient mapping and Wasserstein diagnostics
// ---------------------------------------------------------------------------

fn check_provenance(prev: &FlowState, cur: &FlowState) -> Result<()> {
    if prev.scheme() != cur.scheme()
        || prev.dim() != cur.dim()
        || (prev.eta() - cur.eta()).abs() > 1e-15
        || prev.target() != cur.target()
        || cur.iteration() != prev.iteration() + 1
    {
        return Err(Error::InvalidParameter(
            "gradient mapping needs consecutive states of one run".into(),
        ));
    }
    Ok(())
}

/// Squared Wasserstein gradient mapping proxy between consecutive iterates:
/// `eta^{-2}` times the common-seed displacement cost (a valid coupling, so
/// an upper bound on `eta^{-2} W2^2`).
pub fn gradient_mapping_sq(
    prev: &FlowState,
    cur: &FlowState,
    n: usize,
    seed: u64,
) -> Result<f64> {
    check_provenance(prev, cur)?;
    let a = prev.sample_mu(n, seed)?;
    let b = cur.sample_mu(n, seed)?;
    let cost = transport::coupling_displacement_cost(&a, &b)?;
    Ok(cost / (cur.eta() * cur.eta()))
}

/// Exact-assignment W2 between consecutive iterates on common-seed clouds
/// subsampled to at most `max_points`.
pub fn w2_to_prev_subsampled(
    prev: &FlowState,
    cur: &FlowState,
    n: usize,
    max_points: usize,
    seed: u64,
) -> Result<f64> {
    check_provenance(prev, cur)?;
    let a = prev.sample_mu(n, seed)?.head(max_points)?;
    let b = cur.sample_mu(n, seed)?.head(max_points)?;
    Ok(transport::w2_exact(&a, &b)?.w2())
}

/// `eta^{-2}` displacement series along a whole run; the running minimum of
/// this series is the quantity with a proven O(1/N) envelope.
pub fn gradient_mapping_series(states: &[FlowState], n: usize, seed: u64) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(states.len().saturating_sub(1));
    for pair in states.windows(2) {
        out.push(gradient_mapping_sq(&pair[0], &pair[1], n, seed)?);
    }
    Ok(out)
}

pub fn running_min(series: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(series.len());
    let mut cur = f64::INFINITY;
    for v in series {
        cur = cur.min(*v);
        out.push(cur);
    }
    out
}

// ---------------------------------------------------------------------------
// Rate fitting
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateRegime {
    /// Gap reaches the optimum in finitely many steps (exponent 0).
    Finite,
    /// Exponential decay (exponent in (0, 1/2]).
    Linear,
    /// Power-law decay (exponent in (1/2, 1)).
    Sublinear,
}

/// Fitted decay regime of a free-energy gap series.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub regime: RateRegime,
    /// Fitted Lojasiewicz exponent in [0, 1). The linear regime is reported
    /// at the canonical log-Sobolev value 1/2.
    pub theta: f64,
    /// Per-step contraction factor (linear) or power-law amplitude (sublinear).
    pub rate_constant: f64,
    pub r_squared: f64,
}

/// Ordinary least squares of y on x; returns (slope, intercept, r^2).
pub fn linear_regression(x: &[f64], y: &[f64]) -> Result<(f64, f64, f64)> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::InvalidParameter("regression needs >= 2 paired points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (xi, yi) in x.iter().zip(y) {
        sxx += (xi - mx) * (xi - mx);
        sxy += (xi - mx) * (yi - my);
        syy += (yi - my) * (yi - my);
    }
    if sxx == 0.0 {
        return Err(Error::InvalidParameter("regression abscissa is degenerate".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Ok((slope, intercept, r2))
}

/// Classify the decay of `series - f_star` as finite, exponential, or
/// power-law by competing log-linear against log-log regression.
pub fn rate_fit(series: &[f64], f_star: f64) -> Result<RateFit> {
    if series.len() < 10 {
        return Err(Error::InvalidParameter(format!(
            "rate fit needs a series of length >= 10, got {}",
            series.len()
        )));
    }
    let gaps: Vec<f64> = series.iter().map(|v| v - f_star).collect();
    let scale = gaps.iter().cloned().fold(0.0, f64::max).max(1e-300);
    // finite regime: the gap hits (numerically) zero and stays there
    if let Some(first_zero) = gaps.iter().position(|g| *g <= 1e-12 * scale) {
        if gaps[first_zero..].iter().all(|g| *g <= 1e-12 * scale) {
            return Ok(RateFit {
                regime: RateRegime::Finite,
                theta: 0.0,
                rate_constant: 0.0,
                r_squared: 1.0,
            });
        }
    }
    if gaps.iter().any(|g| *g <= 0.0) {
        return Err(Error::InvalidParameter(
            "series must stay above f_star for regime fitting".into(),
        ));
    }
    let log_gaps: Vec<f64> = gaps.iter().map(|g| g.ln()).collect();
    if log_gaps.windows(2).all(|w| (w[0] - w[1]).abs() < 1e-14) {
        return Err(Error::InvalidParameter("degenerate series: all gaps equal".into()));
    }
    let steps: Vec<f64> = (1..=gaps.len()).map(|i| i as f64).collect();
    let log_steps: Vec<f64> = steps.iter().map(|s| s.ln()).collect();
    let (slope_lin, _int_lin, r2_lin) = linear_regression(&steps, &log_gaps)?;
    let (slope_sub, int_sub, r2_sub) = linear_regression(&log_steps, &log_gaps)?;
    if r2_lin >= r2_sub {
        Ok(RateFit {
            regime: RateRegime::Linear,
            theta: 0.5,
            rate_constant: slope_lin.exp(),
            r_squared: r2_lin,
        })
    } else {
        let p = -slope_sub; // gap ~ C n^{-p}, p = 1 / (2 theta - 1)
        let theta = if p > 0.0 { (p + 1.0) / (2.0 * p) } else { f64::NAN };
        Ok(RateFit {
            regime: RateRegime::Sublinear,
            theta,
            rate_constant: int_sub.exp(),
            r_squared: r2_sub,
        })
    }
}

// ---------------------------------------------------------------------------
// Cloud summaries
// ---------------------------------------------------------------------------

/// Fraction of points with `| ||x - center|| - radius | <= width`.
pub fn annulus_mass(
    cloud: &EmpiricalMeasure,
    center: &[f64],
    radius: f64,
    width: f64,
) -> Result<f64> {
    if center.len() != cloud.dim() {
        return Err(Error::DimensionMismatch { expected: cloud.dim(), got: center.len() });
    }
    if !(width > 0.0) {
        return Err(Error::InvalidParameter(format!("width must be positive, got {width}")));
    }
    let hits = cloud
        .iter_points()
        .filter(|p| (linalg::dist_sq(p, center).sqrt() - radius).abs() <= width)
        .count();
    Ok(hits as f64 / cloud.len() as f64)
}

/// Unbiased U-statistic estimator of squared MMD; may be slightly negative.
pub fn mmd_estimate(x: &EmpiricalMeasure, y: &EmpiricalMeasure, kernel: &Kernel) -> Result<f64> {
    if x.dim() != y.dim() {
        return Err(Error::DimensionMismatch { expected: x.dim(), got: y.dim() });
    }
    let (m, n) = (x.len(), y.len());
    if m < 2 || n < 2 {
        return Err(Error::InvalidParameter("MMD needs at least 2 points per sample".into()));
    }
    let mut kxx = 0.0;
    for i in 0..m {
        for j in 0..m {
            if i != j {
                kxx += kernel.value(x.point(i), x.point(j));
            }
        }
    }
    let mut kyy = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                kyy += kernel.value(y.point(i), y.point(j));
            }
        }
    }
    let mut kxy = 0.0;
    for i in 0..m {
        for j in 0..n {
            kxy += kernel.value(x.point(i), y.point(j));
        }
    }
    Ok(kxx / (m * (m - 1)) as f64 + kyy / (n * (n - 1)) as f64 - 2.0 * kxy / (m * n) as f64)
}

/// Spearman rank correlation (average ranks on ties).
pub fn spearman_rho(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::InvalidParameter("spearman needs >= 2 paired points".into()));
    }
    let rx = ranks(x);
    let ry = ranks(y);
    let (_, _, r2) = linear_regression(&rx, &ry)?;
    let mut sxy = 0.0;
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
    }
    Ok(r2.sqrt() * sxy.signum())
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(std::cmp::Ordering::Equal));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            out[idx[k]] = avg;
        }
        i = j + 1;
    }
    out
}

/// Fraction of consecutive pairs that increase by more than
/// `tolerance_sigmas` combined standard errors; the empirical descent check.
pub fn ascent_violation_fraction(records: &[MetricsRecord], tolerance_sigmas: f64) -> f64 {
    if records.len() < 2 {
        return 0.0;
    }
    let mut violations = 0usize;
    for pair in records.windows(2) {
        let combined =
            (pair[0].free_energy_se.powi(2) + pair[1].free_energy_se.powi(2)).sqrt();
        if pair[1].free_energy > pair[0].free_energy + tolerance_sigmas * combined {
            violations += 1;
        }
    }
    violations as f64 / (records.len() - 1) as f64
}

/// Closed-form squared MMD between two isotropic Gaussians under a Gaussian
/// kernel; test oracle for [`mmd_estimate`].
pub fn gaussian_mmd_sq_closed_form(
    mean_x: &[f64],
    var_x: f64,
    mean_y: &[f64],
    var_y: f64,
    bandwidth: f64,
) -> f64 {
    let d = mean_x.len() as f64;
    let b2 = bandwidth * bandwidth;
    let cross = |m1: &[f64], v1: f64, m2: &[f64], v2: f64| -> f64 {
        let s = b2 + v1 + v2;
        (b2 / s).powf(d / 2.0) * (-linalg::dist_sq(m1, m2) / (2.0 * s)).exp()
    };
    cross(mean_x, var_x, mean_x, var_x) + cross(mean_y, var_y, mean_y, var_y)
        - 2.0 * cross(mean_x, var_x, mean_y, var_y)
}

/// Free energy of the base itself (iteration zero shortcut used by runners):
/// equivalent to an empty-chain state estimate.
pub fn free_energy_of_state(state: &FlowState, n: usize, seed: u64) -> Result<Estimate> {
    free_energy_estimate(state, n, seed)
}

/// KL for either flavor of run state: exact bookkeeping for map chains, KDE
/// for particle clouds.
pub fn kl_for_state(state: &FlowState, n: usize, seed: u64) -> Result<Estimate> {
    match (state.scheme(), state.cloud()) {
        (SchemeKind::Ula, Some(cloud)) => kl_estimate_kde(cloud, state.potential()),
        _ => kl_estimate(state, n, seed),
    }
}

/// Free energy for either flavor of run state; for particle clouds the
/// entropy part comes from the KDE cross-check route.
pub fn free_energy_for_state(state: &FlowState, n: usize, seed: u64) -> Result<Estimate> {
    match (state.scheme(), state.cloud()) {
        (SchemeKind::Ula, Some(cloud)) => {
            let logdens = kde_log_density_loo(cloud)?;
            let pot = state.potential();
            let terms: Vec<f64> = cloud
                .iter_points()
                .zip(&logdens)
                .map(|(x, ld)| pot.f_value(x) + ld)
                .collect();
            let (mean, se) = linalg::mean_stderr(&terms);
            Ok(Estimate { value: mean, stderr: se, absolute: true })
        }
        _ => free_energy_estimate(state, n, seed),
    }
}

/// Convenience: free energy of an explicit empirical measure under exact
/// per-point log densities supplied by the caller.
pub fn free_energy_from_cloud(
    cloud: &EmpiricalMeasure,
    logdens: &[f64],
    potential: &DcPotential,
) -> Result<Estimate> {
    if cloud.len() != logdens.len() {
        return Err(Error::SizeMismatch { left: cloud.len(), right: logdens.len() });
    }
    let terms: Vec<f64> = cloud
        .iter_points()
        .zip(logdens)
        .map(|(x, ld)| potential.f_value(x) + ld)
        .collect();
    let (mean, se) = linalg::mean_stderr(&terms);
    Ok(Estimate { value: mean, stderr: se, absolute: true })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::base::BaseDistribution;
    use crate::icnn::IcnnArchitecture;
    use crate::potentials::TargetSpec;
    use approx::assert_relative_eq;

    const LOG_2PI: f64 = 1.8378770664093453;

    fn standard_normal_target(dim: usize) -> TargetSpec {
        TargetSpec::GaussianMixture {
            centers: vec![vec![0.0; dim]],
            weights: vec![1.0],
            sigma: 2.0_f64.sqrt(),
        }
    }

    fn empty_state(dim: usize, base_var: f64) -> FlowState {
        FlowState::new(
            standard_normal_target(dim),
            BaseDistribution::isotropic(dim, base_var),
            IcnnArchitecture::new(dim, vec![4]),
            RegularizerConfig::NegativeEntropy,
            0.1,
            SchemeKind::SemiFb,
        )
        .unwrap()
    }

    #[test]
    fn empty_chain_density_is_base_density() {
        let state = empty_state(2, 1.0);
        let (pts, ld) = chain_log_density(&state, &[0.0, 0.0]).unwrap();
        assert_eq!(pts, vec![0.0, 0.0]);
        assert_relative_eq!(ld[0], -LOG_2PI, epsilon = 1e-12);
    }

    #[test]
    fn kl_of_exact_match_is_zero_within_noise() {
        // base N(0,1) = target N(0,1) in 1d: KL = 0 exactly, estimator within noise
        let state = empty_state(1, 1.0);
        let est = kl_estimate(&state, 4096, 5).unwrap();
        assert!(est.absolute);
        assert!(est.value.abs() <= (2.0 * est.stderr).max(1e-9), "kl = {}", est.value);
    }

    #[test]
    fn kl_of_scaled_base_matches_closed_form() {
        // base N(0, s^2) against N(0,1): KL = (s^2 - 1 - ln s^2) / 2 per dim
        let s2 = 2.5;
        let state = empty_state(1, s2);
        let est = kl_estimate(&state, 8192, 6).unwrap();
        let expect = 0.5 * (s2 - 1.0 - s2.ln());
        assert!(
            (est.value - expect).abs() <= 3.0 * est.stderr + 1e-3,
            "kl = {} vs {expect} (se {})",
            est.value,
            est.stderr
        );
    }

    #[test]
    fn free_energy_of_standard_normal_base_with_zero_potential() {
        // F = ||x||^2/2 at N(0,1): E F = 1/2, entropy term = -(1 + ln 2pi)/2
        let state = empty_state(1, 1.0);
        let est = free_energy_estimate(&state, 8192, 7).unwrap();
        let expect = 0.5 - 0.5 * (1.0 + LOG_2PI);
        assert!((est.value - expect).abs() <= 3.0 * est.stderr + 1e-3);
        // consistency with KL: F - KL = -log Z
        let kl = kl_estimate(&state, 8192, 7).unwrap();
        let log_z = state.potential().log_normalizer().unwrap();
        assert_relative_eq!(est.value - kl.value, -log_z, epsilon = 1e-10);
    }

    #[test]
    fn kde_recovers_gaussian_density_scale() {
        let cloud = EmpiricalMeasure::new(
            1,
            BaseDistribution::standard(1).sample_cloud(4000, 11),
        )
        .unwrap();
        let ld = kde_log_density_loo(&cloud).unwrap();
        // at a typical point the KDE log-density should be near the true one
        let mut err_acc = 0.0;
        let mut count = 0;
        for (p, l) in cloud.iter_points().zip(&ld) {
            if p[0].abs() < 1.0 {
                err_acc += l - BaseDistribution::standard(1).log_density(p);
                count += 1;
            }
        }
        let bias = err_acc / count as f64;
        assert!(bias.abs() < 0.05, "KDE bias {bias}");
    }

    #[test]
    fn rate_fit_recovers_linear_regime() {
        let series: Vec<f64> = (1..=40).map(|n| 3.0 * 0.8_f64.powi(n)).collect();
        let fit = rate_fit(&series, 0.0).unwrap();
        assert_eq!(fit.regime, RateRegime::Linear);
        assert!((fit.rate_constant - 0.8).abs() <= 0.02, "rate {}", fit.rate_constant);
        assert!(fit.r_squared > 0.999);
    }

    #[test]
    fn rate_fit_recovers_sublinear_regime() {
        let series: Vec<f64> = (1..=40).map(|n| (n as f64).powi(-2)).collect();
        let fit = rate_fit(&series, 0.0).unwrap();
        assert_eq!(fit.regime, RateRegime::Sublinear);
        assert!((fit.theta - 0.75).abs() < 0.0375, "theta {}", fit.theta);
        assert!(fit.r_squared > 0.999);
    }

    #[test]
    fn rate_fit_detects_finite_regime() {
        let mut series: Vec<f64> = (1..=12).map(|n| 1.0 / n as f64).collect();
        for v in series.iter_mut().skip(4) {
            *v = 0.25;
        }
        let fit = rate_fit(&series, 0.25).unwrap();
        assert_eq!(fit.regime, RateRegime::Finite);
        assert_eq!(fit.theta, 0.0);
    }

    #[test]
    fn rate_fit_rejects_degenerate_series() {
        let series = vec![1.0; 12];
        assert!(rate_fit(&series, 0.0).is_err());
        assert!(rate_fit(&[1.0, 0.5], 0.0).is_err());
    }

    #[test]
    fn annulus_mass_cases() {
        let on_circle = EmpiricalMeasure::new(2, vec![1.0, 0.0, 0.0, 1.0, -1.0, 0.0]).unwrap();
        assert_eq!(annulus_mass(&on_circle, &[0.0, 0.0], 1.0, 0.05).unwrap(), 1.0);
        let at_center = EmpiricalMeasure::new(2, vec![0.0, 0.0]).unwrap();
        assert_eq!(annulus_mass(&at_center, &[0.0, 0.0], 1.0, 0.2).unwrap(), 0.0);
        assert!(annulus_mass(&at_center, &[0.0, 0.0], 1.0, 0.0).is_err());
    }

    #[test]
    fn mmd_constant_kernel_cancels() {
        let x = EmpiricalMeasure::new(1, vec![0.0, 1.0, 2.0]).unwrap();
        let y = EmpiricalMeasure::new(1, vec![5.0, 6.0]).unwrap();
        let est = mmd_estimate(&x, &y, &Kernel::constant(3.0)).unwrap();
        assert!(est.abs() < 1e-12);
    }

    #[test]
    fn mmd_matches_gaussian_closed_form() {
        let bw = 1.0;
        let n = 3000;
        let x = EmpiricalMeasure::new(
            2,
            BaseDistribution::Gaussian { mean: vec![0.0, 0.0], variance: 1.0 }.sample_cloud(n, 21),
        )
        .unwrap();
        let y = EmpiricalMeasure::new(
            2,
            BaseDistribution::Gaussian { mean: vec![3.0, 0.0], variance: 0.5 }.sample_cloud(n, 22),
        )
        .unwrap();
        let est = mmd_estimate(&x, &y, &Kernel::gaussian(bw)).unwrap();
        let expect = gaussian_mmd_sq_closed_form(&[0.0, 0.0], 1.0, &[3.0, 0.0], 0.5, bw);
        assert!(
            (est - expect).abs() / expect < 0.05,
            "mmd {est} vs closed form {expect}"
        );
    }

    #[test]
    fn mmd_null_within_permutation_band() {
        // same distribution: unbiased estimate near zero
        let pool = BaseDistribution::standard(2).sample_cloud(600, 33);
        let x = EmpiricalMeasure::new(2, pool[..600].to_vec()).unwrap();
        let y = EmpiricalMeasure::new(
            2,
            BaseDistribution::standard(2).sample_cloud(300, 34),
        )
        .unwrap();
        let kernel = Kernel::gaussian(1.0);
        let est = mmd_estimate(&x, &y, &kernel).unwrap();
        // permutation-style null scale: resample label splits from the pooled cloud
        let mut all = x.points().to_vec();
        all.extend_from_slice(y.points());
        let pooled = EmpiricalMeasure::new(2, all).unwrap();
        let mut null_vals = Vec::new();
        for s in 0..24u64 {
            let mut rng = crate::rng::seeded(100 + s);
            let mut idx: Vec<usize> = (0..pooled.len()).collect();
            // Fisher-Yates
            for i in (1..idx.len()).rev() {
                let j = rand::Rng::random_range(&mut rng, 0..=i);
                idx.swap(i, j);
            }
            let xa: Vec<f64> = idx[..300].iter().flat_map(|&i| pooled.point(i).to_vec()).collect();
            let xb: Vec<f64> =
                idx[300..600].iter().flat_map(|&i| pooled.point(i).to_vec()).collect();
            null_vals.push(
                mmd_estimate(
                    &EmpiricalMeasure::new(2, xa).unwrap(),
                    &EmpiricalMeasure::new(2, xb).unwrap(),
                    &kernel,
                )
                .unwrap(),
            );
        }
        let (null_mean, _) = linalg::mean_stderr(&null_vals);
        let null_sd = (null_vals.iter().map(|v| (v - null_mean) * (v - null_mean)).sum::<f64>()
            / (null_vals.len() as f64 - 1.0))
            .sqrt();
        assert!(
            est.abs() <= 3.0 * null_sd + null_mean.abs() + 1e-6,
            "null MMD {est} outside 3 sigma of permutation null ({null_mean} +- {null_sd})"
        );
    }

    #[test]
    fn spearman_detects_monotone_series() {
        let x: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| (-v).exp()).collect();
        let rho = spearman_rho(&x, &y).unwrap();
        assert_relative_eq!(rho, -1.0, epsilon = 1e-12);
    }

    #[test]
    fn csv_round_trip() {
        let rec = MetricsRecord {
            iteration: 7,
            free_energy: -0.25,
            free_energy_se: 0.01,
            kl: Some(0.5),
            kl_se: Some(0.02),
            grad_mapping_sq: None,
            w2_to_prev: Some(0.1),
            wallclock_s: 1.5,
        };
        let row = rec.to_csv_row();
        let back = MetricsRecord::from_csv_row(&row).unwrap();
        assert_eq!(rec, back);
        assert_eq!(CSV_HEADER.split(',').count(), 8);
    }
}
