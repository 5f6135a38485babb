//! Executes one experiment config: advances the scheme, evaluates metrics
//! with common random numbers, and writes metrics (CSV and JSON lines),
//! objective traces, sample dumps, state snapshots, and a manifest.

use std::fs::File;
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};
use std::time::Instant;

use dcflow::jko::ObjectiveSample;
use dcflow::metrics::{self, Estimate, MetricsRecord};
use dcflow::schemes::UlaChains;
use dcflow::transport::{coupling_displacement_cost, w2_exact, EmpiricalMeasure};
use dcflow::{Error, FlowState, Result, SchemeKind};

use crate::config::{ExperimentConfig, Manifest, MetricName};

pub struct RunOutput {
    pub dir: PathBuf,
    pub records: Vec<MetricsRecord>,
}

const EVAL_SEED_LABEL: u64 = 0xea10_0001;
const DUMP_SEED_LABEL: u64 = 0xd0_0d;

pub fn run(config: &ExperimentConfig) -> Result<RunOutput> {
    let dir = config.resolved_output_dir();
    std::fs::create_dir_all(&dir)?;
    let manifest = Manifest::new(config);
    write_json(&dir.join("manifest.json"), &manifest)?;

    let mut sink = MetricsSink::new(&dir)?;
    let records = match config.scheme {
        SchemeKind::SemiFb | SchemeKind::Fb => run_map_scheme(config, &dir, &mut sink)?,
        SchemeKind::Ula => run_ula(config, &dir, &mut sink)?,
    };
    sink.flush()?;
    Ok(RunOutput { dir, records })
}

fn run_map_scheme(
    config: &ExperimentConfig,
    dir: &Path,
    sink: &mut MetricsSink,
) -> Result<Vec<MetricsRecord>> {
    let start = Instant::now();
    let eval_seed = dcflow::rng::mix(config.seed, EVAL_SEED_LABEL);
    let want = |m: MetricName| config.eval.metrics.contains(&m);

    let mut state = FlowState::new(
        config.target.clone(),
        config.base.clone(),
        config.architecture()?,
        config.regularizer.0.clone(),
        config.eta,
        config.scheme,
    )?;
    let mut trace_file = ObjectiveTraceSink::new(dir)?;
    let mut records = Vec::with_capacity(config.outer_iters);
    let mut prev_cloud = state.sample_mu(config.eval.n_samples, eval_seed)?;

    for k in 1..=config.outer_iters {
        let cfg_k = config.jko_config_for(k)?;
        let (next, trace) = state.step(&cfg_k)?;
        state = next;
        trace_file.append(k, &trace)?;

        let cloud = state.sample_mu(config.eval.n_samples, eval_seed)?;
        let fe = metrics::free_energy_for_state(&state, config.eval.n_samples, eval_seed)?;
        let kl = if want(MetricName::Kl) {
            Some(metrics::kl_for_state(&state, config.eval.n_samples, eval_seed)?)
        } else {
            None
        };
        let grad_mapping_sq = if want(MetricName::GradMapping) {
            let cost = coupling_displacement_cost(&prev_cloud, &cloud)?;
            Some(cost / (config.eta * config.eta))
        } else {
            None
        };
        let w2_to_prev = if want(MetricName::W2) {
            let a = prev_cloud.head(config.eval.subsample)?;
            let b = cloud.head(config.eval.subsample)?;
            Some(w2_exact(&a, &b)?.w2())
        } else {
            None
        };
        let record = MetricsRecord {
            iteration: k,
            free_energy: fe.value,
            free_energy_se: fe.stderr,
            kl: kl.as_ref().map(|e| e.value),
            kl_se: kl.as_ref().map(|e| e.stderr),
            grad_mapping_sq,
            w2_to_prev,
            wallclock_s: start.elapsed().as_secs_f64(),
        };
        sink.append(&record)?;
        records.push(record);
        prev_cloud = cloud;

        if config.snapshot_every > 0 && k % config.snapshot_every == 0 && k != config.outer_iters {
            state.save_json(&dir.join(format!("state_{k:04}.json")))?;
        }
    }

    state.save_json(&dir.join("state_final.json"))?;
    let final_cloud =
        state.sample_mu(config.eval.n_samples, dcflow::rng::mix(config.seed, DUMP_SEED_LABEL))?;
    write_samples_csv(&dir.join("samples_final.csv"), &final_cloud)?;
    Ok(records)
}

fn run_ula(
    config: &ExperimentConfig,
    dir: &Path,
    sink: &mut MetricsSink,
) -> Result<Vec<MetricsRecord>> {
    let start = Instant::now();
    let potential = config.target.build()?;
    let mut chains = UlaChains::init(&config.base, config.ula.n_chains, config.seed)?;
    let mut records = Vec::new();
    let mut done = 0usize;
    while done < config.outer_iters {
        let step = config.ula.eval_every.min(config.outer_iters - done);
        chains.advance(&potential, config.eta, step)?;
        done += step;
        let cloud = chains.cloud()?;
        let fe = ula_free_energy(&cloud, &potential)?;
        let kl = metrics::kl_estimate_kde(&cloud, &potential)?;
        let record = MetricsRecord {
            iteration: done,
            free_energy: fe.value,
            free_energy_se: fe.stderr,
            kl: Some(kl.value),
            kl_se: Some(kl.stderr),
            grad_mapping_sq: None,
            w2_to_prev: None,
            wallclock_s: start.elapsed().as_secs_f64(),
        };
        sink.append(&record)?;
        records.push(record);
    }
    let cloud = chains.cloud()?;
    let mut state = FlowState::new(
        config.target.clone(),
        config.base.clone(),
        config.architecture()?,
        config.regularizer.0.clone(),
        config.eta,
        SchemeKind::Ula,
    )?
    .with_cloud(cloud.clone())?;
    state.set_iteration(config.outer_iters);
    state.save_json(&dir.join("state_final.json"))?;
    write_samples_csv(&dir.join("samples_final.csv"), &cloud)?;
    Ok(records)
}

fn ula_free_energy(cloud: &EmpiricalMeasure, potential: &dcflow::DcPotential) -> Result<Estimate> {
    let logdens = metrics::kde_log_density_loo(cloud)?;
    let vals: Vec<f64> = cloud
        .iter_points()
        .zip(&logdens)
        .map(|(x, ld)| potential.f_value(x) + ld)
        .collect();
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    Ok(Estimate { value: mean, stderr: (var / n).sqrt(), absolute: true })
}

// ---------------------------------------------------------------------------
// Output files
// ---------------------------------------------------------------------------

struct MetricsSink {
    csv: BufWriter<File>,
    jsonl: BufWriter<File>,
}

impl MetricsSink {
    fn new(dir: &Path) -> Result<Self> {
        let mut csv = BufWriter::new(File::create(dir.join("metrics.csv"))?);
        writeln!(csv, "{}", metrics::CSV_HEADER)?;
        let jsonl = BufWriter::new(File::create(dir.join("metrics.jsonl"))?);
        Ok(Self { csv, jsonl })
    }

    fn append(&mut self, record: &MetricsRecord) -> Result<()> {
        writeln!(self.csv, "{}", record.to_csv_row())?;
        writeln!(self.jsonl, "{}", serde_json::to_string(record)?)?;
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        self.csv.flush()?;
        self.jsonl.flush()?;
        Ok(())
    }
}

struct ObjectiveTraceSink {
    file: BufWriter<File>,
}

impl ObjectiveTraceSink {
    fn new(dir: &Path) -> Result<Self> {
        let mut file = BufWriter::new(File::create(dir.join("objective_trace.csv"))?);
        writeln!(file, "outer_iteration,inner_iteration,total,w2_term,potential_term,reg_term,rate")?;
        Ok(Self { file })
    }

    fn append(&mut self, outer: usize, trace: &[ObjectiveSample]) -> Result<()> {
        for s in trace {
            writeln!(
                self.file,
                "{},{},{},{},{},{},{}",
                outer, s.iteration, s.total, s.w2_term, s.potential_term, s.reg_term, s.rate
            )?;
        }
        self.file.flush()?;
        Ok(())
    }
}

pub fn write_samples_csv(path: &Path, cloud: &EmpiricalMeasure) -> Result<()> {
    let mut file = BufWriter::new(File::create(path)?);
    let header: Vec<String> = (0..cloud.dim()).map(|k| format!("x{k}")).collect();
    writeln!(file, "{}", header.join(","))?;
    for p in cloud.iter_points() {
        let row: Vec<String> = p.iter().map(|v| format!("{v}")).collect();
        writeln!(file, "{}", row.join(","))?;
    }
    file.flush()?;
    Ok(())
}

/// Header-only when `n = 0`; otherwise n deterministic draws from the
/// snapshot's measure.
pub fn dump_samples(snapshot: &Path, n: usize, seed: u64, out: &Path) -> Result<()> {
    let state = FlowState::load_json(snapshot)?;
    if n == 0 {
        let mut file = BufWriter::new(File::create(out)?);
        let header: Vec<String> = (0..state.dim()).map(|k| format!("x{k}")).collect();
        writeln!(file, "{}", header.join(","))?;
        file.flush()?;
        return Ok(());
    }
    let cloud = state.sample_mu(n, seed)?;
    write_samples_csv(out, &cloud)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path)?;
    let mut writer = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut writer, value)?;
    writer.flush()?;
    Ok(())
}

/// Distinguish config problems (exit 2), runtime divergence (exit 3), and
/// I/O failures (exit 4).
pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Io(_) => 4,
        Error::Diverged { .. } | Error::NonFinite(_) => 3,
        Error::Json(_) => 2,
        _ => 2,
    }
}
