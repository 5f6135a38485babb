//! Align completed runs by iteration and summarize per scheme: final KL, the
//! area under the KL curve, and final free energy, plus pairwise final-KL
//! ratios between schemes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use dcflow::metrics::MetricsRecord;
use dcflow::{Error, Result};

use crate::config::Manifest;

#[derive(Debug)]
pub struct RunData {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub records: Vec<MetricsRecord>,
}

pub fn load_run(dir: &Path) -> Result<RunData> {
    let manifest_text = std::fs::read_to_string(dir.join("manifest.json"))?;
    let manifest: Manifest = serde_json::from_str(&manifest_text)?;
    let metrics_text = std::fs::read_to_string(dir.join("metrics.csv"))?;
    let mut lines = metrics_text.lines();
    match lines.next() {
        Some(header) if header == dcflow::metrics::CSV_HEADER => {}
        _ => {
            return Err(Error::InvalidParameter(format!(
                "{}: metrics.csv missing the expected header",
                dir.display()
            )))
        }
    }
    let mut records = Vec::new();
    for line in lines {
        if !line.is_empty() {
            records.push(MetricsRecord::from_csv_row(line)?);
        }
    }
    if records.is_empty() {
        return Err(Error::InvalidParameter(format!("{}: metrics.csv has no rows", dir.display())));
    }
    Ok(RunData { dir: dir.to_path_buf(), manifest, records })
}

/// Trapezoidal area under the KL curve over the iteration axis.
fn kl_auc(records: &[MetricsRecord]) -> Option<f64> {
    let pts: Vec<(f64, f64)> =
        records.iter().filter_map(|r| r.kl.map(|kl| (r.iteration as f64, kl))).collect();
    if pts.len() < 2 {
        return pts.first().map(|&(_, kl)| kl);
    }
    let mut acc = 0.0;
    for w in pts.windows(2) {
        acc += 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0);
    }
    Some(acc)
}

#[derive(Debug, Clone)]
pub struct SchemeSummary {
    pub scheme: String,
    pub runs: usize,
    pub final_kl_mean: Option<f64>,
    pub kl_auc_mean: Option<f64>,
    pub final_free_energy_mean: f64,
}

pub struct ComparisonTable {
    pub rows: Vec<SchemeSummary>,
    pub ratios: Vec<(String, String, f64)>,
}

impl ComparisonTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("scheme,runs,final_kl_mean,kl_auc_mean,final_free_energy_mean\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.scheme,
                r.runs,
                r.final_kl_mean.map(|v| v.to_string()).unwrap_or_default(),
                r.kl_auc_mean.map(|v| v.to_string()).unwrap_or_default(),
                r.final_free_energy_mean
            ));
        }
        out
    }
}

pub fn compare(dirs: &[PathBuf]) -> Result<ComparisonTable> {
    if dirs.is_empty() {
        return Err(Error::InvalidParameter("compare needs at least one run directory".into()));
    }
    let runs: Vec<RunData> = dirs.iter().map(|d| load_run(d)).collect::<Result<_>>()?;
    let reference = &runs[0];
    for run in &runs[1..] {
        if run.manifest.config.target != reference.manifest.config.target {
            return Err(Error::InvalidParameter(format!(
                "incompatible targets: {} and {} configure different targets",
                reference.dir.display(),
                run.dir.display()
            )));
        }
        if run.manifest.config.eval != reference.manifest.config.eval {
            return Err(Error::InvalidParameter(format!(
                "incompatible eval settings: {} and {}",
                reference.dir.display(),
                run.dir.display()
            )));
        }
    }

    let mut by_scheme: BTreeMap<String, Vec<&RunData>> = BTreeMap::new();
    for run in &runs {
        by_scheme.entry(run.manifest.config.scheme.to_string()).or_default().push(run);
    }

    let mut rows = Vec::new();
    for (scheme, group) in &by_scheme {
        let finals_kl: Vec<f64> =
            group.iter().filter_map(|r| r.records.last().and_then(|rec| rec.kl)).collect();
        let aucs: Vec<f64> = group.iter().filter_map(|r| kl_auc(&r.records)).collect();
        let finals_fe: Vec<f64> =
            group.iter().filter_map(|r| r.records.last().map(|rec| rec.free_energy)).collect();
        rows.push(SchemeSummary {
            scheme: scheme.clone(),
            runs: group.len(),
            final_kl_mean: mean_of(&finals_kl),
            kl_auc_mean: mean_of(&aucs),
            final_free_energy_mean: mean_of(&finals_fe).unwrap_or(f64::NAN),
        });
    }

    let mut ratios = Vec::new();
    for i in 0..rows.len() {
        for j in 0..rows.len() {
            if i != j {
                if let (Some(a), Some(b)) = (rows[i].final_kl_mean, rows[j].final_kl_mean) {
                    if b != 0.0 {
                        ratios.push((rows[i].scheme.clone(), rows[j].scheme.clone(), a / b));
                    }
                }
            }
        }
    }
    Ok(ComparisonTable { rows, ratios })
}

fn mean_of(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}
