//! On-disk layout of a run:
//!
//! ```text
//! <out>/run_manifest.json
//! <out>/<family>/{estimates,histograms,summary}.csv
//! <out>/diagnostics/<family>_roc.csv, <family>_calibration.csv
//! <out>/diagnostics/truth_calibration.csv
//! ```

use serde::Serialize;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{ExptError, RunResult};
use crate::evaluate::{CalibrationBin, EvalReport};

pub const ESTIMATES_FILE: &str = "estimates.csv";
pub const HISTOGRAMS_FILE: &str = "histograms.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const MANIFEST_FILE: &str = "run_manifest.json";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExptError + '_ {
    move |source| ExptError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, ExptError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(io_err(path))?))
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), ExptError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for row in rows {
        w.serialize(row).map_err(|e| ExptError::Format(e.to_string()))?;
    }
    w.flush().map_err(io_err(path))
}

/// Estimates, histograms and summary CSVs for one family into `dir`.
pub fn write_family_report(report: &EvalReport, dir: &Path, bins: usize) -> Result<(), ExptError> {
    report.write_estimates_csv(create(&dir.join(ESTIMATES_FILE))?)?;
    report.write_histograms_csv(create(&dir.join(HISTOGRAMS_FILE))?, bins)?;
    report.write_summary_csv(create(&dir.join(SUMMARY_FILE))?)?;
    Ok(())
}

pub fn read_family_report(dir: &Path) -> Result<EvalReport, ExptError> {
    let path = dir.join(ESTIMATES_FILE);
    Ok(EvalReport::read_estimates_csv(File::open(&path).map_err(io_err(&path))?)?)
}

#[derive(Serialize)]
struct ManifestFamily<'a> {
    label: &'a str,
    completed: usize,
    failures: &'a [(usize, String)],
    replications: Vec<ManifestReplication<'a>>,
    auc: Option<f64>,
}

#[derive(Serialize)]
struct ManifestReplication<'a> {
    replication: usize,
    model_digest: &'a str,
    matching_digest: &'a str,
}

#[derive(Serialize)]
struct Manifest<'a> {
    format: &'static str,
    version: &'static str,
    config: &'a super::RunConfig,
    env_digest: &'a str,
    causal_digest: &'a str,
    training_digest: &'a str,
    causal_diagnostics: &'a crate::envgen::CausalDiagnostics,
    families: Vec<ManifestFamily<'a>>,
    elapsed_secs: f64,
}

fn write_calibration(path: &Path, bins: &[CalibrationBin]) -> Result<(), ExptError> {
    write_rows(path, bins)
}

pub fn write_run_outputs(result: &RunResult, out: &Path) -> Result<(), ExptError> {
    let bins = result.config.run.histogram_bins;
    let diag = out.join("diagnostics");
    for family in &result.families {
        write_family_report(&family.report(), &out.join(&family.label), bins)?;
        if let Some(d) = &family.diagnostics {
            write_rows(&diag.join(format!("{}_roc.csv", family.label)), &d.roc.points)?;
            write_calibration(&diag.join(format!("{}_calibration.csv", family.label)), &d.calibration)?;
        }
    }
    if !result.truth_calibration.is_empty() {
        write_calibration(&diag.join("truth_calibration.csv"), &result.truth_calibration)?;
    }
    let manifest = Manifest {
        format: "curse-lab-run",
        version: env!("CARGO_PKG_VERSION"),
        config: &result.config,
        env_digest: &result.env_digest,
        causal_digest: &result.causal_digest,
        training_digest: &result.training_digest,
        causal_diagnostics: &result.causal_diagnostics,
        families: result
            .families
            .iter()
            .map(|f| ManifestFamily {
                label: &f.label,
                completed: f.replications.len(),
                failures: &f.failures,
                replications: f
                    .replications
                    .iter()
                    .map(|r| ManifestReplication {
                        replication: r.replication,
                        model_digest: &r.model_digest,
                        matching_digest: &r.matching_digest,
                    })
                    .collect(),
                auc: f.diagnostics.as_ref().map(|d| d.roc.auc),
            })
            .collect(),
        elapsed_secs: result.elapsed_secs,
    };
    let path = out.join(MANIFEST_FILE);
    let mut w = create(&path)?;
    serde_json::to_writer_pretty(&mut w, &manifest).map_err(|e| ExptError::Format(e.to_string()))?;
    w.flush().map_err(io_err(&path))
}
