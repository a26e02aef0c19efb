use std::path::Path;
use std::process::Command;

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::data::IntegrityReport;
use crate::error::{Error, Result};
use crate::experiment::train::EpochLog;
use crate::metrics::{Aggregate, Metrics};

pub(crate) fn f4(x: f64) -> String {
    format!("{x:.4}")
}

/// Rounds to 4 decimals for JSON output.
pub(crate) fn r4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

fn csv_err(e: csv::Error) -> Error {
    Error::Invalid(format!("csv: {e}"))
}

pub(crate) fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn write_training_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    let rows: Vec<Vec<String>> = log
        .iter()
        .map(|e| {
            let mut r = vec![e.epoch.to_string()];
            r.extend([e.loss_total, e.loss_o, e.loss_f, e.loss_ip].map(f4));
            r.extend(e.val.values().map(f4));
            r
        })
        .collect();
    write_csv(
        path,
        &["epoch", "loss_total", "loss_o", "loss_f", "loss_ip", "val_acc", "val_precision", "val_recall", "val_f1"],
        &rows,
    )
}

pub(crate) fn metric_row(seed: u64, split: &str, m: &Metrics) -> Vec<String> {
    let mut r = vec![seed.to_string(), split.to_string()];
    r.extend(m.values().map(f4));
    r
}

pub(crate) const METRICS_HEADER: [&str; 6] = ["seed", "split", "acc", "precision", "recall", "f1"];

#[derive(Debug, Clone, Serialize)]
pub(crate) struct MeanStdJson {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, Serialize)]
pub(crate) struct AggregateJson {
    pub acc: MeanStdJson,
    pub precision: MeanStdJson,
    pub recall: MeanStdJson,
    pub f1: MeanStdJson,
    pub runs: usize,
    pub row: String,
}

impl From<&Aggregate> for AggregateJson {
    fn from(a: &Aggregate) -> Self {
        let c = |m: crate::metrics::MeanStd| MeanStdJson {
            mean: r4(m.mean),
            std: r4(m.std),
        };
        Self {
            acc: c(a.acc),
            precision: c(a.precision),
            recall: c(a.recall),
            f1: c(a.f1),
            runs: a.runs,
            row: a.row(),
        }
    }
}

/// Short git revision of the working directory, `unknown` outside a repository.
pub fn git_state() -> String {
    Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub timestamp: String,
    pub command: String,
    pub git_state: String,
    pub config_hash: String,
    pub ablation: String,
    pub seeds: Vec<u64>,
    /// Every key with its resolved value, defaults included.
    pub config: Vec<String>,
    pub overrides: Vec<String>,
    pub dataset: Option<IntegrityReport>,
    /// Annotation-to-label rules recorded by the converter, when the splits came from it.
    pub label_rules: Option<Vec<String>>,
    pub notes: Vec<String>,
}

impl RunManifest {
    pub fn new(cfg: &ExperimentConfig, command: &str, overrides: &[String], dataset: Option<&IntegrityReport>) -> Self {
        Self {
            tool: "pemv".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            command: command.into(),
            git_state: git_state(),
            config_hash: cfg.hash(),
            ablation: cfg.ablation().map_or_else(|| "custom".into(), |a| a.to_string()),
            seeds: cfg.train.seeds.clone(),
            config: cfg.canonical_text().lines().map(str::to_string).collect(),
            overrides: overrides.to_vec(),
            dataset: dataset.cloned(),
            label_rules: crate::data::voc::recorded_rules(&cfg.dataset.splits_path()),
            notes: vec![
                "metrics are percentages with malignant (label 1) as the positive class".into(),
                "standard deviations are population standard deviations over seeds".into(),
                "model selection: best validation accuracy, ties keep the earlier epoch".into(),
            ],
        }
    }
}

/// Writes `run_manifest.json`; an existing manifest is never replaced.
pub fn write_manifest(dir: &Path, manifest: &RunManifest) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join("run_manifest.json");
    let mut f = std::fs::OpenOptions::new().write(true).create_new(true).open(&path).map_err(|e| {
        Error::Invalid(format!("cannot create {}: {e} (use a fresh output directory)", path.display()))
    })?;
    std::io::Write::write_all(&mut f, serde_json::to_string_pretty(manifest)?.as_bytes())?;
    Ok(())
}
