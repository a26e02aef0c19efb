use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use crate::config::{Ablation, ExperimentConfig};
use crate::error::{Error, Result};
use crate::experiment::output::{f4, metric_row, r4, write_csv, write_manifest, AggregateJson, RunManifest, METRICS_HEADER};
use crate::experiment::train::{evaluate_model, train};
use crate::experiment::RunData;
use crate::metrics::{Aggregate, Metrics, METRIC_NAMES};

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum SeedOutcome {
    Completed {
        seed: u64,
        best_epoch: usize,
        val: Metrics,
        test: Metrics,
    },
    Failed {
        seed: u64,
        error: String,
    },
}

#[derive(Debug, Clone, Serialize)]
pub struct MultiSeedReport {
    pub config_hash: String,
    pub outcomes: Vec<SeedOutcome>,
    pub test: Option<Aggregate>,
    pub val: Option<Aggregate>,
    pub wall_time_seconds: f64,
}

impl MultiSeedReport {
    pub fn completed(&self) -> usize {
        self.outcomes.iter().filter(|o| matches!(o, SeedOutcome::Completed { .. })).count()
    }

    pub fn failed_seeds(&self) -> Vec<u64> {
        self.outcomes
            .iter()
            .filter_map(|o| match o {
                SeedOutcome::Failed { seed, .. } => Some(*seed),
                _ => None,
            })
            .collect()
    }
}

#[derive(Serialize)]
struct AggregateFile<'a> {
    config_hash: &'a str,
    ablation: String,
    git_state: String,
    std_convention: &'static str,
    seeds: Vec<u64>,
    failed_seeds: Vec<u64>,
    wall_time_seconds: f64,
    test: Option<AggregateJson>,
    val: Option<AggregateJson>,
}

/// Trains and evaluates every seed in `cfg.train.seeds` under `out_dir/seed_<n>`.
/// A failing seed is reported and skipped; the call fails only when none complete.
pub fn run_multiseed(cfg: &ExperimentConfig, data: &RunData, out_dir: &Path, command: &str, overrides: &[String]) -> Result<MultiSeedReport> {
    cfg.validate()?;
    let start = Instant::now();
    write_manifest(out_dir, &RunManifest::new(cfg, command, overrides, Some(&data.integrity)))?;
    let mut outcomes = Vec::new();
    for &seed in &cfg.train.seeds {
        let run = train(cfg, seed, data, &out_dir.join(format!("seed_{seed}"))).and_then(|r| {
            let (test, _) = evaluate_model(&r.model, &data.test, &cfg.data, cfg.train.batch_size)?;
            Ok(SeedOutcome::Completed {
                seed,
                best_epoch: r.best_epoch,
                val: r.best_val,
                test,
            })
        });
        outcomes.push(run.unwrap_or_else(|e| {
            log::warn!("seed {seed} failed: {e}");
            SeedOutcome::Failed {
                seed,
                error: e.to_string(),
            }
        }));
    }
    let pick = |test: bool| -> Vec<Metrics> {
        outcomes
            .iter()
            .filter_map(|o| match o {
                SeedOutcome::Completed { val, test: t, .. } => Some(if test { *t } else { *val }),
                _ => None,
            })
            .collect()
    };
    let report = MultiSeedReport {
        config_hash: cfg.hash(),
        test: Aggregate::of(&pick(true)),
        val: Aggregate::of(&pick(false)),
        outcomes,
        wall_time_seconds: start.elapsed().as_secs_f64(),
    };

    let mut rows = Vec::new();
    for o in &report.outcomes {
        if let SeedOutcome::Completed { seed, val, test, .. } = o {
            rows.push(metric_row(*seed, "val", val));
            rows.push(metric_row(*seed, "test", test));
        }
    }
    write_csv(&out_dir.join("metrics.csv"), &METRICS_HEADER, &rows)?;
    let file = AggregateFile {
        config_hash: &report.config_hash,
        ablation: cfg.ablation().map_or_else(|| "custom".into(), |a| a.to_string()),
        git_state: super::git_state(),
        std_convention: "population",
        seeds: cfg.train.seeds.clone(),
        failed_seeds: report.failed_seeds(),
        wall_time_seconds: r4(report.wall_time_seconds),
        test: report.test.as_ref().map(AggregateJson::from),
        val: report.val.as_ref().map(AggregateJson::from),
    };
    std::fs::write(out_dir.join("aggregate.json"), serde_json::to_string_pretty(&file)?)?;
    if report.completed() == 0 {
        return Err(Error::Invalid(format!("all {} seeds failed", report.outcomes.len())));
    }
    if !report.failed_seeds().is_empty() {
        log::warn!("aggregated over {} of {} seeds", report.completed(), report.outcomes.len());
    }
    Ok(report)
}

fn summary_cells(a: Option<&Aggregate>) -> Vec<String> {
    match a {
        Some(a) => a.cells().iter().flat_map(|c| [f4(c.mean), f4(c.std)]).collect(),
        None => vec![String::new(); 8],
    }
}

fn summary_header(first: &'static str) -> Vec<String> {
    let mut h = vec![first.to_string()];
    for m in METRIC_NAMES {
        h.push(format!("{m}_mean"));
        h.push(format!("{m}_std"));
    }
    h.push("completed_seeds".into());
    h.push("config_hash".into());
    h
}

fn markdown_table(first: &str, rows: &[(String, Option<&Aggregate>)]) -> String {
    let mut s = format!("| {first} | ACC | P | R | F1 |\n|---|---|---|---|---|\n");
    for (name, agg) in rows {
        let cells = match agg {
            Some(a) => a.cells().iter().map(|c| c.cell()).collect::<Vec<_>>().join(" | "),
            None => "failed | failed | failed | failed".into(),
        };
        s.push_str(&format!("| {name} | {cells} |\n"));
    }
    s.push_str("\nTest-split metrics in percent, mean_{±std} over seeds (population std).\n");
    s
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationReport {
    pub rows: Vec<(Ablation, MultiSeedReport)>,
}

/// Runs AB1..AB5 under `out_dir/AB<n>` and writes `ablation.csv` and `ablation.md`.
pub fn run_ablation(cfg: &ExperimentConfig, data: &RunData, out_dir: &Path, command: &str, overrides: &[String]) -> Result<AblationReport> {
    cfg.validate()?;
    write_manifest(out_dir, &RunManifest::new(cfg, command, overrides, Some(&data.integrity)))?;
    let mut rows = Vec::new();
    for level in Ablation::ALL {
        let c = cfg.with_ablation(level);
        log::info!("ablation {level}: {}", level.description());
        let report = run_multiseed(&c, data, &out_dir.join(level.as_str()), command, overrides)?;
        rows.push((level, report));
    }
    let header = summary_header("level");
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|(l, r)| {
            let mut row = vec![l.to_string()];
            row.extend(summary_cells(r.test.as_ref()));
            row.push(r.completed().to_string());
            row.push(r.config_hash.clone());
            row
        })
        .collect();
    write_csv(&out_dir.join("ablation.csv"), &header, &csv_rows)?;
    let md: Vec<(String, Option<&Aggregate>)> = rows
        .iter()
        .map(|(l, r)| (format!("{l} ({})", l.description()), r.test.as_ref()))
        .collect();
    std::fs::write(out_dir.join("ablation.md"), markdown_table("Level", &md))?;
    Ok(AblationReport { rows })
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub rows: Vec<(usize, MultiSeedReport)>,
}

/// One multi-seed run per view count under `out_dir/views_<k>`, plus
/// `sweep.csv` (plot data) and `sweep.md`.
pub fn run_sweep_views(cfg: &ExperimentConfig, views: &[usize], data: &RunData, out_dir: &Path, command: &str, overrides: &[String]) -> Result<SweepReport> {
    if views.is_empty() || views.contains(&0) {
        return Err(Error::Config("view counts must be >= 1".into()));
    }
    cfg.validate()?;
    write_manifest(out_dir, &RunManifest::new(cfg, command, overrides, Some(&data.integrity)))?;
    let mut rows = Vec::new();
    for &k in views {
        let mut c = cfg.clone();
        c.model.num_views = k;
        log::info!("sweep: {k} views");
        rows.push((k, run_multiseed(&c, data, &out_dir.join(format!("views_{k}")), command, overrides)?));
    }
    let header = summary_header("views");
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|(k, r)| {
            let mut row = vec![k.to_string()];
            row.extend(summary_cells(r.test.as_ref()));
            row.push(r.completed().to_string());
            row.push(r.config_hash.clone());
            row
        })
        .collect();
    write_csv(&out_dir.join("sweep.csv"), &header, &csv_rows)?;
    let md: Vec<(String, Option<&Aggregate>)> = rows.iter().map(|(k, r)| (k.to_string(), r.test.as_ref())).collect();
    std::fs::write(out_dir.join("sweep.md"), markdown_table("Views", &md))?;
    Ok(SweepReport { rows })
}
