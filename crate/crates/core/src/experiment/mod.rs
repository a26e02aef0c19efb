//! Training loop, evaluation and the multi-seed, ablation and sweep runners.

mod output;
mod runners;
mod train;

pub use output::{git_state, write_manifest, RunManifest};
pub use runners::{run_ablation, run_multiseed, run_sweep_views, AblationReport, MultiSeedReport, SeedOutcome, SweepReport};
pub use train::{evaluate, evaluate_model, train, EpochLog, TrainResult};

use std::path::Path;

use crate::config::ExperimentConfig;
use crate::data::{load_splits, official_sizes, verify_dataset, Dataset, IntegrityReport, SplitName};
use crate::error::{Error, Result};

/// Decoded train, validation and test splits.
#[derive(Debug, Clone)]
pub struct RunData {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub integrity: IntegrityReport,
}

impl RunData {
    /// Verifies the layout, then decodes every split at the model resolution.
    pub fn load(cfg: &ExperimentConfig) -> Result<Self> {
        let root = &cfg.dataset.root;
        if !root.is_dir() {
            return Err(Error::Config(format!("dataset root {} is not a directory", root.display())));
        }
        let manifests = load_splits(&cfg.dataset.splits_path())?;
        let expected = official_sizes(&cfg.dataset.id);
        let integrity = verify_dataset(&manifests, root, expected.as_ref().map(|e| e.as_slice()));
        if !integrity.passed() {
            return Err(Error::Invalid(format!("dataset failed verification:\n{}", integrity.render_text())));
        }
        let load = |name: SplitName, limit: usize| -> Result<Dataset> {
            let m = manifests.iter().find(|m| m.name == name).expect("all three splits loaded");
            let mut m = m.clone();
            if limit > 0 {
                m.entries.truncate(limit);
            }
            Dataset::load(&m, root, cfg.model.input_size)
        };
        Ok(Self {
            train: load(SplitName::Train, cfg.train.train_limit)?,
            val: load(SplitName::Val, cfg.train.eval_limit)?,
            test: load(SplitName::Test, cfg.train.eval_limit)?,
            integrity,
        })
    }
}

pub(crate) fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}
