//! Flat `section.key=value` experiment configuration.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::PreprocessConfig;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::objectives::LossConfig;
use crate::optim::AdamWConfig;

/// Cumulative component ladder: AB1 is the plain backbone classifier,
/// each later level switches one more component on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Ablation {
    AB1,
    AB2,
    AB3,
    AB4,
    AB5,
}

/// Which components an ablation level enables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Toggles {
    pub mvfe: bool,
    pub pbc: bool,
    pub ip: bool,
    pub lf: bool,
}

impl Toggles {
    pub fn count(&self) -> usize {
        [self.mvfe, self.pbc, self.ip, self.lf].iter().filter(|&&b| b).count()
    }
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [Ablation::AB1, Ablation::AB2, Ablation::AB3, Ablation::AB4, Ablation::AB5];

    pub fn toggles(self) -> Toggles {
        let n = self as usize;
        Toggles {
            mvfe: n >= 1,
            pbc: n >= 2,
            ip: n >= 3,
            lf: n >= 4,
        }
    }

    /// Level whose toggles match exactly, if the combination lies on the ladder.
    pub fn from_toggles(t: Toggles) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.toggles() == t)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::AB1 => "AB1",
            Ablation::AB2 => "AB2",
            Ablation::AB3 => "AB3",
            Ablation::AB4 => "AB4",
            Ablation::AB5 => "AB5",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Ablation::AB1 => "backbone + global feature (ERM baseline)",
            Ablation::AB2 => "+ multi-view mediator fusion",
            Ablation::AB3 => "+ prototype-based correction",
            Ablation::AB4 => "+ information-purity regularizer",
            Ablation::AB5 => "+ fusion loss (full model)",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown ablation level `{s}` (expected AB1..AB5)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    /// `tn3k`, `tn5000` or any other name; known names enable split-size checks.
    pub id: String,
    pub root: PathBuf,
    /// Directory holding `train.txt`, `val.txt`, `test.txt`; relative paths resolve against `root`.
    pub split_dir: PathBuf,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            id: "tn3k".into(),
            root: PathBuf::new(),
            split_dir: PathBuf::from("splits"),
        }
    }
}

impl DatasetConfig {
    pub fn splits_path(&self) -> PathBuf {
        if self.split_dir.is_absolute() {
            self.split_dir.clone()
        } else {
            self.root.join(&self.split_dir)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub seeds: Vec<u64>,
    /// Use only the first `n` training samples; 0 keeps all.
    pub train_limit: usize,
    /// Use only the first `n` validation and test samples; 0 keeps all.
    pub eval_limit: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            epochs: 100,
            seeds: vec![0, 1, 2, 3, 4],
            train_limit: 0,
            eval_limit: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub optim: AdamWConfig,
    pub train: TrainConfig,
    pub data: PreprocessConfig,
    pub output_dir: PathBuf,
}

/// Every accepted key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("dataset.id", "dataset name; tn3k and tn5000 enable official split-size checks"),
    ("dataset.root", "dataset root directory (falls back to PEMV_DATA_ROOT)"),
    ("dataset.split_dir", "directory with train.txt/val.txt/test.txt, relative to the root unless absolute"),
    ("model.num_views", "number of attention views K"),
    ("model.d_global", "global feature dimension"),
    ("model.d_view", "per-view feature dimension"),
    ("model.gamma_align", "pull towards the same-class prototype"),
    ("model.gamma_contrast", "push away from the other-class prototype"),
    ("model.prototype_momentum", "prototype EMA momentum"),
    ("model.num_classes", "number of classes (must be 2)"),
    ("model.backbone_width", "ResNet-18 base width (64 is the standard network)"),
    ("model.input_size", "input resolution in pixels"),
    ("model.enable_mvfe", "multi-view mediator extraction"),
    ("model.enable_pbc", "prototype-based mediator correction"),
    ("loss.lambda_f", "fusion loss weight"),
    ("loss.mu_ip", "information-purity weight"),
    ("loss.enable_lf", "fusion loss"),
    ("loss.enable_ip", "information-purity regularizer"),
    ("loss.pair_threshold", "largest batch that uses every (i, j) pair in the fusion loss"),
    ("loss.pair_partners", "sampled partners per anchor above the threshold"),
    ("optim.lr", "AdamW learning rate"),
    ("optim.beta1", "AdamW first-moment decay"),
    ("optim.beta2", "AdamW second-moment decay"),
    ("optim.eps", "AdamW denominator epsilon"),
    ("optim.weight_decay", "decoupled weight decay"),
    ("train.batch_size", "mini-batch size"),
    ("train.epochs", "training epochs"),
    ("train.seeds", "comma-separated run seeds"),
    ("train.train_limit", "train on the first n samples only (0 = all)"),
    ("train.eval_limit", "evaluate on the first n val/test samples only (0 = all)"),
    ("train.ablation", "set the four component toggles to an ablation level AB1..AB5"),
    ("data.mean", "per-channel normalization mean, comma-separated"),
    ("data.std", "per-channel normalization std, comma-separated"),
    ("data.augment", "training-time augmentation"),
    ("data.flip_prob", "horizontal flip probability"),
    ("data.rotate_deg", "maximum rotation in degrees"),
    ("data.brightness", "maximum relative brightness change"),
    ("data.contrast", "maximum relative contrast change"),
    ("output.dir", "output directory"),
];

/// Keys that only write other keys and have no stored value.
const WRITE_ONLY: &[&str] = &["train.ablation"];

/// Keys left out of the config hash because they do not affect results.
const UNHASHED: &[&str] = &["output.dir"];

pub fn valid_keys() -> String {
    KEYS.iter().map(|(k, _)| *k).collect::<Vec<_>>().join(", ")
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got `{value}`"))),
    }
}

fn parse_triple(key: &str, value: &str) -> Result<[f64; 3]> {
    let parts: Vec<f64> = value.split(',').map(|v| parse(key, v)).collect::<Result<_>>()?;
    match parts.as_slice() {
        [v] => Ok([*v; 3]),
        [a, b, c] => Ok([*a, *b, *c]),
        _ => Err(Error::Config(format!("{key}: expected one or three values, got `{value}`"))),
    }
}

fn join<T: ToString>(values: &[T]) -> String {
    values.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "dataset.id" => self.dataset.id = v.to_string(),
            "dataset.root" => self.dataset.root = PathBuf::from(v),
            "dataset.split_dir" => self.dataset.split_dir = PathBuf::from(v),
            "model.num_views" => self.model.num_views = parse(key, v)?,
            "model.d_global" => self.model.d_global = parse(key, v)?,
            "model.d_view" => self.model.d_view = parse(key, v)?,
            "model.gamma_align" => self.model.gamma_align = parse(key, v)?,
            "model.gamma_contrast" => self.model.gamma_contrast = parse(key, v)?,
            "model.prototype_momentum" => self.model.prototype_momentum = parse(key, v)?,
            "model.num_classes" => self.model.num_classes = parse(key, v)?,
            "model.backbone_width" => self.model.backbone_width = parse(key, v)?,
            "model.input_size" => self.model.input_size = parse(key, v)?,
            "model.enable_mvfe" => self.model.enable_mvfe = parse_bool(key, v)?,
            "model.enable_pbc" => self.model.enable_pbc = parse_bool(key, v)?,
            "loss.lambda_f" => self.loss.lambda_f = parse(key, v)?,
            "loss.mu_ip" => self.loss.mu_ip = parse(key, v)?,
            "loss.enable_lf" => self.loss.enable_lf = parse_bool(key, v)?,
            "loss.enable_ip" => self.loss.enable_ip = parse_bool(key, v)?,
            "loss.pair_threshold" => self.loss.pair_threshold = parse(key, v)?,
            "loss.pair_partners" => self.loss.pair_partners = parse(key, v)?,
            "optim.lr" => self.optim.lr = parse(key, v)?,
            "optim.beta1" => self.optim.beta1 = parse(key, v)?,
            "optim.beta2" => self.optim.beta2 = parse(key, v)?,
            "optim.eps" => self.optim.eps = parse(key, v)?,
            "optim.weight_decay" => self.optim.weight_decay = parse(key, v)?,
            "train.batch_size" => self.train.batch_size = parse(key, v)?,
            "train.epochs" => self.train.epochs = parse(key, v)?,
            "train.seeds" => {
                self.train.seeds = v
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| parse(key, s))
                    .collect::<Result<_>>()?
            }
            "train.train_limit" => self.train.train_limit = parse(key, v)?,
            "train.eval_limit" => self.train.eval_limit = parse(key, v)?,
            "train.ablation" => self.set_ablation(v.parse()?),
            "data.mean" => self.data.mean = parse_triple(key, v)?,
            "data.std" => self.data.std = parse_triple(key, v)?,
            "data.augment" => self.data.augment = parse_bool(key, v)?,
            "data.flip_prob" => self.data.flip_prob = parse(key, v)?,
            "data.rotate_deg" => self.data.rotate_deg = parse(key, v)?,
            "data.brightness" => self.data.brightness = parse(key, v)?,
            "data.contrast" => self.data.contrast = parse(key, v)?,
            "output.dir" => self.output_dir = PathBuf::from(v),
            _ => {
                return Err(Error::UnknownKey {
                    key: key.to_string(),
                    valid: valid_keys(),
                })
            }
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "dataset.id" => self.dataset.id.clone(),
            "dataset.root" => self.dataset.root.display().to_string(),
            "dataset.split_dir" => self.dataset.split_dir.display().to_string(),
            "model.num_views" => self.model.num_views.to_string(),
            "model.d_global" => self.model.d_global.to_string(),
            "model.d_view" => self.model.d_view.to_string(),
            "model.gamma_align" => self.model.gamma_align.to_string(),
            "model.gamma_contrast" => self.model.gamma_contrast.to_string(),
            "model.prototype_momentum" => self.model.prototype_momentum.to_string(),
            "model.num_classes" => self.model.num_classes.to_string(),
            "model.backbone_width" => self.model.backbone_width.to_string(),
            "model.input_size" => self.model.input_size.to_string(),
            "model.enable_mvfe" => self.model.enable_mvfe.to_string(),
            "model.enable_pbc" => self.model.enable_pbc.to_string(),
            "loss.lambda_f" => self.loss.lambda_f.to_string(),
            "loss.mu_ip" => self.loss.mu_ip.to_string(),
            "loss.enable_lf" => self.loss.enable_lf.to_string(),
            "loss.enable_ip" => self.loss.enable_ip.to_string(),
            "loss.pair_threshold" => self.loss.pair_threshold.to_string(),
            "loss.pair_partners" => self.loss.pair_partners.to_string(),
            "optim.lr" => self.optim.lr.to_string(),
            "optim.beta1" => self.optim.beta1.to_string(),
            "optim.beta2" => self.optim.beta2.to_string(),
            "optim.eps" => self.optim.eps.to_string(),
            "optim.weight_decay" => self.optim.weight_decay.to_string(),
            "train.batch_size" => self.train.batch_size.to_string(),
            "train.epochs" => self.train.epochs.to_string(),
            "train.seeds" => join(&self.train.seeds),
            "train.train_limit" => self.train.train_limit.to_string(),
            "train.eval_limit" => self.train.eval_limit.to_string(),
            "data.mean" => join(&self.data.mean),
            "data.std" => join(&self.data.std),
            "data.augment" => self.data.augment.to_string(),
            "data.flip_prob" => self.data.flip_prob.to_string(),
            "data.rotate_deg" => self.data.rotate_deg.to_string(),
            "data.brightness" => self.data.brightness.to_string(),
            "data.contrast" => self.data.contrast.to_string(),
            "output.dir" => self.output_dir.display().to_string(),
            _ => return None,
        })
    }

    pub fn toggles(&self) -> Toggles {
        Toggles {
            mvfe: self.model.enable_mvfe,
            pbc: self.model.enable_pbc,
            ip: self.loss.enable_ip,
            lf: self.loss.enable_lf,
        }
    }

    /// Ablation level implied by the toggles, `None` for off-ladder combinations.
    pub fn ablation(&self) -> Option<Ablation> {
        Ablation::from_toggles(self.toggles())
    }

    pub fn set_ablation(&mut self, level: Ablation) {
        let t = level.toggles();
        self.model.enable_mvfe = t.mvfe;
        self.model.enable_pbc = t.pbc;
        self.loss.enable_ip = t.ip;
        self.loss.enable_lf = t.lf;
    }

    pub fn with_ablation(&self, level: Ablation) -> Self {
        let mut c = self.clone();
        c.set_ablation(level);
        c
    }

    /// Applies `key=value` lines. Blank lines and `#` comments are ignored.
    pub fn apply_text(&mut self, text: &str, source: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("{source}:{}: expected key=value, got `{line}`", i + 1)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    /// Applies a `key=value` override string.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
        self.set(k.trim(), v)
    }

    /// Defaults, then the file (if any), then the overrides in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
            cfg.apply_text(&text, &p.display().to_string())?;
        }
        for o in overrides {
            cfg.apply_override(o)?;
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        self.data.validate()?;
        let o = &self.optim;
        if !(o.lr > 0.0 && o.lr.is_finite()) || !(o.eps > 0.0) || o.weight_decay < 0.0 {
            return Err(Error::Config("optim.lr and optim.eps must be > 0, optim.weight_decay >= 0".into()));
        }
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) {
            return Err(Error::Config("optim.beta1 and optim.beta2 must lie in [0, 1)".into()));
        }
        if self.train.epochs == 0 {
            return Err(Error::Config("train.epochs must be >= 1".into()));
        }
        if self.train.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be >= 1".into()));
        }
        if self.train.seeds.is_empty() {
            return Err(Error::Config("train.seeds must list at least one seed".into()));
        }
        if self.loss.enable_lf && !self.model.enable_pbc {
            return Err(Error::Config("loss.enable_lf requires model.enable_pbc".into()));
        }
        if self.loss.enable_ip && !self.model.enable_mvfe {
            return Err(Error::Config("loss.enable_ip requires model.enable_mvfe".into()));
        }
        Ok(())
    }

    /// Every stored key in registry order, one `key=value` per line.
    pub fn canonical_text(&self) -> String {
        KEYS.iter()
            .filter(|(k, _)| !WRITE_ONLY.contains(k))
            .filter_map(|(k, _)| self.get(k).map(|v| format!("{k}={v}\n")))
            .collect()
    }

    /// SHA-256 over the canonical text minus output-only keys.
    pub fn hash(&self) -> String {
        let text: String = KEYS
            .iter()
            .filter(|(k, _)| !WRITE_ONLY.contains(k) && !UNHASHED.contains(k))
            .filter_map(|(k, _)| self.get(k).map(|v| format!("{k}={v}\n")))
            .collect();
        Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Lines of the canonical text that differ from `other`.
    pub fn diff(&self, other: &Self) -> Vec<String> {
        KEYS.iter()
            .filter_map(|(k, _)| {
                let (a, b) = (self.get(k)?, other.get(k)?);
                (a != b).then(|| format!("{k}: {b} -> {a}"))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_round_trips() {
        let cfg = ExperimentConfig::default();
        let mut again = ExperimentConfig::default();
        again.set("model.num_views", "7").unwrap();
        again.apply_text(&cfg.canonical_text(), "canonical").unwrap();
        assert_eq!(again, cfg);
        for (k, _) in KEYS {
            if !WRITE_ONLY.contains(k) {
                assert!(cfg.get(k).is_some(), "{k}");
            }
        }
    }

    #[test]
    fn unknown_key_lists_valid_keys() {
        let mut cfg = ExperimentConfig::default();
        let e = cfg.set("model.num_heads", "3").unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("model.num_heads") && msg.contains("model.num_views"), "{msg}");
    }

    #[test]
    fn overrides_apply_after_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.cfg");
        std::fs::write(&p, "# comment\nloss.lambda_f=0.25\ntrain.seeds=3,4\n").unwrap();
        let cfg = ExperimentConfig::load(Some(&p), &["loss.lambda_f=0".into()]).unwrap();
        assert_eq!(cfg.loss.lambda_f, 0.0);
        assert_eq!(cfg.train.seeds, vec![3, 4]);
        assert!(ExperimentConfig::load(Some(&dir.path().join("nope.cfg")), &[]).is_err());
        assert!(ExperimentConfig::load(None, &["no_equals".into()]).is_err());
    }

    #[test]
    fn ladder_is_strictly_increasing() {
        for w in Ablation::ALL.windows(2) {
            let (a, b) = (w[0].toggles(), w[1].toggles());
            assert_eq!(a.count() + 1, b.count());
            assert!(!a.mvfe || b.mvfe);
            assert!(!a.pbc || b.pbc);
            assert!(!a.ip || b.ip);
            assert!(!a.lf || b.lf);
        }
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.ablation(), Some(Ablation::AB5));
        for a in Ablation::ALL {
            let c = cfg.with_ablation(a);
            assert_eq!(c.ablation(), Some(a));
            c.validate().unwrap();
        }
    }

    #[test]
    fn ab4_and_ab5_differ_only_in_fusion_loss() {
        let cfg = ExperimentConfig::default();
        let (ab4, ab5) = (cfg.with_ablation(Ablation::AB4), cfg.with_ablation(Ablation::AB5));
        assert_ne!(ab4.hash(), ab5.hash());
        assert_eq!(ab5.diff(&ab4), vec!["loss.enable_lf: false -> true".to_string()]);
    }

    #[test]
    fn hash_ignores_output_dir() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.set("output.dir", "elsewhere").unwrap();
        assert_eq!(a.hash(), b.hash());
        b.set("model.num_views", "3").unwrap();
        assert_eq!(a.hash(), b.hash());
        b.set("model.num_views", "4").unwrap();
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn rejects_invalid_combinations() {
        let mut cfg = ExperimentConfig::default();
        cfg.set("model.enable_pbc", "false").unwrap();
        assert!(cfg.validate().is_err());
        assert_eq!(cfg.ablation(), None);
        let mut cfg = ExperimentConfig::default();
        cfg.set("train.seeds", "").unwrap();
        assert!(cfg.validate().is_err());
        assert!(ExperimentConfig::default().set("train.ablation", "AB7").is_err());
    }
}
