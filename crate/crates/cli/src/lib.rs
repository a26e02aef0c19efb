//! `pemv` command-line tool.
//!
//! Exit codes: 0 success, 1 run or validation failure, 2 usage error.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use pemv::config::ExperimentConfig;
use pemv::data::split::{load_splits, parse_split_text, partition_train_val, SplitManifest, SplitName};
use pemv::data::synth::{generate, SynthConfig};
use pemv::data::voc::{convert_directory, record_rule, LabelRule};
use pemv::data::{official_sizes, verify_dataset, Dataset};
use pemv::experiment::{evaluate, run_ablation, run_multiseed, run_sweep_views, RunData};
use pemv::frontdoor::soundness_suite;
use pemv::metrics::Metrics;
use pemv::Error;

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "pemv", version, about = "Prototype-enhanced multi-view classification experiments")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Config file with one `section.key=value` per line
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Override a config key after the file is applied (repeatable)
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,

    /// Run seed; replaces train.seeds with this single seed
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,

    /// Output directory (default: runs/<command>)
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,

    /// Only print warnings and errors
    #[arg(long, global = true, default_value_t = false)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check split files and images for missing files, overlaps and class counts
    Verify(VerifyArgs),
    /// Train and evaluate every configured seed
    Train,
    /// Evaluate a checkpoint on one split
    Eval(EvalArgs),
    /// Run the AB1-AB5 ablation ladder
    Ablate,
    /// Sweep the number of attention views
    Sweep(SweepArgs),
    /// Check the front-door formula against exact interventions on random causal models
    Oracle(OracleArgs),
    /// Write a synthetic nodule dataset with split files
    Synth(SynthArgs),
    /// Build image-level split files from Pascal VOC annotations
    ConvertVoc(ConvertVocArgs),
    /// Split a training list into train.txt and val.txt
    Partition(PartitionArgs),
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Dataset root (default: dataset.root, then PEMV_DATA_ROOT)
    #[arg(long, value_name = "DIR")]
    pub data_root: Option<PathBuf>,

    /// Directory with train.txt, val.txt and test.txt (default: dataset.split_dir)
    #[arg(long, value_name = "DIR")]
    pub split_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint written by `train`
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,

    /// Split to evaluate
    #[arg(long, default_value = "test", value_parser = ["train", "val", "test"])]
    pub split: String,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// View counts as a range `a..b` (inclusive) or a list `1,3,5`
    #[arg(long, default_value = "1..9", value_name = "LIST")]
    pub views: String,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    /// Number of random causal models
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
    pub trials: u64,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Training images
    #[arg(long, default_value_t = 120)]
    pub train: usize,

    /// Validation images
    #[arg(long, default_value_t = 40)]
    pub val: usize,

    /// Test images
    #[arg(long, default_value_t = 40)]
    pub test: usize,

    /// Side length of the written images in pixels
    #[arg(long, default_value_t = 96)]
    pub size: usize,
}

#[derive(Debug, Args)]
pub struct ConvertVocArgs {
    /// Directory of VOC `.xml` annotation files
    #[arg(long, value_name = "DIR")]
    pub annotations: PathBuf,

    /// Class mapping and combine rule, e.g. `benign=0,malignant=1;any-malignant`
    #[arg(long, value_name = "RULE")]
    pub rule: String,

    /// Image directory relative to the dataset root, prepended to each file name
    #[arg(long, default_value = "", value_name = "DIR")]
    pub image_prefix: String,

    /// Split file to write; its stem names the split
    #[arg(long, value_name = "PATH")]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct PartitionArgs {
    /// Split file holding the pooled training entries
    #[arg(long, value_name = "PATH")]
    pub input: PathBuf,

    /// Fraction of entries moved to validation
    #[arg(long, default_value_t = 0.2)]
    pub val_fraction: f64,

    /// Shuffle seed for the partition
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,

    /// Directory receiving train.txt and val.txt
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
}

/// Failure with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn run(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_FAILURE,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::UnknownKey { .. } => Failure::usage(e.to_string()),
            _ => Failure::run(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::run(e.to_string())
    }
}

type CmdResult = Result<u8, Failure>;

pub fn run(cli: Cli) -> u8 {
    let level = if cli.global.quiet { "warn" } else { "info" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
    match dispatch(&cli) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn command_name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Verify(_) => "verify",
        Command::Train => "train",
        Command::Eval(_) => "eval",
        Command::Ablate => "ablate",
        Command::Sweep(_) => "sweep",
        Command::Oracle(_) => "oracle",
        Command::Synth(_) => "synth",
        Command::ConvertVoc(_) => "convert-voc",
        Command::Partition(_) => "partition",
    }
}

/// Config file, `--set` overrides, then `--seed`, `--out` and the data-root fallback.
fn resolve_config(cli: &Cli) -> Result<(ExperimentConfig, Vec<String>), Failure> {
    let g = &cli.global;
    let mut overrides = g.set.clone();
    if let Some(seed) = g.seed {
        overrides.push(format!("train.seeds={seed}"));
    }
    let mut cfg = ExperimentConfig::load(g.config.as_deref(), &overrides)?;
    if cfg.dataset.root.as_os_str().is_empty() {
        if let Some(root) = std::env::var_os("PEMV_DATA_ROOT") {
            cfg.dataset.root = PathBuf::from(root);
        }
    }
    if let Some(out) = &g.out {
        cfg.output_dir = out.clone();
    } else if cfg.output_dir.as_os_str().is_empty() {
        cfg.output_dir = Path::new("runs").join(command_name(&cli.command));
    }
    Ok((cfg, overrides))
}

fn command_line() -> String {
    std::env::args().collect::<Vec<_>>().join(" ")
}

fn dispatch(cli: &Cli) -> CmdResult {
    match &cli.command {
        Command::Verify(a) => cmd_verify(cli, a),
        Command::Train => cmd_experiment(cli, |cfg, data, out, cmd, ov| {
            let r = run_multiseed(cfg, data, out, cmd, ov)?;
            if let Some(a) = &r.test {
                println!("test: ACC {} | P {} | R {} | F1 {}", a.acc.cell(), a.precision.cell(), a.recall.cell(), a.f1.cell());
            }
            Ok(())
        }),
        Command::Eval(a) => cmd_eval(cli, a),
        Command::Ablate => cmd_experiment(cli, |cfg, data, out, cmd, ov| {
            run_ablation(cfg, data, out, cmd, ov)?;
            print!("{}", fs::read_to_string(out.join("ablation.md"))?);
            Ok(())
        }),
        Command::Sweep(a) => {
            let views = parse_views(&a.views).map_err(Failure::usage)?;
            cmd_experiment(cli, move |cfg, data, out, cmd, ov| {
                run_sweep_views(cfg, &views, data, out, cmd, ov)?;
                print!("{}", fs::read_to_string(out.join("sweep.md"))?);
                Ok(())
            })
        }
        Command::Oracle(a) => cmd_oracle(cli, a),
        Command::Synth(a) => cmd_synth(cli, a),
        Command::ConvertVoc(a) => cmd_convert_voc(a),
        Command::Partition(a) => cmd_partition(a),
    }
}

/// `a..b` inclusive, or a comma-separated list.
pub fn parse_views(spec: &str) -> Result<Vec<usize>, String> {
    let bad = || format!("invalid --views `{spec}`: expected `a..b` or `k1,k2,...` with values >= 1");
    let views: Vec<usize> = if let Some((a, b)) = spec.split_once("..") {
        let a: usize = a.trim().parse().map_err(|_| bad())?;
        let b: usize = b.trim().parse().map_err(|_| bad())?;
        if a > b {
            return Err(bad());
        }
        (a..=b).collect()
    } else {
        spec.split(',').map(|v| v.trim().parse().map_err(|_| bad())).collect::<Result<_, _>>()?
    };
    if views.is_empty() || views.contains(&0) {
        return Err(bad());
    }
    Ok(views)
}

fn data_root_for(cfg: &ExperimentConfig) -> Result<(), Failure> {
    let root = &cfg.dataset.root;
    if root.as_os_str().is_empty() {
        return Err(Failure::usage("no dataset root: set dataset.root or PEMV_DATA_ROOT"));
    }
    if !root.is_dir() {
        return Err(Failure::usage(format!("dataset root {} does not exist", root.display())));
    }
    let splits = cfg.dataset.splits_path();
    if !splits.is_dir() {
        return Err(Failure::usage(format!("split directory {} does not exist", splits.display())));
    }
    Ok(())
}

fn cmd_verify(cli: &Cli, a: &VerifyArgs) -> CmdResult {
    let (mut cfg, _) = resolve_config(cli)?;
    if let Some(r) = &a.data_root {
        cfg.dataset.root = r.clone();
    }
    if let Some(s) = &a.split_dir {
        cfg.dataset.split_dir = s.clone();
    }
    data_root_for(&cfg)?;
    let manifests = load_splits(&cfg.dataset.splits_path()).map_err(|e| Failure::usage(e.to_string()))?;
    let expected = official_sizes(&cfg.dataset.id);
    let report = verify_dataset(&manifests, &cfg.dataset.root, expected.as_ref().map(|e| e.as_slice()));
    print!("{}", report.render_text());
    if cli.global.out.is_some() {
        fs::create_dir_all(&cfg.output_dir)?;
        fs::write(cfg.output_dir.join("verify.json"), serde_json::to_string_pretty(&report).map_err(|e| Failure::run(e.to_string()))?)?;
    }
    Ok(if report.passed() { EXIT_OK } else { EXIT_FAILURE })
}

fn cmd_experiment(cli: &Cli, body: impl Fn(&ExperimentConfig, &RunData, &Path, &str, &[String]) -> pemv::Result<()>) -> CmdResult {
    let (cfg, overrides) = resolve_config(cli)?;
    cfg.validate()?;
    data_root_for(&cfg)?;
    let data = RunData::load(&cfg)?;
    body(&cfg, &data, &cfg.output_dir, &command_line(), &overrides)?;
    Ok(EXIT_OK)
}

fn cmd_eval(cli: &Cli, a: &EvalArgs) -> CmdResult {
    let (cfg, _) = resolve_config(cli)?;
    data_root_for(&cfg)?;
    let split: SplitName = a.split.parse().map_err(|e: Error| Failure::usage(e.to_string()))?;
    if !a.checkpoint.is_file() {
        return Err(Failure::usage(format!("checkpoint {} not found", a.checkpoint.display())));
    }
    let manifests = load_splits(&cfg.dataset.splits_path())?;
    let manifest: &SplitManifest = manifests.iter().find(|m| m.name == split).expect("all splits loaded");
    let header = pemv::checkpoint::load::<f32>(&a.checkpoint, None)?.header;
    let data = Dataset::load(manifest, &cfg.dataset.root, header.model.input_size)?;
    let m: Metrics = evaluate(&a.checkpoint, &data, &cfg.data, cfg.train.batch_size)?;
    println!(
        "{split}: ACC {:.4} | P {:.4} | R {:.4} | F1 {:.4}{}",
        m.acc,
        m.precision,
        m.recall,
        m.f1,
        if m.precision_undefined { " (precision undefined: no positive predictions)" } else { "" }
    );
    fs::create_dir_all(&cfg.output_dir)?;
    let row = format!(
        "seed,split,acc,precision,recall,f1\n{},{split},{:.4},{:.4},{:.4},{:.4}\n",
        header.seed, m.acc, m.precision, m.recall, m.f1
    );
    fs::write(cfg.output_dir.join("metrics.csv"), row)?;
    Ok(EXIT_OK)
}

fn cmd_oracle(cli: &Cli, a: &OracleArgs) -> CmdResult {
    let seed = cli.global.seed.unwrap_or(0);
    let report = soundness_suite(a.trials as usize, seed)?;
    print!("{}", report.render_text());
    if let Some(out) = &cli.global.out {
        fs::create_dir_all(out)?;
        fs::write(out.join("oracle.json"), serde_json::to_string_pretty(&report).map_err(|e| Failure::run(e.to_string()))?)?;
    }
    Ok(if report.passed { EXIT_OK } else { EXIT_FAILURE })
}

fn cmd_synth(cli: &Cli, a: &SynthArgs) -> CmdResult {
    let root = match (&cli.global.out, std::env::var_os("PEMV_DATA_ROOT")) {
        (Some(o), _) => o.clone(),
        (None, Some(r)) => PathBuf::from(r),
        (None, None) => return Err(Failure::usage("synth needs --out DIR or PEMV_DATA_ROOT")),
    };
    let cfg = SynthConfig {
        train: a.train,
        val: a.val,
        test: a.test,
        size: a.size,
        seed: cli.global.seed.unwrap_or(0),
    };
    let manifests = generate(&root, &cfg)?;
    for m in &manifests {
        let [b, mal] = m.class_counts();
        println!("{}: {} images ({b} benign, {mal} malignant)", m.name, m.len());
    }
    println!("dataset written to {}", root.display());
    Ok(EXIT_OK)
}

fn cmd_convert_voc(a: &ConvertVocArgs) -> CmdResult {
    let rule = LabelRule::parse(&a.rule).map_err(|e| Failure::usage(e.to_string()))?;
    if !a.annotations.is_dir() {
        return Err(Failure::usage(format!("annotation directory {} does not exist", a.annotations.display())));
    }
    let stem = a.output.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
    let name: SplitName = stem.parse().map_err(|e: Error| Failure::usage(e.to_string()))?;
    let entries = convert_directory(&a.annotations, &rule, &a.image_prefix)?;
    let manifest = SplitManifest { name, entries };
    manifest.write(&a.output)?;
    record_rule(a.output.parent().unwrap_or(Path::new(".")), stem, &rule)?;
    let [b, m] = manifest.class_counts();
    println!("{}: {} entries ({b} benign, {m} malignant), rule {}", a.output.display(), manifest.len(), rule.describe());
    Ok(EXIT_OK)
}

fn cmd_partition(a: &PartitionArgs) -> CmdResult {
    if !a.input.is_file() {
        return Err(Failure::usage(format!("split file {} does not exist", a.input.display())));
    }
    let text = fs::read_to_string(&a.input)?;
    let src = parse_split_text(&text, SplitName::Train, &a.input.display().to_string())?;
    let (train, val) = partition_train_val(&src.entries, a.val_fraction, a.split_seed).map_err(|e| Failure::usage(e.to_string()))?;
    train.write(&a.out_dir.join("train.txt"))?;
    val.write(&a.out_dir.join("val.txt"))?;
    println!("train: {} entries, val: {} entries", train.len(), val.len());
    Ok(EXIT_OK)
}
