use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use clap::CommandFactory;
use pemv_cli::{parse_views, Cli};

fn pemv(args: &[&str], data_root: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_pemv"));
    cmd.args(args).env_remove("PEMV_DATA_ROOT").env("RUST_LOG", "warn");
    if let Some(r) = data_root {
        cmd.env("PEMV_DATA_ROOT", r);
    }
    cmd.output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

#[test]
fn every_flag_is_documented() {
    let mut root = Cli::command();
    root.build();
    let mut names = Vec::new();
    for sub in root.get_subcommands() {
        assert!(sub.get_about().is_some(), "subcommand {} lacks help", sub.get_name());
        names.push(sub.get_name().to_string());
        for arg in sub.get_arguments() {
            if ["help", "version"].contains(&arg.get_id().as_str()) {
                continue;
            }
            assert!(arg.get_help().is_some(), "{} --{} lacks help", sub.get_name(), arg.get_id());
        }
    }
    for want in ["verify", "train", "eval", "ablate", "sweep", "oracle"] {
        assert!(names.iter().any(|n| n == want), "missing subcommand {want}");
    }
    let globals: Vec<String> = root.get_arguments().filter_map(|a| a.get_long().map(str::to_string)).collect();
    for want in ["config", "set", "seed", "out", "quiet"] {
        assert!(globals.iter().any(|g| g == want), "missing global flag --{want}");
    }
    let help = root.find_subcommand_mut("oracle").unwrap().render_long_help().to_string();
    assert!(help.contains("--trials") && help.contains("[default: 1000]"), "{help}");
}

#[test]
fn view_lists() {
    assert_eq!(parse_views("1..9").unwrap(), (1..=9).collect::<Vec<_>>());
    assert_eq!(parse_views("1,3,5").unwrap(), vec![1, 3, 5]);
    assert!(parse_views("0..3").is_err());
    assert!(parse_views("5..2").is_err());
    assert!(parse_views("x").is_err());
}

#[test]
fn oracle_is_deterministic() {
    let a = pemv(&["oracle", "--trials", "200", "--seed", "4"], None);
    let b = pemv(&["oracle", "--trials", "200", "--seed", "4"], None);
    assert_eq!(code(&a), 0, "{}", text(&a));
    assert_eq!(a.stdout, b.stdout);
    assert!(text(&a).contains("worst |estimate - truth|"));
    assert!(text(&a).contains("confounding witness"));
    let zero = pemv(&["oracle", "--trials", "0"], None);
    assert_eq!(code(&zero), 2);
}

#[test]
fn verify_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("data");
    let out = pemv(&["synth", "--train", "4", "--val", "2", "--test", "2", "--size", "24", "--out", root.to_str().unwrap()], None);
    assert_eq!(code(&out), 0, "{}", text(&out));
    let ok = pemv(&["verify", "--set", "dataset.id=synthetic"], Some(&root));
    assert_eq!(code(&ok), 0, "{}", text(&ok));
    assert!(text(&ok).contains("result: PASS"));

    let sized = pemv(&["verify"], Some(&root));
    assert_eq!(code(&sized), 1, "tn3k split sizes must be enforced");

    let train = fs::read_to_string(root.join("splits/train.txt")).unwrap();
    let first = train.lines().next().unwrap().to_string();
    let test = fs::read_to_string(root.join("splits/test.txt")).unwrap();
    fs::write(root.join("splits/test.txt"), format!("{test}{first}\n")).unwrap();
    let leaky = pemv(&["verify", "--set", "dataset.id=synthetic"], Some(&root));
    assert_eq!(code(&leaky), 1);
    assert!(text(&leaky).contains("appears in train and test"), "{}", text(&leaky));

    let missing = pemv(&["verify", "--data-root", dir.path().join("nope").to_str().unwrap()], None);
    assert_eq!(code(&missing), 2);
    let unset = pemv(&["verify"], None);
    assert_eq!(code(&unset), 2);
}

#[test]
fn unknown_key_is_a_usage_error() {
    let o = pemv(&["train", "--set", "model.heads=3"], None);
    assert_eq!(code(&o), 2);
    assert!(text(&o).contains("valid keys") && text(&o).contains("model.num_views"), "{}", text(&o));
}

#[test]
fn train_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("data");
    let synth = pemv(&["synth", "--train", "12", "--val", "4", "--test", "4", "--size", "32", "--out", root.to_str().unwrap()], None);
    assert_eq!(code(&synth), 0);
    let cfg = dir.path().join("tiny.cfg");
    fs::write(
        &cfg,
        "dataset.id=synthetic\nmodel.backbone_width=4\nmodel.input_size=32\nmodel.d_global=8\nmodel.d_view=4\ntrain.epochs=1\ntrain.batch_size=6\n",
    )
    .unwrap();
    let out = dir.path().join("run");
    let o = pemv(
        &["train", "--config", cfg.to_str().unwrap(), "--set", "loss.lambda_f=0", "--seed", "2", "--out", out.to_str().unwrap(), "--quiet"],
        Some(&root),
    );
    assert_eq!(code(&o), 0, "{}", text(&o));
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("run_manifest.json")).unwrap()).unwrap();
    let overrides: Vec<&str> = manifest["overrides"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert!(overrides.contains(&"loss.lambda_f=0"));
    assert!(manifest["config"].as_array().unwrap().iter().any(|l| l == "loss.lambda_f=0"));
    assert_eq!(manifest["seeds"], serde_json::json!([2]));
    assert!(out.join("seed_2/training_log.csv").is_file());
    assert!(out.join("aggregate.json").is_file());

    let ck = out.join("seed_2/best.ckpt");
    let eval_out = dir.path().join("eval");
    let e = pemv(
        &["eval", "--config", cfg.to_str().unwrap(), "--checkpoint", ck.to_str().unwrap(), "--out", eval_out.to_str().unwrap()],
        Some(&root),
    );
    assert_eq!(code(&e), 0, "{}", text(&e));
    assert!(fs::read_to_string(eval_out.join("metrics.csv")).unwrap().contains(",test,"));
}
