use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use bituning::config::RunConfig;
use bituning_cli::args::Split;
use bituning_cli::{cmd_ablate, cmd_eval, cmd_sweep, cmd_train, ResultRecord, SweepAxis, ABLATION_ROWS};

fn bin(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bituning"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

const MINIMAL: &str = r#"
[data]
generator = "blobs"
per_class = 30

[loss]
cce = 0.0
ccl = 0.0

[optim]
iterations = 50

[run]
seed = 3
"#;

fn small(overrides: &[&str]) -> RunConfig {
    let mut o: Vec<String> = [
        "data.per_class=30",
        "optim.iterations=40",
        "model.hidden=[16]",
        "model.feature_dim=8",
        "model.projector_dim=8",
        "keys.queue_size=8",
        "keys.keys_per_class=2",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    o.extend(overrides.iter().map(|s| s.to_string()));
    RunConfig::from_toml_with_overrides("", &o).unwrap()
}

#[test]
fn minimal_train_writes_fifty_loss_rows() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.toml"), MINIMAL).unwrap();
    let out = bin(dir.path(), &["train", "--config", "c.toml", "--out", "run"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("run/metrics.csv")).unwrap();
    let loss_rows = csv.lines().skip(1).filter(|l| !l.split(',').nth(4).unwrap().is_empty()).count();
    assert_eq!(loss_rows, 50);
    for f in ["checkpoint.txt", "summary.json", "config.toml"] {
        assert!(dir.path().join("run").join(f).exists(), "{f}");
    }
}

#[test]
fn unknown_key_is_rejected_by_name() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.toml"), "[optim]\nlearning_rate = 0.1\n").unwrap();
    let out = bin(dir.path(), &["train", "--config", "c.toml"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));
}

#[test]
fn seed_flag_beats_the_file() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.toml"), MINIMAL).unwrap();
    let out = bin(dir.path(), &["train", "--config", "c.toml", "--seed", "7", "--out", "run"]);
    assert!(out.status.success());
    let rec: ResultRecord = serde_json::from_str(&fs::read_to_string(dir.path().join("run/summary.json")).unwrap()).unwrap();
    assert_eq!(rec.seed, 7);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| bin(dir.path(), args).status.code();
    assert_eq!(code(&["train", "--config", "missing.toml"]), Some(3));
    assert_eq!(code(&["train", "--set", "loss.tau=-1"]), Some(1));
    assert_eq!(code(&["train", "--set", "optim.base_lr=10", "--set", "optim.iterations=300", "--out", "x"]), Some(2));
    assert_eq!(code(&["eval", "--checkpoint", "nothing.txt"]), Some(3));
    assert_eq!(code(&["frobnicate"]), Some(1));
}

#[test]
fn effective_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(&["run.seed=11"]);
    let a = dir.path().join("a");
    cmd_train(&cfg, &a).unwrap();
    let again = RunConfig::from_toml(&fs::read_to_string(a.join("config.toml")).unwrap()).unwrap();
    assert_eq!(again.hash(), cfg.hash());
    let b = dir.path().join("b");
    cmd_train(&again, &b).unwrap();
    assert_eq!(fs::read(a.join("metrics.csv")).unwrap(), fs::read(b.join("metrics.csv")).unwrap());
}

#[test]
fn eval_through_the_checkpoint_matches_training() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(&[]);
    let rec = cmd_train(&cfg, dir.path()).unwrap();
    let acc = cmd_eval(&dir.path().join("checkpoint.txt"), &cfg, Split::Eval).unwrap();
    assert_eq!(acc, rec.final_accuracy);

    let other = small(&["data.generator=rings"]);
    let rings = cmd_eval(&dir.path().join("checkpoint.txt"), &other, Split::Eval).unwrap();
    assert!((0.0..=1.0).contains(&rings));

    let wrong = small(&["data.classes=4", "data.dim=3"]);
    assert!(cmd_eval(&dir.path().join("checkpoint.txt"), &wrong, Split::Eval).is_err());
}

#[test]
fn ablation_has_five_rows_and_matches_standalone_training() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(&[]);
    let table = cmd_ablate(&cfg, &[0.5], &[4], Some(2)).unwrap();
    assert_eq!(table.runs.len(), 5);

    let mut ce_only = cfg.clone();
    ce_only.data.sampling_rate = 0.5;
    ce_only.loss.cce = 0.0;
    ce_only.loss.ccl = 0.0;
    ce_only.run.seed = 4;
    let rec = cmd_train(&ce_only, dir.path()).unwrap();
    assert_eq!(table.mean(0, 0.5), rec.final_accuracy);

    let mut buf = Vec::new();
    table.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let flags: Vec<&str> = text.lines().skip(1).map(|l| &l[..5]).collect();
    assert_eq!(flags, ["1,0,0", "1,1,0", "1,0,1", "0,1,1", "1,1,1"]);
    assert_eq!(ABLATION_ROWS[4].0, "CE+CCE+CCL");
}

#[test]
fn ablation_is_independent_of_worker_count() {
    let cfg = small(&["optim.iterations=15"]);
    let one = cmd_ablate(&cfg, &[1.0], &[0, 1], Some(1)).unwrap();
    let three = cmd_ablate(&cfg, &[1.0], &[0, 1], Some(3)).unwrap();
    assert_eq!(one, three);
}

#[test]
fn sweep_cardinality_and_order() {
    let cfg = small(&["optim.iterations=15"]);
    let t = cmd_sweep(&cfg, SweepAxis::KeysPerClass, &[4.0, 1.0, 2.0], &[1, 0], Some(2)).unwrap();
    assert_eq!(t.runs.len(), 6);
    let order: Vec<(f64, u64)> = t.runs.iter().map(|r| (r.value, r.seed)).collect();
    assert_eq!(order, [(1.0, 0), (1.0, 1), (2.0, 0), (2.0, 1), (4.0, 0), (4.0, 1)]);

    let p = cmd_sweep(&cfg, SweepAxis::ProjectorDim, &[128.0, 16.0], &[0], None).unwrap();
    assert_eq!(p.runs.iter().map(|r| r.value).collect::<Vec<_>>(), [16.0, 128.0]);

    assert!(cmd_sweep(&cfg, SweepAxis::QueueSize, &[2.5], &[0], None).is_err());
}

#[test]
fn ablate_and_sweep_write_csv_files() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["--set", "optim.iterations=10", "--set", "data.per_class=20", "--out", "o"];
    let out = bin(dir.path(), &[&["ablate", "--rates", "1.0", "--seeds", "0"][..], &args].concat());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ab = fs::read_to_string(dir.path().join("o/ablation.csv")).unwrap();
    assert_eq!(ab.lines().count(), 6);
    let out = bin(dir.path(), &[&["sweep", "--axis", "tau", "--values", "0.5,0.07"][..], &args].concat());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let sw = fs::read_to_string(dir.path().join("o/sweep.csv")).unwrap();
    let values: Vec<&str> = sw.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(values, ["0.07", "0.5"]);
}
