use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

use textinv::runner::{ExperimentConfig, RunDir};

const BIN: &str = env!("CARGO_BIN_EXE_textinv");

const SMALL: &str = r#"{
  "dataset": {"kind": "synthetic", "examples": 400, "background_vocab": 200},
  "target": {"size": "small", "epochs": 2},
  "generator": {"size": "small", "epochs": 2},
  "eval": {"classifier": {"size": "small", "epochs": 2}},
  "templates": {"max_templates": 3, "min_freq": 5},
  "methods": ["tr", "vtg", "vmi"],
  "attack": {"max_len": 10, "vmi_epochs": 5}
}"#;

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("cfg.json");
    fs::write(&p, body).unwrap();
    p
}

fn textinv(cfg: &Path, out: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .arg("--config")
        .arg(cfg)
        .arg("--out")
        .arg(out)
        .arg("--deterministic")
        .args(args)
        .output()
        .unwrap()
}

fn ok(o: &Output) {
    assert!(
        o.status.success(),
        "status {:?}\n{}",
        o.status,
        String::from_utf8_lossy(&o.stderr)
    );
}

/// The single run directory under `out`.
fn run_dir(out: &Path) -> PathBuf {
    let dirs: Vec<PathBuf> = fs::read_dir(out)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_dir())
        .collect();
    assert_eq!(dirs.len(), 1, "{dirs:?}");
    dirs[0].clone()
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn run_all_matches_staged_commands() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let all = tmp.path().join("all");
    let staged = tmp.path().join("staged");

    ok(&textinv(&cfg, &all, &["run-all"]));
    let a = run_dir(&all);
    for f in [
        "config.json",
        "vocab.txt",
        "templates.tsv",
        "data/public.tsv",
        "data/private.tsv",
        "checkpoints/target.json",
        "checkpoints/generator.json",
        "checkpoints/eval.json",
        "inverted/tr.tsv",
        "inverted/vtg.tsv",
        "inverted/vmi.tsv",
        "reports/tr.json",
        "reports/memorization.json",
        "pca/tr.csv",
        "table.csv",
        "table.txt",
    ] {
        assert!(a.join(f).exists(), "missing {f}");
    }
    assert!(!a.join(".lock").exists());
    let table = fs::read_to_string(a.join("table.csv")).unwrap();
    assert!(table.starts_with("metric,"));
    for row in ["RR.,", "Acc.,", "PLL,"] {
        assert!(table.lines().any(|l| l.starts_with(row)), "{table}");
    }

    for step in [
        vec!["prepare"],
        vec!["train-target"],
        vec!["train-generator"],
        vec!["extract-templates"],
        vec!["attack", "--method", "tr"],
        vec!["evaluate", "--method", "tr"],
        vec!["report"],
    ] {
        ok(&textinv(&cfg, &staged, &step));
    }
    let s = run_dir(&staged);
    assert_eq!(a.file_name(), s.file_name());
    assert_eq!(json(&a.join("reports/tr.json")), json(&s.join("reports/tr.json")));
    assert_eq!(
        fs::read_to_string(a.join("inverted/tr.tsv")).unwrap(),
        fs::read_to_string(s.join("inverted/tr.tsv")).unwrap()
    );
    let pca = fs::read_to_string(s.join("pca/tr.csv")).unwrap();
    let mut lines = pca.lines();
    assert!(lines.next().unwrap().starts_with("# config_hash="));
    assert_eq!(lines.next().unwrap(), "group,x,y,label");
    assert!(lines.all(|l| l.starts_with("ground_truth,") || l.starts_with("inverted,")));
}

#[test]
fn a_held_lock_refuses_a_second_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("out");
    let mut cfg = ExperimentConfig::load(&cfg_path).unwrap();
    cfg.out_dir = out.clone();
    cfg.attack.decoding = textinv::modeling::Decoding::Greedy;
    let dir = RunDir::new(&cfg);
    let lock = dir.lock().unwrap();
    assert!(dir.lock().is_err());
    let o = textinv(&cfg_path, &out, &["prepare"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("locked"));
    drop(lock);
    assert!(!dir.root.join(".lock").exists());
    ok(&textinv(&cfg_path, &out, &["prepare"]));
}

#[test]
fn bad_configs_exit_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let empty = write_config(tmp.path(), r#"{"methods": []}"#);
    assert_eq!(textinv(&empty, &out, &["run-all"]).status.code(), Some(2));
    let ratio = write_config(tmp.path(), r#"{"public_ratio": 1.5}"#);
    assert_eq!(textinv(&ratio, &out, &["prepare"]).status.code(), Some(2));
    let cfg = write_config(tmp.path(), SMALL);
    assert_eq!(
        textinv(&cfg, &out, &["attack", "--method", "nope"]).status.code(),
        Some(2)
    );
    let missing = tmp.path().join("absent.json");
    assert_eq!(textinv(&missing, &out, &["prepare"]).status.code(), Some(2));
}

#[test]
fn stale_checkpoints_are_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("out");
    ok(&textinv(&cfg, &out, &["prepare"]));
    ok(&textinv(&cfg, &out, &["train-generator"]));
    let a = run_dir(&out);

    // a different seed resolves to another run directory
    let o = Command::new(BIN)
        .args(["--seed", "9", "--deterministic", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .arg("prepare")
        .output()
        .unwrap();
    ok(&o);
    let b = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| *p != a)
        .unwrap();
    fs::create_dir_all(b.join("checkpoints")).unwrap();
    fs::copy(
        a.join("checkpoints/generator.json"),
        b.join("checkpoints/generator.json"),
    )
    .unwrap();
    let o = Command::new(BIN)
        .args(["--seed", "9", "--deterministic", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .arg("train-generator")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("stamped with config hash"));
}

#[test]
fn show_config_reflects_overrides_and_loss_changes_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("out");
    let o = textinv(&cfg, &out, &["--seed", "4", "show-config"]);
    ok(&o);
    let shown: ExperimentConfig = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(shown.seed, 4);
    assert_eq!(shown.out_dir, out);
    assert_eq!(shown.methods.len(), 3);

    let mut ce = shown.clone();
    ce.attack.loss_kind = textinv::attack::LossKind::CrossEntropy;
    let mut mentr = shown;
    mentr.attack.loss_kind = textinv::attack::LossKind::ModifiedEntropy;
    assert_ne!(ce.hash(), mentr.hash());
    assert_ne!(ce.run_dir(), mentr.run_dir());
    let mut moved = ce.clone();
    moved.out_dir = tmp.path().join("elsewhere");
    assert_eq!(moved.hash(), ce.hash());
}
