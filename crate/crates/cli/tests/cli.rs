use serde_json::Value;
use shapeforge_cli::report::{MetricsReport, REPORT_SCHEMA};
use shapeforge_cli::{CliError, Run, RunConfig};
use shapeforge_core::trainer::checkpoint::checkpoint_load;
use shapeforge_core::trainer::ModelParams;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"{
  "sizes": {"train": 100, "test": 100, "conflict": 90, "readout": 50, "pairs": 200},
  "trainer": {"epochs": 1},
  "readout": {"epochs": 2}
}"#;

struct Sandbox {
    dir: tempfile::TempDir,
}

impl Sandbox {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("small.json"), SMALL).unwrap();
        Self { dir }
    }

    fn path(&self) -> &Path {
        self.dir.path()
    }

    fn run(&self, args: &[&str]) -> Output {
        self.run_env(args, &[])
    }

    fn run_env(&self, args: &[&str], env: &[(&str, &str)]) -> Output {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_shapeforge"));
        cmd.args(args)
            .arg("--config")
            .arg(self.path().join("small.json"))
            .arg("--out")
            .arg(self.path().join("runs"))
            .env("RUST_LOG", "warn");
        for (k, v) in env {
            cmd.env(k, v);
        }
        cmd.output().unwrap()
    }

    fn run_dir(&self, extra: &[(&str, &str)]) -> PathBuf {
        let mut cfg: RunConfig = serde_json::from_str(SMALL).unwrap();
        for (k, v) in extra {
            match *k {
                "seed" => cfg.seed = v.parse().unwrap(),
                "epochs" => cfg.trainer.epochs = v.parse().unwrap(),
                "train_n" => cfg.sizes.train = v.parse().unwrap(),
                _ => unreachable!(),
            }
        }
        cfg.out = self.path().join("runs");
        cfg.run_dir()
    }
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn manifest_sha(dir: &Path, name: &str) -> String {
    let v: Value = serde_json::from_slice(&fs::read(dir.join(format!("data/{name}.manifest.json"))).unwrap()).unwrap();
    v["sha256"].as_str().unwrap().to_string()
}

#[test]
fn gen_writes_five_datasets_reproducibly() {
    let sb = Sandbox::new();
    let stdout = ok(&sb.run(&["gen"]));
    let dir = sb.run_dir(&[]);
    let names = ["train", "test", "conflict", "readout", "pairs"];
    for name in names {
        assert!(dir.join(format!("data/{name}.sfds")).exists());
        assert!(stdout.contains(&manifest_sha(&dir, name)), "sha of {name} not printed");
    }
    let first: Vec<String> = names.iter().map(|n| manifest_sha(&dir, n)).collect();
    ok(&sb.run(&["gen"]));
    let second: Vec<String> = names.iter().map(|n| manifest_sha(&dir, n)).collect();
    assert_eq!(first, second);

    let manifest: Value = serde_json::from_slice(&fs::read(dir.join("manifest.json")).unwrap()).unwrap();
    let files = manifest["files"].as_object().unwrap();
    assert!(files.contains_key("config.json"));
    assert_eq!(files.keys().filter(|k| k.starts_with("data/")).count(), 10);
}

#[test]
fn train_n_flag_reaches_the_manifest() {
    let sb = Sandbox::new();
    ok(&sb.run(&["gen", "--train-n", "40"]));
    let dir = sb.run_dir(&[("train_n", "40")]);
    let v: Value = serde_json::from_slice(&fs::read(dir.join("data/train.manifest.json")).unwrap()).unwrap();
    assert_eq!(v["count"], 40);
    let config: RunConfig = serde_json::from_slice(&fs::read(dir.join("config.json")).unwrap()).unwrap();
    assert_eq!(config.sizes.train, 40);
}

#[test]
fn zero_epochs_checkpoint_is_the_initialization() {
    let sb = Sandbox::new();
    ok(&sb.run(&["gen", "--epochs", "0", "--seed", "3"]));
    ok(&sb.run(&["train", "--mode", "baseline", "--epochs", "0", "--seed", "3"]));
    let dir = sb.run_dir(&[("epochs", "0"), ("seed", "3")]);
    let params = checkpoint_load(&dir.join("baseline/model.ckpt")).unwrap();
    assert_eq!(params, ModelParams::init(3));
}

#[test]
fn training_logs_and_mode_isolation() {
    let sb = Sandbox::new();
    ok(&sb.run(&["gen"]));
    ok(&sb.run(&["train", "--mode", "baseline"]));
    let dir = sb.run_dir(&[]);
    assert!(!dir.join("augment").exists());
    let log = fs::read_to_string(dir.join("baseline/train_log.jsonl")).unwrap();
    let header: Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    assert_eq!(header["header"]["eta"], Value::Null);
    let epoch: Value = serde_json::from_str(log.lines().nth(1).unwrap()).unwrap();
    for key in ["epoch", "lr", "train_loss", "nat_loss", "aug_loss", "train_acc"] {
        assert!(epoch.get(key).is_some(), "{key}");
    }

    ok(&sb.run(&["train", "--mode", "eleas"]));
    let log = fs::read_to_string(dir.join("eleas/train_log.jsonl")).unwrap();
    let header: Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    assert_eq!(header["header"]["eta"].as_f64().unwrap() as f32, 0.65);
    assert_eq!(log.lines().count(), 2);
}

#[test]
fn eval_is_repeatable_and_matches_the_schema() {
    let sb = Sandbox::new();
    ok(&sb.run(&["gen"]));
    ok(&sb.run(&["train", "--mode", "baseline"]));
    let dir = sb.run_dir(&[]);
    ok(&sb.run(&["eval", "--mode", "baseline"]));
    let first = fs::read(dir.join("baseline/metrics.json")).unwrap();
    ok(&sb.run(&["eval", "--mode", "baseline"]));
    assert_eq!(first, fs::read(dir.join("baseline/metrics.json")).unwrap());

    let schema: Value = serde_json::from_str(REPORT_SCHEMA).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let report: Value = serde_json::from_slice(&first).unwrap();
    let errors: Vec<String> = validator.iter_errors(&report).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{errors:?}");
    assert_eq!(report["run_id"], dir.file_name().unwrap().to_str().unwrap().trim_start_matches("run-"));

    let csv = fs::read_to_string(dir.join("baseline/robustness.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 6 * 6);
}

#[test]
fn compare_reports_and_schema_mismatch() {
    let sb = Sandbox::new();
    ok(&sb.run(&["gen"]));
    ok(&sb.run(&["train", "--mode", "baseline"]));
    ok(&sb.run(&["eval", "--mode", "baseline"]));
    let report = sb.run_dir(&[]).join("baseline/metrics.json");
    let json_out = sb.path().join("cmp.json");
    let out = Command::new(env!("CARGO_BIN_EXE_shapeforge"))
        .args(["compare", report.to_str().unwrap(), report.to_str().unwrap(), "--json", json_out.to_str().unwrap()])
        .output()
        .unwrap();
    let text = ok(&out);
    assert!(text.contains("shape_bias"));
    let cmp: Value = serde_json::from_slice(&fs::read(&json_out).unwrap()).unwrap();
    for d in cmp["deltas"].as_array().unwrap().iter().chain(cmp["robustness"].as_array().unwrap()) {
        assert_eq!(d["delta"].as_f64(), Some(0.0), "{d}");
    }

    let mut broken: Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    broken["conflict"].as_object_mut().unwrap().remove("shape_bias");
    let broken_path = sb.path().join("broken.json");
    fs::write(&broken_path, broken.to_string()).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_shapeforge"))
        .args(["compare", report.to_str().unwrap(), broken_path.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("conflict.shape_bias"));
    assert!(MetricsReport::read(&report).is_ok());
}

#[test]
fn exit_codes() {
    let sb = Sandbox::new();
    assert_eq!(sb.run(&["gen", "--eta", "1.5"]).status.code(), Some(2));
    assert_eq!(sb.run_env(&["gen"], &[("SHAPEFORGE_THREADS", "zero")]).status.code(), Some(2));
    assert_eq!(sb.run(&["train", "--mode", "baseline"]).status.code(), Some(3));

    // trainer settings are part of the run identity, so the diverging run
    // needs its own datasets
    ok(&sb.run(&["gen", "--lr", "1e30"]));
    let out = sb.run(&["train", "--mode", "baseline", "--lr", "1e30"]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));

    ok(&sb.run(&["gen"]));
    ok(&sb.run(&["train", "--mode", "baseline"]));
    let ckpt = sb.run_dir(&[]).join("baseline/model.ckpt");
    let bytes = fs::read(&ckpt).unwrap();
    fs::write(&ckpt, &bytes[..bytes.len() - 7]).unwrap();
    let out = sb.run(&["eval", "--mode", "baseline"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("checksum"));
}

#[test]
fn a_run_directory_is_locked_while_open() {
    let sb = Sandbox::new();
    let mut cfg: RunConfig = serde_json::from_str(SMALL).unwrap();
    cfg.out = sb.path().join("runs");
    let first = Run::open(cfg.clone(), 1).unwrap();
    assert!(matches!(Run::open(cfg.clone(), 1), Err(CliError::Locked { .. })));
    drop(first);
    Run::open(cfg, 1).unwrap();
}
