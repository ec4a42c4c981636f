//! The experiment lifecycle inside one run directory.
//!
//! ```text
//! <out>/run-<id>/
//!   config.json                  effective configuration
//!   manifest.json                SHA-256 of every other file
//!   data/{train,test,conflict,readout,pairs}.sfds (+ .manifest.json)
//!   augment/augmented_epoch_0.sfds (+ .manifest.json, .provenance.json)
//!   <mode>/model.ckpt, train_log.jsonl, metrics.json, robustness.csv
//!   comparison.json, comparison.txt
//! ```

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::report::{compare, Comparison, MetricsReport};
use serde::Serialize;
use shapeforge_core::augment::{materialize_augmented_set, AugmentSource};
use shapeforge_core::dataset::{manifest_path, read_split, sha256_file, write_split, DatasetManifest, PairBlock};
use shapeforge_core::eval::{
    accuracy, mask_readout_eval, mask_readout_train, robustness_sweep, shape_bias, shape_factor, PairSets,
    SEVERITY_LEVELS,
};
use shapeforge_core::synth::{generate_factor_pairs, generate_split, DistortionKind, PairKind, SplitMode, SynthSample};
use shapeforge_core::trainer::checkpoint::{checkpoint_load, checkpoint_save};
use shapeforge_core::trainer::{train_with, EpochLog, ModelParams, TrainMode};
use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

pub const SPLITS: [(&str, SplitMode); 4] = [
    ("train", SplitMode::Aligned),
    ("test", SplitMode::Independent),
    ("conflict", SplitMode::Conflict),
    ("readout", SplitMode::Independent),
];
pub const PAIRS_FILE: &str = "pairs";
const LOCK_FILE: &str = ".lock";
const MANIFEST_FILE: &str = "manifest.json";

/// Exclusive hold on a run directory, released on drop.
#[derive(Debug)]
struct RunLock {
    path: PathBuf,
}

impl RunLock {
    fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::Locked {
                dir: dir.to_path_buf(),
                lock: path,
            }),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[derive(Debug, Serialize)]
struct LogHeader<'a> {
    run_id: &'a str,
    mode: TrainMode,
    /// Natural-loss weight; only meaningful for the mixed objective.
    eta: Option<f32>,
    alpha: Option<f64>,
    beta: Option<f64>,
    grid: Option<usize>,
    lr: f32,
    momentum: f32,
    epochs: usize,
    batch_size: usize,
    seed: u64,
    train_count: usize,
}

#[derive(Debug, Clone)]
pub struct RunAllOutcome {
    pub reports: Vec<MetricsReport>,
    pub comparison: Option<Comparison>,
    /// Wall-clock training time per mode; not written to disk.
    pub train_time: Vec<(TrainMode, Duration)>,
}

/// An open run directory. Only one `Run` per directory exists at a time.
#[derive(Debug)]
pub struct Run {
    pub config: RunConfig,
    pub root: PathBuf,
    threads: usize,
    _lock: RunLock,
}

impl Run {
    /// Creates (or reopens) the run directory for `config`, takes its lock
    /// and writes the effective configuration into it. `threads` caps the
    /// workers used for materializing augmented sets.
    pub fn open(config: RunConfig, threads: usize) -> Result<Self> {
        config.validate()?;
        let root = config.run_dir();
        fs::create_dir_all(&root)?;
        let lock = RunLock::acquire(&root)?;
        config.write(&root.join("config.json"))?;
        Ok(Self {
            config,
            root,
            threads: threads.max(1),
            _lock: lock,
        })
    }

    pub fn run_id(&self) -> String {
        self.config.run_id()
    }

    pub fn data_path(&self, name: &str) -> PathBuf {
        self.root.join("data").join(format!("{name}.sfds"))
    }

    pub fn augmented_path(&self) -> PathBuf {
        self.root.join("augment").join("augmented_epoch_0.sfds")
    }

    pub fn mode_dir(&self, mode: TrainMode) -> PathBuf {
        self.root.join(mode.as_str())
    }

    pub fn checkpoint_path(&self, mode: TrainMode) -> PathBuf {
        self.mode_dir(mode).join("model.ckpt")
    }

    pub fn log_path(&self, mode: TrainMode) -> PathBuf {
        self.mode_dir(mode).join("train_log.jsonl")
    }

    pub fn metrics_path(&self, mode: TrainMode) -> PathBuf {
        self.mode_dir(mode).join("metrics.json")
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join(MANIFEST_FILE)
    }

    /// Writes the train, test, conflict, readout and factor-pair datasets.
    pub fn gen(&self) -> Result<Vec<DatasetManifest>> {
        let cfg = &self.config;
        let s = &cfg.sizes;
        let mut manifests = Vec::new();
        for (name, mode) in SPLITS {
            let n = match name {
                "train" => s.train,
                "test" => s.test,
                "conflict" => s.conflict,
                _ => s.readout,
            };
            let samples = generate_split(name, mode, n, cfg.seed);
            manifests.push(write_split(&self.data_path(name), name, mode, cfg.seed, &samples, None)?);
        }
        let mut records = Vec::with_capacity(6 * s.pairs);
        let mut blocks = Vec::new();
        for kind in PairKind::ALL {
            for (a, b) in generate_factor_pairs(kind, s.pairs, cfg.seed) {
                records.push(a);
                records.push(b);
            }
            blocks.push(PairBlock {
                kind: kind.as_str().to_string(),
                pairs: s.pairs,
            });
        }
        manifests.push(write_split(
            &self.data_path(PAIRS_FILE),
            PAIRS_FILE,
            SplitMode::Pairs,
            cfg.seed,
            &records,
            Some(blocks),
        )?);
        for m in &manifests {
            log::info!("wrote {} ({} records) sha256 {}", m.split, m.count, m.sha256);
        }
        self.write_manifest()?;
        Ok(manifests)
    }

    fn load(&self, name: &str) -> Result<(DatasetManifest, Vec<SynthSample>)> {
        let path = self.data_path(name);
        if !path.exists() || !manifest_path(&path).exists() {
            return Err(CliError::MissingDataset(path));
        }
        Ok(read_split(&path)?)
    }

    fn load_pairs(&self) -> Result<[Vec<(SynthSample, SynthSample)>; 3]> {
        let (manifest, records) = self.load(PAIRS_FILE)?;
        let path = self.data_path(PAIRS_FILE);
        let bad = |reason: String| shapeforge_core::Error::Format {
            path: path.clone(),
            reason,
        };
        let blocks = manifest.pair_blocks.ok_or_else(|| bad("manifest lists no pair blocks".into()))?;
        let mut it = records.into_iter();
        let mut sets: [Vec<(SynthSample, SynthSample)>; 3] = Default::default();
        for (slot, kind) in PairKind::ALL.iter().enumerate() {
            let block = blocks
                .iter()
                .find(|b| b.kind == kind.as_str())
                .ok_or_else(|| bad(format!("no `{}` block", kind.as_str())))?;
            for _ in 0..block.pairs {
                match (it.next(), it.next()) {
                    (Some(a), Some(b)) => sets[slot].push((a, b)),
                    _ => return Err(bad("fewer records than the pair blocks declare".into()).into()),
                }
            }
        }
        Ok(sets)
    }

    /// Materializes the epoch-0 augmented set from the training split.
    pub fn augment(&self) -> Result<DatasetManifest> {
        let (_, train) = self.load("train")?;
        let source = AugmentSource::new(&train)?;
        let manifest = materialize_augmented_set(
            &source,
            0,
            train.len(),
            &self.config.augment_config(),
            &self.augmented_path(),
            self.threads,
        )?;
        log::info!("wrote augmented set ({} records) sha256 {}", manifest.count, manifest.sha256);
        self.write_manifest()?;
        Ok(manifest)
    }

    /// Trains one mode from the training split; writes the checkpoint and a
    /// JSON-lines log (a header object, then one object per epoch).
    pub fn train(&self, mode: TrainMode) -> Result<Vec<EpochLog>> {
        let (_, train) = self.load("train")?;
        let cfg = self.config.train_config();
        fs::create_dir_all(self.mode_dir(mode))?;
        let eleas = mode == TrainMode::Eleas;
        let header = LogHeader {
            run_id: &self.run_id(),
            mode,
            eta: eleas.then_some(cfg.eta),
            alpha: eleas.then_some(cfg.augment.alpha),
            beta: eleas.then_some(cfg.augment.beta),
            grid: eleas.then_some(cfg.augment.grid),
            lr: cfg.lr,
            momentum: cfg.momentum,
            epochs: cfg.epochs,
            batch_size: cfg.batch_size,
            seed: cfg.seed,
            train_count: train.len(),
        };
        match header.eta {
            Some(eta) => log::info!("training {} with eta = {eta}", mode.as_str()),
            None => log::info!("training {}", mode.as_str()),
        }
        let mut log_file = BufWriter::new(File::create(self.log_path(mode))?);
        writeln!(log_file, "{}", serde_json::json!({ "header": header }))?;
        let mut write_err = None;
        let result = train_with(&train, mode, &cfg, |entry| {
            log::info!(
                "{} epoch {} lr {} loss {:.4} acc {:.4}",
                mode.as_str(),
                entry.epoch,
                entry.lr,
                entry.train_loss,
                entry.train_acc
            );
            let line = serde_json::to_string(entry).expect("epoch log serializes");
            if let Err(e) = writeln!(log_file, "{line}").and_then(|_| log_file.flush()) {
                write_err.get_or_insert(e);
            }
        });
        log_file.flush()?;
        if let Some(e) = write_err {
            return Err(e.into());
        }
        let (params, log) = result?;
        checkpoint_save(&params, &self.checkpoint_path(mode))?;
        self.write_manifest()?;
        Ok(log)
    }

    /// Evaluates a checkpoint (by default the one trained for `mode`) and
    /// writes `metrics.json` and `robustness.csv` in the mode directory.
    pub fn eval(&self, mode: TrainMode, checkpoint: Option<&Path>) -> Result<MetricsReport> {
        let ckpt = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| self.checkpoint_path(mode));
        if !ckpt.exists() {
            return Err(CliError::MissingCheckpoint(ckpt));
        }
        let params = checkpoint_load(&ckpt)?;
        let report = self.evaluate(&params, mode)?;
        fs::create_dir_all(self.mode_dir(mode))?;
        fs::write(self.metrics_path(mode), report.to_json()?)?;
        fs::write(self.mode_dir(mode).join("robustness.csv"), report.robustness_csv())?;
        log::info!(
            "{}: clean acc {:.4}, shape bias {:.4} (coverage {:.4}), shape dims {:.4}, mIoU {:.4}",
            mode.as_str(),
            report.clean_acc,
            report.conflict.shape_bias,
            report.conflict.coverage,
            report.shape_factor.shape_fraction,
            report.miou
        );
        self.write_manifest()?;
        Ok(report)
    }

    fn evaluate(&self, params: &ModelParams, mode: TrainMode) -> Result<MetricsReport> {
        let (_, test) = self.load("test")?;
        let (_, conflict) = self.load("conflict")?;
        let (_, readout) = self.load("readout")?;
        let [same_shape, same_texture, random] = self.load_pairs()?;
        let pairs = PairSets {
            same_shape: &same_shape,
            same_texture: &same_texture,
            random: &random,
        };
        let weights = mask_readout_train(params, &readout, &self.config.readout_config())?;
        Ok(MetricsReport {
            run_id: self.run_id(),
            mode,
            seed: self.config.seed,
            clean_acc: accuracy(params, &test)?,
            conflict: shape_bias(params, &conflict)?,
            shape_factor: shape_factor(params, &pairs)?,
            miou: mask_readout_eval(params, &weights, &test)?.miou,
            robustness: robustness_sweep(params, &test, &DistortionKind::ALL, &SEVERITY_LEVELS, self.config.seed)?,
        })
    }

    /// Writes `comparison.json` and `comparison.txt` for two reports.
    pub fn write_comparison(&self, comparison: &Comparison) -> Result<()> {
        fs::write(self.root.join("comparison.json"), comparison.to_json()?)?;
        fs::write(self.root.join("comparison.txt"), comparison.to_text())?;
        self.write_manifest()
    }

    /// gen → augment → train and eval every configured mode → compare
    /// baseline against ELeaS when both are configured.
    pub fn run_all(&self) -> Result<RunAllOutcome> {
        self.gen()?;
        if self.config.modes.contains(&TrainMode::Eleas) {
            self.augment()?;
        }
        let mut reports = Vec::new();
        let mut train_time = Vec::new();
        for &mode in &self.config.modes {
            let start = Instant::now();
            self.train(mode)?;
            train_time.push((mode, start.elapsed()));
            reports.push(self.eval(mode, None)?);
        }
        let find = |m: TrainMode| reports.iter().find(|r| r.mode == m);
        let comparison = match (find(TrainMode::Baseline), find(TrainMode::Eleas)) {
            (Some(a), Some(b)) => {
                let c = compare(a, b);
                self.write_comparison(&c)?;
                Some(c)
            }
            _ => None,
        };
        Ok(RunAllOutcome {
            reports,
            comparison,
            train_time,
        })
    }

    /// Relative path → SHA-256 for every file in the run directory except
    /// the lock and the manifest itself.
    pub fn file_digests(&self) -> Result<BTreeMap<String, String>> {
        let mut out = BTreeMap::new();
        let mut stack = vec![self.root.clone()];
        while let Some(dir) = stack.pop() {
            for entry in fs::read_dir(&dir)? {
                let path = entry?.path();
                if path.is_dir() {
                    stack.push(path);
                    continue;
                }
                let rel = path.strip_prefix(&self.root).expect("inside root");
                let name = rel.to_string_lossy().replace('\\', "/");
                if name == LOCK_FILE || name == MANIFEST_FILE {
                    continue;
                }
                out.insert(name, sha256_file(&path)?);
            }
        }
        Ok(out)
    }

    pub fn write_manifest(&self) -> Result<()> {
        let manifest = serde_json::json!({
            "run_id": self.run_id(),
            "files": self.file_digests()?,
        });
        fs::write(self.manifest_path(), serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(())
    }
}
