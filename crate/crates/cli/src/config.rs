//! Run configuration: defaults, JSON config files, flag overrides and the
//! content hash that names a run directory.

use crate::error::{CliError, Result};
use clap::Args;
use serde::{Deserialize, Serialize};
use shapeforge_core::augment::AugmentConfig;
use shapeforge_core::dataset::sha256_hex;
use shapeforge_core::eval::{ReadoutConfig, MIN_PAIRS};
use shapeforge_core::trainer::{LrSchedule, TrainConfig, TrainMode};
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sizes {
    pub train: usize,
    pub test: usize,
    pub conflict: usize,
    pub readout: usize,
    /// Pairs per pair kind.
    pub pairs: usize,
}

impl Default for Sizes {
    fn default() -> Self {
        Self {
            train: 2000,
            test: 1000,
            conflict: 900,
            readout: 500,
            pairs: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerParams {
    pub lr: f32,
    pub momentum: f32,
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: LrSchedule,
}

impl Default for TrainerParams {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            lr: t.lr,
            momentum: t.momentum,
            epochs: t.epochs,
            batch_size: t.batch_size,
            schedule: t.schedule,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReadoutParams {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_images: usize,
}

impl Default for ReadoutParams {
    fn default() -> Self {
        let r = ReadoutConfig::default();
        Self {
            epochs: r.epochs,
            lr: r.lr,
            momentum: r.momentum,
            batch_images: r.batch_images,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub sizes: Sizes,
    pub alpha: f64,
    pub beta: f64,
    pub eta: f32,
    pub grid: usize,
    pub trainer: TrainerParams,
    pub readout: ReadoutParams,
    /// Parent of the run directory; not part of the run identity.
    pub out: PathBuf,
    /// Modes trained by `run-all`.
    pub modes: Vec<TrainMode>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let a = AugmentConfig::default();
        Self {
            seed: 0,
            sizes: Sizes::default(),
            alpha: a.alpha,
            beta: a.beta,
            eta: TrainConfig::default().eta,
            grid: a.grid,
            trainer: TrainerParams::default(),
            readout: ReadoutParams::default(),
            out: PathBuf::from("runs"),
            modes: vec![TrainMode::Baseline, TrainMode::Eleas],
        }
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// JSON config file; flags override its values.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Parent directory for run directories.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub eta: Option<f32>,
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f32>,
    #[arg(long)]
    pub momentum: Option<f32>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub train_n: Option<usize>,
    #[arg(long)]
    pub test_n: Option<usize>,
}

impl RunConfig {
    /// Defaults, then the config file if given, then flags.
    pub fn load(overrides: &Overrides) -> Result<Self> {
        let mut cfg = match &overrides.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
            }
            None => RunConfig::default(),
        };
        let o = overrides;
        macro_rules! set {
            ($field:expr, $value:expr) => {
                if let Some(v) = $value.clone() {
                    $field = v;
                }
            };
        }
        set!(cfg.seed, o.seed);
        set!(cfg.out, o.out);
        set!(cfg.alpha, o.alpha);
        set!(cfg.beta, o.beta);
        set!(cfg.eta, o.eta);
        set!(cfg.grid, o.grid);
        set!(cfg.trainer.epochs, o.epochs);
        set!(cfg.trainer.lr, o.lr);
        set!(cfg.trainer.momentum, o.momentum);
        set!(cfg.trainer.batch_size, o.batch_size);
        set!(cfg.sizes.train, o.train_n);
        set!(cfg.sizes.test, o.test_n);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.sizes;
        for (name, n) in [("train", s.train), ("test", s.test), ("conflict", s.conflict), ("readout", s.readout)] {
            if n == 0 {
                return Err(CliError::Config(format!("{name} size must be at least 1")));
            }
        }
        if s.pairs < MIN_PAIRS {
            return Err(CliError::Config(format!("pairs per kind must be at least {MIN_PAIRS}, got {}", s.pairs)));
        }
        if self.modes.is_empty() {
            return Err(CliError::Config("mode list is empty".into()));
        }
        if self.readout.epochs == 0 || self.readout.batch_images == 0 {
            return Err(CliError::Config("readout epochs and batch size must be positive".into()));
        }
        self.train_config().validate().map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn augment_config(&self) -> AugmentConfig {
        AugmentConfig {
            alpha: self.alpha,
            beta: self.beta,
            grid: self.grid,
            seed: self.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            eta: self.eta,
            lr: self.trainer.lr,
            momentum: self.trainer.momentum,
            epochs: self.trainer.epochs,
            batch_size: self.trainer.batch_size,
            schedule: self.trainer.schedule,
            seed: self.seed,
            augment: self.augment_config(),
        }
    }

    pub fn readout_config(&self) -> ReadoutConfig {
        ReadoutConfig {
            epochs: self.readout.epochs,
            lr: self.readout.lr,
            momentum: self.readout.momentum,
            batch_images: self.readout.batch_images,
            seed: self.seed,
        }
    }

    /// Compact JSON with sorted keys and without `out`.
    pub fn canonical_json(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = value.as_object_mut() {
            map.remove("out");
        }
        value.to_string()
    }

    pub fn run_id(&self) -> String {
        sha256_hex(self.canonical_json().as_bytes())[..16].to_string()
    }

    pub fn run_dir(&self) -> PathBuf {
        self.out.join(format!("run-{}", self.run_id()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}
