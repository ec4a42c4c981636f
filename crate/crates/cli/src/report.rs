//! Metrics reports, their CSV companion and side-by-side comparison.

use crate::error::{CliError, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use shapeforge_core::eval::{RobustnessCurve, ShapeBiasResult, ShapeFactorResult};
use shapeforge_core::synth::DistortionKind;
use shapeforge_core::trainer::TrainMode;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

pub const REPORT_SCHEMA: &str = include_str!("../schema/metrics_report.schema.json");

/// Levels averaged for the mid-severity robustness summary.
pub const MID_LEVELS: [f32; 3] = [0.2, 0.4, 0.6];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub run_id: String,
    pub mode: TrainMode,
    pub seed: u64,
    pub clean_acc: f64,
    pub conflict: ShapeBiasResult,
    pub shape_factor: ShapeFactorResult,
    pub miou: f64,
    pub robustness: Vec<RobustnessCurve>,
}

/// Fields every report must carry, as JSON pointers.
const REQUIRED: [&str; 12] = [
    "/run_id",
    "/mode",
    "/seed",
    "/clean_acc",
    "/conflict/shape_bias",
    "/conflict/coverage",
    "/conflict/per_class",
    "/shape_factor/shape_fraction",
    "/shape_factor/texture_fraction",
    "/shape_factor/assignments",
    "/miou",
    "/robustness",
];

fn dotted(pointer: &str) -> String {
    pointer.trim_start_matches('/').replace('/', ".")
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Parses a report, naming the first required field that is absent.
    pub fn from_value(value: Value, path: &Path) -> Result<Self> {
        let mismatch = |field: String| CliError::SchemaMismatch {
            path: path.to_path_buf(),
            field,
        };
        if let Some(missing) = REQUIRED.iter().find(|p| value.pointer(p).is_none()) {
            return Err(mismatch(dotted(missing)));
        }
        serde_json::from_value(value).map_err(|e| {
            let msg = e.to_string();
            let field = msg.split('`').nth(1).unwrap_or(&msg).to_string();
            mismatch(field)
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let value: Value = serde_json::from_str(&text).map_err(|e| CliError::SchemaMismatch {
            path: path.to_path_buf(),
            field: format!("(not JSON: {e})"),
        })?;
        Self::from_value(value, path)
    }

    /// `kind,level,acc` rows, one per robustness cell.
    pub fn robustness_csv(&self) -> String {
        let mut out = String::from("kind,level,acc\n");
        for curve in &self.robustness {
            for (level, acc) in curve.levels.iter().zip(&curve.acc) {
                let _ = writeln!(out, "{},{level},{acc}", curve.kind.as_str());
            }
        }
        out
    }

    pub fn curve(&self, kind: DistortionKind) -> Option<&RobustnessCurve> {
        self.robustness.iter().find(|c| c.kind == kind)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Side {
    pub run_id: String,
    pub mode: TrainMode,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Delta {
    pub metric: String,
    pub a: f64,
    pub b: f64,
    /// `b - a`.
    pub delta: f64,
}

impl Delta {
    fn new(metric: impl Into<String>, a: f64, b: f64) -> Self {
        Self {
            metric: metric.into(),
            a,
            b,
            delta: b - a,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: Side,
    pub b: Side,
    pub deltas: Vec<Delta>,
    /// Per distortion: mean accuracy over all levels (`auc`) and over the
    /// mid-severity levels (`mid`).
    pub robustness: Vec<Delta>,
}

impl Comparison {
    pub fn metric(&self, name: &str) -> Option<&Delta> {
        self.deltas.iter().chain(&self.robustness).find(|d| d.metric == name)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "A: {} ({}, seed {})\nB: {} ({}, seed {})\n",
            self.a.run_id,
            self.a.mode.as_str(),
            self.a.seed,
            self.b.run_id,
            self.b.mode.as_str(),
            self.b.seed
        );
        let _ = writeln!(out, "{:<28} {:>9} {:>9} {:>9}", "metric", "A", "B", "B-A");
        for d in self.deltas.iter().chain(&self.robustness) {
            let _ = writeln!(out, "{:<28} {:>9.4} {:>9.4} {:>+9.4}", d.metric, d.a, d.b, d.delta);
        }
        out
    }
}

pub fn compare(a: &MetricsReport, b: &MetricsReport) -> Comparison {
    let side = |r: &MetricsReport| Side {
        run_id: r.run_id.clone(),
        mode: r.mode,
        seed: r.seed,
    };
    let deltas = vec![
        Delta::new("clean_acc", a.clean_acc, b.clean_acc),
        Delta::new("shape_bias", a.conflict.shape_bias, b.conflict.shape_bias),
        Delta::new("coverage", a.conflict.coverage, b.conflict.coverage),
        Delta::new("shape_fraction", a.shape_factor.shape_fraction, b.shape_factor.shape_fraction),
        Delta::new("texture_fraction", a.shape_factor.texture_fraction, b.shape_factor.texture_fraction),
        Delta::new("miou", a.miou, b.miou),
    ];
    let mut robustness = Vec::new();
    for ca in &a.robustness {
        let Some(cb) = b.curve(ca.kind) else { continue };
        let kind = ca.kind.as_str();
        robustness.push(Delta::new(format!("{kind}.auc"), ca.mean_over(|_| true), cb.mean_over(|_| true)));
        let mid = |l: f32| MID_LEVELS.iter().any(|&m| (m - l).abs() < 1e-6);
        robustness.push(Delta::new(format!("{kind}.mid"), ca.mean_over(mid), cb.mean_over(mid)));
    }
    Comparison {
        a: side(a),
        b: side(b),
        deltas,
        robustness,
    }
}

pub fn compare_files(a: &Path, b: &Path) -> Result<Comparison> {
    Ok(compare(&MetricsReport::read(a)?, &MetricsReport::read(b)?))
}
