//! Measurements of what a trained classifier relies on.
//!
//! * [`accuracy`]: fraction of argmax predictions equal to the shape class.
//! * [`shape_bias`]: on cue-conflict images, shape decisions over shape plus
//!   texture decisions.
//! * [`shape_factor`]: per embedding dimension, which factor (shape,
//!   texture, residual) its activations track across factor-matched pairs.
//! * [`readout_train`] / [`readout_eval`]: a per-pixel linear probe for the
//!   object mask on frozen feature maps, scored by mIoU.
//! * [`robustness_sweep`]: accuracy under graded distortions.

use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::sampling::{sample_permutation, SeedSpec};
use crate::synth::{distort, DistortionKind, Mask, PairKind, SynthSample, NUM_SHAPES, SIDE};
use crate::trainer::model::{argmax, forward, ModelParams, CONV2_OUT, FEATURE_SIDE};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const SEVERITY_LEVELS: [f32; 6] = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];
pub const MIN_PAIRS: usize = 200;

/// Anything that assigns a class to a sample. Test hooks may look at the
/// labels; models only look at the image.
pub trait Classifier: Sync {
    fn classify(&self, image: &Image, sample: &SynthSample) -> usize;
}

impl Classifier for ModelParams {
    fn classify(&self, image: &Image, _: &SynthSample) -> usize {
        let trace = forward(self.values(), image.data()).expect("classifier input is 32x32x1");
        argmax(&trace.logits)
    }
}

impl<F: Fn(&Image, &SynthSample) -> usize + Sync> Classifier for F {
    fn classify(&self, image: &Image, sample: &SynthSample) -> usize {
        self(image, sample)
    }
}

/// Anything that maps a sample to an embedding vector.
pub trait Embedder: Sync {
    fn embed(&self, sample: &SynthSample) -> Vec<f64>;
}

impl Embedder for ModelParams {
    fn embed(&self, sample: &SynthSample) -> Vec<f64> {
        let trace = forward(self.values(), sample.image.data()).expect("classifier input is 32x32x1");
        trace.embedding.iter().map(|&z| z as f64).collect()
    }
}

impl<F: Fn(&SynthSample) -> Vec<f64> + Sync> Embedder for F {
    fn embed(&self, sample: &SynthSample) -> Vec<f64> {
        self(sample)
    }
}

pub fn accuracy<C: Classifier>(model: &C, split: &[SynthSample]) -> Result<f64> {
    if split.is_empty() {
        return Err(Error::EmptySplit);
    }
    let correct: usize = split
        .par_iter()
        .map(|s| usize::from(model.classify(&s.image, s) == s.shape_class))
        .sum();
    Ok(correct as f64 / split.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassBias {
    pub class: usize,
    pub shape_correct: usize,
    pub texture_correct: usize,
    pub neither: usize,
    pub shape_bias: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeBiasResult {
    pub shape_correct: usize,
    pub texture_correct: usize,
    pub neither: usize,
    /// `shape / (shape + texture)`; 0 when the model never picks either cue.
    pub shape_bias: f64,
    /// Fraction of samples where the prediction matched either cue.
    pub coverage: f64,
    pub per_class: Vec<ClassBias>,
}

fn bias_ratio(shape: usize, texture: usize) -> f64 {
    if shape + texture == 0 {
        0.0
    } else {
        shape as f64 / (shape + texture) as f64
    }
}

/// Tallies shape-cue, texture-cue and other decisions, overall and per shape
/// class.
pub fn shape_bias_from_predictions(
    split: &[SynthSample],
    predictions: &[usize],
) -> Result<ShapeBiasResult> {
    if split.is_empty() {
        return Err(Error::EmptySplit);
    }
    if let Some((index, s)) = split
        .iter()
        .enumerate()
        .find(|(_, s)| s.shape_class == s.texture_class)
    {
        return Err(Error::NotConflictSplit {
            index,
            class: s.shape_class,
        });
    }
    let classes = split.iter().map(|s| s.shape_class).max().unwrap_or(0).max(NUM_SHAPES - 1) + 1;
    let mut per = vec![[0usize; 3]; classes];
    for (s, &p) in split.iter().zip(predictions) {
        let slot = if p == s.shape_class {
            0
        } else if p == s.texture_class {
            1
        } else {
            2
        };
        per[s.shape_class][slot] += 1;
    }
    let total = |i: usize| per.iter().map(|c| c[i]).sum::<usize>();
    let (shape, texture, neither) = (total(0), total(1), total(2));
    Ok(ShapeBiasResult {
        shape_correct: shape,
        texture_correct: texture,
        neither,
        shape_bias: bias_ratio(shape, texture),
        coverage: (shape + texture) as f64 / split.len() as f64,
        per_class: per
            .iter()
            .enumerate()
            .map(|(class, c)| ClassBias {
                class,
                shape_correct: c[0],
                texture_correct: c[1],
                neither: c[2],
                shape_bias: bias_ratio(c[0], c[1]),
            })
            .collect(),
    })
}

pub fn shape_bias<C: Classifier>(model: &C, conflict_split: &[SynthSample]) -> Result<ShapeBiasResult> {
    let predictions: Vec<usize> = conflict_split
        .par_iter()
        .map(|s| model.classify(&s.image, s))
        .collect();
    shape_bias_from_predictions(conflict_split, &predictions)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Factor {
    Shape,
    Texture,
    Residual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeFactorResult {
    pub assignments: Vec<Factor>,
    /// Per dimension: clamped correlation on same-shape, same-texture and
    /// random pairs.
    pub scores: Vec<[f64; 3]>,
    pub shape_fraction: f64,
    pub texture_fraction: f64,
    pub residual_fraction: f64,
    /// Dimensions with zero variance over some pair set.
    pub degenerate: Vec<usize>,
}

pub struct PairSets<'a> {
    pub same_shape: &'a [(SynthSample, SynthSample)],
    pub same_texture: &'a [(SynthSample, SynthSample)],
    pub random: &'a [(SynthSample, SynthSample)],
}

impl<'a> PairSets<'a> {
    fn by_kind(&self) -> [(PairKind, &'a [(SynthSample, SynthSample)]); 3] {
        [
            (PairKind::SameShape, self.same_shape),
            (PairKind::SameTexture, self.same_texture),
            (PairKind::Random, self.random),
        ]
    }
}

/// Pearson correlation between pair members, with each pair counted in both
/// orders so the estimate does not depend on which member came first.
/// `None` when the values have no variance.
pub fn pair_correlation(pairs: &[(f64, f64)]) -> Option<f64> {
    let n = 2.0 * pairs.len() as f64;
    let mean = pairs.iter().map(|(a, b)| a + b).sum::<f64>() / n;
    let var = pairs
        .iter()
        .map(|(a, b)| (a - mean).powi(2) + (b - mean).powi(2))
        .sum::<f64>()
        / n;
    if !(var > 1e-12 * (1.0 + mean * mean)) {
        return None;
    }
    let cov = pairs.iter().map(|(a, b)| 2.0 * (a - mean) * (b - mean)).sum::<f64>() / n;
    Some((cov / var).clamp(-1.0, 1.0))
}

/// Smallest correlation counted as evidence of a factor: three standard
/// errors of a null correlation over `n` pairs.
pub fn correlation_floor(n: usize) -> f64 {
    3.0 / (n as f64).sqrt()
}

/// Assigns each embedding dimension to the factor whose pair set shows the
/// highest member correlation. Negative or insignificant correlations count
/// as zero, and ties (including all-zero) go to residual.
pub fn shape_factor<E: Embedder>(embedder: &E, pairs: &PairSets<'_>) -> Result<ShapeFactorResult> {
    let mut per_set = Vec::with_capacity(3);
    for (kind, set) in pairs.by_kind() {
        if set.len() < MIN_PAIRS {
            return Err(Error::TooFewPairs {
                kind: kind.as_str(),
                got: set.len(),
                needed: MIN_PAIRS,
            });
        }
        let embedded: Vec<(Vec<f64>, Vec<f64>)> = set
            .par_iter()
            .map(|(a, b)| (embedder.embed(a), embedder.embed(b)))
            .collect();
        per_set.push(embedded);
    }
    let dims = per_set[0][0].0.len();
    let mut assignments = Vec::with_capacity(dims);
    let mut scores = Vec::with_capacity(dims);
    let mut degenerate = Vec::new();
    for k in 0..dims {
        let mut score = [0.0f64; 3];
        let mut flat = false;
        for (f, set) in per_set.iter().enumerate() {
            let values: Vec<(f64, f64)> = set.iter().map(|(a, b)| (a[k], b[k])).collect();
            match pair_correlation(&values) {
                Some(r) if r >= correlation_floor(values.len()) => score[f] = r,
                Some(_) => {}
                None => flat = true,
            }
        }
        let factor = if flat {
            log::warn!("embedding dimension {k} has zero variance on a pair set; counted as residual");
            degenerate.push(k);
            score = [0.0; 3];
            Factor::Residual
        } else {
            let best = score.iter().cloned().fold(0.0, f64::max);
            let winners: Vec<usize> = (0..3).filter(|&i| score[i] == best).collect();
            match (best > 0.0, winners.as_slice()) {
                (true, [0]) => Factor::Shape,
                (true, [1]) => Factor::Texture,
                _ => Factor::Residual,
            }
        };
        assignments.push(factor);
        scores.push(score);
    }
    let frac = |f: Factor| assignments.iter().filter(|&&a| a == f).count() as f64 / dims as f64;
    Ok(ShapeFactorResult {
        shape_fraction: frac(Factor::Shape),
        texture_fraction: frac(Factor::Texture),
        residual_fraction: frac(Factor::Residual),
        assignments,
        scores,
        degenerate,
    })
}

/// Channel-major feature map `[channel][y][x]` on a square grid that divides
/// the 32-pixel mask.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub side: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl FeatureMap {
    fn at(&self, c: usize, cell: usize) -> f32 {
        self.data[c * self.side * self.side + cell]
    }
}

/// The frozen 16x8x8 map `F` the classifier pools into its embedding.
pub fn model_features(params: &ModelParams, image: &Image) -> Result<FeatureMap> {
    let trace = forward(params.values(), image.data())?;
    Ok(FeatureMap {
        side: FEATURE_SIDE,
        channels: CONV2_OUT,
        data: trace.features,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReadoutConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_images: usize,
    pub seed: u64,
}

impl Default for ReadoutConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            lr: 0.5,
            momentum: 0.9,
            batch_images: 16,
            seed: 0,
        }
    }
}

/// Per-pixel logistic probe. Features are standardized with statistics from
/// the training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadoutWeights {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl ReadoutWeights {
    fn logit(&self, map: &FeatureMap, cell: usize) -> f64 {
        (0..map.channels).fold(self.bias, |acc, c| {
            acc + self.weights[c] * (map.at(c, cell) as f64 - self.mean[c]) * self.scale[c]
        })
    }
}

/// Foreground pixel count inside each upsampled feature cell.
fn cell_foreground(mask: &Mask, side: usize) -> Vec<usize> {
    let block = SIDE / side;
    let mut counts = vec![0usize; side * side];
    for y in 0..SIDE {
        for x in 0..SIDE {
            if mask.get(y, x) {
                counts[(y / block) * side + x / block] += 1;
            }
        }
    }
    counts
}

fn check_maps(features: &[FeatureMap], masks: &[Mask]) -> Result<()> {
    if features.is_empty() {
        return Err(Error::EmptySplit);
    }
    if features.len() != masks.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} feature maps for {} masks",
            features.len(),
            masks.len()
        )));
    }
    let (side, channels) = (features[0].side, features[0].channels);
    if side == 0 || !SIDE.is_multiple_of(side) || features.iter().any(|f| f.side != side || f.channels != channels) {
        return Err(Error::ShapeMismatch("feature maps must share a side dividing 32".into()));
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Fits the probe with minibatch SGD on the mean per-pixel logistic loss.
/// Nearest-neighbour upsampling means every pixel in a cell shares the cell's
/// features, so each cell contributes `block² * p - foreground` to the
/// gradient.
pub fn readout_train(features: &[FeatureMap], masks: &[Mask], config: &ReadoutConfig) -> Result<ReadoutWeights> {
    check_maps(features, masks)?;
    let (side, channels) = (features[0].side, features[0].channels);
    let cells = side * side;
    let block2 = ((SIDE / side) * (SIDE / side)) as f64;

    let count = (features.len() * cells) as f64;
    let mut mean = vec![0.0f64; channels];
    let mut sq = vec![0.0f64; channels];
    for f in features {
        for c in 0..channels {
            for i in 0..cells {
                let v = f.at(c, i) as f64;
                mean[c] += v;
                sq[c] += v * v;
            }
        }
    }
    let mut scale = vec![1.0f64; channels];
    for c in 0..channels {
        mean[c] /= count;
        let var = (sq[c] / count - mean[c] * mean[c]).max(0.0);
        if var > 1e-12 {
            scale[c] = 1.0 / var.sqrt();
        }
    }
    let mut w = ReadoutWeights {
        weights: vec![0.0; channels],
        bias: 0.0,
        mean,
        scale,
    };
    let foreground: Vec<Vec<usize>> = masks.iter().map(|m| cell_foreground(m, side)).collect();
    let mut velocity = vec![0.0f64; channels + 1];
    let batch = config.batch_images.max(1);
    for epoch in 0..config.epochs {
        let order = sample_permutation(
            &SeedSpec::new(config.seed, format!("readout:{epoch}"), 0),
            features.len(),
        );
        for chunk in order.chunks(batch) {
            let mut grad = vec![0.0f64; channels + 1];
            for &i in chunk {
                let map = &features[i];
                for cell in 0..cells {
                    let p = sigmoid(w.logit(map, cell));
                    let d = block2 * p - foreground[i][cell] as f64;
                    for c in 0..channels {
                        grad[c] += d * (map.at(c, cell) as f64 - w.mean[c]) * w.scale[c];
                    }
                    grad[channels] += d;
                }
            }
            let norm = (chunk.len() * SIDE * SIDE) as f64;
            for (j, g) in grad.iter().enumerate() {
                velocity[j] = config.momentum * velocity[j] + g / norm;
            }
            for c in 0..channels {
                w.weights[c] -= config.lr * velocity[c];
            }
            w.bias -= config.lr * velocity[channels];
        }
    }
    Ok(w)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiouResult {
    pub miou: f64,
    pub iou_foreground: f64,
    pub iou_background: f64,
}

fn iou(intersection: usize, union: usize) -> f64 {
    if union == 0 {
        1.0
    } else {
        intersection as f64 / union as f64
    }
}

/// Mean of foreground and background IoU, pooled over every pixel of the
/// split; a pixel is predicted foreground when its probability is ≥ 0.5.
pub fn readout_eval(weights: &ReadoutWeights, features: &[FeatureMap], masks: &[Mask]) -> Result<MiouResult> {
    check_maps(features, masks)?;
    let side = features[0].side;
    let block = SIDE / side;
    let (mut tp, mut fp, mut fn_, mut tn) = (0usize, 0usize, 0usize, 0usize);
    for (map, mask) in features.iter().zip(masks) {
        let predicted: Vec<bool> = (0..side * side).map(|cell| weights.logit(map, cell) >= 0.0).collect();
        for y in 0..SIDE {
            for x in 0..SIDE {
                let p = predicted[(y / block) * side + x / block];
                match (p, mask.get(y, x)) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    (false, false) => tn += 1,
                }
            }
        }
    }
    let fg = iou(tp, tp + fp + fn_);
    let bg = iou(tn, tn + fp + fn_);
    Ok(MiouResult {
        miou: (fg + bg) / 2.0,
        iou_foreground: fg,
        iou_background: bg,
    })
}

/// mIoU of predicting background everywhere.
pub fn background_only_miou(masks: &[Mask]) -> f64 {
    let total: usize = masks.iter().map(|m| m.0.len()).sum();
    let fg: usize = masks.iter().map(Mask::count).sum();
    let fg_iou = if fg == 0 { 1.0 } else { 0.0 };
    (fg_iou + iou(total - fg, total)) / 2.0
}

pub fn split_features(params: &ModelParams, split: &[SynthSample]) -> Result<Vec<FeatureMap>> {
    split.par_iter().map(|s| model_features(params, &s.image)).collect()
}

pub fn mask_readout_train(params: &ModelParams, train_split: &[SynthSample], config: &ReadoutConfig) -> Result<ReadoutWeights> {
    let masks: Vec<Mask> = train_split.iter().map(|s| s.mask.clone()).collect();
    readout_train(&split_features(params, train_split)?, &masks, config)
}

pub fn mask_readout_eval(params: &ModelParams, weights: &ReadoutWeights, split: &[SynthSample]) -> Result<MiouResult> {
    let masks: Vec<Mask> = split.iter().map(|s| s.mask.clone()).collect();
    readout_eval(weights, &split_features(params, split)?, &masks)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessCurve {
    pub kind: DistortionKind,
    pub levels: Vec<f32>,
    pub acc: Vec<f64>,
}

impl RobustnessCurve {
    /// Mean accuracy over the levels for which `keep` holds.
    pub fn mean_over(&self, keep: impl Fn(f32) -> bool) -> f64 {
        let picked: Vec<f64> = self
            .levels
            .iter()
            .zip(&self.acc)
            .filter(|(&l, _)| keep(l))
            .map(|(_, &a)| a)
            .collect();
        picked.iter().sum::<f64>() / picked.len().max(1) as f64
    }
}

/// Accuracy on distorted copies of `split` for every `(kind, level)` cell.
/// Noise for sample `i` is keyed on `(seed, "distort:<kind>:<level>", i)`.
pub fn robustness_sweep<C: Classifier>(
    model: &C,
    split: &[SynthSample],
    kinds: &[DistortionKind],
    levels: &[f32],
    seed: u64,
) -> Result<Vec<RobustnessCurve>> {
    if split.is_empty() {
        return Err(Error::EmptySplit);
    }
    kinds
        .iter()
        .map(|&kind| {
            let acc = levels
                .iter()
                .map(|&level| {
                    let stream = SeedSpec::new(seed, format!("distort:{}:{level}", kind.as_str()), 0);
                    let correct = split
                        .par_iter()
                        .enumerate()
                        .map(|(i, s)| {
                            let img = distort(&s.image, kind, level, &stream.at(i as u64))?;
                            Ok(usize::from(model.classify(&img, s) == s.shape_class))
                        })
                        .collect::<Result<Vec<_>>>()?
                        .into_iter()
                        .sum::<usize>();
                    Ok(correct as f64 / split.len() as f64)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(RobustnessCurve {
                kind,
                levels: levels.to_vec(),
                acc,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_factor_pairs, generate_split, SplitMode};

    #[test]
    fn accuracy_cases() {
        let split = generate_split("acc", SplitMode::Independent, 100, 0);
        assert!((accuracy(&ModelParams::zeros(), &split).unwrap() - 0.1).abs() < 1e-12);
        let oracle = |_: &Image, s: &SynthSample| s.shape_class;
        assert_eq!(accuracy(&oracle, &split).unwrap(), 1.0);
        assert!(matches!(accuracy(&oracle, &[]), Err(Error::EmptySplit)));

        let four = &split[..4];
        let wrong_last = |_: &Image, s: &SynthSample| if std::ptr::eq(s, &four[3]) { 99 } else { s.shape_class };
        assert_eq!(accuracy(&wrong_last, four).unwrap(), 0.75);
    }

    #[test]
    fn shape_bias_hand_count() {
        let split = generate_split("sb", SplitMode::Conflict, 10, 0);
        let mut preds: Vec<usize> = Vec::new();
        for (i, s) in split.iter().enumerate() {
            preds.push(match i {
                0..=5 => s.shape_class,
                6 | 7 => s.texture_class,
                _ => (0..10).find(|&c| c != s.shape_class && c != s.texture_class).unwrap(),
            });
        }
        let r = shape_bias_from_predictions(&split, &preds).unwrap();
        assert_eq!((r.shape_correct, r.texture_correct, r.neither), (6, 2, 2));
        assert_eq!(r.shape_bias, 0.75);
        assert_eq!(r.coverage, 0.8);
        assert_eq!(r.per_class.iter().map(|c| c.shape_correct + c.texture_correct + c.neither).sum::<usize>(), 10);
    }

    #[test]
    fn shape_bias_oracles_and_errors() {
        let split = generate_split("sbo", SplitMode::Conflict, 90, 0);
        let shape = |_: &Image, s: &SynthSample| s.shape_class;
        let texture = |_: &Image, s: &SynthSample| s.texture_class;
        let r = shape_bias(&shape, &split).unwrap();
        assert_eq!((r.shape_bias, r.coverage), (1.0, 1.0));
        let r = shape_bias(&texture, &split).unwrap();
        assert_eq!((r.shape_bias, r.coverage), (0.0, 1.0));
        let aligned = generate_split("al", SplitMode::Aligned, 10, 0);
        assert!(matches!(shape_bias(&shape, &aligned), Err(Error::NotConflictSplit { index: 0, .. })));
    }

    proptest::proptest! {
        #[test]
        fn shape_bias_ignores_texture_relabeling(seed in 0u64..1000, shift in 1usize..9) {
            // rotate the nine non-shape labels of each shape class; this is a
            // bijection that never maps a texture onto its own shape
            let rotate = |c: usize, label: usize| {
                if label == c {
                    return label;
                }
                let others: Vec<usize> = (0..10).filter(|&k| k != c).collect();
                let at = others.iter().position(|&k| k == label).unwrap();
                others[(at + shift) % 9]
            };
            let split = generate_split("relabel", SplitMode::Conflict, 40, seed);
            let preds: Vec<usize> = (0..split.len())
                .map(|i| rand::Rng::gen_range(&mut SeedSpec::new(seed, "preds", i as u64).rng(), 0..10usize))
                .collect();
            let relabeled: Vec<SynthSample> = split
                .iter()
                .map(|s| SynthSample { texture_class: rotate(s.shape_class, s.texture_class), ..s.clone() })
                .collect();
            let moved: Vec<usize> = preds.iter().zip(&split).map(|(&p, s)| rotate(s.shape_class, p)).collect();
            let a = shape_bias_from_predictions(&split, &preds).unwrap();
            let b = shape_bias_from_predictions(&relabeled, &moved).unwrap();
            proptest::prop_assert_eq!(a.shape_bias, b.shape_bias);
            proptest::prop_assert_eq!(a.coverage, b.coverage);
        }
    }

    fn planted(s: &SynthSample) -> Vec<f64> {
        // dims 0-4 copy the shape id, 5-9 the texture id, 10-15 are noise
        let mut z = Vec::with_capacity(16);
        z.extend(std::iter::repeat_n(s.shape_class as f64, 5));
        z.extend(std::iter::repeat_n(s.texture_class as f64, 5));
        let h = s.image.data().iter().enumerate().fold(0u64, |h, (i, v)| {
            h.wrapping_mul(0x100000001b3).wrapping_add((v.to_bits() as u64) ^ i as u64)
        });
        for k in 0..6u64 {
            let spec = SeedSpec::new(h, "planted-noise", k);
            z.push(crate::sampling::sample_normal(&spec));
        }
        z
    }

    fn pair_sets(m: usize, seed: u64) -> [Vec<(SynthSample, SynthSample)>; 3] {
        PairKind::ALL.map(|k| generate_factor_pairs(k, m, seed))
    }

    #[test]
    fn shape_factor_recovers_planted_structure() {
        let [ss, st, rnd] = pair_sets(400, 5);
        let sets = PairSets { same_shape: &ss, same_texture: &st, random: &rnd };
        let r = shape_factor(&planted, &sets).unwrap();
        assert!((r.shape_fraction - 5.0 / 16.0).abs() <= 1.0 / 16.0, "{r:?}");
        assert!((r.texture_fraction - 5.0 / 16.0).abs() <= 1.0 / 16.0, "{r:?}");
        assert!(r.assignments[..5].iter().all(|&a| a == Factor::Shape));
        assert!(r.assignments[5..10].iter().all(|&a| a == Factor::Texture));
    }

    #[test]
    fn constant_embedding_is_all_residual() {
        let [ss, st, rnd] = pair_sets(200, 6);
        let sets = PairSets { same_shape: &ss, same_texture: &st, random: &rnd };
        let r = shape_factor(&|_: &SynthSample| vec![1.5; 16], &sets).unwrap();
        assert_eq!(r.shape_fraction, 0.0);
        assert_eq!(r.residual_fraction, 1.0);
        assert_eq!(r.degenerate.len(), 16);
    }

    #[test]
    fn shape_factor_needs_enough_pairs() {
        let [ss, st, rnd] = pair_sets(50, 6);
        let sets = PairSets { same_shape: &ss, same_texture: &st, random: &rnd };
        assert!(matches!(shape_factor(&planted, &sets), Err(Error::TooFewPairs { .. })));
    }

    #[test]
    fn shape_factor_invariant_under_increasing_affine_maps() {
        let [ss, st, rnd] = pair_sets(250, 8);
        let sets = PairSets { same_shape: &ss, same_texture: &st, random: &rnd };
        let base = shape_factor(&planted, &sets).unwrap();
        let moved = shape_factor(
            &|s: &SynthSample| {
                planted(s)
                    .into_iter()
                    .enumerate()
                    .map(|(k, v)| (k as f64 + 0.5) * 3.0 * v - 7.0 * k as f64)
                    .collect()
            },
            &sets,
        )
        .unwrap();
        assert_eq!(base.assignments, moved.assignments);
    }

    fn masks(split: &[SynthSample]) -> Vec<Mask> {
        split.iter().map(|s| s.mask.clone()).collect()
    }

    fn mask_as_feature(s: &SynthSample) -> FeatureMap {
        FeatureMap {
            side: SIDE,
            channels: 1,
            data: s.mask.0.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect(),
        }
    }

    #[test]
    fn readout_on_the_mask_itself_is_near_perfect() {
        let train = generate_split("rt", SplitMode::Independent, 60, 1);
        let test = generate_split("re", SplitMode::Independent, 40, 1);
        let f: Vec<FeatureMap> = train.iter().map(mask_as_feature).collect();
        let w = readout_train(&f, &masks(&train), &ReadoutConfig { epochs: 5, ..Default::default() }).unwrap();
        let ft: Vec<FeatureMap> = test.iter().map(mask_as_feature).collect();
        let r = readout_eval(&w, &ft, &masks(&test)).unwrap();
        assert!(r.miou >= 0.99, "{r:?}");
    }

    #[test]
    fn readout_on_zero_features_predicts_background() {
        let train = generate_split("zt", SplitMode::Independent, 60, 2);
        let test = generate_split("ze", SplitMode::Independent, 40, 2);
        let zero = |_: &SynthSample| FeatureMap { side: 8, channels: 16, data: vec![0.0; 1024] };
        let f: Vec<FeatureMap> = train.iter().map(zero).collect();
        let w = readout_train(&f, &masks(&train), &ReadoutConfig::default()).unwrap();
        let ft: Vec<FeatureMap> = test.iter().map(zero).collect();
        let r = readout_eval(&w, &ft, &masks(&test)).unwrap();
        let baseline = background_only_miou(&masks(&test));
        assert!((r.miou - baseline).abs() < 1e-12, "{} vs {baseline}", r.miou);
        assert_eq!(r.iou_foreground, 0.0);
    }

    #[test]
    fn readout_on_untrained_model_lies_between_bounds() {
        let train = generate_split("ut", SplitMode::Independent, 80, 3);
        let test = generate_split("ue", SplitMode::Independent, 60, 3);
        let params = ModelParams::init(3);
        let w = mask_readout_train(&params, &train, &ReadoutConfig::default()).unwrap();
        let r = mask_readout_eval(&params, &w, &test).unwrap();
        let lower = background_only_miou(&masks(&test));
        assert!(r.miou > lower && r.miou < 0.99, "{r:?} lower {lower}");
        assert!((0.0..=1.0).contains(&r.miou));
    }

    #[test]
    fn iou_of_absent_class_is_one() {
        let empty = Mask(vec![false; SIDE * SIDE]);
        assert_eq!(background_only_miou(&[empty]), 1.0);
    }

    #[test]
    fn robustness_sweep_level_zero_and_full_contrast() {
        let split = generate_split("rb", SplitMode::Independent, 100, 4);
        let params = ModelParams::init(4);
        let clean = accuracy(&params, &split).unwrap();
        let curves = robustness_sweep(&params, &split, &DistortionKind::ALL, &[0.0], 1).unwrap();
        assert!(curves.iter().all(|c| c.acc == vec![clean]));

        let flat = robustness_sweep(&params, &split, &[DistortionKind::Contrast], &[1.0], 1).unwrap();
        let gray = Image::filled(SIDE, SIDE, 1, 0.5);
        let fixed = params.classify(&gray, &split[0]);
        let expected = split.iter().filter(|s| s.shape_class == fixed).count() as f64 / 100.0;
        assert_eq!(flat[0].acc[0], expected);
        assert_eq!(expected, 0.1);
    }

    #[test]
    fn evaluation_is_repeatable() {
        let split = generate_split("rep", SplitMode::Independent, 50, 4);
        let params = ModelParams::init(1);
        let a = robustness_sweep(&params, &split, &[DistortionKind::GaussianNoise], &SEVERITY_LEVELS, 2).unwrap();
        let b = robustness_sweep(&params, &split, &[DistortionKind::GaussianNoise], &SEVERITY_LEVELS, 2).unwrap();
        assert_eq!(a, b);
    }
}
