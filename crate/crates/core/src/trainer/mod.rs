//! Training: cross-entropy, the natural/augmented mixed objective, SGD with
//! momentum and the epoch loop for both training modes.

pub mod checkpoint;
pub mod gradcheck;
pub mod model;

pub use model::{argmax, backward, forward, ForwardTrace, ModelParams, LAYERS, PARAM_COUNT};

use crate::augment::{augmented_pool, compose_batch, AugmentConfig, AugmentSource, MiniBatch};
use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::sampling::{sample_permutation, SeedSpec};
use crate::synth::SynthSample;
use num_traits::Float;
use serde::{Deserialize, Serialize};

/// `-log softmax(logits)[label]`, evaluated with the max subtracted.
pub fn cross_entropy<T: Float>(logits: &[T], label: usize) -> T {
    let max = logits.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let sum = logits.iter().fold(T::zero(), |a, &l| a + (l - max).exp());
    sum.ln() - (logits[label] - max)
}

/// Softmax probabilities with the same max shift as [`cross_entropy`].
pub fn softmax<T: Float>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let exps: Vec<T> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum = exps.iter().fold(T::zero(), |a, &b| a + b);
    exps.into_iter().map(|e| e / sum).collect()
}

/// Mean cross-entropy over `samples` and its parameter gradient.
pub fn mean_ce_and_grad<T: Float>(params: &[T], samples: &[(&[T], usize)]) -> Result<(T, Vec<T>, usize)> {
    let mut grad = vec![T::zero(); params.len()];
    if samples.is_empty() {
        return Ok((T::zero(), grad, 0));
    }
    let scale = T::one() / T::from(samples.len()).unwrap();
    let mut total = T::zero();
    let mut correct = 0;
    for &(image, label) in samples {
        let trace = forward(params, image)?;
        total = total + cross_entropy(&trace.logits, label);
        if argmax(&trace.logits) == label {
            correct += 1;
        }
        let mut dlogits = softmax(&trace.logits);
        dlogits[label] = dlogits[label] - T::one();
        for d in &mut dlogits {
            *d = *d * scale;
        }
        backward(params, image, &trace, &dlogits, &mut grad);
    }
    Ok((total * scale, grad, correct))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixedLoss {
    pub loss: f32,
    pub natural: f32,
    pub augmented: f32,
    pub natural_correct: usize,
}

/// `eta * meanCE(natural) + (1 - eta) * meanCE(augmented)` and its gradient.
pub fn mixed_loss(params: &ModelParams, batch: &MiniBatch<'_>, eta: f32) -> Result<(MixedLoss, Vec<f32>)> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::InvalidConfig(format!("eta {eta} outside [0, 1]")));
    }
    if batch.natural.is_empty() || batch.augmented.is_empty() {
        return Err(Error::EmptyPool(if batch.natural.is_empty() { "natural" } else { "augmented" }));
    }
    let natural: Vec<(&[f32], usize)> = batch.natural.iter().map(|(img, l)| (img.data(), *l)).collect();
    let augmented: Vec<(&[f32], usize)> = batch
        .augmented
        .iter()
        .map(|a| (a.image.data(), a.label))
        .collect();
    let (nat_loss, nat_grad, natural_correct) = mean_ce_and_grad(params.values(), &natural)?;
    let (aug_loss, aug_grad, _) = mean_ce_and_grad(params.values(), &augmented)?;
    let rest = 1.0 - eta;
    let grad = nat_grad
        .iter()
        .zip(&aug_grad)
        .map(|(&n, &a)| eta * n + rest * a)
        .collect();
    Ok((
        MixedLoss {
            loss: eta * nat_loss + rest * aug_loss,
            natural: nat_loss,
            augmented: aug_loss,
            natural_correct,
        },
        grad,
    ))
}

/// `v <- momentum * v + g; theta <- theta - lr * v`.
pub fn sgd_step(params: &mut [f32], grads: &[f32], velocity: &mut [f32], lr: f32, momentum: f32) {
    assert!(params.len() == grads.len() && params.len() == velocity.len());
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = momentum * *v + g;
        *p -= lr * *v;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Baseline,
    Eleas,
}

impl TrainMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            TrainMode::Baseline => "baseline",
            TrainMode::Eleas => "eleas",
        }
    }
}

impl std::str::FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(TrainMode::Baseline),
            "eleas" => Ok(TrainMode::Eleas),
            other => Err(Error::InvalidConfig(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    /// Divide by 10 at 30 %, 60 % and 90 % of the epochs.
    Step,
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub eta: f32,
    pub lr: f32,
    pub momentum: f32,
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: LrSchedule,
    pub seed: u64,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            eta: 0.65,
            lr: 0.05,
            momentum: 0.9,
            epochs: 30,
            batch_size: 50,
            schedule: LrSchedule::Step,
            seed: 0,
            augment: AugmentConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(0.0..=1.0).contains(&self.eta) {
            return bad(format!("eta {} outside [0, 1]", self.eta));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} outside [0, 1)", self.momentum));
        }
        if self.batch_size < 2 || !self.batch_size.is_multiple_of(2) {
            return Err(Error::OddBatchSize(self.batch_size));
        }
        self.augment.beta_params()?;
        if self.augment.grid == 0 || !model::INPUT_SIDE.is_multiple_of(self.augment.grid) {
            return bad(format!("grid {} does not divide the image side", self.augment.grid));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f32 {
        match self.schedule {
            LrSchedule::Step => {
                let milestones = [0.3, 0.6, 0.9].map(|f| (f * self.epochs as f64).round() as usize);
                let drops = milestones.iter().filter(|&&m| epoch >= m).count();
                self.lr * 0.1f32.powi(drops as i32)
            }
            LrSchedule::Cosine => {
                let t = epoch as f64 / self.epochs.max(1) as f64;
                (self.lr as f64 * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())) as f32
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f32,
    pub train_loss: f32,
    pub nat_loss: f32,
    pub aug_loss: Option<f32>,
    pub train_acc: f32,
}

fn check_finite(loss: f32, epoch: usize, step: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::DivergedLoss { epoch, step, loss })
    }
}

/// Trains from the seeded initialization. Baseline mode uses plain
/// cross-entropy on natural batches; ELeaS mode regenerates an augmented pool
/// of the same size each epoch and optimizes the mixed objective on
/// half-and-half batches. Each natural sample is visited once per epoch in
/// both modes.
pub fn train(
    natural: &[SynthSample],
    mode: TrainMode,
    config: &TrainConfig,
) -> Result<(ModelParams, Vec<EpochLog>)> {
    train_with(natural, mode, config, |_| {})
}

/// [`train`] with a callback invoked after every epoch.
pub fn train_with(
    natural: &[SynthSample],
    mode: TrainMode,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<(ModelParams, Vec<EpochLog>)> {
    config.validate()?;
    if natural.is_empty() {
        return Err(Error::EmptySplit);
    }
    let mut params = ModelParams::init(config.seed);
    let mut velocity = vec![0.0f32; PARAM_COUNT];
    let mut log = Vec::with_capacity(config.epochs);
    let source = match mode {
        TrainMode::Eleas => Some(AugmentSource::new(natural)?),
        TrainMode::Baseline => None,
    };
    let augment = AugmentConfig {
        seed: config.seed,
        ..config.augment
    };

    for epoch in 0..config.epochs {
        let lr = config.lr_at(epoch);
        let (mut loss_sum, mut nat_sum, mut aug_sum, mut correct, mut seen, mut steps) =
            (0.0f64, 0.0f64, 0.0f64, 0usize, 0usize, 0usize);
        match &source {
            None => {
                let order = sample_permutation(
                    &SeedSpec::new(config.seed, format!("order:{epoch}"), 0),
                    natural.len(),
                );
                for (step, chunk) in order.chunks(config.batch_size).enumerate() {
                    let batch: Vec<(&[f32], usize)> = chunk
                        .iter()
                        .map(|&i| (natural[i].image.data(), natural[i].shape_class))
                        .collect();
                    let (loss, grad, ok) = mean_ce_and_grad(params.values(), &batch)?;
                    check_finite(loss, epoch, step)?;
                    sgd_step(params.values_mut(), &grad, &mut velocity, lr, config.momentum);
                    loss_sum += loss as f64;
                    nat_sum += loss as f64;
                    correct += ok;
                    seen += batch.len();
                    steps += 1;
                }
            }
            Some(source) => {
                let pool = augmented_pool(source, epoch, natural.len(), &augment)?;
                let half = config.batch_size / 2;
                let steps_per_epoch = natural.len().div_ceil(half);
                let batch_seed = SeedSpec::new(config.seed, format!("batch:{epoch}"), 0);
                for step in 0..steps_per_epoch {
                    let batch = compose_batch(natural, &pool, config.batch_size, step, &batch_seed)?;
                    let (loss, grad) = mixed_loss(&params, &batch, config.eta)?;
                    check_finite(loss.loss, epoch, step)?;
                    sgd_step(params.values_mut(), &grad, &mut velocity, lr, config.momentum);
                    loss_sum += loss.loss as f64;
                    nat_sum += loss.natural as f64;
                    aug_sum += loss.augmented as f64;
                    correct += loss.natural_correct;
                    seen += batch.natural.len();
                    steps += 1;
                }
            }
        }
        let steps = steps.max(1) as f64;
        let entry = EpochLog {
            epoch,
            lr,
            train_loss: (loss_sum / steps) as f32,
            nat_loss: (nat_sum / steps) as f32,
            aug_loss: source.as_ref().map(|_| (aug_sum / steps) as f32),
            train_acc: correct as f32 / seen.max(1) as f32,
        };
        on_epoch(&entry);
        log.push(entry);
    }
    Ok((params, log))
}

/// Logits for one image under `params`.
pub fn predict(params: &ModelParams, image: &Image) -> Result<Vec<f32>> {
    Ok(forward(params.values(), image.data())?.logits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::AugmentedSample;
    use crate::synth::{generate_split, SplitMode};

    #[test]
    fn cross_entropy_values() {
        let uniform = [0.3f64; 10];
        assert!((cross_entropy(&uniform, 4) - 10f64.ln()).abs() < 1e-12);

        let mut saturated = [0.0f32; 10];
        saturated[0] = 1000.0;
        let l = cross_entropy(&saturated, 0);
        assert!(l.is_finite() && l.abs() < 1e-6);

        let mut logits = [0.0f64; 10];
        logits[0] = 2.0;
        logits[1] = 1.0;
        let expected = -(2f64.exp() / (2f64.exp() + 1f64.exp() + 8.0)).ln();
        assert!((cross_entropy(&logits, 0) - expected).abs() < 1e-12);
        assert!((expected - 0.896_317).abs() < 1e-6);
    }

    #[test]
    fn cross_entropy_is_finite_for_large_logits() {
        for scale in [1.0f32, 100.0, 1e4] {
            let logits: Vec<f32> = (0..10).map(|i| scale * ((i as f32 * 1.7).sin())).collect();
            for label in 0..10 {
                assert!(cross_entropy(&logits, label).is_finite());
                assert!(softmax(&logits).iter().all(|p| p.is_finite()));
            }
        }
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[1.0f32, -2.0, 3.5, 0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 9.0]);
        assert!((p.iter().sum::<f32>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn sgd_cases() {
        let mut p = vec![1.0f32, -2.0];
        let mut v = vec![0.0f32; 2];
        sgd_step(&mut p, &[0.5, 0.25], &mut v, 1.0, 0.0);
        assert_eq!(p, vec![0.5, -2.25]);

        let mut p = vec![3.0f32];
        let mut v = vec![0.0f32];
        sgd_step(&mut p, &[0.0], &mut v, 0.1, 0.9);
        assert_eq!(p, vec![3.0]);

        let mut p = vec![0.0f32];
        let mut v = vec![0.0f32];
        sgd_step(&mut p, &[1.0], &mut v, 0.1, 0.9);
        sgd_step(&mut p, &[1.0], &mut v, 0.1, 0.9);
        assert!((p[0] + 0.29).abs() < 1e-6);
    }

    #[test]
    fn step_schedule() {
        let cfg = TrainConfig { epochs: 30, lr: 1.0, ..Default::default() };
        assert_eq!(cfg.lr_at(0), 1.0);
        assert_eq!(cfg.lr_at(8), 1.0);
        assert!((cfg.lr_at(9) - 0.1).abs() < 1e-7);
        assert!((cfg.lr_at(18) - 0.01).abs() < 1e-8);
        assert!((cfg.lr_at(29) - 0.001).abs() < 1e-9);
    }

    fn toy_batch_sources() -> (Vec<SynthSample>, Vec<AugmentedSample>) {
        let data = generate_split("mix", SplitMode::Independent, 6, 1);
        let src = AugmentSource::new(&data).unwrap();
        let aug = augmented_pool(&src, 0, 6, &AugmentConfig::default()).unwrap();
        (data, aug)
    }

    #[test]
    fn mixed_loss_boundaries_and_combination() {
        let (data, aug) = toy_batch_sources();
        let batch = compose_batch(&data, &aug, 6, 0, &SeedSpec::new(0, "b", 0)).unwrap();
        let params = ModelParams::init(2);
        let (one, g1) = mixed_loss(&params, &batch, 1.0).unwrap();
        let (zero, g0) = mixed_loss(&params, &batch, 0.0).unwrap();
        assert_eq!(one.loss, one.natural);
        assert_eq!(zero.loss, zero.augmented);
        let natural: Vec<(&[f32], usize)> = batch.natural.iter().map(|(i, l)| (i.data(), *l)).collect();
        let (nat_only, nat_grad, _) = mean_ce_and_grad(params.values(), &natural).unwrap();
        assert_eq!(one.loss, nat_only);
        assert_eq!(g1, nat_grad);

        let (mid, _) = mixed_loss(&params, &batch, 0.65).unwrap();
        assert!((mid.loss - (0.65 * one.natural + 0.35 * zero.augmented)).abs() < 1e-6);
        assert!(g0.iter().zip(&g1).any(|(a, b)| a != b));
        assert!(mixed_loss(&params, &batch, 1.1).is_err());
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let data = generate_split("z", SplitMode::Aligned, 20, 0);
        let cfg = TrainConfig { epochs: 0, seed: 9, ..Default::default() };
        let (p, log) = train(&data, TrainMode::Eleas, &cfg).unwrap();
        assert_eq!(p, ModelParams::init(9));
        assert!(log.is_empty());
    }

    #[test]
    fn training_is_deterministic() {
        let data = generate_split("d", SplitMode::Aligned, 40, 0);
        let cfg = TrainConfig { epochs: 2, batch_size: 10, ..Default::default() };
        for mode in [TrainMode::Baseline, TrainMode::Eleas] {
            let (a, la) = train(&data, mode, &cfg).unwrap();
            let (b, lb) = train(&data, mode, &cfg).unwrap();
            assert_eq!(
                a.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                b.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
            assert_eq!(la, lb);
            assert_eq!(la[0].aug_loss.is_some(), mode == TrainMode::Eleas);
        }
    }

    #[test]
    fn divergence_is_reported() {
        let data = generate_split("div", SplitMode::Aligned, 20, 0);
        let cfg = TrainConfig { epochs: 3, lr: 1e30, batch_size: 10, ..Default::default() };
        assert!(matches!(
            train(&data, TrainMode::Baseline, &cfg),
            Err(Error::DivergedLoss { .. })
        ));
    }

    #[test]
    fn config_validation() {
        let ok = TrainConfig::default();
        assert!(ok.validate().is_ok());
        assert!(TrainConfig { eta: 1.5, ..ok }.validate().is_err());
        assert!(TrainConfig { momentum: 1.0, ..ok }.validate().is_err());
        assert!(matches!(
            TrainConfig { batch_size: 7, ..ok }.validate(),
            Err(Error::OddBatchSize(7))
        ));
    }
}
