//! Counter-based random sampling.
//!
//! Every draw is addressed by a [`SeedSpec`] `(root_seed, stream_label, index)`.
//! The triple is hashed into a fresh ChaCha8 key, so draw `i` never depends
//! on draws `0..i` and the output is the same for any thread count or order.

use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedSpec {
    pub root_seed: u64,
    pub stream_label: String,
    pub index: u64,
}

impl SeedSpec {
    pub fn new(root_seed: u64, stream_label: impl Into<String>, index: u64) -> Self {
        Self {
            root_seed,
            stream_label: stream_label.into(),
            index,
        }
    }

    /// Same stream, different counter.
    pub fn at(&self, index: u64) -> Self {
        Self {
            index,
            ..self.clone()
        }
    }

    /// Sub-stream for an independent purpose under the same counter.
    pub fn child(&self, purpose: &str) -> Self {
        Self {
            root_seed: self.root_seed,
            stream_label: format!("{}/{}", self.stream_label, purpose),
            index: self.index,
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.root_seed.to_le_bytes());
        h.update((self.stream_label.len() as u64).to_le_bytes());
        h.update(self.stream_label.as_bytes());
        h.update(self.index.to_le_bytes());
        ChaCha8Rng::from_seed(h.finalize().into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaParams {
    alpha: f64,
    beta: f64,
}

impl BetaParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "Beta parameters must be positive, got ({alpha}, {beta})"
            )));
        }
        Ok(Self { alpha, beta })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn mean(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }

    pub fn variance(&self) -> f64 {
        let s = self.alpha + self.beta;
        self.alpha * self.beta / (s * s * (s + 1.0))
    }
}

impl Default for BetaParams {
    fn default() -> Self {
        Self {
            alpha: 4.0,
            beta: 1.0,
        }
    }
}

/// Marsaglia–Tsang squeeze/rejection sampler for Gamma(shape, 1).
/// Shapes below one use the `Gamma(shape + 1) * U^(1/shape)` boost.
pub fn sample_gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64) -> f64 {
    debug_assert!(shape > 0.0);
    if shape < 1.0 {
        let u: f64 = rng.gen::<f64>();
        return sample_gamma(rng, shape + 1.0) * u.powf(1.0 / shape);
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x: f64 = rng.sample(StandardNormal);
        let v = 1.0 + c * x;
        if v <= 0.0 {
            continue;
        }
        let v = v * v * v;
        // gen::<f64>() is in [0, 1); reflect to (0, 1] so ln(u) is finite.
        let u = 1.0 - rng.gen::<f64>();
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 {
            return d * v;
        }
        if u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return d * v;
        }
    }
}

/// One Beta(alpha, beta) variate as `X / (X + Y)` with gamma-distributed
/// `X` and `Y`.
pub fn sample_lambda(seed: &SeedSpec, params: BetaParams) -> f32 {
    let mut rng = seed.rng();
    loop {
        let x = sample_gamma(&mut rng, params.alpha);
        let y = sample_gamma(&mut rng, params.beta);
        let total = x + y;
        if total > 0.0 && total.is_finite() {
            return ((x / total) as f32).clamp(0.0, 1.0);
        }
    }
}

/// Uniform permutation of `0..n` by seeded Fisher–Yates.
pub fn sample_permutation(seed: &SeedSpec, n: usize) -> Vec<usize> {
    assert!(n >= 1, "permutation of an empty set");
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut seed.rng());
    perm
}

/// `k` independent uniform `(shape_idx, texture_idx)` pairs; pair `j` is keyed
/// on counter `seed.index + j`.
pub fn sample_pairing(
    seed: &SeedSpec,
    n_shapes: usize,
    n_textures: usize,
    k: usize,
) -> Vec<(usize, usize)> {
    assert!(n_shapes >= 1 && n_textures >= 1, "pairing from an empty set");
    (0..k as u64)
        .map(|j| {
            let mut rng = seed.at(seed.index + j).rng();
            (rng.gen_range(0..n_shapes), rng.gen_range(0..n_textures))
        })
        .collect()
}

/// Standard normal draw keyed on `seed`.
pub fn sample_normal(seed: &SeedSpec) -> f64 {
    seed.rng().sample(StandardNormal)
}

/// Goodness-of-fit helpers.
pub mod stats {
    /// Two-sided Kolmogorov–Smirnov statistic of `samples` against `cdf`.
    pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len() as f64;
        sorted
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = cdf(x);
                (f - i as f64 / n).max((i + 1) as f64 / n - f)
            })
            .fold(0.0, f64::max)
    }

    /// Asymptotic critical value `sqrt(-ln(alpha / 2) / 2) / sqrt(n)`.
    pub fn ks_critical_value(n: usize, alpha: f64) -> f64 {
        (-(alpha / 2.0).ln() / 2.0).sqrt() / (n as f64).sqrt()
    }

    pub fn mean_var(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        (mean, var)
    }
}
