//! The classifier: conv3x3(1→8) → ReLU → maxpool2 → conv3x3(8→16) → ReLU →
//! maxpool2 → global average pool → linear(16→10), applied to the image
//! minus [`INPUT_MEAN`].
//!
//! Forward and backward passes are generic over the float type so the same
//! code can be checked in `f64` against finite differences and run in `f32`
//! for training.

use crate::error::{Error, Result};
use num_traits::Float;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub const INPUT_SIDE: usize = 32;
pub const CONV1_OUT: usize = 8;
pub const CONV2_OUT: usize = 16;
pub const NUM_CLASSES: usize = 10;
pub const FEATURE_SIDE: usize = INPUT_SIDE / 4;
pub const EMBEDDING_DIM: usize = CONV2_OUT;
/// Subtracted from every pixel before the first convolution, so inputs in
/// `[0, 1]` reach the network centred on the background gray.
pub const INPUT_MEAN: f64 = 0.5;

const POOL1_SIDE: usize = INPUT_SIDE / 2;

/// A named slice of the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layer {
    pub name: &'static str,
    pub offset: usize,
    pub len: usize,
    pub fan_in: usize,
}

pub const CONV1_W: Layer = Layer { name: "conv1.weight", offset: 0, len: CONV1_OUT * 9, fan_in: 9 };
pub const CONV1_B: Layer = Layer { name: "conv1.bias", offset: 72, len: CONV1_OUT, fan_in: 0 };
pub const CONV2_W: Layer = Layer {
    name: "conv2.weight",
    offset: 80,
    len: CONV2_OUT * CONV1_OUT * 9,
    fan_in: CONV1_OUT * 9,
};
pub const CONV2_B: Layer = Layer { name: "conv2.bias", offset: 1232, len: CONV2_OUT, fan_in: 0 };
pub const FC_W: Layer = Layer {
    name: "fc.weight",
    offset: 1248,
    len: NUM_CLASSES * EMBEDDING_DIM,
    fan_in: EMBEDDING_DIM,
};
pub const FC_B: Layer = Layer { name: "fc.bias", offset: 1408, len: NUM_CLASSES, fan_in: 0 };

pub const LAYERS: [Layer; 6] = [CONV1_W, CONV1_B, CONV2_W, CONV2_B, FC_W, FC_B];
pub const PARAM_COUNT: usize = 1418;
pub const ARCHITECTURE: &str = "conv3x3x8-relu-maxpool2-conv3x3x16-relu-maxpool2-gap-fc10";

impl Layer {
    #[inline]
    pub fn of<'a, T>(&self, params: &'a [T]) -> &'a [T] {
        &params[self.offset..self.offset + self.len]
    }

    #[inline]
    pub fn of_mut<'a, T>(&self, params: &'a mut [T]) -> &'a mut [T] {
        &mut params[self.offset..self.offset + self.len]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    values: Vec<f32>,
}

impl ModelParams {
    pub fn zeros() -> Self {
        Self { values: vec![0.0; PARAM_COUNT] }
    }

    pub fn from_vec(values: Vec<f32>) -> Result<Self> {
        if values.len() != PARAM_COUNT {
            return Err(Error::ShapeMismatch(format!(
                "expected {PARAM_COUNT} parameters, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::ShapeMismatch("non-finite parameter".into()));
        }
        Ok(Self { values })
    }

    /// He-normal weights (`std = sqrt(2 / fan_in)`), zero biases.
    pub fn init(seed: u64) -> Self {
        let mut rng = crate::sampling::SeedSpec::new(seed, "init", 0).rng();
        let mut values = vec![0.0f32; PARAM_COUNT];
        for layer in LAYERS.iter().filter(|l| l.fan_in > 0) {
            let normal = Normal::new(0.0, (2.0 / layer.fan_in as f64).sqrt()).unwrap();
            for v in layer.of_mut(&mut values) {
                *v = normal.sample(&mut rng) as f32;
            }
        }
        Self { values }
    }

    /// Draws every weight uniformly; used for tests that need a generic point.
    pub fn random_uniform(seed: u64, scale: f32) -> Self {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let values = (0..PARAM_COUNT)
            .map(|_| rand::Rng::gen_range(&mut rng, -scale..scale))
            .collect();
        Self { values }
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn layer(&self, layer: Layer) -> &[f32] {
        layer.of(&self.values)
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| v as f64).collect()
    }
}

/// Activations kept from a forward pass. Tensors are channel-major:
/// `[channel][y][x]`.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T> {
    /// Post-ReLU conv1 output, 8x32x32.
    pub conv1: Vec<T>,
    /// 8x16x16.
    pub pool1: Vec<T>,
    /// Post-ReLU conv2 output, 16x16x16.
    pub conv2: Vec<T>,
    /// Pre-pooling feature map `F`, 16x8x8.
    pub features: Vec<T>,
    /// Global-average pooled embedding `z`.
    pub embedding: Vec<T>,
    pub logits: Vec<T>,
    pool1_arg: Vec<u32>,
    pool2_arg: Vec<u32>,
}

impl<T> ForwardTrace<T> {
    /// Indices chosen by each max-pool cell; together with the ReLU sign
    /// pattern these fix the piecewise-linear region of the network.
    pub fn routing(&self) -> (&[u32], &[u32]) {
        (&self.pool1_arg, &self.pool2_arg)
    }
}

fn center<T: Float>(image: &[T]) -> Vec<T> {
    let mean = cast::<T>(INPUT_MEAN);
    image.iter().map(|&v| v - mean).collect()
}

#[inline]
fn cast<T: Float>(v: f64) -> T {
    T::from(v).unwrap()
}

/// 3x3 convolution, stride 1, zero padding 1. `weights` is
/// `[out][in][3][3]`. Returns pre-activation output.
fn conv3x3<T: Float>(
    input: &[T],
    in_c: usize,
    side: usize,
    weights: &[T],
    bias: &[T],
    out_c: usize,
) -> Vec<T> {
    let plane = side * side;
    let mut out = vec![T::zero(); out_c * plane];
    for f in 0..out_c {
        let out_plane = &mut out[f * plane..(f + 1) * plane];
        out_plane.iter_mut().for_each(|v| *v = bias[f]);
        for c in 0..in_c {
            let in_plane = &input[c * plane..(c + 1) * plane];
            for ky in 0..3 {
                for kx in 0..3 {
                    let w = weights[((f * in_c + c) * 3 + ky) * 3 + kx];
                    let (y0, y1) = (1usize.saturating_sub(ky), (side + 1 - ky).min(side));
                    let (x0, x1) = (1usize.saturating_sub(kx), (side + 1 - kx).min(side));
                    for y in y0..y1 {
                        let src = &in_plane[(y + ky - 1) * side..];
                        let dst = &mut out_plane[y * side..(y + 1) * side];
                        for x in x0..x1 {
                            dst[x] = dst[x] + w * src[x + kx - 1];
                        }
                    }
                }
            }
        }
    }
    out
}

/// 2x2 max pool; ties go to the first position in row-major order.
fn maxpool2<T: Float>(input: &[T], channels: usize, side: usize) -> (Vec<T>, Vec<u32>) {
    let half = side / 2;
    let mut out = Vec::with_capacity(channels * half * half);
    let mut arg = Vec::with_capacity(channels * half * half);
    for c in 0..channels {
        let base = c * side * side;
        for y in 0..half {
            for x in 0..half {
                let mut best = base + 2 * y * side + 2 * x;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * y + dy) * side + 2 * x + dx;
                    if input[i] > input[best] {
                        best = i;
                    }
                }
                out.push(input[best]);
                arg.push(best as u32);
            }
        }
    }
    (out, arg)
}

fn relu_in_place<T: Float>(v: &mut [T]) {
    for x in v {
        if !(*x > T::zero()) {
            *x = T::zero();
        }
    }
}

pub fn forward<T: Float>(params: &[T], image: &[T]) -> Result<ForwardTrace<T>> {
    if params.len() != PARAM_COUNT {
        return Err(Error::ShapeMismatch(format!(
            "expected {PARAM_COUNT} parameters, got {}",
            params.len()
        )));
    }
    if image.len() != INPUT_SIDE * INPUT_SIDE {
        return Err(Error::ShapeMismatch(format!(
            "classifier input must be {INPUT_SIDE}x{INPUT_SIDE}x1, got {} values",
            image.len()
        )));
    }
    let centered = center(image);
    let image = &centered[..];
    let mut conv1 = conv3x3(image, 1, INPUT_SIDE, CONV1_W.of(params), CONV1_B.of(params), CONV1_OUT);
    relu_in_place(&mut conv1);
    let (pool1, pool1_arg) = maxpool2(&conv1, CONV1_OUT, INPUT_SIDE);
    let mut conv2 = conv3x3(
        &pool1,
        CONV1_OUT,
        POOL1_SIDE,
        CONV2_W.of(params),
        CONV2_B.of(params),
        CONV2_OUT,
    );
    relu_in_place(&mut conv2);
    let (features, pool2_arg) = maxpool2(&conv2, CONV2_OUT, POOL1_SIDE);
    let cells = FEATURE_SIDE * FEATURE_SIDE;
    let inv = cast::<T>(1.0 / cells as f64);
    let embedding: Vec<T> = features
        .chunks_exact(cells)
        .map(|ch| ch.iter().fold(T::zero(), |a, &b| a + b) * inv)
        .collect();
    let fc_w = FC_W.of(params);
    let logits = FC_B
        .of(params)
        .iter()
        .enumerate()
        .map(|(k, &b)| {
            let row = &fc_w[k * EMBEDDING_DIM..(k + 1) * EMBEDDING_DIM];
            row.iter().zip(&embedding).fold(b, |a, (&w, &z)| a + w * z)
        })
        .collect();
    Ok(ForwardTrace {
        conv1,
        pool1,
        conv2,
        features,
        embedding,
        logits,
        pool1_arg,
        pool2_arg,
    })
}

/// Accumulates `d loss / d params` into `grad` given `d loss / d logits`.
pub fn backward<T: Float>(
    params: &[T],
    image: &[T],
    trace: &ForwardTrace<T>,
    dlogits: &[T],
    grad: &mut [T],
) {
    debug_assert_eq!(grad.len(), PARAM_COUNT);
    let centered = center(image);
    let image = &centered[..];
    // linear layer
    let fc_w = FC_W.of(params);
    let mut dz = [T::zero(); EMBEDDING_DIM];
    {
        let g = FC_W.of_mut(grad);
        for (k, &d) in dlogits.iter().enumerate() {
            for j in 0..EMBEDDING_DIM {
                g[k * EMBEDDING_DIM + j] = g[k * EMBEDDING_DIM + j] + d * trace.embedding[j];
                dz[j] = dz[j] + d * fc_w[k * EMBEDDING_DIM + j];
            }
        }
        let gb = FC_B.of_mut(grad);
        for (k, &d) in dlogits.iter().enumerate() {
            gb[k] = gb[k] + d;
        }
    }

    // average pool and second max pool route into conv2's output; zero where ReLU was off
    let cells = FEATURE_SIDE * FEATURE_SIDE;
    let inv = cast::<T>(1.0 / cells as f64);
    let plane2 = POOL1_SIDE * POOL1_SIDE;
    let mut dpre2 = vec![T::zero(); CONV2_OUT * plane2];
    for (i, &src) in trace.pool2_arg.iter().enumerate() {
        let src = src as usize;
        if trace.conv2[src] > T::zero() {
            dpre2[src] = dz[i / cells] * inv;
        }
    }

    // conv2
    let w2 = CONV2_W.of(params);
    let mut dpool1 = vec![T::zero(); CONV1_OUT * plane2];
    {
        let gb = CONV2_B.of_mut(grad);
        for f in 0..CONV2_OUT {
            gb[f] = dpre2[f * plane2..(f + 1) * plane2]
                .iter()
                .fold(gb[f], |a, &b| a + b);
        }
    }
    let gw2 = CONV2_W.of_mut(grad);
    conv3x3_backward(
        &trace.pool1,
        CONV1_OUT,
        POOL1_SIDE,
        w2,
        &dpre2,
        CONV2_OUT,
        gw2,
        Some(&mut dpool1),
    );

    // first max pool and ReLU
    let plane1 = INPUT_SIDE * INPUT_SIDE;
    let mut dpre1 = vec![T::zero(); CONV1_OUT * plane1];
    for (i, &src) in trace.pool1_arg.iter().enumerate() {
        let src = src as usize;
        if trace.conv1[src] > T::zero() {
            dpre1[src] = dpool1[i];
        }
    }
    {
        let gb = CONV1_B.of_mut(grad);
        for f in 0..CONV1_OUT {
            gb[f] = dpre1[f * plane1..(f + 1) * plane1]
                .iter()
                .fold(gb[f], |a, &b| a + b);
        }
    }
    let w1 = CONV1_W.of(params);
    conv3x3_backward(image, 1, INPUT_SIDE, w1, &dpre1, CONV1_OUT, CONV1_W.of_mut(grad), None);
}

/// Weight gradient (accumulated into `gw`) and optionally input gradient of
/// [`conv3x3`], given the gradient of its pre-activation output.
#[allow(clippy::too_many_arguments)]
fn conv3x3_backward<T: Float>(
    input: &[T],
    in_c: usize,
    side: usize,
    weights: &[T],
    dout: &[T],
    out_c: usize,
    gw: &mut [T],
    mut dinput: Option<&mut Vec<T>>,
) {
    let plane = side * side;
    for f in 0..out_c {
        let dplane = &dout[f * plane..(f + 1) * plane];
        if dplane.iter().all(|v| v.is_zero()) {
            continue;
        }
        for c in 0..in_c {
            let in_plane = &input[c * plane..(c + 1) * plane];
            for ky in 0..3 {
                for kx in 0..3 {
                    let wi = ((f * in_c + c) * 3 + ky) * 3 + kx;
                    let w = weights[wi];
                    let (y0, y1) = (1usize.saturating_sub(ky), (side + 1 - ky).min(side));
                    let (x0, x1) = (1usize.saturating_sub(kx), (side + 1 - kx).min(side));
                    let mut acc = T::zero();
                    for y in y0..y1 {
                        let src_row = (y + ky - 1) * side;
                        let drow = &dplane[y * side..(y + 1) * side];
                        for x in x0..x1 {
                            acc = acc + drow[x] * in_plane[src_row + x + kx - 1];
                        }
                    }
                    gw[wi] = gw[wi] + acc;
                    if let Some(din) = dinput.as_deref_mut() {
                        let din_plane = &mut din[c * plane..(c + 1) * plane];
                        for y in y0..y1 {
                            let src_row = (y + ky - 1) * side;
                            let drow = &dplane[y * side..(y + 1) * side];
                            for x in x0..x1 {
                                din_plane[src_row + x + kx - 1] =
                                    din_plane[src_row + x + kx - 1] + w * drow[x];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax<T: Float>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
