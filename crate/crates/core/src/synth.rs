//! Synthetic 32x32 shape/texture dataset.
//!
//! Each sample is a solid procedural shape filled with a procedural texture
//! on a flat gray background. Shape and texture are separate class labels, so
//! splits can tie them together (aligned), force them apart (conflict), or
//! draw them independently.

use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::sampling::SeedSpec;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f32::consts::PI;

pub const SIDE: usize = 32;
pub const NUM_SHAPES: usize = 10;
pub const NUM_TEXTURES: usize = 10;

pub const SHAPE_NAMES: [&str; NUM_SHAPES] = [
    "circle", "square", "triangle", "diamond", "plus", "ring", "h_bar", "l_shape", "t_shape",
    "x_shape",
];

pub const TEXTURE_NAMES: [&str; NUM_TEXTURES] = [
    "stripes_vertical",
    "stripes_horizontal",
    "stripes_diagonal",
    "stripes_antidiagonal",
    "checker_2",
    "checker_4",
    "checker_8",
    "noise_4",
    "noise_8",
    "dots",
];

const LOW: f32 = 0.2;
const HIGH: f32 = 0.8;
const BACKGROUND: f32 = 0.5;
const BACKGROUND_NOISE: f32 = 0.02;

/// Binary foreground mask, row-major `SIDE x SIDE`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask(pub Vec<bool>);

impl Mask {
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.0[y * SIDE + x]
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&m| m).count()
    }

    pub fn fraction(&self) -> f64 {
        self.count() as f64 / self.0.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    pub image: Image,
    pub shape_class: usize,
    pub texture_class: usize,
    pub mask: Mask,
}

/// Pose perturbation applied to a canonical shape.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jitter {
    pub dx: f32,
    pub dy: f32,
    pub scale: f32,
    pub angle: f32,
}

impl Jitter {
    pub const NONE: Jitter = Jitter {
        dx: 0.0,
        dy: 0.0,
        scale: 1.0,
        angle: 0.0,
    };

    /// Position within ±3 px, scale within ±15 %, rotation within ±15°.
    pub fn sample(seed: &SeedSpec) -> Self {
        let mut rng = seed.rng();
        Jitter {
            dx: rng.gen_range(-3.0..=3.0),
            dy: rng.gen_range(-3.0..=3.0),
            scale: rng.gen_range(0.85..=1.15),
            angle: rng.gen_range(-15.0f32..=15.0).to_radians(),
        }
    }
}

// Canonical shapes in pixel units around the origin, nominally ~25 % of the
// canvas so the full jitter range stays within the 15–60 % coverage band.
fn inside_canonical(shape: usize, x: f32, y: f32) -> bool {
    let (ax, ay) = (x.abs(), y.abs());
    match shape {
        0 => x * x + y * y <= 9.0 * 9.0,
        1 => ax <= 8.0 && ay <= 8.0,
        2 => {
            // apex (0, -11), base corners (±12, 9)
            (-11.0..=9.0).contains(&y) && ax <= 12.0 * (y + 11.0) / 20.0
        }
        3 => ax + ay <= 11.0,
        4 => (ax <= 4.0 && ay <= 12.0) || (ay <= 4.0 && ax <= 12.0),
        5 => {
            let r2 = x * x + y * y;
            (6.0 * 6.0..=11.0 * 11.0).contains(&r2)
        }
        6 => (ay <= 11.0 && (6.0..=11.0).contains(&ax)) || (ax <= 6.0 && ay <= 2.5),
        7 => {
            ((-10.0..=-3.0).contains(&x) && ay <= 11.0)
                || ((-3.0..=10.0).contains(&x) && (4.0..=11.0).contains(&y))
        }
        8 => {
            ((-11.0..=-4.0).contains(&y) && ax <= 11.0) || (ax <= 3.5 && (-4.0..=11.0).contains(&y))
        }
        9 => {
            let band = 3.8 * std::f32::consts::SQRT_2;
            ax <= 11.0 && ay <= 11.0 && ((x - y).abs() <= band || (x + y).abs() <= band)
        }
        _ => unreachable!("shape class {shape}"),
    }
}

/// Rasterizes a shape under an explicit pose. A pixel is foreground when its
/// centre maps inside the canonical shape.
pub fn render_shape_with(shape_class: usize, jitter: Jitter) -> Mask {
    assert!(shape_class < NUM_SHAPES, "shape class {shape_class}");
    let centre = SIDE as f32 / 2.0;
    let (sin, cos) = jitter.angle.sin_cos();
    let mut mask = Vec::with_capacity(SIDE * SIDE);
    for y in 0..SIDE {
        for x in 0..SIDE {
            let px = x as f32 + 0.5 - centre - jitter.dx;
            let py = y as f32 + 0.5 - centre - jitter.dy;
            // inverse rotation, then inverse scale
            let u = (cos * px + sin * py) / jitter.scale;
            let v = (-sin * px + cos * py) / jitter.scale;
            mask.push(inside_canonical(shape_class, u, v));
        }
    }
    Mask(mask)
}

pub fn render_shape(shape_class: usize, jitter_seed: &SeedSpec) -> Mask {
    render_shape_with(shape_class, Jitter::sample(jitter_seed))
}

#[inline]
fn two_tone(on: bool) -> f32 {
    if on {
        HIGH
    } else {
        LOW
    }
}

/// Value noise on a lattice of `cell`-pixel spacing, binarized at its median
/// so exactly half the pixels are bright.
fn binary_value_noise(cell: usize, seed: &SeedSpec) -> Vec<f32> {
    let mut rng = seed.rng();
    let n = SIDE / cell + 2;
    let lattice: Vec<f32> = (0..n * n).map(|_| rng.gen::<f32>()).collect();
    let (ox, oy) = (rng.gen_range(0..cell), rng.gen_range(0..cell));
    let mut field = Vec::with_capacity(SIDE * SIDE);
    for y in 0..SIDE {
        for x in 0..SIDE {
            let fx = (x + ox) as f32 / cell as f32;
            let fy = (y + oy) as f32 / cell as f32;
            let (ix, iy) = (fx.floor() as usize, fy.floor() as usize);
            let (tx, ty) = (fx - ix as f32, fy - iy as f32);
            let (tx, ty) = (tx * tx * (3.0 - 2.0 * tx), ty * ty * (3.0 - 2.0 * ty));
            let at = |j: usize, i: usize| lattice[j * n + i];
            let top = at(iy, ix) * (1.0 - tx) + at(iy, ix + 1) * tx;
            let bottom = at(iy + 1, ix) * (1.0 - tx) + at(iy + 1, ix + 1) * tx;
            field.push(top * (1.0 - ty) + bottom * ty);
        }
    }
    let mut order: Vec<usize> = (0..field.len()).collect();
    order.sort_by(|&a, &b| field[a].total_cmp(&field[b]).then(a.cmp(&b)));
    let mut out = vec![LOW; field.len()];
    for &i in &order[field.len() / 2..] {
        out[i] = HIGH;
    }
    out
}

/// Renders a texture with an explicit integer phase `(oy, ox)`. Noise
/// textures take their lattice from `seed` instead.
pub fn render_texture_with(texture_class: usize, oy: usize, ox: usize, seed: &SeedSpec) -> Image {
    assert!(texture_class < NUM_TEXTURES, "texture class {texture_class}");
    let bands = |v: usize, width: usize| two_tone((v / width) % 2 == 1);
    match texture_class {
        0 => Image::from_fn(SIDE, SIDE, |_, x| bands(x + ox, 4)),
        1 => Image::from_fn(SIDE, SIDE, |y, _| bands(y + oy, 4)),
        2 => Image::from_fn(SIDE, SIDE, |y, x| bands(x + y + ox + oy, 3)),
        3 => Image::from_fn(SIDE, SIDE, |y, x| bands(x + 2 * SIDE - y + ox + oy, 2)),
        4..=6 => {
            let scale = [2, 4, 8][texture_class - 4];
            Image::from_fn(SIDE, SIDE, |y, x| {
                two_tone(((y + oy) / scale + (x + ox) / scale) % 2 == 1)
            })
        }
        7 | 8 => {
            let cell = [4, 8][texture_class - 7];
            Image::new(SIDE, SIDE, 1, binary_value_noise(cell, seed)).expect("noise in range")
        }
        9 => Image::from_fn(SIDE, SIDE, |y, x| {
            let (cy, cx) = ((y + oy) % 6, (x + ox) % 6);
            let (dy, dx) = (cy as f32 - 2.5, cx as f32 - 2.5);
            two_tone(dy * dy + dx * dx <= 4.0)
        }),
        _ => unreachable!(),
    }
}

pub fn render_texture(texture_class: usize, phase_seed: &SeedSpec) -> Image {
    let mut rng = phase_seed.rng();
    let (oy, ox) = (rng.gen_range(0..16), rng.gen_range(0..16));
    render_texture_with(texture_class, oy, ox, &phase_seed.child("noise"))
}

/// Texture inside the shape mask, gray 0.5 ± 0.02 elsewhere.
pub fn compose_sample(shape_class: usize, texture_class: usize, seed: &SeedSpec) -> SynthSample {
    let mask = render_shape(shape_class, &seed.child("shape"));
    let texture = render_texture(texture_class, &seed.child("texture"));
    let mut rng = seed.child("background").rng();
    let data = mask
        .0
        .iter()
        .zip(texture.data())
        .map(|(&fg, &t)| {
            // Draw for every pixel so the noise field does not depend on the mask.
            let noise = rng.gen_range(-BACKGROUND_NOISE..=BACKGROUND_NOISE);
            if fg {
                t
            } else {
                BACKGROUND + noise
            }
        })
        .collect();
    SynthSample {
        image: Image::new(SIDE, SIDE, 1, data).expect("composed pixels in range"),
        shape_class,
        texture_class,
        mask,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    Aligned,
    Conflict,
    Independent,
    /// Factor-pair probe sets; consecutive records form a pair.
    Pairs,
    /// Materialized superposition records.
    Augmented,
}

impl SplitMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            SplitMode::Aligned => "aligned",
            SplitMode::Conflict => "conflict",
            SplitMode::Independent => "independent",
            SplitMode::Pairs => "pairs",
            SplitMode::Augmented => "augmented",
        }
    }
}

/// Generates `n` samples; record `i` has shape class `i % 10`, so shape
/// classes are balanced to within one.
pub fn generate_split(name: &str, mode: SplitMode, n: usize, seed: u64) -> Vec<SynthSample> {
    assert!(n >= 1, "empty split");
    assert!(
        matches!(mode, SplitMode::Aligned | SplitMode::Conflict | SplitMode::Independent),
        "generate_split handles aligned, conflict and independent splits"
    );
    let base = SeedSpec::new(seed, format!("split:{name}:{}", mode.as_str()), 0);
    (0..n)
        .into_par_iter()
        .map(|i| {
            let spec = base.at(i as u64);
            let shape = i % NUM_SHAPES;
            let texture = match mode {
                SplitMode::Aligned => shape,
                SplitMode::Conflict => {
                    let t = spec.child("label").rng().gen_range(0..NUM_TEXTURES - 1);
                    if t >= shape {
                        t + 1
                    } else {
                        t
                    }
                }
                SplitMode::Independent => spec.child("label").rng().gen_range(0..NUM_TEXTURES),
                SplitMode::Pairs | SplitMode::Augmented => unreachable!(),
            };
            compose_sample(shape, texture, &spec)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairKind {
    SameShape,
    SameTexture,
    Random,
}

impl PairKind {
    pub const ALL: [PairKind; 3] = [PairKind::SameShape, PairKind::SameTexture, PairKind::Random];

    pub fn as_str(&self) -> &'static str {
        match self {
            PairKind::SameShape => "same_shape",
            PairKind::SameTexture => "same_texture",
            PairKind::Random => "random",
        }
    }
}

fn distinct_pair<R: Rng>(rng: &mut R, n: usize) -> (usize, usize) {
    let a = rng.gen_range(0..n);
    let b = rng.gen_range(0..n - 1);
    (a, if b >= a { b + 1 } else { b })
}

/// `m` sample pairs sharing one factor (or neither, for `Random`).
pub fn generate_factor_pairs(
    kind: PairKind,
    m: usize,
    seed: u64,
) -> Vec<(SynthSample, SynthSample)> {
    assert!(m >= 1, "empty pair set");
    let base = SeedSpec::new(seed, format!("pairs:{}", kind.as_str()), 0);
    (0..m)
        .into_par_iter()
        .map(|i| {
            let spec = base.at(i as u64);
            let mut rng = spec.child("labels").rng();
            let ((s1, t1), (s2, t2)) = match kind {
                PairKind::SameShape => {
                    let s = rng.gen_range(0..NUM_SHAPES);
                    let (t1, t2) = distinct_pair(&mut rng, NUM_TEXTURES);
                    ((s, t1), (s, t2))
                }
                PairKind::SameTexture => {
                    let t = rng.gen_range(0..NUM_TEXTURES);
                    let (s1, s2) = distinct_pair(&mut rng, NUM_SHAPES);
                    ((s1, t), (s2, t))
                }
                PairKind::Random => (
                    (rng.gen_range(0..NUM_SHAPES), rng.gen_range(0..NUM_TEXTURES)),
                    (rng.gen_range(0..NUM_SHAPES), rng.gen_range(0..NUM_TEXTURES)),
                ),
            };
            (
                compose_sample(s1, t1, &spec.child("a")),
                compose_sample(s2, t2, &spec.child("b")),
            )
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistortionKind {
    GaussianNoise,
    UniformNoise,
    LowPass,
    HighPass,
    Contrast,
    Rotation,
}

impl DistortionKind {
    pub const ALL: [DistortionKind; 6] = [
        DistortionKind::GaussianNoise,
        DistortionKind::UniformNoise,
        DistortionKind::LowPass,
        DistortionKind::HighPass,
        DistortionKind::Contrast,
        DistortionKind::Rotation,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            DistortionKind::GaussianNoise => "gaussian_noise",
            DistortionKind::UniformNoise => "uniform_noise",
            DistortionKind::LowPass => "low_pass",
            DistortionKind::HighPass => "high_pass",
            DistortionKind::Contrast => "contrast",
            DistortionKind::Rotation => "rotation",
        }
    }
}

/// Separable box blur of the given radius with clamped borders.
pub fn box_blur(img: &Image, radius: usize) -> Image {
    if radius == 0 {
        return img.clone();
    }
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let window = (2 * radius + 1) as f32;
    let pass = |src: &[f32], horizontal: bool| -> Vec<f32> {
        let mut out = vec![0.0f32; src.len()];
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    let mut acc = 0.0f32;
                    for d in -(radius as isize)..=radius as isize {
                        let (yy, xx) = if horizontal {
                            (y, (x as isize + d).clamp(0, w as isize - 1) as usize)
                        } else {
                            ((y as isize + d).clamp(0, h as isize - 1) as usize, x)
                        };
                        acc += src[(yy * w + xx) * c + ch];
                    }
                    out[(y * w + x) * c + ch] = acc / window;
                }
            }
        }
        out
    };
    let tmp = pass(img.data(), true);
    let data = pass(&tmp, false);
    Image::new(h, w, c, data.into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
        .expect("blur stays in range")
}

/// Bilinear rotation about the image centre; samples falling outside the
/// source are filled with gray.
fn rotate(img: &Image, degrees: f32) -> Image {
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let (sin, cos) = (degrees * PI / 180.0).sin_cos();
    let (cy, cx) = (h as f32 / 2.0, w as f32 / 2.0);
    let sample = |y: isize, x: isize, ch: usize| -> f32 {
        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
            BACKGROUND
        } else {
            img.get(y as usize, x as usize, ch)
        }
    };
    let mut data = Vec::with_capacity(h * w * c);
    for y in 0..h {
        for x in 0..w {
            let (py, px) = (y as f32 + 0.5 - cy, x as f32 + 0.5 - cx);
            let sx = cos * px + sin * py + cx - 0.5;
            let sy = -sin * px + cos * py + cy - 0.5;
            let (x0, y0) = (sx.floor(), sy.floor());
            let (tx, ty) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as isize, y0 as isize);
            for ch in 0..c {
                let top = sample(y0, x0, ch) * (1.0 - tx) + sample(y0, x0 + 1, ch) * tx;
                let bottom = sample(y0 + 1, x0, ch) * (1.0 - tx) + sample(y0 + 1, x0 + 1, ch) * tx;
                data.push((top * (1.0 - ty) + bottom * ty).clamp(0.0, 1.0));
            }
        }
    }
    Image::new(h, w, c, data).expect("rotation stays in range")
}

/// Applies a distortion at normalized severity `level`. Noise kinds draw
/// per-pixel values from `seed`; level 0 always returns the input.
pub fn distort(img: &Image, kind: DistortionKind, level: f32, seed: &SeedSpec) -> Result<Image> {
    if !(0.0..=1.0).contains(&level) {
        return Err(Error::InvalidLevel(level));
    }
    if level == 0.0 {
        return Ok(img.clone());
    }
    let std = 0.5 * level;
    Ok(match kind {
        DistortionKind::GaussianNoise => {
            let mut rng = seed.rng();
            let data = img
                .data()
                .iter()
                .map(|&v| {
                    let z: f64 = rng.sample(rand_distr::StandardNormal);
                    (v + std * z as f32).clamp(0.0, 1.0)
                })
                .collect();
            Image::new(img.height(), img.width(), img.channels(), data)?
        }
        DistortionKind::UniformNoise => {
            let half_width = std * 3.0f32.sqrt();
            let mut rng = seed.rng();
            let data = img
                .data()
                .iter()
                .map(|&v| (v + rng.gen_range(-half_width..=half_width)).clamp(0.0, 1.0))
                .collect();
            Image::new(img.height(), img.width(), img.channels(), data)?
        }
        DistortionKind::LowPass => box_blur(img, (4.0 * level).round() as usize),
        DistortionKind::HighPass => {
            let low = box_blur(img, (4.0 * level).round() as usize);
            let data = img
                .data()
                .iter()
                .zip(low.data())
                .map(|(&v, &l)| (v - l + 0.5).clamp(0.0, 1.0))
                .collect();
            Image::new(img.height(), img.width(), img.channels(), data)?
        }
        DistortionKind::Contrast => img.map(|v| (1.0 - level) * v + level * 0.5),
        DistortionKind::Rotation => rotate(img, 90.0 * level),
    })
}

/// The first `n` pre-clipping deviations that [`distort`] adds for
/// `GaussianNoise` at `level` under `seed`.
pub fn gaussian_noise_deviation(level: f32, seed: &SeedSpec, n: usize) -> Vec<f64> {
    let mut rng = seed.rng();
    (0..n)
        .map(|_| {
            let z: f64 = rng.sample(rand_distr::StandardNormal);
            (0.5 * level * z as f32) as f64
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn circle_without_jitter_is_a_disc() {
        let mask = render_shape_with(0, Jitter::NONE);
        for y in 0..SIDE {
            for x in 0..SIDE {
                let (dx, dy) = (x as f32 + 0.5 - 16.0, y as f32 + 0.5 - 16.0);
                assert_eq!(mask.get(y, x), dx * dx + dy * dy <= 81.0);
            }
        }
    }

    #[test]
    fn square_without_jitter_has_side_squared_area() {
        let mask = render_shape_with(1, Jitter::NONE);
        assert_eq!(mask.count(), 16 * 16);
        assert!(mask.get(8, 8) && mask.get(23, 23) && !mask.get(7, 8) && !mask.get(24, 24));
    }

    #[test]
    fn coverage_band_under_jitter() {
        for class in 0..NUM_SHAPES {
            let base = SeedSpec::new(0, "audit", 0);
            for i in 0..1000 {
                let f = render_shape(class, &base.at(i)).fraction();
                assert!((0.15..=0.60).contains(&f), "{} seed {i}: {f}", SHAPE_NAMES[class]);
            }
        }
    }

    #[test]
    fn stripes_and_checkers_by_definition() {
        let s = SeedSpec::new(0, "t", 0);
        let stripes = render_texture_with(0, 0, 0, &s);
        for y in 0..SIDE {
            for x in 0..SIDE {
                let expected = if (x / 4) % 2 == 0 { 0.2 } else { 0.8 };
                assert_eq!(stripes.get(y, x, 0), expected);
            }
        }
        let checker = render_texture_with(6, 0, 0, &s);
        for by in 0..4 {
            for bx in 0..4 {
                let v = checker.get(by * 8, bx * 8, 0);
                for y in by * 8..by * 8 + 8 {
                    for x in bx * 8..bx * 8 + 8 {
                        assert_eq!(checker.get(y, x, 0), v);
                    }
                }
                if bx > 0 {
                    assert_ne!(v, checker.get(by * 8, (bx - 1) * 8, 0));
                }
            }
        }
    }

    #[test]
    fn texture_means_in_band() {
        for class in 0..NUM_TEXTURES {
            let base = SeedSpec::new(0, "phase", 0);
            for i in 0..1000 {
                let m = render_texture(class, &base.at(i)).mean();
                assert!((0.3..=0.7).contains(&m), "{} phase {i}: {m}", TEXTURE_NAMES[class]);
            }
        }
    }

    #[test]
    fn composed_sample_structure() {
        let seed = SeedSpec::new(4, "c", 2);
        let s = compose_sample(0, 0, &seed);
        assert_eq!(s, compose_sample(0, 0, &seed));
        assert_eq!((s.shape_class, s.texture_class), (0, 0));
        assert_eq!(s.mask, render_shape(0, &seed.child("shape")));
        let tex = render_texture(0, &seed.child("texture"));
        for i in 0..SIDE * SIDE {
            if s.mask.0[i] {
                assert_eq!(s.image.data()[i], tex.data()[i]);
            } else {
                assert!((s.image.data()[i] - 0.5).abs() <= 0.02 + 1e-7);
            }
        }
    }

    #[test]
    fn split_modes() {
        let aligned = generate_split("a", SplitMode::Aligned, 100, 1);
        let mut counts = [0; NUM_SHAPES];
        for s in &aligned {
            assert_eq!(s.shape_class, s.texture_class);
            counts[s.shape_class] += 1;
        }
        assert!(counts.iter().all(|&c| c == 10));

        let conflict = generate_split("c", SplitMode::Conflict, 900, 1);
        assert!(conflict.iter().all(|s| s.shape_class != s.texture_class));

        let indep = generate_split("i", SplitMode::Independent, 10_000, 1);
        let same = indep.iter().filter(|s| s.shape_class == s.texture_class).count();
        assert!((same as f64 / 1e4 - 0.1).abs() < 0.02);
    }

    #[test]
    fn unbalanced_sizes_differ_by_at_most_one() {
        let split = generate_split("odd", SplitMode::Independent, 37, 3);
        let mut counts = [0i64; NUM_SHAPES];
        split.iter().for_each(|s| counts[s.shape_class] += 1);
        assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
    }

    #[test]
    fn factor_pairs() {
        for (a, b) in generate_factor_pairs(PairKind::SameShape, 300, 2) {
            assert_eq!(a.shape_class, b.shape_class);
            assert_ne!(a.texture_class, b.texture_class);
        }
        for (a, b) in generate_factor_pairs(PairKind::SameTexture, 300, 2) {
            assert_eq!(a.texture_class, b.texture_class);
            assert_ne!(a.shape_class, b.shape_class);
        }
        let random = generate_factor_pairs(PairKind::Random, 10_000, 2);
        let same = random.iter().filter(|(a, b)| a.shape_class == b.shape_class).count();
        assert!((same as f64 / 1e4 - 0.1).abs() < 0.02);
    }

    #[test]
    fn distortion_level_zero_is_identity() {
        let img = compose_sample(3, 5, &SeedSpec::new(1, "d", 0)).image;
        for kind in DistortionKind::ALL {
            let out = distort(&img, kind, 0.0, &SeedSpec::new(1, "n", 0)).unwrap();
            assert_eq!(out, img, "{}", kind.as_str());
        }
    }

    #[test]
    fn full_contrast_is_flat_gray() {
        let img = compose_sample(2, 6, &SeedSpec::new(1, "d", 0)).image;
        let out = distort(&img, DistortionKind::Contrast, 1.0, &SeedSpec::new(0, "n", 0)).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn invalid_level() {
        let img = Image::filled(4, 4, 1, 0.5);
        let s = SeedSpec::new(0, "n", 0);
        assert!(matches!(
            distort(&img, DistortionKind::LowPass, 1.2, &s),
            Err(Error::InvalidLevel(_))
        ));
    }

    #[test]
    fn gaussian_noise_std() {
        // Mid-gray with small noise keeps clipping negligible; the deviation
        // stream matches what distort adds before clipping.
        let seed = SeedSpec::new(8, "noise", 0);
        let dev = gaussian_noise_deviation(0.5, &seed, 10_000);
        let (_, var) = crate::sampling::stats::mean_var(&dev);
        assert!((var.sqrt() - 0.25).abs() < 0.01, "{}", var.sqrt());

        let img = Image::filled(100, 100, 1, 0.5);
        let out = distort(&img, DistortionKind::GaussianNoise, 0.5, &seed).unwrap();
        for (o, d) in out.data().iter().zip(&dev) {
            let expected = (0.5 + *d as f32).clamp(0.0, 1.0);
            assert_eq!(*o, expected);
        }
    }

    #[test]
    fn quarter_turn_of_flat_image_adds_no_fill() {
        let plain = Image::filled(32, 32, 1, 0.3);
        let turned = distort(&plain, DistortionKind::Rotation, 1.0, &SeedSpec::new(0, "n", 0)).unwrap();
        assert!(turned.data().iter().all(|&v| (v - 0.3).abs() < 1e-5));
    }

    #[test]
    fn low_pass_reduces_variance() {
        let img = compose_sample(4, 4, &SeedSpec::new(1, "lp", 0)).image;
        let var = |im: &Image| {
            let m = im.mean();
            im.data().iter().map(|v| (v - m) * (v - m)).sum::<f32>()
        };
        let mut prev = var(&img);
        for level in [0.2, 0.6, 1.0] {
            let out = distort(&img, DistortionKind::LowPass, level, &SeedSpec::new(0, "n", 0)).unwrap();
            let v = var(&out);
            assert!(v < prev);
            prev = v;
        }
    }
}
