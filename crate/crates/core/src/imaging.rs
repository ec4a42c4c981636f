//! Pixel kernels: luma grayscale, Laplacian edge maps, grid patch shuffling
//! and convex superposition.
//!
//! Images are row-major `(y, x, c)` grids of `f32` intensities in `[0, 1]`.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Luma weights used by [`to_grayscale`].
pub const LUMA: [f32; 3] = [0.299, 0.587, 0.114];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    /// Builds an image, rejecting wrong lengths, channel counts other than 1
    /// or 3, and values that are non-finite or outside `[0, 1]`.
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::ShapeMismatch(format!(
                "channels must be 1 or 3, got {channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::ShapeMismatch(format!(
                "{height}x{width}x{channels} image needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !(v.is_finite() && (0.0..=1.0).contains(*v))) {
            return Err(Error::ShapeMismatch(format!(
                "pixel value {bad} outside [0, 1]"
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        assert!((0.0..=1.0).contains(&value));
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    /// Builds a single-channel image from a closure over `(y, x)`; results are
    /// clamped into `[0, 1]`.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(clamp_unit(f(y, x)));
            }
        }
        Self {
            height,
            width,
            channels: 1,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn same_dims(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub fn flip_horizontal(&self) -> Image {
        let mut data = Vec::with_capacity(self.data.len());
        for y in 0..self.height {
            for x in (0..self.width).rev() {
                let at = (y * self.width + x) * self.channels;
                data.extend_from_slice(&self.data[at..at + self.channels]);
            }
        }
        Image { data, ..*self }
    }

    /// Applies `f` to every value and clamps the result into `[0, 1]`.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Image {
        Image {
            data: self.data.iter().map(|&v| clamp_unit(f(v))).collect(),
            ..*self
        }
    }

    pub fn mean(&self) -> f32 {
        let sum: f64 = self.data.iter().map(|&v| v as f64).sum();
        (sum / self.data.len() as f64) as f32
    }
}

#[inline]
pub(crate) fn clamp_unit(v: f32) -> f32 {
    v.clamp(0.0, 1.0)
}

/// Single-channel magnitude of the Laplacian response, scaled so the
/// strongest response is 1.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMap(Image);

impl EdgeMap {
    pub fn image(&self) -> &Image {
        &self.0
    }

    pub fn into_image(self) -> Image {
        self.0
    }
}

/// A patch-shuffled image together with the permutation that produced it:
/// destination cell `j` holds source cell `perm[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShuffledImage {
    pub image: Image,
    pub perm: Vec<usize>,
}

pub fn to_grayscale(img: &Image) -> Image {
    if img.channels == 1 {
        return img.clone();
    }
    let data = img
        .data
        .chunks_exact(3)
        .map(|px| clamp_unit(LUMA[0] * px[0] + LUMA[1] * px[1] + LUMA[2] * px[2]))
        .collect();
    Image {
        height: img.height,
        width: img.width,
        channels: 1,
        data,
    }
}

/// Absolute response of the 4-neighbour Laplacian `[[0,1,0],[1,-4,1],[0,1,0]]`
/// with replicated borders, normalized by its maximum. A flat image gives an
/// all-zero map.
pub fn edge_map(img: &Image) -> Result<EdgeMap> {
    if img.height < 3 || img.width < 3 {
        return Err(Error::ImageTooSmall {
            height: img.height,
            width: img.width,
        });
    }
    let gray = to_grayscale(img);
    let (h, w) = (gray.height, gray.width);
    let px = |y: usize, x: usize| gray.data[y * w + x];
    let mut response = Vec::with_capacity(h * w);
    let mut max = 0.0f32;
    for y in 0..h {
        let up = y.saturating_sub(1);
        let down = (y + 1).min(h - 1);
        for x in 0..w {
            let left = x.saturating_sub(1);
            let right = (x + 1).min(w - 1);
            // Pairwise sums keep the result bit-identical under mirroring.
            let ring = (px(up, x) + px(down, x)) + (px(y, left) + px(y, right));
            let r = (ring - 4.0 * px(y, x)).abs();
            max = max.max(r);
            response.push(r);
        }
    }
    if max > 0.0 {
        for r in &mut response {
            *r = clamp_unit(*r / max);
        }
    }
    Ok(EdgeMap(Image {
        height: h,
        width: w,
        channels: 1,
        data: response,
    }))
}

/// Checks that `perm` is a bijection on `0..n`.
pub fn validate_permutation(perm: &[usize], n: usize) -> Result<()> {
    if perm.len() != n {
        return Err(Error::InvalidPermutation {
            expected: n,
            reason: format!("length {}", perm.len()),
        });
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n {
            return Err(Error::InvalidPermutation {
                expected: n,
                reason: format!("index {p} out of range"),
            });
        }
        if std::mem::replace(&mut seen[p], true) {
            return Err(Error::InvalidPermutation {
                expected: n,
                reason: format!("index {p} repeated"),
            });
        }
    }
    Ok(())
}

pub fn invert_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (dst, &src) in perm.iter().enumerate() {
        inv[src] = dst;
    }
    inv
}

/// Cuts the image into a `grid x grid` arrangement of equal blocks (cells
/// numbered row-major) and moves source block `perm[j]` into cell `j`.
pub fn patch_shuffle(img: &Image, grid: usize, perm: &[usize]) -> Result<ShuffledImage> {
    if grid == 0 || !img.height.is_multiple_of(grid) || !img.width.is_multiple_of(grid) {
        return Err(Error::IndivisibleDimensions {
            height: img.height,
            width: img.width,
            grid,
        });
    }
    validate_permutation(perm, grid * grid)?;
    let (ph, pw) = (img.height / grid, img.width / grid);
    let row_len = pw * img.channels;
    let mut data = vec![0.0f32; img.data.len()];
    for (dst, &src) in perm.iter().enumerate() {
        let (dy, dx) = (dst / grid * ph, dst % grid * pw);
        let (sy, sx) = (src / grid * ph, src % grid * pw);
        for r in 0..ph {
            let d = ((dy + r) * img.width + dx) * img.channels;
            let s = ((sy + r) * img.width + sx) * img.channels;
            data[d..d + row_len].copy_from_slice(&img.data[s..s + row_len]);
        }
    }
    Ok(ShuffledImage {
        image: Image { data, ..*img },
        perm: perm.to_vec(),
    })
}

/// Element-wise `lambda * t + (1 - lambda) * s`.
pub fn superpose(t: &Image, s: &Image, lambda: f32) -> Result<Image> {
    if !t.same_dims(s) {
        return Err(Error::ShapeMismatch(format!(
            "superpose {}x{}x{} onto {}x{}x{}",
            t.height, t.width, t.channels, s.height, s.width, s.channels
        )));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidLambda(lambda));
    }
    let rest = 1.0 - lambda;
    let data = t
        .data
        .iter()
        .zip(&s.data)
        .map(|(&tv, &sv)| clamp_unit(lambda * tv + rest * sv))
        .collect();
    Ok(Image { data, ..*t })
}
