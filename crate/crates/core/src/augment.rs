//! Edge-map / shuffled-texture superposition and half-and-half minibatches.
//!
//! For augmented record `idx` of epoch `e`, the pairing, the mixing weight
//! and the patch permutation are all keyed on `(seed, "augment:e", idx)`.
//! The result is `lambda * shuffled(texture_src) + (1 - lambda) *
//! edges(shape_src)` and carries the label of `shape_src`.

use crate::dataset::{self, DatasetManifest, PairBlock};
use crate::error::{Error, Result};
use crate::imaging::{edge_map, patch_shuffle, superpose, EdgeMap, Image};
use crate::sampling::{
    sample_lambda, sample_pairing, sample_permutation, BetaParams, SeedSpec,
};
use crate::synth::{SplitMode, SynthSample};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub alpha: f64,
    pub beta: f64,
    pub grid: usize,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            alpha: 4.0,
            beta: 1.0,
            grid: 2,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn beta_params(&self) -> Result<BetaParams> {
        BetaParams::new(self.alpha, self.beta)
    }

    fn stream(&self, epoch: usize, idx: usize) -> SeedSpec {
        SeedSpec::new(self.seed, format!("augment:{epoch}"), idx as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub idx: usize,
    pub shape_src: usize,
    pub texture_src: usize,
    pub lambda: f32,
    pub perm: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSample {
    pub image: Image,
    /// Always the shape class of `provenance.shape_src`.
    pub label: usize,
    pub provenance: Provenance,
}

/// A source dataset with its edge maps precomputed; edge maps do not depend
/// on the epoch, so they are computed once and reused.
pub struct AugmentSource<'a> {
    samples: &'a [SynthSample],
    edges: Vec<EdgeMap>,
}

impl<'a> AugmentSource<'a> {
    pub fn new(samples: &'a [SynthSample]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyPool("augmentation source"));
        }
        let edges = samples
            .par_iter()
            .map(|s| edge_map(&s.image))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { samples, edges })
    }

    pub fn samples(&self) -> &'a [SynthSample] {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn edge(&self, i: usize) -> &EdgeMap {
        &self.edges[i]
    }
}

/// Draws pairing, weight and permutation for one record.
pub fn draw_provenance(
    n: usize,
    idx: usize,
    epoch: usize,
    config: &AugmentConfig,
) -> Result<Provenance> {
    let spec = config.stream(epoch, idx);
    let (shape_src, texture_src) = sample_pairing(&spec.child("pair"), n, n, 1)[0];
    let lambda = sample_lambda(&spec.child("lambda"), config.beta_params()?);
    let perm = sample_permutation(&spec.child("perm"), config.grid * config.grid);
    Ok(Provenance {
        idx,
        shape_src,
        texture_src,
        lambda,
        perm,
    })
}

/// Rebuilds the augmented image described by `prov`.
pub fn regenerate_from_provenance(
    source: &AugmentSource<'_>,
    prov: &Provenance,
    grid: usize,
) -> Result<AugmentedSample> {
    let n = source.len();
    if prov.shape_src >= n || prov.texture_src >= n {
        return Err(Error::ShapeMismatch(format!(
            "provenance indices ({}, {}) outside a source of {n}",
            prov.shape_src, prov.texture_src
        )));
    }
    let texture = patch_shuffle(&source.samples[prov.texture_src].image, grid, &prov.perm)?;
    let edges = source.edge(prov.shape_src).image();
    let image = superpose(&texture.image, &to_channels(edges, texture.image.channels()), prov.lambda)?;
    Ok(AugmentedSample {
        image,
        label: source.samples[prov.shape_src].shape_class,
        provenance: prov.clone(),
    })
}

fn to_channels(gray: &Image, channels: usize) -> std::borrow::Cow<'_, Image> {
    if channels == 1 {
        return std::borrow::Cow::Borrowed(gray);
    }
    let data = gray
        .data()
        .iter()
        .flat_map(|&v| std::iter::repeat_n(v, channels))
        .collect();
    std::borrow::Cow::Owned(
        Image::new(gray.height(), gray.width(), channels, data).expect("replicated channels"),
    )
}

pub fn make_augmented(
    source: &AugmentSource<'_>,
    idx: usize,
    epoch: usize,
    config: &AugmentConfig,
) -> Result<AugmentedSample> {
    let prov = draw_provenance(source.len(), idx, epoch, config)?;
    regenerate_from_provenance(source, &prov, config.grid)
}

/// Same draws as [`make_augmented`] but with the mixing weight overridden.
pub fn make_augmented_with_lambda(
    source: &AugmentSource<'_>,
    idx: usize,
    epoch: usize,
    config: &AugmentConfig,
    lambda: f32,
) -> Result<AugmentedSample> {
    let mut prov = draw_provenance(source.len(), idx, epoch, config)?;
    prov.lambda = lambda;
    regenerate_from_provenance(source, &prov, config.grid)
}

/// Augmented records `0..n` of an epoch, generated in parallel.
pub fn augmented_pool(
    source: &AugmentSource<'_>,
    epoch: usize,
    n: usize,
    config: &AugmentConfig,
) -> Result<Vec<AugmentedSample>> {
    (0..n)
        .into_par_iter()
        .map(|idx| make_augmented(source, idx, epoch, config))
        .collect()
}

#[derive(Debug, Clone)]
pub struct MiniBatch<'a> {
    pub natural: Vec<(&'a Image, usize)>,
    pub augmented: Vec<&'a AugmentedSample>,
}

impl MiniBatch<'_> {
    pub fn len(&self) -> usize {
        self.natural.len() + self.augmented.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Element of a pool at a running `position` when the pool is visited in a
/// fresh seeded order on every pass.
pub fn epoch_order_index(len: usize, position: usize, seed: &SeedSpec) -> usize {
    let pass = position / len;
    sample_permutation(&seed.at(pass as u64), len)[position % len]
}

/// Half natural, half augmented. Within a pass over each pool no sample is
/// repeated.
pub fn compose_batch<'a>(
    natural_pool: &'a [SynthSample],
    augmented_pool: &'a [AugmentedSample],
    batch_size: usize,
    step: usize,
    seed: &SeedSpec,
) -> Result<MiniBatch<'a>> {
    if batch_size < 2 || !batch_size.is_multiple_of(2) {
        return Err(Error::OddBatchSize(batch_size));
    }
    if natural_pool.is_empty() {
        return Err(Error::EmptyPool("natural"));
    }
    if augmented_pool.is_empty() {
        return Err(Error::EmptyPool("augmented"));
    }
    let half = batch_size / 2;
    let indices = |len: usize, purpose: &str| -> Vec<usize> {
        let stream = seed.child(purpose);
        let start = step * half;
        let pass_of = |p: usize| p / len;
        let mut perm = sample_permutation(&stream.at(pass_of(start) as u64), len);
        let mut current = pass_of(start);
        (start..start + half)
            .map(|p| {
                if pass_of(p) != current {
                    current = pass_of(p);
                    perm = sample_permutation(&stream.at(current as u64), len);
                }
                perm[p % len]
            })
            .collect()
    };
    Ok(MiniBatch {
        natural: indices(natural_pool.len(), "natural")
            .into_iter()
            .map(|i| (&natural_pool[i].image, natural_pool[i].shape_class))
            .collect(),
        augmented: indices(augmented_pool.len(), "augmented")
            .into_iter()
            .map(|i| &augmented_pool[i])
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceConfig {
    pub alpha: f64,
    pub beta: f64,
    pub grid: usize,
    pub seed: u64,
    pub epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceFile {
    pub records: Vec<Provenance>,
    pub config: ProvenanceConfig,
}

pub fn provenance_path(data_path: &Path) -> PathBuf {
    data_path.with_extension("provenance.json")
}

/// Builds records `0..n` of `epoch` on a pool of `threads` workers and writes
/// them as an `SFDS` file plus manifest and provenance JSON. Output bytes do
/// not depend on `threads`.
pub fn materialize_augmented_set(
    source: &AugmentSource<'_>,
    epoch: usize,
    n: usize,
    config: &AugmentConfig,
    out_path: &Path,
    threads: usize,
) -> Result<DatasetManifest> {
    if n == 0 {
        return Err(Error::InvalidConfig("augmented set size must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let records = pool.install(|| augmented_pool(source, epoch, n, config))?;
    let samples: Vec<SynthSample> = records
        .iter()
        .map(|r| SynthSample {
            image: r.image.clone(),
            shape_class: r.label,
            texture_class: source.samples[r.provenance.texture_src].texture_class,
            mask: source.samples[r.provenance.shape_src].mask.clone(),
        })
        .collect();
    let manifest = dataset::write_split(
        out_path,
        &format!("augmented_epoch_{epoch}"),
        SplitMode::Augmented,
        config.seed,
        &samples,
        None::<Vec<PairBlock>>,
    )?;
    let prov = ProvenanceFile {
        records: records.into_iter().map(|r| r.provenance).collect(),
        config: ProvenanceConfig {
            alpha: config.alpha,
            beta: config.beta,
            grid: config.grid,
            seed: config.seed,
            epoch,
        },
    };
    fs::write(provenance_path(out_path), serde_json::to_vec(&prov)?)?;
    Ok(manifest)
}

pub fn read_provenance(data_path: &Path) -> Result<ProvenanceFile> {
    Ok(serde_json::from_slice(&fs::read(provenance_path(data_path))?)?)
}
