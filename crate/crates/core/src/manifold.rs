//! Manifold sampling.
//!
//! A [`ManifoldSample`] is an (N, 2) contrastive sub-task: for each way one
//! source example is drawn and two augmented views of it are emitted under
//! the same pseudo-label. Both views come from a single source, so a positive
//! pair always shares its ground truth whatever the label noise.
//!
//! Entries are stored in canonical order `[a_0, b_0, a_1, b_1, ...]`: the
//! views of pseudo-label `j` sit at indices `2j` and `2j + 1`. Pseudo-labels
//! are way indices `0..N`.

use rand::seq::index;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::episodes::{LabeledExample, SplitDataset, Task};
use crate::{seed, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentKind {
    GaussianJitterScale,
    Identity,
}

/// Feature-space augmentation: `s * x + noise` with `s ~ U[lo, hi]` and
/// isotropic Gaussian noise. When `resample_dims > 0` the trailing
/// `resample_dims` coordinates are then replaced by fresh `N(0,
/// resample_std^2)` draws, which makes views differ in a nuisance subspace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Augmenter {
    pub kind: AugmentKind,
    pub jitter_std: f64,
    pub scale_range: (f64, f64),
    #[serde(default)]
    pub resample_dims: usize,
    #[serde(default)]
    pub resample_std: f64,
}

impl Default for Augmenter {
    fn default() -> Self {
        Self {
            kind: AugmentKind::GaussianJitterScale,
            jitter_std: 0.5,
            scale_range: (0.8, 1.2),
            resample_dims: 0,
            resample_std: 0.0,
        }
    }
}

impl Augmenter {
    pub fn identity() -> Self {
        Self {
            kind: AugmentKind::Identity,
            jitter_std: 0.0,
            scale_range: (1.0, 1.0),
            resample_dims: 0,
            resample_std: 0.0,
        }
    }

    pub fn jitter_scale(jitter_std: f64, scale_range: (f64, f64)) -> Self {
        Self {
            kind: AugmentKind::GaussianJitterScale,
            jitter_std,
            scale_range,
            resample_dims: 0,
            resample_std: 0.0,
        }
    }

    /// Also redraw the trailing `dims` coordinates from `N(0, std^2)`.
    pub fn with_resampled_tail(mut self, dims: usize, std: f64) -> Self {
        self.resample_dims = dims;
        self.resample_std = std;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.scale_range;
        if !(self.jitter_std >= 0.0) || !(lo <= hi) || !(self.resample_std >= 0.0) {
            return Err(Error::InvalidArgument(format!("invalid augmenter {self:?}")));
        }
        Ok(())
    }

    pub fn augment(&self, x: &[f64], seed: u64) -> Vec<f64> {
        self.apply(x, &mut seed::rng(seed))
    }

    pub fn apply(&self, x: &[f64], rng: &mut seed::Rng) -> Vec<f64> {
        match self.kind {
            AugmentKind::Identity => x.to_vec(),
            AugmentKind::GaussianJitterScale => {
                let (lo, hi) = self.scale_range;
                let s = if lo < hi { rng.random_range(lo..hi) } else { lo };
                let tail = x.len().saturating_sub(self.resample_dims);
                x.iter()
                    .enumerate()
                    .map(|(i, &v)| {
                        let z: f64 = rng.sample(StandardNormal);
                        if i < tail {
                            s * v + self.jitter_std * z
                        } else {
                            self.resample_std * z
                        }
                    })
                    .collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifoldEntry {
    pub features: Vec<f64>,
    pub pseudo_label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifoldSample {
    pub entries: Vec<ManifoldEntry>,
    /// `sources[j]` is the source id behind pseudo-label `j`.
    pub sources: Vec<usize>,
}

impl ManifoldSample {
    pub fn ways(&self) -> usize {
        self.sources.len()
    }

    /// Indices of the two views with pseudo-label `j`.
    pub fn pair(&self, j: usize) -> (usize, usize) {
        (2 * j, 2 * j + 1)
    }

    pub fn features(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.entries.iter().map(|e| &e.features)
    }

    fn from_views(views: Vec<(usize, Vec<f64>, Vec<f64>)>) -> Self {
        let mut entries = Vec::with_capacity(views.len() * 2);
        let mut sources = Vec::with_capacity(views.len());
        for (j, (source, a, b)) in views.into_iter().enumerate() {
            entries.push(ManifoldEntry {
                features: a,
                pseudo_label: j,
            });
            entries.push(ManifoldEntry {
                features: b,
                pseudo_label: j,
            });
            sources.push(source);
        }
        Self { entries, sources }
    }
}

/// A batch of independent manifold samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ManBatch {
    pub samples: Vec<ManifoldSample>,
}

/// Anything manifold samplers can draw sources and views from.
///
/// Sources are grouped by way (observed label) and addressed as
/// `(way, index)`.
pub trait ManifoldSource {
    fn num_ways(&self) -> usize;

    fn way_size(&self, way: usize) -> usize;

    fn source_id(&self, way: usize, index: usize) -> usize;

    /// Two independent views of the source at `(way, index)`.
    fn views(
        &self,
        way: usize,
        index: usize,
        aug: &Augmenter,
        rng: &mut seed::Rng,
    ) -> Result<(Vec<f64>, Vec<f64>)>;

    fn total(&self) -> usize {
        (0..self.num_ways()).map(|w| self.way_size(w)).sum()
    }
}

/// Labeled examples grouped by way; views are fresh augmentations.
#[derive(Debug, Clone)]
pub struct WaySet {
    ways: Vec<Vec<(usize, Vec<f64>)>>,
}

impl WaySet {
    /// Group examples by observed label, which must be a way index below
    /// `ways`. Ground truth is dropped.
    pub fn new(examples: &[LabeledExample], ways: usize) -> Result<Self> {
        let mut grouped = vec![Vec::new(); ways];
        for ex in examples {
            let slot = grouped.get_mut(ex.label).ok_or(Error::LabelOutOfRange {
                label: ex.label,
                classes: ways,
            })?;
            slot.push((ex.source_id, ex.features.clone()));
        }
        Ok(Self { ways: grouped })
    }
}

impl ManifoldSource for WaySet {
    fn num_ways(&self) -> usize {
        self.ways.len()
    }

    fn way_size(&self, way: usize) -> usize {
        self.ways[way].len()
    }

    fn source_id(&self, way: usize, index: usize) -> usize {
        self.ways[way][index].0
    }

    fn views(
        &self,
        way: usize,
        index: usize,
        aug: &Augmenter,
        rng: &mut seed::Rng,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let x = &self.ways[way][index].1;
        Ok((aug.apply(x, rng), aug.apply(x, rng)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoolEntry {
    pub source_id: usize,
    pub augmentations: Vec<Vec<f64>>,
}

/// Pre-generated augmentations per source, grouped by way. Views are two
/// distinct members of a source's pool.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationPool {
    ways: Vec<Vec<PoolEntry>>,
}

impl AugmentationPool {
    /// `per_source` augmentations of every example, grouped by way.
    pub fn build(
        examples: &[LabeledExample],
        ways: usize,
        per_source: usize,
        aug: &Augmenter,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = seed::rng(seed);
        let mut grouped: Vec<Vec<PoolEntry>> = vec![Vec::new(); ways];
        for ex in examples {
            let slot = grouped.get_mut(ex.label).ok_or(Error::LabelOutOfRange {
                label: ex.label,
                classes: ways,
            })?;
            slot.push(PoolEntry {
                source_id: ex.source_id,
                augmentations: (0..per_source).map(|_| aug.apply(&ex.features, &mut rng)).collect(),
            });
        }
        Ok(Self { ways: grouped })
    }

    /// Pool whose entries are already-augmented views grouped by way and
    /// source, as produced by [`make_ssl_task`].
    pub fn from_views(examples: &[LabeledExample], ways: usize) -> Result<Self> {
        let mut grouped: Vec<Vec<PoolEntry>> = vec![Vec::new(); ways];
        for ex in examples {
            let slot = grouped.get_mut(ex.label).ok_or(Error::LabelOutOfRange {
                label: ex.label,
                classes: ways,
            })?;
            match slot.iter_mut().find(|e| e.source_id == ex.source_id) {
                Some(entry) => entry.augmentations.push(ex.features.clone()),
                None => slot.push(PoolEntry {
                    source_id: ex.source_id,
                    augmentations: vec![ex.features.clone()],
                }),
            }
        }
        Ok(Self { ways: grouped })
    }

    pub fn entries(&self, way: usize) -> &[PoolEntry] {
        &self.ways[way]
    }
}

impl ManifoldSource for AugmentationPool {
    fn num_ways(&self) -> usize {
        self.ways.len()
    }

    fn way_size(&self, way: usize) -> usize {
        self.ways[way].len()
    }

    fn source_id(&self, way: usize, index: usize) -> usize {
        self.ways[way][index].source_id
    }

    fn views(
        &self,
        way: usize,
        index: usize,
        _aug: &Augmenter,
        rng: &mut seed::Rng,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let augs = &self.ways[way][index].augmentations;
        if augs.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "source {} holds {} augmentation(s), need 2",
                self.ways[way][index].source_id,
                augs.len()
            )));
        }
        let pick = index::sample(rng, augs.len(), 2);
        Ok((augs[pick.index(0)].clone(), augs[pick.index(1)].clone()))
    }
}

/// Which sampler builds manifold samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    /// One source per way (label-stratified).
    Man,
    /// N sources drawn ignoring labels.
    Rand,
}

/// Man sampling: for each way `j < n`, one source drawn uniformly from that
/// way's pool and two independent views under pseudo-label `j`.
pub fn man_sample(
    source: &dyn ManifoldSource,
    n: usize,
    aug: &Augmenter,
    seed: u64,
) -> Result<ManifoldSample> {
    let mut rng = seed::rng(seed);
    man_sample_with(source, n, aug, &mut rng)
}

fn man_sample_with(
    source: &dyn ManifoldSource,
    n: usize,
    aug: &Augmenter,
    rng: &mut seed::Rng,
) -> Result<ManifoldSample> {
    if n > source.num_ways() {
        return Err(Error::EmptyPool(source.num_ways()));
    }
    let mut views = Vec::with_capacity(n);
    for way in 0..n {
        let size = source.way_size(way);
        if size == 0 {
            return Err(Error::EmptyPool(way));
        }
        let idx = rng.random_range(0..size);
        let (a, b) = source.views(way, idx, aug, rng)?;
        views.push((source.source_id(way, idx), a, b));
    }
    Ok(ManifoldSample::from_views(views))
}

/// Random-manifold sampling: `n` sources drawn uniformly without replacement
/// ignoring their labels, then pseudo-labelled `0..n`.
pub fn rand_manifold_sample(
    source: &dyn ManifoldSource,
    n: usize,
    aug: &Augmenter,
    seed: u64,
) -> Result<ManifoldSample> {
    let mut rng = seed::rng(seed);
    rand_sample_with(source, n, aug, &mut rng)
}

fn rand_sample_with(
    source: &dyn ManifoldSource,
    n: usize,
    aug: &Augmenter,
    rng: &mut seed::Rng,
) -> Result<ManifoldSample> {
    let addresses: Vec<(usize, usize)> = (0..source.num_ways())
        .flat_map(|w| (0..source.way_size(w)).map(move |i| (w, i)))
        .collect();
    if addresses.len() < n {
        return Err(Error::InsufficientExamples {
            class: 0,
            available: addresses.len(),
            needed: n,
        });
    }
    let mut views = Vec::with_capacity(n);
    for pick in index::sample(rng, addresses.len(), n) {
        let (way, idx) = addresses[pick];
        let (a, b) = source.views(way, idx, aug, rng)?;
        views.push((source.source_id(way, idx), a, b));
    }
    Ok(ManifoldSample::from_views(views))
}

/// A batch of `v` independent manifold samples from the chosen sampler.
pub fn sample_batch(
    kind: SamplerKind,
    source: &dyn ManifoldSource,
    n: usize,
    v: usize,
    aug: &Augmenter,
    seed: u64,
) -> Result<ManBatch> {
    if v == 0 {
        return Err(Error::InvalidArgument("batch size must be >= 1".into()));
    }
    let samples = (0..v as u64)
        .map(|i| {
            let mut rng = seed::rng(seed::derive(seed, &[i]));
            match kind {
                SamplerKind::Man => man_sample_with(source, n, aug, &mut rng),
                SamplerKind::Rand => rand_sample_with(source, n, aug, &mut rng),
            }
        })
        .collect::<Result<_>>()?;
    Ok(ManBatch { samples })
}

/// BatMan sampling: `v` independent Man samples.
pub fn batman_sample(
    source: &dyn ManifoldSource,
    n: usize,
    v: usize,
    aug: &Augmenter,
    seed: u64,
) -> Result<ManBatch> {
    sample_batch(SamplerKind::Man, source, n, v, aug, seed)
}

/// Self-supervised task: `n` examples drawn ignoring labels, each augmented
/// `k + q` times; the first `k` views go to support, the rest to query, all
/// under pseudo-label `j`. Source ids and ground truth are carried over.
pub fn make_ssl_task(
    data: &SplitDataset,
    n: usize,
    k: usize,
    q: usize,
    aug: &Augmenter,
    seed: u64,
) -> Result<Task> {
    let examples: Vec<&LabeledExample> = data.examples().collect();
    if examples.len() < n {
        return Err(Error::InsufficientExamples {
            class: 0,
            available: examples.len(),
            needed: n,
        });
    }
    let mut rng = seed::rng(seed);
    let picks = index::sample(&mut rng, examples.len(), n);
    let mut support = Vec::with_capacity(n * k);
    let mut query = Vec::with_capacity(n * q);
    let mut way_ids = Vec::with_capacity(n);
    for (j, i) in picks.into_iter().enumerate() {
        let src = examples[i];
        way_ids.push(src.source_id);
        for r in 0..k + q {
            let view = LabeledExample::with_ground_truth(
                aug.apply(&src.features, &mut rng),
                j,
                src.ground_truth(),
                src.source_id,
            );
            if r < k {
                support.push(view);
            } else {
                query.push(view);
            }
        }
    }
    Ok(Task {
        support,
        query,
        way_ids,
    })
}
