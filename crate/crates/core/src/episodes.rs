//! Datasets, N-way K-shot episodes and symmetric label noise.
//!
//! Examples carry both the observed `label` and a hidden ground truth. The
//! ground truth exists for analysis only: learners consume [`Shots`], which
//! strip it, so nothing on the training or testing path can read it.

use rand::seq::index;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

use crate::{seed, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub features: Vec<f64>,
    pub label: usize,
    pub source_id: usize,
    ground_truth: usize,
}

impl LabeledExample {
    /// A clean example: ground truth equals the label.
    pub fn new(features: Vec<f64>, label: usize, source_id: usize) -> Self {
        Self {
            features,
            label,
            source_id,
            ground_truth: label,
        }
    }

    /// An example whose observed label may differ from its ground truth.
    pub fn with_ground_truth(
        features: Vec<f64>,
        label: usize,
        ground_truth: usize,
        source_id: usize,
    ) -> Self {
        Self {
            features,
            label,
            source_id,
            ground_truth,
        }
    }

    /// Analysis only. Training and evaluation code never calls this.
    pub fn ground_truth(&self) -> usize {
        self.ground_truth
    }

    pub fn is_corrupted(&self) -> bool {
        self.label != self.ground_truth
    }
}

/// One split of a dataset: class id -> pool of examples carrying that label.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    split: Split,
    classes: BTreeMap<usize, Vec<LabeledExample>>,
}

impl SplitDataset {
    /// Build from examples, keying each by its observed label.
    pub fn from_examples(split: Split, examples: impl IntoIterator<Item = LabeledExample>) -> Self {
        let mut classes: BTreeMap<usize, Vec<LabeledExample>> = BTreeMap::new();
        for ex in examples {
            classes.entry(ex.label).or_default().push(ex);
        }
        Self { split, classes }
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.classes.keys().copied()
    }

    pub fn pool(&self, class: usize) -> Option<&[LabeledExample]> {
        self.classes.get(&class).map(Vec::as_slice)
    }

    pub fn pools(&self) -> impl Iterator<Item = (usize, &[LabeledExample])> {
        self.classes.iter().map(|(&c, p)| (c, p.as_slice()))
    }

    /// All examples, in class-id order then pool order.
    pub fn examples(&self) -> impl Iterator<Item = &LabeledExample> {
        self.classes.values().flatten()
    }

    pub fn len(&self) -> usize {
        self.classes.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.examples().next().map(|e| e.features.len())
    }

    pub fn find_source(&self, source_id: usize) -> Option<&LabeledExample> {
        self.examples().find(|e| e.source_id == source_id)
    }

    /// Move the last `test_classes` class ids (in id order) into a test split.
    pub fn partition(self, test_classes: usize) -> Result<(SplitDataset, SplitDataset)> {
        if test_classes >= self.classes.len() {
            return Err(Error::InvalidArgument(format!(
                "cannot hold out {test_classes} of {} classes",
                self.classes.len()
            )));
        }
        let cut = self.classes.len() - test_classes;
        let mut train = BTreeMap::new();
        let mut test = BTreeMap::new();
        for (i, (c, pool)) in self.classes.into_iter().enumerate() {
            if i < cut {
                train.insert(c, pool);
            } else {
                test.insert(c, pool);
            }
        }
        Ok((
            SplitDataset {
                split: Split::Train,
                classes: train,
            },
            SplitDataset {
                split: Split::Test,
                classes: test,
            },
        ))
    }
}

/// Ways, support shots and query shots per way.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSpec {
    pub ways: usize,
    pub shots: usize,
    pub queries: usize,
}

impl TaskSpec {
    pub fn new(ways: usize, shots: usize, queries: usize) -> Result<Self> {
        let spec = Self {
            ways,
            shots,
            queries,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.ways < 2 {
            return Err(Error::InvalidArgument(format!("ways must be >= 2, got {}", self.ways)));
        }
        if self.shots < 1 {
            return Err(Error::InvalidArgument("shots must be >= 1".into()));
        }
        Ok(())
    }

    pub fn per_class(&self) -> usize {
        self.shots + self.queries
    }
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self {
            ways: 5,
            shots: 5,
            queries: 15,
        }
    }
}

/// An episode. Labels are way indices `0..ways`, consistent across
/// support and query.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub support: Vec<LabeledExample>,
    pub query: Vec<LabeledExample>,
    /// Dataset class id behind each way index.
    pub way_ids: Vec<usize>,
}

impl Task {
    pub fn ways(&self) -> usize {
        self.way_ids.len()
    }

    pub fn support_shots(&self) -> Shots {
        Shots::from_examples(&self.support)
    }

    pub fn query_shots(&self) -> Shots {
        Shots::from_examples(&self.query)
    }
}

/// Features and observed labels only; what learners are allowed to see.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Shots {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl Shots {
    pub fn from_examples(examples: &[LabeledExample]) -> Self {
        Self {
            features: examples.iter().map(|e| e.features.clone()).collect(),
            labels: examples.iter().map(|e| e.label).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub epsilon: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(epsilon: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::InvalidArgument(format!(
                "noise rate must lie in [0, 1], got {epsilon}"
            )));
        }
        Ok(Self { epsilon, seed })
    }

    /// Probability that a label is kept.
    pub fn keep_probability(&self) -> f64 {
        1.0 - self.epsilon
    }
}

/// Number of examples corrupted in a class of `n` examples.
pub fn corrupted_count(epsilon: f64, n: usize) -> usize {
    (epsilon * n as f64).round_ties_even() as usize
}

/// Relabel exactly `round(eps * n_c)` examples of every class to a uniformly
/// chosen other class of the same split. Corrupted examples move to the pool
/// of their new label; ground truth is untouched.
pub fn inject_symmetric_noise(data: &SplitDataset, noise: NoiseSpec) -> Result<SplitDataset> {
    let eps = NoiseSpec::new(noise.epsilon, noise.seed)?.epsilon;
    if eps == 0.0 {
        return Ok(data.clone());
    }
    let ids: Vec<usize> = data.class_ids().collect();
    if ids.len() < 2 {
        return Err(Error::SingleClassNoise);
    }
    let mut rng = seed::rng(noise.seed);
    let mut relabeled = Vec::with_capacity(data.len());
    for (pos, (_, pool)) in data.pools().enumerate() {
        let k = corrupted_count(eps, pool.len());
        let mut new_labels: Vec<Option<usize>> = vec![None; pool.len()];
        for i in index::sample(&mut rng, pool.len(), k) {
            // Uniform over the other classes: draw among ids.len() - 1 slots
            // and skip over our own position.
            let mut j = rng.random_range(0..ids.len() - 1);
            if j >= pos {
                j += 1;
            }
            new_labels[i] = Some(ids[j]);
        }
        for (ex, new) in pool.iter().zip(new_labels) {
            let mut ex = ex.clone();
            if let Some(label) = new {
                ex.label = label;
            }
            relabeled.push(ex);
        }
    }
    Ok(SplitDataset::from_examples(data.split, relabeled))
}

/// Sample an N-way episode: N distinct classes among those with at least
/// K+Q examples, then K+Q examples per class without replacement (first K to
/// support, the rest to query).
pub fn sample_task(data: &SplitDataset, spec: TaskSpec, seed: u64) -> Result<Task> {
    spec.validate()?;
    let need = spec.per_class();
    let eligible: Vec<usize> = data
        .pools()
        .filter(|(_, p)| p.len() >= need)
        .map(|(c, _)| c)
        .collect();
    if eligible.len() < spec.ways {
        if let Some((c, p)) = data.pools().find(|(_, p)| p.len() < need) {
            if data.num_classes() >= spec.ways {
                return Err(Error::InsufficientExamples {
                    class: c,
                    available: p.len(),
                    needed: need,
                });
            }
        }
        return Err(Error::InsufficientClasses {
            available: eligible.len(),
            needed: spec.ways,
        });
    }
    let mut rng = seed::rng(seed);
    let way_ids: Vec<usize> = index::sample(&mut rng, eligible.len(), spec.ways)
        .into_iter()
        .map(|i| eligible[i])
        .collect();

    let mut support = Vec::with_capacity(spec.ways * spec.shots);
    let mut query = Vec::with_capacity(spec.ways * spec.queries);
    for (way, &class) in way_ids.iter().enumerate() {
        let pool = data.pool(class).expect("eligible class");
        let picks = index::sample(&mut rng, pool.len(), need);
        for (n, i) in picks.into_iter().enumerate() {
            let mut ex = pool[i].clone();
            ex.label = way;
            if n < spec.shots {
                support.push(ex);
            } else {
                query.push(ex);
            }
        }
    }
    Ok(Task {
        support,
        query,
        way_ids,
    })
}

/// Parameters of the synthetic Gaussian-cluster dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub dim: usize,
    pub class_sep: f64,
    pub within_std: f64,
    pub per_class: usize,
    /// Trailing coordinates that carry no class information.
    #[serde(default)]
    pub nuisance_dims: usize,
    #[serde(default)]
    pub nuisance_std: f64,
}

/// Gaussian clusters. Class means are uniform in the cube
/// `[-class_sep/2, class_sep/2]^d` over the first `d = dim - nuisance_dims`
/// coordinates; the trailing `nuisance_dims` coordinates are class-independent
/// `N(0, nuisance_std^2)` noise. Class ids are `0..num_classes` and source ids
/// run over the whole split.
pub fn generate_synthetic(spec: SyntheticSpec, seed: u64) -> Result<SplitDataset> {
    if spec.num_classes < 2 {
        return Err(Error::InvalidArgument("synthetic data needs >= 2 classes".into()));
    }
    if spec.per_class < 1 || spec.dim < 1 {
        return Err(Error::InvalidArgument("per_class and dim must be >= 1".into()));
    }
    if !(spec.within_std >= 0.0) || !(spec.class_sep >= 0.0) || !(spec.nuisance_std >= 0.0) {
        return Err(Error::InvalidArgument("spreads must be non-negative".into()));
    }
    if spec.nuisance_dims >= spec.dim {
        return Err(Error::InvalidArgument("need at least one informative dimension".into()));
    }
    let informative = spec.dim - spec.nuisance_dims;
    let mut rng = seed::rng(seed);
    let half = spec.class_sep / 2.0;
    let mut examples = Vec::with_capacity(spec.num_classes * spec.per_class);
    for class in 0..spec.num_classes {
        let mean: Vec<f64> = (0..informative)
            .map(|_| if half > 0.0 { rng.random_range(-half..=half) } else { 0.0 })
            .collect();
        for _ in 0..spec.per_class {
            let mut features: Vec<f64> = mean
                .iter()
                .map(|&m| m + spec.within_std * rng.sample::<f64, _>(StandardNormal))
                .collect();
            features.extend(
                (0..spec.nuisance_dims).map(|_| spec.nuisance_std * rng.sample::<f64, _>(StandardNormal)),
            );
            let id = examples.len();
            examples.push(LabeledExample::new(features, class, id));
        }
    }
    Ok(SplitDataset::from_examples(Split::Train, examples))
}

/// Load a header-free `label,f1,...,fd` CSV file.
pub fn load_csv_dataset(path: impl AsRef<Path>, split: Split) -> Result<SplitDataset> {
    let path = path.as_ref();
    let csv_err = |row: usize, message: String| Error::Csv {
        path: path.to_path_buf(),
        row,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => csv_err(0, format!("{other:?}")),
        })?;

    let mut examples = Vec::new();
    let mut arity = None;
    for (row, record) in reader.records().enumerate() {
        let row_no = row + 1;
        let record = record.map_err(|e| csv_err(row_no, e.to_string()))?;
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() < 2 {
            return Err(csv_err(row_no, "expected a label and at least one feature".into()));
        }
        let label: usize = record[0]
            .parse()
            .map_err(|_| csv_err(row_no, format!("invalid label {:?}", &record[0])))?;
        let features = record
            .iter()
            .skip(1)
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| csv_err(row_no, format!("invalid feature {f:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        match arity {
            None => arity = Some(features.len()),
            Some(a) if a != features.len() => {
                return Err(csv_err(
                    row_no,
                    format!("expected {a} features, found {}", features.len()),
                ))
            }
            _ => {}
        }
        examples.push(LabeledExample::new(features, label, row));
    }
    if examples.is_empty() {
        return Err(Error::EmptyDataset {
            path: path.to_path_buf(),
        });
    }
    Ok(SplitDataset::from_examples(split, examples))
}

/// Write observed labels and features as `label,f1,...,fd` rows. Reals use
/// the shortest representation that parses back to the same value.
pub fn write_csv_dataset(data: &SplitDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut examples: Vec<&LabeledExample> = data.examples().collect();
    examples.sort_by_key(|e| e.source_id);
    let mut out = String::new();
    for ex in examples {
        out.push_str(&ex.label.to_string());
        for f in &ex.features {
            out.push(',');
            out.push_str(&format!("{f:?}"));
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
