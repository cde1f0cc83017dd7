//! Experiment orchestration: configuration files, noise sweeps,
//! checkpoints and result tables.
//!
//! Per-cell seeds follow `derive(root, [learner, mode, epsilon, run])` over
//! grid indices. The label noise for `(epsilon, run)` is shared by every
//! learner and mode so cells differ only in the method.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::contrastive::DclConfig;
use crate::episodes::{
    generate_synthetic, inject_symmetric_noise, load_csv_dataset, NoiseSpec, Split, SplitDataset,
    SyntheticSpec, TaskSpec,
};
use crate::eval::{evaluate, EvalConfig, EvalResult, HeadMode};
use crate::manifold::Augmenter;
use crate::meta::{
    meta_train, ImamlConfig, InnerLoopConfig, Learner, MetaTrainConfig, OuterConfig, TrainMode,
};
use crate::nn::{Activation, NetworkSpec, ParamVector};
use crate::{par, seed, Error, Result};

const DATA_STREAM: u64 = 0xDA7A;
const NOISE_STREAM: u64 = 0x0015E;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// Gaussian clusters; the last `test_classes` classes form the test split.
    Synthetic {
        train_classes: usize,
        test_classes: usize,
        dim: usize,
        class_sep: f64,
        within_std: f64,
        per_class: usize,
        #[serde(default)]
        nuisance_dims: usize,
        #[serde(default)]
        nuisance_std: f64,
    },
    /// Header-free `label,f1,...,fd` files.
    Csv { train: PathBuf, test: PathBuf },
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::Synthetic {
            train_classes: 20,
            test_classes: 10,
            dim: 16,
            class_sep: 4.0,
            within_std: 1.0,
            per_class: 40,
            nuisance_dims: 0,
            nuisance_std: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseGrid {
    pub epsilons: Vec<f64>,
}

impl Default for NoiseGrid {
    fn default() -> Self {
        Self {
            epsilons: vec![0.0, 0.3, 0.6],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub hidden: Vec<usize>,
    pub embedding: usize,
    pub activation: Activation,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64],
            embedding: 32,
            activation: Activation::Relu,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InnerSection {
    pub lr_alpha: f64,
    pub batman_v: usize,
    /// Overrides every learner's default step count.
    pub steps: Option<usize>,
}

impl Default for InnerSection {
    fn default() -> Self {
        let d = InnerLoopConfig::default();
        Self {
            lr_alpha: d.lr_alpha,
            batman_v: d.batman_v,
            steps: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub task: TaskSpec,
    pub noise: NoiseGrid,
    pub learners: Vec<Learner>,
    pub modes: Vec<TrainMode>,
    pub network: NetworkConfig,
    pub inner: InnerSection,
    pub outer: OuterConfig,
    pub imaml: ImamlConfig,
    pub dcl: DclConfig,
    pub augmenter: Augmenter,
    /// Pre-generated augmentations per support / query example.
    pub support_augmentations: usize,
    pub query_augmentations: usize,
    pub eval: EvalConfig,
    pub epochs: usize,
    pub seed: u64,
    /// Independent training runs per grid cell.
    pub runs: usize,
    pub out: Option<PathBuf>,
    /// Write 0 instead of measured wall time, for byte-stable output.
    pub record_timing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig::default(),
            task: TaskSpec::default(),
            noise: NoiseGrid::default(),
            learners: vec![Learner::Reptile],
            modes: vec![TrainMode::Supervised],
            network: NetworkConfig::default(),
            inner: InnerSection::default(),
            outer: OuterConfig::default(),
            imaml: ImamlConfig::default(),
            dcl: DclConfig::default(),
            augmenter: Augmenter::default(),
            support_augmentations: 5,
            query_augmentations: 2,
            eval: EvalConfig::default(),
            epochs: 100,
            seed: 0,
            runs: 1,
            out: None,
            record_timing: true,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.eval.validate()?;
        self.outer.validate()?;
        self.imaml.validate()?;
        self.dcl.validate()?;
        self.augmenter.validate()?;
        if let Some(&bad) = self.noise.epsilons.iter().find(|e| !(0.0..=1.0).contains(*e)) {
            return Err(Error::Config(format!("epsilon {bad} outside [0, 1]")));
        }
        if self.noise.epsilons.is_empty() || self.learners.is_empty() || self.modes.is_empty() {
            return Err(Error::Config("noise grid, learners and modes must be non-empty".into()));
        }
        if self.runs == 0 {
            return Err(Error::Config("runs must be >= 1".into()));
        }
        if self.network.embedding == 0 || self.network.hidden.contains(&0) {
            return Err(Error::Config("layer widths must be >= 1".into()));
        }
        if let DatasetConfig::Synthetic { test_classes, train_classes, .. } = self.dataset {
            if test_classes < self.task.ways || train_classes < self.task.ways {
                return Err(Error::Config(format!(
                    "both splits need at least {} classes",
                    self.task.ways
                )));
            }
        }
        self.meta_config(self.learners[0], self.modes[0]).validate()
    }

    pub fn input_dim(&self, train: &SplitDataset) -> Result<usize> {
        match self.dataset {
            DatasetConfig::Synthetic { dim, .. } => Ok(dim),
            DatasetConfig::Csv { .. } => train
                .feature_dim()
                .ok_or_else(|| Error::Config("training split is empty".into())),
        }
    }

    /// Backbone plus, for supervised training, an N-way head.
    pub fn network_spec(&self, input_dim: usize, mode: TrainMode) -> Result<NetworkSpec> {
        let mut widths = vec![input_dim];
        widths.extend(&self.network.hidden);
        widths.push(self.network.embedding);
        let head = (mode == TrainMode::Supervised).then_some(self.task.ways);
        NetworkSpec::new(widths, self.network.activation, head)
    }

    pub fn meta_config(&self, learner: Learner, mode: TrainMode) -> MetaTrainConfig {
        let mut m = MetaTrainConfig::new(learner, mode);
        m.task = self.task;
        m.inner.lr_alpha = self.inner.lr_alpha;
        m.inner.batman_v = self.inner.batman_v;
        if let Some(steps) = self.inner.steps {
            m.inner.steps = steps;
        }
        m.outer = self.outer;
        m.imaml = self.imaml;
        m.dcl = self.dcl;
        m.augmenter = self.augmenter;
        m.support_augmentations = self.support_augmentations;
        m.query_augmentations = self.query_augmentations;
        m.epochs = self.epochs;
        m
    }

    /// Train and test splits; synthetic data is drawn from the root seed.
    pub fn load_datasets(&self) -> Result<(SplitDataset, SplitDataset)> {
        match &self.dataset {
            &DatasetConfig::Synthetic {
                train_classes,
                test_classes,
                dim,
                class_sep,
                within_std,
                per_class,
                nuisance_dims,
                nuisance_std,
            } => {
                let all = generate_synthetic(
                    SyntheticSpec {
                        num_classes: train_classes + test_classes,
                        dim,
                        class_sep,
                        within_std,
                        per_class,
                        nuisance_dims,
                        nuisance_std,
                    },
                    seed::derive(self.seed, &[DATA_STREAM]),
                )?;
                all.partition(test_classes)
            }
            DatasetConfig::Csv { train, test } => Ok((
                load_csv_dataset(train, Split::Train)?,
                load_csv_dataset(test, Split::Test)?,
            )),
        }
    }
}

/// Test-time head handling for a trained model.
pub fn head_mode_for(learner: Learner, mode: TrainMode) -> HeadMode {
    match (mode, learner) {
        (TrainMode::Supervised, Learner::FomamlZo) => HeadMode::ResetHead,
        (TrainMode::Supervised, _) => HeadMode::AsIs,
        _ => HeadMode::ZeroHead,
    }
}

/// Meta-train one model on `train` after injecting label noise.
pub fn train_model(
    cfg: &ExperimentConfig,
    train: &SplitDataset,
    learner: Learner,
    mode: TrainMode,
    noise: NoiseSpec,
    seed: u64,
) -> Result<(ParamVector, NetworkSpec)> {
    let noisy = inject_symmetric_noise(train, noise)?;
    let spec = cfg.network_spec(cfg.input_dim(train)?, mode)?;
    let theta = meta_train(&noisy, &cfg.meta_config(learner, mode), &spec, seed)?;
    Ok((theta, spec))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub learner: Learner,
    pub mode: TrainMode,
    pub epsilon: f64,
    pub mean_accuracy: f64,
    pub ci95: f64,
    pub seed: u64,
    pub wall_time_seconds: f64,
    /// Set for cells that failed; accuracy fields are NaN.
    #[serde(skip)]
    pub error: Option<String>,
}

fn check_test_hygiene(test: &SplitDataset) -> Result<()> {
    match test.examples().find(|e| e.is_corrupted()) {
        Some(e) => Err(Error::InvalidArgument(format!(
            "test example {} carries a corrupted label",
            e.source_id
        ))),
        None => Ok(()),
    }
}

struct Cell {
    learner: (usize, Learner),
    mode: (usize, TrainMode),
    epsilon: (usize, f64),
    run: usize,
}

/// Every `(learner, mode, epsilon, run)` cell of the grid, in that nesting
/// order. A failing cell yields a row with NaN accuracy and the error text.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let (train, test) = cfg.load_datasets()?;
    check_test_hygiene(&test)?;

    let mut cells = Vec::new();
    for learner in cfg.learners.iter().copied().enumerate() {
        for mode in cfg.modes.iter().copied().enumerate() {
            for epsilon in cfg.noise.epsilons.iter().copied().enumerate() {
                for run in 0..cfg.runs {
                    cells.push(Cell {
                        learner,
                        mode,
                        epsilon,
                        run,
                    });
                }
            }
        }
    }

    let rows = par::map_indices(cells.len(), |i| {
        let c = &cells[i];
        let cell_seed = seed::derive(
            cfg.seed,
            &[c.learner.0 as u64, c.mode.0 as u64, c.epsilon.0 as u64, c.run as u64],
        );
        let start = cfg.record_timing.then(Instant::now);
        let outcome = (|| -> Result<EvalResult> {
            let noise_seed = seed::derive(cfg.seed, &[NOISE_STREAM, c.epsilon.0 as u64, c.run as u64]);
            let noise = NoiseSpec::new(c.epsilon.1, noise_seed)?;
            let (theta, spec) = train_model(cfg, &train, c.learner.1, c.mode.1, noise, seed::derive(cell_seed, &[0]))?;
            evaluate(
                &theta,
                &spec,
                &test,
                cfg.task,
                &cfg.eval,
                head_mode_for(c.learner.1, c.mode.1),
                seed::derive(cell_seed, &[1]),
            )
        })();
        let wall_time_seconds = start.map_or(0.0, |s| s.elapsed().as_secs_f64());
        let (mean_accuracy, ci95, error) = match outcome {
            Ok(r) => (r.mean_accuracy, r.ci95, None),
            Err(e) => (f64::NAN, f64::NAN, Some(e.to_string())),
        };
        ResultRow {
            learner: c.learner.1,
            mode: c.mode.1,
            epsilon: c.epsilon.1,
            mean_accuracy,
            ci95,
            seed: cell_seed,
            wall_time_seconds,
            error,
        }
    });
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

pub const CSV_HEADER: &str = "learner,mode,epsilon,mean_accuracy,ci95,seed,wall_time_seconds";

fn real(x: f64) -> String {
    format!("{x:.6}")
}

pub fn format_csv(rows: &[ResultRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.learner.name(),
            r.mode.name(),
            real(r.epsilon),
            real(r.mean_accuracy),
            real(r.ci95),
            r.seed,
            real(r.wall_time_seconds)
        );
    }
    out
}

/// JSON array with reals fixed at 6 decimals; non-finite values are `null`.
pub fn format_json(rows: &[ResultRow]) -> String {
    let json_real = |x: f64| if x.is_finite() { real(x) } else { "null".to_string() };
    let mut out = String::from("[\n");
    for (i, r) in rows.iter().enumerate() {
        let _ = write!(
            out,
            "  {{\"learner\": {}, \"mode\": {}, \"epsilon\": {}, \"mean_accuracy\": {}, \"ci95\": {}, \"seed\": {}, \"wall_time_seconds\": {}}}",
            serde_json::Value::from(r.learner.name()),
            serde_json::Value::from(r.mode.name()),
            json_real(r.epsilon),
            json_real(r.mean_accuracy),
            json_real(r.ci95),
            r.seed,
            json_real(r.wall_time_seconds)
        );
        out.push_str(if i + 1 < rows.len() { ",\n" } else { "\n" });
    }
    out.push_str("]\n");
    out
}

pub fn emit_results(rows: &[ResultRow], format: OutputFormat, path: impl AsRef<Path>) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument("no result rows to write".into()));
    }
    let text = match format {
        OutputFormat::Csv => format_csv(rows),
        OutputFormat::Json => format_json(rows),
    };
    let path = path.as_ref();
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

const MAGIC: &[u8; 8] = b"FSLCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Layout: magic, u32 version, u32 spec length, spec JSON, u64 count,
/// then `count` little-endian f64 values.
pub fn save_checkpoint(theta: &ParamVector, spec: &NetworkSpec, path: impl AsRef<Path>) -> Result<()> {
    if theta.len() != spec.param_count() {
        return Err(Error::DimensionMismatch {
            context: "checkpoint parameters",
            expected: spec.param_count(),
            got: theta.len(),
        });
    }
    let path = path.as_ref();
    let spec_json = serde_json::to_vec(spec).map_err(|e| Error::CheckpointCorrupt(e.to_string()))?;
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut write = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
    write(MAGIC)?;
    write(&CHECKPOINT_VERSION.to_le_bytes())?;
    write(&(spec_json.len() as u32).to_le_bytes())?;
    write(&spec_json)?;
    write(&(theta.len() as u64).to_le_bytes())?;
    for v in theta.as_slice() {
        write(&v.to_le_bytes())?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() < n {
            return Err(Error::CheckpointCorrupt("unexpected end of file".into()));
        }
        let (head, rest) = self.bytes.split_at(n);
        self.bytes = rest;
        Ok(head)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ParamVector, NetworkSpec)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader { bytes: &bytes };
    if r.take(MAGIC.len()).ok() != Some(&MAGIC[..]) {
        return Err(Error::CheckpointCorrupt("bad magic".into()));
    }
    let version = u32::from_le_bytes(r.array()?);
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let spec_len = u32::from_le_bytes(r.array()?) as usize;
    let spec: NetworkSpec = serde_json::from_slice(r.take(spec_len)?)
        .map_err(|e| Error::CheckpointCorrupt(format!("network spec: {e}")))?;
    let count = u64::from_le_bytes(r.array()?) as usize;
    if r.bytes.len() != count.saturating_mul(8) {
        return Err(Error::CheckpointCorrupt(format!(
            "expected {count} values, found {} bytes",
            r.bytes.len()
        )));
    }
    let values: Vec<f64> = r
        .bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    if values.len() != spec.param_count() {
        return Err(Error::CheckpointShape(format!(
            "{} values stored for a network with {} parameters",
            values.len(),
            spec.param_count()
        )));
    }
    Ok((ParamVector::from_vec(values), spec))
}

/// Load and require the stored network to equal `expected`.
pub fn load_checkpoint_expecting(path: impl AsRef<Path>, expected: &NetworkSpec) -> Result<ParamVector> {
    let (theta, spec) = load_checkpoint(path)?;
    if &spec != expected {
        return Err(Error::CheckpointShape(format!(
            "checkpoint widths {:?} do not match {:?}",
            spec.layer_widths(),
            expected.layer_widths()
        )));
    }
    Ok(theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init_network;

    fn tiny() -> ExperimentConfig {
        ExperimentConfig {
            dataset: DatasetConfig::Synthetic {
                train_classes: 6,
                test_classes: 5,
                dim: 4,
                class_sep: 4.0,
                within_std: 0.5,
                per_class: 12,
                nuisance_dims: 0,
                nuisance_std: 0.0,
            },
            task: TaskSpec::new(5, 1, 3).unwrap(),
            noise: NoiseGrid { epsilons: vec![0.0] },
            network: NetworkConfig {
                hidden: vec![8],
                embedding: 6,
                activation: Activation::Relu,
            },
            eval: EvalConfig {
                num_tasks: 8,
                finetune_steps: 2,
                finetune_lr: 0.1,
                runs: 1,
            },
            outer: OuterConfig {
                meta_batch: 2,
                ..OuterConfig::default()
            },
            epochs: 2,
            seed: 5,
            record_timing: false,
            ..ExperimentConfig::default()
        }
    }

    fn row(eps: f64) -> ResultRow {
        ResultRow {
            learner: Learner::Reptile,
            mode: TrainMode::Batman,
            epsilon: eps,
            mean_accuracy: 0.4567891,
            ci95: 0.0123,
            seed: 42,
            wall_time_seconds: 1.5,
            error: None,
        }
    }

    #[test]
    fn single_cell_grid() {
        let rows = run_sweep(&tiny()).unwrap();
        assert_eq!(rows.len(), 1);
        assert!(rows[0].error.is_none());
        assert!((0.0..=1.0).contains(&rows[0].mean_accuracy));
        assert_eq!(rows[0].wall_time_seconds, 0.0);
    }

    #[test]
    fn grid_size_is_the_product() {
        let cfg = ExperimentConfig {
            learners: Learner::ALL.to_vec(),
            modes: vec![TrainMode::Supervised, TrainMode::Batman],
            noise: NoiseGrid::default(),
            epochs: 1,
            ..tiny()
        };
        let rows = run_sweep(&cfg).unwrap();
        assert_eq!(rows.len(), 24);
        assert!(rows.iter().all(|r| r.error.is_none()), "{rows:?}");
        let again = run_sweep(&cfg).unwrap();
        let acc = |rs: &[ResultRow]| rs.iter().map(|r| r.mean_accuracy).collect::<Vec<_>>();
        assert_eq!(acc(&rows), acc(&again));
    }

    #[test]
    fn failing_cell_is_isolated() {
        // eps = 1 leaves no clean labels but is valid; supervised sampling
        // still works. A 5-way SSL task needs 5 distinct sources per task,
        // so starve the training split instead via per-class size.
        let cfg = ExperimentConfig {
            modes: vec![TrainMode::Supervised, TrainMode::Batman],
            task: TaskSpec::new(5, 1, 12).unwrap(),
            ..tiny()
        };
        // 12 per class < 1 + 12, so every training cell fails
        let rows = run_sweep(&cfg).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.error.is_some() && r.mean_accuracy.is_nan()));

        let mixed = ExperimentConfig {
            learners: vec![Learner::Reptile, Learner::Imaml],
            imaml: ImamlConfig {
                cg_iters: 1,
                ..ImamlConfig::default()
            },
            ..tiny()
        };
        let rows = run_sweep(&mixed).unwrap();
        assert!(rows.iter().all(|r| r.error.is_none()));
    }

    #[test]
    fn test_split_stays_clean() {
        let cfg = ExperimentConfig {
            noise: NoiseGrid { epsilons: vec![0.6] },
            ..tiny()
        };
        let (_, test) = cfg.load_datasets().unwrap();
        assert!(test.examples().all(|e| e.label == e.ground_truth()));
        assert_eq!(test.split(), Split::Test);
    }

    #[test]
    fn config_rejects_unknown_keys_and_bad_epsilons() {
        let err = ExperimentConfig::from_toml_str("epochs = 3\nepohcs = 4\n").unwrap_err();
        assert_eq!(err.kind(), "config");
        let err = ExperimentConfig::from_toml_str("[noise]\nepsilons = [0.0, 1.5]\n").unwrap_err();
        assert_eq!(err.kind(), "config");
        let err = ExperimentConfig::from_toml_str("[inner]\nlr = 0.1\n").unwrap_err();
        assert_eq!(err.kind(), "config");
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = ExperimentConfig {
            learners: vec![Learner::FomamlZo, Learner::Imaml],
            modes: vec![TrainMode::Ssl],
            out: Some(PathBuf::from("results")),
            ..tiny()
        };
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
        let partial = ExperimentConfig::from_toml_str(
            "learners = [\"eigen_reptile\"]\nmodes = [\"batman\", \"rand\"]\n[dataset]\nkind = \"csv\"\ntrain = \"a.csv\"\ntest = \"b.csv\"\n",
        )
        .unwrap();
        assert_eq!(partial.learners, vec![Learner::EigenReptile]);
        assert_eq!(partial.epochs, 100);
    }

    #[test]
    fn network_spec_has_head_only_when_supervised() {
        let cfg = tiny();
        assert_eq!(cfg.network_spec(4, TrainMode::Supervised).unwrap().head_width(), Some(5));
        assert_eq!(cfg.network_spec(4, TrainMode::Man).unwrap().head_width(), None);
        assert_eq!(head_mode_for(Learner::FomamlZo, TrainMode::Supervised), HeadMode::ResetHead);
        assert_eq!(head_mode_for(Learner::FomamlZo, TrainMode::Batman), HeadMode::ZeroHead);
        assert_eq!(head_mode_for(Learner::Reptile, TrainMode::Supervised), HeadMode::AsIs);
    }

    #[test]
    fn csv_formatting() {
        let text = format_csv(&[row(0.3)]);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines[1], "reptile,batman,0.300000,0.456789,0.012300,42,1.500000");
    }

    #[test]
    fn json_round_trip() {
        let rows = vec![row(0.3), row(0.0)];
        let text = format_json(&rows);
        let parsed: Vec<ResultRow> = serde_json::from_str(&text).unwrap();
        assert_eq!(parsed.len(), 2);
        for (a, b) in parsed.iter().zip(&rows) {
            assert_eq!(a.learner, b.learner);
            assert_eq!(a.mode, b.mode);
            assert_eq!(a.seed, b.seed);
            assert!((a.epsilon - b.epsilon).abs() < 5e-7);
            assert!((a.mean_accuracy - b.mean_accuracy).abs() < 5e-7);
        }
        let mut failed = row(0.6);
        failed.mean_accuracy = f64::NAN;
        let v: serde_json::Value = serde_json::from_str(&format_json(&[failed])).unwrap();
        assert!(v[0]["mean_accuracy"].is_null());
    }

    #[test]
    fn emit_writes_files() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("r.csv");
        emit_results(&[row(0.3)], OutputFormat::Csv, &csv).unwrap();
        assert_eq!(fs::read_to_string(&csv).unwrap(), format_csv(&[row(0.3)]));
        assert!(emit_results(&[], OutputFormat::Csv, &csv).is_err());
        let bad = dir.path().join("missing").join("r.csv");
        assert_eq!(emit_results(&[row(0.3)], OutputFormat::Json, bad).unwrap_err().kind(), "io");
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let spec = NetworkSpec::new(vec![3, 5, 4], Activation::Tanh, Some(2)).unwrap();
        let mut theta = init_network(&spec, 9);
        theta.as_mut_slice()[0] = -0.0;
        theta.as_mut_slice()[1] = f64::MIN_POSITIVE / 3.0;
        save_checkpoint(&theta, &spec, &path).unwrap();
        let (back, back_spec) = load_checkpoint(&path).unwrap();
        assert_eq!(back_spec, spec);
        let bits = |p: &ParamVector| p.as_slice().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&theta));
    }

    #[test]
    fn checkpoint_errors_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let spec = NetworkSpec::new(vec![2, 3], Activation::Relu, None).unwrap();
        save_checkpoint(&init_network(&spec, 1), &spec, &path).unwrap();
        let bytes = fs::read(&path).unwrap();

        let other = NetworkSpec::new(vec![2, 4], Activation::Relu, None).unwrap();
        assert!(matches!(load_checkpoint_expecting(&path, &other), Err(Error::CheckpointShape(_))));
        assert!(load_checkpoint_expecting(&path, &spec).is_ok());

        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::CheckpointCorrupt(_))));

        let mut versioned = bytes.clone();
        versioned[8] = 7;
        fs::write(&path, &versioned).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::CheckpointVersion { found: 7, .. })));

        fs::write(&path, b"garbage").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::CheckpointCorrupt(_))));
    }
}
