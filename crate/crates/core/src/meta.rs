//! Inner-loop adaptation and outer-loop meta-updates.
//!
//! The inner loop adapts `theta` to one task, either with supervised
//! cross-entropy on the support set or with contrastive steps over batches of
//! manifold samples drawn from the support pool:
//!
//! ```text
//! phi <- phi - (alpha / v) * grad sum_{M in B_i} L_con(phi(M))
//! ```
//!
//! Four outer rules turn adapted parameters into a meta-update: Reptile,
//! Eigen-Reptile, first-order MAML with a zeroed head (foMAML+ZO) and
//! implicit MAML. Every learner produces a per-task displacement `delta` and
//! the meta-step is `theta <- theta + beta * mean(delta)` over the meta-batch.

use serde::{Deserialize, Serialize};

use crate::contrastive::{dcl_loss, DclConfig, EmbeddedManifold};
use crate::episodes::{sample_task, Shots, SplitDataset, Task, TaskSpec};
use crate::manifold::{
    make_ssl_task, sample_batch, AugmentationPool, Augmenter, ManBatch, ManifoldSource,
    SamplerKind,
};
use crate::nn::{self, dot, GradientVector, NetworkSpec, ParamVector};
use crate::{par, seed, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Learner {
    Reptile,
    EigenReptile,
    FomamlZo,
    Imaml,
}

impl Learner {
    pub const ALL: [Learner; 4] = [
        Learner::Reptile,
        Learner::EigenReptile,
        Learner::FomamlZo,
        Learner::Imaml,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Learner::Reptile => "reptile",
            Learner::EigenReptile => "eigen_reptile",
            Learner::FomamlZo => "fomaml_zo",
            Learner::Imaml => "imaml",
        }
    }

    /// Default number of inner steps.
    pub fn default_inner_steps(self) -> usize {
        match self {
            Learner::Reptile | Learner::EigenReptile => 7,
            Learner::FomamlZo => 5,
            Learner::Imaml => 12,
        }
    }
}

/// How meta-training tasks are built and which inner objective adapts them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    /// Cross-entropy on labelled support sets.
    Supervised,
    /// Contrastive, one manifold sample per step.
    Man,
    /// Contrastive, batches of manifold samples.
    Batman,
    /// Contrastive, label-blind random manifold samples.
    Rand,
    /// Contrastive on self-supervised tasks built from single sources.
    Ssl,
}

impl TrainMode {
    pub fn name(self) -> &'static str {
        match self {
            TrainMode::Supervised => "supervised",
            TrainMode::Man => "man",
            TrainMode::Batman => "batman",
            TrainMode::Rand => "rand",
            TrainMode::Ssl => "ssl",
        }
    }

    pub fn inner_mode(self) -> InnerMode {
        match self {
            TrainMode::Supervised => InnerMode::SupervisedCe,
            _ => InnerMode::BatmanClr,
        }
    }

    pub fn is_contrastive(self) -> bool {
        self != TrainMode::Supervised
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerMode {
    SupervisedCe,
    BatmanClr,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InnerLoopConfig {
    pub steps: usize,
    pub lr_alpha: f64,
    pub mode: InnerMode,
    pub batman_v: usize,
    pub zero_out_head: bool,
}

impl Default for InnerLoopConfig {
    fn default() -> Self {
        Self {
            steps: 7,
            lr_alpha: 0.1,
            mode: InnerMode::SupervisedCe,
            batman_v: 5,
            zero_out_head: false,
        }
    }
}

impl InnerLoopConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_alpha > 0.0) {
            return Err(Error::InvalidArgument("inner learning rate must be > 0".into()));
        }
        if self.mode == InnerMode::BatmanClr && self.batman_v == 0 {
            return Err(Error::InvalidArgument("inner batch size must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OuterConfig {
    pub lr_beta: f64,
    pub meta_batch: usize,
    pub query_v: usize,
}

impl Default for OuterConfig {
    fn default() -> Self {
        Self {
            lr_beta: 0.5,
            meta_batch: 5,
            query_v: 15,
        }
    }
}

impl OuterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_beta > 0.0) || self.meta_batch == 0 || self.query_v == 0 {
            return Err(Error::InvalidArgument(format!("invalid outer config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImamlConfig {
    pub lambda: f64,
    pub cg_iters: usize,
    pub hvp_h: f64,
}

impl Default for ImamlConfig {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            cg_iters: 5,
            hvp_h: 1e-4,
        }
    }
}

impl ImamlConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || self.cg_iters == 0 || !(self.hvp_h > 0.0) {
            return Err(Error::InvalidArgument(format!("invalid iMAML config {self:?}")));
        }
        Ok(())
    }
}

/// `[theta, phi_1, ..., phi_u]`.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerPath {
    pub points: Vec<ParamVector>,
}

impl InnerPath {
    pub fn new(points: Vec<ParamVector>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidArgument("an inner path needs at least 2 points".into()));
        }
        let len = points[0].len();
        if let Some(p) = points.iter().find(|p| p.len() != len) {
            return Err(Error::DimensionMismatch {
                context: "inner path",
                expected: len,
                got: p.len(),
            });
        }
        Ok(Self { points })
    }

    pub fn last(&self) -> &ParamVector {
        self.points.last().expect("non-empty path")
    }
}

/// Contrastive view of a task: where manifold samples come from and how they
/// are built and scored.
#[derive(Clone, Copy)]
pub struct ClrSource<'a> {
    pub source: &'a dyn ManifoldSource,
    pub ways: usize,
    pub sampler: SamplerKind,
    pub augmenter: &'a Augmenter,
    pub dcl: &'a DclConfig,
}

impl ClrSource<'_> {
    pub fn batch(&self, v: usize, seed: u64) -> Result<ManBatch> {
        sample_batch(self.sampler, self.source, self.ways, v, self.augmenter, seed)
    }
}

/// The data an objective reads. Learners never see ground truth.
#[derive(Clone, Copy)]
pub enum TaskData<'a> {
    Supervised(&'a Shots),
    Contrastive(ClrSource<'a>),
}

/// Mean cross-entropy over `shots` and its parameter gradient.
pub fn supervised_loss_grad(
    params: &ParamVector,
    spec: &NetworkSpec,
    shots: &Shots,
) -> Result<(f64, GradientVector)> {
    let (logits, trace) = nn::forward(params, spec, &shots.features)?;
    let (loss, dz) = nn::cross_entropy(&logits, &shots.labels)?;
    Ok((loss, nn::backward(&trace, &dz)?))
}

/// Summed contrastive loss over a batch of manifold samples and its
/// parameter gradient.
pub fn contrastive_loss_grad(
    params: &ParamVector,
    spec: &NetworkSpec,
    batch: &ManBatch,
    dcl: &DclConfig,
) -> Result<(f64, GradientVector)> {
    let inputs: Vec<Vec<f64>> = batch
        .samples
        .iter()
        .flat_map(|m| m.features().cloned())
        .collect();
    let (z, trace) = nn::forward(params, spec, &inputs)?;
    let mut manifolds = Vec::with_capacity(batch.samples.len());
    let mut rest = z.into_iter();
    for m in &batch.samples {
        manifolds.push(EmbeddedManifold::new(rest.by_ref().take(m.entries.len()).collect())?);
    }
    let (loss, grads) = dcl_loss(&manifolds, dcl)?;
    let dz: Vec<Vec<f64>> = grads.into_iter().flatten().collect();
    Ok((loss, nn::backward(&trace, &dz)?))
}

/// Zero the classification head, if the network has one.
pub fn zero_head(params: &ParamVector, spec: &NetworkSpec) -> ParamVector {
    let mut out = params.clone();
    if let Some(range) = spec.head_range() {
        out.as_mut_slice()[range].iter_mut().for_each(|w| *w = 0.0);
    }
    out
}

/// Adapt `theta` to one task. See [`inner_adapt_proximal`].
pub fn inner_adapt(
    theta: &ParamVector,
    data: TaskData<'_>,
    cfg: &InnerLoopConfig,
    spec: &NetworkSpec,
    seed: u64,
) -> Result<(ParamVector, InnerPath)> {
    inner_adapt_proximal(theta, data, cfg, spec, None, seed)
}

/// Adapt `theta` to one task for `cfg.steps` SGD steps. With `proximal =
/// Some(lambda)` every step also descends `(lambda / 2) |phi - theta|^2`.
/// When `cfg.zero_out_head` is set the head of `theta` is zeroed first and the
/// zeroed vector is the anchor of both the path and the proximal term.
pub fn inner_adapt_proximal(
    theta: &ParamVector,
    data: TaskData<'_>,
    cfg: &InnerLoopConfig,
    spec: &NetworkSpec,
    proximal: Option<f64>,
    seed: u64,
) -> Result<(ParamVector, InnerPath)> {
    cfg.validate()?;
    let start = if cfg.zero_out_head {
        zero_head(theta, spec)
    } else {
        theta.clone()
    };
    let mut phi = start.clone();
    let mut points = Vec::with_capacity(cfg.steps + 1);
    points.push(start.clone());

    for step in 0..cfg.steps {
        let (mut grad, lr) = match data {
            TaskData::Supervised(shots) => {
                (supervised_loss_grad(&phi, spec, shots)?.1, cfg.lr_alpha)
            }
            TaskData::Contrastive(src) => {
                let batch = src.batch(cfg.batman_v, seed::derive(seed, &[step as u64]))?;
                let (_, g) = contrastive_loss_grad(&phi, spec, &batch, src.dcl)?;
                (g, cfg.lr_alpha / cfg.batman_v as f64)
            }
        };
        if let Some(lambda) = proximal {
            for ((g, p), t) in grad
                .as_mut_slice()
                .iter_mut()
                .zip(phi.as_slice())
                .zip(start.as_slice())
            {
                *g += lambda * (p - t);
            }
        }
        phi = nn::sgd_step(&phi, &grad, lr)?;
        points.push(phi.clone());
    }
    // a zero-step path is just [theta, theta]
    if points.len() == 1 {
        points.push(start);
    }
    Ok((phi, InnerPath::new(points)?))
}

/// `theta + beta * (mean(phis) - theta)`.
pub fn reptile_update(theta: &ParamVector, phis: &[ParamVector], beta: f64) -> Result<ParamVector> {
    if phis.is_empty() {
        return Err(Error::InvalidArgument("reptile update needs at least one task".into()));
    }
    let n = phis.len() as f64;
    let mut mean = vec![0.0; theta.len()];
    for phi in phis {
        if phi.len() != theta.len() {
            return Err(Error::DimensionMismatch {
                context: "reptile update",
                expected: theta.len(),
                got: phi.len(),
            });
        }
        mean.iter_mut().zip(phi.as_slice()).for_each(|(m, p)| *m += p / n);
    }
    Ok(ParamVector::from_vec(
        theta
            .as_slice()
            .iter()
            .zip(&mean)
            .map(|(t, m)| t + beta * (m - t))
            .collect(),
    ))
}

/// Top eigenvector of a symmetric PSD matrix (row-major `n x n`) by power
/// iteration from `start`.
fn power_iteration(gram: &[f64], n: usize, start: Vec<f64>) -> Option<Vec<f64>> {
    let normalize = |v: &mut Vec<f64>| {
        let norm = dot(v, v).sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        norm
    };
    let mut v = start;
    if normalize(&mut v) == 0.0 {
        return None;
    }
    for _ in 0..1000 {
        let mut next: Vec<f64> = (0..n).map(|i| dot(&gram[i * n..(i + 1) * n], &v)).collect();
        if normalize(&mut next) == 0.0 {
            return None;
        }
        let change: f64 = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).sum();
        v = next;
        if change < 1e-14 {
            break;
        }
    }
    Some(v)
}

/// Displacement `m * d` of Eigen-Reptile: `d` is the unit top principal
/// direction of the centred path points, oriented along `phi_u - theta`, and
/// `m` is the projection of that displacement onto `d`. Zero for a degenerate
/// path.
pub fn eigen_reptile_direction(theta: &ParamVector, path: &InnerPath) -> Result<Vec<f64>> {
    let dim = theta.len();
    let count = path.points.len();
    if path.points[0].len() != dim {
        return Err(Error::DimensionMismatch {
            context: "eigen-reptile path",
            expected: dim,
            got: path.points[0].len(),
        });
    }
    let mut mean = vec![0.0; dim];
    for p in &path.points {
        mean.iter_mut().zip(p.as_slice()).for_each(|(m, x)| *m += x / count as f64);
    }
    let centered: Vec<Vec<f64>> = path
        .points
        .iter()
        .map(|p| p.as_slice().iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();
    let displacement: Vec<f64> = path
        .last()
        .as_slice()
        .iter()
        .zip(theta.as_slice())
        .map(|(p, t)| p - t)
        .collect();

    let mut gram = vec![0.0; count * count];
    for i in 0..count {
        for j in i..count {
            let g = dot(&centered[i], &centered[j]);
            gram[i * count + j] = g;
            gram[j * count + i] = g;
        }
    }
    // Start from the path's coordinates along the displacement; this is the
    // exact eigenvector for collinear paths.
    let mut start: Vec<f64> = centered.iter().map(|c| dot(c, &displacement)).collect();
    if start.iter().all(|&s| s == 0.0) {
        start = (1..=count).map(|i| i as f64).collect();
    }
    let Some(coeffs) = power_iteration(&gram, count, start) else {
        return Ok(vec![0.0; dim]);
    };
    let mut direction = vec![0.0; dim];
    for (c, row) in coeffs.iter().zip(&centered) {
        direction.iter_mut().zip(row).for_each(|(d, x)| *d += c * x);
    }
    let norm = dot(&direction, &direction).sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Ok(vec![0.0; dim]);
    }
    direction.iter_mut().for_each(|d| *d /= norm);
    let mut magnitude = dot(&direction, &displacement);
    if magnitude < 0.0 {
        direction.iter_mut().for_each(|d| *d = -*d);
        magnitude = -magnitude;
    }
    Ok(direction.into_iter().map(|d| magnitude * d).collect())
}

/// `theta + beta * m * d`; see [`eigen_reptile_direction`].
pub fn eigen_reptile_update(theta: &ParamVector, path: &InnerPath, beta: f64) -> Result<ParamVector> {
    let step = eigen_reptile_direction(theta, path)?;
    Ok(ParamVector::from_vec(
        theta.as_slice().iter().zip(&step).map(|(t, s)| t + beta * s).collect(),
    ))
}

/// First-order meta-gradient: the query-loss gradient at the adapted
/// parameters. Contrastive queries are scored on a batch of `query_v`
/// manifold samples.
pub fn fomaml_zo_meta_grad(
    phi: &ParamVector,
    query: TaskData<'_>,
    query_v: usize,
    spec: &NetworkSpec,
    seed: u64,
) -> Result<GradientVector> {
    match query {
        TaskData::Supervised(shots) => {
            if shots.is_empty() {
                return Err(Error::EmptyQuery);
            }
            Ok(supervised_loss_grad(phi, spec, shots)?.1)
        }
        TaskData::Contrastive(src) => {
            if src.source.total() == 0 {
                return Err(Error::EmptyQuery);
            }
            let batch = src.batch(query_v, seed)?;
            Ok(contrastive_loss_grad(phi, spec, &batch, src.dcl)?.1)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CgSolution {
    pub x: Vec<f64>,
    /// `|b - A x_k|` for `k = 0..` (starting from `x_0 = 0`).
    pub residual_norms: Vec<f64>,
    /// A search direction with non-positive curvature stopped the solver.
    pub breakdown: bool,
}

/// Conjugate gradient for `A x = b` with `A` symmetric positive definite,
/// starting at zero. Returns the iterate with the smallest residual.
pub fn conjugate_gradient<A>(apply: A, b: &[f64], iters: usize) -> CgSolution
where
    A: Fn(&[f64]) -> Vec<f64>,
{
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let mut residual_norms = vec![rr.sqrt()];
    let mut best = (rr.sqrt(), x.clone());
    let mut breakdown = false;

    for _ in 0..iters {
        if rr == 0.0 {
            break;
        }
        let ap = apply(&p);
        let curvature = dot(&p, &ap);
        if !(curvature > 0.0) {
            breakdown = true;
            break;
        }
        let alpha = rr / curvature;
        x.iter_mut().zip(&p).for_each(|(xi, pi)| *xi += alpha * pi);
        r.iter_mut().zip(&ap).for_each(|(ri, ai)| *ri -= alpha * ai);
        let rr_next = dot(&r, &r);
        residual_norms.push(rr_next.sqrt());
        if rr_next.sqrt() < best.0 {
            best = (rr_next.sqrt(), x.clone());
        }
        let beta = rr_next / rr;
        p.iter_mut().zip(&r).for_each(|(pi, ri)| *pi = ri + beta * *pi);
        rr = rr_next;
    }
    CgSolution {
        x: best.1,
        residual_norms,
        breakdown,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImplicitGradient {
    pub grad: GradientVector,
    pub residual_norms: Vec<f64>,
    pub breakdown: bool,
}

/// Solve `(I + H / lambda) x = query_grad` by CG, where `H v` is a
/// finite-difference Hessian-vector product of `support_grad` at `phi`.
pub fn implicit_meta_grad<G>(
    support_grad: G,
    phi: &ParamVector,
    query_grad: &GradientVector,
    cfg: &ImamlConfig,
) -> Result<ImplicitGradient>
where
    G: Fn(&ParamVector) -> GradientVector,
{
    cfg.validate()?;
    let apply = |v: &[f64]| -> Vec<f64> {
        let norm = dot(v, v).sqrt();
        if norm == 0.0 {
            return vec![0.0; v.len()];
        }
        // probe along the unit direction so the step size stays h
        let unit = GradientVector::from_vec(v.iter().map(|x| x / norm).collect());
        let hv = nn::hvp(&support_grad, phi, &unit, cfg.hvp_h);
        v.iter()
            .zip(hv.as_slice())
            .map(|(vi, h)| vi + norm * h / cfg.lambda)
            .collect()
    };
    let sol = conjugate_gradient(apply, query_grad.as_slice(), cfg.cg_iters);
    Ok(ImplicitGradient {
        grad: GradientVector::from_vec(sol.x),
        residual_norms: sol.residual_norms,
        breakdown: sol.breakdown,
    })
}

/// Implicit meta-gradient for a network: the query gradient at `phi`
/// (as in [`fomaml_zo_meta_grad`]) pushed through `(I + H / lambda)^-1`, with
/// `H` the Hessian of the support objective at `phi`. Contrastive support
/// objectives are frozen to one batch of `support_v` manifold samples
/// (averaged) so that the Hessian is well defined.
#[allow(clippy::too_many_arguments)]
pub fn imaml_meta_grad(
    phi: &ParamVector,
    query: TaskData<'_>,
    support: TaskData<'_>,
    support_v: usize,
    query_v: usize,
    cfg: &ImamlConfig,
    spec: &NetworkSpec,
    seed: u64,
) -> Result<ImplicitGradient> {
    let g = fomaml_zo_meta_grad(phi, query, query_v, spec, seed::derive(seed, &[0]))?;
    match support {
        TaskData::Supervised(shots) => {
            let grad_fn = |p: &ParamVector| {
                supervised_loss_grad(p, spec, shots)
                    .map(|(_, g)| g)
                    .unwrap_or_else(|_| GradientVector::zeros(p.len()))
            };
            supervised_loss_grad(phi, spec, shots)?;
            implicit_meta_grad(grad_fn, phi, &g, cfg)
        }
        TaskData::Contrastive(src) => {
            let batch = src.batch(support_v, seed::derive(seed, &[1]))?;
            let scale = 1.0 / support_v as f64;
            contrastive_loss_grad(phi, spec, &batch, src.dcl)?;
            let grad_fn = |p: &ParamVector| {
                contrastive_loss_grad(p, spec, &batch, src.dcl)
                    .map(|(_, g)| g.scale(scale))
                    .unwrap_or_else(|_| GradientVector::zeros(p.len()))
            };
            implicit_meta_grad(grad_fn, phi, &g, cfg)
        }
    }
}

/// Everything [`meta_train`] needs besides data, network and seed.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaTrainConfig {
    pub learner: Learner,
    pub mode: TrainMode,
    pub task: TaskSpec,
    pub inner: InnerLoopConfig,
    pub outer: OuterConfig,
    pub imaml: ImamlConfig,
    pub dcl: DclConfig,
    pub augmenter: Augmenter,
    /// Pre-generated augmentations per support example.
    pub support_augmentations: usize,
    /// Pre-generated augmentations per query example.
    pub query_augmentations: usize,
    pub epochs: usize,
}

impl MetaTrainConfig {
    pub fn new(learner: Learner, mode: TrainMode) -> Self {
        let inner = InnerLoopConfig {
            steps: learner.default_inner_steps(),
            mode: mode.inner_mode(),
            zero_out_head: learner == Learner::FomamlZo,
            ..InnerLoopConfig::default()
        };
        Self {
            learner,
            mode,
            task: TaskSpec::default(),
            inner,
            outer: OuterConfig::default(),
            imaml: ImamlConfig::default(),
            dcl: DclConfig::default(),
            augmenter: Augmenter::default(),
            support_augmentations: 5,
            query_augmentations: 2,
            epochs: 100,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.inner.validate()?;
        self.outer.validate()?;
        self.imaml.validate()?;
        self.dcl.validate()?;
        self.augmenter.validate()?;
        if self.mode.is_contrastive() && self.support_augmentations.min(self.query_augmentations) < 2 {
            return Err(Error::InvalidArgument("need >= 2 augmentations per example".into()));
        }
        Ok(())
    }

    /// Inner config with the mode's objective and batch size applied.
    fn effective_inner(&self) -> InnerLoopConfig {
        InnerLoopConfig {
            mode: self.mode.inner_mode(),
            batman_v: if self.mode == TrainMode::Man { 1 } else { self.inner.batman_v },
            zero_out_head: self.inner.zero_out_head || self.learner == Learner::FomamlZo,
            ..self.inner
        }
    }

    fn effective_query_v(&self) -> usize {
        if self.mode == TrainMode::Man {
            1
        } else {
            self.outer.query_v
        }
    }
}

enum Prepared {
    Supervised { support: Shots, query: Shots },
    Contrastive {
        support: AugmentationPool,
        query: AugmentationPool,
        ways: usize,
        sampler: SamplerKind,
    },
}

fn prepare_task(data: &SplitDataset, cfg: &MetaTrainConfig, seed: u64) -> Result<Prepared> {
    let ts = cfg.task;
    let build_task = |s| -> Result<Task> {
        match cfg.mode {
            TrainMode::Ssl => make_ssl_task(data, ts.ways, ts.shots, ts.queries, &cfg.augmenter, s),
            _ => sample_task(data, ts, s),
        }
    };
    let task = build_task(seed::derive(seed, &[0]))?;
    Ok(match cfg.mode {
        TrainMode::Supervised => Prepared::Supervised {
            support: task.support_shots(),
            query: task.query_shots(),
        },
        TrainMode::Ssl => Prepared::Contrastive {
            support: AugmentationPool::from_views(&task.support, ts.ways)?,
            query: AugmentationPool::from_views(&task.query, ts.ways)?,
            ways: ts.ways,
            sampler: SamplerKind::Man,
        },
        TrainMode::Man | TrainMode::Batman | TrainMode::Rand => {
            let support = AugmentationPool::build(
                &task.support,
                ts.ways,
                cfg.support_augmentations,
                &cfg.augmenter,
                seed::derive(seed, &[1]),
            )?;
            let query = AugmentationPool::build(
                &task.query,
                ts.ways,
                cfg.query_augmentations,
                &cfg.augmenter,
                seed::derive(seed, &[2]),
            )?;
            Prepared::Contrastive {
                support,
                query,
                ways: ts.ways,
                sampler: if cfg.mode == TrainMode::Rand {
                    SamplerKind::Rand
                } else {
                    SamplerKind::Man
                },
            }
        }
    })
}

fn clr_source<'a>(
    source: &'a AugmentationPool,
    ways: usize,
    sampler: SamplerKind,
    cfg: &'a MetaTrainConfig,
) -> ClrSource<'a> {
    ClrSource {
        source,
        ways,
        sampler,
        augmenter: &cfg.augmenter,
        dcl: &cfg.dcl,
    }
}

/// Displacement of one task; the meta-step adds `beta` times the batch mean.
fn task_delta(
    theta: &ParamVector,
    data: &SplitDataset,
    cfg: &MetaTrainConfig,
    spec: &NetworkSpec,
    seed: u64,
) -> Result<Vec<f64>> {
    let prepared = prepare_task(data, cfg, seed)?;
    let (support, query) = match &prepared {
        Prepared::Supervised { support, query } => {
            (TaskData::Supervised(support), TaskData::Supervised(query))
        }
        Prepared::Contrastive {
            support,
            query,
            ways,
            sampler,
        } => {
(
                TaskData::Contrastive(clr_source(support, *ways, *sampler, cfg)),
                TaskData::Contrastive(clr_source(query, *ways, *sampler, cfg)),
            )
        }
    };
    let inner = cfg.effective_inner();
    let inner_seed = seed::derive(seed, &[3]);
    let outer_seed = seed::derive(seed, &[4]);
    let displacement = |phi: &ParamVector| -> Vec<f64> {
        phi.as_slice()
            .iter()
            .zip(theta.as_slice())
            .map(|(p, t)| p - t)
            .collect()
    };

    match cfg.learner {
        Learner::Reptile => {
            let (phi, _) = inner_adapt(theta, support, &inner, spec, inner_seed)?;
            Ok(displacement(&phi))
        }
        Learner::EigenReptile => {
            let (_, path) = inner_adapt(theta, support, &inner, spec, inner_seed)?;
            eigen_reptile_direction(theta, &path)
        }
        Learner::FomamlZo => {
            let (phi, _) = inner_adapt(theta, support, &inner, spec, inner_seed)?;
            let g = fomaml_zo_meta_grad(&phi, query, cfg.effective_query_v(), spec, outer_seed)?;
            Ok(g.into_vec().into_iter().map(|x| -x).collect())
        }
        Learner::Imaml => {
            let (phi, _) =
                inner_adapt_proximal(theta, support, &inner, spec, Some(cfg.imaml.lambda), inner_seed)?;
            let ig = imaml_meta_grad(
                &phi,
                query,
                support,
                inner.batman_v,
                cfg.effective_query_v(),
                &cfg.imaml,
                spec,
                outer_seed,
            )?;
            Ok(ig.grad.into_vec().into_iter().map(|x| -x).collect())
        }
    }
}

/// Run `cfg.epochs` meta-epochs from `theta`. Each epoch adapts to
/// `meta_batch` tasks (independently, possibly in parallel) and applies one
/// averaged meta-step.
pub fn meta_train_from(
    theta: ParamVector,
    data: &SplitDataset,
    cfg: &MetaTrainConfig,
    spec: &NetworkSpec,
    seed: u64,
) -> Result<ParamVector> {
    cfg.validate()?;
    if theta.len() != spec.param_count() {
        return Err(Error::DimensionMismatch {
            context: "meta-train parameters",
            expected: spec.param_count(),
            got: theta.len(),
        });
    }
    let mut theta = theta;
    let batch = cfg.outer.meta_batch;
    for epoch in 0..cfg.epochs {
        let deltas: Vec<Result<Vec<f64>>> = par::map_indices(batch, |b| {
            task_delta(&theta, data, cfg, spec, seed::derive(seed, &[epoch as u64, b as u64]))
        });
        let mut step = vec![0.0; theta.len()];
        for delta in deltas {
            let delta = delta?;
            step.iter_mut().zip(&delta).for_each(|(s, d)| *s += d / batch as f64);
        }
        let beta = cfg.outer.lr_beta;
        theta
            .as_mut_slice()
            .iter_mut()
            .zip(&step)
            .for_each(|(t, s)| *t += beta * s);
        if !theta.as_slice().iter().all(|t| t.is_finite()) {
            return Err(Error::Diverged { epoch });
        }
    }
    Ok(theta)
}

/// Initialise from `seed` and meta-train; deterministic per seed.
pub fn meta_train(
    data: &SplitDataset,
    cfg: &MetaTrainConfig,
    spec: &NetworkSpec,
    seed: u64,
) -> Result<ParamVector> {
    let theta = nn::init_network(spec, seed::derive(seed, &[u64::MAX]));
    meta_train_from(theta, data, cfg, spec, seed)
}
