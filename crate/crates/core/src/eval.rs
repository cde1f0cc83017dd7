//! Meta-testing: fine-tune on a test task's support set, score its query
//! set, aggregate over tasks with a normal-approximation CI95.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::episodes::{sample_task, Shots, SplitDataset, Task, TaskSpec};
use crate::meta::{supervised_loss_grad, zero_head};
use crate::nn::{self, NetworkSpec, ParamVector};
use crate::{par, seed, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub num_tasks: usize,
    pub finetune_steps: usize,
    pub finetune_lr: f64,
    pub runs: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            num_tasks: 2048,
            finetune_steps: 10,
            finetune_lr: 0.1,
            runs: 3,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_tasks == 0 || self.runs == 0 || !(self.finetune_lr > 0.0) {
            return Err(Error::InvalidArgument(format!("invalid eval config {self:?}")));
        }
        Ok(())
    }
}

/// How the meta-model meets a test task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadMode {
    /// Append an all-zero N-way head to an embedding network.
    ZeroHead,
    /// Zero the existing head (the "+ZO" convention at test time).
    ResetHead,
    /// Use the network as trained.
    AsIs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub mean_accuracy: f64,
    pub ci95: f64,
    pub per_task_accuracies: Vec<f64>,
}

/// Append an N-logit head with `W = 0`, `b = 0` to an embedding network.
pub fn attach_zero_head(
    theta: &ParamVector,
    spec: &NetworkSpec,
    ways: usize,
) -> Result<(ParamVector, NetworkSpec)> {
    if spec.head_width().is_some() {
        return Err(Error::HeadPresent);
    }
    if theta.len() != spec.param_count() {
        return Err(Error::DimensionMismatch {
            context: "attach head",
            expected: spec.param_count(),
            got: theta.len(),
        });
    }
    let with_head = spec.with_head(ways)?;
    let mut values = theta.as_slice().to_vec();
    values.resize(with_head.param_count(), 0.0);
    Ok((ParamVector::from_vec(values), with_head))
}

/// Argmax with ties broken uniformly at random. NaN logits are ignored; an
/// all-NaN row is a uniform guess.
fn predict_label(logits: &[f64], rng: &mut seed::Rng) -> usize {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut ties: Vec<usize> = (0..logits.len()).filter(|&i| logits[i] == max).collect();
    if ties.is_empty() {
        ties = (0..logits.len()).collect();
    }
    if ties.len() == 1 {
        ties[0]
    } else {
        ties[rng.random_range(0..ties.len())]
    }
}

/// Fraction of `shots` classified correctly; `seed` drives tie-breaking.
pub fn accuracy(params: &ParamVector, spec: &NetworkSpec, shots: &Shots, seed: u64) -> Result<f64> {
    if shots.is_empty() {
        return Err(Error::EmptyQuery);
    }
    let logits = nn::predict(params, spec, &shots.features)?;
    let mut rng = seed::rng(seed);
    let correct = logits
        .iter()
        .zip(&shots.labels)
        .filter(|(z, &y)| predict_label(z, &mut rng) == y)
        .count();
    Ok(correct as f64 / shots.len() as f64)
}

/// Fine-tune a copy of `theta` on the task's support set with cross-entropy
/// SGD and return the query accuracy.
pub fn meta_test_task(
    theta: &ParamVector,
    spec: &NetworkSpec,
    task: &Task,
    cfg: &EvalConfig,
    mode: HeadMode,
    seed: u64,
) -> Result<f64> {
    let ways = task.ways();
    let (mut params, spec) = match mode {
        HeadMode::ZeroHead => attach_zero_head(theta, spec, ways)?,
        HeadMode::ResetHead => (zero_head(theta, spec), spec.clone()),
        HeadMode::AsIs => (theta.clone(), spec.clone()),
    };
    match spec.head_width() {
        Some(h) if h != ways => return Err(Error::WayMismatch { task: ways, head: h }),
        None => return Err(Error::WayMismatch { task: ways, head: spec.output_dim() }),
        _ => {}
    }
    let support = task.support_shots();
    for _ in 0..cfg.finetune_steps {
        let (_, g) = supervised_loss_grad(&params, &spec, &support)?;
        params = nn::sgd_step(&params, &g, cfg.finetune_lr)?;
    }
    accuracy(&params, &spec, &task.query_shots(), seed)
}

/// `1.96 * s / sqrt(n)` with the `n - 1` sample standard deviation.
pub fn ci95(values: &[f64]) -> Result<f64> {
    let n = values.len();
    if n < 2 {
        return Err(Error::TooFewValues { needed: 2, got: n });
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Ok(1.96 * var.sqrt() / (n as f64).sqrt())
}

/// Meta-test on `runs x num_tasks` tasks from `test`, pooling per-task
/// accuracies into one mean and CI95. `theta` is never modified.
pub fn evaluate(
    theta: &ParamVector,
    spec: &NetworkSpec,
    test: &SplitDataset,
    task_spec: TaskSpec,
    cfg: &EvalConfig,
    mode: HeadMode,
    seed: u64,
) -> Result<EvalResult> {
    cfg.validate()?;
    let total = cfg.num_tasks * cfg.runs;
    let per_task: Vec<Result<f64>> = par::map_indices(total, |i| {
        let (run, t) = ((i / cfg.num_tasks) as u64, (i % cfg.num_tasks) as u64);
        let task_seed = seed::derive(seed, &[run, t]);
        let task = sample_task(test, task_spec, seed::derive(task_seed, &[0]))?;
        meta_test_task(theta, spec, &task, cfg, mode, seed::derive(task_seed, &[1]))
    });
    let per_task_accuracies = per_task.into_iter().collect::<Result<Vec<f64>>>()?;
    let mean_accuracy = per_task_accuracies.iter().sum::<f64>() / total as f64;
    let ci95 = if total >= 2 { ci95(&per_task_accuracies)? } else { 0.0 };
    Ok(EvalResult {
        mean_accuracy,
        ci95,
        per_task_accuracies,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::episodes::{generate_synthetic, LabeledExample, Split, SyntheticSpec};
    use crate::nn::{init_network, Activation};

    #[test]
    fn predict_label_survives_nan() {
        let mut rng = seed::rng(5);
        assert_eq!(predict_label(&[0.1, f64::NAN, 0.7], &mut rng), 2);
        for _ in 0..20 {
            assert!(predict_label(&[f64::NAN; 4], &mut rng) < 4);
        }
    }

    fn backbone() -> NetworkSpec {
        NetworkSpec::new(vec![4, 8, 6], Activation::Relu, None).unwrap()
    }

    fn test_split(sep: f64, std: f64) -> SplitDataset {
        generate_synthetic(
            SyntheticSpec {
                num_classes: 8,
                dim: 4,
                class_sep: sep,
                within_std: std,
                per_class: 30,
                nuisance_dims: 0,
                nuisance_std: 0.0,
            },
            11,
        )
        .unwrap()
        .with_split(Split::Test)
    }

    #[test]
    fn zero_head_contract() {
        let spec = backbone();
        let theta = init_network(&spec, 1);
        let (tp, sp) = attach_zero_head(&theta, &spec, 5).unwrap();
        assert_eq!(sp.head_width(), Some(5));
        assert_eq!(&tp.as_slice()[..theta.len()], theta.as_slice());
        let logits = nn::predict(&tp, &sp, &[vec![1.0, -1.0, 2.0, 0.5], vec![0.0; 4]]).unwrap();
        assert!(logits.iter().flatten().all(|&z| z == 0.0));
        assert!(matches!(attach_zero_head(&tp, &sp, 5), Err(Error::HeadPresent)));
    }

    #[test]
    fn first_head_gradient_is_residual_outer_embedding() {
        let spec = backbone();
        let theta = init_network(&spec, 2);
        let (tp, sp) = attach_zero_head(&theta, &spec, 3).unwrap();
        let shots = Shots {
            features: vec![vec![0.5, 1.0, -1.0, 0.2], vec![-0.3, 0.1, 0.8, 1.5]],
            labels: vec![2, 0],
        };
        let (_, g) = supervised_loss_grad(&tp, &sp, &shots).unwrap();
        let emb = nn::predict(&theta, &spec, &shots.features).unwrap();
        let head = sp.head_range().unwrap();
        let hw = &g.as_slice()[head.clone()];
        for c in 0..3 {
            for d in 0..6 {
                let expected: f64 = emb
                    .iter()
                    .zip(&shots.labels)
                    .map(|(e, &y)| (1.0 / 3.0 - f64::from(u8::from(c == y))) / 2.0 * e[d])
                    .sum();
                assert!((hw[c * 6 + d] - expected).abs() < 1e-14);
            }
        }
        // the backbone receives no gradient through an all-zero head
        assert!(g.as_slice()[..head.start].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn chance_level_without_finetuning() {
        let spec = backbone();
        let theta = init_network(&spec, 3);
        let cfg = EvalConfig { num_tasks: 2048, finetune_steps: 0, finetune_lr: 0.1, runs: 1 };
        let r = evaluate(&theta, &spec, &test_split(4.0, 0.5), TaskSpec::new(5, 5, 15).unwrap(), &cfg, HeadMode::ZeroHead, 5)
            .unwrap();
        assert!((r.mean_accuracy - 0.2).abs() <= 3.0 * r.ci95, "{} +- {}", r.mean_accuracy, r.ci95);
        assert_eq!(r.per_task_accuracies.len(), 2048);
    }

    #[test]
    fn separable_task_reaches_full_accuracy() {
        // identity-like backbone on well separated clusters
        let spec = NetworkSpec::new(vec![4, 4], Activation::Relu, None).unwrap();
        let mut values = vec![0.0; spec.param_count()];
        for i in 0..4 {
            values[i * 4 + i] = 1.0;
        }
        let theta = ParamVector::from_vec(values);
        let data = test_split(20.0, 0.05);
        let task = sample_task(&data, TaskSpec::new(5, 5, 15).unwrap(), 3).unwrap();
        let cfg = EvalConfig { num_tasks: 1, finetune_steps: 100, finetune_lr: 0.05, runs: 1 };
        let acc = meta_test_task(&theta, &spec, &task, &cfg, HeadMode::ZeroHead, 0).unwrap();
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn consistent_relabeling_leaves_accuracy_unchanged() {
        let spec = backbone();
        let theta = init_network(&spec, 4);
        let data = test_split(6.0, 0.5);
        let task = sample_task(&data, TaskSpec::new(3, 4, 6).unwrap(), 1).unwrap();
        let perm = [2usize, 0, 1];
        let relabel = |v: &[LabeledExample]| {
            v.iter()
                .map(|e| LabeledExample::new(e.features.clone(), perm[e.label], e.source_id))
                .collect::<Vec<_>>()
        };
        let permuted = Task {
            support: relabel(&task.support),
            query: relabel(&task.query),
            way_ids: vec![task.way_ids[1], task.way_ids[2], task.way_ids[0]],
        };
        let cfg = EvalConfig { num_tasks: 1, finetune_steps: 10, finetune_lr: 0.1, runs: 1 };
        let a = meta_test_task(&theta, &spec, &task, &cfg, HeadMode::ZeroHead, 0).unwrap();
        let b = meta_test_task(&theta, &spec, &permuted, &cfg, HeadMode::ZeroHead, 0).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn finetuning_does_not_hurt_on_separable_data() {
        let spec = backbone();
        let theta = init_network(&spec, 6);
        let data = test_split(8.0, 0.5);
        let ts = TaskSpec::new(5, 5, 15).unwrap();
        let before = EvalConfig { num_tasks: 256, finetune_steps: 0, finetune_lr: 0.1, runs: 1 };
        let after = EvalConfig { finetune_steps: 10, ..before };
        let a = evaluate(&theta, &spec, &data, ts, &before, HeadMode::ZeroHead, 1).unwrap();
        let b = evaluate(&theta, &spec, &data, ts, &after, HeadMode::ZeroHead, 1).unwrap();
        assert!(b.mean_accuracy >= a.mean_accuracy);
    }

    #[test]
    fn evaluation_leaves_theta_untouched_and_checks_ways() {
        let spec = backbone().with_head(3).unwrap();
        let theta = init_network(&spec, 7);
        let copy = theta.clone();
        let data = test_split(6.0, 0.5);
        let task = sample_task(&data, TaskSpec::new(3, 2, 2).unwrap(), 0).unwrap();
        let cfg = EvalConfig { num_tasks: 1, finetune_steps: 3, finetune_lr: 0.1, runs: 1 };
        meta_test_task(&theta, &spec, &task, &cfg, HeadMode::AsIs, 0).unwrap();
        assert_eq!(theta, copy);
        let task5 = sample_task(&data, TaskSpec::new(5, 2, 2).unwrap(), 0).unwrap();
        assert!(matches!(
            meta_test_task(&theta, &spec, &task5, &cfg, HeadMode::AsIs, 0),
            Err(Error::WayMismatch { task: 5, head: 3 })
        ));
    }

    #[test]
    fn ci95_formula() {
        assert_eq!(ci95(&[0.4; 5]).unwrap(), 0.0);
        let c = ci95(&[0.0, 0.0, 1.0, 1.0]).unwrap();
        assert!((c - 1.96 * (1.0f64 / 3.0).sqrt() / 2.0).abs() < 1e-15);
        assert!((c - 0.5659).abs() < 1e-4);
        assert!(ci95(&[1.0]).is_err());
    }

    #[test]
    fn duplicating_the_sample_shrinks_ci_by_sqrt2_asymptotically() {
        // std with n-1 denominator changes slightly under duplication, so
        // compare against the exact ratio implied by the formula.
        let v: Vec<f64> = (0..200).map(|i| ((i * 37) % 11) as f64 / 10.0).collect();
        let doubled: Vec<f64> = v.iter().chain(&v).copied().collect();
        let n = v.len() as f64;
        let ratio = ci95(&doubled).unwrap() / ci95(&v).unwrap();
        let exact = ((n - 1.0) / (2.0 * n - 1.0)).sqrt();
        assert!((ratio - exact).abs() < 1e-12);
        assert!((ratio - 1.0 / 2f64.sqrt()).abs() < 2e-3);
    }
}
