//! Probability that a manifold sample is a clean selection of ways.
//!
//! Under symmetric noise with keep-probability `p`, the example drawn for
//! observed way `i` has ground truth `j` with probability `q_ij`, where
//! `q_ii = p` and `q_ij = (1 - p) / (N - 1)` otherwise. The N draws cover N
//! distinct ground truths exactly when the map `i -> truth(i)` is a
//! permutation, so the clean-selection probability is
//!
//! ```text
//! sum over permutations s of prod_i q_{i, s(i)} = perm(Q)
//! ```
//!
//! For N = 2 this is `p^2 + (1 - p)^2`.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::{par, seed, Error, Result};

/// Largest N accepted by [`clean_selection_probability`].
pub const MAX_EXACT_WAYS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrixQ {
    pub ways: usize,
    /// Probability that a label is clean, `1 - epsilon`.
    pub p: f64,
}

impl ConfusionMatrixQ {
    pub fn new(ways: usize, p: f64) -> Result<Self> {
        if ways < 2 {
            return Err(Error::InvalidArgument(format!("need N >= 2, got {ways}")));
        }
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("p must lie in [0, 1], got {p}")));
        }
        Ok(Self { ways, p })
    }

    pub fn from_noise(ways: usize, epsilon: f64) -> Result<Self> {
        Self::new(ways, 1.0 - epsilon)
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        if i == j {
            self.p
        } else {
            (1.0 - self.p) / (self.ways - 1) as f64
        }
    }

    /// Dense row-major matrix.
    pub fn matrix(&self) -> Vec<Vec<f64>> {
        (0..self.ways)
            .map(|i| (0..self.ways).map(|j| self.entry(i, j)).collect())
            .collect()
    }
}

/// Permanent of a square matrix by Ryser's inclusion-exclusion formula,
/// iterating subsets in Gray-code order.
pub fn permanent(a: &[Vec<f64>]) -> f64 {
    let n = a.len();
    if n == 0 {
        return 1.0;
    }
    let mut row_sums = vec![0.0; n];
    let mut total = 0.0;
    let mut members = 0usize;
    let mut gray = 0u64;
    for k in 1..(1u64 << n) {
        let next = k ^ (k >> 1);
        let col = (next ^ gray).trailing_zeros() as usize;
        let added = next & (1 << col) != 0;
        gray = next;
        for (s, row) in row_sums.iter_mut().zip(a) {
            if added {
                *s += row[col];
            } else {
                *s -= row[col];
            }
        }
        if added {
            members += 1;
        } else {
            members -= 1;
        }
        let prod: f64 = row_sums.iter().product();
        if members % 2 == 0 {
            total += prod;
        } else {
            total -= prod;
        }
    }
    if n % 2 == 0 {
        total
    } else {
        -total
    }
}

/// Exact clean-selection probability `perm(Q)`, for `N <= 10`.
pub fn clean_selection_probability(q: &ConfusionMatrixQ) -> Result<f64> {
    if q.ways > MAX_EXACT_WAYS {
        return Err(Error::TooManyWays {
            n: q.ways,
            max: MAX_EXACT_WAYS,
        });
    }
    Ok(permanent(&q.matrix()).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub trials: u64,
}

const CHUNK: u64 = 1 << 16;

/// Simulate drawing one example per observed way from a balanced split with
/// symmetric per-example corruption at rate `epsilon`, and count the trials
/// whose N ground truths are pairwise distinct.
pub fn monte_carlo_clean_prob(
    ways: usize,
    epsilon: f64,
    trials: u64,
    seed: u64,
) -> Result<MonteCarloEstimate> {
    if ways < 2 || ways > 64 {
        return Err(Error::InvalidArgument(format!("need 2 <= N <= 64, got {ways}")));
    }
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::InvalidArgument(format!("epsilon must lie in [0, 1], got {epsilon}")));
    }
    if trials == 0 {
        return Err(Error::InvalidArgument("need at least one trial".into()));
    }
    let chunks = trials.div_ceil(CHUNK);
    let hits: u64 = par::map_indices(chunks as usize, |c| {
        let c = c as u64;
        let n = CHUNK.min(trials - c * CHUNK);
        let mut rng = seed::rng(seed::derive(seed, &[c]));
        let mut hits = 0u64;
        for _ in 0..n {
            let mut seen = 0u64;
            let mut clean = true;
            for way in 0..ways {
                let truth = if rng.random::<f64>() < epsilon {
                    let other = rng.random_range(0..ways - 1);
                    if other >= way {
                        other + 1
                    } else {
                        other
                    }
                } else {
                    way
                };
                if seen & (1 << truth) != 0 {
                    clean = false;
                }
                seen |= 1 << truth;
            }
            hits += u64::from(clean);
        }
        hits
    })
    .into_iter()
    .sum();
    let estimate = hits as f64 / trials as f64;
    let stderr = (estimate * (1.0 - estimate) / trials as f64).sqrt();
    Ok(MonteCarloEstimate {
        estimate,
        stderr,
        trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use itertools::Itertools;

    /// Independent oracle: explicit sum over all N! permutations.
    fn brute_force(q: &ConfusionMatrixQ) -> f64 {
        (0..q.ways)
            .permutations(q.ways)
            .map(|s| s.iter().enumerate().map(|(i, &j)| q.entry(i, j)).product::<f64>())
            .sum()
    }

    #[test]
    fn rows_are_stochastic() {
        for n in 2..8 {
            for p in [0.0, 0.3, 0.55, 1.0] {
                let q = ConfusionMatrixQ::new(n, p).unwrap();
                for row in q.matrix() {
                    assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn clean_labels_give_certainty() {
        for n in 2..=10 {
            let q = ConfusionMatrixQ::new(n, 1.0).unwrap();
            assert!((clean_selection_probability(&q).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn small_n_values() {
        let two = clean_selection_probability(&ConfusionMatrixQ::new(2, 0.7).unwrap()).unwrap();
        assert!((two - 0.58).abs() < 1e-12);
        let three = clean_selection_probability(&ConfusionMatrixQ::new(3, 0.7).unwrap()).unwrap();
        assert!((three - 0.397).abs() < 1e-12);
    }

    #[test]
    fn permanent_matches_brute_force() {
        for n in 2..=7 {
            for p in [0.1, 0.4, 0.7, 0.95] {
                let q = ConfusionMatrixQ::new(n, p).unwrap();
                let a = clean_selection_probability(&q).unwrap();
                assert!((a - brute_force(&q)).abs() < 1e-13, "n={n} p={p}");
            }
        }
        // a general (non-symmetric) matrix
        let m = vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0], vec![7.0, 8.0, 10.0]];
        let expected: f64 = (0..3)
            .permutations(3)
            .map(|s| s.iter().enumerate().map(|(i, &j)| m[i][j]).product::<f64>())
            .sum();
        assert!((permanent(&m) - expected).abs() < 1e-9);
    }

    #[test]
    fn too_many_ways_rejected() {
        let q = ConfusionMatrixQ::new(11, 0.5).unwrap();
        assert!(matches!(clean_selection_probability(&q), Err(Error::TooManyWays { .. })));
        assert!(ConfusionMatrixQ::new(1, 0.5).is_err());
        assert!(ConfusionMatrixQ::new(3, 1.2).is_err());
    }

    #[test]
    fn probability_is_monotone_in_noise() {
        // p^2 + (1 - p)^2 turns upward past eps = 1/2, so the range stops at
        // (N - 1) / N where the off-diagonal mass equals the diagonal
        for n in 2..=6 {
            let mut prev = f64::INFINITY;
            let limit = ((n - 1) as f64 / n as f64).min(0.6);
            for k in 0..=60 {
                let eps = k as f64 / 100.0;
                if eps > limit + 1e-12 {
                    break;
                }
                let v = clean_selection_probability(&ConfusionMatrixQ::from_noise(n, eps).unwrap()).unwrap();
                assert!(v <= prev + 1e-15, "n={n} eps={eps}");
                prev = v;
            }
        }
    }

    #[test]
    fn two_way_probability_is_symmetric_about_one_half() {
        let at = |eps: f64| clean_selection_probability(&ConfusionMatrixQ::from_noise(2, eps).unwrap()).unwrap();
        assert!((at(0.5) - 0.5).abs() < 1e-15);
        assert!((at(0.6) - at(0.4)).abs() < 1e-12);
        assert!(at(0.6) > at(0.5));
    }

    #[test]
    fn monte_carlo_zero_noise_is_exact() {
        let mc = monte_carlo_clean_prob(5, 0.0, 1000, 1).unwrap();
        assert_eq!(mc.estimate, 1.0);
        assert_eq!(mc.stderr, 0.0);
    }

    #[test]
    fn monte_carlo_agrees_with_permanent() {
        for (n, eps) in [(2, 0.3), (5, 0.6)] {
            let exact = clean_selection_probability(&ConfusionMatrixQ::from_noise(n, eps).unwrap()).unwrap();
            let mc = monte_carlo_clean_prob(n, eps, 200_000, 7).unwrap();
            assert!((mc.estimate - exact).abs() <= 3.0 * mc.stderr, "n={n} {mc:?} vs {exact}");
        }
        assert_eq!(
            monte_carlo_clean_prob(3, 0.3, 5000, 2).unwrap(),
            monte_carlo_clean_prob(3, 0.3, 5000, 2).unwrap()
        );
    }
}
