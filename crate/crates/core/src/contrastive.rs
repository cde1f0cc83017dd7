//! Decoupled contrastive loss.
//!
//! For an anchor `i` with positive `p(i)` inside one manifold sample,
//!
//! ```text
//! l_i = -s(i, p(i)) / tau + log sum_{k != i, p(i)} exp(s(i, k) / tau)
//! ```
//!
//! where `s` is the dot product of (optionally unit-normalised) embeddings.
//! The positive never enters the denominator, and negatives are restricted to
//! the anchor's own manifold. A manifold's loss is the mean over its anchors;
//! the loss of a batch of manifolds is the sum.

use serde::{Deserialize, Serialize};

use crate::nn::dot;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DclConfig {
    pub tau: f64,
    pub normalize: bool,
}

impl Default for DclConfig {
    fn default() -> Self {
        Self {
            tau: 0.1,
            normalize: true,
        }
    }
}

impl DclConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau > 0.0 && self.tau.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("temperature must be > 0, got {}", self.tau)))
        }
    }
}

/// Embeddings of one manifold sample in canonical pair order
/// (`2j` and `2j + 1` are positives).
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedManifold {
    pub embeddings: Vec<Vec<f64>>,
}

impl EmbeddedManifold {
    pub fn new(embeddings: Vec<Vec<f64>>) -> Result<Self> {
        if embeddings.len() % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "manifold needs an even number of embeddings, got {}",
                embeddings.len()
            )));
        }
        Ok(Self { embeddings })
    }

    pub fn pairs(&self) -> usize {
        self.embeddings.len() / 2
    }
}

#[inline]
fn positive(i: usize) -> usize {
    i ^ 1
}

/// Unit-normalised vectors; zero vectors stay zero and are listed in
/// `zero_norm`.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub vectors: Vec<Vec<f64>>,
    pub norms: Vec<f64>,
    pub zero_norm: Vec<usize>,
}

pub fn normalize_embeddings(z: &[Vec<f64>]) -> Normalized {
    let mut zero_norm = Vec::new();
    let mut norms = Vec::with_capacity(z.len());
    let vectors = z
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let n = dot(v, v).sqrt();
            norms.push(n);
            if n > 0.0 {
                v.iter().map(|x| x / n).collect()
            } else {
                zero_norm.push(i);
                vec![0.0; v.len()]
            }
        })
        .collect();
    Normalized {
        vectors,
        norms,
        zero_norm,
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Loss of one manifold and its gradient w.r.t. each embedding.
fn manifold_loss(m: &EmbeddedManifold, cfg: &DclConfig) -> Result<(f64, Vec<Vec<f64>>)> {
    let n = m.embeddings.len();
    if m.pairs() < 2 {
        return Err(Error::NoNegatives(m.pairs()));
    }
    let (units, norms) = if cfg.normalize {
        let nz = normalize_embeddings(&m.embeddings);
        (nz.vectors, Some(nz.norms))
    } else {
        (m.embeddings.clone(), None)
    };

    let mut sim = vec![0.0; n * n];
    for i in 0..n {
        for k in i..n {
            let s = dot(&units[i], &units[k]) / cfg.tau;
            sim[i * n + k] = s;
            sim[k * n + i] = s;
        }
    }

    // coef[i][k] = d loss / d s(i, k) (already divided by tau and averaged)
    let scale = 1.0 / n as f64;
    let mut coef = vec![0.0; n * n];
    let mut loss = 0.0;
    for i in 0..n {
        let p = positive(i);
        let negs = (0..n).filter(move |&k| k != i && k != p);
        let lse = log_sum_exp(negs.clone().map(|k| sim[i * n + k]));
        loss += -sim[i * n + p] + lse;
        coef[i * n + p] -= scale / cfg.tau;
        for k in negs {
            coef[i * n + k] += scale * (sim[i * n + k] - lse).exp() / cfg.tau;
        }
    }
    loss *= scale;

    let dim = units.first().map_or(0, Vec::len);
    let mut grad_units = vec![vec![0.0; dim]; n];
    for i in 0..n {
        for k in 0..n {
            let c = coef[i * n + k];
            if c == 0.0 {
                continue;
            }
            // s(i,k) = u_i . u_k
            for d in 0..dim {
                grad_units[i][d] += c * units[k][d];
                grad_units[k][d] += c * units[i][d];
            }
        }
    }

    let grads = match norms {
        None => grad_units,
        Some(norms) => grad_units
            .into_iter()
            .zip(units.iter().zip(norms))
            .map(|(g, (u, norm))| {
                if norm == 0.0 {
                    return vec![0.0; g.len()];
                }
                // d u / d z = (I - u u^T) / |z|
                let radial = dot(&g, u);
                g.iter().zip(u).map(|(gi, ui)| (gi - radial * ui) / norm).collect()
            })
            .collect(),
    };
    Ok((loss, grads))
}

/// Total loss over manifolds and per-embedding gradients, indexed
/// `[manifold][embedding]`.
pub fn dcl_loss(
    manifolds: &[EmbeddedManifold],
    cfg: &DclConfig,
) -> Result<(f64, Vec<Vec<Vec<f64>>>)> {
    cfg.validate()?;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(manifolds.len());
    for m in manifolds {
        let (l, g) = manifold_loss(m, cfg)?;
        total += l;
        grads.push(g);
    }
    Ok((total, grads))
}
