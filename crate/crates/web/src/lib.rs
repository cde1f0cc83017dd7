//! Browser bindings for the interactive demo page.
//!
//! Every export returns a JSON string (or an error message) so the page can
//! stay plain JavaScript and the same functions are testable natively.

use fewshot_core::contrastive::{dcl_loss, DclConfig, EmbeddedManifold};
use fewshot_core::episodes::{generate_synthetic, inject_symmetric_noise, NoiseSpec, SyntheticSpec};
use fewshot_core::manifold::{batman_sample, Augmenter, WaySet};
use fewshot_core::noise_analysis::{
    clean_selection_probability, monte_carlo_clean_prob, ConfusionMatrixQ,
};
use fewshot_core::seed;
use serde::Serialize;
use wasm_bindgen::prelude::*;

const DEMO_WAYS: usize = 5;

fn to_json<T: Serialize>(value: &T) -> Result<String, String> {
    serde_json::to_string(value).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct CurvePoint {
    epsilon: f64,
    analytic: f64,
    monte_carlo: f64,
    stderr: f64,
}

/// Clean-selection probability over `points` evenly spaced noise rates in
/// `[0, 1]`, exact and simulated with `trials` draws each.
#[wasm_bindgen]
pub fn clean_probability_curve(ways: usize, points: usize, trials: u32, seed: u32) -> Result<String, String> {
    if points < 2 {
        return Err("need at least 2 points".into());
    }
    let curve = (0..points)
        .map(|i| {
            let epsilon = i as f64 / (points - 1) as f64;
            let q = ConfusionMatrixQ::from_noise(ways, epsilon)?;
            let analytic = clean_selection_probability(&q)?;
            let mc = monte_carlo_clean_prob(ways, epsilon, u64::from(trials), seed::derive(u64::from(seed), &[i as u64]))?;
            Ok(CurvePoint {
                epsilon,
                analytic,
                monte_carlo: mc.estimate,
                stderr: mc.stderr,
            })
        })
        .collect::<fewshot_core::Result<Vec<_>>>()
        .map_err(|e| e.to_string())?;
    to_json(&curve)
}

#[derive(Serialize)]
struct DemoPoint {
    x: f64,
    y: f64,
    label: usize,
    truth: usize,
    source: usize,
}

#[derive(Serialize)]
struct DemoSample {
    /// `[way][view] -> (x, y)`.
    views: Vec<[[f64; 2]; 2]>,
    sources: Vec<usize>,
    truths: Vec<usize>,
    clean: bool,
}

#[derive(Serialize)]
struct ManifoldDemo {
    points: Vec<DemoPoint>,
    samples: Vec<DemoSample>,
    corrupted: usize,
    clean_fraction: f64,
    analytic_clean: f64,
}

/// A five-class 2-D dataset with symmetric label noise and a BatMan batch
/// of `v` manifold samples drawn from it.
#[wasm_bindgen]
pub fn manifold_demo(epsilon: f64, seed: u32, v: usize) -> Result<String, String> {
    manifold_demo_inner(epsilon, u64::from(seed), v).map_err(|e| e.to_string())
}

fn manifold_demo_inner(epsilon: f64, seed: u64, v: usize) -> fewshot_core::Result<String> {
    let clean = generate_synthetic(
        SyntheticSpec {
            num_classes: DEMO_WAYS,
            dim: 2,
            class_sep: 8.0,
            within_std: 0.6,
            per_class: 20,
            nuisance_dims: 0,
            nuisance_std: 0.0,
        },
        seed::derive(seed, &[0]),
    )?;
    let noisy = inject_symmetric_noise(&clean, NoiseSpec::new(epsilon, seed::derive(seed, &[1]))?)?;
    let examples: Vec<_> = noisy.examples().cloned().collect();
    let source = WaySet::new(&examples, DEMO_WAYS)?;
    let aug = Augmenter::jitter_scale(0.25, (0.9, 1.1));
    let batch = batman_sample(&source, DEMO_WAYS, v, &aug, seed::derive(seed, &[2]))?;

    let truth_of = |id: usize| noisy.find_source(id).map_or(usize::MAX, |e| e.ground_truth());
    let samples: Vec<DemoSample> = batch
        .samples
        .iter()
        .map(|s| {
            let views = (0..s.ways())
                .map(|j| {
                    let (a, b) = s.pair(j);
                    let xy = |i: usize| [s.entries[i].features[0], s.entries[i].features[1]];
                    [xy(a), xy(b)]
                })
                .collect();
            let truths: Vec<usize> = s.sources.iter().map(|&id| truth_of(id)).collect();
            let mut sorted = truths.clone();
            sorted.sort_unstable();
            sorted.dedup();
            DemoSample {
                views,
                sources: s.sources.clone(),
                clean: sorted.len() == truths.len(),
                truths,
            }
        })
        .collect();
    let clean_fraction = samples.iter().filter(|s| s.clean).count() as f64 / samples.len().max(1) as f64;
    let points: Vec<DemoPoint> = examples
        .iter()
        .map(|e| DemoPoint {
            x: e.features[0],
            y: e.features[1],
            label: e.label,
            truth: e.ground_truth(),
            source: e.source_id,
        })
        .collect();
    let demo = ManifoldDemo {
        corrupted: examples.iter().filter(|e| e.is_corrupted()).count(),
        analytic_clean: clean_selection_probability(&ConfusionMatrixQ::from_noise(DEMO_WAYS, epsilon)?)?,
        points,
        samples,
        clean_fraction,
    };
    Ok(serde_json::to_string(&demo).expect("plain data serializes"))
}

#[derive(Serialize)]
struct LossPoint {
    angle: f64,
    loss: f64,
}

/// Contrastive loss of a two-pair manifold as the positive partner of each
/// anchor rotates away from it by `angle` in `[0, pi]`. The two anchors sit
/// `separation` radians apart.
#[wasm_bindgen]
pub fn contrastive_loss_curve(tau: f64, separation: f64, points: usize) -> Result<String, String> {
    if points < 2 {
        return Err("need at least 2 points".into());
    }
    let cfg = DclConfig { tau, normalize: true };
    let unit = |t: f64| vec![t.cos(), t.sin()];
    let curve = (0..points)
        .map(|i| {
            let angle = std::f64::consts::PI * i as f64 / (points - 1) as f64;
            let m = EmbeddedManifold::new(vec![
                unit(0.0),
                unit(angle),
                unit(separation),
                unit(separation - angle),
            ])?;
            let (loss, _) = dcl_loss(&[m], &cfg)?;
            Ok(LossPoint { angle, loss })
        })
        .collect::<fewshot_core::Result<Vec<_>>>()
        .map_err(|e| e.to_string())?;
    to_json(&curve)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curve_endpoints() {
        let v: serde_json::Value =
            serde_json::from_str(&clean_probability_curve(2, 11, 2000, 3).unwrap()).unwrap();
        let pts = v.as_array().unwrap();
        assert_eq!(pts.len(), 11);
        assert_eq!(pts[0]["analytic"], 1.0);
        assert!((pts[5]["analytic"].as_f64().unwrap() - 0.5).abs() < 1e-12);
        assert!(clean_probability_curve(11, 5, 10, 0).is_err());
    }

    #[test]
    fn clean_demo_has_only_clean_samples() {
        let v: serde_json::Value = serde_json::from_str(&manifold_demo(0.0, 4, 6).unwrap()).unwrap();
        assert_eq!(v["corrupted"], 0);
        assert_eq!(v["samples"].as_array().unwrap().len(), 6);
        assert_eq!(v["clean_fraction"], 1.0);
        assert_eq!(v["points"].as_array().unwrap().len(), 100);
    }

    #[test]
    fn noisy_demo_reports_corruption() {
        let v: serde_json::Value = serde_json::from_str(&manifold_demo(0.6, 4, 50).unwrap()).unwrap();
        assert_eq!(v["corrupted"], 60);
        let frac = v["clean_fraction"].as_f64().unwrap();
        assert!(frac < 1.0);
        for s in v["samples"].as_array().unwrap() {
            let truths: Vec<u64> = s["truths"].as_array().unwrap().iter().map(|t| t.as_u64().unwrap()).collect();
            let mut d = truths.clone();
            d.sort_unstable();
            d.dedup();
            assert_eq!(s["clean"].as_bool().unwrap(), d.len() == truths.len());
        }
        assert!(manifold_demo(1.5, 0, 1).is_err());
    }

    #[test]
    fn loss_grows_as_positives_separate() {
        let v: serde_json::Value =
            serde_json::from_str(&contrastive_loss_curve(0.5, std::f64::consts::FRAC_PI_2, 9).unwrap()).unwrap();
        let losses: Vec<f64> = v.as_array().unwrap().iter().map(|p| p["loss"].as_f64().unwrap()).collect();
        assert!(losses.first() < losses.last());
        // aligned positives, orthogonal anchors, tau = 1/2: each anchor has
        // two negatives at similarity 0, so -2 + ln 2
        assert!((losses[0] - (-2.0 + 2f64.ln())).abs() < 1e-12);
        assert!(contrastive_loss_curve(0.0, 1.0, 4).is_err());
    }
}
