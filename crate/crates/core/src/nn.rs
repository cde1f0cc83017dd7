//! Dense network core.
//!
//! A network is a stack of fully connected layers described by a
//! [`NetworkSpec`]. Parameters live in one flat [`ParamVector`] laid out layer
//! by layer as `[W_0, b_0, W_1, b_1, ...]`, with every weight matrix stored
//! row-major as `out x in`. The optional classification head is the last
//! layer in that layout.
//!
//! The activation is applied after every backbone layer except the last one,
//! so the backbone ends in a linear embedding that the head (if any) reads
//! directly.

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use std::ops::Range;

use crate::{seed, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation value.
    #[inline]
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = pre.tanh();
                1.0 - t * t
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawNetworkSpec", into = "RawNetworkSpec")]
pub struct NetworkSpec {
    layer_widths: Vec<usize>,
    activation: Activation,
    head_width: Option<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNetworkSpec {
    layer_widths: Vec<usize>,
    activation: Activation,
    #[serde(default)]
    head_width: Option<usize>,
}

impl TryFrom<RawNetworkSpec> for NetworkSpec {
    type Error = Error;

    fn try_from(raw: RawNetworkSpec) -> Result<Self> {
        NetworkSpec::new(raw.layer_widths, raw.activation, raw.head_width)
    }
}

impl From<NetworkSpec> for RawNetworkSpec {
    fn from(spec: NetworkSpec) -> Self {
        RawNetworkSpec {
            layer_widths: spec.layer_widths,
            activation: spec.activation,
            head_width: spec.head_width,
        }
    }
}

impl NetworkSpec {
    pub fn new(
        layer_widths: Vec<usize>,
        activation: Activation,
        head_width: Option<usize>,
    ) -> Result<Self> {
        if layer_widths.len() < 2 {
            return Err(Error::InvalidSpec(format!(
                "need at least 2 layer widths, got {}",
                layer_widths.len()
            )));
        }
        if layer_widths.contains(&0) {
            return Err(Error::InvalidSpec("layer widths must be >= 1".into()));
        }
        if head_width == Some(0) {
            return Err(Error::InvalidSpec("head width must be >= 1".into()));
        }
        Ok(Self {
            layer_widths,
            activation,
            head_width,
        })
    }

    pub fn layer_widths(&self) -> &[usize] {
        &self.layer_widths
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn head_width(&self) -> Option<usize> {
        self.head_width
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn embedding_dim(&self) -> usize {
        *self.layer_widths.last().expect("validated")
    }

    pub fn output_dim(&self) -> usize {
        self.head_width.unwrap_or_else(|| self.embedding_dim())
    }

    /// `(in, out)` of every layer, head last.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes: Vec<_> = self
            .layer_widths
            .windows(2)
            .map(|w| (w[0], w[1]))
            .collect();
        if let Some(h) = self.head_width {
            shapes.push((self.embedding_dim(), h));
        }
        shapes
    }

    pub fn num_layers(&self) -> usize {
        self.layer_widths.len() - 1 + usize::from(self.head_width.is_some())
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|&(i, o)| i * o + o).sum()
    }

    /// Range of the head parameters inside the flat vector.
    pub fn head_range(&self) -> Option<Range<usize>> {
        let h = self.head_width?;
        let len = self.embedding_dim() * h + h;
        let end = self.param_count();
        Some(end - len..end)
    }

    pub fn with_head(&self, width: usize) -> Result<Self> {
        Self::new(self.layer_widths.clone(), self.activation, Some(width))
    }

    pub fn without_head(&self) -> Self {
        Self {
            head_width: None,
            ..self.clone()
        }
    }

    /// Whether layer `idx` is followed by the activation.
    fn activated(&self, idx: usize) -> bool {
        idx + 2 < self.layer_widths.len()
    }
}

/// Flat parameters of a network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector(Vec<f64>);

/// Flat gradient with the same layout as the [`ParamVector`] it differentiates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientVector(Vec<f64>);

macro_rules! flat_vector {
    ($t:ident) => {
        impl $t {
            pub fn from_vec(values: Vec<f64>) -> Self {
                Self(values)
            }

            pub fn zeros(len: usize) -> Self {
                Self(vec![0.0; len])
            }

            pub fn len(&self) -> usize {
                self.0.len()
            }

            pub fn is_empty(&self) -> bool {
                self.0.is_empty()
            }

            pub fn as_slice(&self) -> &[f64] {
                &self.0
            }

            pub fn as_mut_slice(&mut self) -> &mut [f64] {
                &mut self.0
            }

            pub fn into_vec(self) -> Vec<f64> {
                self.0
            }

            pub fn norm(&self) -> f64 {
                dot(&self.0, &self.0).sqrt()
            }
        }

        impl From<Vec<f64>> for $t {
            fn from(values: Vec<f64>) -> Self {
                Self(values)
            }
        }
    };
}

flat_vector!(ParamVector);
flat_vector!(GradientVector);

/// One dense layer, unflattened.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `out_dim x in_dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ParamVector {
    pub fn unflatten(&self, spec: &NetworkSpec) -> Result<Vec<DenseLayer>> {
        check_len("unflatten", spec.param_count(), self.len())?;
        let mut offset = 0;
        let layers = spec
            .layer_shapes()
            .into_iter()
            .map(|(in_dim, out_dim)| {
                let w_end = offset + in_dim * out_dim;
                let b_end = w_end + out_dim;
                let layer = DenseLayer {
                    in_dim,
                    out_dim,
                    weights: self.0[offset..w_end].to_vec(),
                    bias: self.0[w_end..b_end].to_vec(),
                };
                offset = b_end;
                layer
            })
            .collect();
        Ok(layers)
    }

    pub fn flatten(layers: &[DenseLayer]) -> Self {
        let mut values = Vec::new();
        for layer in layers {
            values.extend_from_slice(&layer.weights);
            values.extend_from_slice(&layer.bias);
        }
        Self(values)
    }
}

impl GradientVector {
    pub fn scale(mut self, factor: f64) -> Self {
        self.0.iter_mut().for_each(|g| *g *= factor);
        self
    }

    /// `self += factor * other`.
    pub fn add_scaled(&mut self, other: &GradientVector, factor: f64) {
        debug_assert_eq!(self.len(), other.len());
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += factor * b;
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            got,
        })
    }
}

/// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` weights, zero biases.
pub fn init_network(spec: &NetworkSpec, seed: u64) -> ParamVector {
    let mut rng = seed::rng(seed);
    let mut values = Vec::with_capacity(spec.param_count());
    for (in_dim, out_dim) in spec.layer_shapes() {
        let bound = 1.0 / (in_dim as f64).sqrt();
        values.extend((0..in_dim * out_dim).map(|_| rng.random_range(-bound..=bound)));
        values.extend(std::iter::repeat_n(0.0, out_dim));
    }
    ParamVector(values)
}

/// Activation record of a forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    spec: NetworkSpec,
    params: Vec<f64>,
    batch: usize,
    /// Input to every layer, flat `batch x in_dim`.
    layer_inputs: Vec<Vec<f64>>,
    /// Pre-activation output of every layer, flat `batch x out_dim`.
    pre_activations: Vec<Vec<f64>>,
}

impl Trace {
    pub fn batch_size(&self) -> usize {
        self.batch
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }
}

fn flatten_batch(inputs: &[Vec<f64>], dim: usize) -> Result<Vec<f64>> {
    let mut flat = Vec::with_capacity(inputs.len() * dim);
    for x in inputs {
        check_len("forward input", dim, x.len())?;
        flat.extend_from_slice(x);
    }
    Ok(flat)
}

fn unflatten_batch(flat: &[f64], dim: usize) -> Vec<Vec<f64>> {
    if dim == 0 {
        return Vec::new();
    }
    flat.chunks(dim).map(<[f64]>::to_vec).collect()
}

/// Forward pass over a batch, keeping what [`backward`] needs.
pub fn forward(
    params: &ParamVector,
    spec: &NetworkSpec,
    inputs: &[Vec<f64>],
) -> Result<(Vec<Vec<f64>>, Trace)> {
    check_len("parameters", spec.param_count(), params.len())?;
    let batch = inputs.len();
    let mut current = flatten_batch(inputs, spec.input_dim())?;
    let mut layer_inputs = Vec::with_capacity(spec.num_layers());
    let mut pre_activations = Vec::with_capacity(spec.num_layers());
    let mut offset = 0;

    for (idx, (in_dim, out_dim)) in spec.layer_shapes().into_iter().enumerate() {
        let weights = &params.0[offset..offset + in_dim * out_dim];
        let bias = &params.0[offset + in_dim * out_dim..offset + in_dim * out_dim + out_dim];
        offset += in_dim * out_dim + out_dim;

        let mut pre = vec![0.0; batch * out_dim];
        for (x, z) in current.chunks(in_dim).zip(pre.chunks_mut(out_dim)) {
            for (o, zo) in z.iter_mut().enumerate() {
                *zo = bias[o] + dot(&weights[o * in_dim..(o + 1) * in_dim], x);
            }
        }
        let next = if spec.activated(idx) {
            let act = spec.activation;
            pre.iter().map(|&v| act.apply(v)).collect()
        } else {
            pre.clone()
        };
        layer_inputs.push(std::mem::replace(&mut current, next));
        pre_activations.push(pre);
    }

    let outputs = unflatten_batch(&current, spec.output_dim());
    let trace = Trace {
        spec: spec.clone(),
        params: params.0.clone(),
        batch,
        layer_inputs,
        pre_activations,
    };
    Ok((outputs, trace))
}

/// Forward pass without keeping a trace.
pub fn predict(
    params: &ParamVector,
    spec: &NetworkSpec,
    inputs: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>> {
    forward(params, spec, inputs).map(|(out, _)| out)
}

/// Reverse-mode gradient of the scalar whose gradient w.r.t. the outputs is
/// `output_grad`.
pub fn backward(trace: &Trace, output_grad: &[Vec<f64>]) -> Result<GradientVector> {
    let spec = &trace.spec;
    check_len("output gradient batch", trace.batch, output_grad.len())?;
    let mut upstream = flatten_batch(output_grad, spec.output_dim())
        .map_err(|_| Error::DimensionMismatch {
            context: "output gradient",
            expected: spec.output_dim(),
            got: output_grad.iter().map(Vec::len).find(|&l| l != spec.output_dim()).unwrap_or(0),
        })?;

    let shapes = spec.layer_shapes();
    let mut offsets = Vec::with_capacity(shapes.len());
    let mut offset = 0;
    for &(i, o) in &shapes {
        offsets.push(offset);
        offset += i * o + o;
    }

    let mut grad = vec![0.0; spec.param_count()];
    for idx in (0..shapes.len()).rev() {
        let (in_dim, out_dim) = shapes[idx];
        let w_off = offsets[idx];
        let b_off = w_off + in_dim * out_dim;

        if spec.activated(idx) {
            let act = spec.activation;
            for (u, &pre) in upstream.iter_mut().zip(&trace.pre_activations[idx]) {
                *u *= act.derivative(pre);
            }
        }

        let input = &trace.layer_inputs[idx];
        for (g, x) in upstream.chunks(out_dim).zip(input.chunks(in_dim)) {
            for (o, &go) in g.iter().enumerate() {
                if go == 0.0 {
                    continue;
                }
                grad[b_off + o] += go;
                let row = &mut grad[w_off + o * in_dim..w_off + (o + 1) * in_dim];
                for (r, &xi) in row.iter_mut().zip(x) {
                    *r += go * xi;
                }
            }
        }

        if idx > 0 {
            let weights = &trace.params[w_off..b_off];
            let mut down = vec![0.0; trace.batch * in_dim];
            for (g, d) in upstream.chunks(out_dim).zip(down.chunks_mut(in_dim)) {
                for (o, &go) in g.iter().enumerate() {
                    if go == 0.0 {
                        continue;
                    }
                    for (di, &w) in d.iter_mut().zip(&weights[o * in_dim..(o + 1) * in_dim]) {
                        *di += go * w;
                    }
                }
            }
            upstream = down;
        }
    }
    Ok(GradientVector(grad))
}

/// Mean softmax cross-entropy and its gradient w.r.t. the logits.
pub fn cross_entropy(logits: &[Vec<f64>], labels: &[usize]) -> Result<(f64, Vec<Vec<f64>>)> {
    check_len("labels", logits.len(), labels.len())?;
    if logits.is_empty() {
        return Err(Error::InvalidArgument("cross-entropy over an empty batch".into()));
    }
    let batch = logits.len() as f64;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(logits.len());
    for (z, &y) in logits.iter().zip(labels) {
        if y >= z.len() {
            return Err(Error::LabelOutOfRange {
                label: y,
                classes: z.len(),
            });
        }
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        loss += sum.ln() + max - z[y];
        let mut g: Vec<f64> = exps.iter().map(|e| e / sum / batch).collect();
        g[y] -= 1.0 / batch;
        grads.push(g);
    }
    Ok((loss / batch, grads))
}

/// `params - lr * grad`.
pub fn sgd_step(params: &ParamVector, grad: &GradientVector, lr: f64) -> Result<ParamVector> {
    check_len("sgd step", params.len(), grad.len())?;
    Ok(ParamVector(
        params.0.iter().zip(&grad.0).map(|(p, g)| p - lr * g).collect(),
    ))
}

/// Central finite differences, one coordinate at a time.
pub fn finite_diff_grad<F>(loss_fn: F, params: &ParamVector, h: f64) -> GradientVector
where
    F: Fn(&ParamVector) -> f64,
{
    let mut probe = params.clone();
    let grad = (0..params.len())
        .map(|i| {
            let orig = probe.0[i];
            probe.0[i] = orig + h;
            let plus = loss_fn(&probe);
            probe.0[i] = orig - h;
            let minus = loss_fn(&probe);
            probe.0[i] = orig;
            (plus - minus) / (2.0 * h)
        })
        .collect();
    GradientVector(grad)
}

/// Hessian-vector product by central differences of the gradient along `v`.
pub fn hvp<G>(grad_fn: G, params: &ParamVector, v: &GradientVector, h: f64) -> GradientVector
where
    G: Fn(&ParamVector) -> GradientVector,
{
    let shifted = |sign: f64| {
        ParamVector(
            params
                .0
                .iter()
                .zip(&v.0)
                .map(|(p, d)| p + sign * h * d)
                .collect(),
        )
    };
    let plus = grad_fn(&shifted(1.0));
    let minus = grad_fn(&shifted(-1.0));
    GradientVector(
        plus.0
            .iter()
            .zip(&minus.0)
            .map(|(a, b)| (a - b) / (2.0 * h))
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        diff / na.max(nb).max(1e-12)
    }

    fn spec(widths: &[usize], act: Activation, head: Option<usize>) -> NetworkSpec {
        NetworkSpec::new(widths.to_vec(), act, head).unwrap()
    }

    #[test]
    fn spec_validation() {
        assert!(NetworkSpec::new(vec![3], Activation::Relu, None).is_err());
        assert!(NetworkSpec::new(vec![3, 0], Activation::Relu, None).is_err());
        assert!(NetworkSpec::new(vec![3, 2], Activation::Relu, Some(0)).is_err());
    }

    #[test]
    fn init_counts_and_zero_bias() {
        let s = spec(&[2, 3], Activation::Relu, None);
        let p = init_network(&s, 7);
        assert_eq!(p.len(), 9);
        assert!(p.as_slice()[6..].iter().all(|&b| b == 0.0));
        assert_eq!(p, init_network(&s, 7));
        assert_ne!(p, init_network(&s, 8));

        let s = spec(&[4, 8, 16], Activation::Relu, Some(5));
        assert_eq!(s.param_count(), 4 * 8 + 8 + 8 * 16 + 16 + 16 * 5 + 5);
        assert_eq!(s.param_count(), 269);
        assert_eq!(init_network(&s, 1).len(), 269);
        assert_eq!(s.head_range(), Some(269 - 85..269));
    }

    #[test]
    fn init_respects_fan_in_bound() {
        let s = spec(&[16, 4], Activation::Tanh, None);
        let p = init_network(&s, 3);
        assert!(p.as_slice()[..64].iter().all(|w| w.abs() <= 0.25));
    }

    #[test]
    fn zero_network_outputs_zero() {
        let s = spec(&[3, 4, 2], Activation::Relu, Some(3));
        let p = ParamVector::zeros(s.param_count());
        let out = predict(&p, &s, &[vec![1.0, -2.0, 3.0]]).unwrap();
        assert_eq!(out, vec![vec![0.0; 3]]);
    }

    #[test]
    fn identity_layer_passes_inputs_through() {
        let s = spec(&[3, 3], Activation::Relu, None);
        let mut values = vec![0.0; 12];
        for i in 0..3 {
            values[i * 3 + i] = 1.0;
        }
        let p = ParamVector::from_vec(values);
        let x = vec![vec![1.5, -2.0, 0.25]];
        assert_eq!(predict(&p, &s, &x).unwrap(), x);
    }

    #[test]
    fn forward_shapes_and_rejects_bad_dim() {
        let s = spec(&[2, 6, 4], Activation::Tanh, None);
        let p = init_network(&s, 1);
        let x: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64, 1.0]).collect();
        let out = predict(&p, &s, &x).unwrap();
        assert_eq!(out.len(), 4);
        assert!(out.iter().all(|o| o.len() == 4));
        assert!(matches!(
            predict(&p, &s, &[vec![1.0]]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn unflatten_roundtrip() {
        let s = spec(&[3, 5, 2], Activation::Relu, Some(4));
        let p = init_network(&s, 11);
        let layers = p.unflatten(&s).unwrap();
        assert_eq!(layers.len(), 3);
        assert_eq!(layers[2].in_dim, 2);
        assert_eq!(ParamVector::flatten(&layers), p);
    }

    #[test]
    fn backward_zero_output_grad() {
        let s = spec(&[2, 3, 2], Activation::Relu, None);
        let p = init_network(&s, 2);
        let (_, trace) = forward(&p, &s, &[vec![0.3, -0.1]]).unwrap();
        let g = backward(&trace, &[vec![0.0, 0.0]]).unwrap();
        assert!(g.as_slice().iter().all(|&v| v == 0.0));
        assert!(backward(&trace, &[vec![0.0; 3]]).is_err());
        assert!(backward(&trace, &[]).is_err());
    }

    #[test]
    fn linear_layer_sum_gradient_by_hand() {
        // loss = sum of outputs: dW[o][i] = sum_b x_b[i], db[o] = batch.
        let s = spec(&[2, 3], Activation::Relu, None);
        let p = init_network(&s, 5);
        let x = vec![vec![1.0, 2.0], vec![-3.0, 0.5], vec![0.25, 4.0]];
        let (_, trace) = forward(&p, &s, &x).unwrap();
        let g = backward(&trace, &vec![vec![1.0; 3]; 3]).unwrap();
        let col = [1.0 - 3.0 + 0.25, 2.0 + 0.5 + 4.0];
        for o in 0..3 {
            assert_eq!(&g.as_slice()[o * 2..o * 2 + 2], &col);
        }
        assert_eq!(&g.as_slice()[6..], &[3.0, 3.0, 3.0]);
    }

    fn ce_loss(p: &ParamVector, s: &NetworkSpec, x: &[Vec<f64>], y: &[usize]) -> f64 {
        cross_entropy(&predict(p, s, x).unwrap(), y).unwrap().0
    }

    #[test]
    fn backward_matches_finite_differences() {
        for (act, seed) in [(Activation::Tanh, 1u64), (Activation::Relu, 2), (Activation::Tanh, 3)] {
            let s = spec(&[3, 5, 4], act, Some(3));
            let p = init_network(&s, seed);
            let mut rng = crate::seed::rng(seed + 100);
            let x: Vec<Vec<f64>> = (0..6)
                .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let y = vec![0, 1, 2, 0, 1, 2];
            let (out, trace) = forward(&p, &s, &x).unwrap();
            let (_, dz) = cross_entropy(&out, &y).unwrap();
            let g = backward(&trace, &dz).unwrap();
            let fd = finite_diff_grad(|q| ce_loss(q, &s, &x, &y), &p, 1e-5);
            assert!(rel_err(g.as_slice(), fd.as_slice()) < 1e-4, "{act:?}");
        }
    }

    #[test]
    fn cross_entropy_values() {
        let (loss, g) = cross_entropy(&[vec![0.0; 5], vec![0.0; 5]], &[1, 3]).unwrap();
        assert!((loss - 5f64.ln()).abs() < 1e-12);
        assert!((g[0][0] - 0.1).abs() < 1e-15);
        assert!((g[0][1] - (0.2 - 1.0) / 2.0).abs() < 1e-15);

        let (loss, _) = cross_entropy(&[vec![1e6, 0.0, 0.0]], &[0]).unwrap();
        assert!(loss.abs() < 1e-12);

        let (loss, _) = cross_entropy(&[vec![1.0, 0.0]], &[0]).unwrap();
        assert!((loss - (1.0 + (-1f64).exp()).ln()).abs() < 1e-12);
        assert!((loss - 0.3133).abs() < 1e-4);

        assert!(matches!(
            cross_entropy(&[vec![0.0, 0.0]], &[2]),
            Err(Error::LabelOutOfRange { label: 2, classes: 2 })
        ));
    }

    #[test]
    fn sgd_step_arithmetic() {
        let p = ParamVector::from_vec(vec![1.0, 1.0]);
        let g = GradientVector::from_vec(vec![1.0, -1.0]);
        assert_eq!(sgd_step(&p, &g, 0.5).unwrap().as_slice(), &[0.5, 1.5]);
        assert_eq!(sgd_step(&p, &g, 0.0).unwrap(), p);
        assert!(sgd_step(&p, &GradientVector::zeros(3), 0.1).is_err());
    }

    #[test]
    fn sgd_descends_convex_quadratic() {
        // f = 1/2 sum a_i x_i^2 with curvature at most 4; lr below 2/4.
        let a = [0.5, 1.0, 4.0];
        let f = |p: &ParamVector| 0.5 * p.as_slice().iter().zip(a).map(|(x, c)| c * x * x).sum::<f64>();
        let mut p = ParamVector::from_vec(vec![1.0, -2.0, 3.0]);
        let mut prev = f(&p);
        for _ in 0..50 {
            let g = GradientVector::from_vec(p.as_slice().iter().zip(a).map(|(x, c)| c * x).collect());
            p = sgd_step(&p, &g, 0.3).unwrap();
            let cur = f(&p);
            assert!(cur < prev);
            prev = cur;
        }
    }

    #[test]
    fn finite_diff_simple_functions() {
        let p = ParamVector::from_vec(vec![3.0, -2.0]);
        let g = finite_diff_grad(|_| 4.0, &p, 1e-5);
        assert_eq!(g.as_slice(), &[0.0, 0.0]);
        let g = finite_diff_grad(|q| 0.5 * q.norm().powi(2), &p, 1e-5);
        assert!((g.as_slice()[0] - 3.0).abs() < 1e-8);
        assert!((g.as_slice()[1] + 2.0).abs() < 1e-8);
    }

    #[test]
    fn hvp_on_quadratic() {
        let a = [[2.0, 0.5, 0.0], [0.5, 1.0, -0.3], [0.0, -0.3, 3.0]];
        let grad = |p: &ParamVector| {
            GradientVector::from_vec(
                a.iter().map(|row| dot(row, p.as_slice())).collect(),
            )
        };
        let p = ParamVector::from_vec(vec![0.1, 0.2, -0.4]);
        let v = GradientVector::from_vec(vec![1.0, -1.0, 2.0]);
        let hv = hvp(grad, &p, &v, 1e-4);
        for (row, got) in a.iter().zip(hv.as_slice()) {
            assert!((dot(row, v.as_slice()) - got).abs() < 1e-6);
        }
        let zero = hvp(grad, &p, &GradientVector::zeros(3), 1e-4);
        assert!(zero.as_slice().iter().all(|&z| z == 0.0));
    }

    #[test]
    fn hvp_is_linear_on_mlp_cross_entropy() {
        let s = spec(&[3, 4, 3], Activation::Tanh, Some(3));
        let p = init_network(&s, 9);
        let x = vec![vec![0.2, -0.5, 1.0], vec![-1.0, 0.3, 0.1], vec![0.7, 0.7, -0.2]];
        let y = vec![0, 1, 2];
        let grad = |q: &ParamVector| {
            let (out, trace) = forward(q, &s, &x).unwrap();
            let (_, dz) = cross_entropy(&out, &y).unwrap();
            backward(&trace, &dz).unwrap()
        };
        let n = s.param_count();
        let mut rng = crate::seed::rng(4);
        let v1 = GradientVector::from_vec((0..n).map(|_| rng.random_range(-1.0..1.0)).collect());
        let v2 = GradientVector::from_vec((0..n).map(|_| rng.random_range(-1.0..1.0)).collect());
        let mut sum = v1.clone();
        sum.add_scaled(&v2, 1.0);
        let h = 1e-4;
        let lhs = hvp(grad, &p, &sum, h);
        let mut rhs = hvp(grad, &p, &v1, h);
        rhs.add_scaled(&hvp(grad, &p, &v2, h), 1.0);
        assert!(rel_err(lhs.as_slice(), rhs.as_slice()) < 1e-3);
    }

    #[test]
    fn forward_is_deterministic() {
        let s = spec(&[4, 7, 3], Activation::Tanh, Some(2));
        let p = init_network(&s, 21);
        let x = vec![vec![0.1, 0.2, 0.3, 0.4]; 3];
        let a = predict(&p, &s, &x).unwrap();
        let b = predict(&p, &s, &x).unwrap();
        assert!(a
            .iter()
            .flatten()
            .zip(b.iter().flatten())
            .all(|(u, v)| u.to_bits() == v.to_bits()));
    }
}
