//! Dense networks with exact reverse-mode gradients.
//!
//! Batches are row-major: one sample per row. Weights are stored
//! `[out × in]`, so a layer computes `x·Wᵀ + b` on a batch.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
    Softmax,
}

impl Activation {
    fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
            Activation::Identity => 2,
            Activation::Softmax => 3,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            0 => Activation::Relu,
            1 => Activation::Tanh,
            2 => Activation::Identity,
            3 => Activation::Softmax,
            _ => return None,
        })
    }

    fn apply(self, pre: &Array2<f64>) -> Array2<f64> {
        match self {
            Activation::Relu => pre.mapv(|v| v.max(0.0)),
            Activation::Tanh => pre.mapv(f64::tanh),
            Activation::Identity => pre.clone(),
            Activation::Softmax => softmax_rows(pre),
        }
    }

    /// Gradient w.r.t. the pre-activation given the gradient w.r.t. the output.
    fn backprop(self, pre: &Array2<f64>, post: &Array2<f64>, grad: Array2<f64>) -> Array2<f64> {
        match self {
            Activation::Identity => grad,
            Activation::Relu => {
                let mut g = grad;
                Zip::from(&mut g).and(pre).for_each(|g, &z| {
                    if z <= 0.0 {
                        *g = 0.0;
                    }
                });
                g
            }
            Activation::Tanh => {
                let mut g = grad;
                Zip::from(&mut g).and(post).for_each(|g, &y| *g *= 1.0 - y * y);
                g
            }
            Activation::Softmax => {
                let mut g = grad;
                for (mut grow, prow) in g.rows_mut().into_iter().zip(post.rows()) {
                    let dot: f64 = grow.iter().zip(prow).map(|(a, b)| a * b).sum();
                    Zip::from(&mut grow).and(&prow).for_each(|g, &p| *g = p * (*g - dot));
                }
                g
            }
        }
    }
}

pub fn softmax_rows(z: &Array2<f64>) -> Array2<f64> {
    let mut out = z.clone();
    for mut row in out.rows_mut() {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    out
}

fn log_softmax_rows(z: &Array2<f64>) -> Array2<f64> {
    let mut out = z.clone();
    for mut row in out.rows_mut() {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `[out × in]`.
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub layers: Vec<Layer>,
    pub seed: u64,
}

impl NetworkParams {
    /// Glorot-uniform weights, zero biases. `sizes` has one more entry than
    /// `activations`.
    pub fn new(sizes: &[usize], activations: &[Activation], seed: u64) -> Result<Self> {
        if sizes.len() != activations.len() + 1 || activations.is_empty() {
            return Err(Error::Config(format!(
                "{} layer sizes for {} activations",
                sizes.len(),
                activations.len()
            )));
        }
        if sizes.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        let mut rng = seed::rng(seed);
        let layers = sizes
            .windows(2)
            .zip(activations)
            .map(|(io, &activation)| {
                let (fan_in, fan_out) = (io[0], io[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Layer {
                    weights: Array2::from_shape_simple_fn((fan_out, fan_in), || rng.random_range(-limit..limit)),
                    biases: Array1::zeros(fan_out),
                    activation,
                }
            })
            .collect();
        Ok(Self { layers, seed })
    }

    pub fn from_layers(layers: Vec<Layer>, seed: u64) -> Result<Self> {
        let p = Self { layers, seed };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Shape("network has no layers".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.biases.len() != l.weights.nrows() {
                return Err(Error::Shape(format!("layer {i}: bias length differs from output width")));
            }
            if i > 0 && self.layers[i - 1].weights.nrows() != l.weights.ncols() {
                return Err(Error::Shape(format!(
                    "layer {i} expects {} inputs, previous layer produces {}",
                    l.weights.ncols(),
                    self.layers[i - 1].weights.nrows()
                )));
            }
            if l.activation == Activation::Softmax && i + 1 != self.layers.len() {
                return Err(Error::Shape("softmax is only allowed on the output layer".into()));
            }
        }
        if !self.is_finite() {
            return Err(Error::NonFinite("network parameters".into()));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.biases.iter()).all(|v| v.is_finite()))
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").weights.nrows()
    }

    pub fn output_activation(&self) -> Activation {
        self.layers.last().expect("non-empty").activation
    }

    /// Inference without a gradient cache.
    pub fn predict(&self, input: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(input)?;
        let mut x = input.to_owned();
        for l in &self.layers {
            let mut z = x.dot(&l.weights.t());
            z += &l.biases;
            x = l.activation.apply(&z);
        }
        Ok(x)
    }

    fn check_input(&self, input: ArrayView2<f64>) -> Result<()> {
        if input.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input width {} for a network expecting {}",
                input.ncols(),
                self.input_dim()
            )));
        }
        if !self.is_finite() {
            return Err(Error::NonFinite("network parameters".into()));
        }
        Ok(())
    }

    /// Versioned binary: `b"CANN"`, u8 version, u64 seed, u32 layer count,
    /// per layer (u32 out, u32 in, u8 activation), then per layer row-major
    /// f32 weights followed by f32 biases. Little-endian throughout.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(NET_MAGIC);
        out.push(NET_VERSION);
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for l in &self.layers {
            out.extend_from_slice(&(l.weights.nrows() as u32).to_le_bytes());
            out.extend_from_slice(&(l.weights.ncols() as u32).to_le_bytes());
            out.push(l.activation.code());
        }
        for l in &self.layers {
            for v in l.weights.iter().chain(l.biases.iter()) {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, usize)> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(4)? != NET_MAGIC {
            return Err(Error::Model("not a network parameter block".into()));
        }
        let version = r.u8()?;
        if version != NET_VERSION {
            return Err(Error::Model(format!("unsupported network format version {version}")));
        }
        let seed = r.u64()?;
        let n = r.u32()? as usize;
        if n == 0 || n > 1024 {
            return Err(Error::Model(format!("implausible layer count {n}")));
        }
        let mut shapes = Vec::with_capacity(n);
        for _ in 0..n {
            let out = r.u32()? as usize;
            let inp = r.u32()? as usize;
            let act = Activation::from_code(r.u8()?).ok_or_else(|| Error::Model("unknown activation".into()))?;
            shapes.push((out, inp, act));
        }
        let mut layers = Vec::with_capacity(n);
        for (out, inp, activation) in shapes {
            let w: Vec<f64> = (0..out * inp).map(|_| r.f32().map(f64::from)).collect::<Result<_>>()?;
            let b: Vec<f64> = (0..out).map(|_| r.f32().map(f64::from)).collect::<Result<_>>()?;
            layers.push(Layer {
                weights: Array2::from_shape_vec((out, inp), w).expect("sized"),
                biases: Array1::from(b),
                activation,
            });
        }
        let p = Self::from_layers(layers, seed).map_err(|e| Error::Model(e.to_string()))?;
        Ok((p, r.pos))
    }
}

const NET_MAGIC: &[u8; 4] = b"CANN";
const NET_VERSION: u8 = 1;

pub(crate) struct ByteReader<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| Error::Model("truncated model data".into()))?;
        self.pos += n;
        Ok(s)
    }
    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    pub fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Per-layer inputs, pre-activations and outputs of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `activations[0]` is the input, `activations[i + 1]` the output of layer `i`.
    pub activations: Vec<Array2<f64>>,
    pub pre: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().expect("non-empty")
    }
}

pub fn forward(params: &NetworkParams, input: ArrayView2<f64>) -> Result<ForwardCache> {
    params.check_input(input)?;
    let mut activations = Vec::with_capacity(params.layers.len() + 1);
    let mut pre = Vec::with_capacity(params.layers.len());
    activations.push(input.to_owned());
    for l in &params.layers {
        let mut z = activations.last().expect("input").dot(&l.weights.t());
        z += &l.biases;
        activations.push(l.activation.apply(&z));
        pre.push(z);
    }
    Ok(ForwardCache { activations, pre })
}

/// Single-sample forward; returns every layer's output.
pub fn forward_one(params: &NetworkParams, input: &[f64]) -> Result<Vec<Vec<f64>>> {
    let x = ArrayView2::from_shape((1, input.len()), input).expect("row");
    let cache = forward(params, x)?;
    Ok(cache.activations[1..].iter().map(|a| a.iter().copied().collect()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    CrossEntropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    pub weight: f64,
}

impl LossSpec {
    pub fn mse(weight: f64) -> Self {
        Self { kind: LossKind::Mse, weight }
    }

    pub fn cross_entropy(weight: f64) -> Self {
        Self {
            kind: LossKind::CrossEntropy,
            weight,
        }
    }
}

/// Loss value and its gradient w.r.t. the last layer's pre-activation.
///
/// MSE is the mean over all output elements. Cross-entropy is the batch mean
/// of `−Σ t·log p`; it needs a softmax head, or an identity head whose
/// outputs are treated as logits.
pub fn loss_and_grad(params: &NetworkParams, cache: &ForwardCache, loss: &LossSpec, target: ArrayView2<f64>) -> Result<(f64, Array2<f64>)> {
    let out = cache.output();
    if out.dim() != target.dim() {
        return Err(Error::Shape(format!("output {:?} vs target {:?}", out.dim(), target.dim())));
    }
    if !loss.weight.is_finite() {
        return Err(Error::NonFinite("loss weight".into()));
    }
    let last = params.layers.len() - 1;
    let n = out.nrows().max(1) as f64;
    match loss.kind {
        LossKind::Mse => {
            let count = out.len().max(1) as f64;
            let diff = out - &target;
            let value = loss.weight * diff.iter().map(|d| d * d).sum::<f64>() / count;
            let grad_out = diff * (2.0 * loss.weight / count);
            let act = params.layers[last].activation;
            Ok((value, act.backprop(&cache.pre[last], out, grad_out)))
        }
        LossKind::CrossEntropy => {
            let act = params.layers[last].activation;
            if !matches!(act, Activation::Softmax | Activation::Identity) {
                return Err(Error::Config("cross-entropy needs a softmax or logit output layer".into()));
            }
            let logits = &cache.pre[last];
            let logp = log_softmax_rows(logits);
            let value = -loss.weight * (&logp * &target).sum() / n;
            let p = logp.mapv(f64::exp);
            let mut grad = p;
            for (mut g, t) in grad.rows_mut().into_iter().zip(target.rows()) {
                let mass = t.sum();
                Zip::from(&mut g).and(&t).for_each(|g, &t| *g = loss.weight * (*g * mass - t) / n);
            }
            Ok((value, grad))
        }
    }
}

/// Gradients shaped like a network's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Gradients {
    pub fn zeros_like(params: &NetworkParams) -> Self {
        Self {
            weights: params.layers.iter().map(|l| Array2::zeros(l.weights.raw_dim())).collect(),
            biases: params.layers.iter().map(|l| Array1::zeros(l.biases.raw_dim())).collect(),
        }
    }

    pub fn scale(&mut self, k: f64) {
        self.weights.iter_mut().for_each(|w| *w *= k);
        self.biases.iter_mut().for_each(|b| *b *= k);
    }

    pub fn add_scaled(&mut self, other: &Gradients, k: f64) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.scaled_add(k, b);
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            a.scaled_add(k, b);
        }
    }

    /// Adds `l2 · W` to each weight gradient (biases are not penalized).
    pub fn add_weight_decay(&mut self, params: &NetworkParams, l2: f64) {
        for (g, l) in self.weights.iter_mut().zip(&params.layers) {
            g.scaled_add(l2, &l.weights);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().flat_map(|w| w.iter()).chain(self.biases.iter().flat_map(|b| b.iter()))
    }

    fn matches(&self, params: &NetworkParams) -> bool {
        self.weights.len() == params.layers.len()
            && self
                .weights
                .iter()
                .zip(&self.biases)
                .zip(&params.layers)
                .all(|((w, b), l)| w.dim() == l.weights.dim() && b.len() == l.biases.len())
    }
}

/// Backpropagate a gradient given at the last pre-activation. Returns the
/// parameter gradients and the gradient w.r.t. the network input.
pub fn backward_from_pre(params: &NetworkParams, cache: &ForwardCache, grad_pre: Array2<f64>) -> Result<(Gradients, Array2<f64>)> {
    if cache.pre.len() != params.layers.len() {
        return Err(Error::Shape("forward cache does not match the network".into()));
    }
    let mut grads = Gradients::zeros_like(params);
    let mut delta = grad_pre;
    for i in (0..params.layers.len()).rev() {
        let l = &params.layers[i];
        if delta.dim() != cache.pre[i].dim() {
            return Err(Error::Shape(format!("gradient {:?} at layer {i} with output {:?}", delta.dim(), cache.pre[i].dim())));
        }
        grads.weights[i] = delta.t().dot(&cache.activations[i]);
        grads.biases[i] = delta.sum_axis(Axis(0));
        let grad_in = delta.dot(&l.weights);
        delta = if i > 0 {
            let prev = &params.layers[i - 1];
            prev.activation.backprop(&cache.pre[i - 1], &cache.activations[i], grad_in)
        } else {
            grad_in
        };
    }
    Ok((grads, delta))
}

/// Backpropagate a gradient given at the network output (post-activation).
pub fn backward_from_output(params: &NetworkParams, cache: &ForwardCache, grad_out: Array2<f64>) -> Result<(Gradients, Array2<f64>)> {
    let last = params.layers.len() - 1;
    if grad_out.dim() != cache.output().dim() {
        return Err(Error::Shape("output gradient shape".into()));
    }
    let g = params.layers[last].activation.backprop(&cache.pre[last], cache.output(), grad_out);
    backward_from_pre(params, cache, g)
}

/// Loss value, parameter gradients and input gradient for one batch.
pub fn backward(params: &NetworkParams, cache: &ForwardCache, loss: &LossSpec, target: ArrayView2<f64>) -> Result<(f64, Gradients, Array2<f64>)> {
    let (value, g) = loss_and_grad(params, cache, loss, target)?;
    let (grads, input_grad) = backward_from_pre(params, cache, g)?;
    Ok((value, grads, input_grad))
}

/// Scalar loss only, for finite-difference checks and logging.
pub fn loss_value(params: &NetworkParams, input: ArrayView2<f64>, loss: &LossSpec, target: ArrayView2<f64>) -> Result<f64> {
    let cache = forward(params, input)?;
    loss_and_grad(params, &cache, loss, target).map(|(v, _)| v)
}

/// Gradient-reversal: `−λ · grad`.
pub fn grad_reverse(gradient: &Array2<f64>, lambda: f64) -> Array2<f64> {
    gradient * -lambda
}

/// SGD with classical momentum: `v ← μ·v + g`, `θ ← θ − lr·v`.
pub fn sgd_step(params: &mut NetworkParams, grads: &Gradients, lr: f64, momentum: f64, velocity: &mut Gradients) -> Result<()> {
    if !grads.matches(params) || !velocity.matches(params) {
        return Err(Error::Shape("gradient shapes differ from the network".into()));
    }
    for (i, l) in params.layers.iter_mut().enumerate() {
        let vw = &mut velocity.weights[i];
        *vw *= momentum;
        *vw += &grads.weights[i];
        l.weights.scaled_add(-lr, vw);
        let vb = &mut velocity.biases[i];
        *vb *= momentum;
        *vb += &grads.biases[i];
        l.biases.scaled_add(-lr, vb);
    }
    Ok(())
}

/// Owns the momentum buffer for one network.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: Gradients,
}

impl Sgd {
    pub fn new(params: &NetworkParams, lr: f64, momentum: f64) -> Self {
        Self {
            lr,
            momentum,
            velocity: Gradients::zeros_like(params),
        }
    }

    pub fn step(&mut self, params: &mut NetworkParams, grads: &Gradients) -> Result<()> {
        sgd_step(params, grads, self.lr, self.momentum, &mut self.velocity)
    }
}

/// One-hot rows for dense class indices.
pub fn one_hot(labels: &[usize], classes: usize) -> Array2<f64> {
    let mut out = Array2::zeros((labels.len(), classes));
    for (i, &l) in labels.iter().enumerate() {
        out[[i, l]] = 1.0;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn rand_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = seed::rng(seed);
        Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..1.0))
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let layer = Layer {
            weights: Array2::eye(3),
            biases: Array1::zeros(3),
            activation: Activation::Identity,
        };
        let p = NetworkParams::from_layers(vec![layer], 0).unwrap();
        let out = forward_one(&p, &[1.5, -2.0, 0.25]).unwrap();
        assert_eq!(out[0], vec![1.5, -2.0, 0.25]);
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let s = softmax_rows(&Array2::from_elem((1, 5), 3.7));
        assert!(s.iter().all(|&v| (v - 0.2).abs() < 1e-15));
    }

    #[test]
    fn forward_is_deterministic() {
        let build = || NetworkParams::new(&[4, 8, 3], &[Activation::Tanh, Activation::Softmax], 42).unwrap();
        let x = rand_matrix(2, 4, 1);
        assert_eq!(build(), build());
        assert_eq!(forward(&build(), x.view()).unwrap().output(), forward(&build(), x.view()).unwrap().output());
    }

    #[test]
    fn shape_and_finiteness_errors() {
        let mut p = NetworkParams::new(&[4, 3], &[Activation::Identity], 0).unwrap();
        assert!(matches!(forward(&p, rand_matrix(1, 5, 0).view()), Err(Error::Shape(_))));
        p.layers[0].weights[[0, 0]] = f64::NAN;
        assert!(matches!(forward(&p, rand_matrix(1, 4, 0).view()), Err(Error::NonFinite(_))));
        let bad = vec![
            Layer { weights: Array2::zeros((3, 2)), biases: Array1::zeros(3), activation: Activation::Relu },
            Layer { weights: Array2::zeros((1, 4)), biases: Array1::zeros(1), activation: Activation::Identity },
        ];
        assert!(NetworkParams::from_layers(bad, 0).is_err());
    }

    #[test]
    fn mse_at_target_has_zero_gradient() {
        let p = NetworkParams::new(&[3, 5, 2], &[Activation::Tanh, Activation::Identity], 3).unwrap();
        let x = rand_matrix(4, 3, 9);
        let cache = forward(&p, x.view()).unwrap();
        let target = cache.output().clone();
        let (v, g, gx) = backward(&p, &cache, &LossSpec::mse(1.0), target.view()).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
        assert!(gx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn softmax_cross_entropy_gradient_is_p_minus_y() {
        let p = NetworkParams::new(&[3, 4], &[Activation::Softmax], 5).unwrap();
        let x = rand_matrix(1, 3, 2);
        let cache = forward(&p, x.view()).unwrap();
        let y = one_hot(&[2], 4);
        let (_, g) = loss_and_grad(&p, &cache, &LossSpec::cross_entropy(1.0), y.view()).unwrap();
        let want = cache.output() - &y;
        assert!(g.iter().zip(want.iter()).all(|(a, b)| (a - b).abs() < 1e-15));
    }

    #[test]
    fn cross_entropy_rejects_tanh_head() {
        let p = NetworkParams::new(&[3, 2], &[Activation::Tanh], 5).unwrap();
        let cache = forward(&p, rand_matrix(1, 3, 2).view()).unwrap();
        assert!(loss_and_grad(&p, &cache, &LossSpec::cross_entropy(1.0), one_hot(&[0], 2).view()).is_err());
    }

    #[test]
    fn sgd_leaves_params_alone_for_zero_gradient_or_rate() {
        let mut p = NetworkParams::new(&[3, 2], &[Activation::Identity], 1).unwrap();
        let before = p.clone();
        let zero = Gradients::zeros_like(&p);
        let mut opt = Sgd::new(&p, 0.5, 0.9);
        opt.step(&mut p, &zero).unwrap();
        assert_eq!(p, before);
        let mut g = Gradients::zeros_like(&p);
        g.weights[0].fill(1.0);
        let mut opt = Sgd::new(&p, 0.0, 0.9);
        opt.step(&mut p, &g).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn sgd_converges_on_one_dimensional_quadratic() {
        // f(w) = (w − 3)², gradient 2(w − 3); the update factor is 0.8 per step.
        let layer = Layer { weights: array![[0.0]], biases: array![0.0], activation: Activation::Identity };
        let mut p = NetworkParams::from_layers(vec![layer], 0).unwrap();
        let mut opt = Sgd::new(&p, 0.1, 0.0);
        for _ in 0..100 {
            let w = p.layers[0].weights[[0, 0]];
            let mut g = Gradients::zeros_like(&p);
            g.weights[0][[0, 0]] = 2.0 * (w - 3.0);
            opt.step(&mut p, &g).unwrap();
        }
        let w = p.layers[0].weights[[0, 0]];
        assert!((w - 3.0).abs() < 1e-3, "w = {w}");
        assert!((w - 3.0 * (1.0 - 0.8f64.powi(100))).abs() < 1e-12);
    }

    #[test]
    fn grad_reverse_scales_and_negates() {
        let g = array![[1.0, -2.0], [0.5, 0.0]];
        assert!(grad_reverse(&g, 0.0).iter().all(|&v| v == 0.0));
        assert_eq!(grad_reverse(&g, 1.0), -g.clone());
        assert_eq!(grad_reverse(&g, 2.5), g * -2.5);
    }

    #[test]
    fn serialization_round_trips_through_f32() {
        let p = NetworkParams::new(&[5, 7, 3], &[Activation::Relu, Activation::Softmax], 8).unwrap();
        let bytes = p.to_bytes();
        let (q, used) = NetworkParams::from_bytes(&bytes).unwrap();
        assert_eq!(used, bytes.len());
        assert_eq!(q.seed, 8);
        for (a, b) in p.layers.iter().zip(&q.layers) {
            assert_eq!(a.activation, b.activation);
            assert!(a.weights.iter().zip(b.weights.iter()).all(|(x, y)| (*x as f32) as f64 == *y));
        }
        assert_eq!(NetworkParams::from_bytes(&q.to_bytes()).unwrap().0, q);
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(NetworkParams::from_bytes(&bad), Err(Error::Model(_))));
        assert!(NetworkParams::from_bytes(&bytes[..bytes.len() - 2]).is_err());
    }

    #[test]
    fn learns_linearly_separable_set() {
        // Two blobs on either side of x0 + x1 = 0.
        let mut rng = seed::rng(77);
        let n = 60;
        let mut x = Array2::zeros((n, 2));
        let mut labels = vec![0usize; n];
        for i in 0..n {
            let side = if i % 2 == 0 { 1.0 } else { -1.0 };
            x[[i, 0]] = side * rng.random_range(0.5..2.0) + rng.random_range(-0.3..0.3);
            x[[i, 1]] = side * rng.random_range(0.5..2.0) + rng.random_range(-0.3..0.3);
            labels[i] = usize::from(side > 0.0);
        }
        let y = one_hot(&labels, 2);
        let mut p = NetworkParams::new(&[2, 8, 2], &[Activation::Tanh, Activation::Softmax], 4).unwrap();
        let mut opt = Sgd::new(&p, 0.1, 0.9);
        for _ in 0..500 {
            let cache = forward(&p, x.view()).unwrap();
            let (_, g, _) = backward(&p, &cache, &LossSpec::cross_entropy(1.0), y.view()).unwrap();
            opt.step(&mut p, &g).unwrap();
        }
        let out = p.predict(x.view()).unwrap();
        let correct = out
            .rows()
            .into_iter()
            .zip(&labels)
            .filter(|(r, &l)| usize::from(r[1] > r[0]) == l)
            .count();
        assert_eq!(correct, n);
    }
}
