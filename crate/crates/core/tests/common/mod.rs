//! Finite-difference gradient oracle shared by the gradient tests and the
//! acceptance suite.

#![allow(dead_code)]

use caae_core::neural::{self, Activation, Gradients, LossSpec, NetworkParams};
use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
/// Gradients smaller than this are compared absolutely.
pub const FD_FLOOR: f64 = 1e-6;
/// Cap on parameters probed per tensor, so wide layers stay cheap.
const MAX_PROBES: usize = 64;

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FD_FLOOR)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-scale..scale))
}

pub fn random_targets(rng: &mut ChaCha8Rng, rows: usize, classes: usize) -> Array2<f64> {
    let labels: Vec<usize> = (0..rows).map(|_| rng.random_range(0..classes)).collect();
    neural::one_hot(&labels, classes)
}

pub fn random_net(rng: &mut ChaCha8Rng, sizes: &[usize], acts: &[Activation]) -> NetworkParams {
    let mut p = NetworkParams::new(sizes, acts, rng.random()).unwrap();
    for l in &mut p.layers {
        l.biases.mapv_inplace(|_| rng.random_range(-0.5..0.5));
    }
    p
}

/// True when some ReLU pre-activation sits close enough to the kink that
/// a central difference would straddle it.
pub fn near_kink(params: &NetworkParams, x: &Array2<f64>) -> bool {
    let cache = neural::forward(params, x.view()).unwrap();
    params
        .layers
        .iter()
        .zip(&cache.pre)
        .any(|(l, z)| l.activation == Activation::Relu && z.iter().any(|v| v.abs() < 1e-3))
}

fn probes(rng: &mut ChaCha8Rng, len: usize) -> Vec<usize> {
    if len <= MAX_PROBES {
        (0..len).collect()
    } else {
        (0..MAX_PROBES).map(|_| rng.random_range(0..len)).collect()
    }
}

/// Compare `grads` against central differences of `objective` over every
/// (or a sample of) parameter of `params`. Returns the max relative error.
pub fn compare(
    rng: &mut ChaCha8Rng,
    params: &NetworkParams,
    grads: &Gradients,
    mut objective: impl FnMut(&NetworkParams) -> f64,
) -> f64 {
    let mut worst: f64 = 0.0;
    let mut probe = params.clone();
    for i in 0..params.layers.len() {
        let wlen = params.layers[i].weights.len();
        for k in probes(rng, wlen) {
            let orig = params.layers[i].weights.as_slice().unwrap()[k];
            probe.layers[i].weights.as_slice_mut().unwrap()[k] = orig + FD_STEP;
            let up = objective(&probe);
            probe.layers[i].weights.as_slice_mut().unwrap()[k] = orig - FD_STEP;
            let down = objective(&probe);
            probe.layers[i].weights.as_slice_mut().unwrap()[k] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let cols = params.layers[i].weights.ncols();
            worst = worst.max(rel_err(grads.weights[i][[k / cols, k % cols]], numeric));
        }
        for k in probes(rng, params.layers[i].biases.len()) {
            let orig = params.layers[i].biases[k];
            probe.layers[i].biases[k] = orig + FD_STEP;
            let up = objective(&probe);
            probe.layers[i].biases[k] = orig - FD_STEP;
            let down = objective(&probe);
            probe.layers[i].biases[k] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(grads.biases[i][k], numeric));
        }
    }
    worst
}

/// Max relative error of `backward` for one network and loss.
pub fn check_single(rng: &mut ChaCha8Rng, params: &NetworkParams, x: &Array2<f64>, loss: LossSpec, target: &Array2<f64>) -> f64 {
    let cache = neural::forward(params, x.view()).unwrap();
    let (_, grads, _) = neural::backward(params, &cache, &loss, target.view()).unwrap();
    compare(rng, params, &grads, |p| neural::loss_value(p, x.view(), &loss, target.view()).unwrap())
}

/// The adversarial composite `λ_rec·MSE(dec(enc(x)), x) − λ_id·CE(head(enc(x)), u)`
/// differentiated w.r.t. the encoder, with the head's contribution passed
/// through `grad_reverse`.
pub fn check_composite(
    rng: &mut ChaCha8Rng,
    enc: &NetworkParams,
    dec: &NetworkParams,
    head: &NetworkParams,
    x: &Array2<f64>,
    users: &Array2<f64>,
    lambda_rec: f64,
    lambda_id: f64,
) -> f64 {
    let ce = enc_cache(enc, x);
    let z = ce.output().clone();
    let cd = neural::forward(dec, z.view()).unwrap();
    let (_, _, gz_rec) = neural::backward(dec, &cd, &LossSpec::mse(lambda_rec), x.view()).unwrap();
    let ch = neural::forward(head, z.view()).unwrap();
    let (_, _, gz_id) = neural::backward(head, &ch, &LossSpec::cross_entropy(1.0), users.view()).unwrap();
    let gz = gz_rec + neural::grad_reverse(&gz_id, lambda_id);
    let (grads, _) = neural::backward_from_output(enc, &ce, gz).unwrap();
    compare(rng, enc, &grads, |e| {
        let z = e.predict(x.view()).unwrap();
        let rec = neural::loss_value(dec, z.view(), &LossSpec::mse(lambda_rec), x.view()).unwrap();
        let id = neural::loss_value(head, z.view(), &LossSpec::cross_entropy(1.0), users.view()).unwrap();
        rec - lambda_id * id
    })
}

fn enc_cache(enc: &NetworkParams, x: &Array2<f64>) -> neural::ForwardCache {
    neural::forward(enc, x.view()).unwrap()
}

/// Draw an input batch that keeps every ReLU away from its kink.
pub fn smooth_batch(rng: &mut ChaCha8Rng, nets: &[&NetworkParams], rows: usize, cols: usize) -> Array2<f64> {
    loop {
        let x = random_matrix(rng, rows, cols, 1.0);
        let mut ok = !near_kink(nets[0], &x);
        if ok && nets.len() > 1 {
            let z = nets[0].predict(x.view()).unwrap();
            ok = nets[1..].iter().all(|n| !near_kink(n, &z));
        }
        if ok {
            return x;
        }
    }
}
