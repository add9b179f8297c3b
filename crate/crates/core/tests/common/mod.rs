#![allow(dead_code)]

use lautum::cov_stream::{precompute_target_cov, BatchPair, CovarianceAccumulator};
use lautum::linalg::Mat;
use lautum::nn_core::{NetworkParams, NetworkSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Mat {
    Mat::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

pub fn uniform(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Mat {
    Mat::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// `‖a − b‖ / max(‖a‖, ‖b‖, floor)`
pub fn rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(floor)
}

/// Central differences of `f` at `x`, step `1e-5 · max(1, |x_i|)`.
pub fn numeric_grad(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            let h = 1e-5 * orig.abs().max(1.0);
            x[i] = orig + h;
            let up = f(&x);
            x[i] = orig - h;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Inputs with logits that depend linearly on them plus noise.
pub fn correlated_batch(d: usize, k: usize, b: usize, coupling: f64, rng: &mut ChaCha8Rng) -> BatchPair {
    let x = gaussian(d, b, rng);
    let w = gaussian(k, d, rng) * &x * coupling + gaussian(k, b, rng);
    BatchPair::new(x, w).unwrap()
}

/// Accumulator whose `Σx` comes from a large pool and whose history holds
/// `warmup` correlated batches.
pub fn warmed_accumulator(
    d: usize,
    k: usize,
    b: usize,
    alpha: f64,
    warmup: usize,
    rng: &mut ChaCha8Rng,
) -> CovarianceAccumulator {
    warmed_accumulator_with(d, k, b, alpha, warmup, 0.7, rng)
}

pub fn warmed_accumulator_with(
    d: usize,
    k: usize,
    b: usize,
    alpha: f64,
    warmup: usize,
    coupling: f64,
    rng: &mut ChaCha8Rng,
) -> CovarianceAccumulator {
    let pool = gaussian(d, 500, rng);
    let sx = precompute_target_cov(&pool, 1e-4).unwrap();
    let mut acc = CovarianceAccumulator::new(sx, k, alpha, 1e-4)
        .unwrap()
        .with_batch_size(b);
    for _ in 0..warmup {
        acc.ema_update(&correlated_batch(d, k, b, coupling, rng)).unwrap();
    }
    acc
}

/// Network with every parameter drawn from `U(-1, 1)`.
pub fn randomized(spec: NetworkSpec, rng: &mut ChaCha8Rng) -> NetworkParams {
    let mut net = NetworkParams::init(&spec).unwrap();
    for t in net.tensors_mut() {
        for v in t.data_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
    }
    net
}

/// Central differences for a function that is piecewise linear in each
/// coordinate (ReLU and max-pool networks). Returns `None` when a probe
/// straddles a kink, detected by disagreeing one-sided differences.
pub fn numeric_grad_piecewise(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Option<Vec<f64>> {
    let base = f(x);
    let mut x = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = x[i];
        let h = 1e-5 * orig.abs().max(1.0);
        x[i] = orig + h;
        let up = f(&x);
        x[i] = orig - h;
        let down = f(&x);
        x[i] = orig;
        let (fw, bw) = ((up - base) / h, (base - down) / h);
        if (fw - bw).abs() > 1e-6 * fw.abs().max(bw.abs()).max(1.0) {
            return None;
        }
        out.push((up - down) / (2.0 * h));
    }
    Some(out)
}

/// Worst relative error over every parameter tensor and the input, for the
/// objective `Σ R ⊙ logits`. `None` if a probe crossed a kink.
pub fn check_network(spec: NetworkSpec, batch: usize, rng: &mut ChaCha8Rng) -> Option<f64> {
    let net = randomized(spec, rng);
    let x = uniform(net.input_dim(), batch, rng);
    let r = uniform(net.output_dim(), batch, rng);
    let objective = |n: &NetworkParams, x: &Mat| n.predict(x).unwrap().component_mul(&r).sum();

    let (_, cache) = net.forward(&x).unwrap();
    let (grads, dx) = net.backward_with_input(&cache, &r).unwrap();
    let mut worst: f64 = 0.0;
    for (i, g) in grads.iter().enumerate() {
        let numeric = numeric_grad_piecewise(net.tensors()[i].data(), |theta| {
            let mut n = net.clone();
            n.tensors_mut()[i].data_mut().copy_from_slice(theta);
            objective(&n, &x)
        })?;
        worst = worst.max(rel_err(g.data(), &numeric, 1e-8));
    }
    let numeric = numeric_grad_piecewise(x.as_slice(), |v| {
        objective(&net, &Mat::from_column_slice(x.nrows(), x.ncols(), v))
    })?;
    Some(worst.max(rel_err(dx.as_slice(), &numeric, 1e-8)))
}

/// Draws instances until `n` of them are checkable. Returns the worst error
/// and the number of redrawn instances.
pub fn checked_instances(n: usize, mut draw: impl FnMut(u64) -> Option<f64>) -> (f64, usize) {
    let (mut worst, mut kept, mut attempt) = (0.0f64, 0, 0u64);
    while kept < n {
        assert!(attempt < 10 * n as u64, "too many instances straddle a kink");
        if let Some(e) = draw(attempt) {
            worst = worst.max(e);
            kept += 1;
        }
        attempt += 1;
    }
    (worst, attempt as usize - n)
}
