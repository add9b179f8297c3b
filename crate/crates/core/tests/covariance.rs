mod common;

use common::*;
use lautum::cov_stream::{sample_cov, sample_cross_cov, BatchPair, CovarianceAccumulator};
use lautum::info_measures::{gaussian_lautum_kl, gaussian_lautum_regularizer, gaussian_mutual_info, GaussianBlocks};
use lautum::linalg::Mat;
use proptest::prelude::*;
use rand::Rng;

/// `Σ(n) = Σᵢ (1−α) α^(n−i) Sᵢ`, summed directly.
fn unrolled(batches: &[BatchPair], alpha: f64) -> (Mat, Mat) {
    let n = batches.len();
    let (d, k) = (batches[0].inputs().nrows(), batches[0].logits().nrows());
    let (mut sw, mut sxw) = (Mat::zeros(k, k), Mat::zeros(d, k));
    for (i, b) in batches.iter().enumerate() {
        let weight = (1.0 - alpha) * alpha.powi((n - 1 - i) as i32);
        sw += sample_cov(b.logits()).unwrap() * weight;
        sxw += sample_cross_cov(b.inputs(), b.logits()).unwrap() * weight;
    }
    (sw, sxw)
}

#[test]
fn streamed_state_matches_unrolled_sum() {
    let mut rng = rng(300);
    for seq in 0..100 {
        let (d, k, b) = (rng.random_range(1..5), rng.random_range(1..5), rng.random_range(2..10));
        let alpha = rng.random_range(0.05..0.999);
        let len = rng.random_range(1..60);
        let batches: Vec<BatchPair> = (0..len).map(|_| correlated_batch(d, k, b, 0.5, &mut rng)).collect();
        let mut acc = CovarianceAccumulator::new(Mat::identity(d, d), k, alpha, 1e-4).unwrap();
        for batch in &batches {
            acc.ema_update(batch).unwrap();
        }
        let (sw, sxw) = unrolled(&batches, alpha);
        let err = (acc.sigma_w() - sw).amax().max((acc.sigma_xw() - sxw).amax());
        assert!(err <= 1e-12, "sequence {seq}: {err:e}");
        assert_eq!(acc.iteration(), len as u64);
    }
}

fn blocks_strategy() -> impl Strategy<Value = (usize, usize, Vec<f64>, Vec<f64>, Vec<f64>)> {
    (1usize..4, 1usize..4).prop_flat_map(|(d, k)| {
        let n = d + k;
        (
            Just(d),
            Just(k),
            prop::collection::vec(-1.0..1.0f64, n * (n + 2)),
            prop::collection::vec(-1.0..1.0f64, d * d),
            prop::collection::vec(-1.0..1.0f64, k * k),
        )
    })
}

fn blocks_from(d: usize, k: usize, raw: &[f64]) -> GaussianBlocks {
    let n = d + k;
    let a = Mat::from_column_slice(n, n + 2, raw);
    let full = &a * a.transpose() / (n + 2) as f64 + Mat::identity(n, n) * 0.1;
    let full = (&full + full.transpose()) * 0.5;
    GaussianBlocks::new(
        full.view((0, 0), (d, d)).into_owned(),
        full.view((d, d), (k, k)).into_owned(),
        full.view((0, d), (d, k)).into_owned(),
    )
    .unwrap()
}

fn invertible(n: usize, raw: &[f64]) -> Mat {
    Mat::from_column_slice(n, n, raw) + Mat::identity(n, n) * 3.0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    /// Information measures ignore invertible reparametrizations of either side.
    #[test]
    fn measures_are_congruence_invariant((d, k, raw, ra, rb) in blocks_strategy()) {
        let blocks = blocks_from(d, k, &raw);
        let (a, b) = (invertible(d, &ra), invertible(k, &rb));
        let sym = |m: Mat| (&m + m.transpose()) * 0.5;
        let moved = GaussianBlocks::new(
            sym(&a * blocks.sigma_x() * a.transpose()),
            sym(&b * blocks.sigma_w() * b.transpose()),
            &a * blocks.sigma_xw() * b.transpose(),
        ).unwrap();
        for f in [gaussian_lautum_regularizer, gaussian_lautum_kl, gaussian_mutual_info] {
            let (u, v) = (f(&blocks).unwrap(), f(&moved).unwrap());
            prop_assert!((u - v).abs() <= 1e-8 * (1.0 + u.abs()), "{} vs {}", u, v);
        }
    }

    /// Both forms are symmetric in the two variables.
    #[test]
    fn measures_are_symmetric((d, k, raw, _ra, _rb) in blocks_strategy()) {
        let blocks = blocks_from(d, k, &raw);
        let swapped = blocks.swapped();
        for f in [gaussian_lautum_regularizer, gaussian_lautum_kl, gaussian_mutual_info] {
            let (u, v) = (f(&blocks).unwrap(), f(&swapped).unwrap());
            prop_assert!((u - v).abs() <= 1e-9 * (1.0 + u.abs()), "{} vs {}", u, v);
        }
    }

    /// Lautum dominates mutual information for Gaussians.
    #[test]
    fn lautum_is_at_least_mutual_information((d, k, raw, _ra, _rb) in blocks_strategy()) {
        let blocks = blocks_from(d, k, &raw);
        let l = gaussian_lautum_kl(&blocks).unwrap();
        let i = gaussian_mutual_info(&blocks).unwrap();
        prop_assert!(l + 1e-12 >= i, "L = {}, I = {}", l, i);
    }

    /// The accumulator stays symmetric and its jittered `Σw` stays definite.
    #[test]
    fn streamed_sigma_w_stays_definite(seed in 0u64..1000, len in 1usize..40, alpha in 0.5..0.9999f64) {
        let mut rng = rng(seed);
        let mut acc = CovarianceAccumulator::new(Mat::identity(3, 3), 2, alpha, 1e-4).unwrap();
        for _ in 0..len {
            acc.ema_update(&correlated_batch(3, 2, 5, 1.0, &mut rng)).unwrap();
            prop_assert_eq!(acc.sigma_w(), &acc.sigma_w().transpose());
            prop_assert!(lautum::linalg::min_eigenvalue(&acc.jittered_sigma_w()) > 0.0);
        }
    }
}
