//! Mini-batch covariance estimation and its exponentially decaying moving
//! average.
//!
//! Sample matrices are `features × batch`: every column is one sample. All
//! covariances use the biased `1/B` normalization.

use crate::linalg::{self, Mat};
use crate::{Error, Result};

fn center(samples: &Mat) -> Mat {
    let mean = samples.column_mean();
    let mut c = samples.clone();
    for mut col in c.column_iter_mut() {
        col -= &mean;
    }
    c
}

fn check_batch(m: &Mat, what: &str) -> Result<()> {
    if m.ncols() < 2 {
        return Err(Error::BatchSize(format!(
            "{what} has {} samples, need at least 2",
            m.ncols()
        )));
    }
    Ok(())
}

/// `(1/B) Σ (x_i − μ)(x_i − μ)ᵀ`
pub fn sample_cov(samples: &Mat) -> Result<Mat> {
    check_batch(samples, "samples")?;
    let c = center(samples);
    let b = samples.ncols() as f64;
    Ok(linalg::symmetrize(&(&c * c.transpose())) / b)
}

/// `(1/B) Σ (a_i − μa)(b_i − μb)ᵀ`
pub fn sample_cross_cov(a: &Mat, b: &Mat) -> Result<Mat> {
    if a.ncols() != b.ncols() {
        return Err(Error::Shape(format!(
            "cross-covariance needs equal batch sizes, got {} and {}",
            a.ncols(),
            b.ncols()
        )));
    }
    check_batch(a, "samples")?;
    Ok(center(a) * center(b).transpose() / a.ncols() as f64)
}

/// Sample covariance over a whole dataset plus `jitter · I`, verified
/// positive definite.
pub fn precompute_target_cov(dataset: &Mat, jitter: f64) -> Result<Mat> {
    if !(jitter > 0.0) {
        return Err(Error::Config(format!("jitter must be positive, got {jitter}")));
    }
    if !linalg::all_finite(dataset) {
        return Err(Error::Data("target dataset contains NaN or Inf".into()));
    }
    let d = dataset.nrows();
    let cov = sample_cov(dataset)? + Mat::identity(d, d) * jitter;
    if cov.clone().cholesky().is_none() {
        return Err(Error::Numerical(format!(
            "target covariance ({d}×{d}) is not positive definite after jitter {jitter:e}; \
             min eigenvalue {:e}",
            linalg::min_eigenvalue(&cov)
        )));
    }
    Ok(cov)
}

/// One mini-batch of target inputs and the network's logits on them.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchPair {
    inputs: Mat,
    logits: Mat,
}

impl BatchPair {
    /// `inputs` is `D × B`, `logits` is `K × B`.
    pub fn new(inputs: Mat, logits: Mat) -> Result<Self> {
        if inputs.ncols() != logits.ncols() {
            return Err(Error::Shape(format!(
                "inputs have {} samples, logits {}",
                inputs.ncols(),
                logits.ncols()
            )));
        }
        check_batch(&inputs, "batch")?;
        if !linalg::all_finite(&inputs) || !linalg::all_finite(&logits) {
            return Err(Error::Data("batch contains NaN or Inf".into()));
        }
        Ok(Self { inputs, logits })
    }

    pub fn inputs(&self) -> &Mat {
        &self.inputs
    }

    pub fn logits(&self) -> &Mat {
        &self.logits
    }

    pub fn batch_size(&self) -> usize {
        self.inputs.ncols()
    }
}

/// EMA state for `Σw` and `Σxw` together with the fixed target covariance.
///
/// `Σwx` is never stored; it is `Σxwᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceAccumulator {
    sigma_w: Mat,
    sigma_xw: Mat,
    sigma_x_fixed: Mat,
    sigma_x_inv: Mat,
    alpha: f64,
    jitter: f64,
    iteration: u64,
    batch_size: Option<usize>,
}

impl CovarianceAccumulator {
    /// Zero-initialized state. `sigma_x_fixed` is used as given (it should
    /// already carry its jitter, see [`precompute_target_cov`]).
    pub fn new(sigma_x_fixed: Mat, logit_dim: usize, alpha: f64, jitter: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {alpha}")));
        }
        if !(jitter > 0.0) {
            return Err(Error::Config(format!("jitter must be positive, got {jitter}")));
        }
        if !linalg::is_symmetric(&sigma_x_fixed, 1e-10) {
            return Err(Error::Shape("fixed target covariance is not symmetric".into()));
        }
        let sigma_x_inv = linalg::spd_inverse(&sigma_x_fixed, "fixed target covariance")?;
        let d = sigma_x_fixed.nrows();
        Ok(Self {
            sigma_w: Mat::zeros(logit_dim, logit_dim),
            sigma_xw: Mat::zeros(d, logit_dim),
            sigma_x_fixed,
            sigma_x_inv,
            alpha,
            jitter,
            iteration: 0,
            batch_size: None,
        })
    }

    /// Rejects subsequent batches whose size differs from `batch_size`.
    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = Some(batch_size);
        self
    }

    /// Overrides the tracked state; used to start from a known history.
    pub fn with_state(mut self, sigma_w: Mat, sigma_xw: Mat) -> Result<Self> {
        if sigma_w.shape() != self.sigma_w.shape() || sigma_xw.shape() != self.sigma_xw.shape() {
            return Err(Error::Shape("state shapes do not match the accumulator".into()));
        }
        self.sigma_w = linalg::symmetrize(&sigma_w);
        self.sigma_xw = sigma_xw;
        Ok(self)
    }

    /// `Σ(n) = α Σ(n−1) + (1−α) Σ_batch` for both tracked matrices.
    pub fn ema_update(&mut self, batch: &BatchPair) -> Result<()> {
        if let Some(b) = self.batch_size {
            if batch.batch_size() != b {
                return Err(Error::BatchSize(format!(
                    "accumulator configured for batches of {b}, got {}",
                    batch.batch_size()
                )));
            }
        }
        let (d, k) = self.sigma_xw.shape();
        if batch.inputs.nrows() != d || batch.logits.nrows() != k {
            return Err(Error::Shape(format!(
                "batch is {}/{} rows, accumulator expects {d}/{k}",
                batch.inputs.nrows(),
                batch.logits.nrows()
            )));
        }
        let s_w = sample_cov(&batch.logits)?;
        let s_xw = sample_cross_cov(&batch.inputs, &batch.logits)?;
        let a = self.alpha;
        self.sigma_w = linalg::symmetrize(&(&self.sigma_w * a + s_w * (1.0 - a)));
        self.sigma_xw = &self.sigma_xw * a + s_xw * (1.0 - a);
        self.iteration += 1;
        debug_assert!(
            linalg::min_eigenvalue(&self.jittered_sigma_w()) > 0.0,
            "jittered sigma_w lost definiteness at iteration {}",
            self.iteration
        );
        Ok(())
    }

    pub fn sigma_w(&self) -> &Mat {
        &self.sigma_w
    }

    pub fn sigma_xw(&self) -> &Mat {
        &self.sigma_xw
    }

    pub fn sigma_wx(&self) -> Mat {
        self.sigma_xw.transpose()
    }

    pub fn sigma_x_fixed(&self) -> &Mat {
        &self.sigma_x_fixed
    }

    /// `Σx⁻¹`, computed once at construction.
    pub fn sigma_x_inv(&self) -> &Mat {
        &self.sigma_x_inv
    }

    /// `Σw + jitter · I`, the matrix that actually gets inverted.
    pub fn jittered_sigma_w(&self) -> Mat {
        let k = self.sigma_w.nrows();
        &self.sigma_w + Mat::identity(k, k) * self.jitter
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn input_dim(&self) -> usize {
        self.sigma_x_fixed.nrows()
    }

    pub fn logit_dim(&self) -> usize {
        self.sigma_w.nrows()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_mat(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Mat {
        Mat::from_fn(rows, cols, |_, _| rng.random_range(-2.0..2.0))
    }

    // Naive double loop, written from the definition.
    fn loop_cross_cov(a: &Mat, b: &Mat) -> Mat {
        let n = a.ncols();
        let mut out = Mat::zeros(a.nrows(), b.nrows());
        for i in 0..a.nrows() {
            for j in 0..b.nrows() {
                let ma: f64 = (0..n).map(|t| a[(i, t)]).sum::<f64>() / n as f64;
                let mb: f64 = (0..n).map(|t| b[(j, t)]).sum::<f64>() / n as f64;
                let mut s = 0.0;
                for t in 0..n {
                    s += (a[(i, t)] - ma) * (b[(j, t)] - mb);
                }
                out[(i, j)] = s / n as f64;
            }
        }
        out
    }

    #[test]
    fn sample_cov_examples() {
        let x = Mat::from_row_slice(2, 2, &[1.0, -1.0, 0.0, 0.0]);
        assert_eq!(
            sample_cov(&x).unwrap(),
            Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0])
        );
        let same = Mat::from_fn(3, 5, |i, _| i as f64);
        assert_eq!(sample_cov(&same).unwrap(), Mat::zeros(3, 3));
        assert!(matches!(sample_cov(&Mat::zeros(3, 1)), Err(Error::BatchSize(_))));
    }

    #[test]
    fn sample_cov_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random_mat(3, 8, &mut rng);
        let diff = sample_cov(&x).unwrap() - loop_cross_cov(&x, &x);
        assert!(diff.amax() < 1e-12);
    }

    #[test]
    fn cross_cov_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let a = random_mat(2, 6, &mut rng);
        let b = random_mat(3, 6, &mut rng);
        let diff = sample_cross_cov(&a, &b).unwrap() - loop_cross_cov(&a, &b);
        assert!(diff.amax() < 1e-12);
        let constant = Mat::from_element(3, 6, 4.0);
        assert!(sample_cross_cov(&a, &constant).unwrap().amax() < 1e-15);
        assert!((sample_cross_cov(&a, &a).unwrap() - sample_cov(&a).unwrap()).amax() < 1e-15);
        assert!(matches!(
            sample_cross_cov(&a, &random_mat(3, 5, &mut rng)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn precompute_target_cov_examples() {
        let x = Mat::from_row_slice(2, 2, &[1.0, -1.0, 1.0, -1.0]);
        let cov = precompute_target_cov(&x, 1e-3).unwrap();
        let expected = Mat::from_row_slice(2, 2, &[1.001, 1.0, 1.0, 1.001]);
        assert!((cov.clone() - expected).amax() < 1e-15);
        assert!(cov.cholesky().is_some());
        assert!(precompute_target_cov(&x, 0.0).is_err());
    }

    #[test]
    fn precompute_target_cov_whitened_data() {
        use rand_distr::StandardNormal;
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = Mat::from_fn(4, 10_000, |_, _| rng.sample::<f64, _>(StandardNormal));
        let cov = precompute_target_cov(&x, 1e-4).unwrap();
        assert!((cov - Mat::identity(4, 4)).amax() < 0.1);
    }

    fn scalar_batch(cov_target: f64) -> BatchPair {
        // Two samples at ±sqrt(c) give biased variance c.
        let s = cov_target.sqrt();
        BatchPair::new(Mat::from_row_slice(1, 2, &[s, -s]), Mat::from_row_slice(1, 2, &[s, -s])).unwrap()
    }

    #[test]
    fn ema_recurrence_arithmetic() {
        let mut acc = CovarianceAccumulator::new(Mat::identity(1, 1), 1, 0.5, 1e-4).unwrap();
        acc.ema_update(&scalar_batch(1.0)).unwrap();
        assert!((acc.sigma_w()[(0, 0)] - 0.5).abs() < 1e-15);
        acc.ema_update(&scalar_batch(2.0)).unwrap();
        assert!((acc.sigma_w()[(0, 0)] - 1.25).abs() < 1e-15);
        assert!((acc.sigma_xw()[(0, 0)] - 1.25).abs() < 1e-15);
        assert_eq!(acc.iteration(), 2);

        let mut acc = CovarianceAccumulator::new(Mat::identity(1, 1), 1, 0.999, 1e-4).unwrap();
        acc.ema_update(&scalar_batch(3.0)).unwrap();
        assert!((acc.sigma_w()[(0, 0)] - 0.003).abs() < 1e-15);
    }

    #[test]
    fn ema_rejects_bad_batches() {
        let mut acc = CovarianceAccumulator::new(Mat::identity(1, 1), 1, 0.9, 1e-4)
            .unwrap()
            .with_batch_size(4);
        assert!(matches!(acc.ema_update(&scalar_batch(1.0)), Err(Error::BatchSize(_))));
        let nan = BatchPair::new(Mat::from_row_slice(1, 2, &[f64::NAN, 0.0]), Mat::zeros(1, 2));
        assert!(matches!(nan, Err(Error::Data(_))));
        assert!(CovarianceAccumulator::new(Mat::identity(1, 1), 1, 1.5, 1e-4).is_err());
    }

    #[test]
    fn sigma_w_stays_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let mut acc = CovarianceAccumulator::new(Mat::identity(3, 3), 4, 0.99, 1e-4).unwrap();
        for _ in 0..200 {
            let b = BatchPair::new(random_mat(3, 6, &mut rng), random_mat(4, 6, &mut rng)).unwrap();
            acc.ema_update(&b).unwrap();
            let w = acc.sigma_w();
            assert!((w - w.transpose()).amax() < 1e-10);
        }
    }

    proptest! {
        #[test]
        fn ema_is_a_convex_combination(
            seed in any::<u64>(),
            alpha in 0.01f64..0.99,
            n in 1usize..20,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut acc = CovarianceAccumulator::new(Mat::identity(2, 2), 2, alpha, 1e-4).unwrap();
            let (mut lo, mut hi) = (Mat::zeros(2, 2), Mat::zeros(2, 2));
            for _ in 0..n {
                let b = BatchPair::new(random_mat(2, 5, &mut rng), random_mat(2, 5, &mut rng)).unwrap();
                let s = sample_cross_cov(b.inputs(), b.logits()).unwrap();
                lo = lo.zip_map(&s, f64::min);
                hi = hi.zip_map(&s, f64::max);
                acc.ema_update(&b).unwrap();
            }
            for (v, (l, h)) in acc.sigma_xw().iter().zip(lo.iter().zip(hi.iter())) {
                prop_assert!(*v >= l - 1e-12 && *v <= h + 1e-12);
            }
        }
    }
}
