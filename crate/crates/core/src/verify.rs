//! Randomized identity suites for the information measures.
//!
//! Every case draws from its own ChaCha stream, so results do not depend on
//! how cases are scheduled across threads.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::info_measures::{
    decompose_test_loss, gaussian_lautum_kl, gaussian_lautum_regularizer, DiscreteClassifier, DiscreteJoint,
    GaussianBlocks,
};
use crate::linalg::{self, Mat};
use crate::par::Exec;
use crate::Result;

/// Tolerance for the discrete decomposition identities.
pub const IDENTITY_TOL: f64 = 1e-12;
/// Relative tolerance for the regularizer/KL proportionality.
pub const PROPORTIONALITY_TOL: f64 = 1e-9;
/// Relative tolerance for the sampled KL estimate.
pub const MONTE_CARLO_TOL: f64 = 0.02;

fn case_rng(seed: u64, case: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(case as u64);
    rng
}

/// Strictly positive joint over `(x, y, w)` with every alphabet of size 1 to `max_dim`.
pub fn random_joint(rng: &mut impl Rng, max_dim: usize) -> Result<DiscreteJoint> {
    let dims = [
        rng.random_range(1..=max_dim),
        rng.random_range(1..=max_dim),
        rng.random_range(1..=max_dim),
    ];
    let raw: Vec<f64> = (0..dims.iter().product::<usize>())
        .map(|_| rng.random_range(0.01..1.0f64).powi(2))
        .collect();
    let total: f64 = raw.iter().sum();
    DiscreteJoint::new(dims, raw.into_iter().map(|v| v / total).collect())
}

/// Strictly positive classifier `f(y|x,w)` of matching shape.
pub fn random_classifier(rng: &mut impl Rng, dims: [usize; 3]) -> Result<DiscreteClassifier> {
    let [nx, ny, nw] = dims;
    let mut probs: Vec<f64> = (0..nx * ny * nw).map(|_| rng.random_range(0.01..1.0)).collect();
    for x in 0..nx {
        for w in 0..nw {
            let at = |y: usize| (x * ny + y) * nw + w;
            let total: f64 = (0..ny).map(|y| probs[at(y)]).sum();
            for y in 0..ny {
                probs[at(y)] /= total;
            }
        }
    }
    DiscreteClassifier::new(dims, probs)
}

/// Worst residuals of the test-loss decomposition over many random cases.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecompositionReport {
    pub cases: usize,
    /// `star = L(w;(x,y)) + H(y|x) − L(w;x)`
    pub max_star_residual: f64,
    /// `ce = joint KL term + H(y|x) − L(w;x)`
    pub max_full_residual: f64,
    /// `ce = star + dagger`
    pub max_split_residual: f64,
    /// Conditional-KL variant of the full identity; informational only.
    pub max_conditional_kl_residual: f64,
}

impl DecompositionReport {
    pub fn passed(&self) -> bool {
        self.max_star_residual <= IDENTITY_TOL
            && self.max_full_residual <= IDENTITY_TOL
            && self.max_split_residual <= IDENTITY_TOL
    }
}

impl fmt::Display for DecompositionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} cases: star {:.3e}, full {:.3e}, split {:.3e} (tol {IDENTITY_TOL:e}); conditional-KL variant {:.3e} (not asserted)",
            self.cases,
            self.max_star_residual,
            self.max_full_residual,
            self.max_split_residual,
            self.max_conditional_kl_residual
        )
    }
}

pub fn decomposition_suite(cases: usize, seed: u64, exec: Exec) -> Result<DecompositionReport> {
    let residuals = exec.map_range(cases, |i| {
        let mut rng = case_rng(seed, i);
        let joint = random_joint(&mut rng, 4)?;
        let f = random_classifier(&mut rng, joint.dims())?;
        let t = decompose_test_loss(&joint, &f)?;
        Ok([
            t.star_residual().abs(),
            t.full_residual().abs(),
            t.split_residual().abs(),
            t.conditional_kl_residual().abs(),
        ])
    });
    let mut max = [0.0f64; 4];
    for r in residuals {
        let r: [f64; 4] = r?;
        for (m, v) in max.iter_mut().zip(r) {
            *m = m.max(v);
        }
    }
    Ok(DecompositionReport {
        cases,
        max_star_residual: max[0],
        max_full_residual: max[1],
        max_split_residual: max[2],
        max_conditional_kl_residual: max[3],
    })
}

/// Random valid blocks with `D, K ∈ [1, max_dim]`. Smaller `extra` gives
/// stronger coupling between `x` and `w`.
pub fn random_blocks(rng: &mut impl Rng, max_dim: usize, extra: usize) -> Result<GaussianBlocks> {
    let d = rng.random_range(1..=max_dim);
    let k = rng.random_range(1..=max_dim);
    let n = d + k;
    let cols = n + extra;
    let a = Mat::from_fn(n, cols, |_, _| StandardNormal.sample(rng));
    let full = linalg::symmetrize(&(&a * a.transpose() / cols as f64 + Mat::identity(n, n) * 0.05));
    GaussianBlocks::new(
        full.view((0, 0), (d, d)).into_owned(),
        full.view((d, d), (k, k)).into_owned(),
        full.view((0, d), (d, k)).into_owned(),
    )
}

/// Spread of `regularizer / KL` over random blocks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProportionalityReport {
    pub cases: usize,
    /// Ratio on the first case.
    pub constant: f64,
    /// Largest `|ratio / constant − 1|`.
    pub max_rel_deviation: f64,
}

impl ProportionalityReport {
    pub fn passed(&self) -> bool {
        self.max_rel_deviation <= PROPORTIONALITY_TOL
    }
}

impl fmt::Display for ProportionalityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} cases: constant {:.12}, max rel deviation {:.3e} (tol {PROPORTIONALITY_TOL:e})",
            self.cases, self.constant, self.max_rel_deviation
        )
    }
}

pub fn proportionality_suite(cases: usize, seed: u64, exec: Exec) -> Result<ProportionalityReport> {
    let ratios = exec.map_range(cases, |i| {
        let mut rng = case_rng(seed, i);
        let b = random_blocks(&mut rng, 5, 4)?;
        Ok(gaussian_lautum_regularizer(&b)? / gaussian_lautum_kl(&b)?)
    });
    let ratios = ratios.into_iter().collect::<Result<Vec<f64>>>()?;
    let constant = ratios[0];
    let max_rel_deviation = ratios.iter().map(|r| (r / constant - 1.0).abs()).fold(0.0, f64::max);
    Ok(ProportionalityReport {
        cases,
        constant,
        max_rel_deviation,
    })
}

const MC_CHUNK: usize = 10_000;

/// Sampled `KL(N(0, blockdiag) ‖ N(0, full))` from `samples` draws of the
/// product of marginals. Chunks use fixed streams and are summed in order.
pub fn monte_carlo_lautum(blocks: &GaussianBlocks, samples: usize, seed: u64, exec: Exec) -> Result<f64> {
    let prod = blocks.product_of_marginals();
    let full = blocks.full();
    let n = prod.nrows();
    let l = prod
        .clone()
        .cholesky()
        .ok_or_else(|| crate::Error::Singular("product covariance".into()))?
        .l();
    let p_inv = linalg::spd_inverse(&prod, "product covariance")?;
    let q_inv = linalg::spd_inverse(&full, "full covariance")?;
    let offset =
        0.5 * (linalg::spd_log_det(&full, "full covariance")? - linalg::spd_log_det(&prod, "product covariance")?);
    // ln p(z) − ln q(z) = ½ zᵀ(Q⁻¹ − P⁻¹)z + offset
    let diff = q_inv - p_inv;
    let l: Vec<f64> = (0..n * n).map(|i| l[(i / n, i % n)]).collect();
    let diff: Vec<f64> = (0..n * n).map(|i| diff[(i / n, i % n)]).collect();

    let chunks = samples.div_ceil(MC_CHUNK);
    let sums = exec.map_range(chunks, |c| {
        let mut rng = case_rng(seed, c);
        let count = MC_CHUNK.min(samples - c * MC_CHUNK);
        let mut eps = vec![0.0; n];
        let mut z = vec![0.0; n];
        let mut sum = 0.0;
        for _ in 0..count {
            for e in eps.iter_mut() {
                *e = StandardNormal.sample(&mut rng);
            }
            for i in 0..n {
                z[i] = (0..=i).map(|j| l[i * n + j] * eps[j]).sum();
            }
            let mut quad = 0.0;
            for i in 0..n {
                let row: f64 = (0..n).map(|j| diff[i * n + j] * z[j]).sum();
                quad += z[i] * row;
            }
            sum += 0.5 * quad + offset;
        }
        sum
    });
    Ok(sums.iter().sum::<f64>() / samples as f64)
}

/// One sampled-KL comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloCase {
    pub closed_form: f64,
    pub estimate: f64,
}

impl MonteCarloCase {
    pub fn rel_error(&self) -> f64 {
        (self.estimate - self.closed_form).abs() / self.closed_form
    }
}

/// Draws coupled blocks (closed-form KL ≥ 0.05 so the relative error is
/// meaningful) and compares them with `samples`-draw estimates.
pub fn monte_carlo_suite(cases: usize, samples: usize, seed: u64, exec: Exec) -> Result<Vec<MonteCarloCase>> {
    let mut out = Vec::with_capacity(cases);
    let mut rng = case_rng(seed, usize::MAX);
    while out.len() < cases {
        let b = random_blocks(&mut rng, 5, 1)?;
        let closed_form = gaussian_lautum_kl(&b)?;
        if closed_form < 0.05 {
            continue;
        }
        let estimate = monte_carlo_lautum(&b, samples, seed.wrapping_add(out.len() as u64 + 1), exec)?;
        out.push(MonteCarloCase { closed_form, estimate });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_decomposition_suite_passes() {
        let r = decomposition_suite(50, 1, Exec::default()).unwrap();
        assert!(r.passed(), "{r}");
    }

    #[test]
    fn suites_are_schedule_independent() {
        let a = decomposition_suite(20, 5, Exec::Sequential).unwrap();
        let b = decomposition_suite(20, 5, Exec::Parallel).unwrap();
        assert_eq!(a, b);
        let blocks = random_blocks(&mut case_rng(3, 0), 3, 1).unwrap();
        let x = monte_carlo_lautum(&blocks, 25_000, 9, Exec::Sequential).unwrap();
        let y = monte_carlo_lautum(&blocks, 25_000, 9, Exec::Parallel).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn random_blocks_respect_bounds() {
        let mut rng = case_rng(0, 0);
        for _ in 0..20 {
            let b = random_blocks(&mut rng, 5, 4).unwrap();
            assert!((1..=5).contains(&b.sigma_x().nrows()));
            assert!((1..=5).contains(&b.sigma_w().nrows()));
        }
    }
}
