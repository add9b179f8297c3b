//! Exact information measures on finite joints and jointly Gaussian pairs.
//!
//! All quantities are in nats. Discrete sums use the convention
//! `0 · ln(0 / q) = 0`.

use nalgebra::DMatrix;

use crate::lautum_reg::Diagnostics;
use crate::linalg::{self, Mat};
use crate::{Error, Result};

const PMF_TOL: f64 = 1e-12;

fn check_pmf<'a>(values: impl IntoIterator<Item = &'a f64>) -> Result<()> {
    let mut sum = 0.0;
    for (i, &v) in values.into_iter().enumerate() {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::Distribution(format!("entry {i} is {v}")));
        }
        sum += v;
    }
    if (sum - 1.0).abs() > PMF_TOL {
        return Err(Error::Distribution(format!("entries sum to {sum}, expected 1")));
    }
    Ok(())
}

fn row_sums(m: &Mat) -> Vec<f64> {
    m.row_iter().map(|r| r.sum()).collect()
}

fn col_sums(m: &Mat) -> Vec<f64> {
    m.column_iter().map(|c| c.sum()).collect()
}

/// `I(X;Y)` for a two-axis pmf with rows indexing `x` and columns `y`.
pub fn discrete_mutual_info(pmf: &Mat) -> Result<f64> {
    check_pmf(pmf.iter())?;
    let px = row_sums(pmf);
    let py = col_sums(pmf);
    let mut mi = 0.0;
    for i in 0..pmf.nrows() {
        for j in 0..pmf.ncols() {
            let p = pmf[(i, j)];
            if p > 0.0 {
                mi += p * (p / (px[i] * py[j])).ln();
            }
        }
    }
    Ok(mi.max(0.0))
}

/// `L(X;Y) = Σ p(x)p(y) ln(p(x)p(y) / p(x,y))`.
///
/// Returns `f64::INFINITY` when the joint vanishes somewhere the product of
/// marginals does not.
pub fn discrete_lautum(pmf: &Mat) -> Result<f64> {
    check_pmf(pmf.iter())?;
    let px = row_sums(pmf);
    let py = col_sums(pmf);
    let mut l = 0.0;
    for i in 0..pmf.nrows() {
        for j in 0..pmf.ncols() {
            let q = px[i] * py[j];
            if q > 0.0 {
                let p = pmf[(i, j)];
                if p <= 0.0 {
                    return Ok(f64::INFINITY);
                }
                l += q * (q / p).ln();
            }
        }
    }
    Ok(l.max(0.0))
}

/// Shannon entropy of a one-axis pmf.
pub fn discrete_entropy(pmf: &[f64]) -> Result<f64> {
    check_pmf(pmf)?;
    Ok(entropy_unchecked(pmf.iter().copied()))
}

fn entropy_unchecked(values: impl Iterator<Item = f64>) -> f64 {
    -values.filter(|&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
}

/// `H(Y|X) = H(X,Y) − H(X)` with rows indexing `x`.
pub fn discrete_conditional_entropy(pmf: &Mat) -> Result<f64> {
    check_pmf(pmf.iter())?;
    let h_xy = entropy_unchecked(pmf.iter().copied());
    let h_x = entropy_unchecked(row_sums(pmf).into_iter());
    Ok((h_xy - h_x).max(0.0))
}

/// Exact joint distribution over `(x, y, w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteJoint {
    dims: [usize; 3],
    probs: Vec<f64>,
}

impl DiscreteJoint {
    /// `probs` is laid out row-major over `(x, y, w)`.
    pub fn new(dims: [usize; 3], probs: Vec<f64>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::Shape(format!("joint dims {dims:?} must all be >= 1")));
        }
        if probs.len() != dims.iter().product::<usize>() {
            return Err(Error::Shape(format!(
                "joint of dims {dims:?} needs {} entries, got {}",
                dims.iter().product::<usize>(),
                probs.len()
            )));
        }
        check_pmf(&probs)?;
        Ok(Self { dims, probs })
    }

    /// Builds `p(x,y,w) = p(x,y) p(w)`.
    pub fn independent(pxy: &Mat, pw: &[f64]) -> Result<Self> {
        let (nx, ny) = pxy.shape();
        let mut probs = Vec::with_capacity(nx * ny * pw.len());
        for x in 0..nx {
            for y in 0..ny {
                probs.extend(pw.iter().map(|&w| pxy[(x, y)] * w));
            }
        }
        Self::new([nx, ny, pw.len()], probs)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    #[inline]
    pub fn p(&self, x: usize, y: usize, w: usize) -> f64 {
        self.probs[(x * self.dims[1] + y) * self.dims[2] + w]
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.probs.iter().all(|&p| p > 0.0)
    }

    /// `p(x, y)` as an `|X| × |Y|` matrix.
    pub fn marginal_xy(&self) -> Mat {
        let [nx, ny, nw] = self.dims;
        DMatrix::from_fn(nx, ny, |x, y| (0..nw).map(|w| self.p(x, y, w)).sum())
    }

    /// `p(x, w)` as an `|X| × |W|` matrix.
    pub fn marginal_xw(&self) -> Mat {
        let [nx, ny, nw] = self.dims;
        DMatrix::from_fn(nx, nw, |x, w| (0..ny).map(|y| self.p(x, y, w)).sum())
    }

    pub fn marginal_x(&self) -> Vec<f64> {
        row_sums(&self.marginal_xy())
    }

    pub fn marginal_w(&self) -> Vec<f64> {
        col_sums(&self.marginal_xw())
    }
}

/// Classifier `f(y | x, w)`, normalized over `y` for every `(x, w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteClassifier {
    dims: [usize; 3],
    probs: Vec<f64>,
}

impl DiscreteClassifier {
    /// `probs` is laid out row-major over `(x, y, w)`.
    pub fn new(dims: [usize; 3], probs: Vec<f64>) -> Result<Self> {
        if probs.len() != dims.iter().product::<usize>() || dims.contains(&0) {
            return Err(Error::Shape(format!(
                "classifier dims {dims:?} vs {} entries",
                probs.len()
            )));
        }
        let [nx, ny, nw] = dims;
        for x in 0..nx {
            for w in 0..nw {
                let col: Vec<f64> = (0..ny).map(|y| probs[(x * ny + y) * nw + w]).collect();
                check_pmf(&col).map_err(|e| e.context(format!("f(.|x={x}, w={w})")))?;
            }
        }
        Ok(Self { dims, probs })
    }

    /// Uniform over the label axis.
    pub fn uniform(dims: [usize; 3]) -> Self {
        let n = dims.iter().product();
        Self {
            dims,
            probs: vec![1.0 / dims[1] as f64; n],
        }
    }

    /// `f(y|x,w) = p(y|x)` of the given joint, for every `w`.
    pub fn true_conditional(joint: &DiscreteJoint) -> Result<Self> {
        let [nx, ny, nw] = joint.dims;
        let pxy = joint.marginal_xy();
        let px = row_sums(&pxy);
        let mut probs = Vec::with_capacity(nx * ny * nw);
        for x in 0..nx {
            if px[x] <= 0.0 {
                return Err(Error::DegenerateSupport(format!("p(x={x}) = 0")));
            }
            for y in 0..ny {
                probs.extend(std::iter::repeat_n(pxy[(x, y)] / px[x], nw));
            }
        }
        Self::new(joint.dims, probs)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    #[inline]
    pub fn f(&self, x: usize, y: usize, w: usize) -> f64 {
        self.probs[(x * self.dims[1] + y) * self.dims[2] + w]
    }
}

fn check_dims(joint: &DiscreteJoint, f: &DiscreteClassifier) -> Result<()> {
    if joint.dims != f.dims {
        return Err(Error::Shape(format!(
            "joint dims {:?} vs classifier dims {:?}",
            joint.dims, f.dims
        )));
    }
    Ok(())
}

/// `−Σ p(x,y) p(w) ln f(y|x,w)`; note the product `p(x,y)p(w)`, not the joint.
///
/// Returns `f64::INFINITY` if `f` vanishes where `p(x,y)p(w) > 0`.
pub fn expected_cross_entropy(joint: &DiscreteJoint, f: &DiscreteClassifier) -> Result<f64> {
    check_dims(joint, f)?;
    let [nx, ny, _] = joint.dims;
    let pxy = joint.marginal_xy();
    let pw = joint.marginal_w();
    let mut ce = 0.0;
    for x in 0..nx {
        for y in 0..ny {
            for (w, &pw_w) in pw.iter().enumerate() {
                let weight = pxy[(x, y)] * pw_w;
                if weight > 0.0 {
                    let fv = f.f(x, y, w);
                    if fv <= 0.0 {
                        return Ok(f64::INFINITY);
                    }
                    ce -= weight * fv.ln();
                }
            }
        }
    }
    Ok(ce)
}

/// Every term of the cross-entropy test-loss decomposition, each computed
/// directly from its defining sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossDecomposition {
    /// `−Σ p(x,y)p(w) ln f(y|x,w)`
    pub ce: f64,
    /// `−Σ p(x,y)p(w) ln p(y|x,w)`
    pub star: f64,
    /// `−Σ p(x,y)p(w) ln(f(y|x,w) / p(y|x,w))`
    pub dagger: f64,
    /// `L(w; (x,y))`
    pub lautum_w_xy: f64,
    /// `L(w; x)`
    pub lautum_w_x: f64,
    /// `H(y|x)`
    pub cond_entropy: f64,
    /// `Σ_w p(w) KL(p(x,y) ‖ f(y|x,w) p(x|w))`
    pub joint_kl_term: f64,
    /// `Σ_w p(w) Σ_x p(x) KL(p(y|x) ‖ f(y|x,w))`
    pub cond_kl_term: f64,
}

impl LossDecomposition {
    /// `star − (L(w;(x,y)) + H(y|x) − L(w;x))`
    pub fn star_residual(&self) -> f64 {
        self.star - (self.lautum_w_xy + self.cond_entropy - self.lautum_w_x)
    }

    /// `ce − (joint_kl + H(y|x) − L(w;x))`
    pub fn full_residual(&self) -> f64 {
        self.ce - (self.joint_kl_term + self.cond_entropy - self.lautum_w_x)
    }

    /// `ce − (star + dagger)`
    pub fn split_residual(&self) -> f64 {
        self.ce - (self.star + self.dagger)
    }

    /// `ce − (cond_kl + H(y|x) − L(w;x))`. Zero only when `x ⟂ w`; reported,
    /// never asserted.
    pub fn conditional_kl_residual(&self) -> f64 {
        self.ce - (self.cond_kl_term + self.cond_entropy - self.lautum_w_x)
    }
}

/// Computes all decomposition terms on a strictly positive joint.
pub fn decompose_test_loss(joint: &DiscreteJoint, f: &DiscreteClassifier) -> Result<LossDecomposition> {
    check_dims(joint, f)?;
    if !joint.is_strictly_positive() {
        return Err(Error::DegenerateSupport(
            "decomposition needs a strictly positive joint; smooth it first".into(),
        ));
    }
    if f.probs.iter().any(|&v| v <= 0.0) {
        return Err(Error::DegenerateSupport("classifier has zero entries".into()));
    }
    let [nx, ny, nw] = joint.dims;
    let pxy = joint.marginal_xy();
    let pxw = joint.marginal_xw();
    let px = row_sums(&pxy);
    let pw = col_sums(&pxw);

    let mut ce = 0.0;
    let mut star = 0.0;
    let mut dagger = 0.0;
    let mut lautum_w_xy = 0.0;
    let mut joint_kl_term = 0.0;
    let mut cond_kl_term = 0.0;
    for x in 0..nx {
        for y in 0..ny {
            let p_y_given_x = pxy[(x, y)] / px[x];
            for (w, &pw_w) in pw.iter().enumerate() {
                let weight = pxy[(x, y)] * pw_w;
                let pxyw = joint.p(x, y, w);
                let p_y_given_xw = pxyw / pxw[(x, w)];
                let p_x_given_w = pxw[(x, w)] / pw[w];
                let fv = f.f(x, y, w);
                ce -= weight * fv.ln();
                star -= weight * p_y_given_xw.ln();
                dagger -= weight * (fv / p_y_given_xw).ln();
                lautum_w_xy += weight * (weight / pxyw).ln();
                joint_kl_term += weight * (pxy[(x, y)] / (fv * p_x_given_w)).ln();
                cond_kl_term += weight * (p_y_given_x / fv).ln();
            }
        }
    }

    let mut lautum_w_x = 0.0;
    for x in 0..nx {
        for w in 0..nw {
            let q = px[x] * pw[w];
            lautum_w_x += q * (q / pxw[(x, w)]).ln();
        }
    }

    let cond_entropy = entropy_unchecked(pxy.iter().copied()) - entropy_unchecked(px.iter().copied());

    Ok(LossDecomposition {
        ce,
        star,
        dagger,
        lautum_w_xy,
        lautum_w_x,
        cond_entropy,
        joint_kl_term,
        cond_kl_term,
    })
}

/// Covariance blocks of a zero-mean jointly Gaussian pair `(x, w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBlocks {
    sigma_x: Mat,
    sigma_w: Mat,
    sigma_xw: Mat,
}

impl GaussianBlocks {
    /// Validates symmetry and definiteness of the diagonal blocks and
    /// semidefiniteness of the full block matrix.
    pub fn new(sigma_x: Mat, sigma_w: Mat, sigma_xw: Mat) -> Result<Self> {
        let (d, k) = (sigma_x.nrows(), sigma_w.nrows());
        if !sigma_x.is_square() || !sigma_w.is_square() || sigma_xw.shape() != (d, k) {
            return Err(Error::Shape(format!(
                "blocks {:?}, {:?}, {:?} are inconsistent",
                sigma_x.shape(),
                sigma_w.shape(),
                sigma_xw.shape()
            )));
        }
        for (m, name) in [(&sigma_x, "sigma_x"), (&sigma_w, "sigma_w")] {
            if !linalg::all_finite(m) || !linalg::is_symmetric(m, 1e-10) {
                return Err(Error::Shape(format!("{name} is not finite and symmetric")));
            }
            if !linalg::is_positive_definite(m) {
                return Err(Error::Singular(format!("{name} is not positive definite")));
            }
        }
        let blocks = Self {
            sigma_x,
            sigma_w,
            sigma_xw,
        };
        let full = blocks.full();
        let scale = full.diagonal().amax().max(1.0);
        let min_eig = linalg::min_eigenvalue(&full);
        if min_eig < -1e-10 * scale {
            return Err(Error::Domain {
                message: format!("full covariance has negative eigenvalue {min_eig:e}"),
                diagnostics: Diagnostics::default(),
            });
        }
        Ok(blocks)
    }

    pub fn sigma_x(&self) -> &Mat {
        &self.sigma_x
    }

    pub fn sigma_w(&self) -> &Mat {
        &self.sigma_w
    }

    pub fn sigma_xw(&self) -> &Mat {
        &self.sigma_xw
    }

    /// `[[Σx, Σxw], [Σwx, Σw]]`
    pub fn full(&self) -> Mat {
        let (d, k) = (self.sigma_x.nrows(), self.sigma_w.nrows());
        let mut full = Mat::zeros(d + k, d + k);
        full.view_mut((0, 0), (d, d)).copy_from(&self.sigma_x);
        full.view_mut((d, d), (k, k)).copy_from(&self.sigma_w);
        full.view_mut((0, d), (d, k)).copy_from(&self.sigma_xw);
        full.view_mut((d, 0), (k, d)).copy_from(&self.sigma_xw.transpose());
        full
    }

    /// `blockdiag(Σx, Σw)`
    pub fn product_of_marginals(&self) -> Mat {
        let mut m = self.full();
        let d = self.sigma_x.nrows();
        let k = self.sigma_w.nrows();
        m.view_mut((0, d), (d, k)).fill(0.0);
        m.view_mut((d, 0), (k, d)).fill(0.0);
        m
    }

    /// Exchanges the roles of `x` and `w`.
    pub fn swapped(&self) -> Self {
        Self {
            sigma_x: self.sigma_w.clone(),
            sigma_w: self.sigma_x.clone(),
            sigma_xw: self.sigma_xw.transpose(),
        }
    }

    /// `I − Σx⁻¹ Σxw Σw⁻¹ Σwx`
    pub fn coupling_matrix(&self) -> Result<Mat> {
        let px = linalg::spd_inverse(&self.sigma_x, "sigma_x")?;
        let qw = linalg::spd_inverse(&self.sigma_w, "sigma_w")?;
        let d = self.sigma_x.nrows();
        Ok(Mat::identity(d, d) - px * &self.sigma_xw * qw * self.sigma_xw.transpose())
    }
}

fn positive_det(m: &Mat) -> Result<f64> {
    let det = m.determinant();
    if !(det > 0.0) || !det.is_finite() {
        return Err(Error::Domain {
            message: format!("det(I − Σx⁻¹ΣxwΣw⁻¹Σwx) = {det:e} is not positive"),
            diagnostics: Diagnostics {
                det_m: det,
                ..Diagnostics::default()
            },
        });
    }
    Ok(det)
}

/// `ln det(M) + 2 tr(M⁻¹ − I)` with `M = I − Σx⁻¹ΣxwΣw⁻¹Σwx`.
///
/// This is the form used as the training regularizer. It equals exactly twice
/// [`gaussian_lautum_kl`].
pub fn gaussian_lautum_regularizer(blocks: &GaussianBlocks) -> Result<f64> {
    let m = blocks.coupling_matrix()?;
    let det = positive_det(&m)?;
    let m_inv = linalg::inverse(&m, "I − Σx⁻¹ΣxwΣw⁻¹Σwx")?;
    let d = m.nrows() as f64;
    Ok(det.ln() + 2.0 * (m_inv.trace() - d))
}

/// `KL(N(0, blockdiag(Σx, Σw)) ‖ N(0, Σfull))` by the closed-form Gaussian KL.
pub fn gaussian_lautum_kl(blocks: &GaussianBlocks) -> Result<f64> {
    let full = blocks.full();
    let prod = blocks.product_of_marginals();
    let chol = full.clone().cholesky().ok_or_else(|| Error::Domain {
        message: "full block covariance is not positive definite".into(),
        diagnostics: Diagnostics::default(),
    })?;
    let n = full.nrows() as f64;
    let log_det_full = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let log_det_prod =
        linalg::spd_log_det(&blocks.sigma_x, "sigma_x")? + linalg::spd_log_det(&blocks.sigma_w, "sigma_w")?;
    let trace_term = chol.solve(&prod).trace();
    Ok((0.5 * (trace_term - n + log_det_full - log_det_prod)).max(0.0))
}

/// `−½ ln det(I − Σx⁻¹ΣxwΣw⁻¹Σwx)`
pub fn gaussian_mutual_info(blocks: &GaussianBlocks) -> Result<f64> {
    let m = blocks.coupling_matrix()?;
    let det = positive_det(&m)?;
    Ok((-0.5 * det.ln()).max(0.0))
}
