//! Gaussian Lautum regularizer on streamed covariance state.
//!
//! The network's logits on a target batch stand in for its weights. After the
//! accumulator absorbs the batch, the term
//!
//! ```text
//! L = ln det(M) + 2 tr(M⁻¹ − I),   M = I − Σx⁻¹ Σxw Σw⁻¹ Σwx
//! ```
//!
//! is evaluated in its equivalent `K × K` form
//! `N = I − Σw⁻¹ Σwx Σx⁻¹ Σxw` (same nonzero spectrum, so the same `ln det`
//! and the same `tr(· ⁻¹ − I)`), which keeps the cost independent of the input
//! dimension.
//!
//! Gradients treat `Σx` and the EMA history as constants: only the current
//! batch's contribution `(1−α)·Σ_batch` is differentiated.

use std::fmt;

use log::warn;

use crate::cov_stream::{BatchPair, CovarianceAccumulator};
use crate::linalg::{self, Mat};
use crate::nn_core::{self, NetworkParams, Tensor};
use crate::{Error, Result};

/// Numerical health of one evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diagnostics {
    /// Smallest eigenvalue of the (unjittered) EMA `Σw`.
    pub min_eig_sigma_w: f64,
    /// `det(M)`; must be positive.
    pub det_m: f64,
    /// Condition number of the jittered `Σw`.
    pub cond_sigma_w: f64,
    /// Ratio of extreme singular values of `M` (in its `K × K` form).
    pub cond_m: f64,
}

impl Default for Diagnostics {
    fn default() -> Self {
        Self {
            min_eig_sigma_w: f64::NAN,
            det_m: f64::NAN,
            cond_sigma_w: f64::NAN,
            cond_m: f64::NAN,
        }
    }
}

impl fmt::Display for Diagnostics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "min_eig(Σw)={:e}, det(M)={:e}, cond(Σw)={:e}, cond(M)={:e}",
            self.min_eig_sigma_w, self.det_m, self.cond_sigma_w, self.cond_m
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LautumRegConfig {
    pub lambda: f64,
    pub alpha: f64,
    pub jitter: f64,
    pub batch_size: usize,
}

impl Default for LautumRegConfig {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            alpha: 0.999,
            jitter: 1e-4,
            batch_size: 50,
        }
    }
}

impl LautumRegConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!(
                "lambda must be a finite value >= 0, got {}",
                self.lambda
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.jitter > 0.0) {
            return Err(Error::Config(format!("jitter must be positive, got {}", self.jitter)));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch_size must be >= 2, got {}",
                self.batch_size
            )));
        }
        Ok(())
    }
}

/// The Lautum term on the current state and its gradient w.r.t. the logits.
#[derive(Debug, Clone, PartialEq)]
pub struct LautumTermResult {
    pub value: f64,
    /// `∂L/∂logits`, `K × B`.
    pub grad_logits: Mat,
    pub diagnostics: Diagnostics,
}

struct Evaluation {
    value: f64,
    /// `Σx⁻¹`
    p: Mat,
    /// `(Σw + εI)⁻¹`
    q: Mat,
    /// `N⁻¹ − 2 N⁻²`
    g: Mat,
    diagnostics: Diagnostics,
}

fn evaluate(acc: &CovarianceAccumulator) -> Result<Evaluation> {
    let p = acc.sigma_x_inv().clone();
    let sigma_w = acc.jittered_sigma_w();
    let mut diagnostics = Diagnostics {
        min_eig_sigma_w: linalg::min_eigenvalue(acc.sigma_w()),
        cond_sigma_w: linalg::condition_number_sym(&sigma_w),
        ..Diagnostics::default()
    };
    let q = linalg::spd_inverse(&sigma_w, "jittered sigma_w").map_err(|_| Error::Domain {
        message: "jittered Σw is not positive definite".into(),
        diagnostics,
    })?;
    let c = acc.sigma_xw();
    let k = q.nrows();
    let n = Mat::identity(k, k) - &q * c.transpose() * &p * c;
    let det = n.determinant();
    diagnostics.det_m = det;
    let sv = n.singular_values();
    diagnostics.cond_m = sv.max() / sv.min();
    if !(det > 0.0) || !det.is_finite() {
        return Err(Error::Domain {
            message: format!("det(M) = {det:e} is not positive; check alpha and jitter"),
            diagnostics,
        });
    }
    let n_inv = n.try_inverse().ok_or_else(|| Error::Domain {
        message: "M is singular".into(),
        diagnostics,
    })?;
    let value = det.ln() + 2.0 * (n_inv.trace() - k as f64);
    let g = &n_inv - &n_inv * &n_inv * 2.0;
    Ok(Evaluation {
        value,
        p,
        q,
        g,
        diagnostics,
    })
}

/// The Lautum term on the accumulator's current state, with `Σw` jittered.
pub fn lautum_value(acc: &CovarianceAccumulator) -> Result<f64> {
    if acc.iteration() == 0 {
        return Err(Error::Contract("accumulator has not absorbed any batch yet".into()));
    }
    Ok(evaluate(acc)?.value)
}

/// Updates `acc` with `batch`, then evaluates the term and its logit gradient.
///
/// The accumulator is updated even when the evaluation fails.
pub fn lautum_step(acc: &mut CovarianceAccumulator, batch: &BatchPair) -> Result<LautumTermResult> {
    acc.ema_update(batch)?;
    let eval = evaluate(acc)?;
    let c = acc.sigma_xw();
    let Evaluation {
        value,
        p,
        q,
        g,
        diagnostics,
    } = eval;

    // dL/dΣw and dL/dΣxw on the updated state.
    let pc = &p * c;
    let d_sigma_w = (&q * c.transpose() * &pc * &g * &q).transpose();
    let d_sigma_xw = -(&pc * &g * &q + &pc * &q * g.transpose());

    let w = batch.logits();
    let b = w.ncols() as f64;
    let wc = centered(w);
    let xc = centered(batch.inputs());
    let scale = (1.0 - acc.alpha()) / b;
    let mut grad = ((&d_sigma_w + d_sigma_w.transpose()) * &wc + d_sigma_xw.transpose() * &xc) * scale;
    // Chain rule through mean subtraction.
    let mean = grad.column_mean();
    for mut col in grad.column_iter_mut() {
        col -= &mean;
    }
    Ok(LautumTermResult {
        value,
        grad_logits: grad,
        diagnostics,
    })
}

/// Pure form of [`lautum_step`]: evaluates on a copy of `acc_before`.
pub fn lautum_grad_logits(
    batch: &BatchPair,
    acc_before: &CovarianceAccumulator,
    cfg: &LautumRegConfig,
) -> Result<LautumTermResult> {
    cfg.validate()?;
    if batch.batch_size() != cfg.batch_size {
        return Err(Error::BatchSize(format!(
            "configured batch size {}, got {}",
            cfg.batch_size,
            batch.batch_size()
        )));
    }
    let mut acc = acc_before.clone();
    lautum_step(&mut acc, batch)
}

fn centered(m: &Mat) -> Mat {
    let mean = m.column_mean();
    let mut c = m.clone();
    for mut col in c.column_iter_mut() {
        col -= &mean;
    }
    c
}

/// Result of one pre-transfer loss evaluation.
#[derive(Debug, Clone)]
pub struct PretrainOutput {
    /// `CE − λ L`, or `CE` when the regularizer was skipped.
    pub loss: f64,
    pub ce: f64,
    /// `None` when the Lautum evaluation hit a domain error this iteration.
    pub lautum: Option<LautumTermResult>,
    pub grads: Vec<Tensor>,
}

/// `CE(source batch) − λ L(target batch)` and its parameter gradients.
///
/// `acc` absorbs the target batch exactly once, before `L` is evaluated. A
/// domain error in `L` drops the regularizer for this call and logs a warning.
pub fn pretrain_loss(
    source_inputs: &Mat,
    source_labels: &Mat,
    target_inputs: &Mat,
    params: &NetworkParams,
    acc: &mut CovarianceAccumulator,
    cfg: &LautumRegConfig,
) -> Result<PretrainOutput> {
    cfg.validate()?;
    for (name, m) in [("source", source_inputs), ("target", target_inputs)] {
        if m.ncols() != cfg.batch_size {
            return Err(Error::Contract(format!(
                "{name} batch has {} samples, configured batch size is {}",
                m.ncols(),
                cfg.batch_size
            )));
        }
    }
    let (source_logits, source_cache) = params.forward(source_inputs)?;
    let (ce, d_source) = nn_core::softmax_ce_loss(&source_logits, source_labels)?;
    let mut grads = params.backward(&source_cache, &d_source)?;

    let (target_logits, target_cache) = params.forward(target_inputs)?;
    let batch = BatchPair::new(target_inputs.clone(), target_logits)?;
    let lautum = match lautum_step(acc, &batch) {
        Ok(r) => Some(r),
        Err(Error::Domain { message, diagnostics }) => {
            warn!(
                "skipping Lautum term at iteration {}: {message} ({diagnostics})",
                acc.iteration()
            );
            None
        }
        Err(e) => return Err(e),
    };

    let mut loss = ce;
    if let Some(r) = &lautum {
        if cfg.lambda > 0.0 {
            loss = ce - cfg.lambda * r.value;
            let target_grads = params.backward(&target_cache, &(&r.grad_logits * -cfg.lambda))?;
            for (g, t) in grads.iter_mut().zip(&target_grads) {
                g.add_scaled(t, 1.0)?;
            }
        }
    }
    Ok(PretrainOutput {
        loss,
        ce,
        lautum,
        grads,
    })
}
