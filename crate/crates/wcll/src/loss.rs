//! The weighted complementary loss and its empirical risk.
//!
//! For a sample whose complementary label is `z`, the weighted loss is
//!
//! ```text
//! -(K-1) * omega_z * l(f(x), z) + sum_j omega_j * l(f(x), j)
//! ```
//!
//! with `l` fixed to softmax cross-entropy. The empirical risk averages
//! `pi_z` times that expression over the batch (`WcllEq12`); the `WcllAlg1`
//! variant instead carries `pi_j` inside the inner sum, matching the
//! training-algorithm statement of the same risk, and `Uniform` pins both
//! vectors to `1/K`. The leading negative term can drive the whole risk
//! below zero; that is a property of the estimator, not a bug, and the
//! optional `nonneg_correction` clamp exists to study exactly that.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{log_softmax_into, Matrix};
use crate::weighting::ClassWeighting;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("weighting has K={weighting_k} but logits have K={logits_k}")]
    KMismatch { weighting_k: usize, logits_k: usize },
    #[error("batch has {labels} labels but {rows} logit rows")]
    BatchMismatch { labels: usize, rows: usize },
    #[error("batch is empty")]
    EmptyBatch,
    #[error("complementary label {label} at row {row} out of range for K={k}")]
    LabelOutOfRange { row: usize, label: usize, k: usize },
}

/// Which empirical-risk form to optimize.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossVariant {
    /// Canonical form: `pi_z` multiplies the whole bracket. The default.
    WcllEq12,
    /// Algorithm statement: `pi_j` multiplies each inner term instead.
    /// Coincides with `WcllEq12` whenever `pi` is uniform.
    WcllAlg1,
    /// `pi = omega = 1/K`: the unweighted complementary-risk baseline.
    Uniform,
}

impl LossVariant {
    pub fn label(&self) -> &'static str {
        match self {
            LossVariant::WcllEq12 => "wcll-eq12",
            LossVariant::WcllAlg1 => "wcll-alg1",
            LossVariant::Uniform => "uniform",
        }
    }
}

/// Base loss applied per class; fixed to softmax cross-entropy, kept as an
/// enum so bounded alternatives can slot in later.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaseLoss {
    #[default]
    SoftmaxCrossEntropy,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossConfig {
    variant: LossVariant,
    weighting: ClassWeighting,
    nonneg_correction: bool,
    base_loss: BaseLoss,
}

impl LossConfig {
    /// The `Uniform` variant discards the supplied weighting and forces
    /// `pi = omega = 1/K`.
    pub fn new(variant: LossVariant, weighting: ClassWeighting, nonneg_correction: bool) -> Self {
        let weighting = match variant {
            LossVariant::Uniform => ClassWeighting::uniform(weighting.k()),
            _ => weighting,
        };
        LossConfig {
            variant,
            weighting,
            nonneg_correction,
            base_loss: BaseLoss::SoftmaxCrossEntropy,
        }
    }

    pub fn variant(&self) -> LossVariant {
        self.variant
    }

    pub fn weighting(&self) -> &ClassWeighting {
        &self.weighting
    }

    pub fn nonneg_correction(&self) -> bool {
        self.nonneg_correction
    }

    pub fn k(&self) -> usize {
        self.weighting.k()
    }
}

/// Softmax cross-entropy of class `j`: `-log_softmax(logits)[j]`.
/// Nonnegative; strictly decreasing in `logits[j]`.
pub fn base_loss(logits: &[f64], j: usize) -> f64 {
    assert!(j < logits.len(), "class {j} out of range");
    let mut scratch = vec![0.0; logits.len()];
    log_softmax_into(logits, &mut scratch);
    -scratch[j]
}

/// The weighted complementary loss of one sample (no `pi` factor).
/// May be negative.
pub fn wcll_sample_loss(logits: &[f64], comp_label: usize, weighting: &ClassWeighting) -> f64 {
    let k = logits.len();
    assert_eq!(weighting.k(), k, "weighting K mismatch");
    assert!(comp_label < k, "complementary label out of range");
    let mut ls = vec![0.0; k];
    log_softmax_into(logits, &mut ls);
    let omega = weighting.omega();
    let mut total = 0.0;
    for j in 0..k {
        total += omega[j] * (-ls[j]);
    }
    total - (k as f64 - 1.0) * omega[comp_label] * (-ls[comp_label])
}

/// Per-class coefficients of the per-sample risk, so that
/// `risk_sample = sum_j coeff[j] * l(f(x), j)`.
fn sample_coefficients(
    variant: LossVariant,
    weighting: &ClassWeighting,
    z: usize,
    coeff: &mut [f64],
) {
    let k = coeff.len();
    let pi = weighting.pi();
    let omega = weighting.omega();
    match variant {
        // Uniform shares the Eq-12 path: its weighting is already 1/K.
        LossVariant::WcllEq12 | LossVariant::Uniform => {
            let pz = pi[z];
            for j in 0..k {
                coeff[j] = pz * omega[j];
            }
            coeff[z] -= (k as f64 - 1.0) * pi[z] * omega[z];
        }
        LossVariant::WcllAlg1 => {
            for j in 0..k {
                coeff[j] = pi[j] * omega[j];
            }
            coeff[z] -= (k as f64 - 1.0) * pi[z] * omega[z];
        }
    }
}

fn validate(logits: &Matrix, comp_labels: &[usize], config: &LossConfig) -> Result<(), LossError> {
    if config.weighting.k() != logits.cols() {
        return Err(LossError::KMismatch {
            weighting_k: config.weighting.k(),
            logits_k: logits.cols(),
        });
    }
    if comp_labels.len() != logits.rows() {
        return Err(LossError::BatchMismatch {
            labels: comp_labels.len(),
            rows: logits.rows(),
        });
    }
    if comp_labels.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    let k = logits.cols();
    for (row, &label) in comp_labels.iter().enumerate() {
        if label >= k {
            return Err(LossError::LabelOutOfRange { row, label, k });
        }
    }
    Ok(())
}

/// Mean per-sample weighted complementary risk of a batch.
pub fn empirical_risk(
    logits: &Matrix,
    comp_labels: &[usize],
    config: &LossConfig,
) -> Result<f64, LossError> {
    risk_and_gradient_impl(logits, comp_labels, config, false).map(|(risk, _)| risk)
}

/// Analytic gradient of [`empirical_risk`] with respect to the logits,
/// shaped like `logits`. With the clamp active and a strictly negative
/// uncorrected risk, the gradient is identically zero.
pub fn risk_gradient(
    logits: &Matrix,
    comp_labels: &[usize],
    config: &LossConfig,
) -> Result<Matrix, LossError> {
    risk_and_gradient_impl(logits, comp_labels, config, true)
        .map(|(_, grad)| grad.expect("gradient requested"))
}

/// Risk and gradient in one pass over the batch; the training loop's entry
/// point.
pub fn risk_and_gradient(
    logits: &Matrix,
    comp_labels: &[usize],
    config: &LossConfig,
) -> Result<(f64, Matrix), LossError> {
    risk_and_gradient_impl(logits, comp_labels, config, true)
        .map(|(risk, grad)| (risk, grad.expect("gradient requested")))
}

fn risk_and_gradient_impl(
    logits: &Matrix,
    comp_labels: &[usize],
    config: &LossConfig,
    with_grad: bool,
) -> Result<(f64, Option<Matrix>), LossError> {
    validate(logits, comp_labels, config)?;
    let n = logits.rows();
    let k = logits.cols();
    let inv_n = 1.0 / n as f64;

    let mut grad = with_grad.then(|| Matrix::zeros(n, k));
    let mut log_probs = vec![0.0; k];
    let mut coeff = vec![0.0; k];
    let mut risk = 0.0;
    for i in 0..n {
        let row = logits.row(i);
        log_softmax_into(row, &mut log_probs);
        sample_coefficients(config.variant, &config.weighting, comp_labels[i], &mut coeff);

        let mut sample_risk = 0.0;
        let mut coeff_total = 0.0;
        for j in 0..k {
            sample_risk += coeff[j] * (-log_probs[j]);
            coeff_total += coeff[j];
        }
        risk += sample_risk;

        if let Some(grad) = grad.as_mut() {
            // d l(f,j) / d logits = softmax - onehot(j), so the row gradient
            // collapses to (sum_j c_j) * softmax - c.
            let out = grad.row_mut(i);
            for j in 0..k {
                out[j] = (coeff_total * log_probs[j].exp() - coeff[j]) * inv_n;
            }
        }
    }
    risk *= inv_n;

    if config.nonneg_correction && risk < 0.0 {
        risk = 0.0;
        if let Some(grad) = grad.as_mut() {
            grad.data_mut().fill(0.0);
        }
    }
    Ok((risk, grad))
}
