//! Mini-batch training: reshuffle each epoch, optimize the selected risk
//! variant, evaluate on the held-out test set every `eval_every` epochs.
//!
//! The whole loop is a pure function of `(datasets, config)`: parameter
//! init and every epoch's shuffle draw from fixed streams of the config
//! seed, optimizer state is single-owner, and batch reductions run in a
//! fixed order.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datasets::{ComplementaryDataset, LabeledDataset};
use crate::harness::{self, EvalError};
use crate::loss::{self, LossConfig, LossError};
use crate::model::{self, Architecture, ModelError, ModelParams, ParamGrads};
use crate::numerics::SeededRng;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("train set has K={train_k} but loss weighting has K={loss_k}")]
    KMismatch { train_k: usize, loss_k: usize },
    #[error("architecture expects d={arch_d}, K={arch_k}; data has d={data_d}, K={data_k}")]
    ArchMismatch {
        arch_d: usize,
        arch_k: usize,
        data_d: usize,
        data_k: usize,
    },
    #[error("non-finite risk at epoch {epoch}, batch {batch}: the run diverged")]
    NonFiniteRisk { epoch: usize, batch: usize },
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Stream ids carved out of the run seed. Dataset construction uses the
/// harness's own ids; these cover the training loop proper.
mod streams {
    pub const PARAM_INIT: u64 = 0x10;
    const SHUFFLE_BASE: u64 = 1 << 32;

    pub fn shuffle(epoch: usize) -> u64 {
        SHUFFLE_BASE + epoch as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Optimizer {
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    },
    Sgd {
        lr: f64,
    },
}

impl Optimizer {
    /// Adam with the community-default moment constants.
    pub fn adam(lr: f64) -> Self {
        Optimizer::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            Optimizer::Adam { lr, .. } | Optimizer::Sgd { lr } => lr,
        }
    }

    pub fn with_lr(mut self, new_lr: f64) -> Self {
        match &mut self {
            Optimizer::Adam { lr, .. } | Optimizer::Sgd { lr } => *lr = new_lr,
        }
        self
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub weight_decay: f64,
    pub seed: u64,
    pub loss: LossConfig,
    /// Evaluate on the test set every this many epochs (the final epoch is
    /// always evaluated).
    pub eval_every: usize,
}

impl TrainConfig {
    fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !(self.optimizer.lr() > 0.0) {
            return Err(TrainError::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.optimizer.lr()
            )));
        }
        if self.weight_decay < 0.0 {
            return Err(TrainError::InvalidConfig(format!(
                "weight decay must be nonnegative, got {}",
                self.weight_decay
            )));
        }
        if self.eval_every == 0 {
            return Err(TrainError::InvalidConfig("eval_every must be >= 1".into()));
        }
        Ok(())
    }
}

/// One evaluation point of a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalPoint {
    pub epoch: usize,
    pub train_risk: f64,
    pub test_total_accuracy: f64,
    pub test_per_class_accuracy: Vec<f64>,
}

/// Trained parameters plus the evaluation history.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub params: ModelParams,
    pub history: Vec<EvalPoint>,
    pub wall_time_secs: f64,
    pub config: TrainConfig,
}

impl RunResult {
    pub fn final_point(&self) -> &EvalPoint {
        self.history
            .last()
            .expect("at least the final epoch is evaluated")
    }

    /// Serializable view (parameters live in the checkpoint file instead).
    pub fn report(&self) -> RunReport<'_> {
        RunReport {
            history: &self.history,
            wall_time_secs: self.wall_time_secs,
            config: &self.config,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct RunReport<'a> {
    pub history: &'a [EvalPoint],
    pub wall_time_secs: f64,
    pub config: &'a TrainConfig,
}

/// First/second moment accumulators, one pair per parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let shapes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
        AdamState {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }
}

/// One Adam update with decoupled weight decay: parameters first shrink by
/// `lr * weight_decay`, then take the bias-corrected moment step.
#[allow(clippy::too_many_arguments)]
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ParamGrads,
    state: &mut AdamState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    weight_decay: f64,
) {
    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - beta1.powi(t);
    let bias2 = 1.0 - beta2.powi(t);
    for ((tensor, grad), (m, v)) in params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for i in 0..tensor.len() {
            tensor[i] -= lr * weight_decay * tensor[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
            let m_hat = m[i] / bias1;
            let v_hat = v[i] / bias2;
            tensor[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
}

/// Plain SGD with the same decoupled decay convention.
pub fn sgd_step(params: &mut ModelParams, grads: &ParamGrads, lr: f64, weight_decay: f64) {
    for (tensor, grad) in params.tensors_mut().into_iter().zip(grads.tensors()) {
        for i in 0..tensor.len() {
            tensor[i] -= lr * weight_decay * tensor[i];
            tensor[i] -= lr * grad[i];
        }
    }
}

/// Deterministic epoch visitation order.
pub(crate) fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    SeededRng::new(seed, streams::shuffle(epoch)).shuffle(&mut order);
    order
}

/// Train a fresh model on the complementary training set.
pub fn train(
    train_set: &ComplementaryDataset,
    test_set: &LabeledDataset,
    arch: Architecture,
    config: &TrainConfig,
) -> Result<RunResult, TrainError> {
    config.validate()?;
    if config.loss.k() != train_set.k() {
        return Err(TrainError::KMismatch {
            train_k: train_set.k(),
            loss_k: config.loss.k(),
        });
    }
    if arch.input_dim() != train_set.dim() || arch.num_classes() != train_set.k() {
        return Err(TrainError::ArchMismatch {
            arch_d: arch.input_dim(),
            arch_k: arch.num_classes(),
            data_d: train_set.dim(),
            data_k: train_set.k(),
        });
    }
    if train_set.is_empty() {
        return Err(TrainError::InvalidConfig("training set is empty".into()));
    }
    warn_if_test_imbalanced(test_set);

    let started = Instant::now();
    let mut params = model::init_params(
        arch,
        &mut SeededRng::new(config.seed, streams::PARAM_INIT),
    );
    let mut adam_state = AdamState::new(&params);

    let n = train_set.len();
    let mut history = Vec::new();
    for epoch in 1..=config.epochs {
        let order = epoch_order(n, config.seed, epoch);
        let mut risk_weighted_sum = 0.0;
        for (batch_idx, batch) in order.chunks(config.batch_size).enumerate() {
            let features = train_set.features().gather_rows(batch);
            let labels: Vec<usize> =
                batch.iter().map(|&i| train_set.comp_labels()[i]).collect();

            let logits = model::forward(&params, &features)?;
            let (risk, logit_grad) = loss::risk_and_gradient(&logits, &labels, &config.loss)?;
            if !risk.is_finite() {
                return Err(TrainError::NonFiniteRisk {
                    epoch,
                    batch: batch_idx,
                });
            }
            risk_weighted_sum += risk * batch.len() as f64;

            let grads = model::backward(&params, &features, &logit_grad)?;
            match config.optimizer {
                Optimizer::Adam {
                    lr,
                    beta1,
                    beta2,
                    epsilon,
                } => adam_step(
                    &mut params,
                    &grads,
                    &mut adam_state,
                    lr,
                    beta1,
                    beta2,
                    epsilon,
                    config.weight_decay,
                ),
                Optimizer::Sgd { lr } => sgd_step(&mut params, &grads, lr, config.weight_decay),
            }
        }
        let train_risk = risk_weighted_sum / n as f64;

        if epoch % config.eval_every == 0 || epoch == config.epochs {
            let metrics = harness::evaluate(&params, test_set)?;
            history.push(EvalPoint {
                epoch,
                train_risk,
                test_total_accuracy: metrics.total_accuracy,
                test_per_class_accuracy: metrics.per_class_accuracy,
            });
        }
    }

    Ok(RunResult {
        params,
        history,
        wall_time_secs: started.elapsed().as_secs_f64(),
        config: config.clone(),
    })
}

fn warn_if_test_imbalanced(test_set: &LabeledDataset) {
    let counts = test_set.class_counts();
    let max = counts.iter().cloned().max().unwrap_or(0);
    let min = counts.iter().cloned().min().unwrap_or(0);
    if min == 0 || max as f64 > 1.5 * min as f64 {
        log::warn!(
            "test set '{}' is not class-balanced (class counts {:?}); \
             accuracies remain exact but differ from the balanced protocol",
            test_set.name(),
            counts
        );
    }
}
