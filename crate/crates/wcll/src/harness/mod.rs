//! Experiment orchestration: metric computation, multi-trial learning-rate
//! sweeps, and deterministic CSV/JSON reporting. The CLI drives everything
//! through this module.

pub mod config;

pub use config::ExperimentConfig;

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::datasets::{
    self, AlphaVector, ComplementaryDataset, DataError, ImbalanceSpec, LabeledDataset,
};
use crate::loss::{LossConfig, LossVariant};
use crate::model::{self, ModelError, ModelParams};
use crate::numerics::SeededRng;
use crate::training::{self, RunResult, TrainConfig, TrainError};
use crate::weighting::{self, ClassWeighting, WeightingError};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Errors from test-set evaluation; kept small because the training loop
/// embeds it.
#[derive(Debug, Error)]
pub enum EvalError {
    #[error("test set is empty")]
    EmptyTestSet,
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Train(Box<TrainError>),
    #[error(transparent)]
    Weighting(#[from] WeightingError),
    #[error("config: {0}")]
    Config(String),
    #[error("failed writing {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl From<TrainError> for HarnessError {
    fn from(e: TrainError) -> Self {
        HarnessError::Train(Box::new(e))
    }
}

/// Accuracy summary of one parameter set against a labeled test set.
#[derive(Debug, Clone)]
pub struct EvalMetrics {
    pub total_accuracy: f64,
    /// Diagonal over row sum of the confusion matrix; 0 for absent classes.
    pub per_class_accuracy: Vec<f64>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

/// Argmax prediction (ties to the lowest class index) and exact counting
/// metrics.
pub fn evaluate(params: &ModelParams, test_set: &LabeledDataset) -> Result<EvalMetrics, EvalError> {
    if test_set.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    let k = test_set.k();
    let logits = model::forward(params, test_set.features())?;
    let mut confusion = vec![vec![0usize; k]; k];
    for (i, &truth) in test_set.labels().iter().enumerate() {
        let row = logits.row(i);
        let mut best = 0;
        for (j, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = j;
            }
        }
        confusion[truth][best] += 1;
    }
    let mut correct = 0usize;
    let mut per_class = vec![0.0; k];
    for c in 0..k {
        let row_sum: usize = confusion[c].iter().sum();
        correct += confusion[c][c];
        per_class[c] = if row_sum > 0 {
            confusion[c][c] as f64 / row_sum as f64
        } else {
            0.0
        };
    }
    Ok(EvalMetrics {
        total_accuracy: correct as f64 / test_set.len() as f64,
        per_class_accuracy: per_class,
        confusion,
    })
}

/// One evaluation point of one run, as reported in `metrics.csv`.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsRow {
    pub trial: usize,
    pub epoch: usize,
    pub lr: f64,
    pub variant: String,
    pub total_accuracy: f64,
    pub per_class_accuracy: Vec<f64>,
    /// Mean per-class accuracy over the minority set.
    pub minority_accuracy: f64,
    pub train_risk: f64,
}

/// Final-epoch statistics of one learning rate over all trials.
#[derive(Debug, Clone, Serialize)]
pub struct LrSummary {
    pub lr: f64,
    pub mean_total_accuracy: f64,
    pub std_total_accuracy: f64,
    pub mean_minority_accuracy: f64,
    pub std_minority_accuracy: f64,
    pub final_total_accuracies: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentSummary {
    pub variant: String,
    pub trials: usize,
    pub alpha: Vec<usize>,
    pub pi: Vec<f64>,
    pub omega: Vec<f64>,
    pub per_lr: Vec<LrSummary>,
    /// The sweep winner: highest mean total accuracy, ties to the smaller
    /// learning rate.
    pub best: LrSummary,
}

#[derive(Debug)]
pub struct ExperimentOutput {
    pub rows: Vec<MetricsRow>,
    pub summary: ExperimentSummary,
}

/// Source corpora for one experiment.
pub struct SourceData {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
}

/// Stream ids for dataset construction, one block per trial.
mod streams {
    pub const DRAW: u64 = 0x20;
    pub const RESAMPLE: u64 = 0x21;
    pub const LABEL: u64 = 0x22;
    pub const PERTURB: u64 = 0x23;
}

/// Build the per-trial complementary training set and its weighting.
fn build_trial(
    config: &ExperimentConfig,
    source: &SourceData,
    alpha: &AlphaVector,
    trial_seed: u64,
) -> Result<(ComplementaryDataset, ClassWeighting), HarnessError> {
    let mut drawn = datasets::draw_imbalanced(
        &source.train,
        alpha,
        &mut SeededRng::new(trial_seed, streams::DRAW),
    )?;
    let mut alpha_used = alpha.clone();
    if let Some(kind) = config.resample {
        drawn = datasets::resample_baseline(
            &drawn,
            kind,
            &mut SeededRng::new(trial_seed, streams::RESAMPLE),
        )?;
        alpha_used = AlphaVector::from_dataset(&drawn);
    }
    let comp = datasets::assign_complementary(
        &drawn,
        &alpha_used,
        config.labeling,
        &mut SeededRng::new(trial_seed, streams::LABEL),
    )?;

    let weighting = match config.variant {
        LossVariant::Uniform => ClassWeighting::uniform(config.k),
        _ => {
            let base = ClassWeighting::from_alpha(&alpha_used)?;
            match config.perturbation() {
                None => base,
                Some(kind) => weighting::perturb_weights(
                    base.pi(),
                    kind,
                    &mut SeededRng::new(trial_seed, streams::PERTURB),
                )?,
            }
        }
    };
    Ok((comp, weighting))
}

/// The dataset and weighting one trial of `run_experiment` would train on;
/// also the entry point for `prepare-data` and `bound`.
pub fn prepare_trial_dataset(
    config: &ExperimentConfig,
    source: &SourceData,
    trial: usize,
) -> Result<(ComplementaryDataset, ClassWeighting), HarnessError> {
    config.validate()?;
    let spec = ImbalanceSpec::new(
        config.k,
        config.minority.iter().cloned().collect(),
        config.p,
        config.n_train,
    )?;
    let alpha = datasets::compute_alpha(&spec);
    build_trial(config, source, &alpha, config.seed + trial as u64)
}

/// Run `trials x lr_sweep` training runs and summarize them the way the
/// tables report: per learning rate, mean and standard deviation of the
/// final-epoch total accuracy over trials, then the best learning rate by
/// mean total accuracy.
pub fn run_experiment(
    config: &ExperimentConfig,
    source: &SourceData,
) -> Result<ExperimentOutput, HarnessError> {
    config.validate()?;
    let spec = ImbalanceSpec::new(
        config.k,
        config.minority.iter().cloned().collect(),
        config.p,
        config.n_train,
    )?;
    let alpha = datasets::compute_alpha(&spec);
    let variant_label = config.variant_label();

    // Per-trial datasets first (shared across the lr sweep).
    let trial_data: Vec<(ComplementaryDataset, ClassWeighting)> = {
        let build = |t: usize| build_trial(config, source, &alpha, config.seed + t as u64);
        #[cfg(feature = "parallel")]
        {
            (0..config.trials)
                .into_par_iter()
                .map(build)
                .collect::<Result<_, _>>()?
        }
        #[cfg(not(feature = "parallel"))]
        {
            (0..config.trials)
                .map(build)
                .collect::<Result<_, _>>()?
        }
    };

    let mut lrs = config.lr_sweep.clone();
    lrs.sort_by(|a, b| a.partial_cmp(b).unwrap());

    // One task per (trial, lr) cell; rayon's indexed collect keeps order,
    // so assembly below is scheduling-independent.
    let tasks: Vec<(usize, usize)> = (0..config.trials)
        .flat_map(|t| (0..lrs.len()).map(move |l| (t, l)))
        .collect();
    let run_cell = |&(t, l): &(usize, usize)| -> Result<RunResult, HarnessError> {
        let (comp, weighting) = &trial_data[t];
        let train_config = TrainConfig {
            epochs: config.epochs,
            batch_size: config.batch_size,
            optimizer: config.optimizer().with_lr(lrs[l]),
            weight_decay: config.weight_decay,
            seed: config.seed + t as u64,
            loss: LossConfig::new(config.variant, weighting.clone(), config.nonneg_correction),
            eval_every: config.eval_every,
        };
        let arch = config.architecture(source.train.dim());
        Ok(training::train(comp, &source.test, arch, &train_config)?)
    };
    #[cfg(feature = "parallel")]
    let results: Vec<RunResult> = tasks
        .par_iter()
        .map(run_cell)
        .collect::<Result<_, _>>()?;
    #[cfg(not(feature = "parallel"))]
    let results: Vec<RunResult> = tasks.iter().map(run_cell).collect::<Result<_, _>>()?;

    let minority: Vec<usize> = config.minority.clone();
    let mut rows = Vec::new();
    for ((t, l), result) in tasks.iter().zip(&results) {
        for point in &result.history {
            rows.push(MetricsRow {
                trial: *t,
                epoch: point.epoch,
                lr: lrs[*l],
                variant: variant_label.clone(),
                total_accuracy: point.test_total_accuracy,
                per_class_accuracy: point.test_per_class_accuracy.clone(),
                minority_accuracy: mean_over(&point.test_per_class_accuracy, &minority),
                train_risk: point.train_risk,
            });
        }
    }
    rows.sort_by(|a, b| {
        a.variant
            .cmp(&b.variant)
            .then(a.lr.partial_cmp(&b.lr).unwrap())
            .then(a.trial.cmp(&b.trial))
            .then(a.epoch.cmp(&b.epoch))
    });

    let mut per_lr = Vec::new();
    for (l, &lr) in lrs.iter().enumerate() {
        let mut totals = Vec::new();
        let mut minorities = Vec::new();
        for (idx, &(_, cell_l)) in tasks.iter().enumerate() {
            if cell_l == l {
                let last = results[idx].final_point();
                totals.push(last.test_total_accuracy);
                minorities.push(mean_over(&last.test_per_class_accuracy, &minority));
            }
        }
        let (mean_total, std_total) = mean_std(&totals);
        let (mean_minority, std_minority) = mean_std(&minorities);
        per_lr.push(LrSummary {
            lr,
            mean_total_accuracy: mean_total,
            std_total_accuracy: std_total,
            mean_minority_accuracy: mean_minority,
            std_minority_accuracy: std_minority,
            final_total_accuracies: totals,
        });
    }
    // lrs ascend, so strict improvement picks the smaller lr on ties.
    let mut best = per_lr[0].clone();
    for cand in &per_lr[1..] {
        if cand.mean_total_accuracy > best.mean_total_accuracy {
            best = cand.clone();
        }
    }

    let weighting_echo = match config.variant {
        LossVariant::Uniform => ClassWeighting::uniform(config.k),
        _ => ClassWeighting::from_alpha(&alpha)?,
    };
    Ok(ExperimentOutput {
        rows,
        summary: ExperimentSummary {
            variant: variant_label,
            trials: config.trials,
            alpha: alpha.counts().to_vec(),
            pi: weighting_echo.pi().to_vec(),
            omega: weighting_echo.omega().to_vec(),
            per_lr,
            best,
        },
    })
}

fn mean_over(values: &[f64], indices: &[usize]) -> f64 {
    if indices.is_empty() {
        return 0.0;
    }
    indices.iter().map(|&i| values[i]).sum::<f64>() / indices.len() as f64
}

/// Mean and sample standard deviation (0 for fewer than two values).
fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Fixed-width significand formatting: 6 significant digits, so re-runs
/// produce byte-identical files.
fn fmt6(x: f64) -> String {
    if x == 0.0 {
        "0".into()
    } else {
        format!("{:.5e}", x)
    }
}

/// Write `metrics.csv`, `summary.json`, and `config.json` into `outdir`.
/// Overwrites existing files; identical inputs reproduce identical bytes.
pub fn emit_reports(
    output: &ExperimentOutput,
    config: &ExperimentConfig,
    outdir: impl AsRef<Path>,
) -> Result<(), HarnessError> {
    let outdir = outdir.as_ref();
    std::fs::create_dir_all(outdir).map_err(|source| HarnessError::Io {
        path: outdir.to_path_buf(),
        source,
    })?;
    write_metrics_csv(&output.rows, config.k, &outdir.join("metrics.csv"))?;
    write_json(&output.summary, &outdir.join("summary.json"))?;
    write_json(config, &outdir.join("config.json"))?;
    Ok(())
}

pub fn write_metrics_csv(rows: &[MetricsRow], k: usize, path: &Path) -> Result<(), HarnessError> {
    let io_err = |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = Vec::new();
    let mut header = String::from("trial,epoch,lr,variant,total_acc");
    for c in 0..k {
        header.push_str(&format!(",acc_class_{c}"));
    }
    header.push_str(",minority_acc,train_risk");
    out.extend_from_slice(header.as_bytes());
    out.push(b'\n');
    for row in rows {
        let mut line = format!(
            "{},{},{},{},{}",
            row.trial,
            row.epoch,
            fmt6(row.lr),
            row.variant,
            fmt6(row.total_accuracy)
        );
        for &acc in &row.per_class_accuracy {
            line.push(',');
            line.push_str(&fmt6(acc));
        }
        line.push(',');
        line.push_str(&fmt6(row.minority_accuracy));
        line.push(',');
        line.push_str(&fmt6(row.train_risk));
        out.extend_from_slice(line.as_bytes());
        out.push(b'\n');
    }
    let mut file = std::fs::File::create(path).map_err(io_err)?;
    file.write_all(&out).map_err(io_err)
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), HarnessError> {
    let io_err = |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializable report");
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(io_err)
}
