//! Command-line front end: dataset preparation, single runs, sweeps, and
//! bound evaluation, all driven by a flat TOML config.

use std::path::PathBuf;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use wcll::bounds::{self, BoundInput};
use wcll::datasets::{self, AlphaVector};
use wcll::harness::{self, config::load_source, ExperimentConfig};
use wcll::loss::{LossConfig, LossVariant};
use wcll::model;
use wcll::numerics::SeededRng;
use wcll::training::{self, TrainConfig};
use wcll::weighting::ClassWeighting;

#[derive(Parser)]
#[command(
    name = "wcll",
    about = "Weighted complementary-label learning on class-imbalanced data",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment config (TOML). Defaults apply for missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory holding mnist/ or cifar-10-batches-bin/ (overrides
    /// WCLL_DATA_ROOT and the config key).
    #[arg(long)]
    data_root: Option<PathBuf>,
    /// Override the config's base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's output directory.
    #[arg(long)]
    outdir: Option<PathBuf>,
}

impl CommonArgs {
    fn load(&self) -> anyhow::Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::from_path(path)
                .with_context(|| format!("loading config {}", path.display()))?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(outdir) = &self.outdir {
            config.outdir = outdir.clone();
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Draw the imbalanced subset, attach complementary labels, and save
    /// the training set plus a stats report.
    PrepareData {
        #[command(flatten)]
        common: CommonArgs,
        /// Which trial's dataset to materialize.
        #[arg(long, default_value_t = 0)]
        trial: usize,
    },
    /// One training run at the config's learning rate.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// Learning rate override.
        #[arg(long)]
        lr: Option<f64>,
        /// Previously prepared dataset file (skips drawing and labeling).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Which trial's dataset/seed to use when drawing fresh data.
        #[arg(long, default_value_t = 0)]
        trial: usize,
    },
    /// Score a saved checkpoint on the config's test set.
    Evaluate {
        #[command(flatten)]
        common: CommonArgs,
        /// Parameter checkpoint written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// The full protocol: trials x learning-rate sweep with CSV/JSON
    /// reports.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Evaluate the uniform-deviation and estimation-error bounds.
    Bound {
        #[command(flatten)]
        common: CommonArgs,
        /// Confidence level delta.
        #[arg(long, default_value_t = 0.05)]
        delta: f64,
        /// Lipschitz constant of the surrogate loss.
        #[arg(long, default_value_t = 1.0)]
        l_phi: f64,
        /// Logit box bound used to make the cross-entropy loss bounded.
        #[arg(long, default_value_t = 10.0)]
        logit_clip: f64,
        /// Direct loss-bound override (skips the clip-based estimate).
        #[arg(long)]
        l_f: Option<f64>,
        /// Norm bound B of the linear hypothesis class.
        #[arg(long, default_value_t = 1.0)]
        norm_bound: f64,
        /// Monte-Carlo draws for the Rademacher estimate.
        #[arg(long, default_value_t = 1000)]
        draws: usize,
        /// Skip estimation and use this Rademacher complexity.
        #[arg(long)]
        rademacher: Option<f64>,
        /// Also write the report to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::PrepareData { common, trial } => prepare_data(&common, trial),
        Command::Train {
            common,
            lr,
            data,
            trial,
        } => run_train(&common, lr, data, trial),
        Command::Evaluate { common, checkpoint } => run_evaluate(&common, &checkpoint),
        Command::Sweep { common } => run_sweep(&common),
        Command::Bound {
            common,
            delta,
            l_phi,
            logit_clip,
            l_f,
            norm_bound,
            draws,
            rademacher,
            out,
        } => run_bound(
            &common, delta, l_phi, logit_clip, l_f, norm_bound, draws, rademacher, out,
        ),
    }
}

fn prepare_data(common: &CommonArgs, trial: usize) -> anyhow::Result<()> {
    let config = common.load()?;
    let data_root = config.resolve_data_root(common.data_root.as_deref());
    let source = load_source(&config, &data_root)?;
    let (comp, weighting) = harness::prepare_trial_dataset(&config, &source, trial)?;

    std::fs::create_dir_all(&config.outdir)
        .with_context(|| format!("creating {}", config.outdir.display()))?;
    let data_path = config.outdir.join(format!("train-trial{trial}.wcds"));
    datasets::io::save_complementary(&comp, &data_path)?;

    let mut comp_hist = vec![0usize; comp.k()];
    for &c in comp.comp_labels() {
        comp_hist[c] += 1;
    }
    let stats = serde_json::json!({
        "dataset": data_path.to_string_lossy(),
        "n": comp.len(),
        "k": comp.k(),
        "dim": comp.dim(),
        "true_label_counts": AlphaVector::from_counts(
            comp.true_labels_hidden().iter().fold(vec![0usize; comp.k()], |mut h, &y| {
                h[y] += 1;
                h
            })
        ).counts(),
        "comp_label_counts": comp_hist,
        "pi": weighting.pi(),
        "omega": weighting.omega(),
    });
    let stats_path = config.outdir.join(format!("prepare-trial{trial}.json"));
    harness::write_json(&stats, &stats_path)?;
    println!("{}", serde_json::to_string_pretty(&stats)?);
    Ok(())
}

fn run_train(
    common: &CommonArgs,
    lr: Option<f64>,
    data: Option<PathBuf>,
    trial: usize,
) -> anyhow::Result<()> {
    let mut config = common.load()?;
    if let Some(lr) = lr {
        config.lr = lr;
    }
    let data_root = config.resolve_data_root(common.data_root.as_deref());
    let source = load_source(&config, &data_root)?;

    let (comp, weighting) = match data {
        Some(path) => {
            let comp = datasets::io::load_complementary(&path)?;
            // The prepared file carries its own composition; recover the
            // weighting from the hidden true-label histogram, exactly as
            // the pipeline would have computed it.
            let mut hist = vec![0usize; comp.k()];
            for &y in comp.true_labels_hidden() {
                hist[y] += 1;
            }
            let weighting = match config.variant {
                LossVariant::Uniform => ClassWeighting::uniform(comp.k()),
                _ => ClassWeighting::from_alpha(&AlphaVector::from_counts(hist))?,
            };
            (comp, weighting)
        }
        None => harness::prepare_trial_dataset(&config, &source, trial)?,
    };

    let train_config = TrainConfig {
        epochs: config.epochs,
        batch_size: config.batch_size,
        optimizer: config.optimizer(),
        weight_decay: config.weight_decay,
        seed: config.seed + trial as u64,
        loss: LossConfig::new(config.variant, weighting, config.nonneg_correction),
        eval_every: config.eval_every,
    };
    let arch = config.architecture(comp.dim());
    let result = training::train(&comp, &source.test, arch, &train_config)?;

    std::fs::create_dir_all(&config.outdir)
        .with_context(|| format!("creating {}", config.outdir.display()))?;
    let ckpt_path = config.outdir.join(format!("model-trial{trial}.ckpt"));
    model::save_checkpoint(&result.params, &ckpt_path)?;
    harness::write_json(&result.report(), &config.outdir.join("run_result.json"))?;

    let rows: Vec<harness::MetricsRow> = result
        .history
        .iter()
        .map(|point| harness::MetricsRow {
            trial,
            epoch: point.epoch,
            lr: config.lr,
            variant: config.variant_label(),
            total_accuracy: point.test_total_accuracy,
            per_class_accuracy: point.test_per_class_accuracy.clone(),
            minority_accuracy: point
                .test_per_class_accuracy
                .iter()
                .enumerate()
                .filter(|(c, _)| config.minority.contains(c))
                .map(|(_, a)| a)
                .sum::<f64>()
                / config.minority.len().max(1) as f64,
            train_risk: point.train_risk,
        })
        .collect();
    harness::write_metrics_csv(&rows, config.k, &config.outdir.join("metrics.csv"))?;

    let last = result.final_point();
    println!(
        "trained {} epochs: test accuracy {:.4}, train risk {:+.6} (checkpoint {})",
        config.epochs,
        last.test_total_accuracy,
        last.train_risk,
        ckpt_path.display()
    );
    Ok(())
}

fn run_evaluate(common: &CommonArgs, checkpoint: &PathBuf) -> anyhow::Result<()> {
    let config = common.load()?;
    let data_root = config.resolve_data_root(common.data_root.as_deref());
    let source = load_source(&config, &data_root)?;
    let params = model::load_checkpoint(checkpoint)?;
    let metrics = harness::evaluate(&params, &source.test)?;
    let minority_acc = config
        .minority
        .iter()
        .map(|&c| metrics.per_class_accuracy[c])
        .sum::<f64>()
        / config.minority.len().max(1) as f64;
    let report = serde_json::json!({
        "checkpoint": checkpoint.to_string_lossy(),
        "test_set": source.test.name(),
        "n_test": source.test.len(),
        "total_accuracy": metrics.total_accuracy,
        "per_class_accuracy": metrics.per_class_accuracy,
        "minority_accuracy": minority_acc,
        "confusion": metrics.confusion,
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn run_sweep(common: &CommonArgs) -> anyhow::Result<()> {
    let config = common.load()?;
    let data_root = config.resolve_data_root(common.data_root.as_deref());
    let source = load_source(&config, &data_root)?;
    let output = harness::run_experiment(&config, &source)?;
    harness::emit_reports(&output, &config, &config.outdir)?;
    let best = &output.summary.best;
    println!(
        "{}: best lr {} -> total {:.2}% +- {:.2} (minority {:.2}%), reports in {}",
        output.summary.variant,
        best.lr,
        100.0 * best.mean_total_accuracy,
        100.0 * best.std_total_accuracy,
        100.0 * best.mean_minority_accuracy,
        config.outdir.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_bound(
    common: &CommonArgs,
    delta: f64,
    l_phi: f64,
    logit_clip: f64,
    l_f: Option<f64>,
    norm_bound: f64,
    draws: usize,
    rademacher_override: Option<f64>,
    out: Option<PathBuf>,
) -> anyhow::Result<()> {
    let config = common.load()?;
    let data_root = config.resolve_data_root(common.data_root.as_deref());
    let source = load_source(&config, &data_root)?;
    let (comp, weighting) = harness::prepare_trial_dataset(&config, &source, 0)?;

    let l_f = l_f.unwrap_or_else(|| bounds::estimate_lf(config.k, logit_clip));
    let estimate = match rademacher_override {
        Some(value) => bounds::RademacherEstimate {
            mean: value,
            std_err: 0.0,
            draws: 0,
        },
        None => bounds::rademacher_linear(
            comp.features(),
            norm_bound,
            draws,
            &SeededRng::new(config.seed, 0x30),
        ),
    };

    let input = BoundInput {
        k: config.k,
        n_l: comp.len(),
        delta,
        l_f,
        l_phi,
        omega_max: weighting.omega_max(),
        pi_max: weighting.pi_max(),
        rademacher: estimate.mean,
    };
    let report = bounds::bound_report(&input)?;
    let full = serde_json::json!({
        "report": report,
        "norm_bound": norm_bound,
        "logit_clip": logit_clip,
        "rademacher_estimate": estimate,
    });
    let text = serde_json::to_string_pretty(&full)?;
    if let Some(path) = out {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        std::fs::write(&path, format!("{text}\n"))?;
    }
    println!("{text}");
    Ok(())
}
