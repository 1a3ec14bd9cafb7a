//! Experiment configuration: a flat TOML file of documented keys, echoed
//! back verbatim into every run's output directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{HarnessError, SourceData};
use crate::datasets::{self, LabelingMode, ResampleKind};
use crate::loss::LossVariant;
use crate::model::Architecture;
use crate::numerics::{Matrix, SeededRng};
use crate::training::Optimizer;
use crate::weighting::Perturbation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArchKind {
    Linear,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerturbKind {
    None,
    Bias,
    Random,
}

/// Flat experiment description. Every key has a default, so a config file
/// only states what deviates from the single-minority MNIST protocol.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// `mnist`, `cifar10`, or `gaussians`.
    pub dataset: String,
    /// Directory holding `mnist/` or `cifar-10-batches-bin/`. CLI flag and
    /// `WCLL_DATA_ROOT` take precedence.
    pub data_root: Option<PathBuf>,
    pub k: usize,
    /// Imbalance proportion between majority and minority class counts.
    pub p: f64,
    /// Minority (scarce) classes, 0-based.
    pub minority: Vec<usize>,
    /// Total training budget N_l.
    pub n_train: usize,
    pub labeling: LabelingMode,
    pub variant: LossVariant,
    pub perturb: PerturbKind,
    /// Additive bias for `perturb = "bias"`.
    pub bias: f64,
    pub resample: Option<ResampleKind>,
    pub nonneg_correction: bool,
    pub arch: ArchKind,
    /// Hidden width for `arch = "mlp"`.
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    /// Learning rate for single `train` runs.
    pub lr: f64,
    /// Learning rates swept by `sweep`; best mean accuracy wins.
    pub lr_sweep: Vec<f64>,
    pub weight_decay: f64,
    pub eval_every: usize,
    pub trials: usize,
    pub seed: u64,
    pub outdir: PathBuf,
    // Gaussian-synthesis knobs (dataset = "gaussians").
    pub gauss_dim: usize,
    pub gauss_sep: f64,
    pub gauss_cov: f64,
    pub gauss_train_per_class: usize,
    pub gauss_test_per_class: usize,
    /// Classes kept (and densely re-indexed) for CIFAR-10.
    pub cifar_keep: Vec<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: "mnist".into(),
            data_root: None,
            k: 10,
            p: 2.0,
            minority: vec![0],
            n_train: 1900,
            labeling: LabelingMode::PerInstance,
            variant: LossVariant::WcllEq12,
            perturb: PerturbKind::None,
            bias: 0.0,
            resample: None,
            nonneg_correction: false,
            arch: ArchKind::Linear,
            hidden: 500,
            epochs: 100,
            batch_size: 256,
            optimizer: OptimizerKind::Adam,
            lr: 5e-4,
            lr_sweep: vec![5e-4, 1e-4, 5e-5, 5e-6],
            weight_decay: 1e-4,
            eval_every: 10,
            trials: 5,
            seed: 1,
            outdir: PathBuf::from("runs/experiment"),
            gauss_dim: 10,
            gauss_sep: 2.0,
            gauss_cov: 0.25,
            gauss_train_per_class: 500,
            gauss_test_per_class: 100,
            cifar_keep: vec![0, 1, 2, 3, 4],
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.trials == 0 {
            return Err(HarnessError::Config("trials must be >= 1".into()));
        }
        if let Some(&c) = self.minority.iter().find(|&&c| c >= self.k) {
            return Err(HarnessError::Config(format!(
                "minority class {c} out of range for k = {}",
                self.k
            )));
        }
        if self.lr_sweep.is_empty() || self.lr_sweep.iter().any(|&lr| !(lr > 0.0)) {
            return Err(HarnessError::Config(
                "lr_sweep must be a nonempty list of positive rates".into(),
            ));
        }
        if self.perturb == PerturbKind::Bias && self.bias < 0.0 {
            return Err(HarnessError::Config(format!(
                "bias must be nonnegative, got {}",
                self.bias
            )));
        }
        match self.dataset.as_str() {
            "mnist" | "cifar10" | "gaussians" => Ok(()),
            other => Err(HarnessError::Config(format!(
                "unknown dataset '{other}' (expected mnist, cifar10, or gaussians)"
            ))),
        }
    }

    pub fn optimizer(&self) -> Optimizer {
        match self.optimizer {
            OptimizerKind::Adam => Optimizer::adam(self.lr),
            OptimizerKind::Sgd => Optimizer::Sgd { lr: self.lr },
        }
    }

    pub fn architecture(&self, input_dim: usize) -> Architecture {
        match self.arch {
            ArchKind::Linear => Architecture::Linear {
                d: input_dim,
                k: self.k,
            },
            ArchKind::Mlp => Architecture::Mlp {
                d: input_dim,
                h: self.hidden,
                k: self.k,
            },
        }
    }

    pub fn perturbation(&self) -> Option<Perturbation> {
        match self.perturb {
            PerturbKind::None => None,
            PerturbKind::Bias => Some(Perturbation::Bias { bias: self.bias }),
            PerturbKind::Random => Some(Perturbation::Random),
        }
    }

    /// Row label for reports: the variant plus any ablation tags.
    pub fn variant_label(&self) -> String {
        let mut label = self.variant.label().to_string();
        match self.perturb {
            PerturbKind::None => {}
            PerturbKind::Bias => label.push_str(&format!("+bias{}", self.bias)),
            PerturbKind::Random => label.push_str("+random"),
        }
        match self.resample {
            Some(ResampleKind::Undersample) => label.push_str("+undersample"),
            Some(ResampleKind::Oversample) => label.push_str("+oversample"),
            None => {}
        }
        if self.nonneg_correction {
            label.push_str("+nonneg");
        }
        label
    }

    /// Final data root: CLI flag, then `WCLL_DATA_ROOT`, then the config
    /// key, then `./data`.
    pub fn resolve_data_root(&self, cli: Option<&Path>) -> PathBuf {
        if let Some(p) = cli {
            return p.to_path_buf();
        }
        if let Ok(env) = std::env::var("WCLL_DATA_ROOT") {
            if !env.is_empty() {
                return PathBuf::from(env);
            }
        }
        self.data_root
            .clone()
            .unwrap_or_else(|| PathBuf::from("data"))
    }
}

/// Load (or synthesize) the source train/test corpora named by the config.
pub fn load_source(
    config: &ExperimentConfig,
    data_root: &Path,
) -> Result<SourceData, HarnessError> {
    config.validate()?;
    match config.dataset.as_str() {
        "mnist" => {
            let dir = data_root.join("mnist");
            let train = datasets::load_idx(
                dir.join("train-images-idx3-ubyte"),
                dir.join("train-labels-idx1-ubyte"),
            )?;
            let test = datasets::load_idx(
                dir.join("t10k-images-idx3-ubyte"),
                dir.join("t10k-labels-idx1-ubyte"),
            )?;
            check_k(config, train.k())?;
            Ok(SourceData { train, test })
        }
        "cifar10" => {
            let dir = data_root.join("cifar-10-batches-bin");
            let keep: std::collections::BTreeSet<usize> =
                config.cifar_keep.iter().cloned().collect();
            if keep.len() != config.k {
                return Err(HarnessError::Config(format!(
                    "cifar_keep has {} classes but k = {}",
                    keep.len(),
                    config.k
                )));
            }
            let train_paths: Vec<PathBuf> = (1..=5)
                .map(|i| dir.join(format!("data_batch_{i}.bin")))
                .collect();
            let train = datasets::load_cifar10_bin(&train_paths, &keep)?;
            let test = datasets::load_cifar10_bin(&[dir.join("test_batch.bin")], &keep)?;
            Ok(SourceData { train, test })
        }
        "gaussians" => {
            if config.gauss_dim < config.k {
                return Err(HarnessError::Config(format!(
                    "gaussians need gauss_dim >= k ({} < {})",
                    config.gauss_dim, config.k
                )));
            }
            let mut means = Matrix::zeros(config.k, config.gauss_dim);
            for c in 0..config.k {
                means.set(c, c, config.gauss_sep);
            }
            let train = datasets::synthesize_gaussians(
                config.k,
                config.gauss_dim,
                &means,
                config.gauss_cov,
                config.gauss_train_per_class,
                &mut SeededRng::new(config.seed, 0x01),
            )?;
            let test = datasets::synthesize_gaussians(
                config.k,
                config.gauss_dim,
                &means,
                config.gauss_cov,
                config.gauss_test_per_class,
                &mut SeededRng::new(config.seed, 0x02),
            )?;
            Ok(SourceData { train, test })
        }
        other => Err(HarnessError::Config(format!("unknown dataset '{other}'"))),
    }
}

fn check_k(config: &ExperimentConfig, data_k: usize) -> Result<(), HarnessError> {
    if config.k != data_k {
        return Err(HarnessError::Config(format!(
            "config says k = {} but dataset has {} classes",
            config.k, data_k
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_toml_uses_defaults() {
        let cfg = ExperimentConfig::from_toml_str("dataset = \"gaussians\"\nk = 4\n").unwrap();
        assert_eq!(cfg.dataset, "gaussians");
        assert_eq!(cfg.k, 4);
        assert_eq!(cfg.epochs, 100);
        assert_eq!(cfg.batch_size, 256);
        assert_eq!(cfg.weight_decay, 1e-4);
        assert_eq!(cfg.lr_sweep, vec![5e-4, 1e-4, 5e-5, 5e-6]);
        assert_eq!(cfg.variant, LossVariant::WcllEq12);
    }

    #[test]
    fn full_toml_roundtrip() {
        let text = r#"
dataset = "gaussians"
k = 3
p = 2.5
minority = [0, 1]
n_train = 400
labeling = "exact-marginal"
variant = "wcll-alg1"
perturb = "bias"
bias = 0.1
resample = "undersample"
arch = "mlp"
hidden = 32
epochs = 7
batch_size = 16
optimizer = "sgd"
lr = 0.01
lr_sweep = [0.01, 0.001]
weight_decay = 0.0
eval_every = 7
trials = 2
seed = 9
outdir = "runs/test"
gauss_dim = 3
"#;
        let cfg = ExperimentConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.labeling, LabelingMode::ExactMarginal);
        assert_eq!(cfg.variant, LossVariant::WcllAlg1);
        assert_eq!(cfg.perturb, PerturbKind::Bias);
        assert_eq!(cfg.resample, Some(ResampleKind::Undersample));
        assert_eq!(cfg.variant_label(), "wcll-alg1+bias0.1+undersample");
        let json = serde_json::to_string(&cfg).unwrap();
        assert!(json.contains("\"exact-marginal\""));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(ExperimentConfig::from_toml_str("no_such_key = 1\n").is_err());
    }

    #[test]
    fn bad_values_rejected() {
        let cfg = ExperimentConfig::from_toml_str("dataset = \"nope\"\n").unwrap();
        assert!(cfg.validate().is_err());
        let cfg = ExperimentConfig::from_toml_str("minority = [12]\n").unwrap();
        assert!(cfg.validate().is_err());
        let cfg = ExperimentConfig::from_toml_str("trials = 0\n").unwrap();
        assert!(cfg.validate().is_err());
        let cfg = ExperimentConfig::from_toml_str("lr_sweep = []\n").unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn data_root_precedence() {
        let cfg = ExperimentConfig::from_toml_str("data_root = \"/from/config\"\n").unwrap();
        assert_eq!(
            cfg.resolve_data_root(Some(Path::new("/from/cli"))),
            PathBuf::from("/from/cli")
        );
        // Without the CLI flag the config key wins over the default (the
        // env var is not exercised here to keep the test hermetic).
        assert_eq!(
            cfg.resolve_data_root(None),
            PathBuf::from("/from/config")
        );
        let plain = ExperimentConfig::default();
        assert_eq!(plain.resolve_data_root(None), PathBuf::from("data"));
    }

    #[test]
    fn gaussian_source_shapes() {
        let mut cfg = ExperimentConfig::default();
        cfg.dataset = "gaussians".into();
        cfg.k = 3;
        cfg.gauss_dim = 3;
        cfg.gauss_train_per_class = 50;
        cfg.gauss_test_per_class = 20;
        let source = load_source(&cfg, Path::new("unused")).unwrap();
        assert_eq!(source.train.len(), 150);
        assert_eq!(source.test.len(), 60);
        assert_eq!(source.train.class_counts(), vec![50, 50, 50]);
    }
}
