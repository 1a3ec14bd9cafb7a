//! Dataset construction: benchmark loaders, synthetic Gaussians, the
//! class-imbalanced subsampler, complementary labelers, and the
//! resampling baselines.
//!
//! Class indices are 0-based throughout (the first class is class 0).
//! Training sets carry their true labels only as hidden provenance for
//! evaluation; the training path sees complementary labels alone.

mod cifar;
mod idx;
pub mod io;

pub use cifar::load_cifar10_bin;
pub use idx::load_idx;

use std::collections::BTreeSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{Matrix, SeededRng};
use crate::weighting;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: bad magic at offset 0: expected 0x{expected:08x}, found 0x{found:08x}")]
    BadMagic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },
    #[error("{path}: truncated payload: need {needed} bytes from offset {offset}, have {available}")]
    Truncated {
        path: PathBuf,
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("image/label count mismatch: {images_path} has {images}, {labels_path} has {labels}")]
    CountMismatch {
        images_path: PathBuf,
        images: usize,
        labels_path: PathBuf,
        labels: usize,
    },
    #[error("{path}: length {len} is not a multiple of the 3073-byte record size")]
    CifarRecordSize { path: PathBuf, len: usize },
    #[error("{path}: record {record} has label {label}, outside 0..10")]
    CifarLabel {
        path: PathBuf,
        record: usize,
        label: u8,
    },
    #[error("imbalance proportion must be >= 1, got {p}")]
    InvalidProportion { p: f64 },
    #[error("minority class set is empty")]
    EmptyMinority,
    #[error("class {class} out of range for K={k}")]
    ClassOutOfRange { class: usize, k: usize },
    #[error("class {class} has {available} samples, need {needed} (short by {})", needed - available)]
    InsufficientSamples {
        class: usize,
        needed: usize,
        available: usize,
    },
    #[error("complementary labeling requires K >= 3, got K={k}")]
    UnsupportedK { k: usize },
    #[error("alpha count for class {class} is zero; complementary weights undefined")]
    ZeroAlpha { class: usize },
    #[error(
        "exact-marginal quota infeasible: class {class} needs {quota} complementary labels \
         but only {capacity} samples have a different true label"
    )]
    ExactMarginalInfeasible {
        class: usize,
        quota: usize,
        capacity: usize,
    },
    #[error("dataset is empty")]
    Empty,
    #[error("gaussian synthesis: {0}")]
    BadGaussianSpec(String),
    #[error(transparent)]
    Weighting(#[from] weighting::WeightingError),
}

/// Feature rows with ordinary (ground-truth) labels.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    features: Matrix,
    labels: Vec<usize>,
    k: usize,
    name: String,
}

impl LabeledDataset {
    /// Panics if label count or range disagrees with the features/K.
    pub fn new(features: Matrix, labels: Vec<usize>, k: usize, name: impl Into<String>) -> Self {
        assert_eq!(features.rows(), labels.len(), "row/label count mismatch");
        assert!(
            labels.iter().all(|&y| y < k),
            "label out of range for K={k}"
        );
        LabeledDataset {
            features,
            labels,
            k,
            name: name.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Per-class sample counts, length K.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.k];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    fn subset(&self, indices: &[usize], name: String) -> LabeledDataset {
        LabeledDataset {
            features: self.features.gather_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            k: self.k,
            name,
        }
    }
}

/// Which classes are scarce, how scarce, and the total training budget.
///
/// `minority` and the derived majority set partition `0..K`; the majority
/// classes each receive `p` times the per-class sample count of a minority
/// class.
#[derive(Debug, Clone)]
pub struct ImbalanceSpec {
    k: usize,
    minority: BTreeSet<usize>,
    majority: BTreeSet<usize>,
    p: f64,
    n_total: usize,
}

impl ImbalanceSpec {
    pub fn new(
        k: usize,
        minority: BTreeSet<usize>,
        p: f64,
        n_total: usize,
    ) -> Result<Self, DataError> {
        if !(p.is_finite() && p >= 1.0) {
            return Err(DataError::InvalidProportion { p });
        }
        if minority.is_empty() {
            return Err(DataError::EmptyMinority);
        }
        if let Some(&class) = minority.iter().find(|&&c| c >= k) {
            return Err(DataError::ClassOutOfRange { class, k });
        }
        let majority: BTreeSet<usize> = (0..k).filter(|c| !minority.contains(c)).collect();
        Ok(ImbalanceSpec {
            k,
            minority,
            majority,
            p,
            n_total,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn minority(&self) -> &BTreeSet<usize> {
        &self.minority
    }

    pub fn majority(&self) -> &BTreeSet<usize> {
        &self.majority
    }

    pub fn proportion(&self) -> f64 {
        self.p
    }

    pub fn n_total(&self) -> usize {
        self.n_total
    }
}

/// Per-class sample counts of an imbalanced draw.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlphaVector {
    counts: Vec<usize>,
}

impl AlphaVector {
    pub fn from_counts(counts: Vec<usize>) -> Self {
        AlphaVector { counts }
    }

    /// Observed class histogram of a dataset, as an alpha vector.
    pub fn from_dataset(dataset: &LabeledDataset) -> Self {
        AlphaVector {
            counts: dataset.class_counts(),
        }
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn k(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// Integer per-class counts for the imbalanced draw.
///
/// The ideal (real-valued) count is `n_total / (|T_min| + p |T_maj|)` per
/// minority class and `p` times that per majority class. Rounding floors
/// every ideal and then hands the leftover budget out one unit at a time by
/// largest fractional remainder, lowest class index first on ties, so the
/// counts always sum to exactly `n_total` and no class deviates from its
/// ideal by a full unit.
pub fn compute_alpha(spec: &ImbalanceSpec) -> AlphaVector {
    let card_min = spec.minority.len() as f64;
    let card_maj = spec.majority.len() as f64;
    let denom = card_min + spec.p * card_maj;
    let unit = spec.n_total as f64 / denom;

    let ideals: Vec<f64> = (0..spec.k)
        .map(|c| {
            if spec.minority.contains(&c) {
                unit
            } else {
                spec.p * unit
            }
        })
        .collect();
    largest_remainder(&ideals, spec.n_total)
}

/// Floor each ideal and distribute the remaining budget by largest
/// fractional remainder (ties to the lowest index).
fn largest_remainder(ideals: &[f64], total: usize) -> AlphaVector {
    let mut counts: Vec<usize> = ideals.iter().map(|&x| x.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..ideals.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = ideals[a] - ideals[a].floor();
        let fb = ideals[b] - ideals[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &c in order.iter().take(total.saturating_sub(assigned)) {
        counts[c] += 1;
    }
    AlphaVector { counts }
}

/// Draw exactly `alpha_i` samples of each class, without replacement, and
/// shuffle the result.
pub fn draw_imbalanced(
    dataset: &LabeledDataset,
    alpha: &AlphaVector,
    rng: &mut SeededRng,
) -> Result<LabeledDataset, DataError> {
    assert_eq!(alpha.k(), dataset.k(), "alpha length must match K");
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.k()];
    for (i, &y) in dataset.labels().iter().enumerate() {
        by_class[y].push(i);
    }
    let mut chosen = Vec::with_capacity(alpha.total());
    for (class, &need) in alpha.counts().iter().enumerate() {
        let pool = &by_class[class];
        if pool.len() < need {
            return Err(DataError::InsufficientSamples {
                class,
                needed: need,
                available: pool.len(),
            });
        }
        for pick in rng.sample_without_replacement(pool.len(), need) {
            chosen.push(pool[pick]);
        }
    }
    rng.shuffle(&mut chosen);
    Ok(dataset.subset(&chosen, format!("{}-imbalanced", dataset.name)))
}

/// Feature rows paired with complementary labels; the true labels ride
/// along only for evaluation and never feed the loss.
#[derive(Debug, Clone)]
pub struct ComplementaryDataset {
    features: Matrix,
    comp_labels: Vec<usize>,
    true_labels_hidden: Vec<usize>,
    k: usize,
}

impl ComplementaryDataset {
    /// Panics if any complementary label equals the hidden true label.
    pub fn new(
        features: Matrix,
        comp_labels: Vec<usize>,
        true_labels_hidden: Vec<usize>,
        k: usize,
    ) -> Self {
        assert_eq!(features.rows(), comp_labels.len());
        assert_eq!(comp_labels.len(), true_labels_hidden.len());
        for (i, (&c, &t)) in comp_labels.iter().zip(&true_labels_hidden).enumerate() {
            assert!(c < k && t < k, "label out of range at row {i}");
            assert_ne!(c, t, "complementary label equals true label at row {i}");
        }
        ComplementaryDataset {
            features,
            comp_labels,
            true_labels_hidden,
            k,
        }
    }

    pub fn len(&self) -> usize {
        self.comp_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.comp_labels.is_empty()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn comp_labels(&self) -> &[usize] {
        &self.comp_labels
    }

    /// Evaluation-only provenance; the training loop must not read this.
    pub fn true_labels_hidden(&self) -> &[usize] {
        &self.true_labels_hidden
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }
}

/// How complementary labels are attached to a drawn training set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelingMode {
    /// Each instance draws its label from the non-true classes with
    /// probability proportional to `1/alpha_j`. The default: a proper
    /// per-sample generative process.
    PerInstance,
    /// Per-class label counts are pinned to the largest-remainder
    /// apportionment of `n * pi_j` (which equals `round(n * pi_j)` whenever
    /// those roundings already sum to `n`). Exists for tests and ablations
    /// that need the marginal to hold exactly.
    ExactMarginal,
}

/// Attach complementary labels. `alpha` supplies the inverse-count
/// weights; it is normally the class histogram of `dataset`.
pub fn assign_complementary(
    dataset: &LabeledDataset,
    alpha: &AlphaVector,
    mode: LabelingMode,
    rng: &mut SeededRng,
) -> Result<ComplementaryDataset, DataError> {
    let k = dataset.k();
    if k < 3 {
        // With K=2 the complementary label would determine the true label.
        return Err(DataError::UnsupportedK { k });
    }
    assert_eq!(alpha.k(), k, "alpha length must match K");
    if let Some(class) = alpha.counts().iter().position(|&c| c == 0) {
        return Err(DataError::ZeroAlpha { class });
    }

    let comp_labels = match mode {
        LabelingMode::PerInstance => per_instance_labels(dataset, alpha, rng),
        LabelingMode::ExactMarginal => exact_marginal_labels(dataset, alpha, rng)?,
    };
    Ok(ComplementaryDataset::new(
        dataset.features.clone(),
        comp_labels,
        dataset.labels.clone(),
        k,
    ))
}

fn per_instance_labels(
    dataset: &LabeledDataset,
    alpha: &AlphaVector,
    rng: &mut SeededRng,
) -> Vec<usize> {
    let k = dataset.k();
    let inv: Vec<f64> = alpha.counts().iter().map(|&c| 1.0 / c as f64).collect();
    let total_inv: f64 = inv.iter().sum();
    dataset
        .labels()
        .iter()
        .map(|&y| {
            let total = total_inv - inv[y];
            let mut u = rng.next_f64() * total;
            for j in 0..k {
                if j == y {
                    continue;
                }
                u -= inv[j];
                if u < 0.0 {
                    return j;
                }
            }
            // Rounding can exhaust u on the last candidate.
            (0..k).rev().find(|&j| j != y).unwrap()
        })
        .collect()
}

/// Quota assignment with the per-class counts fixed up front.
///
/// Samples are visited in a shuffled order. Each one takes the candidate
/// class with the most remaining quota, except that a "tight" class - one
/// whose remaining quota equals the number of remaining samples it can
/// still legally take - preempts everything: skipping it once would strand
/// it. At most one tight class is ever available to a given sample (two
/// tight classes exhaust the remaining pool between them), so the rule is
/// well-defined and preserves feasibility at every step.
fn exact_marginal_labels(
    dataset: &LabeledDataset,
    alpha: &AlphaVector,
    rng: &mut SeededRng,
) -> Result<Vec<usize>, DataError> {
    let k = dataset.k();
    let n = dataset.len();
    let pi = weighting::compute_pi(alpha)?;
    let ideals: Vec<f64> = pi.iter().map(|&p| p * n as f64).collect();
    let quotas = largest_remainder(&ideals, n).counts;

    let class_counts = dataset.class_counts();
    for (class, &quota) in quotas.iter().enumerate() {
        let capacity = n - class_counts[class];
        if quota > capacity {
            return Err(DataError::ExactMarginalInfeasible {
                class,
                quota,
                capacity,
            });
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);

    let mut remaining_quota = quotas;
    let mut remaining_by_label = class_counts;
    let mut remaining_total = n;
    let mut out = vec![usize::MAX; n];
    for &i in &order {
        let y = dataset.labels()[i];
        let mut pick: Option<usize> = None;
        for j in 0..k {
            if j == y || remaining_quota[j] == 0 {
                continue;
            }
            let takers = remaining_total - remaining_by_label[j];
            if remaining_quota[j] == takers {
                pick = Some(j);
                break;
            }
        }
        let j = pick.unwrap_or_else(|| {
            (0..k)
                .filter(|&j| j != y)
                .max_by(|&a, &b| remaining_quota[a].cmp(&remaining_quota[b]).then(b.cmp(&a)))
                .expect("K >= 3 guarantees a candidate")
        });
        debug_assert!(remaining_quota[j] > 0, "greedy ran out of quota");
        out[i] = j;
        remaining_quota[j] -= 1;
        remaining_by_label[y] -= 1;
        remaining_total -= 1;
    }
    debug_assert!(remaining_quota.iter().all(|&r| r == 0));
    Ok(out)
}

/// Rebalancing baselines: throw away majority samples or duplicate
/// minority ones until every class count matches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResampleKind {
    /// Every class reduced to the minimum class count by random removal.
    Undersample,
    /// Every class grown to the maximum class count by duplication with
    /// replacement.
    Oversample,
}

pub fn resample_baseline(
    dataset: &LabeledDataset,
    kind: ResampleKind,
    rng: &mut SeededRng,
) -> Result<LabeledDataset, DataError> {
    if dataset.is_empty() {
        return Err(DataError::Empty);
    }
    let counts = dataset.class_counts();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.k()];
    for (i, &y) in dataset.labels().iter().enumerate() {
        by_class[y].push(i);
    }
    let present: Vec<usize> = counts.iter().cloned().filter(|&c| c > 0).collect();
    let mut chosen = Vec::new();
    match kind {
        ResampleKind::Undersample => {
            let target = present.iter().cloned().min().unwrap();
            for pool in by_class.iter().filter(|p| !p.is_empty()) {
                for pick in rng.sample_without_replacement(pool.len(), target) {
                    chosen.push(pool[pick]);
                }
            }
        }
        ResampleKind::Oversample => {
            let target = present.iter().cloned().max().unwrap();
            for pool in by_class.iter().filter(|p| !p.is_empty()) {
                chosen.extend_from_slice(pool);
                for _ in pool.len()..target {
                    chosen.push(pool[rng.range(pool.len())]);
                }
            }
        }
    }
    rng.shuffle(&mut chosen);
    let suffix = match kind {
        ResampleKind::Undersample => "undersampled",
        ResampleKind::Oversample => "oversampled",
    };
    Ok(dataset.subset(&chosen, format!("{}-{}", dataset.name, suffix)))
}

/// Isotropic Gaussian blobs: class `c` draws `n_per_class` points from
/// `N(means[c], cov_scale * I)`.
pub fn synthesize_gaussians(
    k: usize,
    d: usize,
    means: &Matrix,
    cov_scale: f64,
    n_per_class: usize,
    rng: &mut SeededRng,
) -> Result<LabeledDataset, DataError> {
    if k < 2 {
        return Err(DataError::BadGaussianSpec(format!("K must be >= 2, got {k}")));
    }
    if means.rows() != k || means.cols() != d {
        return Err(DataError::BadGaussianSpec(format!(
            "means must be {k}x{d}, got {}x{}",
            means.rows(),
            means.cols()
        )));
    }
    if !(cov_scale > 0.0) {
        return Err(DataError::BadGaussianSpec(format!(
            "cov_scale must be positive, got {cov_scale}"
        )));
    }
    if n_per_class == 0 {
        return Err(DataError::BadGaussianSpec(
            "n_per_class must be at least 1".into(),
        ));
    }
    let sigma = cov_scale.sqrt();
    let n = k * n_per_class;
    let mut features = Matrix::zeros(n, d);
    let mut labels = Vec::with_capacity(n);
    for c in 0..k {
        for i in 0..n_per_class {
            let row = features.row_mut(c * n_per_class + i);
            for (x, &m) in row.iter_mut().zip(means.row(c)) {
                *x = m + sigma * rng.normal();
            }
            labels.push(c);
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    let ds = LabeledDataset::new(features, labels, k, "gaussians");
    Ok(ds.subset(&order, "gaussians".into()))
}
