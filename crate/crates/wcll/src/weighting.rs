//! Complementary-label base rates and loss weights.
//!
//! The base rate of class `j` is inversely proportional to its sample
//! count: `pi_j = (1/alpha_j) / sum_i(1/alpha_i)`. The loss weight inverts
//! that once more, `omega_j = (1/pi_j) / sum_i(1/pi_i)`, which collapses
//! algebraically to `omega = alpha / sum(alpha)` - minority classes get
//! small base rates and small loss weights on their (over-represented)
//! complementary labels.
//!
//! Both maps are evaluated in exact rational arithmetic and rounded to
//! `f64` once at the end. Rounding each entry exactly once means a uniform
//! alpha yields the literal double `1/K`, so the balanced case reduces
//! bit-for-bit to the uniform weighting, and the worked ratios below are
//! exact rather than accumulated-error approximations.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datasets::AlphaVector;
use crate::numerics::SeededRng;

#[derive(Debug, Error)]
pub enum WeightingError {
    #[error("alpha count for class {class} is zero; base rate undefined")]
    ZeroAlpha { class: usize },
    #[error("base rate for class {class} is not positive ({value})")]
    NonPositivePi { class: usize, value: f64 },
    #[error("weight vectors must be nonempty")]
    Empty,
    #[error(
        "weighting invariant violated: {what} sums to {sum} (expected 1 within 1e-12)"
    )]
    NotNormalized { what: &'static str, sum: f64 },
}

/// Per-class base rates `pi` and loss weights `omega`.
///
/// Both sum to one and are nonnegative; their maxima feed the bound module
/// as `pi_K` and `omega_K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeighting {
    pi: Vec<f64>,
    omega: Vec<f64>,
}

impl ClassWeighting {
    /// Validating constructor; both vectors must be nonnegative and sum to
    /// one within 1e-12.
    pub fn new(pi: Vec<f64>, omega: Vec<f64>) -> Result<Self, WeightingError> {
        if pi.is_empty() || omega.is_empty() {
            return Err(WeightingError::Empty);
        }
        for (what, v) in [("pi", &pi), ("omega", &omega)] {
            let sum: f64 = v.iter().sum();
            if (sum - 1.0).abs() > 1e-12 || v.iter().any(|&x| x < 0.0) {
                return Err(WeightingError::NotNormalized { what, sum });
            }
        }
        Ok(ClassWeighting { pi, omega })
    }

    /// Diagnostic constructor that skips the sum-to-one checks. Used by the
    /// raw (unnormalized) perturbation mode and by scale-structure tests;
    /// not part of the training path.
    pub fn raw(pi: Vec<f64>, omega: Vec<f64>) -> Self {
        ClassWeighting { pi, omega }
    }

    /// `pi = omega = 1/K`: the unweighted reduction.
    pub fn uniform(k: usize) -> Self {
        let w = 1.0 / k as f64;
        ClassWeighting {
            pi: vec![w; k],
            omega: vec![w; k],
        }
    }

    /// Both vectors from the sample counts in one exact-rational pass.
    /// `omega` is computed directly as `alpha / sum(alpha)` (the algebraic
    /// composition of the two maps), so the worked ratios hold exactly.
    pub fn from_alpha(alpha: &AlphaVector) -> Result<Self, WeightingError> {
        let pi = compute_pi(alpha)?;
        let total: u64 = alpha.counts().iter().map(|&c| c as u64).sum();
        let total = BigRational::from_integer(BigInt::from(total));
        let omega = alpha
            .counts()
            .iter()
            .map(|&c| {
                (BigRational::from_integer(BigInt::from(c)) / &total)
                    .to_f64()
                    .expect("ratio of counts fits f64")
            })
            .collect();
        Ok(ClassWeighting { pi, omega })
    }

    pub fn k(&self) -> usize {
        self.pi.len()
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    /// `pi_K` of the bound inputs.
    pub fn pi_max(&self) -> f64 {
        self.pi.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `omega_K` of the bound inputs.
    pub fn omega_max(&self) -> f64 {
        self.omega.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Base rates `pi_j = (1/alpha_j) / sum_i (1/alpha_i)`, exact until the
/// final rounding to `f64`.
pub fn compute_pi(alpha: &AlphaVector) -> Result<Vec<f64>, WeightingError> {
    let counts = alpha.counts();
    if counts.is_empty() {
        return Err(WeightingError::Empty);
    }
    if let Some(class) = counts.iter().position(|&c| c == 0) {
        return Err(WeightingError::ZeroAlpha { class });
    }
    let inverses: Vec<BigRational> = counts
        .iter()
        .map(|&c| BigRational::new(BigInt::from(1), BigInt::from(c)))
        .collect();
    let total: BigRational = inverses.iter().sum();
    Ok(inverses
        .iter()
        .map(|inv| (inv / &total).to_f64().expect("base rate fits f64"))
        .collect())
}

/// Loss weights `omega_j = (1/pi_j) / sum_i (1/pi_i)`.
///
/// The incoming `f64` base rates are taken as exact rationals, so a single
/// rounding separates the result from the true ratio.
pub fn compute_omega(pi: &[f64]) -> Result<Vec<f64>, WeightingError> {
    if pi.is_empty() {
        return Err(WeightingError::Empty);
    }
    if let Some(class) = pi.iter().position(|&p| !(p > 0.0)) {
        return Err(WeightingError::NonPositivePi {
            class,
            value: pi[class],
        });
    }
    let inverses: Vec<BigRational> = pi
        .iter()
        .map(|&p| {
            BigRational::from_float(p)
                .expect("finite pi")
                .recip()
        })
        .collect();
    let total: BigRational = inverses.iter().sum();
    Ok(inverses
        .iter()
        .map(|inv| (inv / &total).to_f64().expect("weight fits f64"))
        .collect())
}

/// How to disturb the base rates for the weighting ablations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Perturbation {
    /// `pi'_j = pi_j + bias`, renormalized, weights recomputed from `pi'`.
    Bias { bias: f64 },
    /// Weights drawn uniformly on the probability simplex; base rates kept.
    Random,
}

/// Perturbed weighting for the ablation experiments.
///
/// Bias mode renormalizes `pi + b` before inverting so the result is a
/// valid [`ClassWeighting`]; see [`perturb_weights_raw_bias`] for the
/// unnormalized diagnostic. Random mode replaces `omega` with a uniform
/// simplex draw and leaves `pi` untouched (the protocol randomizes the
/// loss weights, not the assumed label marginal).
pub fn perturb_weights(
    pi: &[f64],
    kind: Perturbation,
    rng: &mut SeededRng,
) -> Result<ClassWeighting, WeightingError> {
    match kind {
        Perturbation::Bias { bias } => {
            let biased: Vec<BigRational> = pi
                .iter()
                .map(|&p| {
                    BigRational::from_float(p).expect("finite pi")
                        + BigRational::from_float(bias).expect("finite bias")
                })
                .collect();
            let total: BigRational = biased.iter().sum();
            if total.is_zero() {
                return Err(WeightingError::Empty);
            }
            let pi_norm: Vec<f64> = biased
                .iter()
                .map(|b| (b / &total).to_f64().expect("fits f64"))
                .collect();
            let omega = compute_omega(&pi_norm)?;
            ClassWeighting::new(pi_norm, omega)
        }
        Perturbation::Random => {
            // Exponential spacings normalized: uniform on the simplex.
            let draws: Vec<f64> = pi.iter().map(|_| -(1.0 - rng.next_f64()).ln()).collect();
            let total: f64 = draws.iter().sum();
            let omega: Vec<f64> = draws.iter().map(|d| d / total).collect();
            Ok(ClassWeighting {
                pi: pi.to_vec(),
                omega,
            })
        }
    }
}

/// Bias perturbation without the renormalization step: `pi'` keeps its raw
/// sum `1 + K*b`. Diagnostic only; the returned value deliberately violates
/// the sum-to-one invariant.
pub fn perturb_weights_raw_bias(pi: &[f64], bias: f64) -> Result<ClassWeighting, WeightingError> {
    let pi_raw: Vec<f64> = pi.iter().map(|&p| p + bias).collect();
    let omega = compute_omega(&pi_raw)?;
    Ok(ClassWeighting::raw(pi_raw, omega))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn alpha(counts: &[usize]) -> AlphaVector {
        AlphaVector::from_counts(counts.to_vec())
    }

    #[test]
    fn pi_worked_example_single_minority() {
        // alpha = (100, 200 x9): sum(1/alpha) = 11/200.
        let mut counts = vec![200; 10];
        counts[0] = 100;
        let pi = compute_pi(&alpha(&counts)).unwrap();
        assert_eq!(pi[0], 2.0 / 11.0);
        for &p in &pi[1..] {
            assert_eq!(p, 1.0 / 11.0);
        }
    }

    #[test]
    fn pi_uniform_alpha_is_exactly_one_over_k() {
        for k in [3usize, 7, 10] {
            let pi = compute_pi(&alpha(&vec![190; k])).unwrap();
            for &p in &pi {
                assert_eq!(p, 1.0 / k as f64);
            }
        }
    }

    #[test]
    fn pi_four_minority_example() {
        // alpha = (500, 100 x4): sum(1/alpha) = 21/500.
        let pi = compute_pi(&alpha(&[500, 100, 100, 100, 100])).unwrap();
        assert_eq!(pi[0], 1.0 / 21.0);
        for &p in &pi[1..] {
            assert_eq!(p, 5.0 / 21.0);
        }
    }

    #[test]
    fn pi_rejects_zero_alpha() {
        let err = compute_pi(&alpha(&[3, 0, 5])).unwrap_err();
        match err {
            WeightingError::ZeroAlpha { class } => assert_eq!(class, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn omega_worked_examples() {
        let omega = compute_omega(&[2.0 / 11.0, 1.0 / 11.0]).unwrap();
        // 1/pi = (5.5, 11); sum = 16.5 -> (1/3, 2/3).
        assert!((omega[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((omega[1] - 2.0 / 3.0).abs() < 1e-15);

        let mut pi = vec![1.0 / 11.0; 10];
        pi[0] = 2.0 / 11.0;
        let omega = compute_omega(&pi).unwrap();
        assert!((omega[0] - 1.0 / 19.0).abs() < 1e-15);
        for &w in &omega[1..] {
            assert!((w - 2.0 / 19.0).abs() < 1e-15);
        }

        let mut pi = vec![5.0 / 21.0; 5];
        pi[0] = 1.0 / 21.0;
        let omega = compute_omega(&pi).unwrap();
        assert!((omega[0] - 5.0 / 9.0).abs() < 1e-15);
        for &w in &omega[1..] {
            assert!((w - 1.0 / 9.0).abs() < 1e-15);
        }
    }

    #[test]
    fn omega_uniform_pi_reduces_to_one_over_k() {
        let omega = compute_omega(&vec![0.25; 4]).unwrap();
        for &w in &omega {
            assert_eq!(w, 0.25);
        }
    }

    #[test]
    fn from_alpha_worked_example_is_exact() {
        let mut counts = vec![200; 10];
        counts[0] = 100;
        let w = ClassWeighting::from_alpha(&alpha(&counts)).unwrap();
        assert_eq!(w.pi()[0], 2.0 / 11.0);
        assert_eq!(w.pi()[1], 1.0 / 11.0);
        assert_eq!(w.omega()[0], 1.0 / 19.0);
        assert_eq!(w.omega()[1], 2.0 / 19.0);
        assert_eq!(w.pi_max(), 2.0 / 11.0);
        assert_eq!(w.omega_max(), 2.0 / 19.0);
    }

    #[test]
    fn from_alpha_uniform_matches_uniform_weighting_bitwise() {
        let w = ClassWeighting::from_alpha(&alpha(&vec![190; 10])).unwrap();
        let u = ClassWeighting::uniform(10);
        assert_eq!(w, u);
    }

    #[test]
    fn bias_zero_is_identity() {
        let mut rng = SeededRng::new(0, 0);
        let pi = compute_pi(&alpha(&[100, 100, 200])).unwrap();
        let perturbed =
            perturb_weights(&pi, Perturbation::Bias { bias: 0.0 }, &mut rng).unwrap();
        assert_eq!(perturbed.pi(), &pi[..]);
        assert_eq!(perturbed.omega(), &compute_omega(&pi).unwrap()[..]);
    }

    #[test]
    fn bias_values_from_ablation_grid_accepted() {
        let mut rng = SeededRng::new(0, 0);
        let pi = compute_pi(&alpha(&[100, 200, 200])).unwrap();
        for b in [0.05, 0.1, 0.15, 0.2, 0.3, 0.5] {
            let w = perturb_weights(&pi, Perturbation::Bias { bias: b }, &mut rng).unwrap();
            let sum_pi: f64 = w.pi().iter().sum();
            let sum_omega: f64 = w.omega().iter().sum();
            assert!((sum_pi - 1.0).abs() < 1e-12);
            assert!((sum_omega - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn random_mode_is_on_the_simplex() {
        let mut rng = SeededRng::new(21, 4);
        let pi = vec![0.25; 4];
        let w = perturb_weights(&pi, Perturbation::Random, &mut rng).unwrap();
        let sum: f64 = w.omega().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(w.omega().iter().all(|&x| x >= 0.0));
        assert_eq!(w.pi(), &pi[..]);
    }

    #[test]
    fn raw_bias_keeps_unnormalized_pi() {
        let pi = vec![0.5, 0.25, 0.25];
        let w = perturb_weights_raw_bias(&pi, 0.1).unwrap();
        let sum_pi: f64 = w.pi().iter().sum();
        assert!((sum_pi - 1.3).abs() < 1e-12);
        let sum_omega: f64 = w.omega().iter().sum();
        assert!((sum_omega - 1.0).abs() < 1e-12);
    }

    proptest! {
        /// omega(pi(alpha)) collapses to alpha / sum(alpha).
        #[test]
        fn composition_identity(
            counts in prop::collection::vec(1usize..100_000, 3..20)
        ) {
            let a = alpha(&counts);
            let pi = compute_pi(&a).unwrap();
            let omega = compute_omega(&pi).unwrap();
            let total: f64 = counts.iter().map(|&c| c as f64).sum();
            for (w, &c) in omega.iter().zip(&counts) {
                prop_assert!((w - c as f64 / total).abs() < 1e-12);
            }
        }

        /// Smaller alpha -> larger pi, smaller omega.
        #[test]
        fn monotonicity(
            counts in prop::collection::vec(1usize..10_000, 3..12)
        ) {
            let a = alpha(&counts);
            let pi = compute_pi(&a).unwrap();
            let omega = compute_omega(&pi).unwrap();
            for i in 0..counts.len() {
                for j in 0..counts.len() {
                    if counts[i] < counts[j] {
                        prop_assert!(pi[i] > pi[j]);
                        prop_assert!(omega[i] < omega[j]);
                    }
                }
            }
        }

        /// Permuting alpha permutes pi and omega identically.
        #[test]
        fn permutation_equivariance(
            counts in prop::collection::vec(1usize..10_000, 3..10),
            rot in 1usize..5,
        ) {
            let k = counts.len();
            let rot = rot % k;
            let mut rotated = counts.clone();
            rotated.rotate_left(rot);
            let pi = compute_pi(&alpha(&counts)).unwrap();
            let pi_rot = compute_pi(&alpha(&rotated)).unwrap();
            for i in 0..k {
                prop_assert_eq!(pi[(i + rot) % k], pi_rot[i]);
            }
        }
    }
}
