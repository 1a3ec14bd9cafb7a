//! Uniform-deviation and estimation-error bounds.
//!
//! With loss bound `L_f`, Lipschitz constant `L_phi`, weight maxima
//! `omega_K`/`pi_K` and Rademacher complexity `R_n`:
//!
//! ```text
//! I         = 2 omega_K L_f  [pi_K (K-1) + K]
//! lemma1    = 2 omega_K L_phi [pi_K (K-1) + K] R_n + sqrt(I^2 ln(4/d) / (2 N_l))
//! theorem1  = 4 omega_K L_phi [pi_K (K-1) + K] R_n + sqrt(2 I^2 ln(4/d) / N_l)
//! ```
//!
//! `theorem1` is exactly twice `lemma1`, term by term. Cross-entropy is
//! unbounded, so `L_f` only exists under a logit clip; [`estimate_lf`]
//! computes the worst case under `|logit| <= c`.
//!
//! The Rademacher complexity of the norm-bounded linear class has a closed
//! form per sign vector, `(B/n) * ||sum_i sigma_i x_i||`, so the estimator
//! is plain Monte Carlo over sign draws. Draws are independent streams of
//! one seed and the reduction order is fixed, so the estimate does not
//! depend on the worker count.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{Matrix, SeededRng};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Error)]
pub enum BoundError {
    #[error("bound input {name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("confidence delta must lie in (0, 1), got {0}")]
    BadDelta(f64),
}

/// Everything the two bounds need.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundInput {
    /// Number of classes.
    pub k: usize,
    /// Training sample count.
    pub n_l: usize,
    /// Confidence level in (0, 1).
    pub delta: f64,
    /// Upper bound on the base loss.
    pub l_f: f64,
    /// Lipschitz constant of the surrogate.
    pub l_phi: f64,
    /// Largest loss weight.
    pub omega_max: f64,
    /// Largest base rate.
    pub pi_max: f64,
    /// Rademacher complexity estimate for the hypothesis class.
    pub rademacher: f64,
}

impl BoundInput {
    fn validate(&self) -> Result<(), BoundError> {
        for (name, value) in [
            ("k", self.k as f64),
            ("n_l", self.n_l as f64),
            ("l_f", self.l_f),
            ("l_phi", self.l_phi),
            ("omega_max", self.omega_max),
            ("pi_max", self.pi_max),
        ] {
            if !(value > 0.0) {
                return Err(BoundError::NonPositive { name, value });
            }
        }
        if self.rademacher < 0.0 {
            return Err(BoundError::NonPositive {
                name: "rademacher",
                value: self.rademacher,
            });
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(BoundError::BadDelta(self.delta));
        }
        Ok(())
    }
}

/// Evaluated bounds plus an echo of their inputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundReport {
    pub i_constant: f64,
    pub lemma1_bound: f64,
    pub theorem1_bound: f64,
    pub input: BoundInput,
}

fn capacity_factor(input: &BoundInput) -> f64 {
    input.pi_max * (input.k as f64 - 1.0) + input.k as f64
}

/// `I = 2 omega_K L_f [pi_K (K-1) + K]`.
pub fn compute_i(input: &BoundInput) -> Result<f64, BoundError> {
    input.validate()?;
    Ok(2.0 * input.omega_max * input.l_f * capacity_factor(input))
}

/// Uniform deviation bound holding with probability `1 - delta/2`.
pub fn lemma1_bound(input: &BoundInput) -> Result<f64, BoundError> {
    let i = compute_i(input)?;
    let complexity = 2.0 * input.omega_max * input.l_phi * capacity_factor(input) * input.rademacher;
    let deviation = (i * i * (4.0 / input.delta).ln() / (2.0 * input.n_l as f64)).sqrt();
    Ok(complexity + deviation)
}

/// Estimation error bound: both lemma terms doubled.
pub fn theorem1_bound(input: &BoundInput) -> Result<f64, BoundError> {
    let i = compute_i(input)?;
    let complexity = 4.0 * input.omega_max * input.l_phi * capacity_factor(input) * input.rademacher;
    let deviation = (2.0 * i * i * (4.0 / input.delta).ln() / input.n_l as f64).sqrt();
    Ok(complexity + deviation)
}

pub fn bound_report(input: &BoundInput) -> Result<BoundReport, BoundError> {
    Ok(BoundReport {
        i_constant: compute_i(input)?,
        lemma1_bound: lemma1_bound(input)?,
        theorem1_bound: theorem1_bound(input)?,
        input: input.clone(),
    })
}

/// Worst-case softmax cross-entropy under the box constraint
/// `|logit| <= clip`: the true-class logit at `-clip`, all others at
/// `+clip`, giving `2c + ln(K - 1 + exp(-2c))`. At `clip = 0` this is
/// `ln K`.
pub fn estimate_lf(k: usize, clip: f64) -> f64 {
    assert!(k >= 2, "need at least two classes");
    assert!(clip >= 0.0, "clip must be nonnegative");
    2.0 * clip + ((k as f64 - 1.0) + (-2.0 * clip).exp()).ln()
}

/// Monte-Carlo estimate of the empirical Rademacher complexity of the
/// linear class `{x -> <w, x> : ||w|| <= norm_bound}`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RademacherEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub draws: usize,
}

/// For each sign vector the supremum is attained in closed form at
/// `w = B * s / ||s||` with `s = sum_i sigma_i x_i`, so one draw costs one
/// pass over the matrix.
pub fn rademacher_linear(
    features: &Matrix,
    norm_bound: f64,
    draws: usize,
    rng: &SeededRng,
) -> RademacherEstimate {
    assert!(features.rows() >= 1, "need at least one sample");
    assert!(norm_bound > 0.0, "norm bound must be positive");
    assert!(draws >= 1, "need at least one draw");

    let one_draw = |stream: u64| -> f64 {
        let mut draw_rng = rng.child(rng.stream().wrapping_add(1 + stream));
        signed_sum_norm(features, &mut draw_rng) * norm_bound / features.rows() as f64
    };

    #[cfg(feature = "parallel")]
    let values: Vec<f64> = (0..draws as u64).into_par_iter().map(one_draw).collect();
    #[cfg(not(feature = "parallel"))]
    let values: Vec<f64> = (0..draws as u64).map(one_draw).collect();

    let mean = values.iter().sum::<f64>() / draws as f64;
    let std_err = if draws > 1 {
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / (draws as f64 - 1.0);
        (var / draws as f64).sqrt()
    } else {
        0.0
    };
    RademacherEstimate {
        mean,
        std_err,
        draws,
    }
}

/// `|| sum_i sigma_i x_i ||_2` for one uniform sign draw.
fn signed_sum_norm(features: &Matrix, rng: &mut SeededRng) -> f64 {
    let d = features.cols();
    let mut acc = vec![0.0f64; d];
    for i in 0..features.rows() {
        let sign = if rng.next_u64() & 1 == 1 { 1.0 } else { -1.0 };
        for (a, &x) in acc.iter_mut().zip(features.row(i)) {
            *a += sign * x;
        }
    }
    acc.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Exhaustive mean over all `2^n` sign vectors; the oracle for small n.
pub fn rademacher_linear_exact(features: &Matrix, norm_bound: f64) -> f64 {
    let n = features.rows();
    assert!(n <= 20, "exact enumeration is exponential in n");
    let d = features.cols();
    let mut total = 0.0;
    for mask in 0u64..(1u64 << n) {
        let mut acc = vec![0.0f64; d];
        for i in 0..n {
            let sign = if mask >> i & 1 == 1 { 1.0 } else { -1.0 };
            for (a, &x) in acc.iter_mut().zip(features.row(i)) {
                *a += sign * x;
            }
        }
        total += acc.iter().map(|a| a * a).sum::<f64>().sqrt();
    }
    total / (1u64 << n) as f64 * norm_bound / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn worked_input() -> BoundInput {
        BoundInput {
            k: 10,
            n_l: 1900,
            delta: 0.05,
            l_f: 5.0,
            l_phi: 1.0,
            omega_max: 2.0 / 19.0,
            pi_max: 2.0 / 11.0,
            rademacher: 0.01,
        }
    }

    #[test]
    fn i_constant_worked_example() {
        // 2 * (2/19) * 5 * ((2/11)*9 + 10) = 2560/209.
        let i = compute_i(&worked_input()).unwrap();
        let expected = 2560.0 / 209.0;
        assert!((i - expected).abs() < 1e-12 * expected, "got {i}");
        assert!((i - 12.249).abs() < 1e-3);
    }

    #[test]
    fn i_constant_balanced_case() {
        let k = 4;
        let input = BoundInput {
            k,
            n_l: 100,
            delta: 0.1,
            l_f: 1.0,
            l_phi: 1.0,
            omega_max: 1.0 / k as f64,
            pi_max: 1.0 / k as f64,
            rademacher: 0.0,
        };
        let i = compute_i(&input).unwrap();
        let expected = 2.0 / k as f64 * ((k as f64 - 1.0) / k as f64 + k as f64);
        assert!((i - expected).abs() < 1e-14);
    }

    #[test]
    fn i_constant_linear_in_lf() {
        let mut input = worked_input();
        let base = compute_i(&input).unwrap();
        input.l_f *= 2.0;
        assert_eq!(compute_i(&input).unwrap(), 2.0 * base);
    }

    #[test]
    fn i_constant_rejects_nonpositive() {
        let mut input = worked_input();
        input.l_f = 0.0;
        assert!(matches!(
            compute_i(&input),
            Err(BoundError::NonPositive { name: "l_f", .. })
        ));
        let mut input = worked_input();
        input.delta = 1.0;
        assert!(matches!(compute_i(&input), Err(BoundError::BadDelta(_))));
    }

    #[test]
    fn lemma1_worked_example_frozen_arithmetic() {
        // First term: 2*(2/19)*1*(128/11)*0.01; second:
        // sqrt(I^2 ln 80 / 3800) with I = 2560/209. Evaluated once by hand
        // with exact rationals and frozen here.
        let b = lemma1_bound(&worked_input()).unwrap();
        let first = 2.0 * (2.0 / 19.0) * (128.0 / 11.0) * 0.01;
        let i = 2560.0 / 209.0;
        let second = (i * i * 80.0f64.ln() / 3800.0).sqrt();
        assert!((b - (first + second)).abs() < 1e-12);
        assert!((b - 0.44044594).abs() < 1e-6, "got {b}");
    }

    #[test]
    fn lemma1_vanishes_in_the_limit() {
        let mut input = worked_input();
        input.rademacher = 0.0;
        input.n_l = 1_000_000_000_000;
        let b = lemma1_bound(&input).unwrap();
        let i = compute_i(&input).unwrap();
        assert!(b < 1e-5 * i, "bound {b} vs I {i}");
    }

    #[test]
    fn lemma1_deviation_halves_when_n_quadruples() {
        let mut input = worked_input();
        input.rademacher = 0.0;
        let b1 = lemma1_bound(&input).unwrap();
        input.n_l *= 4;
        let b2 = lemma1_bound(&input).unwrap();
        assert!((b1 - 2.0 * b2).abs() < 1e-12 * b1);
    }

    #[test]
    fn theorem1_is_twice_lemma1_termwise() {
        let input = worked_input();
        let lemma = lemma1_bound(&input).unwrap();
        let theorem = theorem1_bound(&input).unwrap();
        assert!((theorem - 2.0 * lemma).abs() < 1e-12 * theorem);
        assert!((theorem - 0.88089188).abs() < 1e-6, "got {theorem}");
    }

    #[test]
    fn theorem1_scales_as_inverse_sqrt_n() {
        // With R_n = c / sqrt(N), bound * sqrt(N) is constant.
        let c = 0.35;
        let eval = |n_l: usize| {
            let mut input = worked_input();
            input.n_l = n_l;
            input.rademacher = c / (n_l as f64).sqrt();
            theorem1_bound(&input).unwrap() * (n_l as f64).sqrt()
        };
        let a = eval(1000);
        let b = eval(4000);
        let c2 = eval(16_000);
        assert!((a - b).abs() < 1e-12 * a, "{a} vs {b}");
        assert!((a - c2).abs() < 1e-12 * a);
    }

    #[test]
    fn estimate_lf_closed_form() {
        assert!((estimate_lf(10, 0.0) - 10f64.ln()).abs() < 1e-15);
        assert!((estimate_lf(4, 0.0) - 4f64.ln()).abs() < 1e-15);
        let v = estimate_lf(10, 10.0);
        assert!((v - (20.0 + 9f64.ln())).abs() < 1e-8, "got {v}");
        // Monotone in the clip.
        let mut last = 0.0;
        for c in [0.0, 0.5, 1.0, 2.0, 5.0] {
            let v = estimate_lf(5, c);
            assert!(v > last);
            last = v;
        }
    }

    #[test]
    fn rademacher_single_point_is_exact() {
        let features = Matrix::from_vec(1, 2, vec![1.0, 0.0]);
        let est = rademacher_linear(&features, 1.0, 64, &SeededRng::new(1, 0));
        assert_eq!(est.mean, 1.0);
        assert_eq!(est.std_err, 0.0);
    }

    #[test]
    fn rademacher_two_identical_points() {
        // |s1 + s2| is 0 or 2 with equal probability -> mean norm 1,
        // estimate = B/n * 1 = 0.5.
        let features = Matrix::from_vec(2, 2, vec![1.0, 0.0, 1.0, 0.0]);
        let exact = rademacher_linear_exact(&features, 1.0);
        assert!((exact - 0.5).abs() < 1e-15);
        let est = rademacher_linear(&features, 1.0, 4000, &SeededRng::new(2, 0));
        assert!((est.mean - 0.5).abs() < 4.0 * est.std_err + 1e-12);
    }

    #[test]
    fn rademacher_matches_exhaustive_enumeration() {
        let mut rng = SeededRng::new(3, 0);
        for n in [5usize, 9, 12] {
            let data: Vec<f64> = (0..n * 3).map(|_| rng.next_f64() * 2.0 - 1.0).collect();
            let features = Matrix::from_vec(n, 3, data);
            let exact = rademacher_linear_exact(&features, 2.0);
            let est = rademacher_linear(&features, 2.0, 20_000, &SeededRng::new(100 + n as u64, 7));
            assert!(
                (est.mean - exact).abs() < 4.0 * est.std_err + 1e-12,
                "n={n}: {} vs {exact} (stderr {})",
                est.mean,
                est.std_err
            );
        }
    }

    #[test]
    fn rademacher_scales_as_inverse_sqrt_n() {
        // Unit-norm rows in moderate dimension: estimate ~ B/sqrt(n).
        let d = 16;
        let mut rng = SeededRng::new(9, 0);
        let mut make = |n: usize| {
            let mut m = Matrix::zeros(n, d);
            for i in 0..n {
                let row: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                for (j, v) in row.iter().enumerate() {
                    m.set(i, j, v / norm);
                }
            }
            m
        };
        let small = make(64);
        let large = make(256);
        let est_small = rademacher_linear(&small, 1.0, 10_000, &SeededRng::new(10, 0));
        let est_large = rademacher_linear(&large, 1.0, 10_000, &SeededRng::new(11, 0));
        let ratio = est_small.mean / est_large.mean;
        assert!((ratio - 2.0).abs() < 0.3, "ratio {ratio}");
    }

    #[test]
    fn rademacher_deterministic_given_seed() {
        let features = Matrix::from_vec(3, 2, vec![0.5, -1.0, 2.0, 0.3, -0.7, 1.1]);
        let a = rademacher_linear(&features, 1.0, 500, &SeededRng::new(42, 3));
        let b = rademacher_linear(&features, 1.0, 500, &SeededRng::new(42, 3));
        assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        assert_eq!(a.std_err.to_bits(), b.std_err.to_bits());
    }
}
