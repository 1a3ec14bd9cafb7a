//! Dense row-major matrices, reproducible RNG streams, numerically stable
//! softmax, and a central-difference gradient oracle.
//!
//! Everything here is `f64`; gradient checks elsewhere in the crate need the
//! headroom even though reported accuracies live at percent scale.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("non-finite logits")]
    NonFiniteLogits,
    #[error("function returned non-finite value at coordinate {coordinate}")]
    NonFiniteEval { coordinate: usize },
    #[error("step size must be positive, got {0}")]
    NonPositiveStep(f64),
}

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Row count below which `matmul` stays sequential even with the
/// `parallel` feature on; tiny products are not worth the fan-out.
#[cfg(feature = "parallel")]
const PAR_MIN_ROWS: usize = 64;

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Wrap an existing row-major buffer. Panics if the length is not
    /// `rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(
            data.len(),
            rows * cols,
            "matrix buffer length {} != {}x{}",
            data.len(),
            rows,
            cols
        );
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    /// New matrix whose rows are `indices`-selected rows of `self`.
    pub fn gather_rows(&self, indices: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(indices.len(), self.cols);
        for (r, &i) in indices.iter().enumerate() {
            out.row_mut(r).copy_from_slice(self.row(i));
        }
        out
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// `self * rhs`. Parallel over output rows when the `parallel` feature
    /// is enabled and the product is large enough; each output row is
    /// produced by the same sequential kernel either way, so the result is
    /// bitwise identical to [`Matrix::matmul_seq`].
    pub fn matmul(&self, rhs: &Matrix) -> Matrix {
        assert_eq!(
            self.cols, rhs.rows,
            "matmul inner dimension mismatch: {}x{} * {}x{}",
            self.rows, self.cols, rhs.rows, rhs.cols
        );
        #[cfg(feature = "parallel")]
        if self.rows >= PAR_MIN_ROWS {
            let mut out = Matrix::zeros(self.rows, rhs.cols);
            out.data
                .par_chunks_mut(rhs.cols)
                .zip(self.data.par_chunks(self.cols))
                .for_each(|(out_row, a_row)| matmul_row(a_row, rhs, out_row));
            return out;
        }
        self.matmul_seq(rhs)
    }

    /// Single-threaded matrix product; always available for benchmarks and
    /// as the fallback when `parallel` is disabled.
    pub fn matmul_seq(&self, rhs: &Matrix) -> Matrix {
        assert_eq!(
            self.cols, rhs.rows,
            "matmul inner dimension mismatch: {}x{} * {}x{}",
            self.rows, self.cols, rhs.rows, rhs.cols
        );
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            matmul_row(self.row(i), rhs, out.row_mut(i));
        }
        out
    }

    /// Column sums as a length-`cols` vector.
    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (o, &v) in out.iter_mut().zip(self.row(i)) {
                *o += v;
            }
        }
        out
    }
}

/// `out_row += a_row * rhs` for one output row (i-k-j order).
fn matmul_row(a_row: &[f64], rhs: &Matrix, out_row: &mut [f64]) {
    for (k, &a) in a_row.iter().enumerate() {
        if a == 0.0 {
            continue;
        }
        let rhs_row = rhs.row(k);
        for (o, &b) in out_row.iter_mut().zip(rhs_row) {
            *o += a * b;
        }
    }
}

/// Log-softmax with max subtraction, so arbitrarily large logits do not
/// overflow.
///
/// Output `o` satisfies `sum(exp(o)) = 1` and is invariant to adding a
/// constant to every logit. Errors on non-finite input.
pub fn log_softmax(logits: &[f64]) -> Result<Vec<f64>, NumericsError> {
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(NumericsError::NonFiniteLogits);
    }
    let mut out = vec![0.0; logits.len()];
    log_softmax_into(logits, &mut out);
    Ok(out)
}

/// Unchecked log-softmax kernel for hot loops; callers guarantee finite
/// input of matching length.
pub(crate) fn log_softmax_into(logits: &[f64], out: &mut [f64]) {
    debug_assert_eq!(logits.len(), out.len());
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = l - max;
        sum += o.exp();
    }
    let lse = sum.ln();
    for o in out.iter_mut() {
        *o -= lse;
    }
}

/// Central-difference gradient `(f(x + h e_i) - f(x - h e_i)) / 2h`.
///
/// The independent oracle against which every analytic gradient in this
/// crate is checked.
pub fn finite_diff_grad<F>(f: F, point: &[f64], h: f64) -> Result<Vec<f64>, NumericsError>
where
    F: Fn(&[f64]) -> f64,
{
    if !(h > 0.0) {
        return Err(NumericsError::NonPositiveStep(h));
    }
    let mut x = point.to_vec();
    let mut grad = vec![0.0; point.len()];
    for i in 0..point.len() {
        let orig = x[i];
        x[i] = orig + h;
        let up = f(&x);
        x[i] = orig - h;
        let down = f(&x);
        x[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(NumericsError::NonFiniteEval { coordinate: i });
        }
        grad[i] = (up - down) / (2.0 * h);
    }
    Ok(grad)
}

/// Reproducible random stream.
///
/// Backed by ChaCha8, a counter-based generator: identical `(seed, stream)`
/// pairs produce identical draw sequences on every platform. Parallel work
/// derives child streams with distinct stream ids instead of sharing one
/// generator. All derived draws (floats, ranges, shuffles, normals) are
/// implemented here on top of the raw 64-bit output so their byte-level
/// behaviour is pinned by this crate, not by a dependency's sampling code.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        SeededRng {
            seed,
            stream,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Fresh generator with the same seed and a different stream id.
    pub fn child(&self, stream: u64) -> Self {
        SeededRng::new(self.seed, stream)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 53-bit resolution.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `0..n` via rejection sampling (unbiased). Panics on `n = 0`.
    pub fn range(&mut self, n: usize) -> usize {
        assert!(n > 0, "range over empty interval");
        let n = n as u64;
        loop {
            let v = self.next_u64();
            let r = v % n;
            // Accept unless v falls in the final partial block.
            if v - r <= u64::MAX - (n - 1) {
                return r as usize;
            }
        }
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.range(i + 1);
            xs.swap(i, j);
        }
    }

    /// `k` distinct indices drawn uniformly from `0..n`, in draw order.
    pub fn sample_without_replacement(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n, "cannot draw {k} distinct items from {n}");
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.range(n - i);
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }

    /// Standard normal via Box-Muller (two uniforms per draw, no cached
    /// spare, so the stream position is a pure function of the draw count).
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64(); // (0, 1]
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}
