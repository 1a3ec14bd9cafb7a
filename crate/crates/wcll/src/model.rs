//! Differentiable K-logit scorers: a linear map and a one-hidden-layer
//! rectifier network, with exact parameter gradients.
//!
//! Checkpoint format (all little-endian): 8-byte magic `WCLLCKP1`, one
//! architecture tag byte (0 = linear, 1 = mlp), the u32 dimensions
//! (`d, k` or `d, h, k`), then each tensor as row-major f64 in declaration
//! order (`w, b` / `w1, b1, w2, b2`).

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{Matrix, SeededRng};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("feature width {got} does not match model input dimension {expected}")]
    InputDimMismatch { expected: usize, got: usize },
    #[error("upstream gradient is {got_rows}x{got_cols}, expected {rows}x{cols}")]
    UpstreamShapeMismatch {
        rows: usize,
        cols: usize,
        got_rows: usize,
        got_cols: usize,
    },
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },
    #[error("checkpoint {path}: {source}")]
    CheckpointIo {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Scorer shape. `Mlp` has one rectified hidden layer of width `h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "arch")]
pub enum Architecture {
    Linear { d: usize, k: usize },
    Mlp { d: usize, h: usize, k: usize },
}

impl Architecture {
    pub fn input_dim(&self) -> usize {
        match *self {
            Architecture::Linear { d, .. } | Architecture::Mlp { d, .. } => d,
        }
    }

    pub fn num_classes(&self) -> usize {
        match *self {
            Architecture::Linear { k, .. } | Architecture::Mlp { k, .. } => k,
        }
    }
}

/// Model parameters; tensors are laid out so that `forward` is
/// `x*w + b` (linear) or `relu(x*w1 + b1)*w2 + b2` (mlp).
#[derive(Debug, Clone)]
pub enum ModelParams {
    Linear {
        w: Matrix,
        b: Vec<f64>,
    },
    Mlp {
        w1: Matrix,
        b1: Vec<f64>,
        w2: Matrix,
        b2: Vec<f64>,
    },
}

/// Parameter gradients, same shapes as [`ModelParams`].
pub type ParamGrads = ModelParams;

impl ModelParams {
    pub fn architecture(&self) -> Architecture {
        match self {
            ModelParams::Linear { w, .. } => Architecture::Linear {
                d: w.rows(),
                k: w.cols(),
            },
            ModelParams::Mlp { w1, w2, .. } => Architecture::Mlp {
                d: w1.rows(),
                h: w1.cols(),
                k: w2.cols(),
            },
        }
    }

    pub fn zeros_like(arch: Architecture) -> ModelParams {
        match arch {
            Architecture::Linear { d, k } => ModelParams::Linear {
                w: Matrix::zeros(d, k),
                b: vec![0.0; k],
            },
            Architecture::Mlp { d, h, k } => ModelParams::Mlp {
                w1: Matrix::zeros(d, h),
                b1: vec![0.0; h],
                w2: Matrix::zeros(h, k),
                b2: vec![0.0; k],
            },
        }
    }

    /// Flat views of every tensor, in a fixed order shared with
    /// [`ParamGrads`] and the optimizer state.
    pub fn tensors(&self) -> Vec<&[f64]> {
        match self {
            ModelParams::Linear { w, b } => vec![w.data(), b],
            ModelParams::Mlp { w1, b1, w2, b2 } => vec![w1.data(), b1, w2.data(), b2],
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            ModelParams::Linear { w, b } => vec![w.data_mut(), b],
            ModelParams::Mlp { w1, b1, w2, b2 } => {
                vec![w1.data_mut(), b1, w2.data_mut(), b2]
            }
        }
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

/// Fan-in-scaled uniform init `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` for
/// weights, zeros for biases. Deterministic given the rng state.
pub fn init_params(arch: Architecture, rng: &mut SeededRng) -> ModelParams {
    fn uniform_fan_in(rows: usize, cols: usize, rng: &mut SeededRng) -> Matrix {
        let bound = 1.0 / (rows as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| (2.0 * rng.next_f64() - 1.0) * bound)
            .collect();
        Matrix::from_vec(rows, cols, data)
    }
    match arch {
        Architecture::Linear { d, k } => ModelParams::Linear {
            w: uniform_fan_in(d, k, rng),
            b: vec![0.0; k],
        },
        Architecture::Mlp { d, h, k } => ModelParams::Mlp {
            w1: uniform_fan_in(d, h, rng),
            b1: vec![0.0; h],
            w2: uniform_fan_in(h, k, rng),
            b2: vec![0.0; k],
        },
    }
}

fn add_bias(m: &mut Matrix, bias: &[f64]) {
    for i in 0..m.rows() {
        for (v, &b) in m.row_mut(i).iter_mut().zip(bias) {
            *v += b;
        }
    }
}

/// Logits for a batch of feature rows: `n x d -> n x K`.
pub fn forward(params: &ModelParams, features: &Matrix) -> Result<Matrix, ModelError> {
    let d = params.architecture().input_dim();
    if features.cols() != d {
        return Err(ModelError::InputDimMismatch {
            expected: d,
            got: features.cols(),
        });
    }
    Ok(match params {
        ModelParams::Linear { w, b } => {
            let mut logits = features.matmul(w);
            add_bias(&mut logits, b);
            logits
        }
        ModelParams::Mlp { w1, b1, w2, b2 } => {
            let mut hidden = features.matmul(w1);
            add_bias(&mut hidden, b1);
            for v in hidden.data_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            let mut logits = hidden.matmul(w2);
            add_bias(&mut logits, b2);
            logits
        }
    })
}

/// Chain-rule parameter gradients given `upstream = d risk / d logits`
/// (`n x K`). Weight decay is not included here; that belongs to the
/// optimizer. The MLP recomputes its hidden activations from `features`.
pub fn backward(
    params: &ModelParams,
    features: &Matrix,
    upstream: &Matrix,
) -> Result<ParamGrads, ModelError> {
    let arch = params.architecture();
    if features.cols() != arch.input_dim() {
        return Err(ModelError::InputDimMismatch {
            expected: arch.input_dim(),
            got: features.cols(),
        });
    }
    if upstream.rows() != features.rows() || upstream.cols() != arch.num_classes() {
        return Err(ModelError::UpstreamShapeMismatch {
            rows: features.rows(),
            cols: arch.num_classes(),
            got_rows: upstream.rows(),
            got_cols: upstream.cols(),
        });
    }
    Ok(match params {
        ModelParams::Linear { .. } => ParamGrads::Linear {
            w: features.transpose().matmul(upstream),
            b: upstream.col_sums(),
        },
        ModelParams::Mlp { w1, b1, w2, .. } => {
            let mut pre = features.matmul(w1);
            add_bias(&mut pre, b1);
            let mut hidden = pre.clone();
            for v in hidden.data_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            let grad_w2 = hidden.transpose().matmul(upstream);
            let grad_b2 = upstream.col_sums();
            let mut grad_hidden = upstream.matmul(&w2.transpose());
            for (g, &p) in grad_hidden.data_mut().iter_mut().zip(pre.data()) {
                if p <= 0.0 {
                    *g = 0.0;
                }
            }
            ParamGrads::Mlp {
                w1: features.transpose().matmul(&grad_hidden),
                b1: grad_hidden.col_sums(),
                w2: grad_w2,
                b2: grad_b2,
            }
        }
    })
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"WCLLCKP1";

pub fn save_checkpoint(params: &ModelParams, path: impl AsRef<Path>) -> Result<(), ModelError> {
    let path = path.as_ref();
    let io_err = |source| ModelError::CheckpointIo {
        path: path.to_path_buf(),
        source,
    };
    let file = std::fs::File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    (|| -> std::io::Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        match params.architecture() {
            Architecture::Linear { d, k } => {
                w.write_u8(0)?;
                w.write_u32::<LittleEndian>(d as u32)?;
                w.write_u32::<LittleEndian>(k as u32)?;
            }
            Architecture::Mlp { d, h, k } => {
                w.write_u8(1)?;
                w.write_u32::<LittleEndian>(d as u32)?;
                w.write_u32::<LittleEndian>(h as u32)?;
                w.write_u32::<LittleEndian>(k as u32)?;
            }
        }
        for tensor in params.tensors() {
            for &v in tensor {
                w.write_f64::<LittleEndian>(v)?;
            }
        }
        w.flush()
    })()
    .map_err(io_err)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams, ModelError> {
    let path = path.as_ref();
    let io_err = |source| ModelError::CheckpointIo {
        path: path.to_path_buf(),
        source,
    };
    let file = std::fs::File::open(path).map_err(io_err)?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(ModelError::Checkpoint {
            path: path.to_path_buf(),
            message: format!("bad magic {magic:?}"),
        });
    }
    (|| -> std::io::Result<ModelParams> {
        let tag = r.read_u8()?;
        let arch = match tag {
            0 => {
                let d = r.read_u32::<LittleEndian>()? as usize;
                let k = r.read_u32::<LittleEndian>()? as usize;
                Architecture::Linear { d, k }
            }
            1 => {
                let d = r.read_u32::<LittleEndian>()? as usize;
                let h = r.read_u32::<LittleEndian>()? as usize;
                let k = r.read_u32::<LittleEndian>()? as usize;
                Architecture::Mlp { d, h, k }
            }
            other => {
                return Err(std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    format!("unknown architecture tag {other}"),
                ))
            }
        };
        let mut params = ModelParams::zeros_like(arch);
        for tensor in params.tensors_mut() {
            r.read_f64_into::<LittleEndian>(tensor)?;
        }
        Ok(params)
    })()
    .map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::{empirical_risk, LossConfig, LossVariant};
    use crate::numerics::finite_diff_grad;
    use crate::weighting::ClassWeighting;

    #[test]
    fn zero_params_give_zero_logits() {
        let params = ModelParams::zeros_like(Architecture::Linear { d: 3, k: 4 });
        let x = Matrix::from_vec(2, 3, vec![1.0, -2.0, 0.5, 0.0, 3.0, 1.0]);
        let logits = forward(&params, &x).unwrap();
        assert!(logits.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_hand_example() {
        let params = ModelParams::Linear {
            w: Matrix::from_vec(1, 2, vec![1.0, -1.0]),
            b: vec![0.0, 0.0],
        };
        let logits = forward(&params, &Matrix::from_vec(1, 1, vec![2.0])).unwrap();
        assert_eq!(logits.row(0), &[2.0, -2.0]);
    }

    #[test]
    fn mlp_with_zero_hidden_weights_is_constant() {
        let mut params = ModelParams::zeros_like(Architecture::Mlp { d: 2, h: 3, k: 2 });
        if let ModelParams::Mlp { w2, b2, .. } = &mut params {
            w2.data_mut().fill(0.7);
            b2[0] = -1.0;
        }
        let a = forward(&params, &Matrix::from_vec(1, 2, vec![5.0, -3.0])).unwrap();
        let b = forward(&params, &Matrix::from_vec(1, 2, vec![-9.0, 2.0])).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn forward_names_dimension_mismatch() {
        let params = ModelParams::zeros_like(Architecture::Linear { d: 3, k: 2 });
        let err = forward(&params, &Matrix::zeros(1, 4)).unwrap_err();
        assert!(matches!(
            err,
            ModelError::InputDimMismatch {
                expected: 3,
                got: 4
            }
        ));
    }

    #[test]
    fn last_layer_positively_homogeneous() {
        let mut rng = SeededRng::new(2, 0);
        let mut params = init_params(Architecture::Mlp { d: 3, h: 4, k: 2 }, &mut rng);
        let x = Matrix::from_vec(2, 3, vec![0.3, -1.0, 0.5, 1.2, 0.1, -0.4]);
        let base = forward(&params, &x).unwrap();
        if let ModelParams::Mlp { w2, b2, .. } = &mut params {
            for v in w2.data_mut() {
                *v *= 2.0;
            }
            for v in b2.iter_mut() {
                *v *= 2.0;
            }
        }
        let doubled = forward(&params, &x).unwrap();
        for (a, b) in base.data().iter().zip(doubled.data()) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_upstream_zero_grads() {
        let mut rng = SeededRng::new(3, 0);
        let params = init_params(Architecture::Mlp { d: 2, h: 3, k: 2 }, &mut rng);
        let x = Matrix::from_vec(2, 2, vec![1.0, 2.0, -1.0, 0.5]);
        let grads = backward(&params, &x, &Matrix::zeros(2, 2)).unwrap();
        for t in grads.tensors() {
            assert!(t.iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn duplicated_sample_doubles_contribution() {
        let mut rng = SeededRng::new(4, 0);
        let params = init_params(Architecture::Linear { d: 2, k: 3 }, &mut rng);
        let x1 = Matrix::from_vec(1, 2, vec![0.5, -1.5]);
        let x2 = Matrix::from_vec(2, 2, vec![0.5, -1.5, 0.5, -1.5]);
        let g = Matrix::from_vec(1, 3, vec![0.1, -0.2, 0.3]);
        let g2 = Matrix::from_vec(2, 3, vec![0.1, -0.2, 0.3, 0.1, -0.2, 0.3]);
        let once = backward(&params, &x1, &g).unwrap();
        let twice = backward(&params, &x2, &g2).unwrap();
        for (a, b) in once.tensors().iter().zip(twice.tensors()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((2.0 * x - y).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn init_is_deterministic_and_shaped() {
        let arch = Architecture::Linear { d: 784, k: 10 };
        let a = init_params(arch, &mut SeededRng::new(7, 1));
        let b = init_params(arch, &mut SeededRng::new(7, 1));
        match (&a, &b) {
            (ModelParams::Linear { w: wa, b: ba }, ModelParams::Linear { w: wb, b: bb }) => {
                assert_eq!(wa.data(), wb.data());
                assert_eq!(ba, bb);
                assert_eq!((wa.rows(), wa.cols()), (784, 10));
                assert_eq!(ba.len(), 10);
                assert!(ba.iter().all(|&v| v == 0.0));
            }
            _ => panic!("expected linear"),
        }
    }

    #[test]
    fn init_weight_std_matches_fan_in_target() {
        // U(-s, s) with s = 1/sqrt(fan_in) has std s/sqrt(3).
        let fan_in = 100;
        let params = init_params(
            Architecture::Linear { d: fan_in, k: 100 },
            &mut SeededRng::new(11, 0),
        );
        let w = match &params {
            ModelParams::Linear { w, .. } => w,
            _ => unreachable!(),
        };
        let n = w.data().len() as f64;
        let mean = w.data().iter().sum::<f64>() / n;
        let std = (w.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
        let target = 1.0 / (fan_in as f64).sqrt() / 3f64.sqrt();
        assert!(
            (std - target).abs() < 0.2 * target,
            "std {std} vs target {target}"
        );
    }

    #[test]
    fn backward_matches_finite_differences_through_risk() {
        let mut rng = SeededRng::new(23, 0);
        for trial in 0..20 {
            let d = 1 + rng.range(4);
            let k = 3 + rng.range(2);
            let n = 1 + rng.range(5);
            let arch = if trial % 2 == 0 {
                Architecture::Linear { d, k }
            } else {
                Architecture::Mlp { d, h: 3, k }
            };
            let params = init_params(arch, &mut rng);
            let x = Matrix::from_vec(
                n,
                d,
                (0..n * d).map(|_| rng.next_f64() * 2.0 - 1.0).collect(),
            );
            let labels: Vec<usize> = (0..n).map(|_| rng.range(k)).collect();
            let cfg = LossConfig::new(LossVariant::WcllEq12, ClassWeighting::uniform(k), false);

            let logits = forward(&params, &x).unwrap();
            let upstream = crate::loss::risk_gradient(&logits, &labels, &cfg).unwrap();
            let grads = backward(&params, &x, &upstream).unwrap();

            // Finite differences through forward + risk, one tensor at a time.
            for (t_idx, tensor) in grads.tensors().iter().enumerate() {
                let flat: Vec<f64> = params.tensors()[t_idx].to_vec();
                let numeric = finite_diff_grad(
                    |vals| {
                        let mut p = params.clone();
                        p.tensors_mut()[t_idx].copy_from_slice(vals);
                        let lg = forward(&p, &x).unwrap();
                        empirical_risk(&lg, &labels, &cfg).unwrap()
                    },
                    &flat,
                    1e-6,
                )
                .unwrap();
                for (a, b) in tensor.iter().zip(&numeric) {
                    let scale = a.abs().max(b.abs()).max(1.0);
                    assert!(
                        (a - b).abs() <= 1e-5 * scale,
                        "trial {trial} tensor {t_idx}: {a} vs {b}"
                    );
                }
            }
        }
    }

    #[test]
    fn checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        for arch in [
            Architecture::Linear { d: 5, k: 3 },
            Architecture::Mlp { d: 4, h: 6, k: 3 },
        ] {
            let params = init_params(arch, &mut SeededRng::new(13, 2));
            let path = dir.path().join("model.ckpt");
            save_checkpoint(&params, &path).unwrap();
            let back = load_checkpoint(&path).unwrap();
            assert_eq!(back.architecture(), arch);
            for (a, b) in params.tensors().iter().zip(back.tensors()) {
                assert_eq!(*a, b);
            }
        }
    }

    #[test]
    fn checkpoint_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"NOPE....123").unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(ModelError::Checkpoint { .. })
        ));
    }
}
