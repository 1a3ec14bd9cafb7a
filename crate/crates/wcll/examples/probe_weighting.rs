//! Scratch probe: compare weighting directions on the full MNIST protocol.
//! Not part of the deliverable surface; run with
//! `cargo run --release --example probe_weighting -- <mode> <lr>`.

use wcll::datasets::{self, AlphaVector, LabelingMode};
use wcll::harness;
use wcll::loss::{LossConfig, LossVariant};
use wcll::model::Architecture;
use wcll::numerics::SeededRng;
use wcll::training::{self, Optimizer, TrainConfig};
use wcll::weighting::{compute_omega, compute_pi, ClassWeighting};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let mode = args.get(1).map(|s| s.as_str()).unwrap_or("spec");
    let lr: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(5e-4);
    let variant = match args.get(3).map(|s| s.as_str()) {
        Some("alg1") => LossVariant::WcllAlg1,
        Some("uniform") => LossVariant::Uniform,
        _ => LossVariant::WcllEq12,
    };

    let train = datasets::load_idx(
        "data/mnist/train-images-idx3-ubyte",
        "data/mnist/train-labels-idx1-ubyte",
    )
    .unwrap();
    let test = datasets::load_idx(
        "data/mnist/t10k-images-idx3-ubyte",
        "data/mnist/t10k-labels-idx1-ubyte",
    )
    .unwrap();

    let mut counts = vec![5420usize; 10];
    counts[0] = 2710;
    let alpha = AlphaVector::from_counts(counts);
    let drawn = datasets::draw_imbalanced(&train, &alpha, &mut SeededRng::new(1, 0x20)).unwrap();
    let comp =
        datasets::assign_complementary(&drawn, &alpha, LabelingMode::PerInstance, &mut SeededRng::new(1, 0x22))
            .unwrap();

    let pi = compute_pi(&alpha).unwrap();
    let omega_spec = compute_omega(&pi).unwrap();
    let weighting = match mode {
        // Spec reading: omega proportional to alpha.
        "spec" => ClassWeighting::new(pi.clone(), omega_spec).unwrap(),
        // Flipped reading: omega proportional to 1/alpha (equals pi).
        "flip" => ClassWeighting::new(pi.clone(), pi.clone()).unwrap(),
        // Plain mean of the weighted per-sample loss: no pi premultiplier.
        "mean10" => ClassWeighting::new(vec![0.1; 10], omega_spec).unwrap(),
        // Group-mean reading of the training algorithm: per-class mean
        // losses, which flattens to sample weights proportional to alpha_z
        // on the plain complementary loss.
        "groupmean" => ClassWeighting::new(omega_spec, vec![0.1; 10]).unwrap(),
        other => panic!("unknown mode {other}"),
    };
    println!("mode {mode} variant {variant:?} lr {lr}");
    println!("pi    {:?}", &weighting.pi()[..3]);
    println!("omega {:?}", &weighting.omega()[..3]);

    let cfg = TrainConfig {
        epochs: 100,
        batch_size: 256,
        optimizer: Optimizer::adam(lr),
        weight_decay: 1e-4,
        seed: 1,
        loss: LossConfig::new(variant, weighting, false),
        eval_every: 100,
    };
    let result = training::train(&comp, &test, Architecture::Linear { d: 784, k: 10 }, &cfg).unwrap();
    let last = result.final_point();
    let metrics = harness::evaluate(&result.params, &test).unwrap();
    println!(
        "total {:.4} minority(class0) {:.4} risk {:+.5}",
        last.test_total_accuracy, last.test_per_class_accuracy[0], last.train_risk
    );
    println!(
        "per-class {:?}",
        metrics
            .per_class_accuracy
            .iter()
            .map(|a| (a * 1000.0).round() / 1000.0)
            .collect::<Vec<_>>()
    );
}
