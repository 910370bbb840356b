//! Scratch calibration harness (run explicitly with --ignored).

use graphfuse_core::baseline::train_eval_early_fusion;
use graphfuse_core::config::TrainConfig;
use graphfuse_core::dataset::{Dataset, Instance, Label};
use graphfuse_core::matrix::Matrix;
use graphfuse_core::rng::Rng;
use graphfuse_core::synth::{generate_synthetic, SynthConfig};
use graphfuse_core::train::{evaluate_test_split, split_indices, train};

/// Multinomial logistic regression probe: gradient descent on the full
/// train split, accuracy on the test split.
fn logistic_probe(
    features: impl Fn(&Instance) -> Vec<f64>,
    dataset: &Dataset,
    seed: u64,
) -> f64 {
    let (train_idx, _, test_idx) = split_indices(dataset.len(), &mut Rng::from_seed(seed).derive("split"));
    let d = features(&dataset.instances[0]).len();
    let c = dataset.schema.num_classes;
    let x_train: Vec<Vec<f64>> = train_idx
        .iter()
        .map(|&i| features(&dataset.instances[i]))
        .collect();
    let y_train: Vec<usize> = train_idx
        .iter()
        .map(|&i| match dataset.instances[i].label {
            Label::Class(cl) => cl,
            _ => panic!(),
        })
        .collect();
    let n = x_train.len() as f64;
    let mut w = Matrix::zeros(d, c);
    let mut b = vec![0.0; c];
    let lr = 0.5;
    for _ in 0..800 {
        let mut gw = Matrix::zeros(d, c);
        let mut gb = vec![0.0; c];
        for (x, &y) in x_train.iter().zip(&y_train) {
            let mut logits = b.clone();
            for (j, lj) in logits.iter_mut().enumerate() {
                for (k, xv) in x.iter().enumerate() {
                    *lj += xv * w.get(k, j);
                }
            }
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
            let z: f64 = exps.iter().sum();
            for j in 0..c {
                let p = exps[j] / z - if j == y { 1.0 } else { 0.0 };
                gb[j] += p / n;
                for (k, xv) in x.iter().enumerate() {
                    gw.set(k, j, gw.get(k, j) + xv * p / n);
                }
            }
        }
        for j in 0..c {
            b[j] -= lr * gb[j];
            for k in 0..d {
                w.set(k, j, w.get(k, j) - lr * gw.get(k, j));
            }
        }
    }
    let mut correct = 0;
    for &i in &test_idx {
        let x = features(&dataset.instances[i]);
        let mut best = 0;
        let mut best_v = f64::NEG_INFINITY;
        for j in 0..c {
            let mut l = b[j];
            for (k, xv) in x.iter().enumerate() {
                l += xv * w.get(k, j);
            }
            if l > best_v {
                best_v = l;
                best = j;
            }
        }
        if matches!(dataset.instances[i].label, Label::Class(cl) if cl == best) {
            correct += 1;
        }
    }
    correct as f64 / test_idx.len() as f64
}

#[test]
#[ignore]
fn probe_numbers() {
    let ds = generate_synthetic(&SynthConfig::default(), &mut Rng::from_seed(42)).unwrap();
    let audio = ds.schema.position("audio").unwrap();
    let text = ds.schema.position("text").unwrap();
    let image = ds.schema.position("image").unwrap();
    let audio_acc = logistic_probe(
        |inst| inst.features[audio].clone().unwrap(),
        &ds,
        42,
    );
    let concat_acc = logistic_probe(
        |inst| {
            let mut v = inst.features[text].clone().unwrap();
            v.extend(inst.features[image].clone().unwrap());
            v
        },
        &ds,
        42,
    );
    let text_acc = logistic_probe(|inst| inst.features[text].clone().unwrap(), &ds, 42);
    println!("audio probe acc:  {audio_acc}");
    println!("text probe acc:   {text_acc}");
    println!("text+image probe: {concat_acc}");
}

#[test]
#[ignore]
fn one_epoch_timing() {
    let ds = generate_synthetic(&SynthConfig::default(), &mut Rng::from_seed(42)).unwrap();
    let cfg = TrainConfig {
        epochs: 1,
        seed: 1,
        ..TrainConfig::default()
    };
    let t0 = std::time::Instant::now();
    let (_, log) = train(&ds, &cfg).unwrap();
    println!("one epoch: {:?}, log: {:?}", t0.elapsed(), log);
}

#[test]
#[ignore]
fn benchmark_experiment() {
    let ds = generate_synthetic(&SynthConfig::default(), &mut Rng::from_seed(42)).unwrap();
    for seed in [1u64, 2] {
        let cfg = TrainConfig {
            seed,
            ..TrainConfig::default()
        };
        let t0 = std::time::Instant::now();
        let (params, log) = train(&ds, &cfg).unwrap();
        let report = evaluate_test_split(&ds, &params, &cfg, None).unwrap();
        let base = train_eval_early_fusion(&ds, &cfg).unwrap();
        println!(
            "seed {seed}: agsp acc {:.4}, baseline acc {:.4}, time {:?}, last epochs: {:?}",
            report.accuracy,
            base.accuracy,
            t0.elapsed(),
            &log[log.len().saturating_sub(3)..]
        );
        for drop in ["audio", "text", "image"] {
            let r = evaluate_test_split(&ds, &params, &cfg, Some(drop)).unwrap();
            println!("  drop {drop}: acc {:.4} (skipped {})", r.accuracy, r.skipped);
        }
    }
}
