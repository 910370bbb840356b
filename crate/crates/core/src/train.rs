//! Training and evaluation loops.
//!
//! Training is single-threaded and bit-deterministic in the config seed:
//! the seed derives independent streams for the train/val/test split,
//! parameter init, and per-epoch shuffles plus dropout masks. Graphs are
//! rebuilt per batch; batches are reshuffled every epoch.

use crate::config::TrainConfig;
use crate::dataset::{Dataset, Instance, Label, Schema, Task};
use crate::error::{Error, Result};
use crate::forward::{forward, loss_t, softmax_scores, target_matrix};
use crate::matrix::Matrix;
use crate::metrics::{multiclass_report, multilabel_report, MetricsReport};
use crate::model::ModelParameters;
use crate::optim::{adam_step, AdamState};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

/// Epoch log as CSV text (header + one row per epoch).
pub fn epoch_log_csv(log: &[EpochStats]) -> String {
    let mut out = String::from("epoch,train_loss,train_acc,val_loss,val_acc\n");
    for e in log {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            e.epoch, e.train_loss, e.train_acc, e.val_loss, e.val_acc
        ));
    }
    out
}

/// Deterministic 70/10/20 split of 0..n by a seeded shuffle.
pub fn split_indices(n: usize, rng: &mut Rng) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut idx);
    let n_train = (n as f64 * 0.7).round() as usize;
    let n_val = (n as f64 * 0.1).round() as usize;
    let train = idx[..n_train].to_vec();
    let val = idx[n_train..(n_train + n_val).min(n)].to_vec();
    let test = idx[(n_train + n_val).min(n)..].to_vec();
    (train, val, test)
}

fn predictions_multiclass(scores: &Matrix) -> Vec<usize> {
    (0..scores.rows())
        .map(|i| {
            let mut best = 0;
            for j in 1..scores.cols() {
                if scores.get(i, j) > scores.get(i, best) {
                    best = j;
                }
            }
            best
        })
        .collect()
}

fn batch_accuracy(scores: &Matrix, instances: &[&Instance], task: Task) -> f64 {
    match task {
        Task::Multiclass => {
            let preds = predictions_multiclass(scores);
            let correct = preds
                .iter()
                .zip(instances)
                .filter(|(p, inst)| matches!(&inst.label, Label::Class(c) if c == *p))
                .count();
            correct as f64 / instances.len() as f64
        }
        Task::Multilabel => {
            let mut exact = 0;
            for (i, inst) in instances.iter().enumerate() {
                let truth = inst.label.classes();
                let pred: Vec<usize> = (0..scores.cols())
                    .filter(|&c| scores.get(i, c) > 0.0)
                    .collect();
                if truth == pred {
                    exact += 1;
                }
            }
            exact as f64 / instances.len() as f64
        }
    }
}

/// Mean loss and accuracy over a split in inference mode (dropout off,
/// inference anchors).
fn eval_loss_acc(
    schema: &Schema,
    instances: &[&Instance],
    params: &ModelParameters,
    cfg: &TrainConfig,
) -> Result<(f64, f64)> {
    if instances.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let mut total_loss = 0.0;
    let mut total_correct = 0.0;
    let mut rng = Rng::from_seed(0); // unused: dropout off
    for chunk in instances.chunks(cfg.batch_size) {
        let (mut pass, _) = forward(schema, chunk, params, cfg, false, &mut rng)?;
        let labels: Vec<&Label> = chunk.iter().map(|i| &i.label).collect();
        let l = loss_t(
            &mut pass.tape,
            pass.scores,
            &labels,
            schema.num_classes,
            schema.task,
        )?;
        total_loss += pass.tape.value(l).get(0, 0) * chunk.len() as f64;
        total_correct +=
            batch_accuracy(pass.tape.value(pass.scores), chunk, schema.task) * chunk.len() as f64;
    }
    let n = instances.len() as f64;
    Ok((total_loss / n, total_correct / n))
}

/// Train on the dataset's 70% split, logging per-epoch train/val loss and
/// accuracy. Returns the final parameters and the epoch log.
pub fn train(dataset: &Dataset, cfg: &TrainConfig) -> Result<(ModelParameters, Vec<EpochStats>)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Data("cannot train on an empty dataset".into()));
    }
    let master = Rng::from_seed(cfg.seed);
    let (train_idx, val_idx, _test_idx) = split_indices(dataset.len(), &mut master.derive("split"));
    let mut params = ModelParameters::init(&dataset.schema, cfg, &mut master.derive("init"))?;
    let mut train_rng = master.derive("train");

    let shapes: Vec<(usize, usize)> = params
        .tensors()
        .iter()
        .map(|(_, t)| (t.rows(), t.cols()))
        .collect();
    let mut adam = AdamState::new(&shapes);
    let adam_cfg = cfg.adam();

    let val_set: Vec<&Instance> = val_idx.iter().map(|&i| &dataset.instances[i]).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut order = train_idx.clone();

    for epoch in 1..=cfg.epochs {
        train_rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        let mut epoch_correct = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Instance> = chunk.iter().map(|&i| &dataset.instances[i]).collect();
            let (mut pass, _) = forward(
                &dataset.schema,
                &batch,
                &params,
                cfg,
                true,
                &mut train_rng,
            )?;
            let labels: Vec<&Label> = batch.iter().map(|i| &i.label).collect();
            let loss_id = loss_t(
                &mut pass.tape,
                pass.scores,
                &labels,
                dataset.schema.num_classes,
                dataset.schema.task,
            )?;
            let loss_val = pass.tape.value(loss_id).get(0, 0);
            if !loss_val.is_finite() {
                let tensor = params
                    .first_non_finite()
                    .unwrap_or_else(|| "loss".to_string());
                return Err(Error::Data(format!(
                    "non-finite loss at epoch {epoch}; first non-finite tensor: {tensor}"
                )));
            }
            epoch_loss += loss_val * batch.len() as f64;
            epoch_correct +=
                batch_accuracy(pass.tape.value(pass.scores), &batch, dataset.schema.task)
                    * batch.len() as f64;

            let grads = pass.tape.backward(loss_id)?;
            let grad_list: Vec<Matrix> = pass
                .bindings
                .iter()
                .map(|(_, id)| grads.wrt(*id).map(|g| g.clone()))
                .collect::<Result<_>>()?;
            let mut tensor_refs: Vec<&mut Matrix> = params
                .tensors_mut()
                .into_iter()
                .map(|(_, t)| t)
                .collect();
            adam_step(&mut tensor_refs, &grad_list, &mut adam, &adam_cfg)?;
            if let Some(tensor) = params.first_non_finite() {
                return Err(Error::Data(format!(
                    "non-finite parameters after update at epoch {epoch}; first non-finite tensor: {tensor}"
                )));
            }
        }
        let n_train = order.len() as f64;
        let (val_loss, val_acc) = eval_loss_acc(&dataset.schema, &val_set, &params, cfg)?;
        log.push(EpochStats {
            epoch,
            train_loss: epoch_loss / n_train,
            train_acc: epoch_correct / n_train,
            val_loss,
            val_acc,
        });
    }
    Ok((params, log))
}

/// Drop one modality from an instance; `None` when nothing would remain.
fn with_dropped(inst: &Instance, drop: usize) -> Option<Instance> {
    if !inst.present(drop) {
        return Some(inst.clone());
    }
    let remaining = inst
        .features
        .iter()
        .enumerate()
        .filter(|(m, f)| *m != drop && f.is_some())
        .count();
    if remaining == 0 {
        return None;
    }
    let mut out = inst.clone();
    out.features[drop] = None;
    Some(out)
}

/// Evaluate trained parameters over instances (inference mode). With
/// `drop_modality`, that modality is masked on every instance first;
/// instances left without any modality are skipped and counted.
pub fn evaluate(
    schema: &Schema,
    instances: &[&Instance],
    params: &ModelParameters,
    cfg: &TrainConfig,
    drop_modality: Option<&str>,
) -> Result<MetricsReport> {
    let drop = match drop_modality {
        Some(name) => Some(
            schema
                .position(name)
                .ok_or_else(|| Error::Config(format!("unknown modality {name}")))?,
        ),
        None => None,
    };
    let mut kept: Vec<Instance> = Vec::with_capacity(instances.len());
    let mut skipped = 0usize;
    for inst in instances {
        match drop {
            None => kept.push((*inst).clone()),
            Some(m) => match with_dropped(inst, m) {
                Some(modified) => kept.push(modified),
                None => skipped += 1,
            },
        }
    }
    if kept.is_empty() {
        return Err(Error::Data(
            "no instances left to evaluate after dropping the modality".into(),
        ));
    }

    let mut rng = Rng::from_seed(0); // unused: dropout off
    let mut truths: Vec<usize> = Vec::new();
    let mut preds: Vec<usize> = Vec::new();
    let mut truth_sets: Vec<Vec<bool>> = Vec::new();
    let mut pred_sets: Vec<Vec<bool>> = Vec::new();
    let mut score_rows: Vec<Vec<f64>> = Vec::new();
    let c = schema.num_classes;

    for chunk in kept.chunks(cfg.batch_size) {
        let batch: Vec<&Instance> = chunk.iter().collect();
        let (pass, _) = forward(schema, &batch, params, cfg, false, &mut rng)?;
        let scores = pass.scores_value();
        match schema.task {
            Task::Multiclass => {
                let probs = softmax_scores(scores);
                let batch_preds = predictions_multiclass(scores);
                for (i, inst) in batch.iter().enumerate() {
                    let Label::Class(t) = inst.label else {
                        return Err(Error::Data("multiclass dataset with set label".into()));
                    };
                    truths.push(t);
                    preds.push(batch_preds[i]);
                    score_rows.push((0..c).map(|j| probs.get(i, j)).collect());
                }
            }
            Task::Multilabel => {
                for (i, inst) in batch.iter().enumerate() {
                    let mut truth = vec![false; c];
                    for cls in inst.label.classes() {
                        truth[cls] = true;
                    }
                    truth_sets.push(truth);
                    // sigmoid(logit) > 0.5 ⇔ logit > 0
                    pred_sets.push((0..c).map(|j| scores.get(i, j) > 0.0).collect());
                    score_rows
                        .push((0..c).map(|j| 1.0 / (1.0 + (-scores.get(i, j)).exp())).collect());
                }
            }
        }
    }
    let score_matrix = Matrix::from_rows(&score_rows)?;
    match schema.task {
        Task::Multiclass => multiclass_report(&truths, &preds, &score_matrix, c, skipped),
        Task::Multilabel => multilabel_report(&truth_sets, &pred_sets, &score_matrix, c, skipped),
    }
}

/// Evaluate on the dataset's own test split (the same seeded split `train`
/// uses).
pub fn evaluate_test_split(
    dataset: &Dataset,
    params: &ModelParameters,
    cfg: &TrainConfig,
    drop_modality: Option<&str>,
) -> Result<MetricsReport> {
    let master = Rng::from_seed(cfg.seed);
    let (_, _, test_idx) = split_indices(dataset.len(), &mut master.derive("split"));
    let test: Vec<&Instance> = test_idx.iter().map(|&i| &dataset.instances[i]).collect();
    evaluate(&dataset.schema, &test, params, cfg, drop_modality)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_synthetic, SynthConfig};

    fn tiny_dataset(n: usize, seed: u64) -> Dataset {
        let cfg = SynthConfig {
            n,
            classes: 3,
            modalities: vec![
                ("text".into(), 5),
                ("image".into(), 4),
                ("audio".into(), 3),
            ],
            separability: vec![1.2, 1.2, 0.0],
            dropout: 0.0,
            corruption: 0.0,
            allow_no_signal: false,
        };
        generate_synthetic(&cfg, &mut Rng::from_seed(seed)).unwrap()
    }

    fn tiny_train_config(epochs: usize) -> TrainConfig {
        TrainConfig {
            latent_dim: 6,
            hidden: 6,
            gcn_layers: 2,
            chebyshev_k: 2,
            hop_k: 1,
            batch_size: 16,
            epochs,
            seed: 7,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn split_is_70_10_20_and_disjoint() {
        let (train, val, test) = split_indices(600, &mut Rng::from_seed(42));
        assert_eq!(train.len(), 420);
        assert_eq!(val.len(), 60);
        assert_eq!(test.len(), 120);
        let mut all: Vec<usize> = train
            .iter()
            .chain(val.iter())
            .chain(test.iter())
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..600).collect::<Vec<_>>());
    }

    #[test]
    fn zero_epochs_returns_initialized_params_and_empty_log() {
        let ds = tiny_dataset(30, 1);
        let cfg = tiny_train_config(0);
        let (params, log) = train(&ds, &cfg).unwrap();
        assert!(log.is_empty());
        let fresh = ModelParameters::init(
            &ds.schema,
            &cfg,
            &mut Rng::from_seed(cfg.seed).derive("init"),
        )
        .unwrap();
        for ((na, ta), (_, tb)) in params.tensors().iter().zip(fresh.tensors().iter()) {
            assert_eq!(ta.as_slice(), tb.as_slice(), "{na}");
        }
    }

    #[test]
    fn training_is_bit_deterministic() {
        let ds = tiny_dataset(40, 2);
        let cfg = tiny_train_config(2);
        let (pa, la) = train(&ds, &cfg).unwrap();
        let (pb, lb) = train(&ds, &cfg).unwrap();
        assert_eq!(la, lb);
        for ((na, ta), (_, tb)) in pa.tensors().iter().zip(pb.tensors().iter()) {
            assert_eq!(ta.as_slice(), tb.as_slice(), "{na}");
        }
    }

    #[test]
    fn loss_decreases_on_learnable_data() {
        let ds = tiny_dataset(60, 3);
        let cfg = tiny_train_config(8);
        let (_, log) = train(&ds, &cfg).unwrap();
        assert!(log.last().unwrap().train_loss < log.first().unwrap().train_loss);
    }

    #[test]
    fn evaluate_reports_consistent_counts() {
        let ds = tiny_dataset(40, 4);
        let cfg = tiny_train_config(1);
        let (params, _) = train(&ds, &cfg).unwrap();
        let instances: Vec<&Instance> = ds.instances.iter().collect();
        let report = evaluate(&ds.schema, &instances, &params, &cfg, None).unwrap();
        assert_eq!(report.evaluated, 40);
        assert_eq!(report.skipped, 0);
        let confusion = report.confusion.as_ref().unwrap();
        let total: usize = confusion.iter().flatten().sum();
        assert_eq!(total, 40);
        let trace: usize = (0..3).map(|i| confusion[i][i]).sum();
        assert!((report.accuracy - trace as f64 / 40.0).abs() <= 1e-15);
    }

    #[test]
    fn dropping_only_modality_skips_instance() {
        let mut ds = tiny_dataset(12, 5);
        // make instance 0 text-only
        ds.instances[0].features[1] = None;
        ds.instances[0].features[2] = None;
        let cfg = tiny_train_config(0);
        let (params, _) = train(&ds, &cfg).unwrap();
        let instances: Vec<&Instance> = ds.instances.iter().collect();
        let report = evaluate(&ds.schema, &instances, &params, &cfg, Some("text")).unwrap();
        assert_eq!(report.skipped, 1);
        assert_eq!(report.evaluated, 11);
    }

    #[test]
    fn epoch_csv_has_header_and_rows() {
        let log = vec![EpochStats {
            epoch: 1,
            train_loss: 1.0,
            train_acc: 0.5,
            val_loss: 1.1,
            val_acc: 0.4,
        }];
        let csv = epoch_log_csv(&log);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "epoch,train_loss,train_acc,val_loss,val_acc"
        );
        assert_eq!(lines.next().unwrap(), "1,1,0.5,1.1,0.4");
    }
}
