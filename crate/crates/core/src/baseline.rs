//! Early-fusion reference model: per-modality linear projections,
//! concatenation (absent modalities contribute zeros), then a two-layer
//! dense classifier. Trained with the same optimizer, batch, epoch, and
//! seed budget as the graph model so the comparison is budget-matched.

use crate::config::TrainConfig;
use crate::dataset::{Dataset, Instance, Label, Task};
use crate::error::{Error, Result};
use crate::forward::loss_t;
use crate::gcn::dropout_mask;
use crate::matrix::Matrix;
use crate::metrics::{multiclass_report, MetricsReport};
use crate::optim::{adam_step, AdamState};
use crate::rng::Rng;
use crate::tape::{Tape, ValueId};
use crate::train::split_indices;

struct EarlyFusionParams {
    proj: Vec<Matrix>,   // latent × d_m per modality
    proj_bias: Vec<Matrix>,
    hidden_w: Matrix,    // (M·latent) × hidden
    hidden_b: Matrix,    // 1 × hidden
    head_w: Matrix,      // hidden × C
    head_b: Matrix,      // 1 × C
}

impl EarlyFusionParams {
    fn init(dims: &[usize], latent: usize, hidden: usize, classes: usize, rng: &mut Rng) -> Self {
        let glorot = |r: usize, c: usize, rng: &mut Rng| {
            let std = (2.0 / (r + c) as f64).sqrt();
            Matrix::new(r, c, (0..r * c).map(|_| rng.normal() * std).collect()).unwrap()
        };
        let proj = dims.iter().map(|&d| glorot(latent, d, rng)).collect();
        let proj_bias = dims.iter().map(|_| Matrix::zeros(1, latent)).collect();
        let cat = dims.len() * latent;
        EarlyFusionParams {
            proj,
            proj_bias,
            hidden_w: glorot(cat, hidden, rng),
            hidden_b: Matrix::zeros(1, hidden),
            head_w: Matrix::zeros(hidden, classes),
            head_b: Matrix::zeros(1, classes),
        }
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out: Vec<&mut Matrix> = Vec::new();
        for p in &mut self.proj {
            out.push(p);
        }
        for b in &mut self.proj_bias {
            out.push(b);
        }
        out.push(&mut self.hidden_w);
        out.push(&mut self.hidden_b);
        out.push(&mut self.head_w);
        out.push(&mut self.head_b);
        out
    }

    fn shapes(&mut self) -> Vec<(usize, usize)> {
        self.tensors_mut()
            .iter()
            .map(|t| (t.rows(), t.cols()))
            .collect()
    }
}

fn batch_features(instances: &[&Instance], m: usize, dim: usize) -> Matrix {
    let mut rows = Vec::with_capacity(instances.len());
    for inst in instances {
        match &inst.features[m] {
            Some(f) => rows.push(f.clone()),
            None => rows.push(vec![0.0; dim]),
        }
    }
    Matrix::from_rows(&rows).expect("batch features")
}

fn forward_t(
    tape: &mut Tape,
    params_h: &[ValueId],
    instances: &[&Instance],
    dims: &[usize],
    dropout: f64,
    training: bool,
    rng: &mut Rng,
) -> Result<ValueId> {
    let n_mod = dims.len();
    let mut blocks: Option<ValueId> = None;
    for m in 0..n_mod {
        let x = tape.constant(batch_features(instances, m, dims[m]));
        let projected = tape.matmul_nt(x, params_h[m])?;
        let biased = tape.add_row(projected, params_h[n_mod + m])?;
        blocks = Some(match blocks {
            None => biased,
            Some(acc) => tape.concat_cols(acc, biased)?,
        });
    }
    let cat = blocks.ok_or_else(|| Error::Shape("no modalities".into()))?;
    let mut pre = tape.matmul(cat, params_h[2 * n_mod])?;
    pre = tape.add_row(pre, params_h[2 * n_mod + 1])?;
    if training && dropout > 0.0 {
        let shape = (tape.value(pre).rows(), tape.value(pre).cols());
        let mask = tape.constant(dropout_mask(shape.0, shape.1, dropout, rng));
        pre = tape.hadamard(pre, mask)?;
    }
    let act = tape.relu(pre);
    let logits = tape.matmul(act, params_h[2 * n_mod + 2])?;
    tape.add_row(logits, params_h[2 * n_mod + 3])
}

/// Train the early-fusion baseline on the dataset's train split and report
/// metrics on its test split. Splits, seed streams, optimizer settings, and
/// epoch budget mirror the graph model's.
pub fn train_eval_early_fusion(dataset: &Dataset, cfg: &TrainConfig) -> Result<MetricsReport> {
    cfg.validate()?;
    if dataset.schema.task != Task::Multiclass {
        return Err(Error::Config(
            "early-fusion baseline supports multiclass only".into(),
        ));
    }
    let master = Rng::from_seed(cfg.seed);
    let (train_idx, _val_idx, test_idx) =
        split_indices(dataset.len(), &mut master.derive("split"));
    let dims: Vec<usize> = dataset.schema.modalities.iter().map(|m| m.dim).collect();
    let mut params = EarlyFusionParams::init(
        &dims,
        cfg.latent_dim,
        cfg.hidden,
        dataset.schema.num_classes,
        &mut master.derive("init"),
    );
    let mut train_rng = master.derive("train");
    let mut adam = AdamState::new(&params.shapes());
    let adam_cfg = cfg.adam();

    let mut order = train_idx;
    for _epoch in 0..cfg.epochs {
        train_rng.shuffle(&mut order);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Instance> = chunk.iter().map(|&i| &dataset.instances[i]).collect();
            let mut tape = Tape::new();
            let handles: Vec<ValueId> = params
                .tensors_mut()
                .into_iter()
                .map(|t| tape.param(t.clone()))
                .collect();
            let scores = forward_t(
                &mut tape,
                &handles,
                &batch,
                &dims,
                cfg.dropout,
                true,
                &mut train_rng,
            )?;
            let labels: Vec<&Label> = batch.iter().map(|i| &i.label).collect();
            let loss = loss_t(
                &mut tape,
                scores,
                &labels,
                dataset.schema.num_classes,
                dataset.schema.task,
            )?;
            let grads = tape.backward(loss)?;
            let grad_list: Vec<Matrix> = handles
                .iter()
                .map(|id| grads.wrt(*id).map(|g| g.clone()))
                .collect::<Result<_>>()?;
            let mut refs = params.tensors_mut();
            adam_step(&mut refs, &grad_list, &mut adam, &adam_cfg)?;
        }
    }

    // test-split evaluation
    let c = dataset.schema.num_classes;
    let mut truths = Vec::new();
    let mut preds = Vec::new();
    let mut score_rows = Vec::new();
    let mut rng = Rng::from_seed(0);
    let test: Vec<&Instance> = test_idx.iter().map(|&i| &dataset.instances[i]).collect();
    for chunk in test.chunks(cfg.batch_size) {
        let mut tape = Tape::new();
        let handles: Vec<ValueId> = params
            .tensors_mut()
            .into_iter()
            .map(|t| tape.constant(t.clone()))
            .collect();
        let scores = forward_t(&mut tape, &handles, chunk, &dims, 0.0, false, &mut rng)?;
        let probs = crate::forward::softmax_scores(tape.value(scores));
        for (i, inst) in chunk.iter().enumerate() {
            let Label::Class(t) = inst.label else {
                return Err(Error::Data("multiclass dataset with set label".into()));
            };
            truths.push(t);
            let mut best = 0;
            for j in 1..c {
                if probs.get(i, j) > probs.get(i, best) {
                    best = j;
                }
            }
            preds.push(best);
            score_rows.push((0..c).map(|j| probs.get(i, j)).collect::<Vec<f64>>());
        }
    }
    let scores = Matrix::from_rows(&score_rows)?;
    multiclass_report(&truths, &preds, &scores, c, 0)
}
