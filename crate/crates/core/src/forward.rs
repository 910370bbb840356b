//! End-to-end differentiable forward pass.
//!
//! Per modality stream: project raw features into the shared latent space,
//! filter the signal on the modality's own graph and on the cross-instance
//! semantic graph, refine each with graph convolutions, concatenate the two
//! stream embeddings, then fuse modalities with semantic attention and a
//! sigmoid gate before the linear classifier head.
//!
//! Graph topology is built from the current parameter values but enters the
//! tape as constants: gradients flow through every signal path (projection,
//! filter coefficients, GCN weights, attention, gate, head, class table)
//! while edge weights act as a stop-gradient, matching how the graphs are
//! rebuilt from scratch each batch.

use crate::config::{BranchMode, TrainConfig};
use crate::dataset::{Instance, Label, Schema, Task};
use crate::error::{Error, Result};
use crate::fusion::{anchors_centroid_t, anchors_labels_t, attention_weights_t, fuse_t, gate_t};
use crate::gcn::gcn_forward_t;
use crate::graph::{
    build_inter_graph, build_intra_graph, default_epsilon, default_sigma, graph_operators,
    semantic_embeddings_centroid, semantic_embeddings_labels, AnchorMode, GraphOperators,
};
use crate::matrix::Matrix;
use crate::model::ModelParameters;
use crate::projection::project_batch_t;
use crate::rng::Rng;
use crate::spectral::{chebyshev_apply_t, estimate_lambda_max};
use crate::tape::{Tape, ValueId};

/// One modality's intra-graph stream: which batch rows are present and the
/// operators over those rows.
#[derive(Debug)]
pub struct IntraStream {
    pub node_index: Vec<usize>,
    pub ops: GraphOperators,
    pub lambda_max: f64,
    pub epsilon: f64,
}

/// Graphs for one batch, built from current parameter values (detached).
#[derive(Debug)]
pub struct BatchGraphs {
    pub intra: Vec<IntraStream>,
    pub inter: GraphOperators,
    pub inter_lambda: f64,
    pub sigma: f64,
}

/// Raw per-modality feature matrices for a batch: compact rows for present
/// instances plus the row index map.
fn compact_features(
    schema: &Schema,
    instances: &[&Instance],
    m: usize,
) -> Result<(Matrix, Vec<usize>)> {
    let mut rows = Vec::new();
    let mut index = Vec::new();
    for (i, inst) in instances.iter().enumerate() {
        if let Some(f) = &inst.features[m] {
            rows.push(f.clone());
            index.push(i);
        }
    }
    let dim = schema.modalities[m].dim;
    if rows.is_empty() {
        return Ok((Matrix::zeros(0, dim), index));
    }
    Ok((Matrix::from_rows(&rows)?, index))
}

fn presence(instances: &[&Instance], n_mod: usize) -> Vec<Vec<bool>> {
    (0..n_mod)
        .map(|m| instances.iter().map(|inst| inst.present(m)).collect())
        .collect()
}

/// Value-level projected features per modality: compact (present rows only)
/// and scattered to full batch rows with zeros for absent instances.
fn projected_values(
    schema: &Schema,
    instances: &[&Instance],
    params: &ModelParameters,
) -> Result<(Vec<Matrix>, Vec<Matrix>, Vec<Vec<usize>>)> {
    let n = instances.len();
    let mut compact = Vec::new();
    let mut full = Vec::new();
    let mut indices = Vec::new();
    for m in 0..schema.n_modalities() {
        let (x, index) = compact_features(schema, instances, m)?;
        let proj = &params.projections[m];
        let tilde = if x.rows() == 0 {
            Matrix::zeros(0, proj.latent_dim())
        } else {
            let mut t = x.matmul_nt(&proj.weight)?;
            for i in 0..t.rows() {
                for j in 0..t.cols() {
                    t.set(i, j, t.get(i, j) + proj.bias.get(0, j));
                }
            }
            t
        };
        let mut f = Matrix::zeros(n, proj.latent_dim());
        for (row, &dst) in index.iter().enumerate() {
            for j in 0..f.cols() {
                f.set(dst, j, tilde.get(row, j));
            }
        }
        compact.push(tilde);
        full.push(f);
        indices.push(index);
    }
    Ok((compact, full, indices))
}

/// Build the batch's intra graphs (per modality, over present rows) and the
/// cross-instance semantic graph, from current parameter values.
pub fn build_batch_graphs(
    schema: &Schema,
    instances: &[&Instance],
    params: &ModelParameters,
    cfg: &TrainConfig,
    anchor_mode: AnchorMode,
) -> Result<BatchGraphs> {
    if instances.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    let (compact, full, indices) = projected_values(schema, instances, params)?;
    let masks = presence(instances, schema.n_modalities());

    let mut intra = Vec::with_capacity(schema.n_modalities());
    for m in 0..schema.n_modalities() {
        let epsilon = cfg.epsilon.unwrap_or_else(|| default_epsilon(&compact[m]));
        let graph = build_intra_graph(&compact[m], epsilon, &schema.modalities[m].name)?;
        let ops = graph_operators(&graph, false)?;
        let lambda_max = estimate_lambda_max(&ops)?;
        intra.push(IntraStream {
            node_index: indices[m].clone(),
            ops,
            lambda_max,
            epsilon,
        });
    }

    let embeddings = match anchor_mode {
        AnchorMode::Labels => {
            let labels: Vec<Label> = instances.iter().map(|i| i.label.clone()).collect();
            semantic_embeddings_labels(&labels, &params.class_table)?
        }
        AnchorMode::Centroid => semantic_embeddings_centroid(&full, &masks)?,
    };
    let sigma = cfg.sigma.unwrap_or_else(|| default_sigma(&embeddings));
    let inter_graph = build_inter_graph(&embeddings, sigma)?;
    let inter = graph_operators(&inter_graph, false)?;
    let inter_lambda = estimate_lambda_max(&inter)?;
    Ok(BatchGraphs {
        intra,
        inter,
        inter_lambda,
        sigma,
    })
}

/// A recorded forward pass: the tape, the score handle (n × C), and every
/// parameter's tape handle in `tensors()` order.
pub struct ForwardPass {
    pub tape: Tape,
    pub scores: ValueId,
    pub bindings: Vec<(String, ValueId)>,
}

impl ForwardPass {
    pub fn scores_value(&self) -> &Matrix {
        self.tape.value(self.scores)
    }
}

struct ParamHandles {
    by_name: Vec<(String, ValueId)>,
}

impl ParamHandles {
    fn get(&self, name: &str) -> ValueId {
        self.by_name
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, id)| *id)
            .expect("parameter handle")
    }
}

fn register_params(tape: &mut Tape, params: &ModelParameters) -> ParamHandles {
    let by_name = params
        .tensors()
        .into_iter()
        .map(|(name, t)| (name, tape.param(t.clone())))
        .collect();
    ParamHandles { by_name }
}

fn theta_handle(params: &ModelParameters, handles: &ParamHandles, stage: &str, m: usize) -> ValueId {
    let name = if params.dims.share_filters {
        format!("cheb.{stage}.shared.theta")
    } else {
        format!("cheb.{stage}.{}.theta", params.dims.modalities[m].name)
    };
    handles.get(&name)
}

fn stack_handles(
    params: &ModelParameters,
    handles: &ParamHandles,
    intra_modality: Option<usize>,
) -> Vec<Vec<ValueId>> {
    let (stack, prefix) = match intra_modality {
        Some(m) => (
            &params.gcn_intra[m],
            format!("gcn.intra.{}", params.dims.modalities[m].name),
        ),
        None => (&params.gcn_inter, "gcn.inter".to_string()),
    };
    stack
        .layers
        .iter()
        .enumerate()
        .map(|(l, layer)| {
            (0..layer.hop_weights.len())
                .map(|k| handles.get(&format!("{prefix}.layer{l}.hop{k}")))
                .collect()
        })
        .collect()
}

/// Forward pass against prebuilt graphs. Differentiable in every parameter;
/// dropout masks draw from `rng` only when `training` is set.
pub fn forward_with_graphs(
    schema: &Schema,
    instances: &[&Instance],
    params: &ModelParameters,
    cfg: &TrainConfig,
    graphs: &BatchGraphs,
    training: bool,
    rng: &mut Rng,
    anchor_mode: AnchorMode,
) -> Result<ForwardPass> {
    if instances.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    let n = instances.len();
    let n_mod = schema.n_modalities();
    if params.dims.modalities != schema.modalities || params.dims.num_classes != schema.num_classes
    {
        return Err(Error::Shape(
            "model parameters do not match the dataset schema".into(),
        ));
    }
    for inst in instances {
        if !inst.presence_mask().iter().any(|&p| p) {
            return Err(Error::Data(format!(
                "instance {} has no present modality",
                inst.id
            )));
        }
    }
    let masks = presence(instances, n_mod);
    let dropout = if training { cfg.dropout } else { 0.0 };

    let mut tape = Tape::new();
    let handles = register_params(&mut tape, params);

    let inter_adj = tape.constant(graphs.inter.norm_adjacency.clone());
    let inter_stack = stack_handles(params, &handles, None);

    let mut h_streams = Vec::with_capacity(n_mod);
    for m in 0..n_mod {
        let stream = &graphs.intra[m];
        let (x_compact, index) = compact_features(schema, instances, m)?;
        if index != stream.node_index {
            return Err(Error::Shape(format!(
                "graphs were built for a different batch (modality {})",
                schema.modalities[m].name
            )));
        }
        let w = handles.get(&format!("proj.{}.weight", schema.modalities[m].name));
        let b = handles.get(&format!("proj.{}.bias", schema.modalities[m].name));

        // intra stream on present rows only
        let x_id = tape.constant(x_compact);
        let tilde_compact = project_batch_t(&mut tape, x_id, w, b)?;
        let theta_intra = theta_handle(params, &handles, "intra", m);
        let intra_adj = tape.constant(stream.ops.norm_adjacency.clone());
        let intra_stack = stack_handles(params, &handles, Some(m));
        let intra_out = match cfg.branch_mode {
            BranchMode::Sequential => {
                let filtered = chebyshev_apply_t(
                    &mut tape,
                    theta_intra,
                    &stream.ops,
                    stream.lambda_max,
                    tilde_compact,
                )?;
                gcn_forward_t(
                    &mut tape,
                    filtered,
                    intra_adj,
                    &intra_stack,
                    dropout,
                    training,
                    rng,
                )?
            }
            BranchMode::Parallel => {
                let filtered = chebyshev_apply_t(
                    &mut tape,
                    theta_intra,
                    &stream.ops,
                    stream.lambda_max,
                    tilde_compact,
                )?;
                let conv = gcn_forward_t(
                    &mut tape,
                    tilde_compact,
                    intra_adj,
                    &intra_stack,
                    dropout,
                    training,
                    rng,
                )?;
                tape.concat_cols(filtered, conv)?
            }
        };
        let intra_full = tape.scatter_rows(intra_out, &stream.node_index, n)?;

        // inter stream over all rows, absent instances carry zero signal
        let tilde_full = tape.scatter_rows(tilde_compact, &stream.node_index, n)?;
        let theta_inter = theta_handle(params, &handles, "inter", m);
        let inter_out = match cfg.branch_mode {
            BranchMode::Sequential => {
                let filtered = chebyshev_apply_t(
                    &mut tape,
                    theta_inter,
                    &graphs.inter,
                    graphs.inter_lambda,
                    tilde_full,
                )?;
                gcn_forward_t(
                    &mut tape,
                    filtered,
                    inter_adj,
                    &inter_stack,
                    dropout,
                    training,
                    rng,
                )?
            }
            BranchMode::Parallel => {
                let filtered = chebyshev_apply_t(
                    &mut tape,
                    theta_inter,
                    &graphs.inter,
                    graphs.inter_lambda,
                    tilde_full,
                )?;
                let conv = gcn_forward_t(
                    &mut tape,
                    tilde_full,
                    inter_adj,
                    &inter_stack,
                    dropout,
                    training,
                    rng,
                )?;
                tape.concat_cols(filtered, conv)?
            }
        };

        h_streams.push(tape.concat_cols(intra_full, inter_out)?);
    }

    // anchors steering attention
    let anchors = match anchor_mode {
        AnchorMode::Labels => {
            let labels: Vec<Label> = instances.iter().map(|i| i.label.clone()).collect();
            let table = handles.get("class_table");
            anchors_labels_t(&mut tape, table, &labels)?
        }
        AnchorMode::Centroid => {
            let w_s = handles.get("fusion.anchor_proj");
            anchors_centroid_t(&mut tape, &h_streams, &masks, w_s)?
        }
    };

    let w_a = handles.get("fusion.attention");
    let alpha = attention_weights_t(&mut tape, &h_streams, anchors, w_a, &masks)?;
    let z = fuse_t(&mut tape, alpha, &h_streams)?;
    let w_g = handles.get("fusion.gate_weight");
    let b_g = handles.get("fusion.gate_bias");
    let fused = gate_t(&mut tape, z, w_g, b_g)?;

    let head_w = handles.get("head.weight");
    let head_b = handles.get("head.bias");
    let lin = tape.matmul_nt(fused, head_w)?;
    let scores = tape.add_row(lin, head_b)?;

    Ok(ForwardPass {
        tape,
        scores,
        bindings: handles.by_name,
    })
}

/// Build this batch's graphs from the current parameters, then run the
/// forward pass.
pub fn forward(
    schema: &Schema,
    instances: &[&Instance],
    params: &ModelParameters,
    cfg: &TrainConfig,
    training: bool,
    rng: &mut Rng,
) -> Result<(ForwardPass, BatchGraphs)> {
    let mode = if training {
        cfg.train_anchor
    } else {
        cfg.eval_anchor
    };
    let graphs = build_batch_graphs(schema, instances, params, cfg, mode)?;
    let pass = forward_with_graphs(schema, instances, params, cfg, &graphs, training, rng, mode)?;
    Ok((pass, graphs))
}

/// One-hot (multiclass) or multi-hot (multilabel) target rows.
pub fn target_matrix(labels: &[&Label], num_classes: usize, task: Task) -> Result<Matrix> {
    let mut t = Matrix::zeros(labels.len(), num_classes);
    for (i, label) in labels.iter().enumerate() {
        for c in label.classes() {
            if c >= num_classes {
                return Err(Error::Data(format!(
                    "label {c} out of range for {num_classes} classes"
                )));
            }
        }
        match (label, task) {
            (Label::Class(c), Task::Multiclass) => t.set(i, *c, 1.0),
            (Label::Set(s), Task::Multilabel) => {
                for c in s {
                    t.set(i, *c, 1.0);
                }
            }
            _ => {
                return Err(Error::Data(
                    "label kind does not match the dataset task".into(),
                ))
            }
        }
    }
    Ok(t)
}

/// Record the loss on the pass's tape: mean softmax cross-entropy for
/// multiclass, mean elementwise sigmoid binary cross-entropy for multilabel.
pub fn loss_t(
    tape: &mut Tape,
    scores: ValueId,
    labels: &[&Label],
    num_classes: usize,
    task: Task,
) -> Result<ValueId> {
    let targets = target_matrix(labels, num_classes, task)?;
    let t = tape.constant(targets);
    match task {
        Task::Multiclass => tape.softmax_cross_entropy(scores, t),
        Task::Multilabel => tape.sigmoid_bce(scores, t),
    }
}

/// Value-level loss for a score matrix.
pub fn loss(scores: &Matrix, labels: &[&Label], num_classes: usize, task: Task) -> Result<f64> {
    let mut tape = Tape::new();
    let s = tape.constant(scores.clone());
    let l = loss_t(&mut tape, s, labels, num_classes, task)?;
    Ok(tape.value(l).get(0, 0))
}

/// Row softmax of a score matrix (value level, for metrics).
pub fn softmax_scores(scores: &Matrix) -> Matrix {
    let (n, c) = (scores.rows(), scores.cols());
    let mut out = Matrix::zeros(n, c);
    for i in 0..n {
        let max = (0..c).map(|j| scores.get(i, j)).fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for j in 0..c {
            denom += (scores.get(i, j) - max).exp();
        }
        for j in 0..c {
            out.set(i, j, (scores.get(i, j) - max).exp() / denom);
        }
    }
    out
}
