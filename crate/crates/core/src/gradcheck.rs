//! Central-finite-difference verification of tape gradients.
//!
//! The oracle perturbs one parameter entry at a time and re-runs the
//! forward pass against the same prebuilt graphs the tape differentiated
//! (graph topology is a stop-gradient, so the compared function is exactly
//! the one the backward pass sees). Dropout stays off.

use crate::config::TrainConfig;
use crate::dataset::{Instance, Label, Schema};
use crate::error::Result;
use crate::forward::{build_batch_graphs, forward_with_graphs, loss_t, BatchGraphs};
use crate::graph::AnchorMode;
use crate::model::ModelParameters;
use crate::rng::Rng;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// (tensor name, relative error) per parameter group.
    pub per_group: Vec<(String, f64)>,
    pub max_rel_err: f64,
}

fn loss_with(
    schema: &Schema,
    instances: &[&Instance],
    params: &ModelParameters,
    cfg: &TrainConfig,
    graphs: &BatchGraphs,
    anchor_mode: AnchorMode,
) -> Result<f64> {
    let mut rng = Rng::from_seed(0); // dropout off, never drawn
    let mut pass = forward_with_graphs(
        schema, instances, params, cfg, graphs, false, &mut rng, anchor_mode,
    )?;
    let labels: Vec<&Label> = instances.iter().map(|i| &i.label).collect();
    let l = loss_t(
        &mut pass.tape,
        pass.scores,
        &labels,
        schema.num_classes,
        schema.task,
    )?;
    Ok(pass.tape.value(l).get(0, 0))
}

/// Compare tape gradients of the batch loss against central differences of
/// every parameter entry. Relative error per group is
/// ‖g_tape − g_fd‖∞ / max(‖g_fd‖∞, ‖g_tape‖∞, 1e-6).
pub fn finite_difference_check(
    schema: &Schema,
    instances: &[&Instance],
    params: &ModelParameters,
    cfg: &TrainConfig,
    anchor_mode: AnchorMode,
    step: f64,
) -> Result<GradCheckReport> {
    let graphs = build_batch_graphs(schema, instances, params, cfg, anchor_mode)?;

    // tape gradients
    let mut rng = Rng::from_seed(0);
    let mut pass = forward_with_graphs(
        schema, instances, params, cfg, &graphs, false, &mut rng, anchor_mode,
    )?;
    let labels: Vec<&Label> = instances.iter().map(|i| &i.label).collect();
    let loss_id = loss_t(
        &mut pass.tape,
        pass.scores,
        &labels,
        schema.num_classes,
        schema.task,
    )?;
    let grads = pass.tape.backward(loss_id)?;

    let mut work = params.clone();
    let mut per_group = Vec::new();
    let mut max_rel: f64 = 0.0;
    for (gi, (name, id)) in pass.bindings.iter().enumerate() {
        let tape_grad = grads.wrt(*id)?.clone();
        let (rows, cols) = (tape_grad.rows(), tape_grad.cols());
        let mut max_diff: f64 = 0.0;
        let mut max_fd: f64 = 0.0;
        for i in 0..rows {
            for j in 0..cols {
                let base = {
                    let slot = &work.tensors()[gi].1;
                    slot.get(i, j)
                };
                work.tensors_mut()[gi].1.set(i, j, base + step);
                let plus = loss_with(schema, instances, &work, cfg, &graphs, anchor_mode)?;
                work.tensors_mut()[gi].1.set(i, j, base - step);
                let minus = loss_with(schema, instances, &work, cfg, &graphs, anchor_mode)?;
                work.tensors_mut()[gi].1.set(i, j, base);
                let fd = (plus - minus) / (2.0 * step);
                max_diff = max_diff.max((tape_grad.get(i, j) - fd).abs());
                max_fd = max_fd.max(fd.abs());
            }
        }
        let scale = max_fd.max(tape_grad.max_abs()).max(1e-6);
        let rel = max_diff / scale;
        max_rel = max_rel.max(rel);
        per_group.push((name.clone(), rel));
    }
    Ok(GradCheckReport {
        per_group,
        max_rel_err: max_rel,
    })
}
