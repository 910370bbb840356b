//! Model parameters: every learnable tensor, seeded initialization, named
//! iteration for the optimizer, and exact-round-trip JSON checkpoints.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{BranchMode, TrainConfig};
use crate::dataset::{ModalityDef, Schema, Task};
use crate::error::{Error, Result};
use crate::fusion::FusionParams;
use crate::gcn::{GcnLayerParams, GcnStack};
use crate::matrix::Matrix;
use crate::projection::ProjectionParams;
use crate::rng::Rng;

/// Architecture dimensions, derived once from schema + config and embedded
/// in checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelDims {
    pub modalities: Vec<ModalityDef>,
    pub num_classes: usize,
    pub task: Task,
    pub latent_dim: usize,
    pub hidden: usize,
    pub gcn_layers: usize,
    pub chebyshev_k: usize,
    pub hop_k: usize,
    pub branch_mode: BranchMode,
    pub share_filters: bool,
}

impl ModelDims {
    pub fn from_config(schema: &Schema, cfg: &TrainConfig) -> Self {
        ModelDims {
            modalities: schema.modalities.clone(),
            num_classes: schema.num_classes,
            task: schema.task,
            latent_dim: cfg.latent_dim,
            hidden: cfg.hidden,
            gcn_layers: cfg.gcn_layers,
            chebyshev_k: cfg.chebyshev_k,
            hop_k: cfg.hop_k,
            branch_mode: cfg.branch_mode,
            share_filters: cfg.share_filters,
        }
    }

    /// Output dimension of one graph stream (intra or inter).
    pub fn stream_dim(&self) -> usize {
        let gcn_out = if self.gcn_layers > 0 {
            self.hidden
        } else {
            self.latent_dim
        };
        match self.branch_mode {
            BranchMode::Sequential => gcn_out,
            BranchMode::Parallel => self.latent_dim + gcn_out,
        }
    }

    /// Node embedding dimension after intra/inter concatenation.
    pub fn d_h(&self) -> usize {
        2 * self.stream_dim()
    }

    /// Anchor dimension (defaults to the embedding dimension).
    pub fn d_s(&self) -> usize {
        self.d_h()
    }

    pub fn n_modalities(&self) -> usize {
        self.modalities.len()
    }

    fn n_filters(&self) -> usize {
        if self.share_filters {
            1
        } else {
            self.n_modalities()
        }
    }

    fn filter_name(&self, m: usize) -> String {
        if self.share_filters {
            "shared".to_string()
        } else {
            self.modalities[m].name.clone()
        }
    }
}

/// Every learnable tensor of the fusion model.
#[derive(Debug, Clone)]
pub struct ModelParameters {
    pub dims: ModelDims,
    pub projections: Vec<ProjectionParams>,
    /// Chebyshev coefficients (1×(K+1)) for the intra stream, per modality
    /// (single entry when filters are shared across modalities).
    pub cheb_intra: Vec<Matrix>,
    /// Same for the inter stream.
    pub cheb_inter: Vec<Matrix>,
    pub gcn_intra: Vec<GcnStack>,
    pub gcn_inter: GcnStack,
    pub fusion: FusionParams,
    pub class_table: Matrix,
    pub head_weight: Matrix,
    pub head_bias: Matrix,
}

fn glorot(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    let std = (2.0 / (rows + cols) as f64).sqrt();
    Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.normal() * std).collect())
        .expect("glorot shape")
}

fn gcn_stack(dims: &ModelDims, rng: &mut Rng, dropout: f64) -> GcnStack {
    let hop_scale = 1.0 / ((dims.hop_k + 1) as f64).sqrt();
    let mut layers = Vec::with_capacity(dims.gcn_layers);
    let mut d_in = dims.latent_dim;
    for _ in 0..dims.gcn_layers {
        let hop_weights = (0..=dims.hop_k)
            .map(|_| glorot(d_in, dims.hidden, rng).scale(hop_scale))
            .collect();
        layers.push(GcnLayerParams {
            hop_weights,
            dropout,
        });
        d_in = dims.hidden;
    }
    GcnStack { layers }
}

fn neutral_theta(k: usize) -> Matrix {
    let mut theta = vec![0.0; k + 1];
    theta[0] = 1.0;
    Matrix::row_vector(theta)
}

impl ModelParameters {
    /// Seed-deterministic initialization. Chebyshev filters start as the
    /// identity response, the classifier head at zero (so the initial loss
    /// on balanced classes sits at ln C), everything else Glorot.
    pub fn init(schema: &Schema, cfg: &TrainConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let dims = ModelDims::from_config(schema, cfg);
        let projections = dims
            .modalities
            .iter()
            .map(|m| ProjectionParams {
                weight: glorot(dims.latent_dim, m.dim, rng),
                bias: Matrix::zeros(1, dims.latent_dim),
            })
            .collect();
        let cheb_intra = (0..dims.n_filters())
            .map(|_| neutral_theta(dims.chebyshev_k))
            .collect();
        let cheb_inter = (0..dims.n_filters())
            .map(|_| neutral_theta(dims.chebyshev_k))
            .collect();
        let gcn_intra = (0..dims.n_modalities())
            .map(|_| gcn_stack(&dims, rng, cfg.dropout))
            .collect();
        let gcn_inter = gcn_stack(&dims, rng, cfg.dropout);
        let (d_h, d_s) = (dims.d_h(), dims.d_s());
        let attn_std = 1.0 / ((d_h * d_s) as f64).sqrt();
        let fusion = FusionParams {
            attention: Matrix::new(
                d_h,
                d_s,
                (0..d_h * d_s).map(|_| rng.normal() * attn_std).collect(),
            )?,
            anchor_proj: glorot(d_s, d_h, rng),
            gate_weight: glorot(d_h, d_h, rng).scale(0.1),
            gate_bias: Matrix::zeros(1, d_h),
        };
        let class_table = Matrix::new(
            dims.num_classes,
            d_s,
            (0..dims.num_classes * d_s).map(|_| rng.normal()).collect(),
        )?;
        Ok(ModelParameters {
            projections,
            cheb_intra,
            cheb_inter,
            gcn_intra,
            gcn_inter,
            fusion,
            class_table,
            head_weight: Matrix::zeros(dims.num_classes, d_h),
            head_bias: Matrix::zeros(1, dims.num_classes),
            dims,
        })
    }

    /// Chebyshev coefficients serving modality `m` on the intra stream.
    pub fn theta_intra(&self, m: usize) -> &Matrix {
        if self.dims.share_filters {
            &self.cheb_intra[0]
        } else {
            &self.cheb_intra[m]
        }
    }

    pub fn theta_inter(&self, m: usize) -> &Matrix {
        if self.dims.share_filters {
            &self.cheb_inter[0]
        } else {
            &self.cheb_inter[m]
        }
    }

    /// Named tensors in a fixed order shared by the optimizer, gradients,
    /// and checkpoints.
    pub fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        for (m, p) in self.projections.iter().enumerate() {
            let name = &self.dims.modalities[m].name;
            out.push((format!("proj.{name}.weight"), &p.weight));
            out.push((format!("proj.{name}.bias"), &p.bias));
        }
        for (m, t) in self.cheb_intra.iter().enumerate() {
            out.push((format!("cheb.intra.{}.theta", self.dims.filter_name(m)), t));
        }
        for (m, t) in self.cheb_inter.iter().enumerate() {
            out.push((format!("cheb.inter.{}.theta", self.dims.filter_name(m)), t));
        }
        for (m, stack) in self.gcn_intra.iter().enumerate() {
            let name = &self.dims.modalities[m].name;
            for (l, layer) in stack.layers.iter().enumerate() {
                for (k, w) in layer.hop_weights.iter().enumerate() {
                    out.push((format!("gcn.intra.{name}.layer{l}.hop{k}"), w));
                }
            }
        }
        for (l, layer) in self.gcn_inter.layers.iter().enumerate() {
            for (k, w) in layer.hop_weights.iter().enumerate() {
                out.push((format!("gcn.inter.layer{l}.hop{k}"), w));
            }
        }
        out.push(("fusion.attention".into(), &self.fusion.attention));
        out.push(("fusion.anchor_proj".into(), &self.fusion.anchor_proj));
        out.push(("fusion.gate_weight".into(), &self.fusion.gate_weight));
        out.push(("fusion.gate_bias".into(), &self.fusion.gate_bias));
        out.push(("class_table".into(), &self.class_table));
        out.push(("head.weight".into(), &self.head_weight));
        out.push(("head.bias".into(), &self.head_bias));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut out: Vec<(String, &mut Matrix)> = Vec::new();
        let dims = self.dims.clone();
        for (m, p) in self.projections.iter_mut().enumerate() {
            let name = &dims.modalities[m].name;
            out.push((format!("proj.{name}.weight"), &mut p.weight));
            out.push((format!("proj.{name}.bias"), &mut p.bias));
        }
        for (m, t) in self.cheb_intra.iter_mut().enumerate() {
            out.push((format!("cheb.intra.{}.theta", dims.filter_name(m)), t));
        }
        for (m, t) in self.cheb_inter.iter_mut().enumerate() {
            out.push((format!("cheb.inter.{}.theta", dims.filter_name(m)), t));
        }
        for (m, stack) in self.gcn_intra.iter_mut().enumerate() {
            let name = &dims.modalities[m].name;
            for (l, layer) in stack.layers.iter_mut().enumerate() {
                for (k, w) in layer.hop_weights.iter_mut().enumerate() {
                    out.push((format!("gcn.intra.{name}.layer{l}.hop{k}"), w));
                }
            }
        }
        for (l, layer) in self.gcn_inter.layers.iter_mut().enumerate() {
            for (k, w) in layer.hop_weights.iter_mut().enumerate() {
                out.push((format!("gcn.inter.layer{l}.hop{k}"), w));
            }
        }
        out.push(("fusion.attention".into(), &mut self.fusion.attention));
        out.push(("fusion.anchor_proj".into(), &mut self.fusion.anchor_proj));
        out.push(("fusion.gate_weight".into(), &mut self.fusion.gate_weight));
        out.push(("fusion.gate_bias".into(), &mut self.fusion.gate_bias));
        out.push(("class_table".into(), &mut self.class_table));
        out.push(("head.weight".into(), &mut self.head_weight));
        out.push(("head.bias".into(), &mut self.head_bias));
        out
    }

    /// First tensor holding a non-finite value, if any.
    pub fn first_non_finite(&self) -> Option<String> {
        self.tensors()
            .into_iter()
            .find(|(_, t)| !t.all_finite())
            .map(|(name, _)| name)
    }

    /// Check that this parameter set matches the architecture a config and
    /// schema describe; errors name the first offending tensor.
    pub fn validate_against(&self, schema: &Schema, cfg: &TrainConfig) -> Result<()> {
        let expected = ModelParameters::init(schema, cfg, &mut Rng::from_seed(0))?;
        let mine = self.tensors();
        let theirs = expected.tensors();
        for (name_a, a) in &mine {
            match theirs.iter().find(|(n, _)| n == name_a) {
                None => {
                    return Err(Error::Checkpoint(format!(
                        "tensor {name_a} not part of the configured architecture"
                    )))
                }
                Some((_, b)) if !a.same_shape(b) => {
                    return Err(Error::Checkpoint(format!(
                        "tensor {name_a} has shape {}x{}, expected {}x{}",
                        a.rows(),
                        a.cols(),
                        b.rows(),
                        b.cols()
                    )));
                }
                _ => {}
            }
        }
        for (name_b, _) in &theirs {
            if !mine.iter().any(|(n, _)| n == name_b) {
                return Err(Error::Checkpoint(format!("missing tensor {name_b}")));
            }
        }
        if expected.dims != self.dims {
            return Err(Error::Checkpoint(format!(
                "architecture mismatch: checkpoint dims {:?} vs configured {:?}",
                self.dims, expected.dims
            )));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct TensorFile {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct DimsFile {
    modalities: Vec<(String, usize)>,
    num_classes: usize,
    task: String,
    latent_dim: usize,
    hidden: usize,
    gcn_layers: usize,
    chebyshev_k: usize,
    hop_k: usize,
    branch_mode: String,
    share_filters: bool,
    dropout: f64,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    dims: DimsFile,
    tensors: BTreeMap<String, TensorFile>,
}

const CHECKPOINT_FORMAT: &str = "graphfuse-checkpoint-v1";

pub fn save_checkpoint(params: &ModelParameters, path: impl AsRef<Path>) -> Result<()> {
    let dims = &params.dims;
    let dropout = params
        .gcn_intra
        .first()
        .and_then(|s| s.layers.first())
        .map(|l| l.dropout)
        .unwrap_or(0.0);
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT.into(),
        dims: DimsFile {
            modalities: dims
                .modalities
                .iter()
                .map(|m| (m.name.clone(), m.dim))
                .collect(),
            num_classes: dims.num_classes,
            task: dims.task.to_string(),
            latent_dim: dims.latent_dim,
            hidden: dims.hidden,
            gcn_layers: dims.gcn_layers,
            chebyshev_k: dims.chebyshev_k,
            hop_k: dims.hop_k,
            branch_mode: dims.branch_mode.as_str().into(),
            share_filters: dims.share_filters,
            dropout,
        },
        tensors: params
            .tensors()
            .into_iter()
            .map(|(name, t)| {
                (
                    name,
                    TensorFile {
                        rows: t.rows(),
                        cols: t.cols(),
                        data: t.as_slice().to_vec(),
                    },
                )
            })
            .collect(),
    };
    let json = serde_json::to_string(&file)
        .map_err(|e| Error::Checkpoint(format!("serialize: {e}")))?;
    std::fs::write(path, json + "\n")?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParameters> {
    let text = std::fs::read_to_string(path)?;
    let file: CheckpointFile =
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("parse: {e}")))?;
    if file.format != CHECKPOINT_FORMAT {
        return Err(Error::Checkpoint(format!(
            "unsupported format {:?}",
            file.format
        )));
    }
    let d = &file.dims;
    let schema = Schema::new(
        d.modalities
            .iter()
            .map(|(name, dim)| ModalityDef {
                name: name.clone(),
                dim: *dim,
            })
            .collect(),
        d.num_classes,
        match d.task.as_str() {
            "multiclass" => Task::Multiclass,
            "multilabel" => Task::Multilabel,
            other => return Err(Error::Checkpoint(format!("unknown task {other}"))),
        },
    )
    .map_err(|e| Error::Checkpoint(e.to_string()))?;
    let cfg = TrainConfig {
        latent_dim: d.latent_dim,
        hidden: d.hidden,
        gcn_layers: d.gcn_layers,
        chebyshev_k: d.chebyshev_k,
        hop_k: d.hop_k,
        branch_mode: BranchMode::parse(&d.branch_mode).map_err(|e| Error::Checkpoint(e.to_string()))?,
        share_filters: d.share_filters,
        dropout: d.dropout,
        ..TrainConfig::default()
    };
    // template with the right shapes, then fill every tensor from the file
    let mut params = ModelParameters::init(&schema, &cfg, &mut Rng::from_seed(0))
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    let expected: Vec<String> = params.tensors().into_iter().map(|(n, _)| n).collect();
    for name in file.tensors.keys() {
        if !expected.contains(name) {
            return Err(Error::Checkpoint(format!("unexpected tensor {name}")));
        }
    }
    for (name, slot) in params.tensors_mut() {
        let stored = file
            .tensors
            .get(&name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
        if stored.rows != slot.rows() || stored.cols != slot.cols() {
            return Err(Error::Checkpoint(format!(
                "tensor {name} has shape {}x{}, expected {}x{}",
                stored.rows,
                stored.cols,
                slot.rows(),
                slot.cols()
            )));
        }
        if stored.data.len() != stored.rows * stored.cols {
            return Err(Error::Checkpoint(format!(
                "tensor {name} carries {} values for shape {}x{}",
                stored.data.len(),
                stored.rows,
                stored.cols
            )));
        }
        *slot = Matrix::new(stored.rows, stored.cols, stored.data.clone())
            .map_err(|e| Error::Checkpoint(format!("tensor {name}: {e}")))?;
        if !slot.all_finite() {
            return Err(Error::Checkpoint(format!(
                "tensor {name} holds a non-finite value"
            )));
        }
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Task;

    fn small_schema() -> Schema {
        Schema::new(
            vec![
                ModalityDef {
                    name: "text".into(),
                    dim: 5,
                },
                ModalityDef {
                    name: "image".into(),
                    dim: 4,
                },
                ModalityDef {
                    name: "audio".into(),
                    dim: 3,
                },
            ],
            3,
            Task::Multiclass,
        )
        .unwrap()
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            latent_dim: 6,
            hidden: 6,
            gcn_layers: 2,
            chebyshev_k: 2,
            hop_k: 1,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn init_is_deterministic() {
        let schema = small_schema();
        let cfg = small_config();
        let a = ModelParameters::init(&schema, &cfg, &mut Rng::from_seed(9)).unwrap();
        let b = ModelParameters::init(&schema, &cfg, &mut Rng::from_seed(9)).unwrap();
        for ((na, ta), (_, tb)) in a.tensors().iter().zip(b.tensors().iter()) {
            assert_eq!(ta.as_slice(), tb.as_slice(), "{na}");
        }
    }

    #[test]
    fn tensor_names_unique_and_aligned() {
        let schema = small_schema();
        let cfg = small_config();
        let mut params = ModelParameters::init(&schema, &cfg, &mut Rng::from_seed(1)).unwrap();
        let names: Vec<String> = params.tensors().into_iter().map(|(n, _)| n).collect();
        let unique: std::collections::HashSet<_> = names.iter().collect();
        assert_eq!(unique.len(), names.len());
        let mut_names: Vec<String> = params.tensors_mut().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, mut_names);
    }

    #[test]
    fn checkpoint_round_trip_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let schema = small_schema();
        let cfg = small_config();
        let params = ModelParameters::init(&schema, &cfg, &mut Rng::from_seed(5)).unwrap();
        save_checkpoint(&params, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        for ((na, ta), (_, tb)) in params.tensors().iter().zip(loaded.tensors().iter()) {
            assert_eq!(ta.as_slice(), tb.as_slice(), "{na}");
        }
        // saving again is byte-identical
        let path2 = dir.path().join("ckpt2.json");
        save_checkpoint(&loaded, &path2).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }

    #[test]
    fn truncated_checkpoint_fails_closed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let schema = small_schema();
        let params =
            ModelParameters::init(&schema, &small_config(), &mut Rng::from_seed(5)).unwrap();
        save_checkpoint(&params, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, &text[..text.len() / 2]).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(Error::Checkpoint(_))
        ));
    }

    #[test]
    fn mismatched_config_names_offending_tensor() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let schema = small_schema();
        let cfg = small_config();
        let params = ModelParameters::init(&schema, &cfg, &mut Rng::from_seed(5)).unwrap();
        save_checkpoint(&params, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();

        let bigger = TrainConfig {
            hidden: 9,
            ..small_config()
        };
        let err = loaded.validate_against(&schema, &bigger).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("gcn.intra.text.layer0.hop0"), "{msg}");
        assert!(msg.contains("expected"), "{msg}");
    }

    #[test]
    fn shared_filters_collapse_theta_count() {
        let schema = small_schema();
        let cfg = TrainConfig {
            share_filters: true,
            ..small_config()
        };
        let params = ModelParameters::init(&schema, &cfg, &mut Rng::from_seed(2)).unwrap();
        assert_eq!(params.cheb_intra.len(), 1);
        assert!(std::ptr::eq(params.theta_intra(0), params.theta_intra(2)));
    }

    #[test]
    fn stream_dims_by_branch_mode() {
        let schema = small_schema();
        let cfg = small_config();
        let dims = ModelDims::from_config(&schema, &cfg);
        assert_eq!(dims.stream_dim(), 6);
        assert_eq!(dims.d_h(), 12);
        let dims_par = ModelDims::from_config(
            &schema,
            &TrainConfig {
                branch_mode: BranchMode::Parallel,
                ..small_config()
            },
        );
        assert_eq!(dims_par.stream_dim(), 12);
        assert_eq!(dims_par.d_h(), 24);
    }
}
