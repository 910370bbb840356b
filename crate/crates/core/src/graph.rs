//! Dual graph construction over a batch of instances.
//!
//! Intra-modality graphs connect instances whose projected features are
//! both close (squared Euclidean distance below a threshold) and pointing
//! the same way (nonnegative cosine weight). The cross-instance semantic
//! graph spans every instance with a Gaussian kernel on semantic
//! embeddings. Derived operators follow the usual symmetric normalization;
//! rows of isolated nodes stay zero in the normalized adjacency, so the
//! Laplacian row is an identity row and the node is inert.

use crate::dataset::Label;
use crate::eigen::{sym_eig, EigenDecomposition};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GraphKind {
    /// Modality-local graph, tagged with the modality name.
    Intra(String),
    /// Cross-instance semantic graph.
    Inter,
}

/// Symmetric weighted adjacency over batch instances, zero diagonal,
/// weights in [0, 1].
#[derive(Debug, Clone)]
pub struct Graph {
    pub n: usize,
    pub adjacency: Matrix,
    pub kind: GraphKind,
}

/// Degree, normalized adjacency, normalized Laplacian, and (optionally)
/// the Laplacian eigendecomposition of a graph.
#[derive(Debug, Clone)]
pub struct GraphOperators {
    pub degree: Vec<f64>,
    pub norm_adjacency: Matrix,
    pub laplacian: Matrix,
    pub eigen: Option<EigenDecomposition>,
}

impl GraphOperators {
    pub fn n(&self) -> usize {
        self.laplacian.rows()
    }
}

/// Cosine similarity in [-1, 1]; vectors with norm below 1e-12 compare as 0.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Shape(format!(
            "cosine_similarity: lengths {} vs {}",
            u.len(),
            v.len()
        )));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu: f64 = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nu < 1e-12 || nv < 1e-12 {
        return Ok(0.0);
    }
    // rounding can push the ratio a few ulps past ±1
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

fn squared_distance(u: &[f64], v: &[f64]) -> f64 {
    u.iter()
        .zip(v)
        .map(|(a, b)| {
            let d = a - b;
            d * d
        })
        .sum()
}

fn pairwise_squared_distances(x: &Matrix) -> Vec<f64> {
    let n = x.rows();
    let mut out = Vec::with_capacity(n.saturating_sub(1) * n / 2);
    for i in 0..n {
        let ri = x.row(i);
        for j in (i + 1)..n {
            out.push(squared_distance(&ri, &x.row(j)));
        }
    }
    out
}

/// Default intra-graph gate: the squared 25th-percentile pairwise distance
/// (nearest-rank), floored so exact duplicates still connect.
pub fn default_epsilon(x: &Matrix) -> f64 {
    let mut d2 = pairwise_squared_distances(x);
    if d2.is_empty() {
        return 1.0;
    }
    d2.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = ((d2.len() as f64 * 0.25).ceil() as usize).clamp(1, d2.len());
    d2[rank - 1].max(1e-12)
}

/// Default semantic-graph bandwidth: the median pairwise distance, floored
/// to keep the kernel well defined when all embeddings coincide.
pub fn default_sigma(e: &Matrix) -> f64 {
    let mut d2 = pairwise_squared_distances(e);
    if d2.is_empty() {
        return 1.0;
    }
    d2.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = d2.len() / 2;
    let med2 = if d2.len() % 2 == 1 {
        d2[mid]
    } else {
        0.5 * (d2[mid - 1] + d2[mid])
    };
    med2.sqrt().max(1e-9)
}

/// Intra-modality graph from rows of projected features (present-modality
/// instances only): weight = max(0, cosine) gated by squared distance < ε.
pub fn build_intra_graph(x: &Matrix, epsilon: f64, modality: &str) -> Result<Graph> {
    if epsilon <= 0.0 {
        return Err(Error::Config(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let n = x.rows();
    let mut a = Matrix::zeros(n, n);
    for i in 0..n {
        let ri = x.row(i);
        for j in (i + 1)..n {
            let rj = x.row(j);
            if squared_distance(&ri, &rj) < epsilon {
                let w = cosine_similarity(&ri, &rj)?.max(0.0);
                a.set(i, j, w);
                a.set(j, i, w);
            }
        }
    }
    Ok(Graph {
        n,
        adjacency: a,
        kind: GraphKind::Intra(modality.to_string()),
    })
}

/// Cross-instance semantic graph over every batch instance:
/// weight = exp(−‖eᵢ − eⱼ‖² / σ²).
pub fn build_inter_graph(e: &Matrix, sigma: f64) -> Result<Graph> {
    if sigma <= 0.0 {
        return Err(Error::Config(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    let n = e.rows();
    let mut a = Matrix::zeros(n, n);
    for i in 0..n {
        let ri = e.row(i);
        for j in (i + 1)..n {
            let w = (-squared_distance(&ri, &e.row(j)) / (sigma * sigma)).exp();
            a.set(i, j, w);
            a.set(j, i, w);
        }
    }
    Ok(Graph {
        n,
        adjacency: a,
        kind: GraphKind::Inter,
    })
}

/// Source of semantic embeddings for the cross-instance graph and for
/// attention anchors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnchorMode {
    /// Rows of a learnable class-embedding table (training only).
    Labels,
    /// Mean of the present modalities' vectors per instance.
    Centroid,
}

/// Label-mode semantic embeddings: the class table row per instance, or the
/// mean of the label set's rows for multilabel instances.
pub fn semantic_embeddings_labels(labels: &[Label], table: &Matrix) -> Result<Matrix> {
    let d = table.cols();
    let mut out = Matrix::zeros(labels.len(), d);
    for (i, label) in labels.iter().enumerate() {
        let classes = label.classes();
        if classes.is_empty() {
            return Err(Error::Data(format!("instance {i} has an empty label set")));
        }
        for c in &classes {
            if *c >= table.rows() {
                return Err(Error::Shape(format!(
                    "label {c} outside class table with {} rows",
                    table.rows()
                )));
            }
            for j in 0..d {
                out.set(i, j, out.get(i, j) + table.get(*c, j));
            }
        }
        let inv = 1.0 / classes.len() as f64;
        for j in 0..d {
            out.set(i, j, out.get(i, j) * inv);
        }
    }
    Ok(out)
}

/// Centroid-mode semantic embeddings: per instance, the mean over present
/// modalities of the full-batch projected feature rows.
pub fn semantic_embeddings_centroid(projected: &[Matrix], present: &[Vec<bool>]) -> Result<Matrix> {
    let n_mod = projected.len();
    if n_mod == 0 {
        return Err(Error::Shape("no modalities".into()));
    }
    let n = projected[0].rows();
    let d = projected[0].cols();
    for p in projected {
        if p.rows() != n || p.cols() != d {
            return Err(Error::Shape("projected feature shapes differ".into()));
        }
    }
    let mut out = Matrix::zeros(n, d);
    for i in 0..n {
        let mut count = 0usize;
        for (m, p) in projected.iter().enumerate() {
            if present[m][i] {
                count += 1;
                for j in 0..d {
                    out.set(i, j, out.get(i, j) + p.get(i, j));
                }
            }
        }
        if count == 0 {
            return Err(Error::Data(format!("instance {i} has no present modality")));
        }
        let inv = 1.0 / count as f64;
        for j in 0..d {
            out.set(i, j, out.get(i, j) * inv);
        }
    }
    Ok(out)
}

/// Dispatching wrapper over the two embedding modes.
pub fn semantic_embeddings(
    mode: AnchorMode,
    labels: Option<&[Label]>,
    table: &Matrix,
    projected: &[Matrix],
    present: &[Vec<bool>],
) -> Result<Matrix> {
    match mode {
        AnchorMode::Labels => {
            let labels = labels.ok_or_else(|| {
                Error::Mode("label-mode semantic embeddings need labels (training only)".into())
            })?;
            semantic_embeddings_labels(labels, table)
        }
        AnchorMode::Centroid => semantic_embeddings_centroid(projected, present),
    }
}

/// Degree, D^{-1/2} A D^{-1/2}, L = I − Ã, and optionally the Laplacian
/// eigendecomposition.
pub fn graph_operators(g: &Graph, with_eig: bool) -> Result<GraphOperators> {
    let n = g.n;
    let degree = g.adjacency.row_sums();
    let inv_sqrt: Vec<f64> = degree
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
        .collect();
    let mut norm_adjacency = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let w = g.adjacency.get(i, j);
            if w != 0.0 {
                norm_adjacency.set(i, j, w * inv_sqrt[i] * inv_sqrt[j]);
            }
        }
    }
    let mut laplacian = norm_adjacency.scale(-1.0);
    for i in 0..n {
        laplacian.set(i, i, 1.0 - norm_adjacency.get(i, i));
    }
    let eigen = if with_eig {
        Some(sym_eig(&laplacian)?)
    } else {
        None
    };
    Ok(GraphOperators {
        degree,
        norm_adjacency,
        laplacian,
        eigen,
    })
}
