//! Semantic-aware attention over modalities, weighted fusion, and sigmoid
//! gating, with absent modalities masked out of the softmax entirely so
//! their weight is exactly zero and the rest renormalizes.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::tape::{Tape, ValueId};

/// Learnable fusion tensors: bilinear attention map, anchor projection for
/// centroid mode, and the elementwise gate.
#[derive(Debug, Clone)]
pub struct FusionParams {
    /// d_h × d_s bilinear form between node embeddings and anchors.
    pub attention: Matrix,
    /// d_s × d_h projection turning an embedding centroid into an anchor.
    pub anchor_proj: Matrix,
    /// d_h × d_h gate weight.
    pub gate_weight: Matrix,
    /// 1 × d_h gate bias.
    pub gate_bias: Matrix,
}

/// Per-instance attention weights over modalities: logits hᵀ W_a s for
/// present modalities, max-subtracted softmax, absent entries exactly 0.
pub fn attention_weights(
    h: &[Vec<f64>],
    s: &[f64],
    w_a: &Matrix,
    mask: &[bool],
) -> Result<Vec<f64>> {
    if h.len() != mask.len() {
        return Err(Error::Shape(format!(
            "attention_weights: {} embeddings vs {} mask entries",
            h.len(),
            mask.len()
        )));
    }
    if !mask.iter().any(|&p| p) {
        return Err(Error::Data(
            "attention_weights: no present modality".into(),
        ));
    }
    let (dh, ds) = (w_a.rows(), w_a.cols());
    if s.len() != ds {
        return Err(Error::Shape(format!(
            "attention_weights: anchor length {} vs W_a cols {}",
            s.len(),
            ds
        )));
    }
    let mut logits = vec![0.0; h.len()];
    for (m, hm) in h.iter().enumerate() {
        if !mask[m] {
            continue;
        }
        if hm.len() != dh {
            return Err(Error::Shape(format!(
                "attention_weights: embedding length {} vs W_a rows {}",
                hm.len(),
                dh
            )));
        }
        let mut acc = 0.0;
        for (i, hv) in hm.iter().enumerate() {
            let mut row = 0.0;
            for (j, sv) in s.iter().enumerate() {
                row += w_a.get(i, j) * sv;
            }
            acc += hv * row;
        }
        logits[m] = acc;
    }
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, &p)| p)
        .map(|(l, _)| *l)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut weights = vec![0.0; h.len()];
    let mut denom = 0.0;
    for m in 0..h.len() {
        if mask[m] {
            let e = (logits[m] - max).exp();
            weights[m] = e;
            denom += e;
        }
    }
    for w in &mut weights {
        *w /= denom;
    }
    Ok(weights)
}

/// Convex combination z = Σ_m α_m h_m over present modalities (α already 0
/// for absent ones).
pub fn fuse(alpha: &[f64], h: &[Vec<f64>]) -> Result<Vec<f64>> {
    if alpha.len() != h.len() {
        return Err(Error::Shape(format!(
            "fuse: {} weights vs {} embeddings",
            alpha.len(),
            h.len()
        )));
    }
    let d = h
        .iter()
        .map(|v| v.len())
        .max()
        .ok_or_else(|| Error::Shape("fuse: no modalities".into()))?;
    let mut z = vec![0.0; d];
    for (a, hm) in alpha.iter().zip(h) {
        if *a == 0.0 {
            continue;
        }
        if hm.len() != d {
            return Err(Error::Shape("fuse: embedding lengths differ".into()));
        }
        for (zi, hv) in z.iter_mut().zip(hm) {
            *zi += a * hv;
        }
    }
    Ok(z)
}

/// Elementwise sigmoid gate: sigmoid(W_g z + b_g) ⊙ z.
pub fn gate(z: &[f64], w_g: &Matrix, b_g: &Matrix) -> Result<Vec<f64>> {
    let d = z.len();
    if w_g.rows() != d || w_g.cols() != d || b_g.cols() != d || b_g.rows() != 1 {
        return Err(Error::Shape(format!(
            "gate: z length {d} vs W_g {}x{}, b_g {}x{}",
            w_g.rows(),
            w_g.cols(),
            b_g.rows(),
            b_g.cols()
        )));
    }
    let mut out = vec![0.0; d];
    for i in 0..d {
        let mut acc = b_g.get(0, i);
        for (j, zv) in z.iter().enumerate() {
            acc += w_g.get(i, j) * zv;
        }
        let g = 1.0 / (1.0 + (-acc).exp());
        out[i] = g * z[i];
    }
    Ok(out)
}

/// Batched attention on the tape: per-modality embeddings `h` (n × d_h each),
/// anchors `s` (n × d_s), presence masks per modality. Returns α as n × M.
pub fn attention_weights_t(
    tape: &mut Tape,
    h: &[ValueId],
    s: ValueId,
    w_a: ValueId,
    present: &[Vec<bool>],
) -> Result<ValueId> {
    if h.is_empty() || h.len() != present.len() {
        return Err(Error::Shape(format!(
            "attention_weights: {} embeddings vs {} masks",
            h.len(),
            present.len()
        )));
    }
    let n = tape.value(s).rows();
    for mask in present {
        if mask.len() != n {
            return Err(Error::Shape("attention_weights: mask length mismatch".into()));
        }
    }
    for i in 0..n {
        if !present.iter().any(|mask| mask[i]) {
            return Err(Error::Data(format!(
                "attention_weights: instance {i} has no present modality"
            )));
        }
    }
    let mut logit_cols = Vec::with_capacity(h.len());
    for &hm in h {
        let projected = tape.matmul(hm, w_a)?; // n × d_s
        let logit = tape.rowwise_dot(projected, s)?; // n × 1
        logit_cols.push(logit);
    }
    let mut logits = logit_cols[0];
    for &col in &logit_cols[1..] {
        logits = tape.concat_cols(logits, col)?;
    }
    // row-major mask: instance i, modality m
    let mut mask = Vec::with_capacity(n * h.len());
    for i in 0..n {
        for pm in present {
            mask.push(pm[i]);
        }
    }
    tape.masked_softmax_rows(logits, &mask)
}

/// Batched fusion on the tape: z = Σ_m diag(α[:,m]) · H_m.
pub fn fuse_t(tape: &mut Tape, alpha: ValueId, h: &[ValueId]) -> Result<ValueId> {
    if tape.value(alpha).cols() != h.len() {
        return Err(Error::Shape(format!(
            "fuse: alpha has {} columns for {} modalities",
            tape.value(alpha).cols(),
            h.len()
        )));
    }
    let mut z: Option<ValueId> = None;
    for (m, &hm) in h.iter().enumerate() {
        let col = tape.slice_cols(alpha, m, 1)?;
        let term = tape.scale_rows(hm, col)?;
        z = Some(match z {
            None => term,
            Some(acc) => tape.add(acc, term)?,
        });
    }
    z.ok_or_else(|| Error::Shape("fuse: no modalities".into()))
}

/// Batched gate on the tape: sigmoid(Z W_gᵀ + b_g) ⊙ Z.
pub fn gate_t(tape: &mut Tape, z: ValueId, w_g: ValueId, b_g: ValueId) -> Result<ValueId> {
    let lin = tape.matmul_nt(z, w_g)?;
    let biased = tape.add_row(lin, b_g)?;
    let g = tape.sigmoid(biased);
    tape.hadamard(g, z)
}

/// Batched centroid anchors on the tape: W_s · mean of present modalities.
/// `inv_counts` carries 1/(present count) per instance as constants.
pub fn anchors_centroid_t(
    tape: &mut Tape,
    h: &[ValueId],
    present: &[Vec<bool>],
    w_s: ValueId,
) -> Result<ValueId> {
    if h.is_empty() {
        return Err(Error::Shape("anchors: no modalities".into()));
    }
    let n = tape.value(h[0]).rows();
    let mut mean: Option<ValueId> = None;
    for (m, &hm) in h.iter().enumerate() {
        let weights: Vec<f64> = (0..n)
            .map(|i| {
                if present[m][i] {
                    let count = present.iter().filter(|pm| pm[i]).count();
                    1.0 / count as f64
                } else {
                    0.0
                }
            })
            .collect();
        let col = tape.constant(Matrix::column_vector(weights));
        let term = tape.scale_rows(hm, col)?;
        mean = Some(match mean {
            None => term,
            Some(acc) => tape.add(acc, term)?,
        });
    }
    let mean = mean.unwrap();
    tape.matmul_nt(mean, w_s)
}

/// Batched label anchors on the tape: class-table rows per instance label
/// (multilabel instances average their classes' rows).
pub fn anchors_labels_t(
    tape: &mut Tape,
    table: ValueId,
    labels: &[crate::dataset::Label],
) -> Result<ValueId> {
    use crate::dataset::Label;
    // single-class labels are a plain gather; mixed/multilabel gathers per
    // class then averages with constant weights
    if labels
        .iter()
        .all(|l| matches!(l, Label::Class(_)))
    {
        let idx: Vec<usize> = labels
            .iter()
            .map(|l| match l {
                Label::Class(c) => *c,
                Label::Set(_) => unreachable!(),
            })
            .collect();
        return tape.gather_rows(table, &idx);
    }
    let n = labels.len();
    let classes = tape.value(table).rows();
    let mut acc: Option<ValueId> = None;
    for c in 0..classes {
        let weights: Vec<f64> = labels
            .iter()
            .map(|l| {
                let set = l.classes();
                if set.contains(&c) {
                    1.0 / set.len() as f64
                } else {
                    0.0
                }
            })
            .collect();
        if weights.iter().all(|w| *w == 0.0) {
            continue;
        }
        let rows = tape.gather_rows(table, &vec![c; n])?;
        let col = tape.constant(Matrix::column_vector(weights));
        let term = tape.scale_rows(rows, col)?;
        acc = Some(match acc {
            None => term,
            Some(a) => tape.add(a, term)?,
        });
    }
    acc.ok_or_else(|| Error::Data("anchors: no labels".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
        Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect()).unwrap()
    }

    #[test]
    fn equal_logits_give_uniform_weights() {
        let h = vec![vec![1.0, 0.0]; 3];
        let s = vec![1.0, 1.0];
        let w_a = Matrix::identity(2);
        let alpha = attention_weights(&h, &s, &w_a, &[true, true, true]).unwrap();
        for a in &alpha {
            assert!((a - 1.0 / 3.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn known_logits_softmax_values() {
        // identity W_a, anchor e1, embeddings (1,..), (2,..), (3,..) force logits 1,2,3
        let h = vec![vec![1.0, 0.0], vec![2.0, 0.0], vec![3.0, 0.0]];
        let s = vec![1.0, 0.0];
        let w_a = Matrix::identity(2);
        let alpha = attention_weights(&h, &s, &w_a, &[true, true, true]).unwrap();
        let want = [0.09003057, 0.24472847, 0.66524096];
        for (a, w) in alpha.iter().zip(&want) {
            assert!((a - w).abs() <= 1e-8, "{a} vs {w}");
        }
    }

    #[test]
    fn masked_modalities_get_exact_zero() {
        let h = vec![vec![1.0, 0.0]; 3];
        let s = vec![1.0, 1.0];
        let w_a = Matrix::identity(2);
        let alpha = attention_weights(&h, &s, &w_a, &[true, false, true]).unwrap();
        assert_eq!(alpha[1], 0.0);
        assert!((alpha[0] - 0.5).abs() <= 1e-12);
        assert!((alpha[2] - 0.5).abs() <= 1e-12);
    }

    #[test]
    fn all_absent_is_an_error() {
        let h = vec![vec![1.0, 0.0]];
        let err = attention_weights(&h, &[1.0, 0.0], &Matrix::identity(2), &[false]);
        assert!(err.is_err());
    }

    #[test]
    fn logit_shift_invariance() {
        let mut rng = Rng::from_seed(3);
        let w_a = random(3, 3, &mut rng);
        let s: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
        let h: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..3).map(|_| rng.normal()).collect())
            .collect();
        let mask = [true, true, true];
        let base = attention_weights(&h, &s, &w_a, &mask).unwrap();
        // shift every present logit by c: add c·s/(sᵀs) W_a^{-T}... instead,
        // verify directly on the softmax identity with explicit logits
        let logits: Vec<f64> = h
            .iter()
            .map(|hm| {
                let mut acc = 0.0;
                for i in 0..3 {
                    for j in 0..3 {
                        acc += hm[i] * w_a.get(i, j) * s[j];
                    }
                }
                acc
            })
            .collect();
        let softmax = |ls: &[f64]| {
            let m = ls.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let es: Vec<f64> = ls.iter().map(|l| (l - m).exp()).collect();
            let d: f64 = es.iter().sum();
            es.iter().map(|e| e / d).collect::<Vec<f64>>()
        };
        let direct = softmax(&logits);
        let shifted = softmax(&logits.iter().map(|l| l + 17.3).collect::<Vec<_>>());
        for m in 0..3 {
            assert!((base[m] - direct[m]).abs() <= 1e-12);
            assert!((direct[m] - shifted[m]).abs() <= 1e-12);
        }
    }

    #[test]
    fn one_hot_fusion_selects() {
        let h = vec![vec![1.0, 2.0], vec![5.0, -1.0]];
        let z = fuse(&[0.0, 1.0], &h).unwrap();
        assert_eq!(z, vec![5.0, -1.0]);
    }

    #[test]
    fn identical_embeddings_are_a_fixed_point() {
        let h = vec![vec![0.4, -2.0]; 3];
        let z = fuse(&[0.2, 0.5, 0.3], &h).unwrap();
        assert!((z[0] - 0.4).abs() <= 1e-12);
        assert!((z[1] + 2.0).abs() <= 1e-12);
    }

    #[test]
    fn weighted_sum_matches_oracle() {
        let h = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![2.0, 2.0]];
        let alpha = [0.2, 0.3, 0.5];
        let z = fuse(&alpha, &h).unwrap();
        assert!((z[0] - (0.2 + 1.0)).abs() <= 1e-12);
        assert!((z[1] - (0.3 + 1.0)).abs() <= 1e-12);
    }

    #[test]
    fn zero_gate_params_halve_signal() {
        let z = vec![2.0, -4.0, 1.0];
        let out = gate(&z, &Matrix::zeros(3, 3), &Matrix::zeros(1, 3)).unwrap();
        assert_eq!(out, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn saturated_gate_passes_signal() {
        let z = vec![2.0, -4.0];
        let b = Matrix::row_vector(vec![20.0, 20.0]);
        let out = gate(&z, &Matrix::zeros(2, 2), &b).unwrap();
        assert!((out[0] - 2.0).abs() <= 1e-8);
        assert!((out[1] + 4.0).abs() <= 1e-8);
    }

    #[test]
    fn gate_matches_composed_oracle() {
        let mut rng = Rng::from_seed(7);
        let w = random(4, 4, &mut rng);
        let b = random(1, 4, &mut rng);
        let z: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
        let out = gate(&z, &w, &b).unwrap();
        for i in 0..4 {
            let mut acc = b.get(0, i);
            for j in 0..4 {
                acc += w.get(i, j) * z[j];
            }
            let want = z[i] / (1.0 + (-acc).exp());
            assert!((out[i] - want).abs() <= 1e-12);
        }
    }

    #[test]
    fn gate_contracts_componentwise() {
        let mut rng = Rng::from_seed(9);
        for _ in 0..100 {
            let w = random(3, 3, &mut rng);
            let b = random(1, 3, &mut rng);
            let z: Vec<f64> = (0..3).map(|_| rng.normal() * 3.0).collect();
            let out = gate(&z, &w, &b).unwrap();
            for (o, zi) in out.iter().zip(&z) {
                assert!(o.abs() <= zi.abs() + 1e-15);
            }
        }
    }

    #[test]
    fn batch_attention_matches_per_instance() {
        let mut rng = Rng::from_seed(11);
        let (n, dh, ds, m) = (5, 4, 3, 3);
        let hs: Vec<Matrix> = (0..m).map(|_| random(n, dh, &mut rng)).collect();
        let s = random(n, ds, &mut rng);
        let w_a = random(dh, ds, &mut rng);
        let present = vec![
            vec![true, true, false, true, true],
            vec![true, false, true, true, false],
            vec![false, true, true, true, true],
        ];

        let mut tape = Tape::new();
        let h_ids: Vec<ValueId> = hs.iter().map(|h| tape.constant(h.clone())).collect();
        let s_id = tape.constant(s.clone());
        let w_id = tape.constant(w_a.clone());
        let alpha = attention_weights_t(&mut tape, &h_ids, s_id, w_id, &present).unwrap();
        let alpha = tape.value(alpha);

        for i in 0..n {
            let h_rows: Vec<Vec<f64>> = hs.iter().map(|h| h.row(i)).collect();
            let mask: Vec<bool> = present.iter().map(|pm| pm[i]).collect();
            let want = attention_weights(&h_rows, &s.row(i), &w_a, &mask).unwrap();
            for (mm, w) in want.iter().enumerate() {
                assert!((alpha.get(i, mm) - w).abs() <= 1e-12, "i={i} m={mm}");
            }
            let got_sum: f64 = (0..m).map(|mm| alpha.get(i, mm)).sum();
            assert!((got_sum - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn batch_fuse_and_gate_match_per_instance() {
        let mut rng = Rng::from_seed(13);
        let (n, dh, m) = (4, 3, 2);
        let hs: Vec<Matrix> = (0..m).map(|_| random(n, dh, &mut rng)).collect();
        let mut alpha = Matrix::zeros(n, m);
        for i in 0..n {
            let a = rng.uniform();
            alpha.set(i, 0, a);
            alpha.set(i, 1, 1.0 - a);
        }
        let w_g = random(dh, dh, &mut rng);
        let b_g = random(1, dh, &mut rng);

        let mut tape = Tape::new();
        let h_ids: Vec<ValueId> = hs.iter().map(|h| tape.constant(h.clone())).collect();
        let a_id = tape.constant(alpha.clone());
        let z = fuse_t(&mut tape, a_id, &h_ids).unwrap();
        let wg_id = tape.constant(w_g.clone());
        let bg_id = tape.constant(b_g.clone());
        let fused = gate_t(&mut tape, z, wg_id, bg_id).unwrap();

        for i in 0..n {
            let h_rows: Vec<Vec<f64>> = hs.iter().map(|h| h.row(i)).collect();
            let a_row: Vec<f64> = (0..m).map(|mm| alpha.get(i, mm)).collect();
            let z_want = fuse(&a_row, &h_rows).unwrap();
            let fused_want = gate(&z_want, &w_g, &b_g).unwrap();
            for j in 0..dh {
                assert!((tape.value(z).get(i, j) - z_want[j]).abs() <= 1e-12);
                assert!((tape.value(fused).get(i, j) - fused_want[j]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn centroid_anchor_single_modality_is_projected_embedding() {
        let mut rng = Rng::from_seed(17);
        let h = random(3, 4, &mut rng);
        let w_s = random(2, 4, &mut rng);
        let present = vec![vec![true, true, true]];
        let mut tape = Tape::new();
        let h_id = tape.constant(h.clone());
        let w_id = tape.constant(w_s.clone());
        let s = anchors_centroid_t(&mut tape, &[h_id], &present, w_id).unwrap();
        let want = h.matmul_nt(&w_s).unwrap();
        assert!(tape.value(s).max_abs_diff(&want).unwrap() <= 1e-12);
    }

    #[test]
    fn centroid_anchor_three_modalities_is_mean() {
        let h1 = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let h2 = Matrix::from_rows(&[vec![2.0, 3.0]]).unwrap();
        let h3 = Matrix::from_rows(&[vec![3.0, 3.0]]).unwrap();
        let present = vec![vec![true], vec![true], vec![true]];
        let mut tape = Tape::new();
        let ids = [
            tape.constant(h1),
            tape.constant(h2),
            tape.constant(h3),
        ];
        let w = tape.constant(Matrix::identity(2));
        let s = anchors_centroid_t(&mut tape, &ids, &present, w).unwrap();
        assert!((tape.value(s).get(0, 0) - 2.0).abs() <= 1e-12);
        assert!((tape.value(s).get(0, 1) - 2.0).abs() <= 1e-12);
    }

    #[test]
    fn label_anchors_share_rows() {
        use crate::dataset::Label;
        let mut rng = Rng::from_seed(19);
        let table = random(3, 4, &mut rng);
        let labels = vec![Label::Class(2), Label::Class(0), Label::Class(2)];
        let mut tape = Tape::new();
        let t_id = tape.constant(table.clone());
        let s = anchors_labels_t(&mut tape, t_id, &labels).unwrap();
        assert_eq!(tape.value(s).row(0), tape.value(s).row(2));
        assert_eq!(tape.value(s).row(1), table.row(0));

        // multilabel averages class rows
        let labels = vec![Label::Set(vec![0, 2])];
        let mut tape = Tape::new();
        let t_id = tape.constant(table.clone());
        let s = anchors_labels_t(&mut tape, t_id, &labels).unwrap();
        for j in 0..4 {
            let want = 0.5 * (table.get(0, j) + table.get(2, j));
            assert!((tape.value(s).get(0, j) - want).abs() <= 1e-12);
        }
    }
}
