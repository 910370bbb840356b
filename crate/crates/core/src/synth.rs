//! Synthetic multimodal dataset generation.
//!
//! Each modality draws class-conditional Gaussian clusters: class c of
//! modality m has a mean vector with norm proportional to the modality's
//! separability scalar, and instances add unit-variance isotropic noise.
//! A separability of 0 gives a zero mean for every class, so the modality
//! carries no label signal. With probability `corruption`, one informative
//! modality of an instance is redrawn from the zero-mean background
//! cluster instead of its class cluster, so per-modality reliability
//! varies per instance while the label stays recoverable from the other
//! modalities. Labels are balanced. Modality dropout is applied per
//! instance and modality, always leaving at least one modality present.
//! Generation is a fixed draw sequence, so a given config and seed
//! reproduce the dataset bit for bit.

use crate::dataset::{Dataset, Instance, Label, ModalityDef, Schema, Task};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Scales class-mean norms relative to the unit noise; separability 1.0
/// puts class means this far (in expectation) from the origin.
pub const MEAN_SCALE: f64 = 2.0;

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub n: usize,
    pub classes: usize,
    /// (name, dim) per modality, in schema order.
    pub modalities: Vec<(String, usize)>,
    /// Class-separability scalar per modality; 0 means no label signal.
    pub separability: Vec<f64>,
    /// Per-instance, per-modality probability of dropping the modality.
    pub dropout: f64,
    /// Per-instance probability that one informative modality is drawn
    /// from the background cluster instead of its class cluster.
    pub corruption: f64,
    /// Permit every separability to be zero (used to validate that nothing
    /// can be learned from pure noise); rejected otherwise.
    pub allow_no_signal: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n: 600,
            classes: 3,
            modalities: vec![
                ("text".into(), 32),
                ("image".into(), 64),
                ("audio".into(), 48),
            ],
            separability: vec![1.2, 1.2, 0.0],
            dropout: 0.0,
            corruption: 0.4,
            allow_no_signal: false,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Config(format!(
                "need at least 2 classes, got {}",
                self.classes
            )));
        }
        if self.n < self.classes {
            return Err(Error::Config(format!(
                "need at least one instance per class: n={} classes={}",
                self.n, self.classes
            )));
        }
        if self.modalities.is_empty() {
            return Err(Error::Config("need at least one modality".into()));
        }
        if self.separability.len() != self.modalities.len() {
            return Err(Error::Config(format!(
                "{} separability values for {} modalities",
                self.separability.len(),
                self.modalities.len()
            )));
        }
        if self.separability.iter().any(|s| *s < 0.0) {
            return Err(Error::Config("separability must be nonnegative".into()));
        }
        if !self.allow_no_signal && self.separability.iter().all(|s| *s == 0.0) {
            return Err(Error::Config(
                "all separabilities are 0; no modality carries label signal".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        if !(0.0..=1.0).contains(&self.corruption) {
            return Err(Error::Config(format!(
                "corruption must be in [0, 1], got {}",
                self.corruption
            )));
        }
        Ok(())
    }
}

/// Draw a synthetic dataset. The draw sequence is fixed: class means first
/// (class-major, modality-minor), then the balanced label shuffle, then per
/// instance the feature noise for every modality, the corruption coin (and
/// redraw), and finally its dropout coin flips.
pub fn generate_synthetic(config: &SynthConfig, rng: &mut Rng) -> Result<Dataset> {
    config.validate()?;
    let n_mod = config.modalities.len();
    let informative: Vec<usize> = (0..n_mod)
        .filter(|&m| config.separability[m] > 0.0)
        .collect();

    // class means: norm ≈ separability · MEAN_SCALE
    let mut means: Vec<Vec<Vec<f64>>> = Vec::with_capacity(config.classes);
    for _ in 0..config.classes {
        let mut per_mod = Vec::with_capacity(n_mod);
        for (m, (_, dim)) in config.modalities.iter().enumerate() {
            let scale = config.separability[m] * MEAN_SCALE / (*dim as f64).sqrt();
            per_mod.push((0..*dim).map(|_| rng.normal() * scale).collect());
        }
        means.push(per_mod);
    }

    // balanced labels, shuffled
    let mut labels: Vec<usize> = (0..config.n).map(|i| i % config.classes).collect();
    rng.shuffle(&mut labels);

    let id_width = config.n.to_string().len().max(4);
    let mut instances = Vec::with_capacity(config.n);
    for (i, &label) in labels.iter().enumerate() {
        let mut features: Vec<Option<Vec<f64>>> = Vec::with_capacity(n_mod);
        for (m, (_, dim)) in config.modalities.iter().enumerate() {
            let mean = &means[label][m];
            features.push(Some((0..*dim).map(|j| mean[j] + rng.normal()).collect()));
        }
        if !informative.is_empty() && rng.bernoulli(config.corruption) {
            let m = informative[rng.below(informative.len())];
            let dim = config.modalities[m].1;
            features[m] = Some((0..dim).map(|_| rng.normal()).collect());
        }
        let mut dropped: Vec<bool> = (0..n_mod).map(|_| rng.bernoulli(config.dropout)).collect();
        if dropped.iter().all(|&d| d) {
            dropped[rng.below(n_mod)] = false;
        }
        for (m, d) in dropped.iter().enumerate() {
            if *d {
                features[m] = None;
            }
        }
        instances.push(Instance {
            id: format!("s{:0width$}", i + 1, width = id_width),
            label: Label::Class(label),
            features,
        });
    }

    let schema = Schema::new(
        config
            .modalities
            .iter()
            .map(|(name, dim)| ModalityDef {
                name: name.clone(),
                dim: *dim,
            })
            .collect(),
        config.classes,
        Task::Multiclass,
    )?;
    Dataset::new(schema, instances)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::to_jsonl;

    #[test]
    fn no_dropout_means_all_present() {
        let cfg = SynthConfig {
            n: 10,
            classes: 2,
            ..SynthConfig::default()
        };
        let ds = generate_synthetic(&cfg, &mut Rng::from_seed(1)).unwrap();
        assert_eq!(ds.len(), 10);
        assert!(ds
            .instances
            .iter()
            .all(|i| i.presence_mask().iter().all(|&p| p)));
        let ids: std::collections::HashSet<_> = ds.instances.iter().map(|i| &i.id).collect();
        assert_eq!(ids.len(), 10);
    }

    #[test]
    fn deterministic_in_seed() {
        let cfg = SynthConfig {
            n: 40,
            dropout: 0.3,
            ..SynthConfig::default()
        };
        let a = generate_synthetic(&cfg, &mut Rng::from_seed(42)).unwrap();
        let b = generate_synthetic(&cfg, &mut Rng::from_seed(42)).unwrap();
        assert_eq!(to_jsonl(&a).unwrap(), to_jsonl(&b).unwrap());
        let c = generate_synthetic(&cfg, &mut Rng::from_seed(43)).unwrap();
        assert_eq!(a.schema, c.schema);
        assert_ne!(to_jsonl(&a).unwrap(), to_jsonl(&c).unwrap());
    }

    #[test]
    fn dropout_respects_at_least_one_present() {
        let cfg = SynthConfig {
            n: 300,
            dropout: 0.9,
            ..SynthConfig::default()
        };
        let ds = generate_synthetic(&cfg, &mut Rng::from_seed(7)).unwrap();
        for inst in &ds.instances {
            assert!(inst.presence_mask().iter().any(|&p| p));
        }
    }

    #[test]
    fn zero_separability_modality_has_zero_class_means() {
        // audio defaults to separability 0: its per-class feature means must agree
        let cfg = SynthConfig {
            n: 900,
            ..SynthConfig::default()
        };
        let ds = generate_synthetic(&cfg, &mut Rng::from_seed(11)).unwrap();
        let audio = ds.schema.position("audio").unwrap();
        let dim = ds.schema.modalities[audio].dim;
        let mut per_class = vec![vec![0.0; dim]; 3];
        let mut counts = vec![0usize; 3];
        for inst in &ds.instances {
            let Label::Class(c) = inst.label else { panic!() };
            counts[c] += 1;
            for (j, v) in inst.features[audio].as_ref().unwrap().iter().enumerate() {
                per_class[c][j] += v;
            }
        }
        for c in 0..3 {
            for j in 0..dim {
                per_class[c][j] /= counts[c] as f64;
            }
        }
        // class means of pure noise concentrate near zero: 3/sqrt(300) ≈ 0.17
        for c in 0..3 {
            for j in 0..dim {
                assert!(per_class[c][j].abs() < 0.25, "class {c} dim {j}");
            }
        }
    }

    #[test]
    fn bad_configs_rejected() {
        let mut cfg = SynthConfig::default();
        cfg.classes = 1;
        assert!(generate_synthetic(&cfg, &mut Rng::from_seed(0)).is_err());

        let mut cfg = SynthConfig::default();
        cfg.n = 2;
        assert!(generate_synthetic(&cfg, &mut Rng::from_seed(0)).is_err());

        let mut cfg = SynthConfig::default();
        cfg.separability = vec![0.0, 0.0, 0.0];
        assert!(generate_synthetic(&cfg, &mut Rng::from_seed(0)).is_err());
        cfg.allow_no_signal = true;
        assert!(generate_synthetic(&cfg, &mut Rng::from_seed(0)).is_ok());
    }

    #[test]
    fn labels_are_balanced() {
        let cfg = SynthConfig {
            n: 600,
            ..SynthConfig::default()
        };
        let ds = generate_synthetic(&cfg, &mut Rng::from_seed(42)).unwrap();
        let mut counts = [0usize; 3];
        for inst in &ds.instances {
            let Label::Class(c) = inst.label else { panic!() };
            counts[c] += 1;
        }
        assert_eq!(counts, [200, 200, 200]);
    }
}
