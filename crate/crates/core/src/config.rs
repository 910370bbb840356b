//! Training configuration with the benchmark defaults.

use crate::error::{Error, Result};
use crate::graph::AnchorMode;

/// How the spectral-filter branch composes with the graph convolutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchMode {
    /// Filter the projected signal, then run the GCN on the filtered signal.
    Sequential,
    /// Run filter and GCN on the projected signal independently and
    /// concatenate both branches.
    Parallel,
}

impl BranchMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            BranchMode::Sequential => "sequential",
            BranchMode::Parallel => "parallel",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sequential" => Ok(BranchMode::Sequential),
            "parallel" => Ok(BranchMode::Parallel),
            _ => Err(Error::Config(format!(
                "branch_mode must be sequential or parallel, got {s}"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub gcn_layers: usize,
    pub hidden: usize,
    pub dropout: f64,
    pub chebyshev_k: usize,
    /// Highest hop aggregated by a GCN layer (weights for hops 0..=hop_k).
    pub hop_k: usize,
    /// Shared latent dimension every modality projects into.
    pub latent_dim: usize,
    /// Intra-graph distance gate; per-batch 25th-percentile when unset.
    pub epsilon: Option<f64>,
    /// Semantic-graph bandwidth; per-batch median distance when unset.
    pub sigma: Option<f64>,
    pub seed: u64,
    pub branch_mode: BranchMode,
    /// Share Chebyshev coefficients across modalities (per stage).
    pub share_filters: bool,
    /// Anchor/semantic-embedding source while training.
    pub train_anchor: AnchorMode,
    /// Anchor/semantic-embedding source at inference.
    pub eval_anchor: AnchorMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            batch_size: 64,
            epochs: 100,
            gcn_layers: 3,
            hidden: 128,
            dropout: 0.3,
            chebyshev_k: 3,
            hop_k: 2,
            latent_dim: 128,
            epsilon: None,
            sigma: None,
            seed: 42,
            branch_mode: BranchMode::Sequential,
            share_filters: false,
            // centroid in BOTH phases: label-mode training graphs encode the
            // labels themselves, which memorizes the train split and
            // collapses under centroid graphs at inference
            train_anchor: AnchorMode::Centroid,
            eval_anchor: AnchorMode::Centroid,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        if self.latent_dim == 0 || self.hidden == 0 {
            return Err(Error::Config("latent_dim and hidden must be positive".into()));
        }
        if let Some(e) = self.epsilon {
            if e <= 0.0 {
                return Err(Error::Config(format!("epsilon must be positive, got {e}")));
            }
        }
        if let Some(s) = self.sigma {
            if s <= 0.0 {
                return Err(Error::Config(format!("sigma must be positive, got {s}")));
            }
        }
        Ok(())
    }

    pub fn adam(&self) -> crate::optim::AdamConfig {
        crate::optim::AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            epsilon: self.adam_epsilon,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_benchmark_table() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.learning_rate, 0.001);
        assert_eq!(cfg.adam_beta1, 0.9);
        assert_eq!(cfg.adam_beta2, 0.999);
        assert_eq!(cfg.adam_epsilon, 1e-8);
        assert_eq!(cfg.batch_size, 64);
        assert_eq!(cfg.epochs, 100);
        assert_eq!(cfg.gcn_layers, 3);
        assert_eq!(cfg.hidden, 128);
        assert_eq!(cfg.dropout, 0.3);
        assert_eq!(cfg.chebyshev_k, 3);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn branch_mode_parses() {
        assert_eq!(BranchMode::parse("sequential").unwrap(), BranchMode::Sequential);
        assert_eq!(BranchMode::parse("parallel").unwrap(), BranchMode::Parallel);
        assert!(BranchMode::parse("other").is_err());
    }
}
