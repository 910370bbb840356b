//! Multimodal graph-fusion engine.
//!
//! Builds dual graphs over a batch of multimodal instances (per-modality
//! similarity graphs plus a cross-instance semantic graph), filters node
//! signals with Chebyshev-approximated spectral filters, refines them with
//! multi-scale graph convolutions, and fuses modalities through
//! semantic-aware attention with sigmoid gating. All learnable pieces are
//! trained end to end via a reverse-mode tape; everything is deterministic
//! in an explicit seed.

pub mod baseline;
pub mod bench;
pub mod config;
pub mod dataset;
pub mod eigen;
pub mod forward;
pub mod error;
pub mod fusion;
pub mod gcn;
pub mod gradcheck;
pub mod graph;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod projection;
pub mod rng;
pub mod spectral;
pub mod synth;
pub mod train;
pub mod tape;

pub use eigen::{power_iteration_lambda_max, sym_eig, EigenDecomposition};
pub use error::{Error, Result};
pub use matrix::Matrix;
pub use rng::Rng;
pub use tape::{Gradients, Tape, ValueId};
