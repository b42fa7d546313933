//! Autoencoders whose latent space is split by a learned binary mask into a
//! part that carries a planar rotation and a part that ignores it.
//!
//! The encoder output `z` is partitioned as `z_v = M ⊙ z`, `z_i = (1 − M) ⊙ z`
//! with `M = 𝕀(σ(α) > τ)`. A group element acts only on `z_v`, and the decoder
//! reconstructs the transformed image from `[Φ_g(z_v); z_i]`.
//!
//! Everything runs on a small define-by-run autodiff tape ([`tape`]) over
//! dense row-major tensors ([`tensor`]).

pub mod ald;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod gradcheck;
pub mod group;
pub mod metrics;
pub mod nn;
pub mod probe;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod training;

pub use ald::{compute_mask, mask_values, partition_latent, LatentPartition, MaskConfig, MaskStats};
pub use checkpoint::{load_checkpoint, load_checkpoint_for, save_checkpoint};
pub use config::{DatasetSpec, TrainingConfig};
pub use data::{ImageDataset, Pair, PairBatch, PairConfig, PairSet};
pub use error::{Error, Result};
pub use eval::{InvarianceReport, Latents, TauSweep};
pub use experiment::{prepare, AblationTable, Prepared};
pub use group::{GroupElement, LatentOperator, OperatorKind};
pub use metrics::MetricsReport;
pub use nn::{AdamState, Architecture, Model};
pub use probe::ProbeReport;
pub use tape::{Gradients, Tape, Var};
pub use tensor::{Real, Tensor};
pub use training::{train, EpochRecord, LossValues, LossWeights, TrainReport, Trained};
