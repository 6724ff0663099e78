//! Contrastive percentile targets for streaming ranking models.
//!
//! Engagement magnitudes are heterogeneous across users: thirty seconds of
//! watch time is a strong signal from a light user and a weak one from a
//! heavy user. This crate replaces raw magnitudes with per-user percentile
//! targets estimated by contrasting each interaction against a
//! reservoir-sampled pool of the same user's history, and trains a small
//! dual-head model (magnitude head + percentile head) on them.
//!
//! Modules, bottom-up:
//!
//! - [`user_state`]: per-user reservoir pools, interaction counters, snapshots.
//! - [`label`]: single, multi-sample, value-weighted and bootstrapped soft labels.
//! - [`loss`]: soft-label BCE, its per-term and value-weighted forms, co-training.
//! - [`model`]: shared-backbone dual-head MLP with analytic gradients.
//! - [`synth`]: synthetic heterogeneous population and percentile oracles.
//! - [`trainer`]: the streaming training loop.
//! - [`eval`]: UAUC / URegAUC overall and per activity cohort.
//! - [`verify`]: statistical checks of the estimator properties.

pub mod codec;
pub mod eval;
pub mod label;
pub mod loss;
pub mod model;
pub mod rng;
pub mod stats;
pub mod synth;
pub mod trainer;
pub mod user_state;
pub mod verify;

pub use label::{ContrastiveLabel, LabelVariant};
pub use loss::LossOutput;
pub use model::DualHeadModel;
pub use synth::{Interaction, PopulationConfig};
pub use trainer::{TrainConfig, Variant};
pub use user_state::{PoolEntry, StateStore, UserState};
