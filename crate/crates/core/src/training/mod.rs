//! Metric-learning training of unimodal encoders and of the attention-fused
//! system, with per-epoch validation EER and best-checkpoint selection.

pub mod bundle;
pub mod config;
pub mod loss;
pub mod trainer;

pub use bundle::{embed_modality, CheckpointBundle, EpochMetrics, FusionModule};
pub use config::{EncoderScale, LossKind, TrainConfig, TrainFusion};
pub use loss::{angular_prototypical_loss, LossHead};
pub use trainer::{train_fused, train_unimodal, TrainHooks};
