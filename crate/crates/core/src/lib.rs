//! Audio-visual-thermal person verification.
//!
//! Per-modality residual encoders map a recording to a 512-dim embedding;
//! systems are compared by Euclidean distance between unit embeddings and
//! combined either by averaging per-modality scores or by a learned softmax
//! attention over modality embeddings. The crate also ships a deterministic
//! synthetic corpus, a noisy-condition corruption model, trial-list
//! protocols and EER/accuracy evaluation.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod encoders;
pub mod error;
pub mod evaluation;
pub mod frontend;
pub mod fusion;
pub mod rng;
pub mod pipeline;
pub mod training;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    Embedding, Gender, GenderPair, Identity, Manifest, ManifestEntry, Modality, MultimodalSample,
    ScoreRecord, TrialLabel, TrialList, TrialPair, EMBED_DIM, SAMPLE_RATE,
};
