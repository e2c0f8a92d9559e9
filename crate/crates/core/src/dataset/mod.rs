//! Synthetic data generation, noisy-condition corruption, identity-disjoint
//! splitting and media I/O.

pub mod corrupt;
pub mod io;
pub mod split;
pub mod synth;

pub use corrupt::{corrupt_dataset, CorruptionConfig, CorruptionEvent, CorruptionParams, CorruptionScope, Corrupted};
pub use io::{load_samples, write_samples};
pub use split::{split_dataset, Splits};
pub use synth::{generate_synthetic, SynthConfig};

use std::collections::HashSet;

use crate::types::{Manifest, MultimodalSample};

/// Samples whose ids appear in `manifest`, in manifest order.
pub fn select(samples: &[MultimodalSample], manifest: &Manifest) -> Vec<MultimodalSample> {
    let wanted: HashSet<&str> = manifest.entries().iter().map(|e| e.sample_id.as_str()).collect();
    let mut out: Vec<MultimodalSample> = samples
        .iter()
        .filter(|s| wanted.contains(s.sample_id.as_str()))
        .cloned()
        .collect();
    out.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    out
}
