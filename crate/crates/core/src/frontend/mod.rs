//! Raw modality → encoder input arrays.

pub mod audio;
pub mod image;

pub use audio::{audio_features, AudioFeatureConfig, AudioFrontend};
pub use image::{image_features, ImageFeatureConfig};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::types::{Modality, MultimodalSample};

/// Eval mode is deterministic and augmentation-free; train mode draws crops
/// and flips from a substream of `seed`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureMode {
    Eval,
    Train { seed: u64 },
}

/// Frontend settings for all three modalities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrontendConfig {
    pub audio: AudioFeatureConfig,
    pub visual: ImageFeatureConfig,
    pub thermal: ImageFeatureConfig,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self {
            audio: AudioFeatureConfig::default(),
            visual: ImageFeatureConfig::visual(),
            thermal: ImageFeatureConfig::thermal(),
        }
    }
}

impl FrontendConfig {
    /// Reduced settings for the synthetic corpus: 32-pixel images, 24 mel
    /// bands and 1 s crops.
    pub fn desk() -> Self {
        Self {
            audio: AudioFeatureConfig {
                n_mels: 24,
                crop_seconds: 1.0,
                ..AudioFeatureConfig::default()
            },
            visual: ImageFeatureConfig::visual().with_size(32),
            thermal: ImageFeatureConfig::thermal().with_size(32),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.audio.validate()?;
        self.visual.validate()?;
        self.thermal.validate()
    }
}

/// Feature array for one modality of a sample, flattened row-major with its
/// shape: audio `[1, T, n_mels]`, images `[C, S, S]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    pub data: Vec<f32>,
    pub shape: [usize; 3],
}

/// Extracts encoder inputs for any modality; holds the cached audio frontend.
pub struct Frontend {
    cfg: FrontendConfig,
    audio: AudioFrontend,
}

impl Frontend {
    pub fn new(cfg: &FrontendConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg: cfg.clone(),
            audio: AudioFrontend::new(&cfg.audio)?,
        })
    }

    pub fn config(&self) -> &FrontendConfig {
        &self.cfg
    }

    pub fn extract(&self, sample: &MultimodalSample, modality: Modality, mode: FeatureMode) -> Result<Features> {
        match modality {
            Modality::Audio => {
                let f = self.audio.features(&sample.audio, mode)?;
                let (t, m) = f.dim();
                Ok(Features {
                    data: f.into_raw_vec_and_offset().0,
                    shape: [1, t, m],
                })
            }
            Modality::Visual | Modality::Thermal => {
                let (img, cfg) = if modality == Modality::Visual {
                    (&sample.visual, &self.cfg.visual)
                } else {
                    (&sample.thermal, &self.cfg.thermal)
                };
                let f = image_features(img, cfg, mode)?;
                let (c, h, w) = f.dim();
                let f = if f.is_standard_layout() { f } else { f.as_standard_layout().to_owned() };
                Ok(Features {
                    data: f.into_raw_vec_and_offset().0,
                    shape: [c, h, w],
                })
            }
            Modality::Fused => Err(crate::Error::invalid("fused is not an input modality")),
        }
    }
}
