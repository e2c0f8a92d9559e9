use serde::{Deserialize, Serialize};

use crate::encoders::EncoderSpec;
use crate::error::{Error, Result};
use crate::evaluation::{TrialMode, TrialProtocol};
use crate::types::Modality;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    AngularPrototypical,
    SoftmaxClassifier,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainFusion {
    None,
    Attention,
}

/// Encoder size: the full layout, or the reduced desk-scale layout sized
/// for single-core runs on the synthetic corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderScale {
    Standard,
    Desk,
}

impl EncoderScale {
    pub fn spec(self, modality: Modality, n_mels: usize) -> Result<EncoderSpec> {
        match self {
            EncoderScale::Standard => EncoderSpec::standard(modality, n_mels),
            EncoderScale::Desk => EncoderSpec::desk(modality, n_mels),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: LossKind,
    /// Identities per batch (N).
    pub batch_identities: usize,
    /// Samples per identity per batch (M).
    pub samples_per_identity: usize,
    pub epochs: usize,
    /// Optimizer steps per epoch; 0 derives it from the training-set size.
    pub steps_per_epoch: usize,
    pub learning_rate: f64,
    /// Learning rate is multiplied by `lr_decay` every `lr_decay_every` epochs.
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub weight_decay: f64,
    /// Learning-rate multiplier for the attention parameters.
    pub fusion_lr_scale: f64,
    pub seed: u64,
    pub modalities: Vec<Modality>,
    pub fusion_mode: TrainFusion,
    pub encoder_scale: EncoderScale,
    /// Trial list used for per-epoch validation EER.
    pub validation: TrialProtocol,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::AngularPrototypical,
            batch_identities: 16,
            samples_per_identity: 2,
            epochs: 20,
            steps_per_epoch: 0,
            learning_rate: 1e-3,
            lr_decay: 0.5,
            lr_decay_every: 10,
            weight_decay: 0.0,
            fusion_lr_scale: 1.0,
            seed: 0,
            modalities: vec![Modality::Audio],
            fusion_mode: TrainFusion::None,
            encoder_scale: EncoderScale::Standard,
            validation: TrialProtocol {
                mode: TrialMode::Easy,
                n_target: 300,
                n_nontarget: 300,
                seed: 0,
            },
        }
    }
}

impl TrainConfig {
    /// Settings used for the synthetic corpus on a single CPU core.
    pub fn desk() -> Self {
        Self {
            batch_identities: 8,
            epochs: 12,
            learning_rate: 2e-3,
            lr_decay_every: 6,
            encoder_scale: EncoderScale::Desk,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.batch_identities < 2 {
            return bad("batch_identities must be ≥ 2");
        }
        if self.samples_per_identity < 2 {
            return bad("samples_per_identity must be ≥ 2");
        }
        if self.epochs == 0 {
            return bad("epochs must be ≥ 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) || self.lr_decay_every == 0 {
            return bad("lr_decay must be in (0, 1] and lr_decay_every ≥ 1");
        }
        if !(self.weight_decay >= 0.0) || !(self.fusion_lr_scale > 0.0) {
            return bad("weight_decay must be ≥ 0 and fusion_lr_scale > 0");
        }
        let mods = crate::evaluation::check_modalities(&self.modalities).map_err(|e| Error::Config(e.to_string()))?;
        if mods.len() != self.modalities.len() {
            return bad("modalities must be distinct");
        }
        match self.fusion_mode {
            TrainFusion::None if mods.len() != 1 => bad("fusion_mode = none trains exactly one modality"),
            TrainFusion::Attention if mods.len() < 2 => bad("fusion_mode = attention needs at least two modalities"),
            _ => Ok(()),
        }
    }

    /// Modalities in the fixed audio, visual, thermal order.
    pub fn ordered_modalities(&self) -> Vec<Modality> {
        let mut m = self.modalities.clone();
        m.sort_by_key(|m| m.order());
        m
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.lr_decay.powi((epoch / self.lr_decay_every) as i32)
    }

    /// Stable digest of the resolved configuration.
    pub fn hash(&self) -> String {
        crate::config::digest(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fusion_mode_constraints() {
        let mut c = TrainConfig::default();
        assert!(c.validate().is_ok());
        c.fusion_mode = TrainFusion::Attention;
        assert!(c.validate().is_err());
        c.modalities = vec![Modality::Visual, Modality::Audio];
        assert!(c.validate().is_ok());
        assert_eq!(c.ordered_modalities(), vec![Modality::Audio, Modality::Visual]);
        c.fusion_mode = TrainFusion::None;
        assert!(c.validate().is_err());
    }

    #[test]
    fn degenerate_batches_rejected() {
        let c = TrainConfig {
            batch_identities: 1,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
        let c = TrainConfig {
            samples_per_identity: 1,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn step_decay() {
        let c = TrainConfig {
            learning_rate: 1.0,
            lr_decay: 0.5,
            lr_decay_every: 2,
            ..TrainConfig::default()
        };
        let lrs: Vec<f64> = (0..5).map(|e| c.learning_rate_at(e)).collect();
        assert_eq!(lrs, vec![1.0, 1.0, 0.5, 0.5, 0.25]);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<TrainConfig>("epochs = 3\nbatch = 4\n").is_err());
        let c: TrainConfig = toml::from_str("epochs = 3\nmodalities = [\"visual\"]\n").unwrap();
        assert_eq!(c.epochs, 3);
        assert_eq!(c.modalities, vec![Modality::Visual]);
    }
}
