//! A trained system: per-modality encoders, optional attention fusion, the
//! configuration that produced them and the per-epoch metric history.

use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use super::config::{TrainConfig, TrainFusion};
use crate::encoders::checkpoint::{load_checkpoint, save_checkpoint};
use crate::encoders::{Encoder, EncoderSpec, ParamStore};
use crate::error::{Error, Result};
use crate::evaluation::EmbeddingStore;
use crate::frontend::{FeatureMode, Frontend, FrontendConfig};
use crate::fusion::{AttentionFusion, AttentionFusionParams};
use crate::types::{Embedding, Modality, MultimodalSample};

const FORMAT: &str = "trimodal-verify/bundle/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Mean training loss; absent for the pre-training entry (epoch 0).
    pub train_loss: Option<f64>,
    /// Validation EER of the trained system (fused when fusing).
    pub valid_eer: f64,
    /// Per-modality validation EER, recorded when fusing.
    pub valid_eer_per_modality: BTreeMap<Modality, f64>,
}

impl EpochMetrics {
    /// `epoch<TAB>split<TAB>metric<TAB>value` lines.
    pub fn log_lines(&self) -> String {
        let e = self.epoch;
        let mut out = String::new();
        if let Some(loss) = self.train_loss {
            out.push_str(&format!("{e}\ttrain\tlr\t{}\n{e}\ttrain\tloss\t{loss}\n", self.learning_rate));
        }
        out.push_str(&format!("{e}\tvalid\teer\t{}\n", self.valid_eer));
        for (m, v) in &self.valid_eer_per_modality {
            out.push_str(&format!("{}\tvalid\teer_{m}\t{v}\n", self.epoch));
        }
        out
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Meta {
    format: String,
    config: TrainConfig,
    config_hash: String,
    frontend: FrontendConfig,
    modalities: Vec<Modality>,
    specs: BTreeMap<Modality, EncoderSpec>,
    fusion: bool,
    history: Vec<EpochMetrics>,
    best_epoch: usize,
}

#[derive(Debug)]
pub struct CheckpointBundle {
    pub config: TrainConfig,
    /// Digest of the configuration that produced the bundle.
    pub config_hash: String,
    pub frontend: FrontendConfig,
    /// Fused modalities in audio, visual, thermal order.
    pub modalities: Vec<Modality>,
    pub encoders: BTreeMap<Modality, Encoder>,
    pub fusion: Option<FusionModule>,
    pub history: Vec<EpochMetrics>,
    /// Epoch whose parameters the bundle holds (0 = before training).
    pub best_epoch: usize,
}

/// Attention parameters together with the store that owns them.
#[derive(Debug)]
pub struct FusionModule {
    pub store: ParamStore,
    pub module: AttentionFusion,
}

impl FusionModule {
    pub fn new(params: &AttentionFusionParams, dtype: DType) -> Result<Self> {
        let mut store = ParamStore::new(dtype);
        let module = AttentionFusion::new(&mut store, params)?;
        Ok(Self { store, module })
    }
}

impl CheckpointBundle {
    pub fn best_valid_eer(&self) -> Option<f64> {
        self.history
            .iter()
            .find(|h| h.epoch == self.best_epoch)
            .map(|h| h.valid_eer)
    }

    pub fn fusion_params(&self) -> Result<Option<AttentionFusionParams>> {
        self.fusion.as_ref().map(|f| f.module.params()).transpose()
    }

    /// Check that the bundle holds exactly the modules its config implies.
    pub fn validate(&self) -> Result<()> {
        let expected = self.config.ordered_modalities();
        if self.modalities != expected || self.encoders.keys().copied().collect::<Vec<_>>() != expected {
            return Err(Error::Checkpoint("encoders do not match the configured modalities".into()));
        }
        if (self.config.fusion_mode == TrainFusion::Attention) != self.fusion.is_some() {
            return Err(Error::Checkpoint("fusion module does not match the configured fusion mode".into()));
        }
        Ok(())
    }

    /// All parameters and buffers, prefixed by module.
    pub fn tensors(&self) -> Result<BTreeMap<String, Tensor>> {
        let mut out = BTreeMap::new();
        for (m, enc) in &self.encoders {
            for (k, v) in enc.store().snapshot()? {
                out.insert(format!("{m}/{k}"), v);
            }
        }
        if let Some(f) = &self.fusion {
            for (k, v) in f.store.snapshot()? {
                out.insert(format!("fusion/{k}"), v);
            }
        }
        Ok(out)
    }

    /// Atomically write the bundle; returns the file's sha256 digest.
    pub fn save(&self, path: &Path) -> Result<String> {
        self.validate()?;
        let meta = Meta {
            format: FORMAT.into(),
            config: self.config.clone(),
            config_hash: self.config_hash.clone(),
            frontend: self.frontend.clone(),
            modalities: self.modalities.clone(),
            specs: self.encoders.iter().map(|(m, e)| (*m, e.spec().clone())).collect(),
            fusion: self.fusion.is_some(),
            history: self.history.clone(),
            best_epoch: self.best_epoch,
        };
        let meta = serde_json::to_value(&meta).map_err(|e| Error::Checkpoint(e.to_string()))?;
        save_checkpoint(path, &meta, &self.tensors()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (meta, tensors) = load_checkpoint(path)?;
        let meta: Meta = serde_json::from_value(meta).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        if meta.format != FORMAT {
            return Err(Error::Checkpoint(format!("unsupported bundle format `{}`", meta.format)));
        }
        let mut grouped: BTreeMap<String, BTreeMap<String, Tensor>> = BTreeMap::new();
        for (k, v) in tensors {
            let (module, name) = k
                .split_once('/')
                .ok_or_else(|| Error::Checkpoint(format!("tensor `{k}` has no module prefix")))?;
            grouped.entry(module.to_string()).or_default().insert(name.to_string(), v);
        }
        let mut encoders = BTreeMap::new();
        for m in &meta.modalities {
            let spec = meta
                .specs
                .get(m)
                .ok_or_else(|| Error::Checkpoint(format!("no encoder spec for {m}")))?;
            let enc = Encoder::new(spec.clone(), 0, DType::F32)?;
            let snap = grouped
                .remove(m.as_str())
                .ok_or_else(|| Error::Checkpoint(format!("no tensors for the {m} encoder")))?;
            enc.store().restore(&snap)?;
            encoders.insert(*m, enc);
        }
        let fusion = if meta.fusion {
            let snap = grouped
                .remove("fusion")
                .ok_or_else(|| Error::Checkpoint("no fusion tensors".into()))?;
            let m = meta.modalities.len();
            let d = meta.specs.values().next().map_or(0, EncoderSpec::embed_dim);
            let f = FusionModule::new(&AttentionFusionParams::zeros_with_dim(m, d)?, DType::F32)?;
            f.store.restore(&snap)?;
            Some(f)
        } else {
            None
        };
        if let Some(k) = grouped.keys().next() {
            return Err(Error::Checkpoint(format!("unexpected tensors for module `{k}`")));
        }
        let bundle = Self {
            config: meta.config,
            config_hash: meta.config_hash,
            frontend: meta.frontend,
            modalities: meta.modalities,
            encoders,
            fusion,
            history: meta.history,
            best_epoch: meta.best_epoch,
        };
        bundle.validate()?;
        Ok(bundle)
    }

    /// Eval-mode unit embeddings of `samples` for every encoder, plus
    /// renormalized fused embeddings when the bundle fuses.
    pub fn embed(&self, samples: &[MultimodalSample]) -> Result<EmbeddingStore> {
        let frontend = Frontend::new(&self.frontend)?;
        let mut store = EmbeddingStore::new();
        for (m, enc) in &self.encoders {
            for e in embed_modality(enc, &frontend, samples, *m)? {
                store.insert(e);
            }
        }
        if let Some(params) = self.fusion_params()? {
            store.add_fused(&self.modalities, &params)?;
        }
        Ok(store)
    }
}

/// Eval-mode embeddings of one modality.
pub fn embed_modality(
    encoder: &Encoder,
    frontend: &Frontend,
    samples: &[MultimodalSample],
    modality: Modality,
) -> Result<Vec<Embedding>> {
    let feats = samples
        .iter()
        .map(|s| frontend.extract(s, modality, FeatureMode::Eval))
        .collect::<Result<Vec<_>>>()?;
    let vectors = encoder.embed(&feats)?;
    Ok(samples
        .iter()
        .zip(vectors)
        .map(|(s, v)| Embedding {
            vector: v,
            modality,
            sample_id: s.sample_id.clone(),
        })
        .collect())
}
