//! Training loops for unimodal encoders and the attention-fused system.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use candle_core::{DType, Tensor};
use candle_nn::optim::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::{index, SliceRandom};

use super::bundle::{embed_modality, CheckpointBundle, EpochMetrics, FusionModule};
use super::config::{LossKind, TrainConfig, TrainFusion};
use super::loss::{scalar, LossHead};
use crate::dataset::io::write_text_atomic;
use crate::encoders::layers::{l2_normalize_rows, Init, ParamStore};
use crate::encoders::Encoder;
use crate::error::{Error, Result};
use crate::evaluation::{compute_eer, generate_trials, score_trials, EmbeddingStore, FusionMode};
use crate::frontend::{FeatureMode, Features, Frontend, FrontendConfig};
use crate::fusion::AttentionFusionParams;
use crate::rng::{child_seed, substream};
use crate::types::{validate_manifest, Manifest, ManifestEntry, Modality, MultimodalSample, TrialList, EMBED_DIM};

/// Optional side outputs written after every epoch.
#[derive(Debug, Default, Clone, Copy)]
pub struct TrainHooks<'a> {
    /// Best-so-far bundle, replaced atomically each epoch.
    pub checkpoint: Option<&'a Path>,
    /// Metrics log, `epoch<TAB>split<TAB>metric<TAB>value` per line.
    pub metrics_log: Option<&'a Path>,
    /// Provenance digest stored in the bundle; defaults to the training
    /// configuration's own digest.
    pub config_hash: Option<&'a str>,
}

/// Train one modality's encoder from random initialization.
pub fn train_unimodal(
    train: &[MultimodalSample],
    valid: &[MultimodalSample],
    cfg: &TrainConfig,
    frontend: &FrontendConfig,
    hooks: TrainHooks,
) -> Result<CheckpointBundle> {
    cfg.validate()?;
    if cfg.fusion_mode != TrainFusion::None {
        return Err(Error::Config("train_unimodal needs fusion_mode = none".into()));
    }
    train_system(train, valid, cfg, frontend, Vec::new(), hooks)
}

/// Train encoders and attention fusion jointly on the fused embedding.
/// `warm_start` may hold one unimodal bundle per fused modality whose
/// encoders initialize the system; missing modalities start from random.
pub fn train_fused(
    train: &[MultimodalSample],
    valid: &[MultimodalSample],
    cfg: &TrainConfig,
    frontend: &FrontendConfig,
    warm_start: Vec<CheckpointBundle>,
    hooks: TrainHooks,
) -> Result<CheckpointBundle> {
    cfg.validate()?;
    if cfg.fusion_mode != TrainFusion::Attention {
        return Err(Error::Config("train_fused needs fusion_mode = attention".into()));
    }
    train_system(train, valid, cfg, frontend, warm_start, hooks)
}

fn manifest_of(samples: &[MultimodalSample]) -> Result<Manifest> {
    validate_manifest(samples.iter().map(ManifestEntry::for_sample).collect(), None)
}

/// Validation trials and cached eval-mode features.
struct Validation<'a> {
    samples: &'a [MultimodalSample],
    trials: TrialList,
}

impl Validation<'_> {
    /// EER of the system and, when fusing, of each modality.
    fn evaluate(
        &self,
        encoders: &BTreeMap<Modality, Encoder>,
        fusion: Option<&FusionModule>,
        frontend: &Frontend,
    ) -> Result<(f64, BTreeMap<Modality, f64>)> {
        let mut store = EmbeddingStore::new();
        for (m, enc) in encoders {
            for e in embed_modality(enc, frontend, self.samples, *m)? {
                store.insert(e);
            }
        }
        let modalities: Vec<Modality> = encoders.keys().copied().collect();
        let fusion_mode = match fusion {
            Some(f) => {
                store.add_fused(&modalities, &f.module.params()?)?;
                FusionMode::Attention
            }
            None => FusionMode::None,
        };
        let records = score_trials(&self.trials, &store, &modalities, fusion_mode)?;
        let eer_of = |scores: Vec<f64>| -> Result<f64> {
            let pairs: Vec<(f64, bool)> = scores
                .into_iter()
                .zip(records.iter().map(|r| r.trial.label.is_target()))
                .collect();
            Ok(compute_eer(&pairs)?.eer)
        };
        let mut per_modality = BTreeMap::new();
        for &m in &modalities {
            per_modality.insert(m, eer_of(records.iter().map(|r| r.per_modality[&m]).collect())?);
        }
        if fusion.is_some() {
            let fused = eer_of(records.iter().map(|r| r.fused.expect("attention scores")).collect())?;
            Ok((fused, per_modality))
        } else {
            Ok((per_modality[&modalities[0]], BTreeMap::new()))
        }
    }
}

/// Restore bundle tensors produced by `CheckpointBundle::tensors`.
fn restore(
    encoders: &BTreeMap<Modality, Encoder>,
    fusion: Option<&FusionModule>,
    snapshot: &BTreeMap<String, Tensor>,
) -> Result<()> {
    let mut grouped: BTreeMap<&str, BTreeMap<String, Tensor>> = BTreeMap::new();
    for (k, v) in snapshot {
        let (module, name) = k.split_once('/').expect("prefixed by CheckpointBundle::tensors");
        grouped.entry(module).or_default().insert(name.to_string(), v.clone());
    }
    for (m, enc) in encoders {
        enc.store().restore(&grouped[m.as_str()])?;
    }
    if let Some(f) = fusion {
        f.store.restore(&grouped["fusion"])?;
    }
    Ok(())
}

fn train_system(
    train: &[MultimodalSample],
    valid: &[MultimodalSample],
    cfg: &TrainConfig,
    frontend_cfg: &FrontendConfig,
    warm_start: Vec<CheckpointBundle>,
    hooks: TrainHooks,
) -> Result<CheckpointBundle> {
    let modalities = cfg.ordered_modalities();
    let frontend = Frontend::new(frontend_cfg)?;

    // Identity-disjoint splits; classes are the training identities.
    let train_ids: BTreeSet<&str> = train.iter().map(|s| s.identity.id.as_str()).collect();
    if let Some(s) = valid.iter().find(|s| train_ids.contains(s.identity.id.as_str())) {
        return Err(Error::invalid(format!(
            "identity `{}` appears in both training and validation data",
            s.identity.id
        )));
    }
    manifest_of(train)?;
    let mut by_identity: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in train.iter().enumerate() {
        by_identity.entry(s.identity.id.as_str()).or_default().push(i);
    }
    let class_of: BTreeMap<&str, u32> = by_identity.keys().enumerate().map(|(i, k)| (*k, i as u32)).collect();
    let (n, m) = (cfg.batch_identities, cfg.samples_per_identity);
    let eligible: Vec<&Vec<usize>> = by_identity.values().filter(|v| v.len() >= m).collect();
    if eligible.len() < n {
        return Err(Error::Insufficient(format!(
            "batches need {n} identities with ≥ {m} samples each, training data has {}",
            eligible.len()
        )));
    }
    let validation = Validation {
        samples: valid,
        trials: generate_trials(&manifest_of(valid)?, &cfg.validation)?,
    };

    // Encoders: warm-started where a unimodal bundle is supplied.
    let mut warm: BTreeMap<Modality, Encoder> = BTreeMap::new();
    for bundle in warm_start {
        if bundle.modalities.len() != 1 || bundle.fusion.is_some() {
            return Err(Error::Checkpoint("warm start needs unimodal checkpoints".into()));
        }
        let bm = bundle.modalities[0];
        if !modalities.contains(&bm) {
            return Err(Error::Checkpoint(format!("warm-start checkpoint is for {bm}, not a fused modality")));
        }
        if bundle.frontend != *frontend_cfg {
            return Err(Error::Checkpoint(format!("{bm} checkpoint was trained with a different frontend")));
        }
        let enc = bundle.encoders.into_values().next().expect("one encoder");
        if *enc.spec() != cfg.encoder_scale.spec(bm, frontend_cfg.audio.n_mels)? {
            return Err(Error::Checkpoint(format!("{bm} checkpoint encoder does not match the configured spec")));
        }
        if warm.insert(bm, enc).is_some() {
            return Err(Error::Checkpoint(format!("two warm-start checkpoints for {bm}")));
        }
    }
    let mut encoders = BTreeMap::new();
    for &md in &modalities {
        let enc = match warm.remove(&md) {
            Some(e) => e,
            None => Encoder::new(
                cfg.encoder_scale.spec(md, frontend_cfg.audio.n_mels)?,
                child_seed(cfg.seed, &["init", md.as_str()]),
                DType::F32,
            )?,
        };
        encoders.insert(md, enc);
    }
    let fusion = match cfg.fusion_mode {
        TrainFusion::Attention => Some(FusionModule::new(
            &AttentionFusionParams::zeros_with_dim(modalities.len(), EMBED_DIM)?,
            DType::F32,
        )?),
        TrainFusion::None => None,
    };
    let mut loss_store = ParamStore::new(DType::F32);
    let head = match cfg.loss {
        LossKind::AngularPrototypical => LossHead::angular_prototypical(&mut loss_store)?,
        LossKind::SoftmaxClassifier => {
            let mut init = Init::new(substream(cfg.seed, &["loss-init"]));
            LossHead::softmax_classifier(&mut loss_store, &mut init, EMBED_DIM, by_identity.len())?
        }
    };

    let mut vars = loss_store.trainable_vars();
    for enc in encoders.values() {
        vars.extend(enc.store().trainable_vars());
    }
    let adam = |vars, lr| {
        AdamW::new(
            vars,
            ParamsAdamW {
                lr,
                weight_decay: cfg.weight_decay,
                ..ParamsAdamW::default()
            },
        )
    };
    let mut opt = adam(vars, cfg.learning_rate)?;
    let mut fusion_opt = match &fusion {
        Some(f) => Some(adam(f.store.trainable_vars(), cfg.learning_rate * cfg.fusion_lr_scale)?),
        None => None,
    };

    let config_hash = hooks.config_hash.map_or_else(|| cfg.hash(), str::to_string);
    let mut bundle = CheckpointBundle {
        config: cfg.clone(),
        config_hash,
        frontend: frontend_cfg.clone(),
        modalities: modalities.clone(),
        encoders,
        fusion,
        history: Vec::new(),
        best_epoch: 0,
    };
    let mut log = String::new();
    let record = |bundle: &mut CheckpointBundle, metrics: EpochMetrics, log: &mut String| -> Result<bool> {
        let improved = bundle.history.is_empty()
            || metrics.valid_eer < bundle.best_valid_eer().expect("history is nonempty");
        log.push_str(&metrics.log_lines());
        log::info!(
            "epoch {} loss {:?} valid EER {:.4}",
            metrics.epoch,
            metrics.train_loss,
            metrics.valid_eer
        );
        if improved {
            bundle.best_epoch = metrics.epoch;
        }
        bundle.history.push(metrics);
        Ok(improved)
    };

    let (eer0, per0) = validation.evaluate(&bundle.encoders, bundle.fusion.as_ref(), &frontend)?;
    let metrics = EpochMetrics {
        epoch: 0,
        learning_rate: cfg.learning_rate_at(0),
        train_loss: None,
        valid_eer: eer0,
        valid_eer_per_modality: per0,
    };
    record(&mut bundle, metrics, &mut log)?;
    let mut best = bundle.tensors()?;
    write_hooks(&bundle, &log, hooks)?;

    let n_train = train.len();
    let steps = if cfg.steps_per_epoch > 0 {
        cfg.steps_per_epoch
    } else {
        (n_train / (n * m)).max(1)
    };
    for epoch in 1..=cfg.epochs {
        let lr = cfg.learning_rate_at(epoch - 1);
        opt.set_learning_rate(lr);
        if let Some(o) = fusion_opt.as_mut() {
            o.set_learning_rate(lr * cfg.fusion_lr_scale);
        }
        let mut total = 0.0;
        let started = std::time::Instant::now();
        for step in 0..steps {
            let tag = [epoch.to_string(), step.to_string()];
            let mut rng = substream(cfg.seed, &["batch", &tag[0], &tag[1]]);
            let mut chosen: Vec<&Vec<usize>> = eligible.clone();
            chosen.shuffle(&mut rng);
            chosen.truncate(n);
            let rows: Vec<usize> = chosen
                .iter()
                .flat_map(|idx| index::sample(&mut rng, idx.len(), m).into_iter().map(|k| idx[k]).collect::<Vec<_>>())
                .collect();
            let classes: Vec<u32> = rows.iter().map(|&i| class_of[train[i].identity.id.as_str()]).collect();
            let mut per_modality = Vec::with_capacity(modalities.len());
            for (md, enc) in &bundle.encoders {
                let feats = rows
                    .iter()
                    .map(|&i| {
                        let seed = child_seed(cfg.seed, &["augment", &tag[0], &tag[1], &train[i].sample_id, md.as_str()]);
                        frontend.extract(&train[i], *md, FeatureMode::Train { seed })
                    })
                    .collect::<Result<Vec<Features>>>()?;
                let refs: Vec<&Features> = feats.iter().collect();
                let x = enc.batch_tensor(&refs)?;
                per_modality.push(l2_normalize_rows(&enc.forward(&x, true)?)?);
            }
            let embeddings = match &bundle.fusion {
                Some(f) => f.module.forward(&per_modality)?.0,
                None => per_modality.pop().expect("one modality"),
            };
            let loss = head.loss(&embeddings, n, m, &classes)?;
            let value = scalar(&loss)?;
            if !value.is_finite() {
                return Err(Error::NonFinite(format!("training loss at epoch {epoch}, step {step} ({value})")));
            }
            total += value;
            let grads = loss.backward()?;
            opt.step(&grads)?;
            if let Some(o) = fusion_opt.as_mut() {
                o.step(&grads)?;
            }
        }
        let trained = started.elapsed();
        let (eer, per) = validation.evaluate(&bundle.encoders, bundle.fusion.as_ref(), &frontend)?;
        log::debug!(
            "epoch {epoch}: {steps} steps in {:.2}s, validation in {:.2}s",
            trained.as_secs_f64(),
            (started.elapsed() - trained).as_secs_f64()
        );
        let metrics = EpochMetrics {
            epoch,
            learning_rate: lr,
            train_loss: Some(total / steps as f64),
            valid_eer: eer,
            valid_eer_per_modality: per,
        };
        if record(&mut bundle, metrics, &mut log)? {
            best = bundle.tensors()?;
        }
        // Hooks persist the best parameters, not the current ones.
        let current = bundle.tensors()?;
        restore(&bundle.encoders, bundle.fusion.as_ref(), &best)?;
        write_hooks(&bundle, &log, hooks)?;
        restore(&bundle.encoders, bundle.fusion.as_ref(), &current)?;
    }
    restore(&bundle.encoders, bundle.fusion.as_ref(), &best)?;
    Ok(bundle)
}

fn write_hooks(bundle: &CheckpointBundle, log: &str, hooks: TrainHooks) -> Result<()> {
    // Checkpoint first: an epoch in the log implies its checkpoint is on disk.
    if let Some(p) = hooks.checkpoint {
        bundle.save(p)?;
    }
    if let Some(p) = hooks.metrics_log {
        write_text_atomic(p, log)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, SynthConfig};
    use crate::evaluation::{TrialMode, TrialProtocol};
    use crate::training::EncoderScale;

    /// Six training and four validation identities, four samples each.
    fn tiny_data() -> (Vec<MultimodalSample>, Vec<MultimodalSample>) {
        let cfg = SynthConfig {
            n_identities: 10,
            samples_per_identity: 4,
            audio_seconds: 1.0,
            image_size: 32,
            seed: 5,
            ..SynthConfig::default()
        };
        let (samples, _) = generate_synthetic(&cfg).unwrap();
        samples.into_iter().partition(|s| s.identity.id.as_str() < "id006")
    }

    fn tiny_config(modalities: Vec<Modality>, fusion: TrainFusion) -> TrainConfig {
        TrainConfig {
            batch_identities: 3,
            samples_per_identity: 2,
            epochs: 2,
            steps_per_epoch: 2,
            modalities,
            fusion_mode: fusion,
            encoder_scale: EncoderScale::Desk,
            validation: TrialProtocol {
                mode: TrialMode::Easy,
                n_target: 12,
                n_nontarget: 12,
                seed: 1,
            },
            ..TrainConfig::desk()
        }
    }

    fn valid_eer(bundle: &CheckpointBundle, valid: &[MultimodalSample], cfg: &TrainConfig) -> f64 {
        let store = bundle.embed(valid).unwrap();
        let trials = generate_trials(&manifest_of(valid).unwrap(), &cfg.validation).unwrap();
        let records = score_trials(&trials, &store, &bundle.modalities, FusionMode::None).unwrap();
        let m = bundle.modalities[0];
        let pairs: Vec<(f64, bool)> = records
            .iter()
            .map(|r| (r.per_modality[&m], r.trial.label.is_target()))
            .collect();
        compute_eer(&pairs).unwrap().eer
    }

    #[test]
    fn same_seed_gives_identical_history() {
        let (train, valid) = tiny_data();
        let cfg = tiny_config(vec![Modality::Thermal], TrainFusion::None);
        let frontend = FrontendConfig::desk();
        let a = train_unimodal(&train, &valid, &cfg, &frontend, TrainHooks::default()).unwrap();
        let b = train_unimodal(&train, &valid, &cfg, &frontend, TrainHooks::default()).unwrap();
        assert_eq!(a.history, b.history);
        assert!(a.history[1].train_loss.unwrap().is_finite());
        assert_eq!(a.history.len(), cfg.epochs + 1);
        assert!(a.history[0].train_loss.is_none());
    }

    #[test]
    fn batch_larger_than_identity_count_is_rejected() {
        let (train, valid) = tiny_data();
        let cfg = TrainConfig {
            batch_identities: 7,
            ..tiny_config(vec![Modality::Visual], TrainFusion::None)
        };
        let err = train_unimodal(&train, &valid, &cfg, &FrontendConfig::desk(), TrainHooks::default()).unwrap_err();
        assert!(matches!(err, Error::Insufficient(_)), "{err}");
    }

    #[test]
    fn overlapping_identities_are_rejected() {
        let (train, _) = tiny_data();
        let cfg = tiny_config(vec![Modality::Visual], TrainFusion::None);
        let err = train_unimodal(&train, &train, &cfg, &FrontendConfig::desk(), TrainHooks::default()).unwrap_err();
        assert!(err.to_string().contains("both training and validation"), "{err}");
    }

    #[test]
    fn checkpoint_roundtrip_preserves_validation_eer_and_hooks_write_files() {
        let (train, valid) = tiny_data();
        let cfg = tiny_config(vec![Modality::Audio], TrainFusion::None);
        let dir = tempfile::tempdir().unwrap();
        let (ckpt, log) = (dir.path().join("audio.ckpt"), dir.path().join("audio.tsv"));
        let hooks = TrainHooks {
            checkpoint: Some(&ckpt),
            metrics_log: Some(&log),
            config_hash: Some("abc"),
        };
        let bundle = train_unimodal(&train, &valid, &cfg, &FrontendConfig::desk(), hooks).unwrap();
        let eer = valid_eer(&bundle, &valid, &cfg);
        assert_eq!(Some(eer), bundle.best_valid_eer());

        // The hook checkpoint already holds the best parameters.
        let hooked = CheckpointBundle::load(&ckpt).unwrap();
        assert_eq!(hooked.config_hash, "abc");
        assert_eq!(valid_eer(&hooked, &valid, &cfg), eer);

        let path = dir.path().join("again.ckpt");
        bundle.save(&path).unwrap();
        let loaded = CheckpointBundle::load(&path).unwrap();
        assert_eq!(valid_eer(&loaded, &valid, &cfg), eer);
        assert_eq!(loaded.history, bundle.history);

        let text = std::fs::read_to_string(&log).unwrap();
        assert!(text.lines().all(|l| l.split('\t').count() == 4));
        assert!(text.contains("2\ttrain\tloss\t"));
        assert!(text.starts_with("0\tvalid\teer\t"));
    }

    #[test]
    fn warm_start_reproduces_unimodal_validation_eers() {
        let (train, valid) = tiny_data();
        let frontend = FrontendConfig::desk();
        let mut warm = Vec::new();
        let mut expected = BTreeMap::new();
        for m in [Modality::Audio, Modality::Thermal] {
            let cfg = tiny_config(vec![m], TrainFusion::None);
            let b = train_unimodal(&train, &valid, &cfg, &frontend, TrainHooks::default()).unwrap();
            expected.insert(m, b.best_valid_eer().unwrap());
            warm.push(b);
        }
        let cfg = TrainConfig {
            epochs: 1,
            ..tiny_config(vec![Modality::Thermal, Modality::Audio], TrainFusion::Attention)
        };
        let fused = train_fused(&train, &valid, &cfg, &frontend, warm, TrainHooks::default()).unwrap();
        assert_eq!(fused.history[0].valid_eer_per_modality, expected);
        assert!(fused.fusion.is_some());
        assert_eq!(fused.modalities, vec![Modality::Audio, Modality::Thermal]);
    }

    #[test]
    fn mismatched_warm_start_is_rejected() {
        let (train, valid) = tiny_data();
        let frontend = FrontendConfig::desk();
        let cfg = tiny_config(vec![Modality::Visual], TrainFusion::None);
        let visual = train_unimodal(&train, &valid, &TrainConfig { epochs: 1, ..cfg }, &frontend, TrainHooks::default())
            .unwrap();
        let cfg = tiny_config(vec![Modality::Audio, Modality::Thermal], TrainFusion::Attention);
        let err = train_fused(&train, &valid, &cfg, &frontend, vec![visual], TrainHooks::default()).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)), "{err}");
    }
}
