//! End-to-end building blocks shared by the examples, the command-line tool
//! and the integration tests: corpus construction under a condition,
//! unimodal training of several modalities, and evaluation of a set of
//! unimodal and fused systems on one trial list.

use std::collections::BTreeMap;

use crate::config::RunConfig;
use crate::dataset::{corrupt_dataset, generate_synthetic, select, split_dataset, CorruptionScope, Splits};
use crate::error::{Error, Result};
use crate::evaluation::{
    build_report, generate_trials, score_trials, system_name, Condition, EmbeddingStore, EvalReport,
    FusionMode, TrialProtocol,
};
use crate::rng::child_seed;
use crate::training::{train_unimodal, CheckpointBundle, TrainFusion, TrainHooks};
use crate::types::{Manifest, Modality, MultimodalSample, TrialList};

/// Identity-disjoint train/valid/test samples under one condition.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub condition: Condition,
    pub manifest: Manifest,
    pub splits: Splits,
    pub train: Vec<MultimodalSample>,
    pub valid: Vec<MultimodalSample>,
    pub test: Vec<MultimodalSample>,
}

/// Generate the synthetic corpus, split it by identity and, for the noisy
/// condition, corrupt each split independently at the configured rate.
pub fn synthetic_corpus(cfg: &RunConfig, condition: Condition) -> Result<Corpus> {
    let (samples, manifest) = generate_synthetic(&cfg.synth)?;
    let splits = split_dataset(&manifest, cfg.split.fractions(), child_seed(cfg.seed, &["split"]))?;
    let mut parts = [
        select(&samples, &splits.train),
        select(&samples, &splits.valid),
        select(&samples, &splits.test),
    ];
    if condition == Condition::Noisy {
        for (part, name) in parts.iter_mut().zip(["train", "valid", "test"]) {
            let corruption = crate::dataset::CorruptionConfig {
                seed: child_seed(cfg.corruption.seed, &[name]),
                ..cfg.corruption.clone()
            };
            *part = corrupt_dataset(part, &corruption, CorruptionScope::AllModalitiesIndependent)?.samples;
        }
    }
    let [train, valid, test] = parts;
    Ok(Corpus {
        condition,
        manifest,
        splits,
        train,
        valid,
        test,
    })
}

/// Train one encoder per modality with the run's training settings.
pub fn train_unimodal_systems(
    corpus: &Corpus,
    cfg: &RunConfig,
    modalities: &[Modality],
) -> Result<BTreeMap<Modality, CheckpointBundle>> {
    let mut out = BTreeMap::new();
    for &m in modalities {
        let training = crate::training::TrainConfig {
            modalities: vec![m],
            fusion_mode: TrainFusion::None,
            ..cfg.training.clone()
        };
        log::info!("training the {m} encoder");
        out.insert(
            m,
            train_unimodal(&corpus.train, &corpus.valid, &training, &cfg.frontend, TrainHooks::default())?,
        );
    }
    Ok(out)
}

/// Embeddings of `samples` from every bundle, merged into one store.
pub fn embed_all<'a>(
    bundles: impl IntoIterator<Item = &'a CheckpointBundle>,
    samples: &[MultimodalSample],
) -> Result<EmbeddingStore> {
    let mut store = EmbeddingStore::new();
    for bundle in bundles {
        let part = bundle.embed(samples)?;
        for m in part.modalities() {
            if m == Modality::Fused && store.len(Modality::Fused) > 0 {
                return Err(Error::invalid("two bundles provide fused embeddings"));
            }
            for id in part.sample_ids(m) {
                store.insert(part.get(m, &id)?.clone());
            }
        }
    }
    Ok(store)
}

/// A fused system to evaluate next to the unimodal ones.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FusedSystem {
    pub modalities: Vec<Modality>,
    pub fusion: FusionMode,
}

impl FusedSystem {
    pub fn name(&self) -> String {
        system_name(&self.modalities, self.fusion)
    }
}

/// Bimodal (audio + visual) and trimodal score averaging.
pub fn score_average_systems() -> Vec<FusedSystem> {
    vec![
        FusedSystem {
            modalities: vec![Modality::Audio, Modality::Visual],
            fusion: FusionMode::ScoreAverage,
        },
        FusedSystem {
            modalities: Modality::INPUTS.to_vec(),
            fusion: FusionMode::ScoreAverage,
        },
    ]
}

/// Report covering every unimodal system in `store` plus `fused`. When
/// `validation` is given, accuracies use each system's validation EER
/// threshold; otherwise the test EER threshold.
pub fn evaluate_systems(
    store: &EmbeddingStore,
    trials: &TrialList,
    condition: Condition,
    fused: &[FusedSystem],
    validation: Option<(&EmbeddingStore, &TrialList)>,
) -> Result<EvalReport> {
    let unimodal: Vec<Modality> = store.modalities().into_iter().filter(|m| m.is_input()).collect();
    let mut runs: Vec<(Vec<Modality>, FusionMode)> = vec![(unimodal.clone(), FusionMode::None)];
    runs.extend(fused.iter().map(|f| (f.modalities.clone(), f.fusion)));

    let mut thresholds = BTreeMap::new();
    if let Some((vstore, vtrials)) = validation {
        for (mods, fusion) in &runs {
            for r in build_report(&score_trials(vtrials, vstore, mods, *fusion)?, condition, *fusion, &BTreeMap::new())?
                .systems
            {
                thresholds.insert(r.name, r.eer_threshold);
            }
        }
    }

    let mut report: Option<EvalReport> = None;
    for (mods, fusion) in &runs {
        let part = build_report(&score_trials(trials, store, mods, *fusion)?, condition, *fusion, &thresholds)?;
        report = Some(match report {
            None => part,
            Some(mut r) => {
                for s in part.systems {
                    if r.system(&s.name).is_none() {
                        r.systems.push(s);
                    }
                }
                r.error_overlap = r.error_overlap.or(part.error_overlap);
                r
            }
        });
    }
    Ok(report.expect("at least the unimodal run"))
}

/// Test-set report for unimodal encoders plus score-averaged fusions, with
/// accuracy thresholds from the validation split.
pub fn evaluate_score_fusion(
    bundles: &BTreeMap<Modality, CheckpointBundle>,
    corpus: &Corpus,
    protocol: &TrialProtocol,
    validation_protocol: &TrialProtocol,
) -> Result<EvalReport> {
    let test_trials = generate_trials(&corpus.splits.test, protocol)?;
    let valid_trials = generate_trials(&corpus.splits.valid, validation_protocol)?;
    let test_store = embed_all(bundles.values(), &corpus.test)?;
    let valid_store = embed_all(bundles.values(), &corpus.valid)?;
    let fused: Vec<FusedSystem> = score_average_systems()
        .into_iter()
        .filter(|f| f.modalities.iter().all(|m| bundles.contains_key(m)))
        .collect();
    evaluate_systems(
        &test_store,
        &test_trials,
        corpus.condition,
        &fused,
        Some((&valid_store, &valid_trials)),
    )
}

/// EER of one named system in a report.
pub fn system_eer(report: &EvalReport, name: &str) -> Result<f64> {
    report
        .system(name)
        .map(|s| s.eer)
        .ok_or_else(|| Error::invalid(format!("report has no system `{name}`")))
}

/// EER of the best unimodal system in a report.
pub fn best_unimodal_eer(report: &EvalReport) -> Result<f64> {
    report
        .systems
        .iter()
        .filter(|s| s.fusion == FusionMode::None)
        .map(|s| s.eer)
        .min_by(f64::total_cmp)
        .ok_or_else(|| Error::invalid("report has no unimodal system"))
}
