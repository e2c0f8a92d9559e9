//! Scoring trial lists from stored embeddings.

use std::collections::{BTreeMap, HashMap};

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{attention_fuse_vectors, average_scores, verification_score, AttentionFusionParams};
use crate::types::{Embedding, Modality, ScoreRecord, TrialList};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    None,
    ScoreAverage,
    Attention,
}

impl FusionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FusionMode::None => "none",
            FusionMode::ScoreAverage => "score_average",
            FusionMode::Attention => "attention",
        }
    }
}

impl std::str::FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(FusionMode::None),
            "score_average" | "score-average" => Ok(FusionMode::ScoreAverage),
            "attention" => Ok(FusionMode::Attention),
            other => Err(Error::invalid(format!(
                "unknown fusion mode `{other}` (expected none, score_average or attention)"
            ))),
        }
    }
}

impl std::fmt::Display for FusionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Embeddings indexed by modality and sample id.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingStore {
    by_modality: BTreeMap<Modality, HashMap<String, Embedding>>,
}

impl EmbeddingStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, e: Embedding) {
        self.by_modality
            .entry(e.modality)
            .or_default()
            .insert(e.sample_id.clone(), e);
    }

    pub fn get(&self, modality: Modality, sample_id: &str) -> Result<&Embedding> {
        self.by_modality
            .get(&modality)
            .and_then(|m| m.get(sample_id))
            .ok_or_else(|| Error::MissingEmbedding {
                sample_id: sample_id.to_string(),
                modality: modality.to_string(),
            })
    }

    pub fn modalities(&self) -> Vec<Modality> {
        self.by_modality.keys().copied().collect()
    }

    pub fn len(&self, modality: Modality) -> usize {
        self.by_modality.get(&modality).map_or(0, HashMap::len)
    }

    pub fn sample_ids(&self, modality: Modality) -> Vec<String> {
        let mut ids: Vec<String> = self
            .by_modality
            .get(&modality)
            .map(|m| m.keys().cloned().collect())
            .unwrap_or_default();
        ids.sort();
        ids
    }

    /// Add renormalized attention-fused embeddings for every sample that has
    /// all of `modalities`.
    pub fn add_fused(&mut self, modalities: &[Modality], params: &AttentionFusionParams) -> Result<()> {
        let modalities = check_modalities(modalities)?;
        if modalities.len() != params.m() {
            return Err(Error::invalid(format!(
                "fusion parameters are for {} modalities, {} requested",
                params.m(),
                modalities.len()
            )));
        }
        let mut fused = Vec::new();
        for id in self.sample_ids(modalities[0]) {
            let es: Vec<&Embedding> = match modalities.iter().map(|&m| self.get(m, &id)).collect() {
                Ok(es) => es,
                Err(_) => continue,
            };
            let views: Vec<ArrayView1<f64>> = es.iter().map(|e| ArrayView1::from(&e.vector[..])).collect();
            let (v, _) = attention_fuse_vectors(&views, params)?;
            fused.push(Embedding::normalized(v.to_vec(), Modality::Fused, id)?);
        }
        for e in fused {
            self.insert(e);
        }
        Ok(())
    }
}

/// Sorted, deduplicated input modalities; errors on empty lists or `fused`.
pub fn check_modalities(modalities: &[Modality]) -> Result<Vec<Modality>> {
    let mut out = modalities.to_vec();
    out.sort_by_key(|m| m.order());
    out.dedup();
    if out.is_empty() {
        return Err(Error::invalid("no modalities requested"));
    }
    if out.iter().any(|m| !m.is_input()) {
        return Err(Error::invalid("`fused` is not an input modality"));
    }
    Ok(out)
}

/// Score every trial in each requested modality, and fuse per `fusion`.
pub fn score_trials(
    trials: &TrialList,
    store: &EmbeddingStore,
    modalities: &[Modality],
    fusion: FusionMode,
) -> Result<Vec<ScoreRecord>> {
    let modalities = check_modalities(modalities)?;
    if fusion != FusionMode::None && !(2..=3).contains(&modalities.len()) {
        return Err(Error::invalid(format!(
            "{fusion} fusion needs two or three modalities, got {}",
            modalities.len()
        )));
    }
    trials
        .iter()
        .map(|trial| {
            let mut per_modality = BTreeMap::new();
            for &m in &modalities {
                let s = verification_score(store.get(m, &trial.enroll_sample)?, store.get(m, &trial.test_sample)?)?;
                per_modality.insert(m, s);
            }
            let fused = match fusion {
                FusionMode::None => None,
                FusionMode::ScoreAverage => Some(average_scores(&per_modality)?),
                FusionMode::Attention => Some(verification_score(
                    store.get(Modality::Fused, &trial.enroll_sample)?,
                    store.get(Modality::Fused, &trial.test_sample)?,
                )?),
            };
            let record = ScoreRecord {
                trial: trial.clone(),
                per_modality,
                fused,
            };
            record.validate()?;
            Ok(record)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{Gender, Identity, ManifestEntry, TrialLabel, TrialPair};

    fn entry(id: &str, who: &str) -> ManifestEntry {
        ManifestEntry {
            sample_id: id.into(),
            identity: Identity::new(who, Gender::A).unwrap(),
            session: "s".into(),
            audio_path: "a".into(),
            visual_path: "v".into(),
            thermal_path: "t".into(),
        }
    }

    fn basis(k: usize, d: usize) -> Vec<f64> {
        let mut v = vec![0.0; d];
        v[k] = 1.0;
        v
    }

    fn store_with(rows: &[(&str, Modality, Vec<f64>)]) -> EmbeddingStore {
        let mut s = EmbeddingStore::new();
        for (id, m, v) in rows {
            s.insert(Embedding::normalized(v.clone(), *m, *id).unwrap());
        }
        s
    }

    fn one_trial() -> TrialList {
        TrialList {
            trials: vec![TrialPair::new(TrialLabel::Nontarget, &entry("x", "p"), &entry("y", "q")).unwrap()],
        }
    }

    #[test]
    fn score_average_of_three() {
        // Distances 0.3, 0.6, 0.9 from chords at the matching angles.
        let chord = |d: f64| {
            let theta = 2.0 * (d / 2.0f64).asin();
            vec![theta.cos(), theta.sin()]
        };
        let mut rows = Vec::new();
        for (m, d) in Modality::INPUTS.into_iter().zip([0.3, 0.6, 0.9]) {
            rows.push(("x", m, vec![1.0, 0.0]));
            rows.push(("y", m, chord(d)));
        }
        let store = store_with(&rows);
        let r = score_trials(&one_trial(), &store, &Modality::INPUTS, FusionMode::ScoreAverage).unwrap();
        assert!((r[0].fused.unwrap() - 0.6).abs() < 1e-12);
        let none = score_trials(&one_trial(), &store, &[Modality::Audio], FusionMode::None).unwrap();
        assert_eq!(none[0].fused, None);
        assert_eq!(none[0].per_modality.len(), 1);
    }

    #[test]
    fn identical_embeddings_score_zero() {
        let mut rows = Vec::new();
        for m in Modality::INPUTS {
            rows.push(("x", m, basis(1, 4)));
            rows.push(("y", m, basis(1, 4)));
        }
        let mut store = store_with(&rows);
        store
            .add_fused(&Modality::INPUTS, &AttentionFusionParams::zeros_with_dim(3, 4).unwrap())
            .unwrap();
        for fusion in [FusionMode::ScoreAverage, FusionMode::Attention] {
            let r = score_trials(&one_trial(), &store, &Modality::INPUTS, fusion).unwrap();
            assert!(r[0].per_modality.values().all(|&s| s == 0.0));
            assert_eq!(r[0].fused, Some(0.0));
        }
    }

    #[test]
    fn missing_embedding_and_mode_mismatch() {
        let store = store_with(&[("x", Modality::Audio, basis(0, 3))]);
        assert!(matches!(
            score_trials(&one_trial(), &store, &[Modality::Audio], FusionMode::None),
            Err(Error::MissingEmbedding { .. })
        ));
        let store = store_with(&[("x", Modality::Audio, basis(0, 3)), ("y", Modality::Audio, basis(1, 3))]);
        assert!(score_trials(&one_trial(), &store, &[Modality::Audio], FusionMode::ScoreAverage).is_err());
        assert!(score_trials(&one_trial(), &store, &[Modality::Fused], FusionMode::None).is_err());
    }
}
