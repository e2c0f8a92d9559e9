//! Aggregate metrics over scored trials, as JSON and as a plain-text table.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::metrics::{
    compute_accuracy, compute_eer, decision_errors, error_overlap, AccuracyReport, Decisions, ErrorOverlap, VennRegions,
};
use super::scoring::FusionMode;
use crate::error::{Error, Result};
use crate::types::{Modality, ScoreRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Clean,
    Noisy,
}

impl std::str::FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clean" => Ok(Condition::Clean),
            "noisy" => Ok(Condition::Noisy),
            other => Err(Error::invalid(format!("unknown condition `{other}` (expected clean or noisy)"))),
        }
    }
}

impl std::fmt::Display for Condition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Condition::Clean => "clean",
            Condition::Noisy => "noisy",
        })
    }
}

/// Where an accuracy threshold came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdSource {
    /// Supplied by the caller, normally the validation-set EER threshold.
    Validation,
    /// The EER threshold of these very trials.
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemResult {
    /// `audio`, `visual`, `thermal`, or e.g. `audio+visual:score_average`.
    pub name: String,
    pub modalities: Vec<Modality>,
    pub fusion: FusionMode,
    pub eer: f64,
    pub eer_threshold: f64,
    pub threshold_source: ThresholdSource,
    pub accuracy: AccuracyReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    /// Each modality's own EER threshold used for its decisions.
    pub thresholds: BTreeMap<Modality, f64>,
    pub counts: ErrorOverlap,
    pub regions: VennRegions,
    pub union: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub condition: Condition,
    pub n_target: usize,
    pub n_nontarget: usize,
    pub systems: Vec<SystemResult>,
    pub error_overlap: Option<OverlapReport>,
}

/// Name of the fused system over `modalities`.
pub fn system_name(modalities: &[Modality], fusion: FusionMode) -> String {
    let joined: Vec<&str> = modalities.iter().map(|m| m.as_str()).collect();
    match fusion {
        FusionMode::None => joined.join("+"),
        f => format!("{}:{}", joined.join("+"), f),
    }
}

/// Metrics for every unimodal system present in `records` and for the fused
/// system when fused scores are present. `accuracy_thresholds` maps system
/// names to externally chosen thresholds (validation EER); systems without
/// one use their own EER threshold.
pub fn build_report(
    records: &[ScoreRecord],
    condition: Condition,
    fusion: FusionMode,
    accuracy_thresholds: &BTreeMap<String, f64>,
) -> Result<EvalReport> {
    let first = records
        .first()
        .ok_or_else(|| Error::Insufficient("no scored trials".into()))?;
    let modalities: Vec<Modality> = first.per_modality.keys().copied().collect();
    if records
        .iter()
        .any(|r| r.per_modality.keys().copied().collect::<Vec<_>>() != modalities)
    {
        return Err(Error::invalid("score records disagree on modalities"));
    }
    let has_fused = first.fused.is_some();
    if records.iter().any(|r| r.fused.is_some() != has_fused) {
        return Err(Error::invalid("score records disagree on fused scores"));
    }
    if has_fused == (fusion == FusionMode::None) {
        return Err(Error::invalid(format!("fusion mode {fusion} does not match the score records")));
    }
    let labels: Vec<bool> = records.iter().map(|r| r.trial.label.is_target()).collect();
    let genders: Vec<_> = records.iter().map(|r| r.trial.gender_pair).collect();
    let n_target = labels.iter().filter(|&&l| l).count();

    let system = |name: String, mods: Vec<Modality>, fusion: FusionMode, scores: Vec<f64>| -> Result<SystemResult> {
        let pairs: Vec<(f64, bool)> = scores.iter().copied().zip(labels.iter().copied()).collect();
        let eer = compute_eer(&pairs)?;
        let (threshold, threshold_source) = match accuracy_thresholds.get(&name) {
            Some(&t) => (t, ThresholdSource::Validation),
            None => (eer.threshold, ThresholdSource::Test),
        };
        Ok(SystemResult {
            accuracy: compute_accuracy(&scores, &labels, threshold, &genders)?,
            name,
            modalities: mods,
            fusion,
            eer: eer.eer,
            eer_threshold: eer.threshold,
            threshold_source,
        })
    };

    let mut systems = Vec::new();
    for &m in &modalities {
        let scores = records.iter().map(|r| r.per_modality[&m]).collect();
        systems.push(system(m.to_string(), vec![m], FusionMode::None, scores)?);
    }
    if has_fused {
        let scores = records.iter().map(|r| r.fused.expect("checked")).collect();
        systems.push(system(system_name(&modalities, fusion), modalities.clone(), fusion, scores)?);
    }

    let error_overlap = if modalities == Modality::INPUTS {
        let trials: Vec<(String, String)> = records
            .iter()
            .map(|r| (r.trial.enroll_sample.clone(), r.trial.test_sample.clone()))
            .collect();
        let mut decisions = Vec::new();
        let mut thresholds = BTreeMap::new();
        for (m, sys) in modalities.iter().zip(&systems) {
            let scores: Vec<f64> = records.iter().map(|r| r.per_modality[m]).collect();
            thresholds.insert(*m, sys.eer_threshold);
            decisions.push(Decisions {
                modality: *m,
                threshold: sys.eer_threshold,
                trials: trials.clone(),
                errors: decision_errors(&scores, &labels, sys.eer_threshold)?,
            });
        }
        let counts = error_overlap(&decisions[0], &decisions[1], &decisions[2])?;
        Some(OverlapReport {
            thresholds,
            regions: counts.regions(),
            union: counts.union(),
            counts,
        })
    } else {
        None
    };

    Ok(EvalReport {
        condition,
        n_target,
        n_nontarget: records.len() - n_target,
        systems,
        error_overlap,
    })
}

impl EvalReport {
    pub fn system(&self, name: &str) -> Option<&SystemResult> {
        self.systems.iter().find(|s| s.name == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::invalid(format!("malformed report: {e}")))
    }

    /// Human-readable table: EER and accuracy per system, then the error
    /// overlap of the unimodal systems.
    pub fn to_table(&self) -> String {
        let pct = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{:.2}", 100.0 * v));
        let mut out = String::new();
        let _ = writeln!(
            out,
            "condition: {}  trials: {} target / {} nontarget",
            self.condition, self.n_target, self.n_nontarget
        );
        let _ = writeln!(
            out,
            "{:<34} {:>7} {:>9} {:>7} {:>7} {:>7}",
            "system", "EER%", "threshold", "acc%", "same%", "opp%"
        );
        for s in &self.systems {
            let _ = writeln!(
                out,
                "{:<34} {:>7.2} {:>9.4} {:>7} {:>7} {:>7}",
                s.name,
                100.0 * s.eer,
                s.eer_threshold,
                pct(Some(s.accuracy.overall)),
                pct(s.accuracy.same_gender),
                pct(s.accuracy.opposite_gender)
            );
        }
        if let Some(o) = &self.error_overlap {
            let c = o.counts;
            let _ = writeln!(out, "errors at own EER thresholds (union {}):", o.union);
            let _ = writeln!(
                out,
                "  A {}  V {}  T {}  A∩V {}  A∩T {}  V∩T {}  A∩V∩T {}",
                c.a, c.v, c.t, c.av, c.at, c.vt, c.avt
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{GenderPair, TrialLabel, TrialPair};

    fn record(i: usize, target: bool, scores: [f64; 3], fused: Option<f64>) -> ScoreRecord {
        ScoreRecord {
            trial: TrialPair {
                label: if target { TrialLabel::Target } else { TrialLabel::Nontarget },
                enroll_sample: format!("e{i}"),
                test_sample: format!("t{i}"),
                gender_pair: if i % 2 == 0 { GenderPair::Same } else { GenderPair::Opposite },
            },
            per_modality: Modality::INPUTS.into_iter().zip(scores).collect(),
            fused,
        }
    }

    fn records() -> Vec<ScoreRecord> {
        vec![
            record(0, true, [0.2, 0.3, 1.1], Some(0.5)),
            record(1, true, [0.4, 1.2, 0.2], Some(0.6)),
            record(2, false, [1.5, 1.4, 0.3], Some(1.07)),
            record(3, false, [0.3, 1.6, 1.7], Some(1.2)),
        ]
    }

    #[test]
    fn report_has_all_systems_and_overlap() {
        let r = build_report(&records(), Condition::Clean, FusionMode::ScoreAverage, &BTreeMap::new()).unwrap();
        let names: Vec<&str> = r.systems.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names, ["audio", "visual", "thermal", "audio+visual+thermal:score_average"]);
        assert_eq!(r.system("audio+visual+thermal:score_average").unwrap().eer, 0.0);
        let o = r.error_overlap.as_ref().unwrap();
        // Each modality's error set is consistent with its accuracy.
        let c = o.counts;
        for (n, sys) in [c.a, c.v, c.t].into_iter().zip(&r.systems) {
            assert!((1.0 - sys.accuracy.overall - n as f64 / 4.0).abs() < 1e-12);
        }
        let back = EvalReport::from_json(&r.to_json()).unwrap();
        assert_eq!(back, r);
        assert!(r.to_table().contains("audio+visual+thermal:score_average"));
    }

    #[test]
    fn unimodal_report_has_no_fused_system() {
        let recs: Vec<ScoreRecord> = records()
            .into_iter()
            .map(|mut r| {
                r.fused = None;
                r.per_modality.retain(|m, _| *m == Modality::Audio);
                r
            })
            .collect();
        let r = build_report(&recs, Condition::Noisy, FusionMode::None, &BTreeMap::new()).unwrap();
        assert_eq!(r.systems.len(), 1);
        assert!(r.error_overlap.is_none());
        assert!(build_report(&recs, Condition::Noisy, FusionMode::ScoreAverage, &BTreeMap::new()).is_err());
    }

    #[test]
    fn validation_threshold_is_used_when_given() {
        let mut t = BTreeMap::new();
        t.insert("audio".to_string(), 0.0);
        let r = build_report(&records(), Condition::Clean, FusionMode::ScoreAverage, &t).unwrap();
        let a = r.system("audio").unwrap();
        assert_eq!(a.threshold_source, ThresholdSource::Validation);
        assert_eq!(a.accuracy.overall, 0.5);
        assert_eq!(r.system("visual").unwrap().threshold_source, ThresholdSource::Test);
    }
}
