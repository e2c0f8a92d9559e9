//! Shared domain types: identities, samples, embeddings, trials and scores,
//! plus the tab-separated manifest and trial-list formats.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;
pub const EMBED_DIM: usize = 512;

/// Tolerance on the unit norm of a normalized unimodal embedding.
pub const NORM_TOLERANCE: f64 = 1e-6;

/// Two-category label used only to stratify trials into same/opposite pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Gender {
    A,
    B,
}

impl FromStr for Gender {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" => Ok(Gender::A),
            "B" => Ok(Gender::B),
            other => Err(Error::UnknownGender(other.to_string())),
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Gender::A => "A",
            Gender::B => "B",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Identity {
    pub id: String,
    pub gender: Gender,
}

impl Identity {
    pub fn new(id: impl Into<String>, gender: Gender) -> Result<Self> {
        let id = id.into();
        if id.is_empty() {
            return Err(Error::invalid("identity id must be non-empty"));
        }
        Ok(Self { id, gender })
    }
}

/// Input stream. `Fused` tags attention-fused person embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Audio,
    Visual,
    Thermal,
    Fused,
}

impl Modality {
    /// The three input modalities in the fixed concatenation order.
    pub const INPUTS: [Modality; 3] = [Modality::Audio, Modality::Visual, Modality::Thermal];

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Audio => "audio",
            Modality::Visual => "visual",
            Modality::Thermal => "thermal",
            Modality::Fused => "fused",
        }
    }

    pub fn is_input(self) -> bool {
        self != Modality::Fused
    }

    /// Sort key for the fixed (audio, visual, thermal) ordering.
    pub fn order(self) -> usize {
        match self {
            Modality::Audio => 0,
            Modality::Visual => 1,
            Modality::Thermal => 2,
            Modality::Fused => 3,
        }
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "audio" | "a" => Ok(Modality::Audio),
            "visual" | "v" => Ok(Modality::Visual),
            "thermal" | "t" => Ok(Modality::Thermal),
            "fused" => Ok(Modality::Fused),
            _ => Err(Error::UnknownModality(s.to_string())),
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Parse a comma-separated modality list such as `audio,visual,thermal`.
pub fn parse_modality_list(s: &str) -> Result<Vec<Modality>> {
    let mut out: Vec<Modality> = s
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(Modality::from_str)
        .collect::<Result<_>>()?;
    out.sort_by_key(|m| m.order());
    out.dedup();
    Ok(out)
}

/// Image stored height × width × channels with values in [0, 1].
pub type Image = Array3<f32>;

/// One recording of one person in all three modalities.
#[derive(Debug, Clone, PartialEq)]
pub struct MultimodalSample {
    pub sample_id: String,
    pub identity: Identity,
    pub session: String,
    /// Mono PCM at [`SAMPLE_RATE`].
    pub audio: Vec<f32>,
    /// H × W × 3.
    pub visual: Image,
    /// H × W × 1.
    pub thermal: Image,
    pub corrupted: BTreeSet<Modality>,
}

impl MultimodalSample {
    pub fn new(
        sample_id: impl Into<String>,
        identity: Identity,
        session: impl Into<String>,
        audio: Vec<f32>,
        visual: Image,
        thermal: Image,
    ) -> Result<Self> {
        let sample = Self {
            sample_id: sample_id.into(),
            identity,
            session: session.into(),
            audio,
            visual,
            thermal,
            corrupted: BTreeSet::new(),
        };
        sample.validate()?;
        Ok(sample)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_id.is_empty() {
            return Err(Error::invalid("sample_id must be non-empty"));
        }
        if self.audio.len() < SAMPLE_RATE as usize {
            return Err(Error::invalid(format!(
                "sample `{}`: audio has {} samples, need at least one second ({})",
                self.sample_id,
                self.audio.len(),
                SAMPLE_RATE
            )));
        }
        let (vh, vw, vc) = self.visual.dim();
        let (th, tw, tc) = self.thermal.dim();
        if vc != 3 {
            return Err(Error::shape("visual H×W×3", format!("{vh}×{vw}×{vc}")));
        }
        if tc != 1 {
            return Err(Error::shape("thermal H×W×1", format!("{th}×{tw}×{tc}")));
        }
        if (vh, vw) != (th, tw) {
            return Err(Error::shape(
                format!("thermal {vh}×{vw} matching visual"),
                format!("{th}×{tw}"),
            ));
        }
        if self.corrupted.contains(&Modality::Fused) {
            return Err(Error::invalid("corruption flags must be input modalities"));
        }
        Ok(())
    }

    pub fn descriptor(&self) -> ManifestEntry {
        ManifestEntry::for_sample(self)
    }
}

/// A unit-norm embedding tagged with its modality and source sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub vector: Vec<f64>,
    pub modality: Modality,
    pub sample_id: String,
}

impl Embedding {
    /// L2-normalize `vector` and wrap it.
    pub fn normalized(vector: Vec<f64>, modality: Modality, sample_id: impl Into<String>) -> Result<Self> {
        let mut vector = vector;
        l2_normalize(&mut vector)?;
        Ok(Self {
            vector,
            modality,
            sample_id: sample_id.into(),
        })
    }

    /// Wrap without normalizing (used for the pre-renormalization fused vector).
    pub fn raw(vector: Vec<f64>, modality: Modality, sample_id: impl Into<String>) -> Self {
        Self {
            vector,
            modality,
            sample_id: sample_id.into(),
        }
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.vector)
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn renormalized(mut self) -> Result<Self> {
        l2_normalize(&mut self.vector)?;
        Ok(self)
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn l2_normalize(v: &mut [f64]) -> Result<()> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("embedding".into()));
    }
    let n = l2_norm(v);
    if n == 0.0 {
        return Err(Error::invalid("cannot normalize a zero vector"));
    }
    v.iter_mut().for_each(|x| *x /= n);
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialLabel {
    Target,
    Nontarget,
}

impl TrialLabel {
    pub fn is_target(self) -> bool {
        self == TrialLabel::Target
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenderPair {
    Same,
    Opposite,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TrialPair {
    pub label: TrialLabel,
    pub enroll_sample: String,
    pub test_sample: String,
    pub gender_pair: GenderPair,
}

impl TrialPair {
    pub fn new(
        label: TrialLabel,
        enroll: &ManifestEntry,
        test: &ManifestEntry,
    ) -> Result<Self> {
        if enroll.sample_id == test.sample_id {
            return Err(Error::invalid(format!(
                "trial pairs `{}` with itself",
                enroll.sample_id
            )));
        }
        let same_identity = enroll.identity.id == test.identity.id;
        match label {
            TrialLabel::Target if !same_identity => {
                return Err(Error::invalid(format!(
                    "target trial {} / {} spans two identities",
                    enroll.sample_id, test.sample_id
                )))
            }
            TrialLabel::Nontarget if same_identity => {
                return Err(Error::invalid(format!(
                    "nontarget trial {} / {} has one identity",
                    enroll.sample_id, test.sample_id
                )))
            }
            _ => {}
        }
        let gender_pair = if enroll.identity.gender == test.identity.gender {
            GenderPair::Same
        } else {
            GenderPair::Opposite
        };
        Ok(Self {
            label,
            enroll_sample: enroll.sample_id.clone(),
            test_sample: test.sample_id.clone(),
            gender_pair,
        })
    }
}

/// Ordered list of trials. The on-disk form is `label<TAB>enroll<TAB>test`
/// with label 1 for target and 0 for nontarget; gender pairs are resolved
/// from the manifest when reading.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialList {
    pub trials: Vec<TrialPair>,
}

impl TrialList {
    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, TrialPair> {
        self.trials.iter()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for t in &self.trials {
            let label = if t.label.is_target() { 1 } else { 0 };
            out.push_str(&format!("{label}\t{}\t{}\n", t.enroll_sample, t.test_sample));
        }
        out
    }

    pub fn parse(text: &str, manifest: &Manifest) -> Result<Self> {
        let index = manifest.index();
        let mut trials = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("expected 3 tab-separated fields, found {}", fields.len()),
                });
            }
            let label = match fields[0] {
                "1" => TrialLabel::Target,
                "0" => TrialLabel::Nontarget,
                other => {
                    return Err(Error::Parse {
                        line: line_no,
                        msg: format!("label must be 1 or 0, found `{other}`"),
                    })
                }
            };
            let enroll = index
                .get(fields[1])
                .ok_or_else(|| Error::UnknownSample(fields[1].to_string()))?;
            let test = index
                .get(fields[2])
                .ok_or_else(|| Error::UnknownSample(fields[2].to_string()))?;
            let pair = TrialPair::new(label, enroll, test).map_err(|e| Error::Parse {
                line: line_no,
                msg: e.to_string(),
            })?;
            trials.push(pair);
        }
        Ok(Self { trials })
    }

    pub fn read(path: &Path, manifest: &Manifest) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, manifest)
    }
}

/// Per-trial scores: one distance per modality plus an optional fused score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub trial: TrialPair,
    pub per_modality: BTreeMap<Modality, f64>,
    pub fused: Option<f64>,
}

impl ScoreRecord {
    pub fn validate(&self) -> Result<()> {
        let in_range = |s: f64| (0.0..=2.0).contains(&s);
        for (m, s) in &self.per_modality {
            if !in_range(*s) {
                return Err(Error::invalid(format!("{m} score {s} outside [0, 2]")));
            }
        }
        if let Some(s) = self.fused {
            if !in_range(s) {
                return Err(Error::invalid(format!("fused score {s} outside [0, 2]")));
            }
        }
        Ok(())
    }
}

/// One manifest line: sample metadata plus per-modality file paths.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub sample_id: String,
    pub identity: Identity,
    pub session: String,
    pub audio_path: PathBuf,
    pub visual_path: PathBuf,
    pub thermal_path: PathBuf,
}

impl ManifestEntry {
    /// Descriptor for an in-memory sample, with conventional relative paths.
    pub fn for_sample(sample: &MultimodalSample) -> Self {
        let id = &sample.sample_id;
        Self {
            sample_id: id.clone(),
            identity: sample.identity.clone(),
            session: sample.session.clone(),
            audio_path: PathBuf::from(format!("audio/{id}.wav")),
            visual_path: PathBuf::from(format!("visual/{id}.ppm")),
            thermal_path: PathBuf::from(format!("thermal/{id}.pgm")),
        }
    }

    pub fn path(&self, modality: Modality) -> Option<&Path> {
        match modality {
            Modality::Audio => Some(&self.audio_path),
            Modality::Visual => Some(&self.visual_path),
            Modality::Thermal => Some(&self.thermal_path),
            Modality::Fused => None,
        }
    }

    fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.sample_id,
            self.identity.id,
            self.identity.gender,
            self.session,
            self.audio_path.display(),
            self.visual_path.display(),
            self.thermal_path.display()
        )
    }
}

/// A validated, sample-id-sorted manifest.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, sample_id: &str) -> Option<&ManifestEntry> {
        self.entries
            .binary_search_by(|e| e.sample_id.as_str().cmp(sample_id))
            .ok()
            .map(|i| &self.entries[i])
    }

    pub fn index(&self) -> HashMap<&str, &ManifestEntry> {
        self.entries.iter().map(|e| (e.sample_id.as_str(), e)).collect()
    }

    /// Distinct identities, sorted by id.
    pub fn identities(&self) -> Vec<Identity> {
        let set: BTreeSet<&Identity> = self.entries.iter().map(|e| &e.identity).collect();
        set.into_iter().cloned().collect()
    }

    /// Keep only entries whose identity id is in `ids`.
    pub fn filter_identities(&self, ids: &HashSet<String>) -> Manifest {
        Manifest {
            entries: self
                .entries
                .iter()
                .filter(|e| ids.contains(&e.identity.id))
                .cloned()
                .collect(),
        }
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&e.to_line());
            out.push('\n');
        }
        out
    }

    /// Check that every trial resolves both of its sample ids.
    pub fn resolves(&self, trials: &TrialList) -> Result<()> {
        for t in trials.iter() {
            for id in [&t.enroll_sample, &t.test_sample] {
                if self.get(id).is_none() {
                    return Err(Error::UnknownSample(id.clone()));
                }
            }
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Manifest> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        validate_manifest(parse_manifest(&text)?, Some(base))
    }
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 7 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected 7 tab-separated fields, found {}", f.len()),
            });
        }
        let gender = Gender::from_str(f[2])?;
        let identity = Identity::new(f[1], gender).map_err(|e| Error::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        out.push(ManifestEntry {
            sample_id: f[0].to_string(),
            identity,
            session: f[3].to_string(),
            audio_path: PathBuf::from(f[4]),
            visual_path: PathBuf::from(f[5]),
            thermal_path: PathBuf::from(f[6]),
        });
    }
    Ok(out)
}

/// Check manifest invariants and sort by sample id.
///
/// With `base_dir` set, every modality path (relative paths resolved against
/// it) must exist on disk.
pub fn validate_manifest(mut entries: Vec<ManifestEntry>, base_dir: Option<&Path>) -> Result<Manifest> {
    entries.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    for w in entries.windows(2) {
        if w[0].sample_id == w[1].sample_id {
            return Err(Error::DuplicateId(w[0].sample_id.clone()));
        }
    }
    let mut genders: HashMap<&str, Gender> = HashMap::new();
    for e in &entries {
        if e.sample_id.is_empty() {
            return Err(Error::invalid("empty sample_id"));
        }
        if let Some(g) = genders.insert(&e.identity.id, e.identity.gender) {
            if g != e.identity.gender {
                return Err(Error::invalid(format!(
                    "identity `{}` appears with both genders",
                    e.identity.id
                )));
            }
        }
        if let Some(base) = base_dir {
            for m in Modality::INPUTS {
                let p = resolve_path(base, e.path(m).expect("input modality"));
                if !p.is_file() {
                    return Err(Error::MissingFile {
                        sample_id: e.sample_id.clone(),
                        modality: m.to_string(),
                        path: p,
                    });
                }
            }
        }
    }
    Ok(Manifest { entries })
}

pub fn resolve_path(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}
