//! Run configuration: one TOML file with a mandatory top-level `seed` and
//! optional sections, each fully defaulted. Unknown keys are rejected.
//!
//! ```toml
//! seed = 7
//!
//! [synth]
//! n_identities = 20
//!
//! [training]
//! epochs = 12
//! modalities = ["audio"]
//! ```
//!
//! Section seeds are derived from the top-level seed; setting one directly
//! is an error.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{CorruptionConfig, SynthConfig};
use crate::error::{Error, Result};
use crate::evaluation::TrialProtocol;
use crate::frontend::FrontendConfig;
use crate::rng::child_seed;
use crate::training::{EncoderScale, TrainConfig};

/// sha256 hex digest of a value's JSON form.
pub fn digest<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("configuration serializes");
    hex::encode(Sha256::digest(json))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train: 0.6,
            valid: 0.2,
            test: 0.2,
        }
    }
}

impl SplitConfig {
    pub fn fractions(&self) -> (f64, f64, f64) {
        (self.train, self.valid, self.test)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub scale: EncoderScale,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            scale: EncoderScale::Standard,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default)]
    pub synth: SynthConfig,
    #[serde(default)]
    pub corruption: CorruptionConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub frontend: FrontendConfig,
    #[serde(default)]
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub training: TrainConfig,
    #[serde(default)]
    pub protocol: TrialProtocol,
}

impl RunConfig {
    /// Defaults for every section with the given seed.
    pub fn with_seed(seed: u64) -> Self {
        let mut cfg = Self {
            seed,
            synth: SynthConfig::default(),
            corruption: CorruptionConfig::default(),
            split: SplitConfig::default(),
            frontend: FrontendConfig::default(),
            encoder: EncoderConfig::default(),
            training: TrainConfig::default(),
            protocol: TrialProtocol::default(),
        };
        cfg.resolve();
        cfg
    }

    /// Desk-scale defaults: reduced frontend and encoders for the synthetic
    /// corpus on one CPU core.
    pub fn desk(seed: u64) -> Self {
        let mut cfg = Self {
            frontend: FrontendConfig::desk(),
            encoder: EncoderConfig {
                scale: EncoderScale::Desk,
            },
            training: TrainConfig::desk(),
            ..Self::with_seed(seed)
        };
        cfg.resolve();
        cfg
    }

    /// Fill values that follow from other sections: section seeds
    /// from the top-level seed, the training encoder scale from `encoder`.
    fn resolve(&mut self) {
        self.training.encoder_scale = self.encoder.scale;
        // TOML integers are signed 64-bit; keep derived seeds in range.
        let s = self.seed;
        let derive = |part: &str| child_seed(s, &[part]) >> 1;
        self.synth.seed = derive("synth");
        self.corruption.seed = derive("corruption");
        self.training.seed = derive("training");
        self.training.validation.seed = derive("validation-trials");
        self.protocol.seed = derive("test-trials");
    }

    /// Parse TOML text, apply `section.key=value` overrides (flags win over
    /// the file), derive section seeds and validate.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let value: toml::Value = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        Self::from_value(value, overrides)
    }

    /// This configuration with `section.key=value` overrides applied.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        Self::from_value(self.user_value(), overrides)
    }

    /// The configuration as a user would write it: derived seeds omitted.
    fn user_value(&self) -> toml::Value {
        let mut value = toml::Value::try_from(self).expect("configuration serializes");
        let table = value.as_table_mut().expect("a struct serializes to a table");
        for section in ["synth", "corruption", "training", "protocol"] {
            if let Some(t) = table.get_mut(section).and_then(toml::Value::as_table_mut) {
                t.remove("seed");
            }
        }
        if let Some(t) = table
            .get_mut("training")
            .and_then(|t| t.get_mut("validation"))
            .and_then(toml::Value::as_table_mut)
        {
            t.remove("seed");
        }
        if let Some(t) = table.get_mut("training").and_then(toml::Value::as_table_mut) {
            t.remove("encoder_scale");
        }
        value
    }

    fn from_value(mut value: toml::Value, overrides: &[String]) -> Result<Self> {
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let table = value.as_table().ok_or_else(|| Error::Config("config must be a table".into()))?;
        for section in ["synth", "corruption", "training", "protocol"] {
            if table.get(section).and_then(|s| s.get("seed")).is_some() {
                return Err(Error::Config(format!(
                    "`{section}.seed` cannot be set; use the top-level `seed`"
                )));
            }
        }
        if table.get("training").and_then(|t| t.get("validation")).and_then(|v| v.get("seed")).is_some() {
            return Err(Error::Config("`training.validation.seed` cannot be set; use the top-level `seed`".into()));
        }
        if table.get("training").and_then(|t| t.get("encoder_scale")).is_some() {
            return Err(Error::Config("`training.encoder_scale` cannot be set; use `encoder.scale`".into()));
        }
        let mut cfg: RunConfig = value
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.resolve();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.corruption.validate()?;
        self.frontend.validate()?;
        let (a, b, c) = self.split.fractions();
        if [a, b, c].iter().any(|f| !(0.0..=1.0).contains(f)) || (a + b + c - 1.0).abs() > 1e-9 {
            return Err(Error::Config("split fractions must lie in [0, 1] and sum to 1".into()));
        }
        self.training.validate()
    }

    /// TOML that parses back to this configuration.
    pub fn to_toml(&self) -> String {
        toml::to_string(&self.user_value()).expect("configuration serializes")
    }

    /// Digest of the resolved configuration.
    pub fn hash(&self) -> String {
        digest(self)
    }
}

/// Apply one `a.b.c=value` override. The value is read as a TOML literal,
/// falling back to a bare string.
fn apply_override(root: &mut toml::Value, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{spec}` is not key=value")))?;
    let parsed: toml::Value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let keys: Vec<&str> = path.trim().split('.').collect();
    let mut node = root;
    for k in &keys[..keys.len() - 1] {
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override path `{path}` crosses a non-table")))?;
        node = table
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    node.as_table_mut()
        .ok_or_else(|| Error::Config(format!("override path `{path}` crosses a non-table")))?
        .insert(keys[keys.len() - 1].to_string(), parsed);
    Ok(())
}
