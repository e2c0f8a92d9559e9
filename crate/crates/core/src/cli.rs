//! The `trimodal` command-line tool: synthetic data, trial lists, training,
//! cached embedding extraction and evaluation, all driven by one TOML run
//! configuration plus `--set section.key=value` overrides.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::dataset::io::{write_text_atomic, CORRUPTION_SIDECAR};
use crate::dataset::{corrupt_dataset, generate_synthetic, load_samples, split_dataset, write_samples, CorruptionScope};
use crate::encoders::checkpoint::file_hash;
use crate::error::{Error, Result};
use crate::evaluation::{far_frr_curve, generate_trials, score_trials, Condition, EmbeddingStore, EvalReport, FusionMode};
use crate::pipeline::{evaluate_systems, FusedSystem};
use crate::rng::child_seed;
use crate::training::{train_fused, train_unimodal, CheckpointBundle, TrainFusion, TrainHooks};
use crate::types::{parse_modality_list, validate_manifest, Embedding, Manifest, Modality, TrialList};

/// Name of the dataset description written next to the manifests.
pub const DATASET_INFO: &str = "dataset.json";

#[derive(Debug, Parser)]
#[command(name = "trimodal", version, about = "Audio-visual-thermal person verification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Run configuration (TOML); `seed` is mandatory.
    #[arg(long, short)]
    pub config: PathBuf,
    /// Override a configuration value, e.g. `--set training.epochs=4`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic corpus and identity-disjoint split manifests.
    SynthData {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory for media, manifests and the dataset description.
        #[arg(long)]
        out: PathBuf,
        /// `noisy` corrupts each split at the configured rate.
        #[arg(long, default_value = "clean")]
        condition: Condition,
    },
    /// Write a trial list (`label<TAB>enroll<TAB>test`) for a manifest.
    MakeTrials {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a unimodal encoder or an attention-fused system.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        valid: PathBuf,
        /// Checkpoint path; rewritten atomically after every epoch.
        #[arg(long)]
        out: PathBuf,
        /// Metrics log; defaults to the checkpoint path with `.metrics.tsv`.
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Unimodal checkpoints that initialize a fused system's encoders.
        #[arg(long = "warm-start")]
        warm_start: Vec<PathBuf>,
    },
    /// Compute embeddings for a manifest into the on-disk cache.
    Embed {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        cache: PathBuf,
        /// Defaults to the condition recorded with the dataset.
        #[arg(long)]
        condition: Option<Condition>,
    },
    /// Score a trial list and write the evaluation report.
    Evaluate {
        #[command(flatten)]
        config: ConfigArgs,
        /// One or more checkpoints (repeat the flag).
        #[arg(long, required = true)]
        checkpoint: Vec<PathBuf>,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        trials: PathBuf,
        #[arg(long, default_value = "none")]
        fusion: FusionMode,
        /// Modalities to score-average, comma separated; defaults to all.
        #[arg(long)]
        modalities: Option<String>,
        /// Validation manifest and trials supplying accuracy thresholds.
        #[arg(long, requires = "valid_trials")]
        valid_manifest: Option<PathBuf>,
        #[arg(long, requires = "valid_manifest")]
        valid_trials: Option<PathBuf>,
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long)]
        condition: Option<Condition>,
        /// Output directory for `report.json`, `report.txt`, `scores.tsv`
        /// and `far_frr.tsv`.
        #[arg(long)]
        out: PathBuf,
    },
}

/// Written by `synth-data` next to the manifests.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub condition: Condition,
    pub config_hash: String,
    pub n_samples: usize,
}

/// `report.json`: the evaluation report plus provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportFile {
    pub config_hash: String,
    pub checkpoints: Vec<CheckpointRef>,
    pub trials: String,
    pub report: EvalReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointRef {
    pub path: String,
    pub sha256: String,
    pub config_hash: String,
}

/// A failure with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub error: Error,
}

impl From<Error> for Failure {
    fn from(error: Error) -> Self {
        let code = match error {
            Error::Config(_) => 1,
            _ => 2,
        };
        Failure { code, error }
    }
}

/// Parse arguments, run, and return the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.error);
            f.code
        }
    }
}

fn load_config(args: &ConfigArgs) -> std::result::Result<RunConfig, Failure> {
    RunConfig::read(&args.config, &args.overrides).map_err(|error| Failure { code: 1, error })
}

pub fn run(command: Command) -> std::result::Result<(), Failure> {
    match command {
        Command::SynthData { config, out, condition } => {
            let cfg = load_config(&config)?;
            cmd_synth_data(&cfg, &out, condition)?;
        }
        Command::MakeTrials { config, manifest, out } => {
            let cfg = load_config(&config)?;
            let manifest = Manifest::read(&manifest)?;
            let trials = generate_trials(&manifest, &cfg.protocol)?;
            write_text_atomic(&out, &trials.to_tsv())?;
            println!("{} trials written to {}", trials.len(), out.display());
        }
        Command::Train {
            config,
            train,
            valid,
            out,
            metrics,
            warm_start,
        } => {
            let cfg = load_config(&config)?;
            cmd_train(&cfg, &train, &valid, &out, metrics.as_deref(), &warm_start)?;
        }
        Command::Embed {
            config,
            checkpoint,
            manifest,
            cache,
            condition,
        } => {
            load_config(&config)?;
            let bundle = CheckpointBundle::load(&checkpoint)?;
            let hash = file_hash(&checkpoint)?;
            let manifest_path = manifest;
            let manifest = Manifest::read(&manifest_path)?;
            let condition = resolve_condition(condition, &manifest_path)?;
            let cache = EmbeddingCache::new(cache);
            let ids: Vec<String> = manifest.entries().iter().map(|e| e.sample_id.clone()).collect();
            let (_, computed) = cache.embeddings(&bundle, &hash, condition, &manifest, &manifest_path, &ids)?;
            println!(
                "{} samples: {computed} computed, {} from cache",
                ids.len(),
                ids.len() - computed
            );
        }
        Command::Evaluate {
            config,
            checkpoint,
            manifest,
            trials,
            fusion,
            modalities,
            valid_manifest,
            valid_trials,
            cache,
            condition,
            out,
        } => {
            let cfg = load_config(&config)?;
            let modalities = modalities.as_deref().map(parse_modality_list).transpose()?;
            let request = EvaluateRequest {
                checkpoints: &checkpoint,
                manifest: &manifest,
                trials: &trials,
                fusion,
                modalities,
                validation: valid_manifest.as_deref().zip(valid_trials.as_deref()),
                cache: cache.as_deref(),
                condition,
                out: &out,
            };
            let report = cmd_evaluate(&cfg, &request)?;
            print!("{}", report.report.to_table());
        }
    }
    Ok(())
}

/// Generate, split and (for `noisy`) corrupt the synthetic corpus, then
/// write media plus `all.tsv`, `train.tsv`, `valid.tsv`, `test.tsv`.
pub fn cmd_synth_data(cfg: &RunConfig, out: &Path, condition: Condition) -> Result<Manifest> {
    let (mut samples, manifest) = generate_synthetic(&cfg.synth)?;
    let splits = split_dataset(&manifest, cfg.split.fractions(), child_seed(cfg.seed, &["split"]))?;
    if condition == Condition::Noisy {
        let mut corrupted = Vec::with_capacity(samples.len());
        for (part, name) in [(&splits.train, "train"), (&splits.valid, "valid"), (&splits.test, "test")] {
            let corruption = crate::dataset::CorruptionConfig {
                seed: child_seed(cfg.corruption.seed, &[name]),
                ..cfg.corruption.clone()
            };
            let subset = crate::dataset::select(&samples, part);
            corrupted.extend(corrupt_dataset(&subset, &corruption, CorruptionScope::AllModalitiesIndependent)?.samples);
        }
        corrupted.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
        samples = corrupted;
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let stale = out.join(CORRUPTION_SIDECAR);
    if stale.exists() {
        std::fs::remove_file(&stale).map_err(|e| Error::io(&stale, e))?;
    }
    let all = write_samples(out, &samples)?;
    write_text_atomic(&out.join("all.tsv"), &all.to_tsv())?;
    for (m, name) in [(&splits.train, "train"), (&splits.valid, "valid"), (&splits.test, "test")] {
        write_text_atomic(&out.join(format!("{name}.tsv")), &m.to_tsv())?;
    }
    let info = DatasetInfo {
        condition,
        config_hash: cfg.hash(),
        n_samples: samples.len(),
    };
    write_text_atomic(&out.join(DATASET_INFO), &to_json(&info))?;
    write_text_atomic(&out.join("config.toml"), &cfg.to_toml())?;
    println!(
        "{} samples ({condition}) in {}: {} / {} / {} identities",
        samples.len(),
        out.display(),
        splits.train.identities().len(),
        splits.valid.identities().len(),
        splits.test.identities().len()
    );
    Ok(all)
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable") + "\n"
}

fn base_dir(manifest_path: &Path) -> &Path {
    manifest_path.parent().unwrap_or_else(|| Path::new("."))
}

/// Condition from the flag, else from the dataset description next to
/// the manifest, else clean.
pub fn resolve_condition(flag: Option<Condition>, manifest_path: &Path) -> Result<Condition> {
    if let Some(c) = flag {
        return Ok(c);
    }
    let info = base_dir(manifest_path).join(DATASET_INFO);
    if !info.is_file() {
        return Ok(Condition::Clean);
    }
    let text = std::fs::read_to_string(&info).map_err(|e| Error::io(&info, e))?;
    let info: DatasetInfo =
        serde_json::from_str(&text).map_err(|e| Error::invalid(format!("{}: {e}", DATASET_INFO)))?;
    Ok(info.condition)
}

pub fn cmd_train(
    cfg: &RunConfig,
    train: &Path,
    valid: &Path,
    out: &Path,
    metrics: Option<&Path>,
    warm_start: &[PathBuf],
) -> Result<CheckpointBundle> {
    let train_samples = load_samples(&Manifest::read(train)?, base_dir(train))?;
    let valid_samples = load_samples(&Manifest::read(valid)?, base_dir(valid))?;
    let metrics_path = metrics.map_or_else(|| out.with_extension("metrics.tsv"), Path::to_path_buf);
    let hash = cfg.hash();
    let hooks = TrainHooks {
        checkpoint: Some(out),
        metrics_log: Some(&metrics_path),
        config_hash: Some(&hash),
    };
    let bundle = match cfg.training.fusion_mode {
        TrainFusion::None => {
            if !warm_start.is_empty() {
                return Err(Error::Config("--warm-start needs training.fusion_mode = \"attention\"".into()));
            }
            train_unimodal(&train_samples, &valid_samples, &cfg.training, &cfg.frontend, hooks)?
        }
        TrainFusion::Attention => {
            let warm = warm_start
                .iter()
                .map(|p| CheckpointBundle::load(p))
                .collect::<Result<Vec<_>>>()?;
            train_fused(&train_samples, &valid_samples, &cfg.training, &cfg.frontend, warm, hooks)?
        }
    };
    let modalities: Vec<&str> = bundle.modalities.iter().map(|m| m.as_str()).collect();
    println!(
        "{} trained; best epoch {} with validation EER {:.2}%; checkpoint {}",
        modalities.join("+"),
        bundle.best_epoch,
        100.0 * bundle.best_valid_eer().unwrap_or(f64::NAN),
        out.display()
    );
    Ok(bundle)
}

/// Embeddings on disk at `root/<checkpoint sha256>/<condition>/<sample_id>.json`,
/// one file per sample holding every modality the checkpoint produces.
/// Files are replaced atomically, so concurrent writers are safe.
#[derive(Debug, Clone)]
pub struct EmbeddingCache {
    root: PathBuf,
}

impl EmbeddingCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn entry_path(&self, checkpoint_hash: &str, condition: Condition, sample_id: &str) -> PathBuf {
        self.root
            .join(checkpoint_hash)
            .join(condition.to_string())
            .join(format!("{sample_id}.json"))
    }

    fn load(&self, checkpoint_hash: &str, condition: Condition, sample_id: &str) -> Result<Option<Vec<Embedding>>> {
        let path = self.entry_path(checkpoint_hash, condition, sample_id);
        if !path.is_file() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let map: BTreeMap<Modality, Vec<f64>> = serde_json::from_str(&text)
            .map_err(|e| Error::invalid(format!("corrupt cache entry {}: {e}", path.display())))?;
        Ok(Some(
            map.into_iter()
                .map(|(modality, vector)| Embedding {
                    vector,
                    modality,
                    sample_id: sample_id.to_string(),
                })
                .collect(),
        ))
    }

    fn store(&self, checkpoint_hash: &str, condition: Condition, sample_id: &str, embeddings: &[&Embedding]) -> Result<()> {
        let map: BTreeMap<Modality, &Vec<f64>> = embeddings.iter().map(|e| (e.modality, &e.vector)).collect();
        let path = self.entry_path(checkpoint_hash, condition, sample_id);
        let dir = path.parent().expect("entry paths have a parent");
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_text_atomic(&path, &serde_json::to_string(&map).expect("serializable"))
    }

    /// Embeddings of `ids` under `bundle`, computing and caching the missing
    /// ones. Returns the store and the number of samples computed.
    pub fn embeddings(
        &self,
        bundle: &CheckpointBundle,
        checkpoint_hash: &str,
        condition: Condition,
        manifest: &Manifest,
        manifest_path: &Path,
        ids: &[String],
    ) -> Result<(EmbeddingStore, usize)> {
        let mut store = EmbeddingStore::new();
        let mut missing = Vec::new();
        for id in ids {
            match self.load(checkpoint_hash, condition, id)? {
                Some(list) => list.into_iter().for_each(|e| store.insert(e)),
                None => missing.push(id.clone()),
            }
        }
        if !missing.is_empty() {
            let fresh = embed_samples(bundle, manifest, manifest_path, &missing)?;
            for id in &missing {
                let list = fresh
                    .modalities()
                    .into_iter()
                    .map(|m| fresh.get(m, id))
                    .collect::<Result<Vec<_>>>()?;
                self.store(checkpoint_hash, condition, id, &list)?;
                list.into_iter().for_each(|e| store.insert(e.clone()));
            }
        }
        Ok((store, missing.len()))
    }
}

/// Load and embed the listed samples of a manifest.
fn embed_samples(
    bundle: &CheckpointBundle,
    manifest: &Manifest,
    manifest_path: &Path,
    ids: &[String],
) -> Result<EmbeddingStore> {
    let entries = ids
        .iter()
        .map(|id| manifest.get(id).cloned().ok_or_else(|| Error::UnknownSample(id.clone())))
        .collect::<Result<Vec<_>>>()?;
    let subset = validate_manifest(entries, None)?;
    bundle.embed(&load_samples(&subset, base_dir(manifest_path))?)
}

#[derive(Debug)]
pub struct EvaluateRequest<'a> {
    pub checkpoints: &'a [PathBuf],
    pub manifest: &'a Path,
    pub trials: &'a Path,
    pub fusion: FusionMode,
    pub modalities: Option<Vec<Modality>>,
    pub validation: Option<(&'a Path, &'a Path)>,
    pub cache: Option<&'a Path>,
    pub condition: Option<Condition>,
    pub out: &'a Path,
}

/// Embeddings of every sample the trial list touches, over all checkpoints.
fn trial_embeddings(
    bundles: &[(CheckpointBundle, String)],
    manifest_path: &Path,
    trials_path: &Path,
    condition: Condition,
    cache: Option<&EmbeddingCache>,
) -> Result<(EmbeddingStore, TrialList)> {
    let manifest = Manifest::read(manifest_path)?;
    let trials = TrialList::read(trials_path, &manifest)?;
    let ids: Vec<String> = trials
        .iter()
        .flat_map(|t| [t.enroll_sample.clone(), t.test_sample.clone()])
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut store = EmbeddingStore::new();
    for (bundle, hash) in bundles {
        let part = match cache {
            Some(c) => c.embeddings(bundle, hash, condition, &manifest, manifest_path, &ids)?.0,
            None => embed_samples(bundle, &manifest, manifest_path, &ids)?,
        };
        for m in part.modalities() {
            if !store.modalities().contains(&m) {
                for id in part.sample_ids(m) {
                    store.insert(part.get(m, &id)?.clone());
                }
            } else {
                return Err(Error::Config(format!("two checkpoints both provide {m} embeddings")));
            }
        }
    }
    Ok((store, trials))
}

pub fn cmd_evaluate(cfg: &RunConfig, req: &EvaluateRequest) -> Result<ReportFile> {
    let mut bundles = Vec::new();
    let mut refs = Vec::new();
    for p in req.checkpoints {
        let bundle = CheckpointBundle::load(p)?;
        let hash = file_hash(p)?;
        refs.push(CheckpointRef {
            path: p.display().to_string(),
            sha256: hash.clone(),
            config_hash: bundle.config_hash.clone(),
        });
        bundles.push((bundle, hash));
    }
    let condition = resolve_condition(req.condition, req.manifest)?;
    let cache = req.cache.map(EmbeddingCache::new);
    let (store, trials) = trial_embeddings(&bundles, req.manifest, req.trials, condition, cache.as_ref())?;

    let available: Vec<Modality> = store.modalities().into_iter().filter(|m| m.is_input()).collect();
    let fused = match req.fusion {
        FusionMode::None => {
            if req.modalities.is_some() {
                return Err(Error::Config("--modalities applies to score_average fusion".into()));
            }
            Vec::new()
        }
        FusionMode::ScoreAverage => {
            let mods = req.modalities.clone().unwrap_or_else(|| available.clone());
            if let Some(m) = mods.iter().find(|m| !available.contains(m)) {
                return Err(Error::Config(format!("no checkpoint provides {m} embeddings")));
            }
            vec![FusedSystem {
                modalities: mods,
                fusion: FusionMode::ScoreAverage,
            }]
        }
        FusionMode::Attention => {
            let fused: Vec<&CheckpointBundle> =
                bundles.iter().map(|(b, _)| b).filter(|b| b.fusion.is_some()).collect();
            match fused.as_slice() {
                [b] => vec![FusedSystem {
                    modalities: b.modalities.clone(),
                    fusion: FusionMode::Attention,
                }],
                _ => return Err(Error::Config("attention fusion needs exactly one fused checkpoint".into())),
            }
        }
    };

    let validation = match req.validation {
        Some((m, t)) => Some(trial_embeddings(&bundles, m, t, condition, cache.as_ref())?),
        None => None,
    };
    let report = evaluate_systems(
        &store,
        &trials,
        condition,
        &fused,
        validation.as_ref().map(|(s, t)| (s, t)),
    )?;

    std::fs::create_dir_all(req.out).map_err(|e| Error::io(req.out, e))?;
    let file = ReportFile {
        config_hash: cfg.hash(),
        checkpoints: refs,
        trials: req.trials.display().to_string(),
        report,
    };
    write_text_atomic(&req.out.join("report.json"), &to_json(&file))?;
    write_text_atomic(
        &req.out.join("report.txt"),
        &format!("config {}\n{}", file.config_hash, file.report.to_table()),
    )?;
    write_text_atomic(&req.out.join("scores.tsv"), &scores_tsv(&store, &trials, &file.report, &fused)?)?;
    write_text_atomic(&req.out.join("far_frr.tsv"), &far_frr_tsv(&store, &trials, &fused)?)?;
    Ok(file)
}

/// Per-system score columns for every trial.
fn system_scores(store: &EmbeddingStore, trials: &TrialList, fused: &[FusedSystem]) -> Result<Vec<(String, Vec<f64>)>> {
    let unimodal: Vec<Modality> = store.modalities().into_iter().filter(|m| m.is_input()).collect();
    let mut out = Vec::new();
    let r = score_trials(trials, store, &unimodal, FusionMode::None)?;
    for &m in &unimodal {
        out.push((m.to_string(), r.iter().map(|x| x.per_modality[&m]).collect()));
    }
    for f in fused {
        let r = score_trials(trials, store, &f.modalities, f.fusion)?;
        out.push((f.name(), r.iter().map(|x| x.fused.expect("fused scores")).collect()));
    }
    Ok(out)
}

fn scores_tsv(store: &EmbeddingStore, trials: &TrialList, report: &EvalReport, fused: &[FusedSystem]) -> Result<String> {
    let columns = system_scores(store, trials, fused)?;
    debug_assert_eq!(columns.len(), report.systems.len());
    let mut out = String::from("label\tenroll\ttest");
    for (name, _) in &columns {
        out.push('\t');
        out.push_str(name);
    }
    out.push('\n');
    for (i, t) in trials.iter().enumerate() {
        out.push_str(&format!("{}\t{}\t{}", u8::from(t.label.is_target()), t.enroll_sample, t.test_sample));
        for (_, s) in &columns {
            out.push_str(&format!("\t{}", s[i]));
        }
        out.push('\n');
    }
    Ok(out)
}

fn far_frr_tsv(store: &EmbeddingStore, trials: &TrialList, fused: &[FusedSystem]) -> Result<String> {
    let labels: Vec<bool> = trials.iter().map(|t| t.label.is_target()).collect();
    let mut out = String::from("system\tthreshold\tfar\tfrr\n");
    for (name, scores) in system_scores(store, trials, fused)? {
        let pairs: Vec<(f64, bool)> = scores.into_iter().zip(labels.iter().copied()).collect();
        for p in far_frr_curve(&pairs)? {
            out.push_str(&format!("{name}\t{}\t{}\t{}\n", p.threshold, p.far, p.frr));
        }
    }
    Ok(out)
}
