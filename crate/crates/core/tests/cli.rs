//! The `trimodal` command-line tool end to end on a tiny synthetic corpus.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use trimodal_verify::config::RunConfig;
use trimodal_verify::training::CheckpointBundle;

fn trimodal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trimodal"))
        .args(args)
        .output()
        .expect("the binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(args: &[&str]) -> String {
    let o = trimodal(args);
    assert_eq!(o.status.code(), Some(0), "{args:?}: {}", stderr(&o));
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Ten identities (6 train / 2 valid / 2 test), four samples each, desk
/// encoders and two short epochs.
fn tiny_config(dir: &Path) -> PathBuf {
    let cfg = RunConfig::desk(3)
        .with_overrides(&[
            "synth.n_identities=10".into(),
            "synth.samples_per_identity=4".into(),
            "synth.audio_seconds=1.0".into(),
            "training.batch_identities=3".into(),
            "training.samples_per_identity=2".into(),
            "training.epochs=2".into(),
            "training.steps_per_epoch=2".into(),
            "training.validation.n_target=12".into(),
            "training.validation.n_nontarget=12".into(),
            "protocol.n_target=10".into(),
            "protocol.n_nontarget=10".into(),
        ])
        .unwrap();
    let path = dir.join("tiny.toml");
    std::fs::write(&path, cfg.to_toml()).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_exits_zero() {
    let out = ok(&["--help"]);
    for sub in ["synth-data", "make-trials", "train", "embed", "evaluate"] {
        assert!(out.contains(sub), "{sub} missing from help:\n{out}");
    }
    assert!(ok(&["evaluate", "--help"]).contains("--checkpoint"));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(trimodal(&[]).status.code(), Some(1));
    assert_eq!(trimodal(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(trimodal(&["make-trials", "--config", "x.toml"]).status.code(), Some(1));
}

#[test]
fn invalid_config_exits_one_and_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    let out = s(&dir.path().join("data")).to_string();

    std::fs::write(&cfg, "seed = 1\n[training]\nepochz = 3\n").unwrap();
    let o = trimodal(&["synth-data", "--config", s(&cfg), "--out", &out]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("epochz"), "{}", stderr(&o));

    std::fs::write(&cfg, "[synth]\nn_identities = 4\n").unwrap();
    let o = trimodal(&["synth-data", "--config", s(&cfg), "--out", &out]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("seed"), "{}", stderr(&o));

    std::fs::write(&cfg, "seed = 1\n").unwrap();
    let o = trimodal(&["synth-data", "--config", s(&cfg), "--set", "synth.colour=3", "--out", &out]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("colour"), "{}", stderr(&o));

    let o = trimodal(&["synth-data", "--config", s(&dir.path().join("missing.toml")), "--out", &out]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!Path::new(&out).exists());
}

#[test]
fn runtime_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let o = trimodal(&[
        "make-trials",
        "--config",
        s(&cfg),
        "--manifest",
        s(&dir.path().join("nope.tsv")),
        "--out",
        s(&dir.path().join("t.tsv")),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn full_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = tiny_config(d);
    let data = d.join("data");
    ok(&["synth-data", "--config", s(&cfg), "--out", s(&data)]);
    for f in ["all.tsv", "train.tsv", "valid.tsv", "test.tsv", "dataset.json", "config.toml"] {
        assert!(data.join(f).is_file(), "{f} missing");
    }
    let (train_tsv, valid_tsv, test_tsv) = (data.join("train.tsv"), data.join("valid.tsv"), data.join("test.tsv"));
    let test_trials = d.join("test_trials.tsv");
    let valid_trials = d.join("valid_trials.tsv");
    ok(&["make-trials", "--config", s(&cfg), "--manifest", s(&test_tsv), "--out", s(&test_trials)]);
    ok(&["make-trials", "--config", s(&cfg), "--manifest", s(&valid_tsv), "--out", s(&valid_trials)]);
    assert_eq!(std::fs::read_to_string(&test_trials).unwrap().lines().count(), 20);

    let train = |modalities: &str, out: &Path, extra: &[&str]| -> Output {
        let set = format!("training.modalities={modalities}");
        let mut args = vec![
            "train",
            "--config",
            s(&cfg),
            "--set",
            &set,
            "--train",
            s(&train_tsv),
            "--valid",
            s(&valid_tsv),
            "--out",
            s(out),
        ];
        args.extend_from_slice(extra);
        trimodal(&args)
    };
    let thermal = d.join("thermal.ckpt");
    let visual = d.join("visual.ckpt");
    for (m, p) in [("[\"thermal\"]", &thermal), ("[\"visual\"]", &visual)] {
        let o = train(m, p, &[]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        assert!(p.with_extension("metrics.tsv").is_file());
    }
    let bundle = CheckpointBundle::load(&thermal).unwrap();
    assert_eq!(bundle.config_hash, RunConfig::read(&cfg, &["training.modalities=[\"thermal\"]".into()]).unwrap().hash());

    // Warm start from a checkpoint whose modality the fused system lacks.
    let fused = d.join("fused.ckpt");
    let o = train(
        "[\"audio\",\"thermal\"]",
        &fused,
        &["--set", "training.fusion_mode=\"attention\"", "--warm-start", s(&visual)],
    );
    assert_ne!(o.status.code(), Some(0));
    assert!(!fused.exists());
    // Warm start without attention fusion is a configuration error.
    let o = train("[\"thermal\"]", &fused, &["--warm-start", s(&thermal)]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));

    // Embedding cache: the second pass computes nothing.
    let cache = d.join("cache");
    let embed = |c: &Path| {
        ok(&[
            "embed",
            "--config",
            s(&cfg),
            "--checkpoint",
            s(c),
            "--manifest",
            s(&test_tsv),
            "--cache",
            s(&cache),
        ])
    };
    assert!(embed(&thermal).contains("8 samples: 8 computed"));
    assert!(embed(&thermal).contains("0 computed, 8 from cache"));

    let evaluate = |out: &Path, extra: &[&str]| {
        let mut args = vec![
            "evaluate",
            "--config",
            s(&cfg),
            "--checkpoint",
            s(&thermal),
            "--manifest",
            s(&test_tsv),
            "--trials",
            s(&test_trials),
            "--out",
            s(out),
        ];
        args.extend_from_slice(extra);
        ok(&args)
    };
    let read = |p: PathBuf| std::fs::read(p).unwrap();

    // A unimodal report has no fused system or score column.
    let uni = d.join("uni");
    evaluate(&uni, &[]);
    let report: serde_json::Value = serde_json::from_slice(&read(uni.join("report.json"))).unwrap();
    let systems = report["report"]["systems"].as_array().unwrap();
    assert_eq!(systems.len(), 1);
    assert_eq!(systems[0]["name"], "thermal");
    let header = String::from_utf8(read(uni.join("scores.tsv"))).unwrap();
    assert_eq!(header.lines().next().unwrap(), "label\tenroll\ttest\tthermal");
    assert!(String::from_utf8(read(uni.join("report.txt"))).unwrap().starts_with("config "));

    // Score averaging over two checkpoints, with validation thresholds,
    // rerun with and without the cache: identical files.
    let args = [
        "--checkpoint",
        s(&visual),
        "--fusion",
        "score_average",
        "--valid-manifest",
        s(&valid_tsv),
        "--valid-trials",
        s(&valid_trials),
    ];
    let (a, b) = (d.join("fused_a"), d.join("fused_b"));
    evaluate(&a, &args);
    let cache_flag = ["--cache", s(&cache)];
    evaluate(&b, &[&args[..], &cache_flag[..]].concat());
    for f in ["report.json", "report.txt", "scores.tsv", "far_frr.tsv"] {
        assert_eq!(read(a.join(f)), read(b.join(f)), "{f} differs between runs");
    }
    let report: serde_json::Value = serde_json::from_slice(&read(a.join("report.json"))).unwrap();
    let names: Vec<&str> = report["report"]["systems"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["name"].as_str().unwrap())
        .collect();
    assert_eq!(names, ["visual", "thermal", "visual+thermal:score_average"]);
    assert_eq!(report["report"]["systems"][0]["threshold_source"], "validation");
}

#[test]
fn interrupted_training_leaves_the_last_checkpoint_intact() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = tiny_config(d);
    let data = d.join("data");
    ok(&["synth-data", "--config", s(&cfg), "--out", s(&data)]);
    let ckpt = d.join("long.ckpt");
    let mut child = Command::new(env!("CARGO_BIN_EXE_trimodal"))
        .args([
            "train",
            "--config",
            s(&cfg),
            "--set",
            "training.epochs=500",
            "--set",
            "training.modalities=[\"thermal\"]",
            "--train",
            s(&data.join("train.tsv")),
            "--valid",
            s(&data.join("valid.tsv")),
            "--out",
            s(&ckpt),
        ])
        .spawn()
        .unwrap();
    let metrics = ckpt.with_extension("metrics.tsv");
    let start = Instant::now();
    while !std::fs::read_to_string(&metrics).is_ok_and(|t| t.contains("\n2\tvalid\teer")) {
        assert!(start.elapsed() < Duration::from_secs(300), "training made no progress");
        assert!(child.try_wait().unwrap().is_none(), "training exited early");
        std::thread::sleep(Duration::from_millis(50));
    }
    child.kill().unwrap();
    child.wait().unwrap();

    let bundle = CheckpointBundle::load(&ckpt).unwrap();
    assert!(bundle.history.len() >= 3);
}

#[test]
fn shipped_desk_config_matches_the_library_preset() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.toml");
    assert_eq!(RunConfig::read(&path, &[]).unwrap(), RunConfig::desk(0));
}
