//! Train the three unimodal encoders, then warm-start an attention-fused
//! system from them and fine-tune it end to end. Prints the per-modality
//! and fused validation EER for each fused epoch and the fused test EER
//! next to the unimodal ones.
//!
//! ```text
//! cargo run --release --example attention_fusion -- [clean|noisy] [section.key=value ...]
//! ```

use trimodal_verify::config::RunConfig;
use trimodal_verify::evaluation::{generate_trials, Condition, FusionMode};
use trimodal_verify::pipeline::{embed_all, evaluate_systems, synthetic_corpus, train_unimodal_systems, FusedSystem};
use trimodal_verify::training::{train_fused, TrainConfig, TrainFusion, TrainHooks};
use trimodal_verify::types::Modality;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::init();
    let mut args: Vec<String> = std::env::args().skip(1).collect();
    let condition: Condition = if args.first().is_some_and(|a| !a.contains('=')) {
        args.remove(0).parse()?
    } else {
        Condition::Clean
    };
    let cfg = RunConfig::desk(0).with_overrides(&args)?;
    let corpus = synthetic_corpus(&cfg, condition)?;

    let unimodal = train_unimodal_systems(&corpus, &cfg, &Modality::INPUTS)?;
    let best_unimodal = unimodal
        .values()
        .filter_map(|b| b.best_valid_eer())
        .fold(f64::INFINITY, f64::min);

    let fused_cfg = TrainConfig {
        modalities: Modality::INPUTS.to_vec(),
        fusion_mode: TrainFusion::Attention,
        epochs: cfg.training.epochs / 2,
        learning_rate: cfg.training.learning_rate / 4.0,
        ..cfg.training.clone()
    };
    let warm: Vec<_> = unimodal.into_values().collect();
    let fused = train_fused(&corpus.train, &corpus.valid, &fused_cfg, &cfg.frontend, warm, TrainHooks::default())?;
    for h in &fused.history {
        let per: Vec<String> = h
            .valid_eer_per_modality
            .iter()
            .map(|(m, e)| format!("{m} {:.2}%", 100.0 * e))
            .collect();
        println!("epoch {:>2}  fused {:.2}%  [{}]", h.epoch, 100.0 * h.valid_eer, per.join(", "));
    }
    println!(
        "fused validation EER {:.2}% (epoch {}), best unimodal {:.2}%",
        100.0 * fused.best_valid_eer().unwrap_or(f64::NAN),
        fused.best_epoch,
        100.0 * best_unimodal
    );

    // Test-set comparison: the fused bundle's own encoders give the unimodal
    // rows; its attention weights give the fused row.
    let trials = generate_trials(&corpus.splits.test, &cfg.protocol)?;
    let store = embed_all([&fused], &corpus.test)?;
    let attention = FusedSystem {
        modalities: fused.modalities.clone(),
        fusion: FusionMode::Attention,
    };
    let report = evaluate_systems(&store, &trials, condition, &[attention], None)?;
    print!("{}", report.to_table());
    Ok(())
}
