//! Train one modality's encoder on a synthetic corpus and report the
//! validation EER per epoch.
//!
//! ```text
//! cargo run --release --example train_unimodal -- [audio|visual|thermal] [epochs] [seed]
//! ```

use trimodal_verify::config::RunConfig;
use trimodal_verify::evaluation::Condition;
use trimodal_verify::pipeline::synthetic_corpus;
use trimodal_verify::training::{train_unimodal, TrainHooks};
use trimodal_verify::types::Modality;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let modality: Modality = args.first().map_or("audio", String::as_str).parse()?;
    let epochs: usize = args.get(1).map_or(Ok(20), |s| s.parse())?;
    let seed: u64 = args.get(2).map_or(Ok(0), |s| s.parse())?;

    let mut cfg = RunConfig::desk(seed);
    cfg.training.modalities = vec![modality];
    cfg.training.epochs = epochs;

    let corpus = synthetic_corpus(&cfg, Condition::Clean)?;
    let (train, valid) = (&corpus.train, &corpus.valid);
    println!(
        "{modality}: {} training samples ({} identities), {} validation samples",
        train.len(),
        corpus.splits.train.identities().len(),
        valid.len()
    );

    let start = std::time::Instant::now();
    let bundle = train_unimodal(train, valid, &cfg.training, &cfg.frontend, TrainHooks::default())?;
    for h in &bundle.history {
        let loss = h.train_loss.map_or("-".to_string(), |l| format!("{l:.4}"));
        println!("epoch {:>2}  loss {loss:>7}  valid EER {:.2}%", h.epoch, 100.0 * h.valid_eer);
    }
    println!(
        "best epoch {} with validation EER {:.2}% ({:.1}s)",
        bundle.best_epoch,
        100.0 * bundle.best_valid_eer().unwrap_or(f64::NAN),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
