//! Train audio, visual and thermal encoders on the synthetic corpus and
//! compare unimodal, bimodal and trimodal score averaging on the test split.
//!
//! ```text
//! cargo run --release --example score_fusion -- [clean|noisy] [section.key=value ...]
//! ```

use trimodal_verify::config::RunConfig;
use trimodal_verify::evaluation::Condition;
use trimodal_verify::pipeline::{evaluate_score_fusion, synthetic_corpus, train_unimodal_systems};
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

    let start = std::time::Instant::now();
    let corpus = synthetic_corpus(&cfg, condition)?;
    let bundles = train_unimodal_systems(&corpus, &cfg, &Modality::INPUTS)?;
    for (m, b) in &bundles {
        println!(
            "{m:>8}: best epoch {:>2}, validation EER {:.2}%",
            b.best_epoch,
            100.0 * b.best_valid_eer().unwrap_or(f64::NAN)
        );
    }
    let report = evaluate_score_fusion(&bundles, &corpus, &cfg.protocol, &cfg.training.validation)?;
    println!("\n{condition} test split, {} trials:", report.n_target + report.n_nontarget);
    print!("{}", report.to_table());
    println!("({:.1}s)", start.elapsed().as_secs_f64());
    Ok(())
}
