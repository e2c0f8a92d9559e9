//! Build easy and hard verification trial lists from a manifest and show how
//! their target / nontarget and same / opposite group pairs are distributed.
//!
//! ```text
//! cargo run --release --example trial_protocols -- [n_target] [n_nontarget]
//! ```

use std::collections::BTreeMap;

use trimodal_verify::config::RunConfig;
use trimodal_verify::dataset::generate_synthetic;
use trimodal_verify::evaluation::{generate_trials, TrialMode, TrialProtocol};
use trimodal_verify::types::{GenderPair, TrialLabel};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let n_target: usize = args.first().map_or(Ok(200), |s| s.parse())?;
    let n_nontarget: usize = args.get(1).map_or(Ok(200), |s| s.parse())?;

    let cfg = RunConfig::desk(0);
    let (_, manifest) = generate_synthetic(&cfg.synth)?;

    for mode in [TrialMode::Easy, TrialMode::Hard] {
        let protocol = TrialProtocol {
            mode,
            n_target,
            n_nontarget,
            seed: 7,
        };
        let trials = generate_trials(&manifest, &protocol)?;
        let mut counts: BTreeMap<(&str, GenderPair), usize> = BTreeMap::new();
        for t in trials.iter() {
            let label = if t.label == TrialLabel::Target { "target" } else { "nontarget" };
            *counts.entry((label, t.gender_pair)).or_default() += 1;
        }
        println!("{mode:?}: {} trials", trials.len());
        for ((label, pair), n) in &counts {
            println!("  {label:<9} {pair:?} group pair: {n}");
        }
        print!("  first lines:\n{}", indent(&trials.to_tsv(), 3));
    }

    // Asking for more trials than the manifest can supply is an error.
    let too_many = TrialProtocol {
        mode: TrialMode::Hard,
        n_target: 1_000_000,
        ..TrialProtocol::default()
    };
    match generate_trials(&manifest, &too_many) {
        Ok(_) => println!("unexpectedly generated a million target trials"),
        Err(e) => println!("too many trials: {e}"),
    }
    Ok(())
}

fn indent(text: &str, lines: usize) -> String {
    text.lines().take(lines).map(|l| format!("    {l}\n")).collect()
}
