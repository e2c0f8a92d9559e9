//! Generate the synthetic trimodal corpus, split it by identity, corrupt
//! 30% of each modality and write everything to disk as WAV/PNM files with
//! tab-separated manifests.
//!
//! ```text
//! cargo run --release --example synth_data -- [out_dir] [seed]
//! ```

use std::collections::BTreeMap;
use std::path::PathBuf;

use trimodal_verify::config::RunConfig;
use trimodal_verify::dataset::{
    corrupt_dataset, generate_synthetic, select, split_dataset, write_samples, CorruptionParams, CorruptionScope,
};
use trimodal_verify::types::{Gender, Modality, SAMPLE_RATE};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let out = PathBuf::from(args.first().map_or("synth_corpus", String::as_str));
    let seed: u64 = args.get(1).map_or(Ok(0), |s| s.parse())?;
    let cfg = RunConfig::desk(seed);

    let (samples, manifest) = generate_synthetic(&cfg.synth)?;
    let identities = manifest.identities();
    let group_a = identities.iter().filter(|i| i.gender == Gender::A).count();
    println!(
        "{} samples of {} identities ({group_a} in group A), {:.1}s audio at {} Hz, {}px images",
        samples.len(),
        identities.len(),
        cfg.synth.audio_seconds,
        SAMPLE_RATE,
        cfg.synth.image_size
    );

    let splits = split_dataset(&manifest, cfg.split.fractions(), seed)?;
    for (name, part) in [("train", &splits.train), ("valid", &splits.valid), ("test", &splits.test)] {
        println!("  {name:<5} {:>3} identities {:>4} samples", part.identities().len(), part.len());
    }

    let test = select(&samples, &splits.test);
    let corrupted = corrupt_dataset(&test, &cfg.corruption, CorruptionScope::AllModalitiesIndependent)?;
    let mut per_modality: BTreeMap<Modality, usize> = BTreeMap::new();
    for e in &corrupted.events {
        *per_modality.entry(e.modality).or_default() += 1;
    }
    println!("corrupting the test split at rate {}:", cfg.corruption.rate);
    for (m, n) in &per_modality {
        println!("  {:<7} {n} of {} samples", m.as_str(), test.len());
    }
    if let Some(e) = corrupted.events.first() {
        match &e.params {
            CorruptionParams::Audio { snr_db } => println!("  e.g. {}: white noise at {snr_db:.1} dB SNR", e.sample_id),
            CorruptionParams::Image { blur_sigma, occlusion } => println!(
                "  e.g. {} {}: blur sigma {blur_sigma:.2}, occluded box {occlusion:?}",
                e.sample_id, e.modality
            ),
        }
    }

    let clean = write_samples(&out.join("clean"), &samples)?;
    let noisy = write_samples(&out.join("noisy_test"), &corrupted.samples)?;
    std::fs::write(out.join("clean").join("all.tsv"), clean.to_tsv())?;
    std::fs::write(out.join("noisy_test").join("all.tsv"), noisy.to_tsv())?;
    println!("wrote {} and {} samples under {}", clean.len(), noisy.len(), out.display());
    Ok(())
}
