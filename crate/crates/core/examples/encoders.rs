//! Extract frontend features for one synthetic sample and push them through
//! untrained encoders: the halved image ResNet-34 for visual and thermal,
//! the audio ResNet-34 with self-attentive pooling, and their desk-scale
//! variants. Every encoder emits a unit-norm 512-dimensional embedding.
//!
//! ```text
//! cargo run --release --example encoders
//! ```

use candle_core::DType;
use trimodal_verify::config::RunConfig;
use trimodal_verify::dataset::{generate_synthetic, SynthConfig};
use trimodal_verify::encoders::{count_parameters, encode, Encoder, EncoderSpec};
use trimodal_verify::frontend::{FeatureMode, Frontend, FrontendConfig};
use trimodal_verify::types::{l2_norm, Modality};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let synth = SynthConfig {
        n_identities: 2,
        samples_per_identity: 2,
        ..RunConfig::desk(0).synth
    };
    let (samples, _) = generate_synthetic(&synth)?;
    let sample = &samples[0];

    for (label, frontend_cfg, standard) in [
        ("standard", FrontendConfig::default(), true),
        ("desk", FrontendConfig::desk(), false),
    ] {
        let frontend = Frontend::new(&frontend_cfg)?;
        println!("{label} encoders:");
        for m in Modality::INPUTS {
            let feats = frontend.extract(sample, m, FeatureMode::Eval)?;
            let n_mels = frontend_cfg.audio.n_mels;
            let spec = if standard {
                EncoderSpec::standard(m, n_mels)?
            } else {
                EncoderSpec::desk(m, n_mels)?
            };
            let params = count_parameters(&spec);
            let encoder = Encoder::new(spec, 0, DType::F32)?;
            let start = std::time::Instant::now();
            let e = encode(&encoder, &feats, m, &sample.sample_id)?;
            println!(
                "  {:<7} input {:<13}  {params:>9} parameters  -> {} dims, norm {:.6} ({:.2}s)",
                m.as_str(),
                format!("{:?}", feats.shape),
                e.dim(),
                l2_norm(&e.vector),
                start.elapsed().as_secs_f64()
            );
        }
    }
    Ok(())
}
