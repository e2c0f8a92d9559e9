//! Deterministic synthetic trimodal corpus.
//!
//! Each identity owns an independent latent signature per modality:
//! a source-filter voice (pulse train at an identity pitch through identity
//! formant resonators), a low-frequency colour texture, and a radial thermal
//! profile. Sessions add a shared offset; samples add jitter and nuisance.

use std::f64::consts::PI;

use ndarray::Array3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::substream;
use crate::types::{
    validate_manifest, Gender, Identity, Image, Manifest, MultimodalSample, SAMPLE_RATE,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_identities: usize,
    pub samples_per_identity: usize,
    pub audio_seconds: f64,
    pub image_size: usize,
    /// Recording sessions per identity; samples cycle through them.
    pub sessions: usize,
    /// Scales all within-identity variation (jitter, nuisance, noise).
    pub variability: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_identities: 20,
            samples_per_identity: 30,
            audio_seconds: 1.5,
            image_size: 32,
            sessions: 2,
            variability: 0.7,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_identities < 2 {
            return Err(Error::Config(format!(
                "synth.n_identities must be at least 2, got {}",
                self.n_identities
            )));
        }
        if self.samples_per_identity < 2 {
            return Err(Error::Config("synth.samples_per_identity must be at least 2".into()));
        }
        if !(self.audio_seconds >= 1.0) {
            return Err(Error::Config("synth.audio_seconds must be at least 1.0".into()));
        }
        if self.image_size < 8 {
            return Err(Error::Config("synth.image_size must be at least 8".into()));
        }
        if self.sessions == 0 {
            return Err(Error::Config("synth.sessions must be positive".into()));
        }
        if !(self.variability >= 0.0 && self.variability.is_finite()) {
            return Err(Error::Config("synth.variability must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

pub fn identity_name(i: usize) -> String {
    format!("id{i:03}")
}

/// Alternating labels keep the two genders balanced to within one.
pub fn identity_gender(i: usize) -> Gender {
    if i % 2 == 0 {
        Gender::A
    } else {
        Gender::B
    }
}

/// Generate `n_identities × samples_per_identity` samples (sorted by id) and
/// their manifest with conventional relative paths.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<(Vec<MultimodalSample>, Manifest)> {
    cfg.validate()?;
    let mut samples = Vec::with_capacity(cfg.n_identities * cfg.samples_per_identity);
    for i in 0..cfg.n_identities {
        let identity = Identity::new(identity_name(i), identity_gender(i))?;
        let sig = Signature::draw(cfg.seed, &identity);
        for j in 0..cfg.samples_per_identity {
            let session = format!("sess{}", j % cfg.sessions);
            let sample_id = format!("{}_{}_{:03}", identity.id, session, j);
            samples.push(synth_sample(cfg, &identity, &sig, &session, &sample_id)?);
        }
    }
    samples.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    let manifest = validate_manifest(samples.iter().map(|s| s.descriptor()).collect(), None)?;
    Ok((samples, manifest))
}

struct VoiceSignature {
    f0: f64,
    formants: [f64; 3],
    bandwidths: [f64; 3],
    breath: f64,
    tilt: f64,
}

struct Grating {
    fx: f64,
    fy: f64,
    phase: f64,
    amp: f64,
    weights: [f64; 3],
}

struct FaceSignature {
    base: [f64; 3],
    gratings: Vec<Grating>,
}

struct ThermalSignature {
    center: (f64, f64),
    spread: f64,
    base: f64,
    peak: f64,
    ring_freq: f64,
    ring_amp: f64,
    ring_phase: f64,
    hotspot: (f64, f64),
    hot_amp: f64,
    hot_spread: f64,
    /// Low-frequency vessel pattern.
    vessels: Vec<Grating>,
}

struct Signature {
    voice: VoiceSignature,
    face: FaceSignature,
    thermal: ThermalSignature,
}

fn random_grating(rng: &mut ChaCha8Rng, freq: (f64, f64), amp: (f64, f64)) -> Grating {
    let f = rng.gen_range(freq.0..freq.1);
    let theta = rng.gen_range(0.0..PI);
    Grating {
        fx: f * theta.cos(),
        fy: f * theta.sin(),
        phase: rng.gen_range(0.0..2.0 * PI),
        amp: rng.gen_range(amp.0..amp.1),
        weights: [
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ],
    }
}

impl Signature {
    fn draw(seed: u64, identity: &Identity) -> Self {
        let mut rng = substream(seed, &["identity", &identity.id]);
        let (f0_range, formant_scale) = match identity.gender {
            Gender::A => ((95.0, 150.0), 1.0),
            Gender::B => ((170.0, 260.0), 1.15),
        };
        let voice = VoiceSignature {
            f0: rng.gen_range(f0_range.0..f0_range.1),
            formants: [
                rng.gen_range(300.0..850.0) * formant_scale,
                rng.gen_range(900.0..2200.0) * formant_scale,
                rng.gen_range(2300.0..3400.0) * formant_scale,
            ],
            bandwidths: [
                rng.gen_range(60.0..140.0),
                rng.gen_range(80.0..180.0),
                rng.gen_range(120.0..260.0),
            ],
            breath: rng.gen_range(0.02..0.15),
            tilt: rng.gen_range(0.5..0.9),
        };

        let shift = match identity.gender {
            Gender::A => -0.04,
            Gender::B => 0.04,
        };
        let face = FaceSignature {
            base: [
                rng.gen_range(0.4..0.6) + shift,
                rng.gen_range(0.35..0.55) + shift,
                rng.gen_range(0.3..0.5) + shift,
            ],
            gratings: (0..4)
                .map(|_| random_grating(&mut rng, (0.5, 2.5), (0.05, 0.12)))
                .collect(),
        };

        let thermal = ThermalSignature {
            center: (0.5 + rng.gen_range(-0.12..0.12), 0.5 + rng.gen_range(-0.12..0.12)),
            spread: rng.gen_range(0.2..0.4),
            base: rng.gen_range(0.2..0.35),
            peak: rng.gen_range(0.25..0.45),
            ring_freq: rng.gen_range(1.5..4.0),
            ring_amp: rng.gen_range(0.03..0.09),
            ring_phase: rng.gen_range(0.0..2.0 * PI),
            hotspot: (rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8)),
            hot_amp: rng.gen_range(0.05..0.15) * if identity.gender == Gender::A { 1.0 } else { -1.0 },
            hot_spread: rng.gen_range(0.08..0.15),
            vessels: (0..3)
                .map(|_| random_grating(&mut rng, (0.8, 2.5), (0.04, 0.08)))
                .collect(),
        };
        Self { voice, face, thermal }
    }
}

fn gauss(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    if std <= 0.0 {
        return 0.0;
    }
    Normal::new(0.0, std).expect("finite std").sample(rng)
}

fn synth_sample(
    cfg: &SynthConfig,
    identity: &Identity,
    sig: &Signature,
    session: &str,
    sample_id: &str,
) -> Result<MultimodalSample> {
    let v = cfg.variability;
    let mut sess_rng = substream(cfg.seed, &["session", &identity.id, session]);
    let session_offset = SessionOffset {
        audio_tilt: gauss(&mut sess_rng, 0.05 * v),
        audio_formant: gauss(&mut sess_rng, 0.02 * v),
        tint: [
            gauss(&mut sess_rng, 0.03 * v),
            gauss(&mut sess_rng, 0.03 * v),
            gauss(&mut sess_rng, 0.03 * v),
        ],
        ambient: gauss(&mut sess_rng, 0.03 * v),
    };
    let mut rng = substream(cfg.seed, &["sample", sample_id]);
    let n_audio = (cfg.audio_seconds * SAMPLE_RATE as f64).round() as usize;
    let audio = synth_voice(&sig.voice, &session_offset, v, n_audio, &mut rng);
    let visual = synth_face(&sig.face, &session_offset, v, cfg.image_size, &mut rng);
    let thermal = synth_thermal(&sig.thermal, &session_offset, v, cfg.image_size, &mut rng);
    MultimodalSample::new(sample_id, identity.clone(), session, audio, visual, thermal)
}

struct SessionOffset {
    audio_tilt: f64,
    audio_formant: f64,
    tint: [f64; 3],
    ambient: f64,
}

/// Two-pole resonator state.
struct Resonator {
    a1: f64,
    a2: f64,
    gain: f64,
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn new(freq: f64, bandwidth: f64) -> Self {
        let fs = SAMPLE_RATE as f64;
        let r = (-PI * bandwidth / fs).exp();
        let theta = 2.0 * PI * freq / fs;
        Self {
            a1: 2.0 * r * theta.cos(),
            a2: -r * r,
            gain: 1.0 - r,
            y1: 0.0,
            y2: 0.0,
        }
    }

    fn step(&mut self, x: f64) -> f64 {
        let y = self.gain * x + self.a1 * self.y1 + self.a2 * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

fn synth_voice(
    sig: &VoiceSignature,
    sess: &SessionOffset,
    v: f64,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<f32> {
    let fs = SAMPLE_RATE as f64;
    let f0 = sig.f0 * (1.0 + gauss(rng, 0.03 * v)).max(0.5);
    let formant_jitter = 1.0 + sess.audio_formant;
    let mut resonators: Vec<Resonator> = sig
        .formants
        .iter()
        .zip(sig.bandwidths.iter())
        .map(|(&f, &b)| Resonator::new(f * formant_jitter * (1.0 + gauss(rng, 0.03 * v)), b))
        .collect();
    let tilt = (sig.tilt + sess.audio_tilt).clamp(0.2, 0.97);
    let contour_rate = rng.gen_range(1.0..3.0);
    let contour_phase = rng.gen_range(0.0..2.0 * PI);
    let contour_depth = 0.06 * v.min(2.0);

    // Voiced/pause segmentation as an amplitude gate with 10 ms ramps.
    let mut gate = vec![0.0f64; n];
    let mut t = (rng.gen_range(0.0..0.1) * fs) as usize;
    while t < n {
        let voiced = (rng.gen_range(0.08..0.25) * fs) as usize;
        let pause = (rng.gen_range(0.03..0.12) * fs) as usize;
        let ramp = (0.01 * fs) as usize;
        for k in 0..voiced.min(n - t) {
            let up = ((k + 1) as f64 / ramp as f64).min(1.0);
            let down = ((voiced - k) as f64 / ramp as f64).min(1.0);
            gate[t + k] = up.min(down);
        }
        t += voiced + pause;
    }

    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut phase = rng.gen_range(0.0..1.0);
    let mut lp = 0.0;
    let mut voiced_signal = Vec::with_capacity(n);
    for (i, g) in gate.iter().enumerate() {
        let time = i as f64 / fs;
        let inst_f0 = f0 * (1.0 + contour_depth * (2.0 * PI * contour_rate * time + contour_phase).sin());
        phase += inst_f0 / fs;
        let mut src = 0.0;
        if phase >= 1.0 {
            phase -= 1.0;
            src = 1.0;
        }
        src += sig.breath * normal.sample(rng);
        lp = src + tilt * lp;
        let mut y = lp * g;
        for r in resonators.iter_mut() {
            y = r.step(y) * 8.0;
        }
        voiced_signal.push(y);
    }

    let rms = (voiced_signal.iter().map(|x| x * x).sum::<f64>() / n as f64).sqrt().max(1e-12);
    let level = rng.gen_range(0.05..0.2);
    let snr_db = rng.gen_range(15.0..25.0) - 5.0 * (v - 1.0).max(0.0);
    let noise_std = level * 10f64.powf(-snr_db / 20.0);
    voiced_signal
        .iter()
        .map(|x| (x / rms * level + noise_std * normal.sample(rng)) as f32)
        .collect()
}

fn synth_face(
    sig: &FaceSignature,
    sess: &SessionOffset,
    v: f64,
    size: usize,
    rng: &mut ChaCha8Rng,
) -> Image {
    let du = gauss(rng, 0.03 * v);
    let dv = gauss(rng, 0.03 * v);
    let contrast = 1.0 + gauss(rng, 0.1 * v);
    let brightness = gauss(rng, 0.04 * v);
    let nuisance = random_grating(rng, (0.6, 3.0), (0.0, 0.08 * v.max(1e-9)));
    let pixel_noise = 0.03 * v;
    let mut img = Array3::<f32>::zeros((size, size, 3));
    let s = size as f64;
    for y in 0..size {
        for x in 0..size {
            let u = (x as f64 + 0.5) / s;
            let w = (y as f64 + 0.5) / s;
            let mut px = [0.0f64; 3];
            for g in &sig.gratings {
                let val = g.amp * (2.0 * PI * (g.fx * (u + du) + g.fy * (w + dv)) + g.phase).cos();
                for c in 0..3 {
                    px[c] += val * g.weights[c];
                }
            }
            let nval = nuisance.amp * (2.0 * PI * (nuisance.fx * u + nuisance.fy * w) + nuisance.phase).cos();
            for c in 0..3 {
                let value = sig.base[c] + sess.tint[c] + brightness + contrast * px[c]
                    + nval * nuisance.weights[c]
                    + gauss(rng, pixel_noise);
                img[[y, x, c]] = value.clamp(0.0, 1.0) as f32;
            }
        }
    }
    img
}

fn synth_thermal(
    sig: &ThermalSignature,
    sess: &SessionOffset,
    v: f64,
    size: usize,
    rng: &mut ChaCha8Rng,
) -> Image {
    let cx = sig.center.0 + gauss(rng, 0.025 * v);
    let cy = sig.center.1 + gauss(rng, 0.025 * v);
    let offset = sess.ambient + gauss(rng, 0.04 * v);
    let gain = 1.0 + gauss(rng, 0.08 * v);
    let blob = (rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9));
    let blob_amp = rng.gen_range(-0.05..0.05) * v;
    let pixel_noise = 0.03 * v;
    let mut img = Array3::<f32>::zeros((size, size, 1));
    let s = size as f64;
    for y in 0..size {
        for x in 0..size {
            let u = (x as f64 + 0.5) / s;
            let w = (y as f64 + 0.5) / s;
            let r2 = (u - cx).powi(2) + (w - cy).powi(2);
            let r = r2.sqrt();
            let h2 = (u - sig.hotspot.0).powi(2) + (w - sig.hotspot.1).powi(2);
            let b2 = (u - blob.0).powi(2) + (w - blob.1).powi(2);
            let profile = sig.peak * (-r2 / (2.0 * sig.spread * sig.spread)).exp()
                + sig.ring_amp * (2.0 * PI * sig.ring_freq * r + sig.ring_phase).cos()
                + sig.hot_amp * (-h2 / (2.0 * sig.hot_spread * sig.hot_spread)).exp()
                + sig
                    .vessels
                    .iter()
                    .map(|g| g.amp * (2.0 * PI * (g.fx * (u - cx) + g.fy * (w - cy)) + g.phase).cos())
                    .sum::<f64>();
            let value = sig.base
                + offset
                + gain * profile
                + blob_amp * (-b2 / 0.02).exp()
                + gauss(rng, pixel_noise);
            img[[y, x, 0]] = value.clamp(0.0, 1.0) as f32;
        }
    }
    img
}
