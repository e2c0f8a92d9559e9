//! Noisy-condition corruption: for each modality independently, a seeded
//! subset of exactly `round(rate · N)` samples is degraded. Audio gets
//! additive white noise at a drawn SNR; images get Gaussian blur plus a
//! zero-filled rectangular occlusion.

use ndarray::Array3;
use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::substream;
use crate::types::{Image, Modality, MultimodalSample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorruptionConfig {
    /// Fraction of samples corrupted in each modality.
    pub rate: f64,
    pub audio_snr_db: (f64, f64),
    pub image_blur_sigma: (f64, f64),
    /// Area fraction of the occluding rectangle.
    pub occlusion_fraction: f64,
    pub seed: u64,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        Self {
            rate: 0.3,
            audio_snr_db: (0.0, 10.0),
            image_blur_sigma: (1.0, 2.5),
            occlusion_fraction: 0.25,
            seed: 0,
        }
    }
}

impl CorruptionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rate) {
            return Err(Error::Config(format!("corruption.rate {} outside [0, 1]", self.rate)));
        }
        if !(self.audio_snr_db.0 <= self.audio_snr_db.1) {
            return Err(Error::Config("corruption.audio_snr_db requires low <= high".into()));
        }
        let (lo, hi) = self.image_blur_sigma;
        if !(0.0 <= lo && lo <= hi) {
            return Err(Error::Config("corruption.image_blur_sigma requires 0 <= low <= high".into()));
        }
        if !(0.0..=1.0).contains(&self.occlusion_fraction) {
            return Err(Error::Config("corruption.occlusion_fraction outside [0, 1]".into()));
        }
        Ok(())
    }
}

/// Which modalities the subsets are drawn over. Only one scope exists: each
/// input modality gets its own independent subset.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum CorruptionScope {
    #[default]
    AllModalitiesIndependent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CorruptionParams {
    Audio { snr_db: f64 },
    Image { blur_sigma: f64, occlusion: (usize, usize, usize, usize) },
}

/// One applied corruption, with the drawn parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionEvent {
    pub sample_id: String,
    pub modality: Modality,
    pub params: CorruptionParams,
}

#[derive(Debug, Clone)]
pub struct Corrupted {
    pub samples: Vec<MultimodalSample>,
    pub events: Vec<CorruptionEvent>,
}

/// Number of samples selected per modality.
pub fn corrupted_count(rate: f64, n: usize) -> usize {
    ((rate * n as f64).round() as usize).min(n)
}

pub fn corrupt_dataset(
    samples: &[MultimodalSample],
    cfg: &CorruptionConfig,
    _scope: CorruptionScope,
) -> Result<Corrupted> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::invalid("cannot corrupt an empty sample list"));
    }
    let n = samples.len();
    let k = corrupted_count(cfg.rate, n);
    // Selection runs over sample ids in sorted order so it does not depend on input order.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| samples[a].sample_id.cmp(&samples[b].sample_id));

    let mut out = samples.to_vec();
    let mut events = Vec::new();
    for modality in Modality::INPUTS {
        let mut rng = substream(cfg.seed, &["corrupt-select", modality.as_str()]);
        let mut chosen: Vec<usize> = index::sample(&mut rng, n, k).into_iter().map(|i| order[i]).collect();
        chosen.sort_unstable();
        for i in chosen {
            let sample = &mut out[i];
            if sample.corrupted.contains(&modality) {
                continue;
            }
            let mut srng = substream(cfg.seed, &["corrupt", modality.as_str(), &sample.sample_id]);
            let params = match modality {
                Modality::Audio => {
                    let snr_db = draw(&mut srng, cfg.audio_snr_db);
                    add_noise_at_snr(&mut sample.audio, snr_db, &mut srng)?;
                    CorruptionParams::Audio { snr_db }
                }
                Modality::Visual | Modality::Thermal => {
                    let img = if modality == Modality::Visual {
                        &mut sample.visual
                    } else {
                        &mut sample.thermal
                    };
                    let blur_sigma = draw(&mut srng, cfg.image_blur_sigma);
                    *img = gaussian_blur(img, blur_sigma);
                    let occlusion = occlude(img, cfg.occlusion_fraction, &mut srng);
                    CorruptionParams::Image { blur_sigma, occlusion }
                }
                Modality::Fused => unreachable!("not an input modality"),
            };
            sample.corrupted.insert(modality);
            events.push(CorruptionEvent {
                sample_id: sample.sample_id.clone(),
                modality,
                params,
            });
        }
    }
    Ok(Corrupted { samples: out, events })
}

fn draw(rng: &mut impl Rng, range: (f64, f64)) -> f64 {
    if range.0 == range.1 {
        range.0
    } else {
        rng.gen_range(range.0..=range.1)
    }
}

pub fn signal_power(x: &[f32]) -> f64 {
    x.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>() / x.len().max(1) as f64
}

/// Add white Gaussian noise scaled so that its empirical power gives exactly
/// `snr_db` relative to the signal.
pub fn add_noise_at_snr(audio: &mut [f32], snr_db: f64, rng: &mut impl Rng) -> Result<()> {
    let p_signal = signal_power(audio);
    if p_signal <= 0.0 {
        return Err(Error::invalid("cannot set an SNR against a silent signal"));
    }
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let noise: Vec<f64> = (0..audio.len()).map(|_| normal.sample(rng)).collect();
    let p_raw = noise.iter().map(|v| v * v).sum::<f64>() / noise.len() as f64;
    let target = p_signal / 10f64.powf(snr_db / 10.0);
    let scale = (target / p_raw).sqrt();
    for (a, n) in audio.iter_mut().zip(noise) {
        *a += (n * scale) as f32;
    }
    Ok(())
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

fn reflect(i: i64, n: i64) -> usize {
    let mut i = i;
    if n == 1 {
        return 0;
    }
    while i < 0 || i >= n {
        if i < 0 {
            i = -i - 1;
        }
        if i >= n {
            i = 2 * n - i - 1;
        }
    }
    i as usize
}

/// Separable Gaussian blur with reflected borders, per channel.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Image {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let (h, w, c) = img.dim();
    let mut tmp = Array3::<f32>::zeros((h, w, c));
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (j, kv) in k.iter().enumerate() {
                    let xx = reflect(x as i64 + j as i64 - r, w as i64);
                    acc += kv * img[[y, xx, ch]] as f64;
                }
                tmp[[y, x, ch]] = acc as f32;
            }
        }
    }
    let mut out = Array3::<f32>::zeros((h, w, c));
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (j, kv) in k.iter().enumerate() {
                    let yy = reflect(y as i64 + j as i64 - r, h as i64);
                    acc += kv * tmp[[yy, x, ch]] as f64;
                }
                out[[y, x, ch]] = acc as f32;
            }
        }
    }
    out
}

/// Zero a random rectangle covering about `fraction` of the image area.
/// Returns (top, left, height, width).
fn occlude(img: &mut Image, fraction: f64, rng: &mut impl Rng) -> (usize, usize, usize, usize) {
    let (h, w, _) = img.dim();
    if fraction <= 0.0 {
        return (0, 0, 0, 0);
    }
    let area = fraction * (h * w) as f64;
    let aspect: f64 = rng.gen_range(0.5..=2.0);
    let rw = ((area * aspect).sqrt().round() as usize).clamp(1, w);
    let rh = ((area / rw as f64).round() as usize).clamp(1, h);
    let top = rng.gen_range(0..=h - rh);
    let left = rng.gen_range(0..=w - rw);
    img.slice_mut(ndarray::s![top..top + rh, left..left + rw, ..]).fill(0.0);
    (top, left, rh, rw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synth::{generate_synthetic, SynthConfig};

    fn small(n_ids: usize, per: usize) -> Vec<MultimodalSample> {
        generate_synthetic(&SynthConfig {
            n_identities: n_ids,
            samples_per_identity: per,
            audio_seconds: 1.0,
            image_size: 16,
            ..SynthConfig::default()
        })
        .unwrap()
        .0
    }

    fn count(samples: &[MultimodalSample], m: Modality) -> usize {
        samples.iter().filter(|s| s.corrupted.contains(&m)).count()
    }

    #[test]
    fn zero_rate_is_identity() {
        let s = small(2, 3);
        let cfg = CorruptionConfig { rate: 0.0, ..Default::default() };
        let out = corrupt_dataset(&s, &cfg, CorruptionScope::default()).unwrap();
        assert_eq!(out.samples, s);
        assert!(out.events.is_empty());
    }

    #[test]
    fn full_rate_flags_everything() {
        let s = small(2, 3);
        let cfg = CorruptionConfig { rate: 1.0, ..Default::default() };
        let out = corrupt_dataset(&s, &cfg, CorruptionScope::default()).unwrap();
        for m in Modality::INPUTS {
            assert_eq!(count(&out.samples, m), s.len());
        }
    }

    #[test]
    fn thirty_percent_of_hundred() {
        let s = small(4, 25);
        let out = corrupt_dataset(&s, &CorruptionConfig::default(), CorruptionScope::default()).unwrap();
        for m in Modality::INPUTS {
            assert_eq!(count(&out.samples, m), 30, "{m}");
        }
        for (a, b) in s.iter().zip(out.samples.iter()) {
            if !b.corrupted.contains(&Modality::Audio) {
                assert_eq!(a.audio, b.audio);
            }
            if !b.corrupted.contains(&Modality::Visual) {
                assert_eq!(a.visual, b.visual);
            }
            if !b.corrupted.contains(&Modality::Thermal) {
                assert_eq!(a.thermal, b.thermal);
            }
        }
    }

    #[test]
    fn recorruption_is_noop() {
        let s = small(2, 4);
        let cfg = CorruptionConfig { rate: 1.0, ..Default::default() };
        let once = corrupt_dataset(&s, &cfg, CorruptionScope::default()).unwrap();
        let twice = corrupt_dataset(&once.samples, &cfg, CorruptionScope::default()).unwrap();
        assert_eq!(once.samples, twice.samples);
        assert!(twice.events.is_empty());
    }

    #[test]
    fn selection_independent_of_input_order() {
        let s = small(3, 4);
        let mut rev = s.clone();
        rev.reverse();
        let cfg = CorruptionConfig::default();
        let a = corrupt_dataset(&s, &cfg, CorruptionScope::default()).unwrap();
        let mut b = corrupt_dataset(&rev, &cfg, CorruptionScope::default()).unwrap().samples;
        b.reverse();
        assert_eq!(a.samples, b);
    }

    #[test]
    fn empty_input_rejected() {
        assert!(corrupt_dataset(&[], &CorruptionConfig::default(), CorruptionScope::default()).is_err());
    }

    #[test]
    fn blur_preserves_constant_image() {
        let img = Image::from_elem((9, 7, 3), 0.4);
        let out = gaussian_blur(&img, 1.5);
        assert!(out.iter().all(|v| (v - 0.4).abs() < 1e-6));
    }

    #[test]
    fn occlusion_area_close_to_fraction() {
        let mut img = Image::from_elem((64, 64, 1), 1.0);
        let mut rng = substream(3, &["t"]);
        let (_, _, h, w) = occlude(&mut img, 0.25, &mut rng);
        let frac = (h * w) as f64 / 4096.0;
        assert!((frac - 0.25).abs() < 0.03, "{frac}");
        assert_eq!(img.iter().filter(|v| **v == 0.0).count(), h * w);
    }
}
