use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::FeatureMode;
use crate::error::{Error, Result};
use crate::rng::substream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AudioFeatureConfig {
    pub sample_rate: u32,
    pub n_mels: usize,
    pub window_ms: f64,
    pub hop_ms: f64,
    /// Random crop length used in train mode.
    pub crop_seconds: f64,
    /// Added to mel energies before the logarithm.
    pub log_floor: f64,
    pub f_min: f64,
    pub f_max: f64,
    pub preemphasis: f64,
}

impl Default for AudioFeatureConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            n_mels: 40,
            window_ms: 25.0,
            hop_ms: 10.0,
            crop_seconds: 2.0,
            log_floor: 1e-6,
            f_min: 20.0,
            f_max: 7600.0,
            preemphasis: 0.97,
        }
    }
}

impl AudioFeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_mels == 0 {
            return Err(Error::Config("frontend.n_mels must be at least 1".into()));
        }
        if !(self.window_ms > self.hop_ms && self.hop_ms > 0.0) {
            return Err(Error::Config("frontend requires window_ms > hop_ms > 0".into()));
        }
        if !(self.log_floor > 0.0) {
            return Err(Error::Config("frontend.log_floor must be positive".into()));
        }
        if !(self.crop_seconds > 0.0) {
            return Err(Error::Config("frontend.crop_seconds must be positive".into()));
        }
        if !(0.0 <= self.f_min && self.f_min < self.f_max && self.f_max <= self.sample_rate as f64 / 2.0) {
            return Err(Error::Config("frontend requires 0 <= f_min < f_max <= sample_rate / 2".into()));
        }
        Ok(())
    }

    pub fn window_len(&self) -> usize {
        (self.window_ms * self.sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn hop_len(&self) -> usize {
        (self.hop_ms * self.sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn crop_len(&self) -> usize {
        (self.crop_seconds * self.sample_rate as f64).round() as usize
    }

    /// Frames produced for `len` samples.
    pub fn n_frames(&self, len: usize) -> usize {
        let w = self.window_len();
        if len < w {
            0
        } else {
            (len - w) / self.hop_len() + 1
        }
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters over FFT bins, `n_mels × (n_fft/2 + 1)`.
pub fn mel_filterbank(n_mels: usize, n_fft: usize, sample_rate: u32, f_min: f64, f_max: f64) -> Array2<f64> {
    let n_bins = n_fft / 2 + 1;
    let (m_lo, m_hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let mut fb = Array2::zeros((n_mels, n_bins));
    for m in 0..n_mels {
        let (lo, c, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..n_bins {
            let f = k as f64 * sample_rate as f64 / n_fft as f64;
            let w = if f > lo && f <= c {
                (f - lo) / (c - lo)
            } else if f > c && f < hi {
                (hi - f) / (hi - c)
            } else {
                0.0
            };
            fb[[m, k]] = w;
        }
    }
    fb
}

/// Reusable log-mel extractor (FFT plan, window and filterbank cached).
pub struct AudioFrontend {
    cfg: AudioFeatureConfig,
    n_fft: usize,
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    filters: Array2<f64>,
}

impl AudioFrontend {
    pub fn new(cfg: &AudioFeatureConfig) -> Result<Self> {
        cfg.validate()?;
        let win = cfg.window_len();
        let n_fft = win.next_power_of_two();
        let fft = FftPlanner::new().plan_fft_forward(n_fft);
        let window = (0..win)
            .map(|i| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / (win - 1) as f64).cos())
            .collect();
        let filters = mel_filterbank(cfg.n_mels, n_fft, cfg.sample_rate, cfg.f_min, cfg.f_max);
        Ok(Self {
            cfg: cfg.clone(),
            n_fft,
            fft,
            window,
            filters,
        })
    }

    pub fn config(&self) -> &AudioFeatureConfig {
        &self.cfg
    }

    /// Log-mel energies `[T × n_mels]` without mean normalization.
    pub fn log_mel(&self, waveform: &[f32]) -> Result<Array2<f64>> {
        let win = self.cfg.window_len();
        let hop = self.cfg.hop_len();
        if waveform.len() < win {
            return Err(Error::invalid(format!(
                "waveform of {} samples is shorter than one {win}-sample window",
                waveform.len()
            )));
        }
        let mut x: Vec<f64> = waveform.iter().map(|&v| v as f64).collect();
        if self.cfg.preemphasis != 0.0 {
            for i in (1..x.len()).rev() {
                x[i] -= self.cfg.preemphasis * x[i - 1];
            }
        }
        let t = self.cfg.n_frames(x.len());
        let n_bins = self.n_fft / 2 + 1;
        let mut out = Array2::zeros((t, self.cfg.n_mels));
        let mut buf = vec![Complex::new(0.0, 0.0); self.n_fft];
        let mut power = vec![0.0; n_bins];
        for f in 0..t {
            let start = f * hop;
            for (i, b) in buf.iter_mut().enumerate() {
                *b = if i < win {
                    Complex::new(x[start + i] * self.window[i], 0.0)
                } else {
                    Complex::new(0.0, 0.0)
                };
            }
            self.fft.process(&mut buf);
            for (p, b) in power.iter_mut().zip(buf.iter()) {
                *p = b.norm_sqr();
            }
            for m in 0..self.cfg.n_mels {
                let e: f64 = self
                    .filters
                    .row(m)
                    .iter()
                    .zip(power.iter())
                    .map(|(w, p)| w * p)
                    .sum();
                out[[f, m]] = (e + self.cfg.log_floor).ln();
            }
        }
        if out.iter().any(|v: &f64| !v.is_finite()) {
            return Err(Error::NonFinite("log-mel features".into()));
        }
        Ok(out)
    }

    /// Mean-normalized log-mel features `[T × n_mels]`.
    ///
    /// Eval mode uses the whole utterance. Train mode takes a seeded random
    /// contiguous crop of `crop_seconds`; shorter waveforms are wrapped.
    pub fn features(&self, waveform: &[f32], mode: FeatureMode) -> Result<Array2<f32>> {
        let cropped;
        let input = match mode {
            FeatureMode::Eval => waveform,
            FeatureMode::Train { seed } => {
                let len = self.cfg.crop_len();
                if waveform.is_empty() {
                    return Err(Error::invalid("empty waveform"));
                }
                cropped = if waveform.len() >= len {
                    let mut rng = substream(seed, &["audio-crop"]);
                    let start = rng.gen_range(0..=waveform.len() - len);
                    waveform[start..start + len].to_vec()
                } else {
                    waveform.iter().cycle().take(len).copied().collect()
                };
                &cropped[..]
            }
        };
        let mut feats = self.log_mel(input)?;
        let mean = feats.mean_axis(ndarray::Axis(0)).expect("at least one frame");
        feats -= &mean;
        Ok(feats.mapv(|v| v as f32))
    }
}

/// One-shot convenience wrapper around [`AudioFrontend::features`].
pub fn audio_features(waveform: &[f32], cfg: &AudioFeatureConfig, mode: FeatureMode) -> Result<Array2<f32>> {
    AudioFrontend::new(cfg)?.features(waveform, mode)
}
