use ndarray::Array3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::FeatureMode;
use crate::error::{Error, Result};
use crate::rng::substream;
use crate::types::Image;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageFeatureConfig {
    /// Output side length; must be divisible by the encoder's total stride (32).
    pub target_size: usize,
    pub channels: usize,
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
    pub random_crop: bool,
    pub horizontal_flip: bool,
}

impl ImageFeatureConfig {
    pub fn visual() -> Self {
        Self {
            target_size: 128,
            channels: 3,
            mean: vec![0.5; 3],
            std: vec![0.25; 3],
            random_crop: true,
            horizontal_flip: true,
        }
    }

    /// Thermal faces are not mirrored by default: their left/right asymmetry
    /// carries identity information.
    pub fn thermal() -> Self {
        Self {
            target_size: 128,
            channels: 1,
            mean: vec![0.5],
            std: vec![0.25],
            random_crop: true,
            horizontal_flip: false,
        }
    }

    pub fn with_size(mut self, target_size: usize) -> Self {
        self.target_size = target_size;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.target_size == 0 || self.target_size % 32 != 0 {
            return Err(Error::Config(format!(
                "image target_size {} must be a positive multiple of 32",
                self.target_size
            )));
        }
        if self.mean.len() != self.channels || self.std.len() != self.channels {
            return Err(Error::Config("image mean/std length must equal channels".into()));
        }
        if self.std.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Config("image std must be positive".into()));
        }
        Ok(())
    }
}

/// Bilinear resize (half-pixel centres) of an H×W×C image.
pub fn resize_bilinear(img: &Image, out_h: usize, out_w: usize) -> Image {
    let (h, w, c) = img.dim();
    if (h, w) == (out_h, out_w) {
        return img.clone();
    }
    let sy = h as f32 / out_h as f32;
    let sx = w as f32 / out_w as f32;
    Array3::from_shape_fn((out_h, out_w, c), |(y, x, ch)| {
        let fy = ((y as f32 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f32);
        let fx = ((x as f32 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f32);
        let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
        let (dy, dx) = (fy - y0 as f32, fx - x0 as f32);
        let top = img[[y0, x0, ch]] * (1.0 - dx) + img[[y0, x1, ch]] * dx;
        let bot = img[[y1, x0, ch]] * (1.0 - dx) + img[[y1, x1, ch]] * dx;
        top * (1.0 - dy) + bot * dy
    })
}

/// Encoder input `[C × S × S]`: resized, normalized per channel, and in
/// train mode randomly shifted (reflect-padded crop) and optionally mirrored.
pub fn image_features(image: &Image, cfg: &ImageFeatureConfig, mode: FeatureMode) -> Result<Array3<f32>> {
    cfg.validate()?;
    let (h, w, c) = image.dim();
    if h == 0 || w == 0 {
        return Err(Error::invalid("empty image"));
    }
    if c != cfg.channels {
        return Err(Error::shape(format!("{} channels", cfg.channels), c));
    }
    let s = cfg.target_size;
    let resized = resize_bilinear(image, s, s);
    let (mut dy, mut dx, mut flip) = (0i64, 0i64, false);
    if let FeatureMode::Train { seed } = mode {
        let mut rng = substream(seed, &["image-aug"]);
        if cfg.random_crop {
            let pad = (s / 8) as i64;
            dy = rng.gen_range(-pad..=pad);
            dx = rng.gen_range(-pad..=pad);
        }
        if cfg.horizontal_flip {
            flip = rng.gen_bool(0.5);
        }
    }
    let reflect = |i: i64| -> usize {
        let n = s as i64;
        let mut i = i;
        if i < 0 {
            i = -i - 1;
        }
        if i >= n {
            i = 2 * n - i - 1;
        }
        i.clamp(0, n - 1) as usize
    };
    Ok(Array3::from_shape_fn((c, s, s), |(ch, y, x)| {
        let xx = if flip { s - 1 - x } else { x };
        let v = resized[[reflect(y as i64 + dy), reflect(xx as i64 + dx), ch]];
        (v - cfg.mean[ch]) / cfg.std[ch]
    }))
}
