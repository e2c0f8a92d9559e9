//! On-disk layout: 16-bit PCM WAV for audio, binary PPM (visual) and PGM
//! (thermal), the tab-separated manifest, and a `corrupted.tsv` sidecar
//! (`sample_id<TAB>modality[,modality...]`) for noisy copies.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::types::{
    parse_modality_list, resolve_path, Image, Manifest, ManifestEntry, Modality, MultimodalSample,
    SAMPLE_RATE,
};

pub const CORRUPTION_SIDECAR: &str = "corrupted.tsv";

pub fn write_wav(path: &Path, audio: &[f32], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(|e| Error::Media(format!("{}: {e}", path.display())))?;
    for &x in audio {
        let v = (x.clamp(-1.0, 1.0) * i16::MAX as f32).round() as i16;
        w.write_sample(v).map_err(|e| Error::Media(e.to_string()))?;
    }
    w.finalize().map_err(|e| Error::Media(e.to_string()))
}

/// Read a mono WAV into [-1, 1] floats. Multi-channel input is averaged.
pub fn read_wav(path: &Path) -> Result<(Vec<f32>, u32)> {
    let mut r = hound::WavReader::open(path).map_err(|e| Error::Media(format!("{}: {e}", path.display())))?;
    let spec = r.spec();
    let ch = spec.channels as usize;
    let interleaved: Vec<f32> = match spec.sample_format {
        hound::SampleFormat::Int => {
            let scale = (1i64 << (spec.bits_per_sample - 1)) as f32;
            r.samples::<i32>()
                .map(|s| s.map(|v| v as f32 / scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Media(e.to_string()))?
        }
        hound::SampleFormat::Float => r
            .samples::<f32>()
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Media(e.to_string()))?,
    };
    let mono = interleaved
        .chunks(ch)
        .map(|c| c.iter().sum::<f32>() / ch as f32)
        .collect();
    Ok((mono, spec.sample_rate))
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Write an H×W×3 image as PPM or an H×W×1 image as PGM.
pub fn write_pnm(path: &Path, img: &Image) -> Result<()> {
    let (h, w, c) = img.dim();
    let res = match c {
        3 => {
            let buf: RgbImage = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
                let (x, y) = (x as usize, y as usize);
                Rgb([to_u8(img[[y, x, 0]]), to_u8(img[[y, x, 1]]), to_u8(img[[y, x, 2]])])
            });
            buf.save_with_format(path, image::ImageFormat::Pnm)
        }
        1 => {
            let buf: GrayImage = ImageBuffer::from_fn(w as u32, h as u32, |x, y| Luma([to_u8(img[[y as usize, x as usize, 0]])]));
            buf.save_with_format(path, image::ImageFormat::Pnm)
        }
        _ => return Err(Error::shape("1 or 3 channels", c)),
    };
    res.map_err(|e| Error::Media(format!("{}: {e}", path.display())))
}

pub fn read_pnm(path: &Path, channels: usize) -> Result<Image> {
    let dynimg = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::Media(format!("{}: {e}", path.display())))?;
    match channels {
        3 => {
            let rgb = dynimg.to_rgb8();
            let (w, h) = rgb.dimensions();
            Ok(Image::from_shape_fn((h as usize, w as usize, 3), |(y, x, c)| {
                rgb.get_pixel(x as u32, y as u32)[c] as f32 / 255.0
            }))
        }
        1 => {
            let g = dynimg.to_luma8();
            let (w, h) = g.dimensions();
            Ok(Image::from_shape_fn((h as usize, w as usize, 1), |(y, x, _)| {
                g.get_pixel(x as u32, y as u32)[0] as f32 / 255.0
            }))
        }
        _ => Err(Error::shape("1 or 3 channels", channels)),
    }
}

fn mkdir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

pub fn write_text_atomic(path: &Path, text: &str) -> Result<()> {
    write_bytes_atomic(path, text.as_bytes())
}

/// Write through a temporary file in the target directory and rename over
/// the destination.
pub fn write_bytes_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    use std::io::Write;
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Write samples and their media into `dir` using the conventional layout,
/// returning the manifest. A corruption sidecar is written when any sample
/// carries flags.
pub fn write_samples(dir: &Path, samples: &[MultimodalSample]) -> Result<Manifest> {
    for sub in ["audio", "visual", "thermal"] {
        mkdir(&dir.join(sub))?;
    }
    let mut entries = Vec::with_capacity(samples.len());
    let mut flags = BTreeMap::new();
    for s in samples {
        let e = ManifestEntry::for_sample(s);
        write_wav(&dir.join(&e.audio_path), &s.audio, SAMPLE_RATE)?;
        write_pnm(&dir.join(&e.visual_path), &s.visual)?;
        write_pnm(&dir.join(&e.thermal_path), &s.thermal)?;
        if !s.corrupted.is_empty() {
            flags.insert(s.sample_id.clone(), s.corrupted.clone());
        }
        entries.push(e);
    }
    let manifest = crate::types::validate_manifest(entries, Some(dir))?;
    if !flags.is_empty() {
        write_corruption_flags(&dir.join(CORRUPTION_SIDECAR), &flags)?;
    }
    Ok(manifest)
}

pub fn write_corruption_flags(path: &Path, flags: &BTreeMap<String, BTreeSet<Modality>>) -> Result<()> {
    let mut out = String::new();
    for (id, set) in flags {
        let list: Vec<&str> = set.iter().map(|m| m.as_str()).collect();
        out.push_str(&format!("{id}\t{}\n", list.join(",")));
    }
    write_text_atomic(path, &out)
}

pub fn read_corruption_flags(path: &Path) -> Result<BTreeMap<String, BTreeSet<Modality>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, list) = line.split_once('\t').ok_or_else(|| Error::Parse {
            line: i + 1,
            msg: "expected sample_id<TAB>modalities".into(),
        })?;
        out.insert(id.to_string(), parse_modality_list(list)?.into_iter().collect());
    }
    Ok(out)
}

/// Load every sample of a manifest whose relative paths resolve against
/// `base`. Flags come from `base/corrupted.tsv` when present.
pub fn load_samples(manifest: &Manifest, base: &Path) -> Result<Vec<MultimodalSample>> {
    let sidecar = base.join(CORRUPTION_SIDECAR);
    let flags = if sidecar.is_file() {
        read_corruption_flags(&sidecar)?
    } else {
        BTreeMap::new()
    };
    manifest
        .entries()
        .iter()
        .map(|e| {
            let (audio, rate) = read_wav(&resolve_path(base, &e.audio_path))?;
            if rate != SAMPLE_RATE {
                return Err(Error::Media(format!(
                    "{}: sample rate {rate}, expected {SAMPLE_RATE}",
                    e.audio_path.display()
                )));
            }
            let visual = read_pnm(&resolve_path(base, &e.visual_path), 3)?;
            let thermal = read_pnm(&resolve_path(base, &e.thermal_path), 1)?;
            let mut s = MultimodalSample::new(
                e.sample_id.clone(),
                e.identity.clone(),
                e.session.clone(),
                audio,
                visual,
                thermal,
            )?;
            if let Some(f) = flags.get(&e.sample_id) {
                s.corrupted = f.clone();
            }
            Ok(s)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synth::{generate_synthetic, SynthConfig};

    #[test]
    fn samples_survive_disk_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let (samples, _) = generate_synthetic(&SynthConfig {
            n_identities: 2,
            samples_per_identity: 2,
            audio_seconds: 1.0,
            image_size: 12,
            ..SynthConfig::default()
        })
        .unwrap();
        let mut flagged = samples.clone();
        flagged[1].corrupted.insert(Modality::Thermal);
        let manifest = write_samples(dir.path(), &flagged).unwrap();
        fs::write(dir.path().join("all.tsv"), manifest.to_tsv()).unwrap();
        let reread = Manifest::read(&dir.path().join("all.tsv")).unwrap();
        assert_eq!(reread, manifest);
        let loaded = load_samples(&reread, dir.path()).unwrap();
        for (a, b) in flagged.iter().zip(loaded.iter()) {
            assert_eq!(a.sample_id, b.sample_id);
            assert_eq!(a.corrupted, b.corrupted);
            let max_audio = a.audio.iter().zip(&b.audio).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max);
            // write scales by 32767, read by 32768, plus rounding
            assert!(max_audio <= 2.0 / 32767.0, "{max_audio}");
            let max_img = a.visual.iter().zip(b.visual.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max);
            assert!(max_img <= 0.5 / 255.0 + 1e-6);
        }
    }
}
