use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use super::layers::{max_pool_3x3_s2, BatchNorm2d, Conv2d, Init, Linear, ParamStore};
use super::sap::SapLayer;
use crate::error::{Error, Result};
use crate::frontend::Features;
use crate::rng::substream;
use crate::types::{Embedding, Modality, EMBED_DIM};

/// Widths of the standard 34-layer residual network.
pub const RESNET34_WIDTHS: [usize; 4] = [64, 128, 256, 512];
pub const RESNET34_BLOCKS: [usize; 4] = [3, 4, 6, 3];
const STAGE_STRIDES: [usize; 4] = [1, 2, 2, 2];

/// Residual image encoder for visual (3-channel) or thermal (1-channel)
/// input: 7×7/2 stem, 3×3/2 max-pool, four stages, global average pool and a
/// linear embedding head.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageEncoderSpec {
    pub stage_widths: Vec<usize>,
    pub blocks_per_stage: Vec<usize>,
    pub input_channels: usize,
    pub embed_dim: usize,
}

impl ImageEncoderSpec {
    /// The 34-layer layout with every stage width halved.
    pub fn halved_resnet34(input_channels: usize) -> Self {
        Self {
            stage_widths: RESNET34_WIDTHS.iter().map(|w| w / 2).collect(),
            blocks_per_stage: RESNET34_BLOCKS.to_vec(),
            input_channels,
            embed_dim: EMBED_DIM,
        }
    }

    pub fn full_resnet34(input_channels: usize) -> Self {
        Self {
            stage_widths: RESNET34_WIDTHS.to_vec(),
            ..Self::halved_resnet34(input_channels)
        }
    }

    /// Desk-scale variant for single-core runs on the synthetic corpus:
    /// widths divided by four relative to the standard network, one block
    /// per stage. Same stem, stage strides, pooling and head.
    pub fn desk(input_channels: usize) -> Self {
        Self {
            stage_widths: RESNET34_WIDTHS.iter().map(|w| w / 4).collect(),
            blocks_per_stage: vec![1; 4],
            input_channels,
            embed_dim: EMBED_DIM,
        }
    }

    /// True when widths are exactly half of the standard 34-layer widths.
    pub fn is_halved_resnet34(&self) -> bool {
        self.stage_widths.iter().zip(RESNET34_WIDTHS).all(|(w, s)| 2 * w == s)
            && self.stage_widths.len() == 4
            && self.blocks_per_stage == RESNET34_BLOCKS
    }

    pub fn validate(&self) -> Result<()> {
        validate_stages(&self.stage_widths, &self.blocks_per_stage, self.embed_dim)?;
        if self.input_channels != 1 && self.input_channels != 3 {
            return Err(Error::Config(format!(
                "image encoder input_channels must be 1 or 3, got {}",
                self.input_channels
            )));
        }
        Ok(())
    }
}

/// Residual audio encoder over `[T × n_mels]` log-mel input treated as a
/// one-channel image. Frequency is reduced by the strided stages and a final
/// mean; self-attentive pooling then aggregates over time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AudioEncoderSpec {
    pub stage_widths: Vec<usize>,
    pub blocks_per_stage: Vec<usize>,
    pub n_mels: usize,
    pub embed_dim: usize,
    /// Stride of the 3×3 stem convolution.
    pub stem_stride: usize,
}

impl AudioEncoderSpec {
    pub fn resnet34(n_mels: usize) -> Self {
        Self {
            stage_widths: RESNET34_WIDTHS.to_vec(),
            blocks_per_stage: RESNET34_BLOCKS.to_vec(),
            n_mels,
            embed_dim: EMBED_DIM,
            stem_stride: 1,
        }
    }

    /// Desk-scale variant: widths divided by eight, one block per stage,
    /// strided stem.
    pub fn desk(n_mels: usize) -> Self {
        Self {
            stage_widths: RESNET34_WIDTHS.iter().map(|w| w / 8).collect(),
            blocks_per_stage: vec![1; 4],
            n_mels,
            embed_dim: EMBED_DIM,
            stem_stride: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_stages(&self.stage_widths, &self.blocks_per_stage, self.embed_dim)?;
        if self.n_mels == 0 || self.stem_stride == 0 {
            return Err(Error::Config("audio encoder needs n_mels >= 1 and stem_stride >= 1".into()));
        }
        Ok(())
    }
}

fn validate_stages(widths: &[usize], blocks: &[usize], embed_dim: usize) -> Result<()> {
    if widths.len() != 4 || blocks.len() != 4 {
        return Err(Error::Config("encoder needs exactly four stages".into()));
    }
    if widths.iter().any(|&w| w == 0) || blocks.iter().any(|&b| b == 0) {
        return Err(Error::Config("stage widths and block counts must be positive".into()));
    }
    if embed_dim == 0 {
        return Err(Error::Config("embed_dim must be positive".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EncoderSpec {
    Image(ImageEncoderSpec),
    Audio(AudioEncoderSpec),
}

impl EncoderSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            EncoderSpec::Image(s) => s.validate(),
            EncoderSpec::Audio(s) => s.validate(),
        }
    }

    pub fn embed_dim(&self) -> usize {
        match self {
            EncoderSpec::Image(s) => s.embed_dim,
            EncoderSpec::Audio(s) => s.embed_dim,
        }
    }

    fn stages(&self) -> (&[usize], &[usize]) {
        match self {
            EncoderSpec::Image(s) => (&s.stage_widths, &s.blocks_per_stage),
            EncoderSpec::Audio(s) => (&s.stage_widths, &s.blocks_per_stage),
        }
    }

    pub fn final_width(&self) -> usize {
        *self.stages().0.last().expect("four stages")
    }

    /// The full-size encoder for a modality.
    pub fn standard(modality: Modality, n_mels: usize) -> Result<Self> {
        match modality {
            Modality::Audio => Ok(EncoderSpec::Audio(AudioEncoderSpec::resnet34(n_mels))),
            Modality::Visual => Ok(EncoderSpec::Image(ImageEncoderSpec::halved_resnet34(3))),
            Modality::Thermal => Ok(EncoderSpec::Image(ImageEncoderSpec::halved_resnet34(1))),
            Modality::Fused => Err(Error::invalid("no encoder for fused embeddings")),
        }
    }

    pub fn desk(modality: Modality, n_mels: usize) -> Result<Self> {
        match modality {
            Modality::Audio => Ok(EncoderSpec::Audio(AudioEncoderSpec::desk(n_mels))),
            Modality::Visual => Ok(EncoderSpec::Image(ImageEncoderSpec::desk(3))),
            Modality::Thermal => Ok(EncoderSpec::Image(ImageEncoderSpec::desk(1))),
            Modality::Fused => Err(Error::invalid("no encoder for fused embeddings")),
        }
    }
}

/// Parameters contributed by the linear embedding head.
pub fn head_parameters(spec: &EncoderSpec) -> usize {
    spec.final_width() * spec.embed_dim() + spec.embed_dim()
}

/// Trainable scalar count of an encoder, derived from the spec alone.
pub fn count_parameters(spec: &EncoderSpec) -> usize {
    let conv = |cin: usize, cout: usize, k: usize| cin * cout * k * k;
    let bn = |c: usize| 2 * c;
    let (widths, blocks) = spec.stages();
    let mut total = match spec {
        EncoderSpec::Image(s) => conv(s.input_channels, widths[0], 7) + bn(widths[0]),
        EncoderSpec::Audio(_) => conv(1, widths[0], 3) + bn(widths[0]),
    };
    let mut in_c = widths[0];
    for (stage, (&w, &n)) in widths.iter().zip(blocks).enumerate() {
        for b in 0..n {
            let stride = if b == 0 { STAGE_STRIDES[stage] } else { 1 };
            total += conv(in_c, w, 3) + bn(w) + conv(w, w, 3) + bn(w);
            if stride != 1 || in_c != w {
                total += conv(in_c, w, 1) + bn(w);
            }
            in_c = w;
        }
    }
    if let EncoderSpec::Audio(_) = spec {
        let d = in_c;
        total += d * d + 2 * d;
    }
    total + head_parameters(spec)
}

#[derive(Debug, Clone)]
struct BasicBlock {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    conv2: Conv2d,
    bn2: BatchNorm2d,
    shortcut: Option<(Conv2d, BatchNorm2d)>,
}

impl BasicBlock {
    fn new(store: &mut ParamStore, init: &mut Init, name: &str, in_c: usize, out_c: usize, stride: usize) -> Result<Self> {
        let shortcut = if stride != 1 || in_c != out_c {
            Some((
                Conv2d::new(store, init, &format!("{name}.down.conv"), in_c, out_c, 1, stride, 0)?,
                BatchNorm2d::new(store, &format!("{name}.down.bn"), out_c)?,
            ))
        } else {
            None
        };
        Ok(Self {
            conv1: Conv2d::new(store, init, &format!("{name}.conv1"), in_c, out_c, 3, stride, 1)?,
            bn1: BatchNorm2d::new(store, &format!("{name}.bn1"), out_c)?,
            conv2: Conv2d::new(store, init, &format!("{name}.conv2"), out_c, out_c, 3, 1, 1)?,
            bn2: BatchNorm2d::new(store, &format!("{name}.bn2"), out_c)?,
            shortcut,
        })
    }

    fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let y = self.bn1.forward(&self.conv1.forward(x)?, train)?.relu()?;
        let y = self.bn2.forward(&self.conv2.forward(&y)?, train)?;
        let skip = match &self.shortcut {
            Some((conv, bn)) => bn.forward(&conv.forward(x)?, train)?,
            None => x.clone(),
        };
        Ok((y + skip)?.relu()?)
    }
}

/// A modality encoder with its parameters.
#[derive(Debug)]
pub struct Encoder {
    spec: EncoderSpec,
    store: ParamStore,
    stem: Conv2d,
    stem_bn: BatchNorm2d,
    blocks: Vec<BasicBlock>,
    sap: Option<SapLayer>,
    head: Linear,
}

impl Encoder {
    /// Build with fan-in-scaled random initialization drawn from `seed`.
    pub fn new(spec: EncoderSpec, seed: u64, dtype: DType) -> Result<Self> {
        spec.validate()?;
        let mut store = ParamStore::new(dtype);
        let mut init = Init::new(substream(seed, &["encoder-init"]));
        let (widths, blocks_per_stage) = spec.stages();
        let (widths, blocks_per_stage) = (widths.to_vec(), blocks_per_stage.to_vec());
        let (stem, stem_bn) = match &spec {
            EncoderSpec::Image(s) => (
                Conv2d::new(&mut store, &mut init, "stem.conv", s.input_channels, widths[0], 7, 2, 3)?,
                BatchNorm2d::new(&mut store, "stem.bn", widths[0])?,
            ),
            EncoderSpec::Audio(s) => (
                Conv2d::new(&mut store, &mut init, "stem.conv", 1, widths[0], 3, s.stem_stride, 1)?,
                BatchNorm2d::new(&mut store, "stem.bn", widths[0])?,
            ),
        };
        let mut blocks = Vec::new();
        let mut in_c = widths[0];
        for (stage, (&w, &n)) in widths.iter().zip(&blocks_per_stage).enumerate() {
            for b in 0..n {
                let stride = if b == 0 { STAGE_STRIDES[stage] } else { 1 };
                let name = format!("stage{}.block{}", stage + 1, b);
                blocks.push(BasicBlock::new(&mut store, &mut init, &name, in_c, w, stride)?);
                in_c = w;
            }
        }
        let sap = match &spec {
            EncoderSpec::Audio(_) => Some(SapLayer::new(&mut store, &mut init, "sap", in_c)?),
            EncoderSpec::Image(_) => None,
        };
        let head = Linear::new(&mut store, &mut init, "head", in_c, spec.embed_dim())?;
        Ok(Self {
            spec,
            store,
            stem,
            stem_bn,
            blocks,
            sap,
            head,
        })
    }

    pub fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn sap(&self) -> Option<&SapLayer> {
        self.sap.as_ref()
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    /// Check a single sample's feature shape against the spec.
    pub fn check_features(&self, f: &Features) -> Result<()> {
        let [c, h, w] = f.shape;
        if f.data.len() != c * h * w {
            return Err(Error::shape(c * h * w, f.data.len()));
        }
        match &self.spec {
            EncoderSpec::Image(s) => {
                if c != s.input_channels || h == 0 || w == 0 {
                    return Err(Error::shape(
                        format!("[{} × S × S]", s.input_channels),
                        format!("{:?}", f.shape),
                    ));
                }
            }
            EncoderSpec::Audio(s) => {
                if c != 1 || w != s.n_mels || h == 0 {
                    return Err(Error::shape(format!("[1 × T × {}]", s.n_mels), format!("{:?}", f.shape)));
                }
            }
        }
        Ok(())
    }

    /// Stack same-shaped features into a `[B, C, H, W]` batch tensor.
    pub fn batch_tensor(&self, feats: &[&Features]) -> Result<Tensor> {
        let first = feats.first().ok_or_else(|| Error::invalid("empty batch"))?;
        let mut data = Vec::with_capacity(first.data.len() * feats.len());
        for f in feats {
            self.check_features(f)?;
            if f.shape != first.shape {
                return Err(Error::shape(format!("{:?}", first.shape), format!("{:?}", f.shape)));
            }
            data.extend_from_slice(&f.data);
        }
        let [c, h, w] = first.shape;
        Ok(Tensor::from_vec(data, (feats.len(), c, h, w), &Device::Cpu)?.to_dtype(self.dtype())?)
    }

    /// `[B, C, H, W] → [B, embed_dim]` unnormalized embeddings.
    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let mut y = self.stem_bn.forward(&self.stem.forward(x)?, train)?.relu()?;
        if let EncoderSpec::Image(_) = self.spec {
            y = max_pool_3x3_s2(&y)?;
        }
        for block in &self.blocks {
            y = block.forward(&y, train)?;
        }
        let pooled = match &self.sap {
            // [B, C, T, F] → mean over F → [B, T, C] → attention over T.
            Some(sap) => sap.forward(&y.mean(3)?.transpose(1, 2)?.contiguous()?)?.0,
            None => y.mean((2, 3))?,
        };
        self.head.forward(&pooled)
    }

    /// Eval-mode unit-norm embeddings for a list of samples' features,
    /// batched by shape. Errors on non-finite activations.
    pub fn embed(&self, feats: &[Features]) -> Result<Vec<Vec<f64>>> {
        let mut out: Vec<Option<Vec<f64>>> = vec![None; feats.len()];
        let mut groups: std::collections::BTreeMap<[usize; 3], Vec<usize>> = Default::default();
        for (i, f) in feats.iter().enumerate() {
            groups.entry(f.shape).or_default().push(i);
        }
        for idx in groups.values() {
            for chunk in idx.chunks(64) {
                let batch: Vec<&Features> = chunk.iter().map(|&i| &feats[i]).collect();
                let y = self.forward(&self.batch_tensor(&batch)?, false)?;
                let rows: Vec<Vec<f64>> = y.to_dtype(DType::F64)?.to_vec2()?;
                for (&i, mut row) in chunk.iter().zip(rows) {
                    crate::types::l2_normalize(&mut row).map_err(|_| Error::NonFinite("encoder activations".into()))?;
                    out[i] = Some(row);
                }
            }
        }
        Ok(out.into_iter().map(|v| v.expect("every index grouped")).collect())
    }
}

/// Eval-mode embedding of one sample.
pub fn encode(encoder: &Encoder, features: &Features, modality: Modality, sample_id: &str) -> Result<Embedding> {
    let v = encoder.embed(std::slice::from_ref(features))?.pop().expect("one input");
    Ok(Embedding {
        vector: v,
        modality,
        sample_id: sample_id.to_string(),
    })
}
