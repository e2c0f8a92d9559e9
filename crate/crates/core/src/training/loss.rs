//! Metric-learning objectives over identity-grouped batches.
//!
//! Batches hold `N` identities × `M` samples laid out identity-major: row
//! `n·M + j` is sample `j` of identity `n`.

use candle_core::{DType, Device, Tensor, Var};

use crate::encoders::layers::{constant, Init, Linear, ParamStore};
use crate::error::{Error, Result};

/// Initial scale and offset of the learnable cosine logits.
pub const AP_INIT_SCALE: f64 = 10.0;
pub const AP_INIT_BIAS: f64 = -5.0;
const AP_MIN_SCALE: f64 = 1e-6;

fn check_batch(rows: usize, n: usize, m: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::invalid("need ≥ 2 identities per batch"));
    }
    if m < 2 {
        return Err(Error::invalid("need ≥ 2 samples per identity"));
    }
    if rows != n * m {
        return Err(Error::shape(format!("{n} × {m} rows"), rows));
    }
    Ok(())
}

fn identity_labels(n: usize, device: &Device) -> Result<Tensor> {
    Ok(Tensor::arange(0u32, n as u32, device)?)
}

/// Angular prototypical loss. The first sample of each identity is the
/// query; the mean of the remaining `M − 1` is its prototype. Logits are
/// `w·cos(query_i, prototype_j) + b` and the loss is cross-entropy against
/// the query's own identity.
pub fn angular_prototypical_loss(
    embeddings: &Tensor,
    n: usize,
    m: usize,
    scale: &Tensor,
    bias: &Tensor,
) -> Result<Tensor> {
    let (rows, d) = embeddings.dims2()?;
    check_batch(rows, n, m)?;
    let grouped = embeddings.reshape((n, m, d))?;
    let query = grouped.narrow(1, 0, 1)?.squeeze(1)?;
    let proto = grouped.narrow(1, 1, m - 1)?.mean(1)?;
    let unit = |x: &Tensor| -> Result<Tensor> {
        let norm = x.sqr()?.sum_keepdim(1)?.sqrt()?;
        Ok(x.broadcast_div(&(norm + 1e-12)?)?)
    };
    let cos = unit(&query)?.matmul(&unit(&proto)?.t()?)?;
    let w = scale.maximum(AP_MIN_SCALE)?;
    let logits = cos.broadcast_mul(&w)?.broadcast_add(bias)?;
    Ok(candle_nn::loss::cross_entropy(&logits, &identity_labels(n, embeddings.device())?)?)
}

/// Trainable parameters of the training objective; not part of the
/// deployed system.
#[derive(Debug)]
pub enum LossHead {
    AngularPrototypical { scale: Var, bias: Var },
    SoftmaxClassifier { classifier: Linear },
}

impl LossHead {
    pub fn angular_prototypical(store: &mut ParamStore) -> Result<Self> {
        Ok(LossHead::AngularPrototypical {
            scale: store.param("loss.scale", constant(&[1], AP_INIT_SCALE)?)?,
            bias: store.param("loss.bias", constant(&[1], AP_INIT_BIAS)?)?,
        })
    }

    pub fn softmax_classifier(store: &mut ParamStore, init: &mut Init, dim: usize, n_classes: usize) -> Result<Self> {
        Ok(LossHead::SoftmaxClassifier {
            classifier: Linear::new(store, init, "loss.classifier", dim, n_classes)?,
        })
    }

    /// Loss for an `N × M` batch; `classes[k]` is the training-identity
    /// index of row `k` (used by the classifier head).
    pub fn loss(&self, embeddings: &Tensor, n: usize, m: usize, classes: &[u32]) -> Result<Tensor> {
        match self {
            LossHead::AngularPrototypical { scale, bias } => {
                angular_prototypical_loss(embeddings, n, m, scale.as_tensor(), bias.as_tensor())
            }
            LossHead::SoftmaxClassifier { classifier } => {
                check_batch(embeddings.dim(0)?, n, m)?;
                if classes.len() != n * m {
                    return Err(Error::shape(n * m, classes.len()));
                }
                let targets = Tensor::from_slice(classes, classes.len(), embeddings.device())?;
                let logits = classifier.forward(embeddings)?;
                Ok(candle_nn::loss::cross_entropy(&logits, &targets)?)
            }
        }
    }
}

/// Scalar value of a loss tensor.
pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}
