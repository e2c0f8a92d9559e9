//! Combining modalities: softmax attention over modality embeddings, and
//! arithmetic averaging of per-modality distances.
//!
//! Attention: `α̂ = W·[e_1; …; e_m] + b`, `α = softmax(α̂)`, `e_p = Σ α_i e_i`.
//! The fused vector is a convex combination of unit vectors, so
//! `‖e_p‖ ≤ 1`; it is renormalized before scoring so every system's scores
//! share the `[0, 2]` range.

use std::collections::BTreeMap;

use candle_core::{Tensor, Var};
use ndarray::{concatenate, Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::encoders::layers::{softmax, ParamStore};
use crate::error::{Error, Result};
use crate::types::{l2_norm, Embedding, Modality, EMBED_DIM};

/// Norm tolerance accepted by [`verification_score`].
pub const SCORE_NORM_TOLERANCE: f64 = 1e-4;

/// Attention parameters for `m` modalities of dimension `d`:
/// `W ∈ R^{m × m·d}`, `b ∈ R^m`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionFusionParams {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl AttentionFusionParams {
    /// Zero-initialized parameters over 512-dim embeddings; the initial
    /// weights are uniform.
    pub fn zeros(m: usize) -> Result<Self> {
        Self::zeros_with_dim(m, EMBED_DIM)
    }

    pub fn zeros_with_dim(m: usize, d: usize) -> Result<Self> {
        Self::new(Array2::zeros((m, m * d)), Array1::zeros(m))
    }

    pub fn new(w: Array2<f64>, b: Array1<f64>) -> Result<Self> {
        let p = Self { w, b };
        p.validate()?;
        Ok(p)
    }

    pub fn m(&self) -> usize {
        self.b.len()
    }

    pub fn embed_dim(&self) -> usize {
        self.w.ncols() / self.m().max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.m();
        if m != 2 && m != 3 {
            return Err(Error::invalid(format!("attention fusion needs 2 or 3 modalities, got {m}")));
        }
        if self.w.nrows() != m || self.w.ncols() == 0 || self.w.ncols() % m != 0 {
            return Err(Error::shape(format!("{m} × ({m}·d)"), format!("{:?}", self.w.dim())));
        }
        if self.w.iter().chain(self.b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("attention fusion parameters".into()));
        }
        Ok(())
    }
}

/// Softmax attention weights over modalities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights {
    pub alpha: Vec<f64>,
}

impl FusionWeights {
    /// Nonnegative entries summing to one within `1e-6`.
    pub fn is_simplex(&self) -> bool {
        self.alpha.iter().all(|&a| a >= 0.0) && (self.alpha.iter().sum::<f64>() - 1.0).abs() <= 1e-6
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionGrads {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub embeddings: Vec<Array1<f64>>,
}

struct Forward {
    x: Array1<f64>,
    alpha: Array1<f64>,
    fused: Array1<f64>,
}

fn forward(embeddings: &[ArrayView1<f64>], params: &AttentionFusionParams) -> Result<Forward> {
    params.validate()?;
    let (m, d) = (params.m(), params.embed_dim());
    if embeddings.len() != m {
        return Err(Error::shape(format!("{m} embeddings"), embeddings.len()));
    }
    if let Some(e) = embeddings.iter().find(|e| e.len() != d) {
        return Err(Error::shape(format!("dimension {d}"), e.len()));
    }
    let x = concatenate(Axis(0), embeddings).expect("equal-length vectors");
    let logits = params.w.dot(&x) + &params.b;
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("attention logits".into()));
    }
    let max = logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e = logits.mapv(|v| (v - max).exp());
    let alpha = &e / e.sum();
    let mut fused = Array1::zeros(d);
    for (a, emb) in alpha.iter().zip(embeddings) {
        fused.scaled_add(*a, emb);
    }
    Ok(Forward { x, alpha, fused })
}

/// Fuse raw vectors (ordered audio, visual[, thermal]).
pub fn attention_fuse_vectors(
    embeddings: &[ArrayView1<f64>],
    params: &AttentionFusionParams,
) -> Result<(Array1<f64>, FusionWeights)> {
    let f = forward(embeddings, params)?;
    Ok((f.fused, FusionWeights { alpha: f.alpha.to_vec() }))
}

/// Fuse modality embeddings of one sample. Embeddings must be ordered
/// audio, visual[, thermal] — strictly increasing in modality order — and
/// share a sample id. The result is tagged `fused` and is not renormalized.
pub fn attention_fuse(embeddings: &[&Embedding], params: &AttentionFusionParams) -> Result<(Embedding, FusionWeights)> {
    let first = embeddings.first().ok_or_else(|| Error::invalid("no embeddings to fuse"))?;
    for pair in embeddings.windows(2) {
        if !pair[0].modality.is_input() || pair[0].modality.order() >= pair[1].modality.order() {
            return Err(Error::invalid("embeddings must be ordered audio, visual, thermal"));
        }
    }
    if embeddings.iter().any(|e| !e.modality.is_input()) {
        return Err(Error::invalid("cannot re-fuse a fused embedding"));
    }
    if embeddings.iter().any(|e| e.sample_id != first.sample_id) {
        return Err(Error::invalid("embeddings to fuse come from different samples"));
    }
    let views: Vec<ArrayView1<f64>> = embeddings.iter().map(|e| ArrayView1::from(&e.vector[..])).collect();
    let (fused, weights) = attention_fuse_vectors(&views, params)?;
    Ok((Embedding::raw(fused.to_vec(), Modality::Fused, first.sample_id.clone()), weights))
}

/// Gradients of a scalar loss through [`attention_fuse_vectors`], given
/// `∂L/∂e_p`.
pub fn attention_fuse_backward(
    embeddings: &[ArrayView1<f64>],
    params: &AttentionFusionParams,
    grad_out: ArrayView1<f64>,
) -> Result<FusionGrads> {
    let f = forward(embeddings, params)?;
    let d = params.embed_dim();
    if grad_out.len() != d {
        return Err(Error::shape(d, grad_out.len()));
    }
    // ∂L/∂α_i = g·e_i; through the softmax ∂L/∂α̂_i = α_i (q_i − Σ_k α_k q_k).
    let q: Array1<f64> = embeddings.iter().map(|e| e.dot(&grad_out)).collect();
    let mean_q = f.alpha.dot(&q);
    let dlogits = &f.alpha * &(q - mean_q);
    let grad_w = dlogits.view().insert_axis(Axis(1)).dot(&f.x.view().insert_axis(Axis(0)));
    let dx = params.w.t().dot(&dlogits);
    let grad_e = (0..embeddings.len())
        .map(|i| grad_out.to_owned() * f.alpha[i] + dx.slice(ndarray::s![i * d..(i + 1) * d]))
        .collect();
    Ok(FusionGrads {
        w: grad_w,
        b: dlogits,
        embeddings: grad_e,
    })
}

/// Euclidean distance between two unit embeddings of the same modality, in
/// `[0, 2]`. Inputs whose norm deviates from one by more than `1e-4` are
/// rejected; the result is clamped to `[0, 2]` to absorb that tolerance.
pub fn verification_score(e1: &Embedding, e2: &Embedding) -> Result<f64> {
    if e1.modality != e2.modality {
        return Err(Error::invalid(format!(
            "cannot compare {} with {} embeddings",
            e1.modality, e2.modality
        )));
    }
    if e1.dim() != e2.dim() {
        return Err(Error::shape(e1.dim(), e2.dim()));
    }
    for e in [e1, e2] {
        let n = e.norm();
        if !n.is_finite() {
            return Err(Error::NonFinite(format!("embedding of `{}`", e.sample_id)));
        }
        if (n - 1.0).abs() > SCORE_NORM_TOLERANCE {
            return Err(Error::invalid(format!(
                "embedding of `{}` is not normalized (norm {n})",
                e.sample_id
            )));
        }
    }
    let diff: Vec<f64> = e1.vector.iter().zip(&e2.vector).map(|(a, b)| a - b).collect();
    Ok(l2_norm(&diff).clamp(0.0, 2.0))
}

/// Arithmetic mean of 2 or 3 per-modality scores, each in `[0, 2]`.
pub fn average_scores(per_modality: &BTreeMap<Modality, f64>) -> Result<f64> {
    if per_modality.is_empty() {
        return Err(Error::invalid("no scores to average"));
    }
    if per_modality.len() > 3 {
        return Err(Error::invalid("at most three modality scores can be averaged"));
    }
    for (m, &s) in per_modality {
        if !(0.0..=2.0).contains(&s) {
            return Err(Error::invalid(format!("{m} score {s} outside [0, 2]")));
        }
    }
    Ok(per_modality.values().sum::<f64>() / per_modality.len() as f64)
}

/// Differentiable attention fusion over batched `[B, d]` embeddings.
#[derive(Debug, Clone)]
pub struct AttentionFusion {
    w: Var,
    b: Var,
    m: usize,
}

impl AttentionFusion {
    pub fn new(store: &mut ParamStore, params: &AttentionFusionParams) -> Result<Self> {
        params.validate()?;
        let (m, cols) = params.w.dim();
        let w = Tensor::from_vec(params.w.iter().copied().collect::<Vec<_>>(), (m, cols), store.device())?;
        let b = Tensor::from_vec(params.b.to_vec(), m, store.device())?;
        Ok(Self {
            w: store.param("fusion.w", w)?,
            b: store.param("fusion.b", b)?,
            m,
        })
    }

    /// `m × [B, d] → ([B, d] fused, [B, m] weights)`.
    pub fn forward(&self, embeddings: &[Tensor]) -> Result<(Tensor, Tensor)> {
        if embeddings.len() != self.m {
            return Err(Error::shape(format!("{} embeddings", self.m), embeddings.len()));
        }
        let x = Tensor::cat(embeddings, 1)?;
        let logits = x.matmul(&self.w.as_tensor().t()?)?.broadcast_add(self.b.as_tensor())?;
        let alpha = softmax(&logits, 1)?;
        let stacked = Tensor::stack(embeddings, 1)?;
        let fused = alpha.unsqueeze(2)?.broadcast_mul(&stacked)?.sum(1)?;
        Ok((fused, alpha))
    }

    pub fn params(&self) -> Result<AttentionFusionParams> {
        let w: Vec<Vec<f64>> = self.w.as_tensor().to_dtype(candle_core::DType::F64)?.to_vec2()?;
        let cols = w.first().map_or(0, Vec::len);
        let w = Array2::from_shape_vec((self.m, cols), w.concat()).map_err(|e| Error::invalid(e.to_string()))?;
        let b: Vec<f64> = self.b.as_tensor().to_dtype(candle_core::DType::F64)?.to_vec1()?;
        AttentionFusionParams::new(w, Array1::from(b))
    }
}
