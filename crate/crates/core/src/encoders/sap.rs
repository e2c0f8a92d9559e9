//! Self-attentive pooling over frames.
//!
//! For frame features `h_t ∈ R^d`:
//! `u_t = tanh(W_s h_t + b_s)`, `w = softmax_t(u_t · mu)`, `out = Σ_t w_t h_t`.
//! A single context vector `mu` is shared across feature dimensions.
//!
//! [`sap_pool`] and [`sap_pool_backward`] are plain f64 routines used for
//! inspection and gradient checking; [`SapLayer`] is the differentiable
//! tensor version used inside the audio encoder.

use candle_core::{Tensor, Var};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::layers::{softmax, Init, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SapParams {
    /// Projection `[d × d]`.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    /// Context vector.
    pub mu: Array1<f64>,
}

impl SapParams {
    pub fn dim(&self) -> usize {
        self.b.len()
    }

    fn check(&self, d: usize) -> Result<()> {
        if self.w.dim() != (d, d) || self.b.len() != d || self.mu.len() != d {
            return Err(Error::shape(
                format!("SAP params for d = {d}"),
                format!("W {:?}, b {}, mu {}", self.w.dim(), self.b.len(), self.mu.len()),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SapOutput {
    pub pooled: Array1<f64>,
    /// Attention weight per frame; nonnegative, sums to one.
    pub weights: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SapGrads {
    pub frames: Array2<f64>,
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub mu: Array1<f64>,
}

struct Forward {
    u: Array2<f64>,
    weights: Array1<f64>,
    pooled: Array1<f64>,
}

fn forward(frames: ArrayView2<f64>, params: &SapParams) -> Result<Forward> {
    let (t, d) = frames.dim();
    if t == 0 {
        return Err(Error::invalid("self-attentive pooling needs at least one frame"));
    }
    params.check(d)?;
    let u = (frames.dot(&params.w.t()) + &params.b).mapv(f64::tanh);
    let logits = u.dot(&params.mu);
    let max = logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e = logits.mapv(|v| (v - max).exp());
    let weights = &e / e.sum();
    let pooled = weights.dot(&frames);
    if pooled.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("SAP output".into()));
    }
    Ok(Forward { u, weights, pooled })
}

/// Pool `[T × d]` frames into one `d`-vector. Errors when `T = 0`.
pub fn sap_pool(frames: ArrayView2<f64>, params: &SapParams) -> Result<SapOutput> {
    let f = forward(frames, params)?;
    Ok(SapOutput {
        pooled: f.pooled,
        weights: f.weights,
    })
}

/// Gradients of a scalar loss through [`sap_pool`], given `∂L/∂out`.
pub fn sap_pool_backward(frames: ArrayView2<f64>, params: &SapParams, grad_out: ArrayView1<f64>) -> Result<SapGrads> {
    let f = forward(frames, params)?;
    let d = frames.ncols();
    if grad_out.len() != d {
        return Err(Error::shape(d, grad_out.len()));
    }
    // ∂L/∂w_t = g·h_t; softmax Jacobian gives ∂L/∂s_t = w_t (q_t − Σ_k w_k q_k).
    let q = frames.dot(&grad_out);
    let mean_q = f.weights.dot(&q);
    let ds = &f.weights * &(q - mean_q);
    // s_t = u_t·mu, u_t = tanh(a_t).
    let grad_mu = f.u.t().dot(&ds);
    let du = ds.view().insert_axis(Axis(1)).dot(&params.mu.view().insert_axis(Axis(0)));
    let da = du * f.u.mapv(|v| 1.0 - v * v);
    let grad_w = da.t().dot(&frames);
    let grad_b = da.sum_axis(Axis(0));
    let grad_frames = f.weights.view().insert_axis(Axis(1)).dot(&grad_out.insert_axis(Axis(0))) + da.dot(&params.w);
    Ok(SapGrads {
        frames: grad_frames,
        w: grad_w,
        b: grad_b,
        mu: grad_mu,
    })
}

/// Differentiable SAP over `[B, T, d]` tensors.
#[derive(Debug, Clone)]
pub struct SapLayer {
    w: Var,
    b: Var,
    mu: Var,
}

impl SapLayer {
    pub fn new(store: &mut ParamStore, init: &mut Init, name: &str, d: usize) -> Result<Self> {
        let bound = 1.0 / (d as f64).sqrt();
        Ok(Self {
            w: store.param(format!("{name}.w"), init.uniform(&[d, d], bound)?)?,
            b: store.param(format!("{name}.b"), super::layers::constant(&[d], 0.0)?)?,
            mu: store.param(format!("{name}.mu"), init.normal(&[d], (2.0 / (d as f64 + 1.0)).sqrt())?)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.b.elem_count()
    }

    /// `[B, T, d] → ([B, d] pooled, [B, T] weights)`.
    pub fn forward(&self, frames: &Tensor) -> Result<(Tensor, Tensor)> {
        let (_, t, d) = frames.dims3()?;
        if t == 0 {
            return Err(Error::invalid("self-attentive pooling needs at least one frame"));
        }
        if d != self.dim() {
            return Err(Error::shape(format!("frame dim {}", self.dim()), d));
        }
        let u = frames
            .broadcast_matmul(&self.w.as_tensor().t()?)?
            .broadcast_add(self.b.as_tensor())?
            .tanh()?;
        let logits = u.broadcast_matmul(&self.mu.as_tensor().reshape((d, 1))?)?.squeeze(2)?;
        let weights = softmax(&logits, 1)?;
        let pooled = weights.unsqueeze(2)?.broadcast_mul(frames)?.sum(1)?;
        Ok((pooled, weights))
    }

    /// Current parameters as an f64 [`SapParams`].
    pub fn params(&self) -> Result<SapParams> {
        let d = self.dim();
        let w: Vec<f64> = self.w.as_tensor().to_dtype(candle_core::DType::F64)?.flatten_all()?.to_vec1()?;
        let b: Vec<f64> = self.b.as_tensor().to_dtype(candle_core::DType::F64)?.to_vec1()?;
        let mu: Vec<f64> = self.mu.as_tensor().to_dtype(candle_core::DType::F64)?.to_vec1()?;
        Ok(SapParams {
            w: Array2::from_shape_vec((d, d), w).map_err(|e| Error::invalid(e.to_string()))?,
            b: Array1::from(b),
            mu: Array1::from(mu),
        })
    }

    pub fn vars(&self) -> [&Var; 3] {
        [&self.w, &self.b, &self.mu]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::DType;
    use ndarray::array;
    use rand::seq::SliceRandom;
    use rand::Rng;

    fn params(d: usize, scale: f64) -> SapParams {
        SapParams {
            w: Array2::from_shape_fn((d, d), |(i, j)| scale * ((i * 3 + j * 7) % 5) as f64 / 5.0 - 0.3),
            b: Array1::from_shape_fn(d, |i| 0.1 * i as f64 - 0.2),
            mu: Array1::from_shape_fn(d, |i| 0.5 - 0.2 * i as f64),
        }
    }

    #[test]
    fn single_frame_passes_through() {
        let frames = array![[0.3, -1.2, 2.0]];
        let out = sap_pool(frames.view(), &params(3, 4.0)).unwrap();
        assert_eq!(out.pooled, frames.row(0).to_owned());
        assert_eq!(out.weights, array![1.0]);
    }

    #[test]
    fn zero_context_gives_frame_mean() {
        let mut p = params(2, 1.0);
        p.mu.fill(0.0);
        let frames = array![[1.0, 2.0], [3.0, 4.0], [5.0, 9.0], [-1.0, 0.0]];
        let out = sap_pool(frames.view(), &p).unwrap();
        assert!(out.weights.iter().all(|w| (w - 0.25).abs() < 1e-15));
        let mean = frames.mean_axis(Axis(0)).unwrap();
        assert!((&out.pooled - &mean).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn empty_frames_rejected() {
        let frames = Array2::<f64>::zeros((0, 3));
        assert!(sap_pool(frames.view(), &params(3, 1.0)).is_err());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let frames = Array2::<f64>::zeros((2, 4));
        assert!(sap_pool(frames.view(), &params(3, 1.0)).is_err());
    }

    #[test]
    fn tensor_layer_matches_reference() {
        let mut store = ParamStore::new(DType::F64);
        let mut init = Init::new(crate::rng::substream(5, &["sap"]));
        let layer = SapLayer::new(&mut store, &mut init, "sap", 4).unwrap();
        let frames = init.normal(&[2, 6, 4], 1.0).unwrap();
        let (pooled, weights) = layer.forward(&frames).unwrap();
        let p = layer.params().unwrap();
        let rows: Vec<Vec<Vec<f64>>> = frames.to_vec3().unwrap();
        let pooled: Vec<Vec<f64>> = pooled.to_vec2().unwrap();
        let weights: Vec<Vec<f64>> = weights.to_vec2().unwrap();
        for b in 0..2 {
            let f = Array2::from_shape_vec((6, 4), rows[b].concat()).unwrap();
            let r = sap_pool(f.view(), &p).unwrap();
            for (x, y) in r.pooled.iter().zip(&pooled[b]) {
                assert!((x - y).abs() < 1e-12);
            }
            for (x, y) in r.weights.iter().zip(&weights[b]) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    fn random_params(rng: &mut impl Rng, d: usize) -> SapParams {
        SapParams {
            w: Array2::from_shape_fn((d, d), |_| rng.gen_range(-1.0..1.0)),
            b: Array1::from_shape_fn(d, |_| rng.gen_range(-0.5..0.5)),
            mu: Array1::from_shape_fn(d, |_| rng.gen_range(-2.0..2.0)),
        }
    }

    /// Relative error with an absolute floor for near-zero gradients.
    fn assert_rel(fd: f64, analytic: f64) {
        let rel = (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1e-3);
        assert!(rel < 1e-4, "finite difference {fd} vs analytic {analytic}");
    }

    #[test]
    fn matches_loop_recomputation() {
        let mut rng = crate::rng::substream(11, &["oracle"]);
        let (t, d) = (5, 8);
        let p = random_params(&mut rng, d);
        let h: Vec<Vec<f64>> = (0..t).map(|_| (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
        let mut logits = vec![0.0; t];
        for (ti, frame) in h.iter().enumerate() {
            for i in 0..d {
                let mut a = p.b[i];
                for j in 0..d {
                    a += p.w[[i, j]] * frame[j];
                }
                logits[ti] += a.tanh() * p.mu[i];
            }
        }
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        let weights: Vec<f64> = logits.iter().map(|l| l.exp() / z).collect();
        let mut pooled = vec![0.0; d];
        for (w, frame) in weights.iter().zip(&h) {
            for j in 0..d {
                pooled[j] += w * frame[j];
            }
        }
        let frames = Array2::from_shape_vec((t, d), h.concat()).unwrap();
        let out = sap_pool(frames.view(), &p).unwrap();
        for (a, b) in out.pooled.iter().zip(&pooled) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in out.weights.iter().zip(&weights) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn weights_on_simplex_for_random_params() {
        let mut rng = crate::rng::substream(12, &["simplex"]);
        for _ in 0..1000 {
            let t = rng.gen_range(1..10);
            let p = random_params(&mut rng, 4);
            let frames = Array2::from_shape_fn((t, 4), |_| rng.gen_range(-3.0..3.0));
            let w = sap_pool(frames.view(), &p).unwrap().weights;
            assert!(w.iter().all(|&v| v >= 0.0));
            assert!((w.sum() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn frame_permutation_equivariance() {
        let mut rng = crate::rng::substream(13, &["perm"]);
        for _ in 0..50 {
            let p = random_params(&mut rng, 6);
            let frames = Array2::from_shape_fn((7, 6), |_| rng.gen_range(-2.0..2.0));
            let mut order: Vec<usize> = (0..7).collect();
            order.shuffle(&mut rng);
            let permuted = frames.select(Axis(0), &order);
            let a = sap_pool(frames.view(), &p).unwrap();
            let b = sap_pool(permuted.view(), &p).unwrap();
            for (x, y) in a.pooled.iter().zip(b.pooled.iter()) {
                assert!((x - y).abs() < 1e-6);
            }
            for (k, &src) in order.iter().enumerate() {
                assert!((b.weights[k] - a.weights[src]).abs() < 1e-12);
            }
        }
    }

    fn loss(frames: &Array2<f64>, p: &SapParams, g: &Array1<f64>) -> f64 {
        sap_pool(frames.view(), p).unwrap().pooled.dot(g)
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = crate::rng::substream(3, &["fd"]);
        let p = random_params(&mut rng, 8);
        let frames = Array2::from_shape_fn((5, 8), |_| rng.gen_range(-1.5..1.5));
        let g = Array1::from_shape_fn(8, |_| rng.gen_range(-1.0..1.0));
        let grads = sap_pool_backward(frames.view(), &p, g.view()).unwrap();
        let h = 1e-6;
        let central = |plus: f64, minus: f64| (plus - minus) / (2.0 * h);
        for idx in 0..frames.len() {
            let (mut a, mut b) = (frames.clone(), frames.clone());
            a.as_slice_mut().unwrap()[idx] += h;
            b.as_slice_mut().unwrap()[idx] -= h;
            let fd = central(loss(&a, &p, &g), loss(&b, &p, &g));
            assert_rel(fd, *grads.frames.iter().nth(idx).unwrap());
        }
        for idx in 0..p.w.len() {
            let (mut a, mut b) = (p.clone(), p.clone());
            a.w.as_slice_mut().unwrap()[idx] += h;
            b.w.as_slice_mut().unwrap()[idx] -= h;
            let fd = central(loss(&frames, &a, &g), loss(&frames, &b, &g));
            assert_rel(fd, *grads.w.iter().nth(idx).unwrap());
        }
        for idx in 0..8 {
            let (mut a, mut b) = (p.clone(), p.clone());
            a.b[idx] += h;
            b.b[idx] -= h;
            assert_rel(central(loss(&frames, &a, &g), loss(&frames, &b, &g)), grads.b[idx]);
            let (mut a, mut b) = (p.clone(), p.clone());
            a.mu[idx] += h;
            b.mu[idx] -= h;
            assert_rel(central(loss(&frames, &a, &g), loss(&frames, &b, &g)), grads.mu[idx]);
        }
    }

    #[test]
    fn tensor_autograd_matches_backward() {
        let mut store = ParamStore::new(DType::F64);
        let mut init = Init::new(crate::rng::substream(9, &["sap"]));
        let layer = SapLayer::new(&mut store, &mut init, "sap", 3).unwrap();
        let frames = candle_core::Var::from_tensor(&init.normal(&[1, 4, 3], 1.0).unwrap()).unwrap();
        let g = array![0.3, -0.5, 1.2];
        let gt = candle_core::Tensor::new(g.as_slice().unwrap(), frames.device()).unwrap();
        let (pooled, _) = layer.forward(frames.as_tensor()).unwrap();
        let grads = pooled.squeeze(0).unwrap().mul(&gt).unwrap().sum_all().unwrap().backward().unwrap();
        let f = Array2::from_shape_vec((4, 3), frames.as_tensor().flatten_all().unwrap().to_vec1().unwrap()).unwrap();
        let reference = sap_pool_backward(f.view(), &layer.params().unwrap(), g.view()).unwrap();
        let got: Vec<f64> = grads.get(frames.as_tensor()).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        for (x, y) in got.iter().zip(reference.frames.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
        let got_mu: Vec<f64> = grads.get(layer.vars()[2].as_tensor()).unwrap().to_vec1().unwrap();
        for (x, y) in got_mu.iter().zip(reference.mu.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
