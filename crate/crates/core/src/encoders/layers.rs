//! Parameter store and the handful of layers the residual encoders need.

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var, D};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Named trainable parameters plus non-trainable buffers (batch-norm running
/// statistics). Names are dotted paths, e.g. `stage2.block0.conv1.weight`.
#[derive(Debug)]
pub struct ParamStore {
    dtype: DType,
    device: Device,
    params: BTreeMap<String, Var>,
    buffers: BTreeMap<String, Var>,
}

impl ParamStore {
    pub fn new(dtype: DType) -> Self {
        Self {
            dtype,
            device: Device::Cpu,
            params: BTreeMap::new(),
            buffers: BTreeMap::new(),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    fn insert(map: &mut BTreeMap<String, Var>, name: String, t: Tensor) -> Result<Var> {
        if map.contains_key(&name) {
            return Err(Error::invalid(format!("parameter `{name}` registered twice")));
        }
        let v = Var::from_tensor(&t)?;
        map.insert(name, v.clone());
        Ok(v)
    }

    pub fn param(&mut self, name: impl Into<String>, t: Tensor) -> Result<Var> {
        let t = t.to_dtype(self.dtype)?;
        Self::insert(&mut self.params, name.into(), t)
    }

    pub fn buffer(&mut self, name: impl Into<String>, t: Tensor) -> Result<Var> {
        let t = t.to_dtype(self.dtype)?;
        Self::insert(&mut self.buffers, name.into(), t)
    }

    pub fn params(&self) -> &BTreeMap<String, Var> {
        &self.params
    }

    pub fn buffers(&self) -> &BTreeMap<String, Var> {
        &self.buffers
    }

    pub fn trainable_vars(&self) -> Vec<Var> {
        self.params.values().cloned().collect()
    }

    pub fn num_trainable(&self) -> usize {
        self.params.values().map(|v| v.elem_count()).sum()
    }

    /// Every parameter and buffer, detached.
    pub fn snapshot(&self) -> Result<BTreeMap<String, Tensor>> {
        let mut out = BTreeMap::new();
        for (k, v) in self.params.iter().chain(self.buffers.iter()) {
            out.insert(k.clone(), v.as_tensor().copy()?.detach());
        }
        Ok(out)
    }

    /// Overwrite values from a snapshot; names and shapes must match exactly.
    pub fn restore(&self, snap: &BTreeMap<String, Tensor>) -> Result<()> {
        let expected = self.params.len() + self.buffers.len();
        if snap.len() != expected {
            return Err(Error::Checkpoint(format!(
                "expected {expected} tensors, found {}",
                snap.len()
            )));
        }
        for (k, v) in self.params.iter().chain(self.buffers.iter()) {
            let t = snap
                .get(k)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{k}`")))?;
            if t.dims() != v.dims() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{k}` has shape {:?}, expected {:?}",
                    t.dims(),
                    v.dims()
                )));
            }
            v.set(&t.to_dtype(self.dtype)?)?;
        }
        Ok(())
    }
}

/// Seeded initializers. Values are drawn on the host so initialization is
/// reproducible independent of the tensor backend's own generator.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(rng: ChaCha8Rng) -> Self {
        Self { rng }
    }

    pub fn normal(&mut self, shape: &[usize], std: f64) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let dist = Normal::new(0.0, std).map_err(|e| Error::invalid(e.to_string()))?;
        let v: Vec<f64> = (0..n).map(|_| dist.sample(&mut self.rng)).collect();
        Ok(Tensor::from_vec(v, shape, &Device::Cpu)?)
    }

    pub fn uniform(&mut self, shape: &[usize], bound: f64) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let v: Vec<f64> = (0..n).map(|_| self.rng.gen_range(-bound..=bound)).collect();
        Ok(Tensor::from_vec(v, shape, &Device::Cpu)?)
    }
}

pub fn constant(shape: &[usize], value: f64) -> Result<Tensor> {
    Ok(Tensor::full(value, shape, &Device::Cpu)?)
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    weight: Var,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    /// Bias-free convolution (always followed by batch norm), He-normal init.
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let fan_in = (in_channels * kernel * kernel) as f64;
        let w = init.normal(&[out_channels, in_channels, kernel, kernel], (2.0 / fan_in).sqrt())?;
        Ok(Self {
            weight: store.param(format!("{name}.weight"), w)?,
            stride,
            padding,
        })
    }

    /// Strided inputs are zero-padded at the far edge to a multiple of the
    /// stride: the backend's input gradient assumes both spatial axes
    /// leave the same remainder, which odd-by-even maps would violate.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut x = x.clone();
        if self.stride > 1 {
            for axis in [2, 3] {
                let extra = (self.stride - x.dim(axis)? % self.stride) % self.stride;
                if extra > 0 {
                    x = x.pad_with_zeros(axis, 0, extra)?;
                }
            }
        }
        Ok(x.conv2d(self.weight.as_tensor(), self.padding, self.stride, 1, 1)?)
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    gamma: Var,
    beta: Var,
    running_mean: Var,
    running_var: Var,
    eps: f64,
    momentum: f64,
}

impl BatchNorm2d {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.param(format!("{name}.gamma"), constant(&[channels], 1.0)?)?,
            beta: store.param(format!("{name}.beta"), constant(&[channels], 0.0)?)?,
            running_mean: store.buffer(format!("{name}.running_mean"), constant(&[channels], 0.0)?)?,
            running_var: store.buffer(format!("{name}.running_var"), constant(&[channels], 1.0)?)?,
            eps: 1e-5,
            momentum: 0.1,
        })
    }

    /// Train mode normalizes with batch statistics and updates the running
    /// averages; eval mode uses the frozen running statistics.
    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let c = self.gamma.dim(0)?;
        let shape = (1, c, 1, 1);
        let (mean, var) = if train {
            let mean = x.mean_keepdim((0, 2, 3))?;
            let centered = x.broadcast_sub(&mean)?;
            let var = centered.sqr()?.mean_keepdim((0, 2, 3))?;
            let n = (x.elem_count() / c) as f64;
            let unbiased = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
            let m = self.momentum;
            let rm = ((self.running_mean.as_tensor() * (1.0 - m))? + (mean.flatten_all()?.detach() * m)?)?;
            let rv = ((self.running_var.as_tensor() * (1.0 - m))?
                + (var.flatten_all()?.detach() * (m * unbiased))?)?;
            self.running_mean.set(&rm)?;
            self.running_var.set(&rv)?;
            (mean, var)
        } else {
            (
                self.running_mean.as_tensor().reshape(shape)?,
                self.running_var.as_tensor().reshape(shape)?,
            )
        };
        let inv = (var + self.eps)?.sqrt()?.recip()?;
        let y = x.broadcast_sub(&mean)?.broadcast_mul(&inv)?;
        Ok(y
            .broadcast_mul(&self.gamma.as_tensor().reshape(shape)?)?
            .broadcast_add(&self.beta.as_tensor().reshape(shape)?)?)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    weight: Var,
    bias: Var,
}

impl Linear {
    pub fn new(store: &mut ParamStore, init: &mut Init, name: &str, in_dim: usize, out_dim: usize) -> Result<Self> {
        let bound = 1.0 / (in_dim as f64).sqrt();
        Ok(Self {
            weight: store.param(format!("{name}.weight"), init.uniform(&[out_dim, in_dim], bound)?)?,
            bias: store.param(format!("{name}.bias"), init.uniform(&[out_dim], bound)?)?,
        })
    }

    /// `[B, in] → [B, out]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.matmul(&self.weight.as_tensor().t()?)?.broadcast_add(self.bias.as_tensor())?)
    }
}

/// Numerically stable softmax along `dim`.
pub fn softmax(x: &Tensor, dim: usize) -> Result<Tensor> {
    let max = x.max_keepdim(dim)?.detach();
    let e = x.broadcast_sub(&max)?.exp()?;
    Ok(e.broadcast_div(&e.sum_keepdim(dim)?)?)
}

/// 3×3 max pooling with stride 2 and one pixel of padding, built from
/// differentiable primitives. Inputs must be nonnegative (post-ReLU), so
/// zero padding never wins the max.
pub fn max_pool_3x3_s2(x: &Tensor) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    let p = x.pad_with_zeros(2, 1, 1)?.pad_with_zeros(3, 1, 1)?;
    let mut m: Option<Tensor> = None;
    for di in 0..3 {
        for dj in 0..3 {
            let s = p.narrow(2, di, h)?.narrow(3, dj, w)?;
            m = Some(match m {
                Some(acc) => acc.maximum(&s)?,
                None => s,
            });
        }
    }
    // Keep every second window position along both axes.
    let m = m.expect("nine windows");
    let m = m.pad_with_zeros(2, 0, h % 2)?.pad_with_zeros(3, 0, w % 2)?;
    let (b, c, h2, w2) = m.dims4()?;
    Ok(m.reshape((b, c, h2 / 2, 2, w2 / 2, 2))?
        .narrow(3, 0, 1)?
        .narrow(5, 0, 1)?
        .reshape((b, c, h2 / 2, w2 / 2))?)
}

/// Row-wise L2 normalization of a `[B, D]` tensor.
pub fn l2_normalize_rows(x: &Tensor) -> Result<Tensor> {
    let norm = x.sqr()?.sum_keepdim(D::Minus1)?.sqrt()?;
    Ok(x.broadcast_div(&(norm + 1e-12)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    #[test]
    fn batchnorm_train_normalizes_and_eval_uses_running_stats() {
        let mut store = ParamStore::new(DType::F64);
        let bn = BatchNorm2d::new(&mut store, "bn", 2).unwrap();
        let mut init = Init::new(substream(0, &["t"]));
        let x = (init.normal(&[4, 2, 3, 3], 2.0).unwrap() + 5.0).unwrap();
        let y = bn.forward(&x, true).unwrap();
        let m: Vec<f64> = y.mean_keepdim((0, 2, 3)).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        assert!(m.iter().all(|v| v.abs() < 1e-10));
        let rm: Vec<f64> = bn.running_mean.as_tensor().to_vec1().unwrap();
        assert!(rm.iter().all(|v| *v > 0.3), "{rm:?}");
        let a = bn.forward(&x, false).unwrap();
        let b = bn.forward(&x, false).unwrap();
        assert_eq!(a.flatten_all().unwrap().to_vec1::<f64>().unwrap(), b.flatten_all().unwrap().to_vec1::<f64>().unwrap());
    }

    #[test]
    fn max_pool_matches_backend_pooling() {
        let mut init = Init::new(substream(2, &["pool"]));
        for (h, w) in [(8, 8), (7, 9), (5, 4)] {
            let x = init.normal(&[2, 3, h, w], 1.0).unwrap().relu().unwrap();
            let ours = max_pool_3x3_s2(&x).unwrap();
            let reference = x
                .pad_with_zeros(2, 1, 1)
                .unwrap()
                .pad_with_zeros(3, 1, 1)
                .unwrap()
                .max_pool2d_with_stride(3, 2)
                .unwrap();
            assert_eq!(ours.dims(), reference.dims());
            let a: Vec<f64> = ours.flatten_all().unwrap().to_vec1().unwrap();
            let b: Vec<f64> = reference.flatten_all().unwrap().to_vec1().unwrap();
            assert_eq!(a, b);
            let v = Var::from_tensor(&x).unwrap();
            let g = max_pool_3x3_s2(v.as_tensor()).unwrap().sum_all().unwrap().backward().unwrap();
            assert_eq!(g.get(v.as_tensor()).unwrap().dims(), x.dims());
        }
    }

    #[test]
    fn strided_conv_gradient_on_mixed_parity_input() {
        let mut store = ParamStore::new(DType::F64);
        let mut init = Init::new(substream(3, &["conv"]));
        let conv = Conv2d::new(&mut store, &mut init, "c", 2, 3, 3, 2, 1).unwrap();
        let x = Var::from_tensor(&init.normal(&[1, 2, 10, 7], 1.0).unwrap()).unwrap();
        let y = conv.forward(x.as_tensor()).unwrap();
        assert_eq!(y.dims(), &[1, 3, 5, 4]);
        let g = y.sum_all().unwrap().backward().unwrap();
        assert_eq!(g.get(x.as_tensor()).unwrap().dims(), &[1, 2, 10, 7]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = Tensor::new(&[[1.0f64, 2.0, 3.0], [1000.0, 1000.0, 1000.0]], &Device::Cpu).unwrap();
        let s = softmax(&x, 1).unwrap().to_vec2::<f64>().unwrap();
        for row in &s {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!((s[1][0] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn snapshot_restore_roundtrip() {
        let mut store = ParamStore::new(DType::F32);
        let mut init = Init::new(substream(1, &["t"]));
        let lin = Linear::new(&mut store, &mut init, "fc", 3, 2).unwrap();
        let snap = store.snapshot().unwrap();
        let x = Tensor::ones((1, 3), DType::F32, &Device::Cpu).unwrap();
        let before = lin.forward(&x).unwrap().to_vec2::<f32>().unwrap();
        store.params()["fc.bias"].set(&Tensor::zeros(2, DType::F32, &Device::Cpu).unwrap()).unwrap();
        store.restore(&snap).unwrap();
        assert_eq!(lin.forward(&x).unwrap().to_vec2::<f32>().unwrap(), before);
        assert_eq!(store.num_trainable(), 8);
    }
}
