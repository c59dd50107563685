//! Small tensor toolkit shared by the networks and losses: a named parameter
//! store, replicate-padded convolution, LReLU, depth-to-space and fixed
//! depthwise filters.

pub mod checkpoint;

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{shape_err, Error, Result};
use crate::resample::{AxisWeights, Interpolation};

pub const LRELU_SLOPE: f64 = 0.1;

/// `max(0.1·x, x)`.
pub fn leaky_relu(x: &Tensor) -> Result<Tensor> {
    Ok(x.maximum(&x.affine(LRELU_SLOPE, 0.0)?)?)
}

/// Named trainable tensors, kept in name order.
#[derive(Clone, Debug)]
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    device: Device,
}

impl ParamStore {
    pub fn new(device: &Device) -> Self {
        ParamStore {
            vars: BTreeMap::new(),
            device: device.clone(),
        }
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let value = value.to_dtype(DType::F32)?.to_device(&self.device)?;
        self.vars.insert(name.into(), Var::from_tensor(&value)?);
        Ok(())
    }

    pub fn var(&self, name: &str) -> Result<&Var> {
        self.vars
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))
    }

    /// Tracked handle when `train`, a detached one otherwise.
    pub fn get(&self, name: &str, train: bool) -> Result<Tensor> {
        let v = self.var(name)?;
        Ok(if train {
            v.as_tensor().clone()
        } else {
            v.as_detached_tensor()
        })
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.vars.keys().map(String::as_str)
    }

    pub fn vars(&self) -> impl Iterator<Item = (&str, &Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    /// Detached snapshot of every parameter.
    pub fn tensors(&self) -> BTreeMap<String, Tensor> {
        self.vars
            .iter()
            .map(|(k, v)| (k.clone(), v.as_detached_tensor()))
            .collect()
    }

    /// Overwrites parameters in place. The name sets and shapes must match.
    pub fn load(&self, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
        if tensors.len() != self.vars.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                self.vars.len(),
                tensors.len()
            )));
        }
        for (name, var) in &self.vars {
            let t = tensors
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
            if t.dims() != var.dims() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{name}` has shape {:?}, model expects {:?}",
                    t.dims(),
                    var.dims()
                )));
            }
            var.set(&t.to_dtype(DType::F32)?.to_device(&self.device)?)?;
        }
        Ok(())
    }

    /// Sets every parameter whose name passes `filter` to zero.
    pub fn zero_where(&self, filter: impl Fn(&str) -> bool) -> Result<()> {
        for (name, var) in &self.vars {
            if filter(name) {
                var.set(&var.zeros_like()?)?;
            }
        }
        Ok(())
    }
}

/// Seeded initialiser for convolution weights.
pub struct Initializer {
    rng: ChaCha8Rng,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Initializer {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// He-normal weights for an LReLU network, multiplied by `scale`.
    pub fn kaiming(&mut self, shape: &[usize], fan_in: usize, scale: f64, device: &Device) -> Result<Tensor> {
        let gain = (2.0 / (1.0 + LRELU_SLOPE * LRELU_SLOPE)).sqrt();
        let std = scale * gain / (fan_in.max(1) as f64).sqrt();
        self.normal(shape, std, device)
    }

    pub fn normal(&mut self, shape: &[usize], std: f64, device: &Device) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let data: Vec<f32> = if std > 0.0 {
            let dist = Normal::new(0.0, std).expect("positive std");
            (0..n).map(|_| dist.sample(&mut self.rng) as f32).collect()
        } else {
            vec![0.0; n]
        };
        Ok(Tensor::from_vec(data, shape, device)?)
    }
}

/// Weight and bias names of one convolution.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Conv2d {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl Conv2d {
    pub fn new(name: impl Into<String>, in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Conv2d {
            name: name.into(),
            in_channels,
            out_channels,
            kernel,
            stride: 1,
        }
    }

    pub fn strided(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn num_scalars(&self) -> usize {
        self.out_channels * (self.in_channels * self.kernel * self.kernel + 1)
    }

    pub fn init(&self, store: &mut ParamStore, init: &mut Initializer, scale: f64) -> Result<()> {
        let dev = store.device().clone();
        let fan_in = self.in_channels * self.kernel * self.kernel;
        let w = init.kaiming(
            &[self.out_channels, self.in_channels, self.kernel, self.kernel],
            fan_in,
            scale,
            &dev,
        )?;
        store.insert(self.weight_name(), w)?;
        store.insert(self.bias_name(), Tensor::zeros(self.out_channels, DType::F32, &dev)?)?;
        Ok(())
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor, train: bool) -> Result<Tensor> {
        let w = store.get(&self.weight_name(), train)?;
        let b = store.get(&self.bias_name(), train)?;
        conv2d_same(x, &w, &b, self.stride)
    }
}

/// `y = W∗x + b` with edge-replicate padding. For stride 1 the spatial size is
/// preserved; for stride `s` it is divided by `s`.
pub fn conv2d_same(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize) -> Result<Tensor> {
    let (_, cin, _, _) = x.dims4()?;
    let (cout, wcin, kh, kw) = w.dims4()?;
    if cin != wcin {
        return Err(shape_err!("convolution expects {wcin} input channels, got {cin}"));
    }
    if kh != kw || kh % 2 == 0 {
        return Err(shape_err!("convolution kernel must be square and odd, got {kh}x{kw}"));
    }
    // with r = k/2 replicate padding, (H + 2r - k)/s + 1 = H/s for even H
    let x = replicate_pad(x, kh / 2)?;
    let y = x.conv2d(&w.to_dtype(x.dtype())?, 0, stride, 1, 1)?;
    Ok(y.broadcast_add(&b.to_dtype(y.dtype())?.reshape((1, cout, 1, 1))?)?)
}

pub fn replicate_pad(x: &Tensor, r: usize) -> Result<Tensor> {
    if r == 0 {
        return Ok(x.clone());
    }
    Ok(x.pad_with_same(2, r, r)?.pad_with_same(3, r, r)?)
}

/// Depth-to-space: `(B, 4C, H, W)` to `(B, C, 2H, 2W)`. Output pixel
/// `(2y + i, 2x + j)` of channel `c` comes from input channel `4c + 2i + j`.
pub fn pixel_shuffle(x: &Tensor) -> Result<Tensor> {
    let (b, c4, h, w) = x.dims4()?;
    if c4 % 4 != 0 {
        return Err(Error::Config(format!(
            "depth-to-space needs a multiple of 4 channels, got {c4}"
        )));
    }
    let c = c4 / 4;
    Ok(x
        .reshape((b, c, 2, 2, h, w))?
        .permute((0, 1, 4, 2, 5, 3))?
        .reshape((b, c, 2 * h, 2 * w))?)
}

/// Nearest-neighbour resize to `(oh, ow)`. Integer factors go through a
/// broadcast so the backward pass accumulates into `x` (candle's own
/// upsample op overwrites the gradient of a node that has other consumers).
pub fn upsample_nearest(x: &Tensor, oh: usize, ow: usize) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    if oh % h != 0 || ow % w != 0 {
        return Ok(x.upsample_nearest2d(oh, ow)?);
    }
    let (fh, fw) = (oh / h, ow / w);
    Ok(x
        .reshape((b, c, h, 1, w, 1))?
        .broadcast_as((b, c, h, fh, w, fw))?
        .contiguous()?
        .reshape((b, c, oh, ow))?)
}

/// 2×2 max pooling with stride 2 (odd trailing rows/columns dropped). Built
/// from reshape and max so the gradient reaches the arg-max unscaled; candle's
/// pooling backward multiplies by the tie fraction instead of dividing.
pub fn max_pool2x(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let (oh, ow) = (h / 2, w / 2);
    if oh == 0 || ow == 0 {
        return Err(shape_err!("cannot 2x2-pool a {h}x{w} map"));
    }
    let x = x.narrow(2, 0, 2 * oh)?.narrow(3, 0, 2 * ow)?.contiguous()?;
    Ok(x.reshape((b, c, oh, 2, ow, 2))?.max(5)?.max(3)?)
}

/// Applies a fixed 2-D kernel to every channel independently, with
/// edge-replicate padding so the spatial size is kept.
pub fn depthwise(x: &Tensor, kernel: &[Vec<f64>]) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let kh = kernel.len();
    let kw = kernel[0].len();
    let flat: Vec<f64> = kernel.iter().flatten().copied().collect();
    let k = Tensor::from_vec(flat, (1, 1, kh, kw), x.device())?.to_dtype(x.dtype())?;
    let xs = x.reshape((b * c, 1, h, w))?;
    let xs = xs.pad_with_same(2, kh / 2, kh / 2)?.pad_with_same(3, kw / 2, kw / 2)?;
    Ok(xs.conv2d(&k, 0, 1, 1, 1)?.reshape((b, c, h, w))?)
}

pub fn depthwise3(x: &Tensor, kernel: &[[f64; 3]; 3]) -> Result<Tensor> {
    let rows: Vec<Vec<f64>> = kernel.iter().map(|r| r.to_vec()).collect();
    depthwise(x, &rows)
}

/// Dense separable resampling `(B, C, H, W)` to `(B, C, oh, ow)` using the
/// same taps as the frame resampler. Differentiable in `x`.
pub fn resize_tensor(x: &Tensor, oh: usize, ow: usize, method: Interpolation) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    let rows = dense_weights(h, oh, method, x)?;
    let cols = dense_weights(w, ow, method, x)?.t()?;
    Ok(rows.broadcast_matmul(&x.broadcast_matmul(&cols)?)?)
}

fn dense_weights(input: usize, output: usize, method: Interpolation, like: &Tensor) -> Result<Tensor> {
    let aw = AxisWeights::new(input, output, method);
    let mut m = vec![0f64; output * input];
    for o in 0..output {
        for (i, wt) in aw.taps(o) {
            m[o * input + i] += wt;
        }
    }
    Ok(Tensor::from_vec(m, (output, input), like.device())?.to_dtype(like.dtype())?)
}

pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}
