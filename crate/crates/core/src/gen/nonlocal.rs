use candle_core::{Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, shape_err, Result};
use crate::nn::{max_pool2x, Conv2d, Initializer, ParamStore};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pairwise {
    Gaussian,
    EmbeddedGaussian,
    #[default]
    DotProduct,
    Concatenation,
}

impl Pairwise {
    pub const ALL: [Pairwise; 4] = [
        Pairwise::Gaussian,
        Pairwise::EmbeddedGaussian,
        Pairwise::DotProduct,
        Pairwise::Concatenation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Pairwise::Gaussian => "gaussian",
            Pairwise::EmbeddedGaussian => "embedded_gaussian",
            Pairwise::DotProduct => "dot_product",
            Pairwise::Concatenation => "concatenation",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| config_err!("unknown pairwise function `{s}`"))
    }

    fn embedded(self) -> bool {
        !matches!(self, Pairwise::Gaussian)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NonLocalSpec {
    pub channels: usize,
    pub bottleneck: usize,
    pub pairwise: Pairwise,
    /// 2×2 max-pool the key and value maps before the affinity.
    pub subsample: bool,
}

impl NonLocalSpec {
    pub fn new(channels: usize, pairwise: Pairwise) -> Self {
        NonLocalSpec {
            channels,
            bottleneck: (channels / 2).max(1),
            pairwise,
            subsample: false,
        }
    }
}

/// Affinity rows evaluated at once when no gradient is needed.
const INFERENCE_CHUNK_ENTRIES: usize = 1 << 22;

/// Non-local block over all `T·H·W` positions of a `(T, C, H, W)` sequence:
/// `z = W_z ∗ y + x`, `y_i = (1/C(x)) Σ_j f(x_i, x_j) g(x_j)`.
#[derive(Clone, Debug)]
pub struct NonLocalBlock {
    pub spec: NonLocalSpec,
    prefix: String,
    theta: Conv2d,
    phi: Conv2d,
    g: Conv2d,
    w_z: Conv2d,
}

impl NonLocalBlock {
    pub fn new(prefix: &str, spec: NonLocalSpec) -> Self {
        let (c, b) = (spec.channels, spec.bottleneck);
        NonLocalBlock {
            theta: Conv2d::new(format!("{prefix}.theta"), c, b, 1),
            phi: Conv2d::new(format!("{prefix}.phi"), c, b, 1),
            g: Conv2d::new(format!("{prefix}.g"), c, b, 1),
            w_z: Conv2d::new(format!("{prefix}.w_z"), b, c, 1),
            prefix: prefix.to_string(),
            spec,
        }
    }

    pub fn w_f_name(&self) -> String {
        format!("{}.w_f", self.prefix)
    }

    pub fn w_z_names(&self) -> [String; 2] {
        [self.w_z.weight_name(), self.w_z.bias_name()]
    }

    pub fn init(&self, store: &mut ParamStore, init: &mut Initializer) -> Result<()> {
        if self.spec.pairwise.embedded() {
            self.theta.init(store, init, 1.0)?;
            self.phi.init(store, init, 1.0)?;
        }
        self.g.init(store, init, 1.0)?;
        self.w_z.init(store, init, 0.1)?;
        if self.spec.pairwise == Pairwise::Concatenation {
            let b = self.spec.bottleneck;
            let w = init.normal(&[2 * b], (1.0 / (2 * b) as f64).sqrt(), store.device())?;
            store.insert(self.w_f_name(), w)?;
        }
        Ok(())
    }

    pub fn num_scalars(&self) -> usize {
        let mut n = self.g.num_scalars() + self.w_z.num_scalars();
        if self.spec.pairwise.embedded() {
            n += self.theta.num_scalars() + self.phi.num_scalars();
        }
        if self.spec.pairwise == Pairwise::Concatenation {
            n += 2 * self.spec.bottleneck;
        }
        n
    }

    /// `(T, C, H, W)` to `(T·H·W, C)`, position-major in `(t, y, x)` order.
    fn positions(t: &Tensor) -> Result<Tensor> {
        let (n, c, h, w) = t.dims4()?;
        Ok(t.permute((0, 2, 3, 1))?.reshape((n * h * w, c))?)
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor, train: bool) -> Result<Tensor> {
        let (n, c, h, w) = x.dims4()?;
        if c != self.spec.channels {
            return Err(shape_err!("non-local block expects {} channels, got {c}", self.spec.channels));
        }
        let (q_map, k_map) = if self.spec.pairwise.embedded() {
            (
                self.theta.forward(store, x, train)?,
                self.phi.forward(store, x, train)?,
            )
        } else {
            (x.clone(), x.clone())
        };
        let mut v_map = self.g.forward(store, x, train)?;
        let mut k_map = k_map;
        if self.spec.subsample && h % 2 == 0 && w % 2 == 0 && h * w >= 4 {
            k_map = max_pool2x(&k_map)?;
            v_map = max_pool2x(&v_map)?;
        }
        let q = Self::positions(&q_map)?;
        let k = Self::positions(&k_map)?;
        let v = Self::positions(&v_map)?;
        let p_keys = k.dim(0)?;
        let w_f = match self.spec.pairwise {
            Pairwise::Concatenation => {
                let wf = store.get(&self.w_f_name(), train)?.to_dtype(x.dtype())?;
                let b = self.spec.bottleneck;
                Some((wf.narrow(0, 0, b)?.reshape((b, 1))?, wf.narrow(0, b, b)?.reshape((b, 1))?))
            }
            _ => None,
        };
        let rows = q.dim(0)?;
        let chunk = if train {
            rows
        } else {
            (INFERENCE_CHUNK_ENTRIES / p_keys.max(1)).clamp(1, rows)
        };
        let kt = k.t()?;
        let mut parts = Vec::new();
        let mut start = 0;
        while start < rows {
            let len = chunk.min(rows - start);
            let qc = q.narrow(0, start, len)?;
            let affinity = match self.spec.pairwise {
                Pairwise::Gaussian | Pairwise::EmbeddedGaussian => {
                    let s = qc.matmul(&kt)?;
                    let m = s.max_keepdim(D::Minus1)?.detach();
                    let e = s.broadcast_sub(&m)?.exp()?;
                    e.broadcast_div(&e.sum_keepdim(D::Minus1)?)?
                }
                Pairwise::DotProduct => qc.matmul(&kt)?.affine(1.0 / p_keys as f64, 0.0)?,
                Pairwise::Concatenation => {
                    let (wq, wk) = w_f.as_ref().expect("concatenation weights");
                    let a = qc.matmul(wq)?;
                    let b = k.matmul(wk)?.t()?;
                    a.broadcast_add(&b)?.relu()?.affine(1.0 / p_keys as f64, 0.0)?
                }
            };
            parts.push(affinity.matmul(&v)?);
            start += len;
        }
        let y = if parts.len() == 1 {
            parts.pop().expect("one part")
        } else {
            Tensor::cat(&parts, 0)?
        };
        let y = y
            .reshape((n, h, w, self.spec.bottleneck))?
            .permute((0, 3, 1, 2))?
            .contiguous()?;
        Ok((self.w_z.forward(store, &y, train)? + x)?)
    }
}
