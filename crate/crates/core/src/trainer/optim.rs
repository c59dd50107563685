//! Gradient pools, global-norm clipping and the parameter update rules.

use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::nn::{scalar, ParamStore};

pub type Grads = BTreeMap<String, Tensor>;

/// Running sum of gradients for one network plus the number of
/// contributions `M` it has received since the last update.
#[derive(Clone, Debug, Default)]
pub struct GradPool {
    sums: Grads,
    count: usize,
}

impl GradPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Names that received a gradient since the last clear.
    pub fn touched(&self) -> impl Iterator<Item = &str> {
        self.sums.keys().map(String::as_str)
    }

    /// Adds the gradients of every parameter of `store` found in `grads`
    /// without counting a contribution.
    pub fn add_grads(&mut self, store: &ParamStore, grads: &GradStore) -> Result<()> {
        for (name, var) in store.vars() {
            if let Some(g) = grads.get(var.as_tensor()) {
                self.add_tensor(name, g)?;
            }
        }
        Ok(())
    }

    pub fn add_tensor(&mut self, name: &str, g: &Tensor) -> Result<()> {
        let g = g.detach().to_dtype(DType::F32)?;
        let next = match self.sums.remove(name) {
            Some(prev) => (prev + g)?,
            None => g,
        };
        self.sums.insert(name.to_string(), next);
        Ok(())
    }

    /// Counts `n` loss evaluations toward `M`.
    pub fn bump(&mut self, n: usize) {
        self.count += n;
    }

    /// Adds one loss evaluation's gradients and counts it.
    pub fn contribute(&mut self, store: &ParamStore, grads: &GradStore) -> Result<()> {
        self.add_grads(store, grads)?;
        self.bump(1);
        Ok(())
    }

    /// `(1/M) Σ ∇L_m`.
    pub fn mean(&self) -> Result<Grads> {
        if self.count == 0 {
            return Err(Error::Consistency("mean of an empty gradient pool".into()));
        }
        let inv = 1.0 / self.count as f64;
        self.sums
            .iter()
            .map(|(k, v)| Ok((k.clone(), v.affine(inv, 0.0)?)))
            .collect()
    }

    pub fn clear(&mut self) {
        self.sums.clear();
        self.count = 0;
    }
}

pub fn global_norm(grads: &Grads) -> Result<f64> {
    let mut s = 0.0;
    for g in grads.values() {
        s += scalar(&g.to_dtype(DType::F64)?.sqr()?.sum_all()?)?;
    }
    Ok(s.sqrt())
}

/// Rescales the whole set so its global L2 norm is at most `clip_norm`.
/// Returns the norm before clipping.
pub fn clip_gradients(grads: &mut Grads, clip_norm: f64) -> Result<f64> {
    if !(clip_norm > 0.0) {
        return Err(config_err!("clip norm must be > 0, got {clip_norm}"));
    }
    let norm = global_norm(grads)?;
    if norm > clip_norm {
        let s = clip_norm / norm;
        for g in grads.values_mut() {
            *g = g.affine(s, 0.0)?;
        }
    }
    Ok(norm)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd,
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimizerKind {
    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::Adam { .. } => "adam",
            OptimizerKind::Sgd => "sgd",
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let OptimizerKind::Adam { beta1, beta2, eps } = *self {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) {
                return Err(config_err!("adam needs betas in [0, 1) and eps > 0"));
            }
        }
        Ok(())
    }
}

/// Update rule plus its per-parameter moments.
#[derive(Clone, Debug)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub step: u64,
    m: Grads,
    v: Grads,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Result<Self> {
        kind.validate()?;
        if !(learning_rate > 0.0) {
            return Err(config_err!("learning rate must be > 0, got {learning_rate}"));
        }
        Ok(Optimizer {
            kind,
            learning_rate,
            step: 0,
            m: Grads::new(),
            v: Grads::new(),
        })
    }

    /// Applies one update to every parameter of `store`. Parameters without
    /// an entry in `grads` get a zero gradient.
    pub fn update(&mut self, store: &ParamStore, grads: &Grads) -> Result<()> {
        self.step += 1;
        let lr = self.learning_rate;
        for (name, var) in store.vars() {
            let theta = var.as_detached_tensor();
            let g = match grads.get(name) {
                Some(g) => g.to_dtype(theta.dtype())?,
                None => theta.zeros_like()?,
            };
            let next = match self.kind {
                OptimizerKind::Sgd => (&theta - g.affine(lr, 0.0)?)?,
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let m = match self.m.get(name) {
                        Some(m) => (m.affine(beta1, 0.0)? + g.affine(1.0 - beta1, 0.0)?)?,
                        None => g.affine(1.0 - beta1, 0.0)?,
                    };
                    let v = match self.v.get(name) {
                        Some(v) => (v.affine(beta2, 0.0)? + g.sqr()?.affine(1.0 - beta2, 0.0)?)?,
                        None => g.sqr()?.affine(1.0 - beta2, 0.0)?,
                    };
                    let t = self.step as i32;
                    let m_hat = m.affine(1.0 / (1.0 - beta1.powi(t)), 0.0)?;
                    let v_hat = v.affine(1.0 / (1.0 - beta2.powi(t)), 0.0)?;
                    let delta = (m_hat / v_hat.sqrt()?.affine(1.0, eps)?)?.affine(lr, 0.0)?;
                    self.m.insert(name.to_string(), m);
                    self.v.insert(name.to_string(), v);
                    (&theta - delta)?
                }
            };
            var.set(&next)?;
        }
        Ok(())
    }

    /// Moment tensors as `m/<name>` and `v/<name>`.
    pub fn state_tensors(&self) -> Grads {
        let mut out = Grads::new();
        for (k, t) in &self.m {
            out.insert(format!("m/{k}"), t.clone());
        }
        for (k, t) in &self.v {
            out.insert(format!("v/{k}"), t.clone());
        }
        out
    }

    pub fn load_state(&mut self, step: u64, tensors: &Grads) -> Result<()> {
        self.step = step;
        self.m.clear();
        self.v.clear();
        for (k, t) in tensors {
            if let Some(n) = k.strip_prefix("m/") {
                self.m.insert(n.to_string(), t.to_dtype(DType::F32)?);
            } else if let Some(n) = k.strip_prefix("v/") {
                self.v.insert(n.to_string(), t.to_dtype(DType::F32)?);
            } else {
                return Err(Error::Checkpoint(format!("unknown optimizer tensor `{k}`")));
            }
        }
        Ok(())
    }
}
