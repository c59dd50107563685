//! U-Net discriminator with a per-pixel logit map.

use std::path::Path;

use candle_core::{Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, shape_err, Error, Result};
use crate::nn::checkpoint::{Checkpoint, CheckpointKind, StorageDtype};
use crate::nn::{leaky_relu, upsample_nearest, Conv2d, Initializer, ParamStore};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminatorSpec {
    pub base_channels: usize,
    /// Number of down (and up) levels.
    pub depth: usize,
}

impl Default for DiscriminatorSpec {
    fn default() -> Self {
        DiscriminatorSpec {
            base_channels: 32,
            depth: 3,
        }
    }
}

impl DiscriminatorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 || self.depth == 0 {
            return Err(config_err!("discriminator needs positive width and depth"));
        }
        if self.depth > 8 {
            return Err(config_err!("discriminator depth {} is too large", self.depth));
        }
        Ok(())
    }

    fn width(&self, level: usize) -> usize {
        self.base_channels << level
    }
}

/// Output shape of one named stage for a given input size.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerShape {
    pub name: String,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Clone, Debug)]
struct UpLevel {
    up: Conv2d,
    fuse: Conv2d,
}

#[derive(Clone, Debug)]
pub struct Discriminator {
    spec: DiscriminatorSpec,
    params: ParamStore,
    stem: Conv2d,
    down: Vec<Conv2d>,
    up: Vec<UpLevel>,
    head: Conv2d,
}

impl Discriminator {
    pub fn new(spec: DiscriminatorSpec, seed: u64, device: &Device) -> Result<Self> {
        spec.validate()?;
        let stem = Conv2d::new("stem", 3, spec.base_channels, 3);
        let down = (1..=spec.depth)
            .map(|l| Conv2d::new(format!("down.{l}"), spec.width(l - 1), spec.width(l), 3).strided(2))
            .collect::<Vec<_>>();
        // decoder levels listed from the coarsest
        let up = (1..=spec.depth)
            .rev()
            .map(|l| UpLevel {
                up: Conv2d::new(format!("up.{l}.conv"), spec.width(l), spec.width(l - 1), 3),
                fuse: Conv2d::new(format!("up.{l}.fuse"), 2 * spec.width(l - 1), spec.width(l - 1), 3),
            })
            .collect::<Vec<_>>();
        let head = Conv2d::new("head", spec.base_channels, 1, 1);
        let mut params = ParamStore::new(device);
        let mut init = Initializer::new(seed);
        stem.init(&mut params, &mut init, 1.0)?;
        for c in &down {
            c.init(&mut params, &mut init, 1.0)?;
        }
        for u in &up {
            u.up.init(&mut params, &mut init, 1.0)?;
            u.fuse.init(&mut params, &mut init, 1.0)?;
        }
        head.init(&mut params, &mut init, 1.0)?;
        Ok(Discriminator {
            spec,
            params,
            stem,
            down,
            up,
            head,
        })
    }

    pub fn spec(&self) -> &DiscriminatorSpec {
        &self.spec
    }

    pub fn store(&self) -> &ParamStore {
        &self.params
    }

    fn check_size(&self, h: usize, w: usize) -> Result<()> {
        let m = 1usize << self.spec.depth;
        if h % m != 0 || w % m != 0 {
            return Err(shape_err!(
                "discriminator of depth {} needs sides divisible by {m}, got {h}x{w}",
                self.spec.depth
            ));
        }
        Ok(())
    }

    /// Stage-by-stage output shapes for an `h × w` input.
    pub fn layer_shapes(&self, h: usize, w: usize) -> Result<Vec<LayerShape>> {
        self.check_size(h, w)?;
        let shape = |name: String, channels, level: usize| LayerShape {
            name,
            channels,
            height: h >> level,
            width: w >> level,
        };
        let mut out = vec![shape(self.stem.name.clone(), self.spec.width(0), 0)];
        for (l, c) in (1..).zip(&self.down) {
            out.push(shape(c.name.clone(), self.spec.width(l), l));
        }
        for (l, u) in (1..=self.spec.depth).rev().zip(&self.up) {
            out.push(shape(u.up.name.clone(), self.spec.width(l - 1), l - 1));
            out.push(shape(u.fuse.name.clone(), self.spec.width(l - 1), l - 1));
        }
        out.push(shape(self.head.name.clone(), 1, 0));
        Ok(out)
    }

    /// `(B, 3, H, W)` frames to `(B, 1, H, W)` logits.
    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let (_, c, h, w) = x
            .dims4()
            .map_err(|_| shape_err!("discriminator expects (B, 3, H, W), got {:?}", x.dims()))?;
        if c != 3 {
            return Err(shape_err!("discriminator expects 3 channels, got {c}"));
        }
        self.check_size(h, w)?;
        let p = &self.params;
        let mut skips = vec![leaky_relu(&self.stem.forward(p, x, train)?)?];
        for conv in &self.down {
            let prev = skips.last().expect("stem output");
            skips.push(leaky_relu(&conv.forward(p, prev, train)?)?);
        }
        let mut cur = skips.pop().expect("bottom level");
        for u in &self.up {
            let skip = skips.pop().expect("one skip per level");
            let (_, _, sh, sw) = skip.dims4()?;
            let up = leaky_relu(&u.up.forward(p, &upsample_nearest(&cur, sh, sw)?, train)?)?;
            cur = leaky_relu(&u.fuse.forward(p, &Tensor::cat(&[up, skip], 1)?, train)?)?;
        }
        self.head.forward(p, &cur, train)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        Ok(Checkpoint::new(
            CheckpointKind::Discriminator,
            serde_json::to_value(&self.spec)?,
            self.params.tensors(),
        ))
    }

    pub fn from_checkpoint(ck: &Checkpoint, device: &Device) -> Result<Self> {
        ck.expect_kind(CheckpointKind::Discriminator)?;
        let spec: DiscriminatorSpec = serde_json::from_value(ck.spec.clone())
            .map_err(|e| Error::Checkpoint(format!("discriminator spec: {e}")))?;
        let d = Discriminator::new(spec, 0, device)?;
        d.params.load(&ck.tensors)?;
        Ok(d)
    }

    pub fn save(&self, path: &Path, dtype: StorageDtype) -> Result<()> {
        self.to_checkpoint()?.save(path, dtype)
    }

    pub fn load(path: &Path, device: &Device) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path, device)?, device)
    }
}
