//! Generator networks: dense residual blocks, RRDBs, 3-D non-local blocks
//! and the sub-pixel ×2 head, assembled into the two model variants.

mod nonlocal;

pub use nonlocal::{NonLocalBlock, NonLocalSpec, Pairwise};

use std::path::Path;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, shape_err, Error, Result};
use crate::nn::checkpoint::{Checkpoint, CheckpointKind, StorageDtype};
use crate::nn::{leaky_relu, pixel_shuffle, resize_tensor, Conv2d, Initializer, ParamStore};
use crate::resample::Interpolation;
use crate::seqcore::FrameSequence;

/// Anything that maps a `(N, 3, H, W)` sequence to `(N, 3, 2H, 2W)`.
pub trait Upscaler {
    /// `train` asks for a differentiable graph through the trainable
    /// parameters; otherwise parameters are detached.
    fn upscale_tensor(&self, x: &Tensor, train: bool) -> Result<Tensor>;

    fn params(&self) -> Option<&ParamStore> {
        None
    }
}

/// Full-frame ×2 or cascaded ×4 upscaling of a sequence, without gradients.
pub fn upscale_sequence(model: &dyn Upscaler, seq: &FrameSequence, scale: usize) -> Result<FrameSequence> {
    let passes = match scale {
        2 => 1,
        4 => 2,
        _ => return Err(config_err!("upscale factor must be 2 or 4, got {scale}")),
    };
    let mut x = seq.to_tensor(&Device::Cpu, DType::F32)?;
    for _ in 0..passes {
        x = model.upscale_tensor(&x, false)?.detach();
    }
    FrameSequence::from_tensor(&x)
}

/// Resampling baseline with no parameters.
#[derive(Clone, Copy, Debug)]
pub struct InterpolationUpscaler(pub Interpolation);

impl Upscaler for InterpolationUpscaler {
    fn upscale_tensor(&self, x: &Tensor, _train: bool) -> Result<Tensor> {
        let (_, _, h, w) = x.dims4()?;
        Ok(resize_tensor(x, 2 * h, 2 * w, self.0)?.clamp(0.0, 1.0)?)
    }
}

/// Exact inverse of a known downsampling: each input is looked up on the
/// aligned grid of a precomputed pyramid of the ground truth and the matching
/// region one level finer is returned.
#[derive(Clone, Debug)]
pub struct LookupOracle {
    levels: Vec<(usize, FrameSequence)>,
}

impl LookupOracle {
    pub fn new(hr: &FrameSequence, method: Interpolation, factors: &[usize]) -> Result<Self> {
        let mut levels = vec![(1, hr.clone())];
        for &f in factors {
            levels.push((f, crate::seqcore::downsample(hr, f, method)?));
        }
        Ok(LookupOracle { levels })
    }

    fn level(&self, factor: usize) -> Option<&FrameSequence> {
        self.levels.iter().find(|(f, _)| *f == factor).map(|(_, s)| s)
    }

    fn region(seq: &FrameSequence, y0: usize, x0: usize, h: usize, w: usize) -> FrameSequence {
        FrameSequence::from_fn(seq.frames(), h, w, |f, c, y, x| seq.get(f, c, y0 + y, x0 + x))
            .expect("region inside level")
    }

    fn matches(seq: &FrameSequence, probe: &FrameSequence, y0: usize, x0: usize) -> bool {
        let (t, _, h, w) = probe.shape();
        (0..t).all(|f| {
            (0..3).all(|c| {
                (0..h).all(|y| (0..w).all(|x| (seq.get(f, c, y0 + y, x0 + x) - probe.get(f, c, y, x)).abs() <= 1e-6))
            })
        })
    }
}

impl Upscaler for LookupOracle {
    fn upscale_tensor(&self, x: &Tensor, _train: bool) -> Result<Tensor> {
        let probe = FrameSequence::from_tensor(x)?;
        let (t, _, h, w) = probe.shape();
        for (f, lvl) in &self.levels {
            let Some(parent) = self.level(f / 2).filter(|_| *f >= 2) else {
                continue;
            };
            if lvl.frames() != t || lvl.height() < h || lvl.width() < w {
                continue;
            }
            for y0 in (0..=lvl.height() - h).step_by(h) {
                for x0 in (0..=lvl.width() - w).step_by(w) {
                    if Self::matches(lvl, &probe, y0, x0) {
                        let out = Self::region(parent, 2 * y0, 2 * x0, 2 * h, 2 * w);
                        return out.to_tensor(x.device(), x.dtype());
                    }
                }
            }
        }
        Err(Error::Consistency(format!("{h}x{w} input not found in the oracle pyramid")))
    }
}

/// Dense block: five 3×3 conv + LReLU stages, each fed with the
/// concatenation of every earlier stage output and the block input, then a
/// 1×1 compression `Z`. Output `(1/3)·Z + (2/3)·x`.
#[derive(Clone, Debug)]
pub struct ResidualBlock {
    convs: Vec<Conv2d>,
    compress: Conv2d,
}

pub const DENSE_STAGES: usize = 5;

impl ResidualBlock {
    pub fn new(prefix: &str, channels: usize, growth: usize) -> Self {
        let convs = (0..DENSE_STAGES)
            .map(|k| Conv2d::new(format!("{prefix}.conv{k}"), channels + k * growth, growth, 3))
            .collect();
        let compress = Conv2d::new(
            format!("{prefix}.compress"),
            channels + DENSE_STAGES * growth,
            channels,
            1,
        );
        ResidualBlock { convs, compress }
    }

    pub fn init(&self, store: &mut ParamStore, init: &mut Initializer) -> Result<()> {
        for c in &self.convs {
            c.init(store, init, 0.1)?;
        }
        self.compress.init(store, init, 0.1)
    }

    fn num_scalars(&self) -> usize {
        self.convs.iter().map(Conv2d::num_scalars).sum::<usize>() + self.compress.num_scalars()
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor, train: bool) -> Result<Tensor> {
        // newest first: Z_k ‖ … ‖ Z_0 ‖ X
        let mut feats = vec![x.clone()];
        for conv in &self.convs {
            let inp = Tensor::cat(&feats, 1)?;
            let z = leaky_relu(&conv.forward(store, &inp, train)?)?;
            feats.insert(0, z);
        }
        let z = self.compress.forward(store, &Tensor::cat(&feats, 1)?, train)?;
        Ok((z.affine(1.0 / 3.0, 0.0)? + x.affine(2.0 / 3.0, 0.0)?)?)
    }
}

/// `Res₃(Res₂(Res₁(x))) + x`.
#[derive(Clone, Debug)]
pub struct Rrdb {
    blocks: [ResidualBlock; 3],
}

impl Rrdb {
    pub fn new(prefix: &str, channels: usize, growth: usize) -> Self {
        Rrdb {
            blocks: [0, 1, 2].map(|i| ResidualBlock::new(&format!("{prefix}.res{i}"), channels, growth)),
        }
    }

    pub fn blocks(&self) -> &[ResidualBlock; 3] {
        &self.blocks
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor, train: bool) -> Result<Tensor> {
        let mut h = x.clone();
        for b in &self.blocks {
            h = b.forward(store, &h, train)?;
        }
        Ok((h + x)?)
    }
}

#[derive(Clone, Debug)]
enum Block {
    Residual(ResidualBlock),
    Rrdb(Rrdb),
}

impl Block {
    fn forward(&self, store: &ParamStore, x: &Tensor, train: bool) -> Result<Tensor> {
        match self {
            Block::Residual(b) => b.forward(store, x, train),
            Block::Rrdb(b) => b.forward(store, x, train),
        }
    }

    fn init(&self, store: &mut ParamStore, init: &mut Initializer) -> Result<()> {
        match self {
            Block::Residual(b) => b.init(store, init),
            Block::Rrdb(b) => b.blocks.iter().try_for_each(|r| r.init(store, init)),
        }
    }

    fn num_scalars(&self) -> usize {
        match self {
            Block::Residual(b) => b.num_scalars(),
            Block::Rrdb(b) => b.blocks.iter().map(ResidualBlock::num_scalars).sum(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    RrdbBased,
    ResidualBased,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::RrdbBased => "rrdb_based",
            Variant::ResidualBased => "residual_based",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "rrdb_based" => Ok(Variant::RrdbBased),
            "residual_based" => Ok(Variant::ResidualBased),
            _ => Err(config_err!("unknown generator variant `{s}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub variant: Variant,
    pub base_channels: usize,
    pub num_blocks: usize,
    /// A non-local block follows every listed block index (1-based; 0 puts
    /// one before the first block).
    pub nonlocal_positions: Vec<usize>,
    pub pairwise: Pairwise,
    /// Dense stage width; `base_channels / 2` when unset.
    pub growth: Option<usize>,
    /// Non-local bottleneck width; `base_channels / 2` when unset.
    pub bottleneck: Option<usize>,
    pub nonlocal_subsample: bool,
    /// Add a bicubic ×2 of the input to the network output.
    pub global_skip: bool,
}

impl GeneratorSpec {
    pub fn rrdb_based() -> Self {
        GeneratorSpec {
            variant: Variant::RrdbBased,
            base_channels: 64,
            num_blocks: 8,
            nonlocal_positions: vec![4, 8],
            pairwise: Pairwise::DotProduct,
            growth: None,
            bottleneck: None,
            nonlocal_subsample: true,
            global_skip: true,
        }
    }

    pub fn residual_based() -> Self {
        GeneratorSpec {
            variant: Variant::ResidualBased,
            base_channels: 48,
            num_blocks: 6,
            nonlocal_positions: vec![6],
            ..Self::rrdb_based()
        }
    }

    pub fn default_for(variant: Variant) -> Self {
        match variant {
            Variant::RrdbBased => Self::rrdb_based(),
            Variant::ResidualBased => Self::residual_based(),
        }
    }

    pub fn growth(&self) -> usize {
        self.growth.unwrap_or((self.base_channels / 2).max(1))
    }

    pub fn bottleneck(&self) -> usize {
        self.bottleneck.unwrap_or((self.base_channels / 2).max(1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 || self.growth() == 0 || self.bottleneck() == 0 {
            return Err(config_err!("generator widths must be positive"));
        }
        if let Some(p) = self.nonlocal_positions.iter().find(|p| **p > self.num_blocks) {
            return Err(config_err!(
                "non-local position {p} is past the last of {} blocks",
                self.num_blocks
            ));
        }
        Ok(())
    }

    fn nonlocal_spec(&self) -> NonLocalSpec {
        NonLocalSpec {
            channels: self.base_channels,
            bottleneck: self.bottleneck(),
            pairwise: self.pairwise,
            subsample: self.nonlocal_subsample,
        }
    }
}

/// Four stages: channel expansion, block stack with non-local attention,
/// reconstruction with a long skip, sub-pixel ×2 and compression to RGB.
#[derive(Clone, Debug)]
pub struct Generator {
    spec: GeneratorSpec,
    params: ParamStore,
    head: Conv2d,
    blocks: Vec<Block>,
    nonlocal: Vec<(usize, NonLocalBlock)>,
    recon: Conv2d,
    up: Conv2d,
    tail: Conv2d,
}

impl Generator {
    pub fn new(spec: GeneratorSpec, seed: u64, device: &Device) -> Result<Self> {
        spec.validate()?;
        let c = spec.base_channels;
        let growth = spec.growth();
        let blocks = (0..spec.num_blocks)
            .map(|i| {
                let prefix = format!("body.{i}");
                match spec.variant {
                    Variant::RrdbBased => Block::Rrdb(Rrdb::new(&prefix, c, growth)),
                    Variant::ResidualBased => Block::Residual(ResidualBlock::new(&prefix, c, growth)),
                }
            })
            .collect();
        let mut positions = spec.nonlocal_positions.clone();
        positions.sort_unstable();
        positions.dedup();
        let nonlocal = positions
            .into_iter()
            .map(|p| (p, NonLocalBlock::new(&format!("nonlocal.{p}"), spec.nonlocal_spec())))
            .collect();
        let mut g = Generator {
            head: Conv2d::new("head", 3, c, 3),
            blocks,
            nonlocal,
            recon: Conv2d::new("recon", c, c, 3),
            up: Conv2d::new("up", c, 4 * c, 3),
            tail: Conv2d::new("tail", c, 3, 3),
            params: ParamStore::new(device),
            spec,
        };
        let mut init = Initializer::new(seed);
        let mut store = ParamStore::new(device);
        g.head.init(&mut store, &mut init, 1.0)?;
        for b in &g.blocks {
            b.init(&mut store, &mut init)?;
        }
        for (_, nl) in &g.nonlocal {
            nl.init(&mut store, &mut init)?;
        }
        g.recon.init(&mut store, &mut init, 1.0)?;
        g.up.init(&mut store, &mut init, 1.0)?;
        // small output residual: an untrained net stays close to the bicubic skip
        g.tail.init(&mut store, &mut init, 0.1)?;
        g.params = store;
        Ok(g)
    }

    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    pub fn store(&self) -> &ParamStore {
        &self.params
    }

    pub fn num_scalars(&self) -> usize {
        self.head.num_scalars()
            + self.blocks.iter().map(Block::num_scalars).sum::<usize>()
            + self.nonlocal.iter().map(|(_, n)| n.num_scalars()).sum::<usize>()
            + self.recon.num_scalars()
            + self.up.num_scalars()
            + self.tail.num_scalars()
    }

    pub fn nonlocal_blocks(&self) -> impl Iterator<Item = &NonLocalBlock> {
        self.nonlocal.iter().map(|(_, n)| n)
    }

    fn attend(&self, after: usize, h: Tensor, train: bool) -> Result<Tensor> {
        let mut h = h;
        for (_, nl) in self.nonlocal.iter().filter(|(p, _)| *p == after) {
            h = nl.forward(&self.params, &h, train)?;
        }
        Ok(h)
    }

    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let (_, c, h, w) = x
            .dims4()
            .map_err(|_| shape_err!("generator expects (N, 3, H, W), got {:?}", x.dims()))?;
        if c != 3 {
            return Err(shape_err!("generator expects 3 input channels, got {c}"));
        }
        let p = &self.params;
        let feat = leaky_relu(&self.head.forward(p, x, train)?)?;
        let mut body = self.attend(0, feat.clone(), train)?;
        for (i, b) in self.blocks.iter().enumerate() {
            body = b.forward(p, &body, train)?;
            body = self.attend(i + 1, body, train)?;
        }
        let body = (leaky_relu(&self.recon.forward(p, &body, train)?)? + feat)?;
        let up = leaky_relu(&pixel_shuffle(&self.up.forward(p, &body, train)?)?)?;
        let mut out = self.tail.forward(p, &up, train)?;
        if self.spec.global_skip {
            out = (out + resize_tensor(x, 2 * h, 2 * w, Interpolation::Bicubic)?)?;
        }
        Ok(out.clamp(0.0, 1.0)?)
    }

    pub fn forward_seq(&self, seq: &FrameSequence) -> Result<FrameSequence> {
        let x = seq.to_tensor(self.params.device(), DType::F32)?;
        FrameSequence::from_tensor(&self.forward(&x, false)?)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        Ok(Checkpoint::new(
            CheckpointKind::Generator,
            serde_json::to_value(&self.spec)?,
            self.params.tensors(),
        ))
    }

    pub fn from_checkpoint(ck: &Checkpoint, device: &Device) -> Result<Self> {
        ck.expect_kind(CheckpointKind::Generator)?;
        let spec: GeneratorSpec = serde_json::from_value(ck.spec.clone())
            .map_err(|e| Error::Checkpoint(format!("generator spec: {e}")))?;
        let g = Generator::new(spec, 0, device)?;
        g.params.load(&ck.tensors)?;
        Ok(g)
    }

    pub fn save(&self, path: &Path, dtype: StorageDtype) -> Result<()> {
        self.to_checkpoint()?.save(path, dtype)
    }

    pub fn load(path: &Path, device: &Device) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path, device)?, device)
    }
}

impl Upscaler for Generator {
    fn upscale_tensor(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        self.forward(x, train)
    }

    fn params(&self) -> Option<&ParamStore> {
        Some(&self.params)
    }
}
