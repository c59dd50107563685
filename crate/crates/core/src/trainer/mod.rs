//! Patch-grid training: every crop is split into LR patches, each patch is
//! upscaled and scored on its own, the patch outputs are reassembled for the
//! whole-image terms, and both networks take one clipped update per crop.

mod optim;

pub use optim::{clip_gradients, global_norm, GradPool, Grads, Optimizer, OptimizerKind};

use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor, Var};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::dataset::Dataset;
use crate::degrade::{apply_plan, DegradationPlan, StepRecord};
use crate::disc::{Discriminator, DiscriminatorSpec};
use crate::error::{config_err, Error, Result};
use crate::gen::{Generator, GeneratorSpec, Upscaler};
use crate::loss::{
    adversarial_loss, weighted_loss, AdversarialSide, ConvFeatureExtractor, ExtractorSpec, FeatureExtractor,
    LossBundle, LossConfig, LossInputs, LossTerm,
};
use crate::nn::checkpoint::{Checkpoint, CheckpointKind, StorageDtype};
use crate::nn::scalar;
use crate::resample::Interpolation;
use crate::rng::{derive_seed, rng_for, stream_id};
use crate::seqcore::{augment, crop_fixed, downsample, AugmentationSpec, DarkFilter, FrameSequence};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchOrder {
    #[default]
    Sequential,
    Random,
}

impl PatchOrder {
    pub fn name(self) -> &'static str {
        match self {
            PatchOrder::Sequential => "sequential",
            PatchOrder::Random => "random",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sequential" => Ok(PatchOrder::Sequential),
            "random" => Ok(PatchOrder::Random),
            _ => Err(config_err!("unknown patch order `{s}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub optimizer: OptimizerKind,
    pub patch_size: usize,
    /// Number of ×2 passes per crop; pass `s` uses patches of
    /// `patch_size · 2^(s-1)`.
    pub leaf_scale_steps: usize,
    pub crop_size: usize,
    pub seq_len: usize,
    /// Subset of {2, 4}.
    pub scales: Vec<usize>,
    pub patch_order: PatchOrder,
    /// Only every `patch_stride`-th visited patch contributes a patch loss.
    pub patch_stride: usize,
    pub epochs: usize,
    pub crops_per_clip: usize,
    pub augment: bool,
    pub dark_filter: DarkFilter,
    pub downsample: Interpolation,
    /// Store checkpoints with 16-bit floats.
    pub mixed_precision: bool,
    /// Write checkpoints every this many epochs (0: only at the end).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            clip_norm: 1.0,
            optimizer: OptimizerKind::default(),
            patch_size: 16,
            leaf_scale_steps: 2,
            crop_size: 128,
            seq_len: 5,
            scales: vec![2, 4],
            patch_order: PatchOrder::Sequential,
            patch_stride: 1,
            epochs: 1,
            crops_per_clip: 1,
            augment: true,
            dark_filter: DarkFilter::default(),
            downsample: Interpolation::Bicubic,
            mixed_precision: false,
            checkpoint_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(config_err!("learning rate must be > 0"));
        }
        if !(self.clip_norm > 0.0) {
            return Err(config_err!("clip norm must be > 0"));
        }
        self.optimizer.validate()?;
        if self.patch_size == 0 || self.leaf_scale_steps == 0 || self.seq_len == 0 {
            return Err(config_err!("patch size, leaf steps and sequence length must be >= 1"));
        }
        if self.leaf_scale_steps > 8 {
            return Err(config_err!("at most 8 leaf steps are supported"));
        }
        let unit = 2 * self.patch_size * (1 << (self.leaf_scale_steps - 1));
        if self.crop_size == 0 || self.crop_size % unit != 0 {
            return Err(config_err!(
                "crop size {} must be a multiple of 2 x patch size x 2^(leaf steps - 1) = {unit}",
                self.crop_size
            ));
        }
        if self.scales.is_empty() || self.scales.iter().any(|s| *s != 2 && *s != 4) {
            return Err(config_err!("scales must be a non-empty subset of {{2, 4}}"));
        }
        if self.scales.contains(&4) && self.crop_size % (4 * self.patch_size) != 0 {
            return Err(config_err!(
                "crop size {} must be a multiple of 4 x patch size for the x4 pass",
                self.crop_size
            ));
        }
        if self.patch_stride == 0 || self.epochs == 0 || self.crops_per_clip == 0 {
            return Err(config_err!("patch stride, epochs and crops per clip must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.dark_filter.threshold) {
            return Err(config_err!("dark threshold must be in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    /// Logical generator invocations of the gradient pass (a ×4 patch counts two).
    pub generator_calls: u64,
    /// Every generator forward, including the no-gradient assembly pass.
    pub forward_evaluations: u64,
    pub patch_losses: u64,
    pub generator_updates: u64,
    pub discriminator_updates: u64,
    pub images: u64,
    pub skipped_dark: u64,
}

/// One ×2 or ×4 pass over a crop.
pub struct PassResult {
    pub bundle: LossBundle,
    /// Reassembled `(N, 3, H, W)` prediction, detached.
    pub prediction: Tensor,
    pub patches: usize,
}

/// Everything a pass needs besides the data.
pub struct PassContext<'a> {
    pub model: &'a dyn Upscaler,
    pub discriminator: Option<&'a Discriminator>,
    pub extractor: Option<&'a dyn FeatureExtractor>,
    pub loss: &'a LossConfig,
    pub order: PatchOrder,
    pub stride: usize,
}

fn tile(x: &Tensor, row: usize, col: usize, size: usize) -> Result<Tensor> {
    Ok(x.narrow(2, row * size, size)?.narrow(3, col * size, size)?.contiguous()?)
}

fn assemble(tiles: &[Tensor], rows: usize, cols: usize) -> Result<Tensor> {
    let mut strips = Vec::with_capacity(rows);
    for r in 0..rows {
        strips.push(Tensor::cat(&tiles[r * cols..(r + 1) * cols], 3)?);
    }
    Ok(Tensor::cat(&strips, 2)?)
}

fn cascade(model: &dyn Upscaler, x: &Tensor, passes: usize, train: bool) -> Result<Tensor> {
    let mut h = x.clone();
    for _ in 0..passes {
        h = model.upscale_tensor(&h, train)?;
    }
    Ok(h)
}

/// Runs one patch pass. `lr` is split into `patch × patch` tiles, each tile
/// goes through the model `passes` times and is scored against the matching
/// tile of `gt`. Whole-image terms are evaluated once on the reassembled
/// prediction; their gradient with respect to the prediction is pushed back
/// through every patch. Gradients land in `pool` when given.
pub fn image_pass(
    ctx: &PassContext<'_>,
    gt: &Tensor,
    lr: &Tensor,
    patch: usize,
    passes: usize,
    mut pool: Option<&mut GradPool>,
    counters: &mut Counters,
    rng: &mut ChaCha8Rng,
) -> Result<PassResult> {
    let (n, _, lh, lw) = lr.dims4()?;
    let out_patch = patch << passes;
    if lh % patch != 0 || lw % patch != 0 {
        return Err(config_err!("{lh}x{lw} LR input is not divisible into {patch}x{patch} patches"));
    }
    if gt.dims() != [n, 3, lh << passes, lw << passes] {
        return Err(crate::error::shape_err!(
            "ground truth {:?} does not match {n}x3x{}x{}",
            gt.dims(),
            lh << passes,
            lw << passes
        ));
    }
    let (rows, cols) = (lh / patch, lw / patch);
    let mut visit: Vec<usize> = (0..rows * cols).collect();
    if ctx.order == PatchOrder::Random {
        visit.shuffle(rng);
    }
    let params = ctx.model.params();
    let whole = ctx.loss.has_whole_image_terms();
    let adversarial = ctx.loss.weight(LossTerm::Adversarial) > 0.0;
    let mut outs: Vec<Option<Tensor>> = vec![None; rows * cols];

    let mut whole_bundle = None;
    let mut whole_grad = None;
    if whole {
        for &i in &visit {
            let x = tile(lr, i / cols, i % cols, patch)?;
            outs[i] = Some(cascade(ctx.model, &x, passes, false)?.detach());
            counters.forward_evaluations += passes as u64;
        }
        let tiles: Vec<Tensor> = outs.iter().map(|o| o.clone().expect("filled")).collect();
        let var = Var::from_tensor(&assemble(&tiles, rows, cols)?)?;
        let lv = weighted_loss(
            &LossInputs {
                y: gt,
                y_hat: var.as_tensor(),
                extractor: ctx.extractor,
                fake_logits: None,
            },
            ctx.loss,
            LossTerm::is_whole_image,
        )?;
        if params.is_some() && pool.is_some() {
            let grads = lv.total.backward()?;
            whole_grad = Some(match grads.get(var.as_tensor()) {
                Some(g) => g.detach(),
                None => var.as_tensor().zeros_like()?,
            });
        }
        whole_bundle = Some(lv.bundle);
    }

    let mut bundles = Vec::new();
    for (k, &i) in visit.iter().enumerate() {
        let scored = k % ctx.stride == 0;
        if !scored && whole_grad.is_none() {
            continue;
        }
        let (r, c) = (i / cols, i % cols);
        let train = params.is_some() && pool.is_some();
        let out = cascade(ctx.model, &tile(lr, r, c, patch)?, passes, train)?;
        counters.generator_calls += passes as u64;
        counters.forward_evaluations += passes as u64;
        let mut objective = Tensor::zeros((), out.dtype(), out.device())?;
        let mut counted = false;
        if scored {
            let y = tile(gt, r, c, out_patch)?;
            let logits = match ctx.discriminator {
                Some(d) if adversarial => Some(d.forward(&out, false)?),
                _ => None,
            };
            let lv = weighted_loss(
                &LossInputs {
                    y: &y,
                    y_hat: &out,
                    extractor: ctx.extractor,
                    fake_logits: logits.as_ref(),
                },
                ctx.loss,
                |t| !t.is_whole_image(),
            )?;
            counted = !lv.bundle.values.is_empty();
            objective = lv.total;
            bundles.push(lv.bundle);
            counters.patch_losses += 1;
        }
        if let Some(g) = &whole_grad {
            let gi = tile(g, r, c, out_patch)?;
            objective = (objective + (&out * gi)?.sum_all()?)?;
        }
        if let (Some(store), Some(pool)) = (params, pool.as_deref_mut()) {
            let grads = objective.backward()?;
            pool.add_grads(store, &grads)?;
            if counted {
                pool.bump(1);
            }
        }
        if outs[i].is_none() {
            outs[i] = Some(out.detach());
        }
    }
    if whole {
        if let Some(pool) = pool.as_deref_mut() {
            pool.bump(1);
        }
    }
    for i in 0..outs.len() {
        if outs[i].is_none() {
            let x = tile(lr, i / cols, i % cols, patch)?;
            outs[i] = Some(cascade(ctx.model, &x, passes, false)?.detach());
            counters.forward_evaluations += passes as u64;
        }
    }
    let tiles: Vec<Tensor> = outs.into_iter().map(|o| o.expect("filled")).collect();
    let mut bundle = LossBundle::mean(&bundles);
    if let Some(w) = whole_bundle {
        bundle.merge(&w);
    }
    Ok(PassResult {
        bundle,
        prediction: assemble(&tiles, rows, cols)?,
        patches: rows * cols,
    })
}

/// Result of one crop: the generator objective averaged over its passes and
/// the discriminator loss when that network was updated.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ImageReport {
    pub loss: LossBundle,
    pub discriminator_loss: Option<f64>,
    pub generator_grad_norm: f64,
    pub contributions: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CropRecord {
    pub clip_id: String,
    pub window_start: usize,
    pub origin: (usize, usize),
    pub augmentation: AugmentationSpec,
    pub degradation: Vec<StepRecord>,
    pub skipped_dark: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub images: usize,
    pub skipped_dark: usize,
    pub mean: LossBundle,
    pub discriminator_loss: Option<f64>,
    pub crops: Vec<CropRecord>,
}

/// Generator, discriminator, optimizers, gradient pools and counters.
pub struct Trainer {
    pub config: TrainConfig,
    pub loss: LossConfig,
    pub plan: DegradationPlan,
    pub generator: Generator,
    pub discriminator: Discriminator,
    extractor: Option<Box<dyn FeatureExtractor>>,
    gen_opt: Optimizer,
    disc_opt: Optimizer,
    gen_pool: GradPool,
    disc_pool: GradPool,
    predictions: Vec<(Tensor, Tensor)>,
    pending: Vec<LossBundle>,
    pub counters: Counters,
    pub epoch: usize,
    pub seed: u64,
    /// Generator objective of every update, in order.
    pub history: Vec<f64>,
}

impl Trainer {
    pub fn new(
        config: TrainConfig,
        loss: LossConfig,
        plan: DegradationPlan,
        gen_spec: GeneratorSpec,
        disc_spec: DiscriminatorSpec,
        seed: u64,
        extractor: Option<Box<dyn FeatureExtractor>>,
    ) -> Result<Self> {
        let dev = Device::Cpu;
        let generator = Generator::new(gen_spec, derive_seed(seed, &[stream_id("generator")]), &dev)?;
        let discriminator = Discriminator::new(disc_spec, derive_seed(seed, &[stream_id("discriminator")]), &dev)?;
        Self::assemble(config, loss, plan, generator, discriminator, seed, extractor)
    }

    fn assemble(
        config: TrainConfig,
        loss: LossConfig,
        plan: DegradationPlan,
        generator: Generator,
        discriminator: Discriminator,
        seed: u64,
        extractor: Option<Box<dyn FeatureExtractor>>,
    ) -> Result<Self> {
        config.validate()?;
        loss.validate()?;
        plan.validate()?;
        if loss.weight(LossTerm::Adversarial) > 0.0 {
            let m = 1usize << discriminator.spec().depth;
            if (2 * config.patch_size) % m != 0 {
                return Err(config_err!(
                    "x2 output patches of {} do not fit a discriminator of depth {}",
                    2 * config.patch_size,
                    discriminator.spec().depth
                ));
            }
        }
        let extractor = match extractor {
            Some(e) => Some(e),
            None if loss.weight(LossTerm::Perceptual) > 0.0 => {
                log::warn!("no feature extractor weights given; perceptual term uses a seeded extractor");
                let e = ConvFeatureExtractor::seeded(
                    ExtractorSpec::tiny(),
                    derive_seed(seed, &[stream_id("extractor")]),
                    &Device::Cpu,
                )?;
                Some(Box::new(e) as Box<dyn FeatureExtractor>)
            }
            None => None,
        };
        Ok(Trainer {
            gen_opt: Optimizer::new(config.optimizer, config.learning_rate)?,
            disc_opt: Optimizer::new(config.optimizer, config.learning_rate)?,
            config,
            loss,
            plan,
            generator,
            discriminator,
            extractor,
            gen_pool: GradPool::new(),
            disc_pool: GradPool::new(),
            predictions: Vec::new(),
            pending: Vec::new(),
            counters: Counters::default(),
            epoch: 0,
            seed,
            history: Vec::new(),
        })
    }

    pub fn generator_pool(&self) -> &GradPool {
        &self.gen_pool
    }

    pub fn discriminator_pool(&self) -> &GradPool {
        &self.disc_pool
    }

    fn adversarial(&self) -> bool {
        self.loss.weight(LossTerm::Adversarial) > 0.0
    }

    fn run(&mut self, gt: &FrameSequence, source: &FrameSequence, scale: usize, patch: usize, seed_part: u64) -> Result<LossBundle> {
        let dev = Device::Cpu;
        let lr = downsample(source, scale, self.config.downsample)?.to_tensor(&dev, DType::F32)?;
        let gt_t = gt.to_tensor(&dev, DType::F32)?;
        let passes = if scale == 4 { 2 } else { 1 };
        let mut rng = rng_for(self.seed, &[stream_id("patch_order"), self.counters.images, seed_part]);
        let ctx = PassContext {
            model: &self.generator,
            discriminator: self.adversarial().then_some(&self.discriminator),
            extractor: self.extractor.as_deref(),
            loss: &self.loss,
            order: self.config.patch_order,
            stride: self.config.patch_stride,
        };
        let res = image_pass(
            &ctx,
            &gt_t,
            &lr,
            patch,
            passes,
            Some(&mut self.gen_pool),
            &mut self.counters,
            &mut rng,
        )?;
        self.predictions.push((res.prediction, gt_t));
        self.pending.push(res.bundle.clone());
        Ok(res.bundle)
    }

    /// ×2 pass with `patch_size` tiles. Accumulates; does not update.
    pub fn train_step_2x(&mut self, gt: &FrameSequence, source: &FrameSequence) -> Result<LossBundle> {
        self.run(gt, source, 2, self.config.patch_size, 0)
    }

    /// Further ×2 passes with doubled tiles, `leaf_scale_steps - 1` of them.
    pub fn leaf_step(&mut self, gt: &FrameSequence, source: &FrameSequence) -> Result<Vec<LossBundle>> {
        (1..self.config.leaf_scale_steps)
            .map(|s| self.run(gt, source, 2, self.config.patch_size << s, s as u64))
            .collect()
    }

    /// Cascaded ×4 pass: every tile goes through the generator twice.
    pub fn train_step_4x(&mut self, gt: &FrameSequence, source: &FrameSequence) -> Result<LossBundle> {
        self.run(gt, source, 4, self.config.patch_size, 100)
    }

    /// Ends the crop: one clipped update per network from its own pool.
    pub fn apply_updates(&mut self) -> Result<ImageReport> {
        let mut report = ImageReport {
            loss: LossBundle::mean(&std::mem::take(&mut self.pending)),
            contributions: self.gen_pool.count(),
            ..Default::default()
        };
        if !self.gen_pool.is_empty() {
            let mut g = self.gen_pool.mean()?;
            report.generator_grad_norm = clip_gradients(&mut g, self.config.clip_norm)?;
            self.gen_opt.update(self.generator.store(), &g)?;
            self.gen_pool.clear();
            self.counters.generator_updates += 1;
            self.history.push(report.loss.total);
        }
        let predictions = std::mem::take(&mut self.predictions);
        if self.adversarial() && !predictions.is_empty() {
            let mut total = 0.0;
            for (fake, real) in &predictions {
                let fake_logits = self.discriminator.forward(&fake.detach(), true)?;
                let real_logits = self.discriminator.forward(real, true)?;
                let l = adversarial_loss(&fake_logits, Some(&real_logits), AdversarialSide::Discriminator)?;
                total += scalar(&l)?;
                let grads = l.backward()?;
                self.disc_pool.contribute(self.discriminator.store(), &grads)?;
            }
            let mut g = self.disc_pool.mean()?;
            clip_gradients(&mut g, self.config.clip_norm)?;
            self.disc_opt.update(self.discriminator.store(), &g)?;
            self.disc_pool.clear();
            self.counters.discriminator_updates += 1;
            report.discriminator_loss = Some(total / predictions.len() as f64);
        }
        self.counters.images += 1;
        Ok(report)
    }

    /// Runs the configured schedule on one ground-truth crop and its
    /// degraded source, then updates. `None` when the LR crop is too dark.
    pub fn train_crop(&mut self, gt: &FrameSequence, source: &FrameSequence) -> Result<Option<ImageReport>> {
        if self.config.dark_filter.rejects(&downsample(source, 2, self.config.downsample)?) {
            self.counters.skipped_dark += 1;
            return Ok(None);
        }
        if self.config.scales.contains(&2) {
            self.train_step_2x(gt, source)?;
            self.leaf_step(gt, source)?;
        }
        if self.config.scales.contains(&4) {
            self.train_step_4x(gt, source)?;
        }
        self.apply_updates().map(Some)
    }

    /// Window, crop, augment and degrade one clip sample.
    fn sample_crop(&self, clip: &crate::dataset::Clip, clip_index: usize, k: usize) -> Result<(FrameSequence, FrameSequence, CropRecord)> {
        let mut rng = rng_for(
            self.seed,
            &[stream_id("crop"), self.epoch as u64, stream_id(&clip.id), clip_index as u64, k as u64],
        );
        let total = clip.frame_count()?;
        if total == 0 {
            return Err(config_err!("clip `{}` has no frames", clip.id));
        }
        let len = self.config.seq_len.min(total);
        let start = rng.gen_range(0..=total - len);
        let window = clip.window(start, len)?;
        let size = self.config.crop_size;
        if window.height() < size || window.width() < size {
            return Err(config_err!(
                "clip `{}` ({}x{}) is smaller than the {size} crop",
                clip.id,
                window.height(),
                window.width()
            ));
        }
        let origin = (rng.gen_range(0..=window.height() - size), rng.gen_range(0..=window.width() - size));
        let crop = crop_fixed(&window, size, origin)?;
        let aug = if self.config.augment {
            AugmentationSpec::sample(rng.gen())
        } else {
            AugmentationSpec::identity()
        };
        let gt = augment(&crop, &aug)?;
        let (source, degradation) = apply_plan(&gt, &self.plan.with_seed(rng.gen()))?;
        let record = CropRecord {
            clip_id: clip.id.clone(),
            window_start: start,
            origin,
            augmentation: aug,
            degradation,
            skipped_dark: false,
        };
        Ok((gt, source, record))
    }

    pub fn train_epoch(&mut self, dataset: &Dataset) -> Result<EpochSummary> {
        if dataset.is_empty() {
            return Err(config_err!("training dataset has no clips"));
        }
        let mut reports = Vec::new();
        let mut crops = Vec::new();
        let mut skipped = 0;
        for (i, clip) in dataset.clips.iter().enumerate() {
            for k in 0..self.config.crops_per_clip {
                let (gt, source, mut record) = self.sample_crop(clip, i, k)?;
                match self.train_crop(&gt, &source)? {
                    Some(r) => reports.push(r),
                    None => {
                        record.skipped_dark = true;
                        skipped += 1;
                    }
                }
                crops.push(record);
            }
        }
        if reports.is_empty() {
            log::warn!("epoch {}: every crop was rejected as too dark; no updates", self.epoch);
        }
        let disc: Vec<f64> = reports.iter().filter_map(|r| r.discriminator_loss).collect();
        let summary = EpochSummary {
            epoch: self.epoch,
            images: reports.len(),
            skipped_dark: skipped,
            mean: LossBundle::mean(&reports.iter().map(|r| r.loss.clone()).collect::<Vec<_>>()),
            discriminator_loss: (!disc.is_empty()).then(|| disc.iter().sum::<f64>() / disc.len() as f64),
            crops,
        };
        self.epoch += 1;
        Ok(summary)
    }

    fn storage(&self) -> StorageDtype {
        if self.config.mixed_precision {
            StorageDtype::F16
        } else {
            StorageDtype::F32
        }
    }

    pub fn save_generator(&self, path: &Path) -> Result<()> {
        self.generator.save(path, self.storage())
    }

    /// Full resumable state: both networks, optimizer moments, counters.
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut tensors = BTreeMap::new();
        for (k, t) in self.generator.store().tensors() {
            tensors.insert(format!("generator/{k}"), t);
        }
        for (k, t) in self.discriminator.store().tensors() {
            tensors.insert(format!("discriminator/{k}"), t);
        }
        for (k, t) in self.gen_opt.state_tensors() {
            tensors.insert(format!("opt_generator/{k}"), t);
        }
        for (k, t) in self.disc_opt.state_tensors() {
            tensors.insert(format!("opt_discriminator/{k}"), t);
        }
        let spec = json!({
            "train": self.config,
            "loss": self.loss,
            "degrade": self.plan,
            "generator": self.generator.spec(),
            "discriminator": self.discriminator.spec(),
        });
        let meta = json!({
            "counters": self.counters,
            "epoch": self.epoch,
            "seed": self.seed,
            "history": self.history,
            "generator_opt_step": self.gen_opt.step,
            "discriminator_opt_step": self.disc_opt.step,
        });
        Ok(Checkpoint::new(CheckpointKind::TrainState, spec, tensors).with_meta(meta))
    }

    pub fn save_state(&self, path: &Path) -> Result<()> {
        // moments are kept at full precision
        self.to_checkpoint()?.save(path, StorageDtype::F32)
    }

    /// Restores a state written by [`Trainer::save_state`]. The training
    /// configuration may differ (e.g. more epochs); the architectures may not.
    pub fn resume(
        ck: &Checkpoint,
        config: TrainConfig,
        loss: LossConfig,
        plan: DegradationPlan,
        extractor: Option<Box<dyn FeatureExtractor>>,
    ) -> Result<Self> {
        ck.expect_kind(CheckpointKind::TrainState)?;
        let bad = |what: &str| Error::Checkpoint(format!("train state: bad {what}"));
        let gen_spec: GeneratorSpec =
            serde_json::from_value(ck.spec["generator"].clone()).map_err(|_| bad("generator spec"))?;
        let disc_spec: DiscriminatorSpec =
            serde_json::from_value(ck.spec["discriminator"].clone()).map_err(|_| bad("discriminator spec"))?;
        let split = |prefix: &str| -> BTreeMap<String, Tensor> {
            ck.tensors
                .iter()
                .filter_map(|(k, t)| k.strip_prefix(prefix).map(|n| (n.to_string(), t.clone())))
                .collect()
        };
        let dev = Device::Cpu;
        let generator = Generator::new(gen_spec, 0, &dev)?;
        generator.store().load(&split("generator/"))?;
        let discriminator = Discriminator::new(disc_spec, 0, &dev)?;
        discriminator.store().load(&split("discriminator/"))?;
        let seed = ck.meta["seed"].as_u64().ok_or_else(|| bad("seed"))?;
        let mut t = Self::assemble(config, loss, plan, generator, discriminator, seed, extractor)?;
        t.counters = serde_json::from_value(ck.meta["counters"].clone()).map_err(|_| bad("counters"))?;
        t.epoch = ck.meta["epoch"].as_u64().ok_or_else(|| bad("epoch"))? as usize;
        t.history = serde_json::from_value(ck.meta["history"].clone()).map_err(|_| bad("history"))?;
        let gs = ck.meta["generator_opt_step"].as_u64().ok_or_else(|| bad("optimizer step"))?;
        let ds = ck.meta["discriminator_opt_step"].as_u64().ok_or_else(|| bad("optimizer step"))?;
        t.gen_opt.load_state(gs, &split("opt_generator/"))?;
        t.disc_opt.load_state(ds, &split("opt_discriminator/"))?;
        Ok(t)
    }

    pub fn load_state(
        path: &Path,
        config: TrainConfig,
        loss: LossConfig,
        plan: DegradationPlan,
        extractor: Option<Box<dyn FeatureExtractor>>,
    ) -> Result<Self> {
        Self::resume(&Checkpoint::load(path, &Device::Cpu)?, config, loss, plan, extractor)
    }
}
