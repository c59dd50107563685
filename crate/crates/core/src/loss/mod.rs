//! Training objectives and quality metrics on `(B, C, H, W)` tensors.
//!
//! Every term is built from differentiable tensor ops and works in both 32-
//! and 64-bit precision. `y` is the reference, `y_hat` the prediction.

pub mod metrics;
pub mod perceptual;

use std::collections::BTreeMap;
use std::fmt;

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, shape_err, Error, Result};
use crate::nn::{depthwise, depthwise3, scalar, upsample_nearest};

pub use metrics::{psnr, psnr_from_mse, psnr_seq, ssim, ssim_seq, PSNR_CAP_DB};
pub use perceptual::{ConvFeatureExtractor, ExtractorSpec, FeatureExtractor};

/// Von Neumann Laplacian.
pub const K1: [[f64; 3]; 3] = [[0.0, -1.0, 0.0], [-1.0, 4.0, -1.0], [0.0, -1.0, 0.0]];
/// Moore Laplacian.
pub const K2: [[f64; 3]; 3] = [[-1.0, -1.0, -1.0], [-1.0, 8.0, -1.0], [-1.0, -1.0, -1.0]];
pub const K_V: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];
pub const K_H: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
/// Ricker (Mexican hat) wavelet, width 0.55.
pub const K_RICKER: [[f64; 3]; 3] = [
    [-0.2941, -0.4349, -0.2941],
    [-0.4349, 3.4786, -0.4349],
    [-0.2941, -0.4349, -0.2941],
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKernel {
    LaplacianK1,
    LaplacianK2,
    Ricker,
}

impl EdgeKernel {
    pub fn matrix(self) -> &'static [[f64; 3]; 3] {
        match self {
            EdgeKernel::LaplacianK1 => &K1,
            EdgeKernel::LaplacianK2 => &K2,
            EdgeKernel::Ricker => &K_RICKER,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    L1,
    #[default]
    L2,
}

fn same_shape(y: &Tensor, y_hat: &Tensor) -> Result<()> {
    if y.dims() != y_hat.dims() {
        return Err(shape_err!("loss inputs differ in shape: {:?} vs {:?}", y.dims(), y_hat.dims()));
    }
    Ok(())
}

fn rank4(t: &Tensor) -> Result<(usize, usize, usize, usize)> {
    t.dims4().map_err(|_| shape_err!("expected a (B, C, H, W) tensor, got {:?}", t.dims()))
}

/// Mean squared error.
pub fn mse_loss(y: &Tensor, y_hat: &Tensor) -> Result<Tensor> {
    same_shape(y, y_hat)?;
    Ok((y_hat - y)?.sqr()?.mean_all()?)
}

/// Mean of `|y − ŷ|`.
pub fn l1_loss(y: &Tensor, y_hat: &Tensor) -> Result<Tensor> {
    same_shape(y, y_hat)?;
    Ok((y_hat - y)?.abs()?.mean_all()?)
}

/// Mean of `sqrt((y − ŷ)² + ε²)`.
pub fn charbonnier_loss(y: &Tensor, y_hat: &Tensor, eps: f64) -> Result<Tensor> {
    if !(eps > 0.0) {
        return Err(config_err!("charbonnier epsilon must be > 0, got {eps}"));
    }
    same_shape(y, y_hat)?;
    Ok((y_hat - y)?.sqr()?.affine(1.0, eps * eps)?.sqrt()?.mean_all()?)
}

/// MSE between the responses of a fixed 3×3 kernel.
pub fn edge_loss(y: &Tensor, y_hat: &Tensor, kernel: EdgeKernel) -> Result<Tensor> {
    same_shape(y, y_hat)?;
    rank4(y)?;
    let k = kernel.matrix();
    mse_loss(&depthwise3(y, k)?, &depthwise3(y_hat, k)?)
}

/// MSE of the horizontal Sobel responses plus MSE of the vertical ones.
pub fn sobel_loss(y: &Tensor, y_hat: &Tensor) -> Result<Tensor> {
    same_shape(y, y_hat)?;
    rank4(y)?;
    let h = mse_loss(&depthwise3(y, &K_H)?, &depthwise3(y_hat, &K_H)?)?;
    let v = mse_loss(&depthwise3(y, &K_V)?, &depthwise3(y_hat, &K_V)?)?;
    Ok((h + v)?)
}

/// MSE of forward differences along x plus MSE along y.
pub fn gradient_loss(y: &Tensor, y_hat: &Tensor) -> Result<Tensor> {
    same_shape(y, y_hat)?;
    let (_, _, h, w) = rank4(y)?;
    let dx = |t: &Tensor| -> Result<Tensor> { Ok((t.narrow(3, 1, w - 1)? - t.narrow(3, 0, w - 1)?)?) };
    let dy = |t: &Tensor| -> Result<Tensor> { Ok((t.narrow(2, 1, h - 1)? - t.narrow(2, 0, h - 1)?)?) };
    let mut total = Tensor::zeros((), y.dtype(), y.device())?;
    if w > 1 {
        total = (total + mse_loss(&dx(y)?, &dx(y_hat)?)?)?;
    }
    if h > 1 {
        total = (total + mse_loss(&dy(y)?, &dy(y_hat)?)?)?;
    }
    Ok(total)
}

/// Binomial 5×5 smoothing kernel `[1 4 6 4 1]ᵀ[1 4 6 4 1] / 256`.
pub fn pyramid_kernel() -> Vec<Vec<f64>> {
    let t = [1.0, 4.0, 6.0, 4.0, 1.0];
    t.iter().map(|a| t.iter().map(|b| a * b / 256.0).collect()).collect()
}

/// Blur with the pyramid kernel, then keep every second row and column.
pub fn pyramid_down(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = rank4(x)?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(shape_err!("pyramid level {h}x{w} is not divisible by 2"));
    }
    let blurred = depthwise(x, &pyramid_kernel())?;
    // even samples: (B·C·H, W/2, 2) -> first of each pair
    let t = blurred.reshape((b * c, h / 2, 2, w / 2, 2))?;
    Ok(t.narrow(2, 0, 1)?.narrow(4, 0, 1)?.reshape((b, c, h / 2, w / 2))?)
}

/// Nearest-neighbour ×2 followed by the pyramid blur.
pub fn pyramid_up(x: &Tensor) -> Result<Tensor> {
    let (_, _, h, w) = rank4(x)?;
    depthwise(&upsample_nearest(x, 2 * h, 2 * w)?, &pyramid_kernel())
}

/// `[L_0, …, L_{n−1}, G_n]` with `L_i = G_i − up(G_{i+1})`.
pub fn laplacian_pyramid(x: &Tensor, levels: usize) -> Result<Vec<Tensor>> {
    let (_, _, h, w) = rank4(x)?;
    let div = 1usize << levels;
    if levels == 0 || h % div != 0 || w % div != 0 {
        return Err(shape_err!("{h}x{w} frames cannot form a {levels}-level pyramid"));
    }
    let mut out = Vec::with_capacity(levels + 1);
    let mut g = x.clone();
    for _ in 0..levels {
        let next = pyramid_down(&g)?;
        out.push((&g - pyramid_up(&next)?)?);
        g = next;
    }
    out.push(g);
    Ok(out)
}

/// Inverse of [`laplacian_pyramid`].
pub fn reconstruct_pyramid(levels: &[Tensor]) -> Result<Tensor> {
    let (last, rest) = levels.split_last().ok_or_else(|| shape_err!("empty pyramid"))?;
    let mut g = last.clone();
    for l in rest.iter().rev() {
        g = (l + pyramid_up(&g)?)?;
    }
    Ok(g)
}

pub fn laplacian_pyramid_loss(y: &Tensor, y_hat: &Tensor, levels: usize) -> Result<Tensor> {
    same_shape(y, y_hat)?;
    let a = laplacian_pyramid(y, levels)?;
    let b = laplacian_pyramid(y_hat, levels)?;
    let mut total = Tensor::zeros((), y.dtype(), y.device())?;
    for (la, lb) in a.iter().zip(&b) {
        total = (total + mse_loss(la, lb)?)?;
    }
    Ok(total)
}

/// `1 − ssim`.
pub fn ssim_loss(y: &Tensor, y_hat: &Tensor) -> Result<Tensor> {
    Ok(ssim(y, y_hat)?.affine(-1.0, 1.0)?)
}

/// `(1/(H_l W_l C_l)) ‖φ(y) − φ(ŷ)‖_p`, averaged over the batch. For L2 the
/// squared norm is used, which makes the term the MSE of the features.
pub fn perceptual_loss(
    y: &Tensor,
    y_hat: &Tensor,
    extractor: &dyn FeatureExtractor,
    norm: NormKind,
) -> Result<Tensor> {
    same_shape(y, y_hat)?;
    let fy = extractor.features(y)?;
    let fh = extractor.features(y_hat)?;
    match norm {
        NormKind::L1 => l1_loss(&fy, &fh),
        NormKind::L2 => mse_loss(&fy, &fh),
    }
}

/// Numerically stable `mean(BCE(sigmoid(x), t))` for a constant target.
pub fn bce_with_logits(logits: &Tensor, target: f64) -> Result<Tensor> {
    // max(x, 0) − x·t + log(1 + exp(−|x|))
    let soft = logits.abs()?.neg()?.exp()?.affine(1.0, 1.0)?.log()?;
    let val = ((logits.relu()? - logits.affine(target, 0.0)?)? + soft)?;
    Ok(val.mean_all()?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdversarialSide {
    Generator,
    Discriminator,
}

/// Generator side: `BCE(fake → 1)`. Discriminator side:
/// `BCE(real → 1) + BCE(fake → 0)`.
pub fn adversarial_loss(fake: &Tensor, real: Option<&Tensor>, side: AdversarialSide) -> Result<Tensor> {
    match side {
        AdversarialSide::Generator => bce_with_logits(fake, 1.0),
        AdversarialSide::Discriminator => {
            let real = real.ok_or_else(|| config_err!("discriminator loss needs real logits"))?;
            Ok((bce_with_logits(real, 1.0)? + bce_with_logits(fake, 0.0)?)?)
        }
    }
}

/// One weighted objective term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossTerm {
    Mse,
    Charbonnier,
    Perceptual,
    Ssim,
    Sobel,
    Laplacian,
    Ricker,
    Pyramid,
    Gradient,
    Adversarial,
}

impl LossTerm {
    pub const ALL: [LossTerm; 10] = [
        LossTerm::Mse,
        LossTerm::Charbonnier,
        LossTerm::Perceptual,
        LossTerm::Ssim,
        LossTerm::Sobel,
        LossTerm::Laplacian,
        LossTerm::Ricker,
        LossTerm::Pyramid,
        LossTerm::Gradient,
        LossTerm::Adversarial,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossTerm::Mse => "mse",
            LossTerm::Charbonnier => "charbonnier",
            LossTerm::Perceptual => "perceptual",
            LossTerm::Ssim => "ssim",
            LossTerm::Sobel => "sobel",
            LossTerm::Laplacian => "laplacian",
            LossTerm::Ricker => "ricker",
            LossTerm::Pyramid => "pyramid",
            LossTerm::Gradient => "gradient",
            LossTerm::Adversarial => "adversarial",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.name() == s)
    }

    /// Terms computed on the reassembled whole image rather than per patch.
    pub fn is_whole_image(self) -> bool {
        matches!(self, LossTerm::Ssim | LossTerm::Perceptual)
    }

    /// Value of the term when prediction equals reference.
    pub fn floor(self, cfg: &LossConfig) -> f64 {
        match self {
            LossTerm::Charbonnier => cfg.charbonnier_epsilon,
            _ => 0.0,
        }
    }
}

impl fmt::Display for LossTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub weights: BTreeMap<LossTerm, f64>,
    pub charbonnier_epsilon: f64,
    pub pyramid_levels: usize,
    pub perceptual_norm: NormKind,
    pub laplacian_kernel: EdgeKernel,
}

impl Default for LossConfig {
    fn default() -> Self {
        let w = [
            (LossTerm::Mse, 1.0),
            (LossTerm::Charbonnier, 0.0),
            (LossTerm::Perceptual, 0.1),
            (LossTerm::Ssim, 0.2),
            (LossTerm::Sobel, 0.05),
            (LossTerm::Laplacian, 0.05),
            (LossTerm::Ricker, 0.02),
            (LossTerm::Pyramid, 0.05),
            (LossTerm::Gradient, 0.05),
            (LossTerm::Adversarial, 0.005),
        ];
        LossConfig {
            weights: w.into_iter().collect(),
            charbonnier_epsilon: 1e-3,
            pyramid_levels: 3,
            perceptual_norm: NormKind::L2,
            laplacian_kernel: EdgeKernel::LaplacianK1,
        }
    }
}

impl LossConfig {
    /// All weights zero except the listed ones.
    pub fn only(terms: &[(LossTerm, f64)]) -> Self {
        let mut cfg = LossConfig::default();
        for w in cfg.weights.values_mut() {
            *w = 0.0;
        }
        for &(t, w) in terms {
            cfg.weights.insert(t, w);
        }
        cfg
    }

    pub fn weight(&self, term: LossTerm) -> f64 {
        self.weights.get(&term).copied().unwrap_or(0.0)
    }

    pub fn active(&self) -> impl Iterator<Item = (LossTerm, f64)> + '_ {
        self.weights.iter().filter(|(_, w)| **w > 0.0).map(|(t, w)| (*t, *w))
    }

    pub fn validate(&self) -> Result<()> {
        for (t, w) in &self.weights {
            if !(w.is_finite() && *w >= 0.0) {
                return Err(config_err!("loss weight for {t} must be finite and >= 0, got {w}"));
            }
        }
        if self.active().next().is_none() {
            return Err(config_err!("at least one loss weight must be positive"));
        }
        if !(self.charbonnier_epsilon > 0.0) {
            return Err(config_err!("charbonnier epsilon must be > 0"));
        }
        if self.pyramid_levels == 0 {
            return Err(config_err!("pyramid levels must be >= 1"));
        }
        if self.laplacian_kernel == EdgeKernel::Ricker {
            return Err(config_err!("laplacian kernel must be k1 or k2"));
        }
        Ok(())
    }

    pub fn has_whole_image_terms(&self) -> bool {
        self.active().any(|(t, _)| t.is_whole_image())
    }
}

/// Per-term scalars and their weighted total.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub values: BTreeMap<LossTerm, f64>,
    pub total: f64,
}

impl LossBundle {
    pub fn get(&self, term: LossTerm) -> Option<f64> {
        self.values.get(&term).copied()
    }

    /// Element-wise mean of several bundles; terms missing from some bundles
    /// are averaged over the bundles that have them.
    pub fn mean(bundles: &[LossBundle]) -> LossBundle {
        let mut sums: BTreeMap<LossTerm, (f64, usize)> = BTreeMap::new();
        for b in bundles {
            for (t, v) in &b.values {
                let e = sums.entry(*t).or_insert((0.0, 0));
                e.0 += v;
                e.1 += 1;
            }
        }
        let total = if bundles.is_empty() {
            0.0
        } else {
            bundles.iter().map(|b| b.total).sum::<f64>() / bundles.len() as f64
        };
        LossBundle {
            values: sums.into_iter().map(|(t, (s, n))| (t, s / n as f64)).collect(),
            total,
        }
    }

    /// Adds another bundle's terms (used to merge per-patch and whole-image parts).
    pub fn merge(&mut self, other: &LossBundle) {
        for (t, v) in &other.values {
            *self.values.entry(*t).or_insert(0.0) += v;
        }
        self.total += other.total;
    }
}

/// Inputs for one evaluation of the weighted objective.
pub struct LossInputs<'a> {
    pub y: &'a Tensor,
    pub y_hat: &'a Tensor,
    pub extractor: Option<&'a dyn FeatureExtractor>,
    /// Discriminator logits of the prediction, for the generator-side term.
    pub fake_logits: Option<&'a Tensor>,
}

/// Differentiable total plus the recorded bundle.
pub struct LossValue {
    pub total: Tensor,
    pub bundle: LossBundle,
}

/// Evaluates the positively weighted terms accepted by `select`.
pub fn weighted_loss(
    inputs: &LossInputs<'_>,
    cfg: &LossConfig,
    select: impl Fn(LossTerm) -> bool,
) -> Result<LossValue> {
    let (y, y_hat) = (inputs.y, inputs.y_hat);
    same_shape(y, y_hat)?;
    let mut total = Tensor::zeros((), y_hat.dtype(), y_hat.device())?;
    let mut bundle = LossBundle::default();
    for (term, w) in cfg.active() {
        if !select(term) {
            continue;
        }
        let v = match term {
            LossTerm::Mse => mse_loss(y, y_hat)?,
            LossTerm::Charbonnier => charbonnier_loss(y, y_hat, cfg.charbonnier_epsilon)?,
            LossTerm::Perceptual => {
                let ex = inputs
                    .extractor
                    .ok_or_else(|| Error::Dependency("perceptual term needs a feature extractor".into()))?;
                perceptual_loss(y, y_hat, ex, cfg.perceptual_norm)?
            }
            LossTerm::Ssim => ssim_loss(y, y_hat)?,
            LossTerm::Sobel => sobel_loss(y, y_hat)?,
            LossTerm::Laplacian => edge_loss(y, y_hat, cfg.laplacian_kernel)?,
            LossTerm::Ricker => edge_loss(y, y_hat, EdgeKernel::Ricker)?,
            LossTerm::Pyramid => laplacian_pyramid_loss(y, y_hat, cfg.pyramid_levels)?,
            LossTerm::Gradient => gradient_loss(y, y_hat)?,
            LossTerm::Adversarial => match inputs.fake_logits {
                Some(l) => adversarial_loss(l, None, AdversarialSide::Generator)?,
                None => continue,
            },
        };
        let val = scalar(&v)?;
        if !val.is_finite() {
            return Err(Error::Range(format!("loss term {term} is not finite")));
        }
        bundle.values.insert(term, val);
        bundle.total += w * val;
        total = (total + v.to_dtype(y_hat.dtype())?.affine(w, 0.0)?)?;
    }
    Ok(LossValue { total, bundle })
}

/// Every positively weighted term on one `(y, ŷ)` pair.
pub fn total_loss(inputs: &LossInputs<'_>, cfg: &LossConfig) -> Result<LossValue> {
    weighted_loss(inputs, cfg, |_| true)
}

pub fn to_f64(t: &Tensor) -> Result<Tensor> {
    Ok(t.to_dtype(DType::F64)?)
}
