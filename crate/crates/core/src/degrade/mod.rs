//! Seeded degradation operators that turn clean HR frames into realistic
//! low-quality inputs, and the [`DegradationPlan`] that chains them.
//!
//! Every operator is a pure function of `(input, parameters, seed)`. All
//! outputs are clamped into `[0, 1]`. Apart from Gaussian noise, randomness is
//! drawn once per sequence and applied to every frame alike.

pub mod filters;
mod plan;

pub use filters::Padding;
pub use plan::{
    apply_plan, DegradationPlan, FloatRange, IntRange, OperatorConfig, OperatorKind, PlanStep, SampledOp,
    StepRecord,
};

use std::io::Cursor;

use image::codecs::jpeg::JpegEncoder;
use image::{ImageFormat, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{config_err, shape_err, Error, Result};
use crate::resample::Interpolation;
use crate::seqcore::io::quantize;
use crate::seqcore::{self, FrameSequence, CHANNELS};
use filters::{convolve_separable, gaussian_taps, kernel_size_for_sigma, sobel_magnitude, variable_blur};

fn check_kernel(kernel_size: usize, sigma: f64) -> Result<()> {
    if kernel_size % 2 == 0 {
        return Err(config_err!("gaussian kernel size must be odd, got {kernel_size}"));
    }
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(config_err!("gaussian sigma must be finite and >= 0, got {sigma}"));
    }
    Ok(())
}

/// Convolves every plane with a normalised `kernel_size²` Gaussian
/// (edge-replicate borders).
pub fn gaussian_blur(seq: &FrameSequence, kernel_size: usize, sigma: f64) -> Result<FrameSequence> {
    gaussian_blur_with(seq, kernel_size, sigma, Padding::Replicate)
}

pub fn gaussian_blur_with(
    seq: &FrameSequence,
    kernel_size: usize,
    sigma: f64,
    padding: Padding,
) -> Result<FrameSequence> {
    check_kernel(kernel_size, sigma)?;
    let taps = gaussian_taps(kernel_size, sigma);
    let (h, w) = (seq.height(), seq.width());
    seq.map_planes(h, w, |_, _, p| convolve_separable(p, h, w, &taps, padding))
}

/// Adds i.i.d. `N(0, sigma²)` noise to every element.
pub fn gaussian_noise(seq: &FrameSequence, sigma: f64, seed: u64) -> Result<FrameSequence> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(config_err!("noise sigma must be finite and >= 0, got {sigma}"));
    }
    if sigma == 0.0 {
        return Ok(seq.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| config_err!("noise: {e}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = seq
        .data()
        .iter()
        .map(|&v| v + normal.sample(&mut rng) as f32)
        .collect();
    FrameSequence::new_clamped(data, seq.frames(), seq.height(), seq.width())
}

/// `clamp(contrast·(v − 0.5) + 0.5 + brightness)`: contrast about mid-grey
/// first, then the brightness shift.
pub fn contrast_brightness(seq: &FrameSequence, contrast: f64, brightness: f64) -> Result<FrameSequence> {
    if !(contrast > 0.0) || !contrast.is_finite() || !brightness.is_finite() {
        return Err(config_err!(
            "contrast must be > 0 and brightness finite (got {contrast}, {brightness})"
        ));
    }
    let data = seq
        .data()
        .iter()
        .map(|&v| (contrast * (v as f64 - 0.5) + 0.5 + brightness) as f32)
        .collect();
    FrameSequence::new_clamped(data, seq.frames(), seq.height(), seq.width())
}

/// Orthonormal single-level Haar analysis of an even-sized plane into
/// `(LL, LH, HL, HH)`, each `h/2 × w/2`.
pub fn haar_forward(plane: &[f32], h: usize, w: usize) -> [Vec<f64>; 4] {
    let (hh, hw) = (h / 2, w / 2);
    let mut bands = [
        vec![0f64; hh * hw],
        vec![0f64; hh * hw],
        vec![0f64; hh * hw],
        vec![0f64; hh * hw],
    ];
    for y in 0..hh {
        for x in 0..hw {
            let a = plane[2 * y * w + 2 * x] as f64;
            let b = plane[2 * y * w + 2 * x + 1] as f64;
            let c = plane[(2 * y + 1) * w + 2 * x] as f64;
            let d = plane[(2 * y + 1) * w + 2 * x + 1] as f64;
            let i = y * hw + x;
            bands[0][i] = (a + b + c + d) / 2.0;
            bands[1][i] = (a - b + c - d) / 2.0;
            bands[2][i] = (a + b - c - d) / 2.0;
            bands[3][i] = (a - b - c + d) / 2.0;
        }
    }
    bands
}

pub fn haar_inverse(bands: &[Vec<f64>; 4], h: usize, w: usize) -> Vec<f32> {
    let (hh, hw) = (h / 2, w / 2);
    let mut out = vec![0f32; h * w];
    for y in 0..hh {
        for x in 0..hw {
            let i = y * hw + x;
            let (ll, lh, hl, hh_) = (bands[0][i], bands[1][i], bands[2][i], bands[3][i]);
            out[2 * y * w + 2 * x] = ((ll + lh + hl + hh_) / 2.0) as f32;
            out[2 * y * w + 2 * x + 1] = ((ll - lh + hl - hh_) / 2.0) as f32;
            out[(2 * y + 1) * w + 2 * x] = ((ll + lh - hl - hh_) / 2.0) as f32;
            out[(2 * y + 1) * w + 2 * x + 1] = ((ll - lh - hl + hh_) / 2.0) as f32;
        }
    }
    out
}

/// Scales (or zeroes) the Haar detail subbands of every plane and
/// reconstructs.
pub fn frequency_guided(seq: &FrameSequence, detail_scale: f64, zero_details: bool) -> Result<FrameSequence> {
    let (h, w) = (seq.height(), seq.width());
    if h % 2 != 0 || w % 2 != 0 {
        return Err(shape_err!("wavelet degradation needs even dimensions, got {h}x{w}"));
    }
    if !detail_scale.is_finite() {
        return Err(config_err!("detail scale must be finite"));
    }
    let scale = if zero_details { 0.0 } else { detail_scale };
    seq.map_planes(h, w, |_, _, p| {
        let mut bands = haar_forward(p, h, w);
        for band in bands.iter_mut().skip(1) {
            band.iter_mut().for_each(|v| *v *= scale);
        }
        haar_inverse(&bands, h, w)
    })
}

/// Rectangle `(top, left, height, width)` covered by a cutblur mask.
pub fn cutblur_rect(h: usize, w: usize, mask_fraction: f64, seed: u64) -> (usize, usize, usize, usize) {
    let side = mask_fraction.clamp(0.0, 1.0).sqrt();
    let rh = ((h as f64 * side).round() as usize).clamp(1, h);
    let rw = ((w as f64 * side).round() as usize).clamp(1, w);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let top = rng.gen_range(0..=h - rh);
    let left = rng.gen_range(0..=w - rw);
    (top, left, rh, rw)
}

/// Bilinear down-then-up resampling of whole frames.
pub fn down_up(seq: &FrameSequence, factor: usize) -> Result<FrameSequence> {
    let (h, w) = (seq.height(), seq.width());
    let small = seqcore::resize(seq, (h / factor).max(1), (w / factor).max(1), Interpolation::Bilinear)?;
    seqcore::resize(&small, h, w, Interpolation::Bilinear)
}

/// Replaces one seeded rectangle (about `mask_fraction` of the frame area,
/// same for every frame) by its down-then-up resampled version.
pub fn cutblur(seq: &FrameSequence, mask_fraction: f64, blur_factor: usize, seed: u64) -> Result<FrameSequence> {
    if !(mask_fraction > 0.0 && mask_fraction <= 1.0) {
        return Err(config_err!("cutblur mask fraction must be in (0, 1], got {mask_fraction}"));
    }
    if blur_factor != 2 && blur_factor != 4 {
        return Err(config_err!("cutblur factor must be 2 or 4, got {blur_factor}"));
    }
    let (h, w) = (seq.height(), seq.width());
    let blurred = down_up(seq, blur_factor)?;
    let (top, left, rh, rw) = cutblur_rect(h, w, mask_fraction, seed);
    let mut data = seq.data().to_vec();
    let plane = h * w;
    for p in 0..seq.frames() * CHANNELS {
        let src = &blurred.data()[p * plane..(p + 1) * plane];
        for y in top..top + rh {
            let row = p * plane + y * w;
            data[row + left..row + left + rw].copy_from_slice(&src[y * w + left..y * w + left + rw]);
        }
    }
    FrameSequence::new(data, seq.frames(), h, w)
}

/// `iterations` successive Gaussian blurs with `sigma_step`.
pub fn diffusion(seq: &FrameSequence, iterations: usize, sigma_step: f64) -> Result<FrameSequence> {
    diffusion_with(seq, iterations, sigma_step, Padding::Replicate)
}

pub fn diffusion_with(
    seq: &FrameSequence,
    iterations: usize,
    sigma_step: f64,
    padding: Padding,
) -> Result<FrameSequence> {
    let k = kernel_size_for_sigma(sigma_step);
    check_kernel(k, sigma_step)?;
    let mut cur = seq.clone();
    for _ in 0..iterations {
        cur = gaussian_blur_with(&cur, k, sigma_step, padding)?;
    }
    Ok(cur)
}

/// Per-frame Sobel magnitude of the channel mean, scaled so its maximum is 1
/// (all zeros for a flat frame).
pub fn detail_map(seq: &FrameSequence, frame: usize, padding: Padding) -> Vec<f64> {
    let (h, w) = (seq.height(), seq.width());
    let luma: Vec<f32> = (0..h * w)
        .map(|i| (0..CHANNELS).map(|c| seq.plane(frame, c)[i]).sum::<f32>() / CHANNELS as f32)
        .collect();
    let mag = sobel_magnitude(&luma, h, w, padding);
    let peak = mag.iter().cloned().fold(0.0, f64::max);
    if peak <= 1e-12 {
        vec![0.0; h * w]
    } else {
        mag.into_iter().map(|m| m / peak).collect()
    }
}

fn check_sigma_range(sigma_min: f64, sigma_max: f64) -> Result<()> {
    if !(sigma_min >= 0.0 && sigma_min <= sigma_max && sigma_max.is_finite()) {
        return Err(config_err!(
            "need 0 <= sigma_min <= sigma_max, got {sigma_min}, {sigma_max}"
        ));
    }
    Ok(())
}

/// Gaussian blur whose sigma falls from `sigma_max` in flat regions to
/// `sigma_min` on the strongest edges of each frame.
pub fn content_aware(seq: &FrameSequence, sigma_min: f64, sigma_max: f64) -> Result<FrameSequence> {
    content_aware_with(seq, sigma_min, sigma_max, Padding::Replicate)
}

pub fn content_aware_with(
    seq: &FrameSequence,
    sigma_min: f64,
    sigma_max: f64,
    padding: Padding,
) -> Result<FrameSequence> {
    check_sigma_range(sigma_min, sigma_max)?;
    let (h, w) = (seq.height(), seq.width());
    let sigmas: Vec<Vec<f64>> = (0..seq.frames())
        .map(|n| {
            detail_map(seq, n, padding)
                .into_iter()
                .map(|m| sigma_max - (sigma_max - sigma_min) * m)
                .collect()
        })
        .collect();
    seq.map_planes(h, w, |n, _, p| variable_blur(p, h, w, &sigmas[n], padding))
}

/// Repeated content-aware blurring, re-measuring the detail map each pass.
pub fn adaptive(seq: &FrameSequence, sigma_min: f64, sigma_max: f64, iterations: usize) -> Result<FrameSequence> {
    adaptive_with(seq, sigma_min, sigma_max, iterations, Padding::Replicate)
}

pub fn adaptive_with(
    seq: &FrameSequence,
    sigma_min: f64,
    sigma_max: f64,
    iterations: usize,
    padding: Padding,
) -> Result<FrameSequence> {
    if iterations == 0 {
        return Err(config_err!("adaptive degradation needs at least one iteration"));
    }
    check_sigma_range(sigma_min, sigma_max)?;
    let mut cur = seq.clone();
    for _ in 0..iterations {
        cur = content_aware_with(&cur, sigma_min, sigma_max, padding)?;
    }
    Ok(cur)
}

/// Baseline JPEG encode/decode of every frame at `quality` (1..=100).
pub fn jpeg_degrade(seq: &FrameSequence, quality: u8) -> Result<FrameSequence> {
    if !(1..=100).contains(&quality) {
        return Err(config_err!("jpeg quality must be in 1..=100, got {quality}"));
    }
    let (h, w) = (seq.height(), seq.width());
    let plane = h * w;
    let mut data = Vec::with_capacity(seq.data().len());
    for n in 0..seq.frames() {
        let img = RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let i = y as usize * w + x as usize;
            image::Rgb([0, 1, 2].map(|c| quantize(seq.plane(n, c)[i])))
        });
        let mut buf = Vec::new();
        JpegEncoder::new_with_quality(&mut buf, quality)
            .encode_image(&img)
            .map_err(|e| Error::Codec(format!("jpeg encode: {e}")))?;
        let decoded = image::load(Cursor::new(buf), ImageFormat::Jpeg)
            .map_err(|e| Error::Codec(format!("jpeg decode: {e}")))?
            .to_rgb8();
        if decoded.dimensions() != (w as u32, h as u32) {
            return Err(Error::Codec("jpeg round trip changed the frame size".into()));
        }
        let base = data.len();
        data.resize(base + CHANNELS * plane, 0.0);
        for (i, px) in decoded.pixels().enumerate() {
            for c in 0..CHANNELS {
                data[base + c * plane + i] = px[c] as f32 / 255.0;
            }
        }
    }
    FrameSequence::new(data, seq.frames(), h, w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::metrics::psnr_seq;

    fn textured(n: usize, h: usize, w: usize) -> FrameSequence {
        FrameSequence::from_fn(n, h, w, |f, c, y, x| {
            let v = 0.5
                + 0.25 * ((x as f32 * 0.7 + f as f32).sin() * (y as f32 * 0.45 + c as f32).cos())
                + 0.15 * (((x * 3 + y * 5) % 7) as f32 / 7.0 - 0.5);
            v.clamp(0.0, 1.0)
        })
        .unwrap()
    }

    fn variance(p: &[f32]) -> f64 {
        let m = p.iter().map(|&v| v as f64).sum::<f64>() / p.len() as f64;
        p.iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>() / p.len() as f64
    }

    #[test]
    fn blur_identity_and_constants() {
        let s = textured(2, 8, 8);
        assert_eq!(gaussian_blur(&s, 5, 0.0).unwrap(), s);
        let c = FrameSequence::constant(1, 6, 6, 0.3).unwrap();
        let b = gaussian_blur(&c, 7, 1.7).unwrap();
        assert!(b.max_abs_diff(&c).unwrap() < 1e-6);
        assert!(matches!(gaussian_blur(&s, 4, 1.0), Err(Error::Config(_))));
    }

    #[test]
    fn blur_of_impulse_matches_direct_convolution() {
        // oracle: explicit 2-D Gaussian weights summed over the 5x5 window
        let h = 9;
        let s = FrameSequence::from_fn(1, h, h, |_, _, y, x| if y == 4 && x == 4 { 1.0 } else { 0.0 }).unwrap();
        let out = gaussian_blur(&s, 5, 1.0).unwrap();
        let g = |d: i32| (-(d * d) as f64 / 2.0).exp();
        let norm: f64 = (-2..=2).map(g).sum::<f64>().powi(2);
        for y in 0..h {
            for x in 0..h {
                let (dy, dx) = (y as i32 - 4, x as i32 - 4);
                let expected = if dy.abs() <= 2 && dx.abs() <= 2 { g(dy) * g(dx) / norm } else { 0.0 };
                assert!((out.get(0, 0, y, x) as f64 - expected).abs() < 1e-6);
            }
        }
        assert!(out.get(0, 0, 4, 4) < 1.0);
        let total: f32 = out.plane(0, 0).iter().sum();
        assert!((total - 1.0).abs() < 1e-5);
    }

    #[test]
    fn noise_determinism_and_statistics() {
        let s = FrameSequence::constant(1, 64, 64, 0.5).unwrap();
        assert_eq!(gaussian_noise(&s, 0.0, 9).unwrap(), s);
        let a = gaussian_noise(&s, 0.1, 9).unwrap();
        assert_eq!(a, gaussian_noise(&s, 0.1, 9).unwrap());
        assert_ne!(a, gaussian_noise(&s, 0.1, 10).unwrap());
        let diffs: Vec<f64> = a
            .data()
            .iter()
            .filter(|&&v| v > 0.0 && v < 1.0)
            .map(|&v| v as f64 - 0.5)
            .collect();
        assert!(diffs.len() >= 10_000);
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let sd = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (diffs.len() - 1) as f64).sqrt();
        assert!((sd - 0.1).abs() < 0.01, "sample sd {sd}");
    }

    #[test]
    fn contrast_brightness_cases() {
        let s = textured(1, 4, 4);
        assert!(contrast_brightness(&s, 1.0, 0.0).unwrap().max_abs_diff(&s).unwrap() < 1e-7);
        let c = FrameSequence::constant(1, 2, 2, 0.3).unwrap();
        let out = contrast_brightness(&c, 1.0, 0.2).unwrap();
        assert!(out.data().iter().all(|v| (v - 0.5).abs() < 1e-6));
        let mid = FrameSequence::constant(1, 2, 2, 0.5).unwrap();
        assert_eq!(contrast_brightness(&mid, 2.0, 0.0).unwrap(), mid);
        assert!(matches!(contrast_brightness(&s, 0.0, 0.0), Err(Error::Config(_))));
    }

    #[test]
    fn haar_cases() {
        let s = textured(2, 8, 6);
        assert!(frequency_guided(&s, 1.0, false).unwrap().max_abs_diff(&s).unwrap() <= 1e-6);
        let c = FrameSequence::constant(1, 4, 4, 0.7).unwrap();
        assert!(frequency_guided(&c, 1.0, true).unwrap().max_abs_diff(&c).unwrap() <= 1e-6);
        // checkerboard: every 2x2 block is [[0,1],[1,0]] -> LL = 1, reconstruction 0.5
        let checker = FrameSequence::from_fn(1, 6, 6, |_, _, y, x| ((x + y) % 2) as f32).unwrap();
        let out = frequency_guided(&checker, 1.0, true).unwrap();
        assert!(out.data().iter().all(|v| (v - 0.5).abs() <= 1e-6));
        assert!(matches!(
            frequency_guided(&textured(1, 5, 6), 1.0, false),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn cutblur_locality() {
        let s = textured(2, 16, 16);
        let out = cutblur(&s, 0.25, 2, 3).unwrap();
        let (top, left, rh, rw) = cutblur_rect(16, 16, 0.25, 3);
        assert_eq!((rh, rw), (8, 8));
        let blurred = down_up(&s, 2).unwrap();
        for f in 0..2 {
            for c in 0..3 {
                for y in 0..16 {
                    for x in 0..16 {
                        let inside = (top..top + rh).contains(&y) && (left..left + rw).contains(&x);
                        let expected = if inside { blurred.get(f, c, y, x) } else { s.get(f, c, y, x) };
                        assert_eq!(out.get(f, c, y, x).to_bits(), expected.to_bits());
                    }
                }
            }
        }
        let k = FrameSequence::constant(1, 8, 8, 0.4).unwrap();
        assert!(cutblur(&k, 0.5, 4, 1).unwrap().max_abs_diff(&k).unwrap() < 1e-6);
        // full mask equals the plain down-up oracle
        assert_eq!(cutblur(&s, 1.0, 4, 5).unwrap(), down_up(&s, 4).unwrap());
    }

    #[test]
    fn diffusion_cases() {
        let s = textured(1, 12, 12);
        assert_eq!(diffusion(&s, 0, 1.0).unwrap(), s);
        let twice = gaussian_blur(&gaussian_blur(&s, 7, 1.0).unwrap(), 7, 1.0).unwrap();
        assert_eq!(diffusion(&s, 2, 1.0).unwrap(), twice);
        let mut cur = s.clone();
        let mut prev: Vec<f64> = s.planes().map(variance).collect();
        for _ in 0..5 {
            cur = diffusion_with(&cur, 1, 0.8, Padding::Circular).unwrap();
            let now: Vec<f64> = cur.planes().map(variance).collect();
            for (a, b) in now.iter().zip(&prev) {
                assert!(a <= &(b + 1e-9));
            }
            prev = now;
        }
    }

    #[test]
    fn content_aware_cases() {
        let c = FrameSequence::constant(1, 8, 8, 0.6).unwrap();
        assert!(content_aware(&c, 0.5, 2.0).unwrap().max_abs_diff(&c).unwrap() < 1e-6);
        let s = textured(1, 12, 12);
        let uniform = gaussian_blur(&s, kernel_size_for_sigma(1.2), 1.2).unwrap();
        assert!(content_aware(&s, 1.2, 1.2).unwrap().max_abs_diff(&uniform).unwrap() <= 1e-6);
        assert!(content_aware(&s, 2.0, 1.0).is_err());
    }

    #[test]
    fn content_aware_keeps_edges_sharper_than_uniform_blur() {
        // oracle: Sobel energy along the edge columns under uniform sigma_max
        let step = FrameSequence::from_fn(1, 16, 16, |_, _, _, x| if x < 8 { 0.1 } else { 0.9 }).unwrap();
        let (smin, smax) = (0.2, 2.0);
        let aware = content_aware(&step, smin, smax).unwrap();
        let uniform = gaussian_blur(&step, kernel_size_for_sigma(smax), smax).unwrap();
        let grad = |s: &FrameSequence| sobel_magnitude(s.plane(0, 0), 16, 16, Padding::Replicate);
        let (ga, gu) = (grad(&aware), grad(&uniform));
        for y in 0..16 {
            for x in [7, 8] {
                assert!(ga[y * 16 + x] > gu[y * 16 + x]);
            }
        }
    }

    #[test]
    fn adaptive_cases() {
        let s = textured(1, 12, 12);
        assert_eq!(adaptive(&s, 0.3, 1.5, 1).unwrap(), content_aware(&s, 0.3, 1.5).unwrap());
        let c = FrameSequence::constant(1, 8, 8, 0.25).unwrap();
        assert!(adaptive(&c, 0.3, 1.5, 3).unwrap().max_abs_diff(&c).unwrap() < 1e-6);
        assert!(adaptive(&s, 0.3, 1.5, 0).is_err());
    }

    #[test]
    fn adaptive_laplacian_energy_trace_is_non_increasing() {
        let energy = |s: &FrameSequence| -> f64 {
            s.planes()
                .map(|p| {
                    filters::correlate3x3(p, 16, 16, &filters::LAPLACE_4, Padding::Circular)
                        .iter()
                        .map(|v| v * v)
                        .sum::<f64>()
                })
                .sum()
        };
        let mut cur = textured(1, 16, 16);
        let mut prev = energy(&cur);
        for _ in 0..5 {
            cur = adaptive_with(&cur, 0.3, 1.5, 1, Padding::Circular).unwrap();
            let e = energy(&cur);
            assert!(e <= prev + 1e-9, "{e} > {prev}");
            prev = e;
        }
    }

    #[test]
    fn jpeg_cases() {
        let gray = FrameSequence::constant(2, 16, 16, 0.5).unwrap();
        let out = jpeg_degrade(&gray, 100).unwrap();
        assert_eq!(out.shape(), gray.shape());
        assert!(psnr_seq(&gray, &out, 1.0).unwrap() >= 50.0);
        let s = textured(1, 32, 32);
        let hi = psnr_seq(&s, &jpeg_degrade(&s, 90).unwrap(), 1.0).unwrap();
        let lo = psnr_seq(&s, &jpeg_degrade(&s, 10).unwrap(), 1.0).unwrap();
        assert!(hi > lo, "{hi} <= {lo}");
        assert!(jpeg_degrade(&s, 0).is_err());
    }
}
