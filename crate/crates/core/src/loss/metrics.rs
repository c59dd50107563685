//! PSNR and SSIM. The evaluation harness and the training objective share
//! these functions.

use candle_core::{DType, Device, Tensor};

use crate::error::{shape_err, Result};
use crate::nn::scalar;
use crate::seqcore::FrameSequence;

pub const PSNR_CAP_DB: f64 = 100.0;
const MSE_FLOOR: f64 = 1e-10;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

pub fn psnr_from_mse(mse: f64, max_val: f64) -> f64 {
    if mse < MSE_FLOOR {
        PSNR_CAP_DB
    } else {
        10.0 * (max_val * max_val / mse).log10()
    }
}

/// PSNR in dB, capped at 100 dB when the MSE is below `1e-10`.
pub fn psnr(y: &Tensor, y_hat: &Tensor, max_val: f64) -> Result<f64> {
    if y.dims() != y_hat.dims() {
        return Err(shape_err!("psnr inputs differ in shape: {:?} vs {:?}", y.dims(), y_hat.dims()));
    }
    let d = (y_hat.to_dtype(DType::F64)? - y.to_dtype(DType::F64)?)?;
    Ok(psnr_from_mse(scalar(&d.sqr()?.mean_all()?)?, max_val))
}

pub fn psnr_seq(y: &FrameSequence, y_hat: &FrameSequence, max_val: f64) -> Result<f64> {
    let dev = Device::Cpu;
    psnr(&y.to_tensor(&dev, DType::F64)?, &y_hat.to_tensor(&dev, DType::F64)?, max_val)
}

fn gaussian_window(like: &Tensor) -> Result<(Tensor, Tensor)> {
    let r = (SSIM_WINDOW / 2) as i64;
    let taps: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = taps.iter().sum();
    let taps: Vec<f64> = taps.into_iter().map(|t| t / s).collect();
    let dev = like.device();
    let col = Tensor::from_vec(taps.clone(), (1, 1, SSIM_WINDOW, 1), dev)?.to_dtype(like.dtype())?;
    let row = Tensor::from_vec(taps, (1, 1, 1, SSIM_WINDOW), dev)?.to_dtype(like.dtype())?;
    Ok((col, row))
}

/// Gaussian-weighted local mean over the valid region.
fn local_mean(x: &Tensor, win: &(Tensor, Tensor)) -> Result<Tensor> {
    Ok(x.conv2d(&win.0, 0, 1, 1, 1)?.conv2d(&win.1, 0, 1, 1, 1)?)
}

/// Mean local SSIM (11×11 Gaussian window, σ = 1.5, K1 = 0.01, K2 = 0.03,
/// dynamic range 1) over every frame and channel. Only window positions
/// that fit entirely inside the frame are used. Differentiable.
pub fn ssim(y: &Tensor, y_hat: &Tensor) -> Result<Tensor> {
    if y.dims() != y_hat.dims() {
        return Err(shape_err!("ssim inputs differ in shape: {:?} vs {:?}", y.dims(), y_hat.dims()));
    }
    let (b, c, h, w) = y
        .dims4()
        .map_err(|_| shape_err!("ssim expects (B, C, H, W), got {:?}", y.dims()))?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(shape_err!("{h}x{w} frames are smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} ssim window"));
    }
    let win = gaussian_window(y_hat)?;
    let a = y.to_dtype(y_hat.dtype())?.reshape((b * c, 1, h, w))?;
    let p = y_hat.reshape((b * c, 1, h, w))?;
    let mu_a = local_mean(&a, &win)?;
    let mu_p = local_mean(&p, &win)?;
    let mu_a2 = mu_a.sqr()?;
    let mu_p2 = mu_p.sqr()?;
    let mu_ap = (&mu_a * &mu_p)?;
    let var_a = (local_mean(&a.sqr()?, &win)? - &mu_a2)?;
    let var_p = (local_mean(&p.sqr()?, &win)? - &mu_p2)?;
    let cov = (local_mean(&(&a * &p)?, &win)? - &mu_ap)?;
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let num = (mu_ap.affine(2.0, c1)? * cov.affine(2.0, c2)?)?;
    let den = ((mu_a2 + mu_p2)?.affine(1.0, c1)? * (var_a + var_p)?.affine(1.0, c2)?)?;
    Ok((num / den)?.mean_all()?)
}

pub fn ssim_seq(y: &FrameSequence, y_hat: &FrameSequence) -> Result<f64> {
    let dev = Device::Cpu;
    scalar(&ssim(&y.to_tensor(&dev, DType::F64)?, &y_hat.to_tensor(&dev, DType::F64)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: Vec<f64>, shape: (usize, usize, usize, usize)) -> Tensor {
        Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
    }

    #[test]
    fn psnr_reference_values() {
        assert_eq!(psnr_from_mse(0.01, 1.0), 20.0);
        assert_eq!(psnr_from_mse(1.0, 1.0), 0.0);
        assert_eq!(psnr_from_mse(0.0, 1.0), PSNR_CAP_DB);
        let a = t(vec![0.5; 16], (1, 1, 4, 4));
        let b = t(vec![0.6; 16], (1, 1, 4, 4));
        assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_CAP_DB);
    }

    #[test]
    fn ssim_identities() {
        let n = 2 * 3 * 16 * 16;
        let a = t((0..n).map(|i| ((i * 7919) % 101) as f64 / 100.0).collect(), (2, 3, 16, 16));
        let b = t((0..n).map(|i| ((i * 104729) % 97) as f64 / 96.0).collect(), (2, 3, 16, 16));
        assert!((scalar(&ssim(&a, &a).unwrap()).unwrap() - 1.0).abs() < 1e-6);
        let ab = scalar(&ssim(&a, &b).unwrap()).unwrap();
        let ba = scalar(&ssim(&b, &a).unwrap()).unwrap();
        assert!((ab - ba).abs() < 1e-7);
        let zeros = t(vec![0.0; 3 * 16 * 16], (1, 3, 16, 16));
        let ones = t(vec![1.0; 3 * 16 * 16], (1, 3, 16, 16));
        let s = scalar(&ssim(&zeros, &ones).unwrap()).unwrap();
        let c1 = SSIM_K1 * SSIM_K1;
        assert!(s < 0.01);
        assert!((s - c1 / (1.0 + c1)).abs() < 1e-9);
        let small = t(vec![0.0; 64], (1, 1, 8, 8));
        assert!(ssim(&small, &small).is_err());
    }
}
