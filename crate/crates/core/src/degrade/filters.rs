//! Plain-slice filtering helpers for single-channel planes.

/// Border handling for spatial filters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Padding {
    /// Repeat the nearest edge pixel.
    #[default]
    Replicate,
    /// Wrap around (periodic image).
    Circular,
}

impl Padding {
    #[inline]
    pub fn index(self, i: isize, len: usize) -> usize {
        let n = len as isize;
        match self {
            Padding::Replicate => i.clamp(0, n - 1) as usize,
            Padding::Circular => i.rem_euclid(n) as usize,
        }
    }
}

/// Kernel size used when a sigma is given without an explicit size:
/// `2·ceil(3σ) + 1`, at least 1.
pub fn kernel_size_for_sigma(sigma: f64) -> usize {
    if sigma <= 0.0 {
        1
    } else {
        2 * (3.0 * sigma).ceil() as usize + 1
    }
}

/// Normalised 1-D Gaussian taps. `sigma == 0` yields the unit impulse.
pub fn gaussian_taps(kernel_size: usize, sigma: f64) -> Vec<f64> {
    let r = (kernel_size / 2) as isize;
    if sigma <= 0.0 {
        return (-r..=r).map(|i| if i == 0 { 1.0 } else { 0.0 }).collect();
    }
    let taps: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / total).collect()
}

/// Separable convolution of an `h × w` plane with the same odd 1-D kernel on
/// both axes.
pub fn convolve_separable(plane: &[f32], h: usize, w: usize, taps: &[f64], padding: Padding) -> Vec<f32> {
    let r = (taps.len() / 2) as isize;
    let mut tmp = vec![0f64; h * w];
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0f64;
            for (k, t) in taps.iter().enumerate() {
                acc += t * row[padding.index(x as isize + k as isize - r, w)] as f64;
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0f64;
            for (k, t) in taps.iter().enumerate() {
                acc += t * tmp[padding.index(y as isize + k as isize - r, h) * w + x];
            }
            out[y * w + x] = acc as f32;
        }
    }
    out
}

/// 3×3 cross-correlation.
pub fn correlate3x3(plane: &[f32], h: usize, w: usize, k: &[[f64; 3]; 3], padding: Padding) -> Vec<f64> {
    let mut out = vec![0f64; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0f64;
            for (dy, row) in k.iter().enumerate() {
                let sy = padding.index(y as isize + dy as isize - 1, h);
                for (dx, kv) in row.iter().enumerate() {
                    let sx = padding.index(x as isize + dx as isize - 1, w);
                    acc += kv * plane[sy * w + sx] as f64;
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

pub const SOBEL_H: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
pub const SOBEL_V: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];
pub const LAPLACE_4: [[f64; 3]; 3] = [[0.0, -1.0, 0.0], [-1.0, 4.0, -1.0], [0.0, -1.0, 0.0]];

/// Sobel gradient magnitude.
pub fn sobel_magnitude(plane: &[f32], h: usize, w: usize, padding: Padding) -> Vec<f64> {
    let gx = correlate3x3(plane, h, w, &SOBEL_H, padding);
    let gy = correlate3x3(plane, h, w, &SOBEL_V, padding);
    gx.iter().zip(&gy).map(|(a, b)| (a * a + b * b).sqrt()).collect()
}

/// Spatially varying Gaussian blur: pixel `i` is blurred with `sigmas[i]`
/// using a `(2r+1)²` window, `r = ceil(3·max σ)`.
pub fn variable_blur(plane: &[f32], h: usize, w: usize, sigmas: &[f64], padding: Padding) -> Vec<f32> {
    let max_sigma = sigmas.iter().cloned().fold(0.0, f64::max);
    let r = (kernel_size_for_sigma(max_sigma) / 2) as isize;
    let mut out = vec![0f32; h * w];
    let mut taps = Vec::with_capacity((2 * r + 1) as usize);
    for y in 0..h {
        for x in 0..w {
            let sigma = sigmas[y * w + x];
            if sigma <= 0.0 {
                out[y * w + x] = plane[y * w + x];
                continue;
            }
            taps.clear();
            taps.extend(gaussian_taps((2 * r + 1) as usize, sigma));
            let mut acc = 0f64;
            for (ky, ty) in taps.iter().enumerate() {
                let sy = padding.index(y as isize + ky as isize - r, h);
                let row = &plane[sy * w..(sy + 1) * w];
                let mut racc = 0f64;
                for (kx, tx) in taps.iter().enumerate() {
                    racc += tx * row[padding.index(x as isize + kx as isize - r, w)] as f64;
                }
                acc += ty * racc;
            }
            out[y * w + x] = acc as f32;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn padding_indices() {
        assert_eq!(Padding::Replicate.index(-2, 5), 0);
        assert_eq!(Padding::Replicate.index(7, 5), 4);
        assert_eq!(Padding::Circular.index(-1, 5), 4);
        assert_eq!(Padding::Circular.index(5, 5), 0);
    }

    #[test]
    fn gaussian_taps_are_normalised_and_symmetric() {
        let t = gaussian_taps(5, 1.0);
        assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(t[0], t[4]);
        assert_eq!(gaussian_taps(5, 0.0), vec![0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(kernel_size_for_sigma(1.0), 7);
        assert_eq!(kernel_size_for_sigma(0.0), 1);
    }

    #[test]
    fn variable_blur_with_uniform_sigma_matches_separable() {
        let (h, w) = (9, 11);
        let plane: Vec<f32> = (0..h * w).map(|i| ((i * 37) % 17) as f32 / 17.0).collect();
        let sigma = 1.3;
        let k = kernel_size_for_sigma(sigma);
        let a = convolve_separable(&plane, h, w, &gaussian_taps(k, sigma), Padding::Replicate);
        let b = variable_blur(&plane, h, w, &vec![sigma; h * w], Padding::Replicate);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-6);
        }
    }
}
