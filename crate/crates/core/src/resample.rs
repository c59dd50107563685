//! Separable bicubic / bilinear resampling on single-channel planes.
//!
//! Output sample `o` is centred on source coordinate `(o + 0.5) * in / out - 0.5`.
//! Taps outside the plane are edge-replicated and the weights of every output
//! sample are renormalised to sum to one, so constants are preserved exactly
//! up to rounding.

use serde::{Deserialize, Serialize};

/// Interpolation kernel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    Bicubic,
    Bilinear,
}

impl Interpolation {
    pub fn as_str(self) -> &'static str {
        match self {
            Interpolation::Bicubic => "bicubic",
            Interpolation::Bilinear => "bilinear",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bicubic" => Some(Interpolation::Bicubic),
            "bilinear" => Some(Interpolation::Bilinear),
            _ => None,
        }
    }
}

impl std::fmt::Display for Interpolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

const CUBIC_A: f64 = -0.75;

fn cubic(x: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        (CUBIC_A + 2.0) * x * x * x - (CUBIC_A + 3.0) * x * x + 1.0
    } else if x < 2.0 {
        CUBIC_A * x * x * x - 5.0 * CUBIC_A * x * x + 8.0 * CUBIC_A * x - 4.0 * CUBIC_A
    } else {
        0.0
    }
}

/// Per-output-sample taps: `(source index, weight)` lists.
#[derive(Clone, Debug)]
pub struct AxisWeights {
    taps: Vec<Vec<(usize, f32)>>,
}

impl AxisWeights {
    pub fn new(input: usize, output: usize, method: Interpolation) -> Self {
        assert!(input > 0 && output > 0, "resampling axis must be non-empty");
        let scale = input as f64 / output as f64;
        let last = input as isize - 1;
        let taps = (0..output)
            .map(|o| {
                let centre = (o as f64 + 0.5) * scale - 0.5;
                let base = centre.floor() as isize;
                let raw: Vec<(isize, f64)> = match method {
                    Interpolation::Bicubic => (base - 1..=base + 2)
                        .map(|t| (t, cubic(centre - t as f64)))
                        .collect(),
                    Interpolation::Bilinear => {
                        let frac = centre - base as f64;
                        vec![(base, 1.0 - frac), (base + 1, frac)]
                    }
                };
                let total: f64 = raw.iter().map(|(_, w)| w).sum();
                raw.into_iter()
                    .map(|(t, w)| (t.clamp(0, last) as usize, (w / total) as f32))
                    .collect()
            })
            .collect();
        AxisWeights { taps }
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    pub fn taps(&self, output: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.taps[output].iter().map(|&(i, w)| (i, w as f64))
    }
}

/// Resample one row-major `h × w` plane to `out_h × out_w`.
pub fn resample_plane(
    plane: &[f32],
    h: usize,
    w: usize,
    rows: &AxisWeights,
    cols: &AxisWeights,
) -> Vec<f32> {
    debug_assert_eq!(plane.len(), h * w);
    let out_h = rows.len();
    let out_w = cols.len();
    // horizontal pass
    let mut tmp = vec![0f32; h * out_w];
    for y in 0..h {
        let src = &plane[y * w..(y + 1) * w];
        let dst = &mut tmp[y * out_w..(y + 1) * out_w];
        for (x, taps) in cols.taps.iter().enumerate() {
            dst[x] = taps.iter().map(|&(i, wt)| src[i] * wt).sum();
        }
    }
    // vertical pass
    let mut out = vec![0f32; out_h * out_w];
    for (y, taps) in rows.taps.iter().enumerate() {
        let dst = &mut out[y * out_w..(y + 1) * out_w];
        for &(i, wt) in taps {
            let src = &tmp[i * out_w..(i + 1) * out_w];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s * wt;
            }
        }
    }
    out
}
