//! Frame sequences, patch grids and the pixel-level preprocessing applied
//! before a clip reaches the networks.

pub mod io;

use candle_core::{DType, Device, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, shape_err, Error, Result};
use crate::resample::{resample_plane, AxisWeights, Interpolation};

pub const CHANNELS: usize = 3;

/// An ordered run of `frames` RGB frames of identical size, stored as
/// `(N, 3, H, W)` row-major `f32` with every value in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence {
    data: Vec<f32>,
    frames: usize,
    height: usize,
    width: usize,
    frame_rate_hint: Option<f64>,
}

impl FrameSequence {
    pub fn new(data: Vec<f32>, frames: usize, height: usize, width: usize) -> Result<Self> {
        if frames == 0 || height == 0 || width == 0 {
            return Err(shape_err!(
                "frame sequence needs N, H, W >= 1 (got {frames}x{height}x{width})"
            ));
        }
        let expected = frames * CHANNELS * height * width;
        if data.len() != expected {
            return Err(shape_err!(
                "buffer holds {} values, (N={frames}, 3, H={height}, W={width}) needs {expected}",
                data.len()
            ));
        }
        if let Some(bad) = data.iter().position(|v| !v.is_finite() || !(0.0..=1.0).contains(v)) {
            return Err(Error::Range(format!(
                "value {} at flat index {bad} is outside [0, 1]",
                data[bad]
            )));
        }
        Ok(FrameSequence {
            data,
            frames,
            height,
            width,
            frame_rate_hint: None,
        })
    }

    /// Builds a sequence, clamping every value into `[0, 1]` (NaN becomes 0).
    pub fn new_clamped(mut data: Vec<f32>, frames: usize, height: usize, width: usize) -> Result<Self> {
        for v in &mut data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Self::new(data, frames, height, width)
    }

    pub fn constant(frames: usize, height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(vec![value; frames * CHANNELS * height * width], frames, height, width)
    }

    /// `f(frame, channel, y, x)` for every element.
    pub fn from_fn(
        frames: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(frames * CHANNELS * height * width);
        for n in 0..frames {
            for c in 0..CHANNELS {
                for y in 0..height {
                    for x in 0..width {
                        data.push(f(n, c, y, x));
                    }
                }
            }
        }
        Self::new(data, frames, height, width)
    }

    /// Reads a `(N, 3, H, W)` tensor; values are clamped into `[0, 1]`.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (n, c, h, w) = t.dims4()?;
        if c != CHANNELS {
            return Err(shape_err!("expected 3 channels, tensor has {c}"));
        }
        let data = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
        Self::new_clamped(data, n, h, w)
    }

    pub fn to_tensor(&self, device: &Device, dtype: DType) -> Result<Tensor> {
        let t = Tensor::from_slice(&self.data, (self.frames, CHANNELS, self.height, self.width), device)?;
        Ok(t.to_dtype(dtype)?)
    }

    pub fn with_frame_rate_hint(mut self, fps: f64) -> Self {
        self.frame_rate_hint = (fps.is_finite() && fps > 0.0).then_some(fps);
        self
    }

    pub fn frame_rate_hint(&self) -> Option<f64> {
        self.frame_rate_hint
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// `(N, 3, H, W)`
    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.frames, CHANNELS, self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, frame: usize, channel: usize, y: usize, x: usize) -> f32 {
        self.data[((frame * CHANNELS + channel) * self.height + y) * self.width + x]
    }

    fn plane_len(&self) -> usize {
        self.height * self.width
    }

    /// The `H × W` plane of one channel of one frame.
    pub fn plane(&self, frame: usize, channel: usize) -> &[f32] {
        let len = self.plane_len();
        let start = (frame * CHANNELS + channel) * len;
        &self.data[start..start + len]
    }

    /// Iterates over all `N·3` planes in storage order.
    pub fn planes(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.plane_len())
    }

    /// Consecutive frames `[start, start + len)`.
    pub fn window(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.frames {
            return Err(Error::Range(format!(
                "frame window {start}..{} outside 0..{}",
                start + len,
                self.frames
            )));
        }
        let per = CHANNELS * self.plane_len();
        Ok(FrameSequence {
            data: self.data[start * per..(start + len) * per].to_vec(),
            frames: len,
            height: self.height,
            width: self.width,
            frame_rate_hint: self.frame_rate_hint,
        })
    }

    /// Applies `f` to every plane, producing planes of `out_h × out_w`.
    /// Results are clamped into `[0, 1]`.
    pub fn map_planes(
        &self,
        out_h: usize,
        out_w: usize,
        mut f: impl FnMut(usize, usize, &[f32]) -> Vec<f32>,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(self.frames * CHANNELS * out_h * out_w);
        for n in 0..self.frames {
            for c in 0..CHANNELS {
                let out = f(n, c, self.plane(n, c));
                if out.len() != out_h * out_w {
                    return Err(shape_err!(
                        "plane transform produced {} values, expected {}",
                        out.len(),
                        out_h * out_w
                    ));
                }
                data.extend(out);
            }
        }
        let mut seq = Self::new_clamped(data, self.frames, out_h, out_w)?;
        seq.frame_rate_hint = self.frame_rate_hint;
        Ok(seq)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    /// Largest absolute elementwise difference; shapes must agree.
    pub fn max_abs_diff(&self, other: &FrameSequence) -> Result<f32> {
        if self.shape() != other.shape() {
            return Err(shape_err!("{:?} vs {:?}", self.shape(), other.shape()));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max))
    }
}

/// Copies the `size × size` window at `origin = (row, col)` from every frame.
pub fn crop_fixed(seq: &FrameSequence, size: usize, origin: (usize, usize)) -> Result<FrameSequence> {
    let (oy, ox) = origin;
    if size == 0 || oy + size > seq.height || ox + size > seq.width {
        return Err(Error::Range(format!(
            "crop of {size} at ({oy}, {ox}) exceeds {}x{} frame",
            seq.height, seq.width
        )));
    }
    let w = seq.width;
    seq.map_planes(size, size, |_, _, plane| {
        let mut out = Vec::with_capacity(size * size);
        for y in oy..oy + size {
            out.extend_from_slice(&plane[y * w + ox..y * w + ox + size]);
        }
        out
    })
}

/// One tile of a [`PatchGrid`].
#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub row: usize,
    pub col: usize,
    pub seq: FrameSequence,
}

/// A frame sequence tiled into `grid_rows × grid_cols` square patch-sequences.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchGrid {
    pub patches: Vec<Patch>,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub patch_size: usize,
    pub source_shape: (usize, usize),
}

impl PatchGrid {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn get(&self, row: usize, col: usize) -> Option<&FrameSequence> {
        self.patches
            .iter()
            .find(|p| p.row == row && p.col == col)
            .map(|p| &p.seq)
    }
}

/// Tiles `seq` into non-overlapping `patch_size` squares in row-major order.
pub fn split_into_grid(seq: &FrameSequence, patch_size: usize) -> Result<PatchGrid> {
    if patch_size == 0 || seq.height % patch_size != 0 || seq.width % patch_size != 0 {
        return Err(shape_err!(
            "{}x{} frames are not divisible into {patch_size}-pixel patches",
            seq.height,
            seq.width
        ));
    }
    let grid_rows = seq.height / patch_size;
    let grid_cols = seq.width / patch_size;
    let mut patches = Vec::with_capacity(grid_rows * grid_cols);
    for row in 0..grid_rows {
        for col in 0..grid_cols {
            patches.push(Patch {
                row,
                col,
                seq: crop_fixed(seq, patch_size, (row * patch_size, col * patch_size))?,
            });
        }
    }
    Ok(PatchGrid {
        patches,
        grid_rows,
        grid_cols,
        patch_size,
        source_shape: (seq.height, seq.width),
    })
}

/// Places every patch back at its grid position. Exact inverse of
/// [`split_into_grid`].
pub fn reassemble(grid: &PatchGrid) -> Result<FrameSequence> {
    let ps = grid.patch_size;
    let (h, w) = grid.source_shape;
    if grid.grid_rows * ps != h || grid.grid_cols * ps != w {
        return Err(Error::Consistency(format!(
            "{}x{} grid of {ps}-pixel patches does not tile {h}x{w}",
            grid.grid_rows, grid.grid_cols
        )));
    }
    if grid.patches.len() != grid.grid_rows * grid.grid_cols {
        return Err(Error::Consistency(format!(
            "grid expects {} patches, found {}",
            grid.grid_rows * grid.grid_cols,
            grid.patches.len()
        )));
    }
    let mut slots: Vec<Option<&FrameSequence>> = vec![None; grid.patches.len()];
    for p in &grid.patches {
        if p.row >= grid.grid_rows || p.col >= grid.grid_cols {
            return Err(Error::Consistency(format!(
                "patch position ({}, {}) outside the grid",
                p.row, p.col
            )));
        }
        let slot = &mut slots[p.row * grid.grid_cols + p.col];
        if slot.is_some() {
            return Err(Error::Consistency(format!(
                "duplicate patch at ({}, {})",
                p.row, p.col
            )));
        }
        *slot = Some(&p.seq);
    }
    let tiles: Vec<&FrameSequence> = slots.into_iter().map(|s| s.expect("all slots filled")).collect();
    let frames = tiles[0].frames;
    for t in &tiles {
        if t.frames != frames || t.height != ps || t.width != ps {
            return Err(Error::Consistency(format!(
                "patch of shape {:?} does not match {frames} frames of {ps}x{ps}",
                t.shape()
            )));
        }
    }
    let mut data = vec![0f32; frames * CHANNELS * h * w];
    for (idx, tile) in tiles.iter().enumerate() {
        let (r, c) = (idx / grid.grid_cols, idx % grid.grid_cols);
        for n in 0..frames {
            for ch in 0..CHANNELS {
                let src = tile.plane(n, ch);
                let base = (n * CHANNELS + ch) * h * w;
                for y in 0..ps {
                    let dst = base + (r * ps + y) * w + c * ps;
                    data[dst..dst + ps].copy_from_slice(&src[y * ps..(y + 1) * ps]);
                }
            }
        }
    }
    FrameSequence::new(data, frames, h, w)
}

/// Resizes every plane to `out_h × out_w`; results are clamped to `[0, 1]`.
pub fn resize(seq: &FrameSequence, out_h: usize, out_w: usize, method: Interpolation) -> Result<FrameSequence> {
    if out_h == 0 || out_w == 0 {
        return Err(shape_err!("cannot resize to {out_h}x{out_w}"));
    }
    let rows = AxisWeights::new(seq.height, out_h, method);
    let cols = AxisWeights::new(seq.width, out_w, method);
    let (h, w) = (seq.height, seq.width);
    seq.map_planes(out_h, out_w, |_, _, p| resample_plane(p, h, w, &rows, &cols))
}

/// Shrinks frames by `factor` (2 or 4).
pub fn downsample(seq: &FrameSequence, factor: usize, method: Interpolation) -> Result<FrameSequence> {
    if factor != 2 && factor != 4 {
        return Err(config_err!("downsample factor must be 2 or 4, got {factor}"));
    }
    if seq.height % factor != 0 || seq.width % factor != 0 {
        return Err(shape_err!(
            "{}x{} frames are not divisible by {factor}",
            seq.height,
            seq.width
        ));
    }
    resize(seq, seq.height / factor, seq.width / factor, method)
}

/// Enlarges frames by an integer factor.
pub fn upsample(seq: &FrameSequence, factor: usize, method: Interpolation) -> Result<FrameSequence> {
    if factor == 0 {
        return Err(config_err!("upsample factor must be positive"));
    }
    resize(seq, seq.height * factor, seq.width * factor, method)
}

/// Dark-patch rejection rule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DarkFilter {
    /// Mean RGB value below which a patch counts as too dark.
    pub threshold: f64,
    /// When set, also reject patches with a dark border strip of this many
    /// pixels next to normally lit content.
    pub border_strip: Option<usize>,
}

impl Default for DarkFilter {
    fn default() -> Self {
        DarkFilter {
            threshold: 0.05,
            border_strip: None,
        }
    }
}

impl DarkFilter {
    pub fn rejects(&self, seq: &FrameSequence) -> bool {
        if is_too_dark(seq, self.threshold) {
            return true;
        }
        match self.border_strip {
            Some(strip) if strip > 0 => has_dark_border(seq, strip, self.threshold),
            _ => false,
        }
    }
}

/// True iff the mean over every RGB value of every frame is strictly below
/// `threshold`.
pub fn is_too_dark(seq: &FrameSequence, threshold: f64) -> bool {
    seq.mean() < threshold
}

fn has_dark_border(seq: &FrameSequence, strip: usize, threshold: f64) -> bool {
    let (h, w) = (seq.height, seq.width);
    let strip_h = strip.min(h);
    let strip_w = strip.min(w);
    let sides: [(usize, usize, usize, usize); 4] = [
        (0, strip_h, 0, w),
        (h - strip_h, h, 0, w),
        (0, h, 0, strip_w),
        (0, h, w - strip_w, w),
    ];
    sides.iter().any(|&(y0, y1, x0, x1)| {
        let mut sum = 0f64;
        let mut count = 0usize;
        for plane in seq.planes() {
            for y in y0..y1 {
                for &v in &plane[y * w + x0..y * w + x1] {
                    sum += v as f64;
                }
            }
            count += (y1 - y0) * (x1 - x0);
        }
        sum / (count as f64) < threshold
    })
}

/// Geometric augmentation applied identically to every frame: rotate by
/// quarter turns (counter-clockwise), then mirror about the vertical axis,
/// then mirror about the horizontal axis.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentationSpec {
    pub rotation_quarter_turns: u8,
    /// Mirror left-right (flip on the vertical axis).
    pub flip_vertical: bool,
    /// Mirror top-bottom (flip on the horizontal axis).
    pub flip_horizontal: bool,
    pub seed: u64,
}

impl AugmentationSpec {
    /// Draws a rotation uniformly from {0°, 90°, 180°, 270°} and each flip
    /// with probability one half.
    pub fn sample(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        AugmentationSpec {
            rotation_quarter_turns: rng.gen_range(0..4),
            flip_vertical: rng.gen_bool(0.5),
            flip_horizontal: rng.gen_bool(0.5),
            seed,
        }
    }

    pub fn identity() -> Self {
        Self::default()
    }
}

pub fn augment(seq: &FrameSequence, spec: &AugmentationSpec) -> Result<FrameSequence> {
    if spec.rotation_quarter_turns > 3 {
        return Err(config_err!(
            "rotation must be 0..=3 quarter turns, got {}",
            spec.rotation_quarter_turns
        ));
    }
    let (h, w) = (seq.height, seq.width);
    if spec.rotation_quarter_turns % 2 == 1 && h != w {
        return Err(shape_err!("odd quarter-turn rotation needs square frames, got {h}x{w}"));
    }
    let turns = spec.rotation_quarter_turns;
    // source coordinate of output pixel (y, x)
    let src = move |y: usize, x: usize| -> (usize, usize) {
        let (y, x) = if spec.flip_horizontal { (h - 1 - y, x) } else { (y, x) };
        let (y, x) = if spec.flip_vertical { (y, w - 1 - x) } else { (y, x) };
        match turns {
            0 => (y, x),
            1 => (x, w - 1 - y),
            2 => (h - 1 - y, w - 1 - x),
            _ => (h - 1 - x, y),
        }
    };
    seq.map_planes(h, w, |_, _, plane| {
        let mut out = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                let (sy, sx) = src(y, x);
                out.push(plane[sy * w + sx]);
            }
        }
        out
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(n: usize, h: usize, w: usize) -> FrameSequence {
        let total = (n * 3 * h * w) as f32;
        FrameSequence::from_fn(n, h, w, |f, c, y, x| {
            (((f * 3 + c) * h + y) * w + x) as f32 / total
        })
        .unwrap()
    }

    #[test]
    fn construction_rejects_bad_buffers() {
        assert!(matches!(FrameSequence::new(vec![0.0; 11], 1, 2, 2), Err(Error::Shape(_))));
        assert!(matches!(FrameSequence::new(vec![1.5; 12], 1, 2, 2), Err(Error::Range(_))));
        assert!(matches!(FrameSequence::new(vec![f32::NAN; 12], 1, 2, 2), Err(Error::Range(_))));
        assert!(FrameSequence::new(vec![], 0, 2, 2).is_err());
    }

    #[test]
    fn full_frame_crop_is_identity() {
        let s = ramp(1, 4, 4);
        assert_eq!(crop_fixed(&s, 4, (0, 0)).unwrap(), s);
    }

    #[test]
    fn crop_shapes_and_bounds() {
        let s = FrameSequence::constant(3, 128, 128, 0.2).unwrap();
        assert_eq!(crop_fixed(&s, 64, (0, 0)).unwrap().shape(), (3, 3, 64, 64));
        assert!(matches!(crop_fixed(&s, 64, (120, 120)), Err(Error::Range(_))));
    }

    #[test]
    fn crop_copies_pixels_verbatim() {
        let s = ramp(2, 6, 7);
        let c = crop_fixed(&s, 3, (2, 4)).unwrap();
        for f in 0..2 {
            for ch in 0..3 {
                for y in 0..3 {
                    for x in 0..3 {
                        assert_eq!(c.get(f, ch, y, x), s.get(f, ch, y + 2, x + 4));
                    }
                }
            }
        }
    }

    #[test]
    fn grid_counts() {
        let s = FrameSequence::constant(2, 64, 64, 0.5).unwrap();
        let g = split_into_grid(&s, 16).unwrap();
        assert_eq!((g.grid_rows, g.grid_cols, g.len()), (4, 4, 16));
        let g = split_into_grid(&FrameSequence::constant(2, 32, 32, 0.5).unwrap(), 16).unwrap();
        assert_eq!((g.grid_rows, g.grid_cols, g.len()), (2, 2, 4));
        assert!(g.patches.iter().all(|p| p.seq.frames() == 2));
        let single = ramp(1, 16, 16);
        let g = split_into_grid(&single, 16).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g.patches[0].seq, single);
        assert!(matches!(split_into_grid(&ramp(1, 20, 16), 16), Err(Error::Shape(_))));
    }

    #[test]
    fn reassemble_places_quadrants() {
        let values = [0.25f32, 0.5, 0.75, 1.0];
        let patches = (0..4)
            .map(|i| Patch {
                row: i / 2,
                col: i % 2,
                seq: FrameSequence::constant(1, 2, 2, values[i]).unwrap(),
            })
            .collect();
        let grid = PatchGrid {
            patches,
            grid_rows: 2,
            grid_cols: 2,
            patch_size: 2,
            source_shape: (4, 4),
        };
        let img = reassemble(&grid).unwrap();
        assert_eq!(img.get(0, 0, 0, 0), 0.25);
        assert_eq!(img.get(0, 1, 1, 3), 0.5);
        assert_eq!(img.get(0, 2, 3, 0), 0.75);
        assert_eq!(img.get(0, 0, 3, 3), 1.0);
    }

    #[test]
    fn reassemble_detects_missing_and_duplicate_patches() {
        let s = ramp(1, 8, 8);
        let mut g = split_into_grid(&s, 4).unwrap();
        g.patches.pop();
        assert!(matches!(reassemble(&g), Err(Error::Consistency(_))));
        let mut g = split_into_grid(&s, 4).unwrap();
        g.patches[3].row = 0;
        g.patches[3].col = 0;
        assert!(matches!(reassemble(&g), Err(Error::Consistency(_))));
    }

    #[test]
    fn downsample_shapes_and_constants() {
        let s = FrameSequence::constant(1, 128, 128, 0.5).unwrap();
        for m in [Interpolation::Bicubic, Interpolation::Bilinear] {
            let d2 = downsample(&s, 2, m).unwrap();
            assert_eq!(d2.shape(), (1, 3, 64, 64));
            assert!(d2.data().iter().all(|v| (v - 0.5).abs() <= 1e-6));
            assert_eq!(downsample(&s, 4, m).unwrap().shape(), (1, 3, 32, 32));
        }
        assert!(matches!(downsample(&s, 3, Interpolation::Bicubic), Err(Error::Config(_))));
        let odd = FrameSequence::constant(1, 10, 12, 0.5).unwrap();
        assert!(matches!(downsample(&odd, 4, Interpolation::Bicubic), Err(Error::Shape(_))));
    }

    #[test]
    fn downsample_output_stays_in_range() {
        // a hard checkerboard overshoots with bicubic before clamping
        let s = FrameSequence::from_fn(1, 16, 16, |_, _, y, x| ((y / 2 + x / 2) % 2) as f32).unwrap();
        let d = downsample(&s, 2, Interpolation::Bicubic).unwrap();
        assert!(d.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn dark_filter_boundaries() {
        assert!(is_too_dark(&FrameSequence::constant(1, 4, 4, 0.0).unwrap(), 0.05));
        assert!(!is_too_dark(&FrameSequence::constant(1, 4, 4, 1.0).unwrap(), 0.05));
        assert!(!is_too_dark(&FrameSequence::constant(1, 4, 4, 0.05).unwrap(), 0.05));
    }

    #[test]
    fn border_check_catches_dark_edge() {
        let s = FrameSequence::from_fn(1, 8, 8, |_, _, _, x| if x < 2 { 0.0 } else { 0.8 }).unwrap();
        let plain = DarkFilter::default();
        assert!(!plain.rejects(&s));
        let bordered = DarkFilter {
            border_strip: Some(2),
            ..plain
        };
        assert!(bordered.rejects(&s));
        assert!(!bordered.rejects(&FrameSequence::constant(1, 8, 8, 0.6).unwrap()));
    }

    #[test]
    fn augment_identity_and_half_turn() {
        let s = ramp(2, 2, 2);
        assert_eq!(augment(&s, &AugmentationSpec::identity()).unwrap(), s);
        let spec = AugmentationSpec {
            rotation_quarter_turns: 2,
            ..Default::default()
        };
        let r = augment(&s, &spec).unwrap();
        for f in 0..2 {
            for c in 0..3 {
                assert_eq!(r.get(f, c, 0, 0), s.get(f, c, 1, 1));
                assert_eq!(r.get(f, c, 0, 1), s.get(f, c, 1, 0));
                assert_eq!(r.get(f, c, 1, 0), s.get(f, c, 0, 1));
                assert_eq!(r.get(f, c, 1, 1), s.get(f, c, 0, 0));
            }
        }
    }

    #[test]
    fn quarter_turn_is_counter_clockwise() {
        let s = ramp(1, 3, 3);
        let spec = AugmentationSpec {
            rotation_quarter_turns: 1,
            ..Default::default()
        };
        let r = augment(&s, &spec).unwrap();
        // the top-right corner moves to the top-left
        assert_eq!(r.get(0, 0, 0, 0), s.get(0, 0, 0, 2));
        assert_eq!(r.get(0, 0, 2, 0), s.get(0, 0, 0, 0));
    }

    #[test]
    fn double_flip_is_identity_and_odd_rotation_needs_square() {
        let s = ramp(1, 3, 5);
        let flip = AugmentationSpec {
            flip_horizontal: true,
            ..Default::default()
        };
        assert_eq!(augment(&augment(&s, &flip).unwrap(), &flip).unwrap(), s);
        let rot = AugmentationSpec {
            rotation_quarter_turns: 3,
            ..Default::default()
        };
        assert!(matches!(augment(&s, &rot), Err(Error::Shape(_))));
    }

    #[test]
    fn sampled_augmentation_is_deterministic() {
        assert_eq!(AugmentationSpec::sample(42), AugmentationSpec::sample(42));
        let all: std::collections::HashSet<u8> =
            (0..64).map(|s| AugmentationSpec::sample(s).rotation_quarter_turns).collect();
        assert_eq!(all.len(), 4);
    }

    fn arb_seq() -> impl Strategy<Value = FrameSequence> {
        (1usize..3, 1usize..4, 1usize..4, 1usize..5).prop_flat_map(|(n, gr, gc, ps)| {
            let len = n * 3 * gr * ps * gc * ps;
            proptest::collection::vec(0f32..=1.0, len)
                .prop_map(move |d| FrameSequence::new(d, n, gr * ps, gc * ps).unwrap())
                .prop_map(move |s| (s, ps))
                .prop_map(|(s, _)| s)
        })
    }

    proptest! {
        #[test]
        fn split_reassemble_round_trip(seq in arb_seq(), pick in 0usize..4) {
            let divisors: Vec<usize> = (1..=seq.height().min(seq.width()))
                .filter(|d| seq.height() % d == 0 && seq.width() % d == 0)
                .collect();
            let ps = divisors[pick % divisors.len()];
            let grid = split_into_grid(&seq, ps).unwrap();
            prop_assert_eq!(reassemble(&grid).unwrap(), seq.clone());
            let again = split_into_grid(&reassemble(&grid).unwrap(), ps).unwrap();
            prop_assert_eq!(again, grid);
        }

        #[test]
        fn augment_permutes_pixel_values(d in proptest::collection::vec(0f32..=1.0, 2 * 3 * 16),
                                         turns in 0u8..4, fv: bool, fh: bool) {
            let seq = FrameSequence::new(d, 2, 4, 4).unwrap();
            let spec = AugmentationSpec { rotation_quarter_turns: turns, flip_vertical: fv, flip_horizontal: fh, seed: 0 };
            let out = augment(&seq, &spec).unwrap();
            let mut a = seq.data().to_vec();
            let mut b = out.data().to_vec();
            a.sort_by(f32::total_cmp);
            b.sort_by(f32::total_cmp);
            prop_assert_eq!(a, b);
        }

        #[test]
        fn dark_filter_monotone_in_threshold(v in 0f32..=1.0, t1 in 0f64..=1.0, t2 in 0f64..=1.0) {
            let seq = FrameSequence::constant(1, 2, 2, v).unwrap();
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            prop_assert!(!is_too_dark(&seq, lo) || is_too_dark(&seq, hi));
        }
    }
}
