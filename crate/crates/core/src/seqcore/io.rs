//! Clip directories: `frame_000001.png`, `frame_000002.png`, ... holding
//! 8-bit RGB rasters. Values map to `[0, 1]` by division by 255.

use std::path::{Path, PathBuf};

use image::{ImageBuffer, Rgb, RgbImage};

use super::{FrameSequence, CHANNELS};
use crate::error::{shape_err, Error, Result};

pub const FRAME_PREFIX: &str = "frame_";
pub const FRAME_EXT: &str = "png";

pub fn frame_file_name(index: usize) -> String {
    format!("{FRAME_PREFIX}{index:06}.{FRAME_EXT}")
}

fn frame_index(path: &Path) -> Option<usize> {
    let name = path.file_name()?.to_str()?;
    let stem = name.strip_prefix(FRAME_PREFIX)?;
    let (digits, ext) = stem.split_once('.')?;
    if !ext.eq_ignore_ascii_case(FRAME_EXT) || digits.len() < 6 || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

/// Frame files of a clip directory, ordered by frame number.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut frames = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if let Some(idx) = frame_index(&path) {
            frames.push((idx, path));
        }
    }
    frames.sort();
    Ok(frames.into_iter().map(|(_, p)| p).collect())
}

pub fn frame_count(dir: &Path) -> Result<usize> {
    Ok(list_frames(dir)?.len())
}

fn read_frame(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|e| Error::Codec(format!("{}: {e}", path.display())))?;
    Ok(img.to_rgb8())
}

/// Loads frames `[start, start + len)` of a clip (0-based positions in frame order).
pub fn load_clip_window(dir: &Path, start: usize, len: usize) -> Result<FrameSequence> {
    let files = list_frames(dir)?;
    if len == 0 || start + len > files.len() {
        return Err(Error::Range(format!(
            "{}: window {start}..{} outside {} frames",
            dir.display(),
            start + len,
            files.len()
        )));
    }
    let mut data = Vec::new();
    let mut dims = None;
    for path in &files[start..start + len] {
        let img = read_frame(path)?;
        let (w, h) = img.dimensions();
        match dims {
            None => dims = Some((h as usize, w as usize)),
            Some(d) if d != (h as usize, w as usize) => {
                return Err(shape_err!(
                    "{} is {w}x{h}, earlier frames are {}x{}",
                    path.display(),
                    d.1,
                    d.0
                ))
            }
            _ => {}
        }
        let plane = (w * h) as usize;
        let base = data.len();
        data.resize(base + CHANNELS * plane, 0.0);
        for (i, px) in img.pixels().enumerate() {
            for c in 0..CHANNELS {
                data[base + c * plane + i] = px[c] as f32 / 255.0;
            }
        }
    }
    let (h, w) = dims.expect("window is non-empty");
    FrameSequence::new(data, len, h, w)
}

pub fn load_clip(dir: &Path) -> Result<FrameSequence> {
    let n = frame_count(dir)?;
    if n == 0 {
        return Err(Error::Range(format!("{}: no frame files", dir.display())));
    }
    load_clip_window(dir, 0, n)
}

pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes every frame as `frame_%06d.png` (1-based) into `dir`.
pub fn save_clip(seq: &FrameSequence, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (h, w) = (seq.height(), seq.width());
    let mut written = Vec::with_capacity(seq.frames());
    for n in 0..seq.frames() {
        let img: RgbImage = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
            let (x, y) = (x as usize, y as usize);
            Rgb([0, 1, 2].map(|c| quantize(seq.get(n, c, y, x))))
        });
        let path = dir.join(frame_file_name(n + 1));
        img.save(&path)
            .map_err(|e| Error::Codec(format!("{}: {e}", path.display())))?;
        written.push(path);
    }
    Ok(written)
}

/// Rounds every value to the nearest 8-bit level, as a save/load cycle would.
pub fn quantize_sequence(seq: &FrameSequence) -> FrameSequence {
    let data = seq.data().iter().map(|&v| quantize(v) as f32 / 255.0).collect();
    FrameSequence::new(data, seq.frames(), seq.height(), seq.width()).expect("quantized values stay in range")
}
