//! Clip collections: a root directory holding one sub-directory of numbered
//! frames per clip, optionally listed (and ordered) by a `clips.txt` file.

use std::path::{Path, PathBuf};

use crate::error::{config_err, Error, Result};
use crate::seqcore::io::{frame_count, load_clip, load_clip_window};
use crate::seqcore::FrameSequence;

pub const CLIP_LIST: &str = "clips.txt";

#[derive(Clone, Debug)]
pub enum ClipData {
    Memory(FrameSequence),
    Directory(PathBuf),
}

#[derive(Clone, Debug)]
pub struct Clip {
    pub id: String,
    pub data: ClipData,
}

impl Clip {
    pub fn in_memory(id: impl Into<String>, seq: FrameSequence) -> Self {
        Clip {
            id: id.into(),
            data: ClipData::Memory(seq),
        }
    }

    pub fn frame_count(&self) -> Result<usize> {
        match &self.data {
            ClipData::Memory(s) => Ok(s.frames()),
            ClipData::Directory(d) => frame_count(d),
        }
    }

    /// Frames `[start, start + len)`; only those frames are read from disk.
    pub fn window(&self, start: usize, len: usize) -> Result<FrameSequence> {
        match &self.data {
            ClipData::Memory(s) => s.window(start, len),
            ClipData::Directory(d) => load_clip_window(d, start, len),
        }
    }

    pub fn load(&self) -> Result<FrameSequence> {
        match &self.data {
            ClipData::Memory(s) => Ok(s.clone()),
            ClipData::Directory(d) => load_clip(d),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub clips: Vec<Clip>,
}

impl Dataset {
    pub fn from_clips(clips: Vec<Clip>) -> Self {
        Dataset { clips }
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    /// Scans `root`. With a `clips.txt` the listed names are used in file
    /// order (blank lines and `#` comments skipped); otherwise every
    /// sub-directory holding at least one frame, sorted by name.
    pub fn open(root: &Path) -> Result<Self> {
        if !root.is_dir() {
            return Err(config_err!("dataset root {} is not a directory", root.display()));
        }
        let list = root.join(CLIP_LIST);
        let names: Vec<String> = if list.is_file() {
            let text = std::fs::read_to_string(&list).map_err(|e| Error::io(&list, e))?;
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(str::to_string)
                .collect()
        } else {
            let mut names = Vec::new();
            for entry in std::fs::read_dir(root).map_err(|e| Error::io(root, e))? {
                let entry = entry.map_err(|e| Error::io(root, e))?;
                let path = entry.path();
                if path.is_dir() && frame_count(&path)? > 0 {
                    names.push(entry.file_name().to_string_lossy().into_owned());
                }
            }
            names.sort();
            names
        };
        let mut clips = Vec::with_capacity(names.len());
        for name in names {
            let dir = root.join(&name);
            if !dir.is_dir() {
                return Err(config_err!("clip `{name}` listed in {} has no directory", list.display()));
            }
            clips.push(Clip {
                id: name,
                data: ClipData::Directory(dir),
            });
        }
        Ok(Dataset { clips })
    }
}
