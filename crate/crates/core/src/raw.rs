//! Raw frame files: concatenated u8 frames (row-major, channels interleaved)
//! plus a JSON sidecar at `<file>.json`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::container::atomic_write;
use crate::error::{CodecError, Result};
use crate::model::{Frame, VideoConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawDescriptor {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub fps: usize,
    pub frame_count: usize,
}

impl RawDescriptor {
    pub fn frame_len(&self) -> usize {
        self.width * self.height * self.channels
    }

    /// Video config with the given block and GOP layout.
    pub fn config(&self, block_size: usize, gop_size: usize) -> VideoConfig {
        VideoConfig::new(self.width, self.height, self.channels)
            .with_block(block_size)
            .with_gop(gop_size)
            .with_fps(self.fps)
            .with_window(1)
    }
}

pub fn sidecar_path(raw: &Path) -> PathBuf {
    let mut s = raw.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Reads frames from `raw`, or from the raw file next to a `.json` sidecar.
pub fn read_raw(path: &Path) -> Result<(RawDescriptor, Vec<Frame>)> {
    let (raw, sidecar) = match path.extension() {
        Some(ext) if ext == "json" => (path.with_extension(""), path.to_path_buf()),
        _ => (path.to_path_buf(), sidecar_path(path)),
    };
    let desc: RawDescriptor = serde_json::from_slice(&std::fs::read(&sidecar)?)?;
    let bytes = std::fs::read(&raw)?;
    frames_from_bytes(&desc, &bytes).map(|f| (desc, f))
}

pub fn frames_from_bytes(desc: &RawDescriptor, bytes: &[u8]) -> Result<Vec<Frame>> {
    let len = desc.frame_len();
    if len == 0 || desc.frame_count == 0 {
        return Err(CodecError::Argument("raw descriptor describes no pixels".into()));
    }
    if bytes.len() != len * desc.frame_count {
        return Err(CodecError::Shape(format!(
            "raw data has {} bytes, descriptor expects {} frames of {len}",
            bytes.len(),
            desc.frame_count
        )));
    }
    bytes
        .chunks_exact(len)
        .map(|c| Frame::new(desc.width, desc.height, desc.channels, c.to_vec()))
        .collect()
}

/// Writes frames and their sidecar, each atomically.
pub fn write_raw(path: &Path, frames: &[Frame], fps: usize) -> Result<RawDescriptor> {
    let first = frames
        .first()
        .ok_or_else(|| CodecError::Argument("no frames to write".into()))?;
    let desc = RawDescriptor {
        width: first.width(),
        height: first.height(),
        channels: first.channels(),
        fps,
        frame_count: frames.len(),
    };
    if frames
        .iter()
        .any(|f| (f.width(), f.height(), f.channels()) != (desc.width, desc.height, desc.channels))
    {
        return Err(CodecError::Shape("frames differ in size".into()));
    }
    atomic_write(path, |w| {
        for f in frames {
            std::io::Write::write_all(w, f.pixels())?;
        }
        Ok(())
    })?;
    atomic_write(&sidecar_path(path), |w| {
        serde_json::to_writer_pretty(&mut *w, &desc)?;
        std::io::Write::write_all(w, b"\n")?;
        Ok(())
    })?;
    Ok(desc)
}
