//! Codec-domain data types and stream validation.

use std::fmt;

use crate::error::{CodecError, Result};

/// Global video geometry and GOP layout.
///
/// On a [`CodecStream`], `fusion_window` is the window that has been applied
/// to the stream: 1 for a plain encoder output, `s` after fusion. Entry `j`
/// of a stream therefore sits at source timestamp `j * fusion_window`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VideoConfig {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub block_size: usize,
    pub gop_size: usize,
    pub fps: usize,
    pub fusion_window: usize,
}

impl VideoConfig {
    pub const DEFAULT_BLOCK: usize = 16;
    pub const DEFAULT_GOP: usize = 240;
    pub const DEFAULT_FPS: usize = 30;
    pub const DEFAULT_WINDOW: usize = 30;

    /// Paper-default GOP layout (block 16, GOP 240, 30 fps, window 30).
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            block_size: Self::DEFAULT_BLOCK,
            gop_size: Self::DEFAULT_GOP,
            fps: Self::DEFAULT_FPS,
            fusion_window: Self::DEFAULT_WINDOW,
        }
    }

    pub fn with_block(mut self, block_size: usize) -> Self {
        self.block_size = block_size;
        self
    }

    pub fn with_gop(mut self, gop_size: usize) -> Self {
        self.gop_size = gop_size;
        self
    }

    pub fn with_window(mut self, fusion_window: usize) -> Self {
        self.fusion_window = fusion_window;
        self
    }

    pub fn with_fps(mut self, fps: usize) -> Self {
        self.fps = fps;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(CodecError::Config(m));
        if self.width == 0 || self.height == 0 {
            return err(format!("empty frame {}x{}", self.width, self.height));
        }
        if self.channels != 1 && self.channels != 3 {
            return err(format!("channels must be 1 or 3, got {}", self.channels));
        }
        if self.block_size == 0
            || self.width % self.block_size != 0
            || self.height % self.block_size != 0
        {
            return err(format!(
                "{}x{} is not divisible by block size {}",
                self.width, self.height, self.block_size
            ));
        }
        if self.gop_size == 0 || self.fps == 0 || self.fusion_window == 0 {
            return err("gop_size, fps and fusion_window must be positive".into());
        }
        if self.fusion_window > self.gop_size || self.gop_size % self.fusion_window != 0 {
            return err(format!(
                "gop_size {} is not a multiple of fusion_window {}",
                self.gop_size, self.fusion_window
            ));
        }
        Ok(())
    }

    pub fn grid_rows(&self) -> usize {
        self.height / self.block_size
    }

    pub fn grid_cols(&self) -> usize {
        self.width / self.block_size
    }

    pub fn frame_len(&self) -> usize {
        self.width * self.height * self.channels
    }

    pub fn slots_per_gop(&self) -> usize {
        self.gop_size / self.fusion_window
    }
}

/// 8-bit raster, `height × width × channels`, row-major.
#[derive(Clone, PartialEq, Eq)]
pub struct Frame {
    width: usize,
    height: usize,
    channels: usize,
    pixels: Vec<u8>,
}

impl fmt::Debug for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Frame({}x{}x{})", self.height, self.width, self.channels)
    }
}

impl Frame {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height * channels {
            return Err(CodecError::Shape(format!(
                "{}x{}x{} frame needs {} bytes, got {}",
                height,
                width,
                channels,
                width * height * channels,
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            pixels,
        })
    }

    pub fn filled(config: &VideoConfig, value: u8) -> Self {
        Self {
            width: config.width,
            height: config.height,
            channels: config.channels,
            pixels: vec![value; config.frame_len()],
        }
    }

    pub fn from_fn(config: &VideoConfig, mut f: impl FnMut(usize, usize, usize) -> u8) -> Self {
        let mut pixels = Vec::with_capacity(config.frame_len());
        for y in 0..config.height {
            for x in 0..config.width {
                for c in 0..config.channels {
                    pixels.push(f(y, x, c));
                }
            }
        }
        Self {
            width: config.width,
            height: config.height,
            channels: config.channels,
            pixels,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> u8 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    pub fn conforms(&self, config: &VideoConfig) -> bool {
        self.width == config.width
            && self.height == config.height
            && self.channels == config.channels
    }

    pub(crate) fn check(&self, config: &VideoConfig) -> Result<()> {
        if self.conforms(config) {
            Ok(())
        } else {
            Err(CodecError::Shape(format!(
                "frame {}x{}x{} does not match config {}x{}x{}",
                self.height, self.width, self.channels, config.height, config.width, config.channels
            )))
        }
    }
}

/// Integer block displacement. A target pixel at `p` is predicted from the
/// reference pixel at `p - (dy, dx)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct MotionVector {
    pub dy: i32,
    pub dx: i32,
}

impl MotionVector {
    pub const ZERO: Self = Self { dy: 0, dx: 0 };

    pub fn new(dy: i32, dx: i32) -> Self {
        Self { dy, dx }
    }

    pub fn magnitude_sq(self) -> i64 {
        i64::from(self.dy) * i64::from(self.dy) + i64::from(self.dx) * i64::from(self.dx)
    }
}

/// One vector per `block_size × block_size` block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MotionField {
    rows: usize,
    cols: usize,
    block_size: usize,
    vectors: Vec<MotionVector>,
}

impl MotionField {
    pub fn new(rows: usize, cols: usize, block_size: usize, vectors: Vec<MotionVector>) -> Result<Self> {
        if vectors.len() != rows * cols {
            return Err(CodecError::Shape(format!(
                "{rows}x{cols} motion grid needs {} vectors, got {}",
                rows * cols,
                vectors.len()
            )));
        }
        Ok(Self {
            rows,
            cols,
            block_size,
            vectors,
        })
    }

    pub fn zeros(config: &VideoConfig) -> Self {
        Self::uniform(config, MotionVector::ZERO)
    }

    pub fn uniform(config: &VideoConfig, v: MotionVector) -> Self {
        Self {
            rows: config.grid_rows(),
            cols: config.grid_cols(),
            block_size: config.block_size,
            vectors: vec![v; config.grid_rows() * config.grid_cols()],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn vectors(&self) -> &[MotionVector] {
        &self.vectors
    }

    pub fn get(&self, row: usize, col: usize) -> MotionVector {
        self.vectors[row * self.cols + col]
    }

    pub fn is_zero(&self) -> bool {
        self.vectors.iter().all(|&v| v == MotionVector::ZERO)
    }

    pub fn conforms(&self, config: &VideoConfig) -> bool {
        self.rows == config.grid_rows()
            && self.cols == config.grid_cols()
            && self.block_size == config.block_size
    }

    /// Per-pixel field of shape `H × W × 2` (row-major, `dy` then `dx`),
    /// replicating each block vector over its block.
    pub fn dense(&self) -> Vec<i32> {
        let (h, w) = (self.rows * self.block_size, self.cols * self.block_size);
        let mut out = Vec::with_capacity(h * w * 2);
        for y in 0..h {
            for x in 0..w {
                let v = self.get(y / self.block_size, x / self.block_size);
                out.push(v.dy);
                out.push(v.dx);
            }
        }
        out
    }

    /// Inverse of [`dense`](Self::dense): samples the top-left pixel of each block.
    pub fn from_dense(dense: &[i32], height: usize, width: usize, block_size: usize) -> Result<Self> {
        if dense.len() != height * width * 2 || height % block_size != 0 || width % block_size != 0 {
            return Err(CodecError::Shape(format!(
                "dense field of {} values for {height}x{width} / block {block_size}",
                dense.len()
            )));
        }
        let (rows, cols) = (height / block_size, width / block_size);
        let vectors = (0..rows * cols)
            .map(|i| {
                let (r, c) = (i / cols, i % cols);
                let at = ((r * block_size) * width + c * block_size) * 2;
                MotionVector::new(dense[at], dense[at + 1])
            })
            .collect();
        Self::new(rows, cols, block_size, vectors)
    }
}

/// Signed per-pixel correction, `height × width × channels`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResidualPlane {
    width: usize,
    height: usize,
    channels: usize,
    values: Vec<i16>,
}

impl ResidualPlane {
    pub fn new(width: usize, height: usize, channels: usize, values: Vec<i16>) -> Result<Self> {
        if values.len() != width * height * channels {
            return Err(CodecError::Shape(format!(
                "{height}x{width}x{channels} residual needs {} values, got {}",
                width * height * channels,
                values.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            values,
        })
    }

    pub fn zeros(config: &VideoConfig) -> Self {
        Self {
            width: config.width,
            height: config.height,
            channels: config.channels,
            values: vec![0; config.frame_len()],
        }
    }

    /// `target − prediction`, elementwise.
    pub fn difference(target: &Frame, prediction: &Frame) -> Self {
        Self {
            width: target.width,
            height: target.height,
            channels: target.channels,
            values: target
                .pixels
                .iter()
                .zip(&prediction.pixels)
                .map(|(&t, &p)| i16::from(t) - i16::from(p))
                .collect(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[i16] {
        &self.values
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0)
    }

    /// Sum of absolute values.
    pub fn energy(&self) -> u64 {
        self.values.iter().map(|&v| u64::from(v.unsigned_abs())).sum()
    }

    pub fn conforms(&self, config: &VideoConfig) -> bool {
        self.width == config.width
            && self.height == config.height
            && self.channels == config.channels
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PFrame {
    /// Distance back to the reference, in source frames.
    pub ref_offset: usize,
    pub motion: MotionField,
    pub residual: ResidualPlane,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EncodedFrame {
    I(Frame),
    P(PFrame),
}

impl EncodedFrame {
    pub fn is_intra(&self) -> bool {
        matches!(self, Self::I(_))
    }

    pub fn as_p(&self) -> Option<&PFrame> {
        match self {
            Self::P(p) => Some(p),
            Self::I(_) => None,
        }
    }
}

/// Display-ordered GOP sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodecStream {
    pub config: VideoConfig,
    pub frames: Vec<EncodedFrame>,
}

impl CodecStream {
    /// Source timestamp of stream entry `index`.
    pub fn timestamp(&self, index: usize) -> usize {
        index * self.config.fusion_window
    }

    pub fn gop_of(&self, index: usize) -> usize {
        self.timestamp(index) / self.config.gop_size
    }

    /// Entry ranges, one per GOP, in order.
    pub fn gop_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let per_gop = self.config.slots_per_gop();
        (0..self.frames.len())
            .step_by(per_gop)
            .map(|s| s..(s + per_gop).min(self.frames.len()))
            .collect()
    }

    pub fn count_intra(&self) -> usize {
        self.frames.iter().filter(|f| f.is_intra()).count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// `None` for stream-level problems.
    pub frame_index: Option<usize>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.frame_index {
            Some(i) => write!(f, "frame {i}: {}", self.message),
            None => write!(f, "stream: {}", self.message),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn frames(&self) -> Vec<usize> {
        self.violations.iter().filter_map(|v| v.frame_index).collect()
    }

    fn push(&mut self, frame_index: Option<usize>, message: impl Into<String>) {
        self.violations.push(Violation {
            frame_index,
            message: message.into(),
        });
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_ok() {
            Ok(())
        } else {
            let msgs: Vec<String> = self.violations.iter().map(ToString::to_string).collect();
            Err(CodecError::Invalid(msgs.join("; ")))
        }
    }
}

/// Checks every structural stream invariant and reports all violations.
///
/// When the structure is sound, the stream is also decoded to confirm that
/// every predicted pixel plus residual lands in `[0, 255]`.
pub fn validate_stream(stream: &CodecStream) -> ValidationReport {
    let mut report = ValidationReport::default();
    let cfg = &stream.config;
    if let Err(e) = cfg.validate() {
        report.push(None, e.to_string());
        return report;
    }
    if stream.frames.is_empty() {
        report.push(None, "stream has no frames");
        return report;
    }
    let stride = cfg.fusion_window;
    for (j, frame) in stream.frames.iter().enumerate() {
        let t = stream.timestamp(j);
        match frame {
            EncodedFrame::I(f) => {
                if !f.conforms(cfg) {
                    report.push(Some(j), "I-frame shape does not match config");
                }
            }
            EncodedFrame::P(p) => {
                if t % cfg.gop_size == 0 {
                    report.push(Some(j), "GOP start must be an I-frame");
                }
                if p.ref_offset != stride {
                    report.push(
                        Some(j),
                        format!("ref_offset {} differs from stream stride {stride}", p.ref_offset),
                    );
                }
                if p.ref_offset > t || (t - p.ref_offset) / cfg.gop_size != t / cfg.gop_size {
                    report.push(
                        Some(j),
                        format!("ref_offset {} leaves the GOP", p.ref_offset),
                    );
                }
                if !p.motion.conforms(cfg) {
                    report.push(Some(j), "motion grid does not match config");
                } else {
                    let (lim_y, lim_x) = (cfg.height as i32 - 1, cfg.width as i32 - 1);
                    if p
                        .motion
                        .vectors()
                        .iter()
                        .any(|v| v.dy.abs() > lim_y || v.dx.abs() > lim_x)
                    {
                        report.push(Some(j), "motion vector exceeds frame extent");
                    }
                }
                if !p.residual.conforms(cfg) {
                    report.push(Some(j), "residual shape does not match config");
                } else if p.residual.values().iter().any(|&v| !(-255..=255).contains(&v)) {
                    report.push(Some(j), "residual outside [-255, 255]");
                }
            }
        }
    }
    if report.is_ok() {
        for (j, message) in crate::codec::range_violations(stream) {
            report.push(Some(j), message);
        }
    }
    report
}
