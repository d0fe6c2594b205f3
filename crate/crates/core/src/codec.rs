//! Block-matching encoder and the motion-compensated decode recurrence.

use rayon::prelude::*;

use crate::error::{CodecError, Result};
use crate::model::{
    CodecStream, EncodedFrame, Frame, MotionField, MotionVector, PFrame, ResidualPlane, VideoConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MatchCost {
    /// Sum of absolute differences.
    #[default]
    Sad,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderParams {
    pub search_radius: usize,
    pub cost: MatchCost,
}

impl Default for EncoderParams {
    fn default() -> Self {
        Self {
            search_radius: 8,
            cost: MatchCost::Sad,
        }
    }
}

fn clamp_coord(v: isize, len: usize) -> usize {
    v.clamp(0, len as isize - 1) as usize
}

/// Motion-compensated prediction: the output pixel at `p` is the reference
/// pixel at `p − τ(p)`, each coordinate clamped to the frame independently.
pub fn warp(reference: &Frame, motion: &MotionField) -> Result<Frame> {
    let (h, w, c) = (reference.height(), reference.width(), reference.channels());
    let b = motion.block_size();
    if motion.rows() * b != h || motion.cols() * b != w {
        return Err(CodecError::Config(format!(
            "{}x{} motion grid of block {b} does not cover a {h}x{w} frame",
            motion.rows(),
            motion.cols()
        )));
    }
    let src = reference.pixels();
    let mut out = Vec::with_capacity(src.len());
    for y in 0..h {
        for x in 0..w {
            let v = motion.get(y / b, x / b);
            let sy = clamp_coord(y as isize - v.dy as isize, h);
            let sx = clamp_coord(x as isize - v.dx as isize, w);
            let at = (sy * w + sx) * c;
            out.extend_from_slice(&src[at..at + c]);
        }
    }
    Frame::new(w, h, c, out)
}

/// `prediction + residual`, clamped to `[0, 255]`. The flag reports whether
/// the clamp had to act.
pub(crate) fn reconstruct(prediction: &Frame, residual: &ResidualPlane) -> (Frame, bool) {
    let mut clipped = false;
    let pixels = prediction
        .pixels()
        .iter()
        .zip(residual.values())
        .map(|(&p, &r)| {
            let v = i16::from(p) + r;
            if !(0..=255).contains(&v) {
                clipped = true;
            }
            v.clamp(0, 255) as u8
        })
        .collect();
    let frame = Frame::new(prediction.width(), prediction.height(), prediction.channels(), pixels)
        .expect("residual matches prediction shape");
    (frame, clipped)
}

struct BlockSearch<'a> {
    target: &'a Frame,
    reference: &'a Frame,
    block: usize,
}

impl BlockSearch<'_> {
    /// SAD of the block at `(y0, x0)` against the reference displaced by
    /// `(dy, dx)`; gives up once the running sum exceeds `bound`.
    fn sad(&self, y0: usize, x0: usize, dy: isize, dx: isize, bound: u64) -> u64 {
        let (h, w, c) = (self.target.height(), self.target.width(), self.target.channels());
        let b = self.block;
        let (tp, rp) = (self.target.pixels(), self.reference.pixels());
        let interior = y0 as isize - dy >= 0
            && (y0 + b) as isize - dy <= h as isize
            && x0 as isize - dx >= 0
            && (x0 + b) as isize - dx <= w as isize;
        let mut acc = 0u64;
        for y in y0..y0 + b {
            let sy = clamp_coord(y as isize - dy, h);
            let trow = &tp[(y * w + x0) * c..(y * w + x0 + b) * c];
            if interior {
                let sx0 = (x0 as isize - dx) as usize;
                let rrow = &rp[(sy * w + sx0) * c..(sy * w + sx0 + b) * c];
                acc += trow
                    .iter()
                    .zip(rrow)
                    .map(|(&a, &r)| u64::from(a.abs_diff(r)))
                    .sum::<u64>();
            } else {
                for (i, x) in (x0..x0 + b).enumerate() {
                    let sx = clamp_coord(x as isize - dx, w);
                    for ch in 0..c {
                        acc += u64::from(trow[i * c + ch].abs_diff(rp[(sy * w + sx) * c + ch]));
                    }
                }
            }
            if acc > bound {
                return acc;
            }
        }
        acc
    }

    fn best(&self, row: usize, col: usize, radius: isize) -> MotionVector {
        let (y0, x0) = (row * self.block, col * self.block);
        let key = |sad: u64, dy: isize, dx: isize| (sad, dy * dy + dx * dx, dy, dx);
        let mut best = key(self.sad(y0, x0, 0, 0, u64::MAX), 0, 0);
        for dy in -radius..=radius {
            for dx in -radius..=radius {
                if dy == 0 && dx == 0 {
                    continue;
                }
                let sad = self.sad(y0, x0, dy, dx, best.0);
                let k = key(sad, dy, dx);
                if k < best {
                    best = k;
                }
            }
        }
        MotionVector::new(best.2 as i32, best.3 as i32)
    }
}

/// Exhaustive block matching over `[−R, R]²`.
///
/// Each block takes the displacement minimizing
/// `(SAD, dy² + dx², dy, dx)` lexicographically, so flat or static content
/// always resolves to the zero vector.
pub fn estimate_motion(
    target: &Frame,
    reference: &Frame,
    block_size: usize,
    params: &EncoderParams,
) -> Result<MotionField> {
    if target.width() != reference.width()
        || target.height() != reference.height()
        || target.channels() != reference.channels()
    {
        return Err(CodecError::Shape(format!(
            "target {target:?} vs reference {reference:?}"
        )));
    }
    if block_size == 0 || target.width() % block_size != 0 || target.height() % block_size != 0 {
        return Err(CodecError::Config(format!(
            "block size {block_size} does not tile {target:?}"
        )));
    }
    let (rows, cols) = (target.height() / block_size, target.width() / block_size);
    let search = BlockSearch {
        target,
        reference,
        block: block_size,
    };
    let radius = params.search_radius as isize;
    let vectors = (0..rows * cols)
        .into_par_iter()
        .map(|i| search.best(i / cols, i % cols, radius))
        .collect();
    MotionField::new(rows, cols, block_size, vectors)
}

/// Encodes a frame sequence: I-frames at GOP boundaries, closed-loop plain
/// P-frames (`ref_offset` 1) everywhere else. The returned stream has
/// `fusion_window` 1.
pub fn encode(frames: &[Frame], config: &VideoConfig, params: &EncoderParams) -> Result<CodecStream> {
    let config = VideoConfig {
        fusion_window: 1,
        ..*config
    };
    config.validate()?;
    if frames.is_empty() {
        return Err(CodecError::Argument("cannot encode an empty video".into()));
    }
    let mut out = Vec::with_capacity(frames.len());
    let mut recon: Option<Frame> = None;
    for (t, frame) in frames.iter().enumerate() {
        frame.check(&config)?;
        let encoded = match recon.as_ref() {
            Some(prev) if t % config.gop_size != 0 => {
                let motion = estimate_motion(frame, prev, config.block_size, params)?;
                let prediction = warp(prev, &motion)?;
                let residual = ResidualPlane::difference(frame, &prediction);
                let (rebuilt, _) = reconstruct(&prediction, &residual);
                recon = Some(rebuilt);
                EncodedFrame::P(PFrame {
                    ref_offset: 1,
                    motion,
                    residual,
                })
            }
            _ => {
                recon = Some(frame.clone());
                EncodedFrame::I(frame.clone())
            }
        };
        out.push(encoded);
    }
    Ok(CodecStream {
        config,
        frames: out,
    })
}

fn reference_index(stream: &CodecStream, j: usize, gop_start: usize, p: &PFrame) -> Result<usize> {
    let stride = stream.config.fusion_window;
    let dangling = |message: String| CodecError::StreamIntegrity { frame: j, message };
    if p.ref_offset == 0 || p.ref_offset % stride != 0 {
        return Err(dangling(format!(
            "ref_offset {} is not a positive multiple of stride {stride}",
            p.ref_offset
        )));
    }
    let back = p.ref_offset / stride;
    if back > j || j - back < gop_start {
        return Err(dangling(format!("ref_offset {} leaves the GOP", p.ref_offset)));
    }
    Ok(j - back)
}

fn decode_gop(
    stream: &CodecStream,
    range: std::ops::Range<usize>,
    mut on_clip: impl FnMut(usize),
) -> Result<Vec<Frame>> {
    let mut out: Vec<Frame> = Vec::with_capacity(range.len());
    for j in range.clone() {
        let frame = match &stream.frames[j] {
            EncodedFrame::I(f) => f.clone(),
            EncodedFrame::P(p) => {
                let r = reference_index(stream, j, range.start, p)?;
                let prediction = warp(&out[r - range.start], &p.motion)?;
                if !p.residual.conforms(&stream.config) {
                    return Err(CodecError::StreamIntegrity {
                        frame: j,
                        message: "residual shape does not match config".into(),
                    });
                }
                let (f, clipped) = reconstruct(&prediction, &p.residual);
                if clipped {
                    on_clip(j);
                }
                f
            }
        };
        out.push(frame);
    }
    Ok(out)
}

/// Sequential decode: I-frames verbatim, P-frames through
/// `warp(reference, τ) + δ`.
pub fn decode(stream: &CodecStream) -> Result<Vec<Frame>> {
    let mut out = Vec::with_capacity(stream.frames.len());
    for range in stream.gop_ranges() {
        out.extend(decode_gop(stream, range, |_| {})?);
    }
    Ok(out)
}

/// Decodes GOPs in parallel. Bit-identical to [`decode`].
pub fn decode_parallel(stream: &CodecStream) -> Result<Vec<Frame>> {
    let gops = stream
        .gop_ranges()
        .into_par_iter()
        .map(|range| decode_gop(stream, range, |_| {}))
        .collect::<Result<Vec<_>>>()?;
    Ok(gops.into_iter().flatten().collect())
}

/// Frames whose reconstruction leaves `[0, 255]` before clamping.
pub(crate) fn range_violations(stream: &CodecStream) -> Vec<(usize, String)> {
    let mut found = Vec::new();
    for range in stream.gop_ranges() {
        let mut clipped = Vec::new();
        if let Err(e) = decode_gop(stream, range, |j| clipped.push(j)) {
            found.push((0, e.to_string()));
        }
        found.extend(
            clipped
                .into_iter()
                .map(|j| (j, "prediction + residual leaves [0, 255]".to_string())),
        );
    }
    found
}
