//! P-frame fusion and keyframe promotion.
//!
//! Fused motion is an approximation (block-granular chain lookup), but fused
//! residuals are recomputed from decoded pixels, so decoding a fused or
//! promoted stream reproduces the retained frames exactly no matter how good
//! the composed motion is.

use rayon::prelude::*;

use crate::codec::{decode, warp};
use crate::error::{CodecError, Result};
use crate::model::{
    CodecStream, EncodedFrame, Frame, MotionField, MotionVector, PFrame, ResidualPlane, VideoConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FusionPlan {
    window: usize,
    slots_per_gop: usize,
}

impl FusionPlan {
    pub fn new(window: usize, gop_size: usize) -> Result<Self> {
        if window == 0 || gop_size % window != 0 {
            return Err(CodecError::Config(format!(
                "gop_size {gop_size} is not a multiple of fusion window {window}"
            )));
        }
        Ok(Self {
            window,
            slots_per_gop: gop_size / window,
        })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn slots_per_gop(&self) -> usize {
        self.slots_per_gop
    }
}

/// Composes a chronological chain of motion fields (oldest first) into one
/// field relative to the oldest field's reference.
///
/// For each block of the newest field, start from its own vector, then
/// repeatedly look up the block containing `clamp(center − v)` in the next
/// older field and add that block's vector. Results are saturated to
/// `±(extent − 1)`, beyond which warping is unchanged.
pub fn compose_motion(fields: &[MotionField]) -> Result<MotionField> {
    let Some(newest) = fields.last() else {
        return Err(CodecError::Argument("compose_motion needs at least one field".into()));
    };
    let (rows, cols, b) = (newest.rows(), newest.cols(), newest.block_size());
    if fields
        .iter()
        .any(|f| f.rows() != rows || f.cols() != cols || f.block_size() != b)
    {
        return Err(CodecError::Shape("motion fields disagree on grid".into()));
    }
    let (h, w) = ((rows * b) as i64, (cols * b) as i64);
    let half = (b / 2) as i64;
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let (cy, cx) = ((r * b) as i64 + half, (c * b) as i64 + half);
            let v0 = newest.get(r, c);
            let (mut dy, mut dx) = (i64::from(v0.dy), i64::from(v0.dx));
            for older in fields[..fields.len() - 1].iter().rev() {
                let py = (cy - dy).clamp(0, h - 1) as usize;
                let px = (cx - dx).clamp(0, w - 1) as usize;
                let step = older.get(py / b, px / b);
                dy += i64::from(step.dy);
                dx += i64::from(step.dx);
            }
            out.push(MotionVector::new(
                dy.clamp(-(h - 1), h - 1) as i32,
                dx.clamp(-(w - 1), w - 1) as i32,
            ));
        }
    }
    MotionField::new(rows, cols, b, out)
}

fn fused_p(target: &Frame, reference: &Frame, motion: MotionField, ref_offset: usize) -> Result<EncodedFrame> {
    let prediction = warp(reference, &motion)?;
    Ok(EncodedFrame::P(PFrame {
        ref_offset,
        motion,
        residual: ResidualPlane::difference(target, &prediction),
    }))
}

/// Collapses every window of `s` plain P-frames into one P-frame referencing
/// `s` frames back. Only timestamps that are multiples of `s` survive.
pub fn fuse_gop(stream: &CodecStream, plan: &FusionPlan) -> Result<CodecStream> {
    let cfg = stream.config;
    let s = plan.window();
    if cfg.gop_size % s != 0 {
        return Err(CodecError::Config(format!(
            "gop_size {} is not a multiple of fusion window {s}",
            cfg.gop_size
        )));
    }
    let plain = cfg.fusion_window == 1
        && stream.frames.iter().enumerate().all(|(t, f)| match f {
            EncodedFrame::I(_) => t % cfg.gop_size == 0,
            EncodedFrame::P(p) => p.ref_offset == 1,
        });
    if !plain {
        return Err(CodecError::Argument("stream is already fused or promoted".into()));
    }
    crate::model::validate_stream(stream).into_result()?;
    let decoded = decode(stream)?;
    let retained: Vec<usize> = (0..decoded.len()).step_by(s).collect();
    let frames = retained
        .par_iter()
        .map(|&t| {
            if t % cfg.gop_size == 0 {
                return Ok(EncodedFrame::I(decoded[t].clone()));
            }
            let window: Vec<MotionField> = (t + 1 - s..=t)
                .map(|i| {
                    stream.frames[i]
                        .as_p()
                        .map(|p| p.motion.clone())
                        .expect("validated plain stream has P-frames inside GOPs")
                })
                .collect();
            let motion = compose_motion(&window)?;
            fused_p(&decoded[t], &decoded[t - s], motion, s)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CodecStream {
        config: VideoConfig {
            fusion_window: s,
            ..cfg
        },
        frames,
    })
}

/// Slot positions promoted to keyframes: `floor(j · slots / k)`.
pub fn keyframe_slots(slots: usize, k: usize) -> Vec<usize> {
    (0..k).map(|j| j * slots / k).collect()
}

/// Stores `k` uniformly spaced slots of every GOP as I-frames. Remaining
/// P-frames keep referencing the previous slot (`ref_offset` = window) and
/// have their residuals recomputed against the decoded reference.
pub fn keyframe_promote(stream: &CodecStream, keyframes_per_gop: usize) -> Result<CodecStream> {
    let cfg = stream.config;
    let slots = cfg.slots_per_gop();
    if keyframes_per_gop == 0 || keyframes_per_gop > slots {
        return Err(CodecError::Argument(format!(
            "keyframes per GOP must be in 1..={slots}, got {keyframes_per_gop}"
        )));
    }
    let unpromoted = stream.frames.iter().enumerate().all(|(j, f)| match f {
        EncodedFrame::I(_) => j % slots == 0,
        EncodedFrame::P(p) => p.ref_offset == cfg.fusion_window,
    });
    if !unpromoted {
        return Err(CodecError::Argument("stream already has promoted keyframes".into()));
    }
    crate::model::validate_stream(stream).into_result()?;
    let decoded = decode(stream)?;
    let keys = keyframe_slots(slots, keyframes_per_gop);
    let frames = (0..decoded.len())
        .into_par_iter()
        .map(|j| {
            if keys.contains(&(j % slots)) {
                return Ok(EncodedFrame::I(decoded[j].clone()));
            }
            let p = stream.frames[j].as_p().expect("non-key slot is a P-frame");
            fused_p(&decoded[j], &decoded[j - 1], p.motion.clone(), cfg.fusion_window)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CodecStream {
        config: cfg,
        frames,
    })
}
