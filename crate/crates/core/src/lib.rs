//! Codec-domain video toolkit: a lossless block-based I/P codec, P-frame
//! fusion and keyframe promotion, token-budget planning, and the CPVS
//! container.

pub mod budget;
pub mod codec;
pub mod container;
mod error;
pub mod fusion;
pub mod model;
pub mod raw;
pub mod synth;

pub use budget::{plan_budget, sample_gops, tokens_per_gop, BudgetPlan, BudgetQuery};
pub use codec::{decode, decode_parallel, encode, estimate_motion, warp, EncoderParams, MatchCost};
pub use container::{read_stream, write_stream};
pub use error::{CodecError, Result};
pub use fusion::{compose_motion, fuse_gop, keyframe_promote, FusionPlan};
pub use model::{
    validate_stream, CodecStream, EncodedFrame, Frame, MotionField, MotionVector, PFrame, ResidualPlane,
    ValidationReport, VideoConfig, Violation,
};
pub use synth::{corpus_entry, synth_video, synth_video_with, SynthKind, SynthOptions};
