//! Δ-encoder over codec primitives: a frozen stand-in patch embedder for
//! I-frames, motion and residual branches producing compact P-frame tokens,
//! alignment pretraining heads, next-frame retrieval and interleaved token
//! streams.

pub mod checkpoint;
mod config;
mod error;
pub mod features;
mod model;
pub mod retrieval;
pub mod stream;
pub mod train;

pub use config::{ModelConfig, PATCH, RESIDUAL_CONVS};
pub use error::{EncoderError, Result};
pub use model::{alignment_loss, DeltaEncoder, DeltaTokModel, PFrameInputs, PatchEmbedder, PretrainHeads};
pub use retrieval::{retrieval_eval, RetrievalReport};
pub use stream::{build_token_stream, StreamOptions, TokenEntry, TokenRole, TokenStream};
pub use train::{pretrain, DataConfig, LossRecord, TrainConfig};

pub type DeltaTokModel32 = DeltaTokModel<f32>;
pub type DeltaTokModel64 = DeltaTokModel<f64>;
