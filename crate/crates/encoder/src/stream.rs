//! Interleaved I/P token streams.

use std::io::Write;

use deltatok_core::{validate_stream, CodecStream, EncodedFrame};
use deltatok_nn::{Scalar, Tensor};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{EncoderError, Result};
use crate::model::DeltaTokModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TokenRole {
    I,
    P,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenEntry {
    pub role: TokenRole,
    /// Source timestamp of the frame.
    pub frame_index: usize,
    pub tokens: Tensor<f32>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TokenStream {
    pub entries: Vec<TokenEntry>,
}

impl TokenStream {
    pub fn total_tokens(&self) -> usize {
        self.entries.iter().map(|e| e.tokens.rows()).sum()
    }

    pub fn roles(&self) -> Vec<TokenRole> {
        self.entries.iter().map(|e| e.role).collect()
    }

    /// One JSON object per entry: `{"role", "frame_index", "tokens"}`.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        #[derive(Serialize)]
        struct Line<'a> {
            role: TokenRole,
            frame_index: usize,
            tokens: Vec<&'a [f32]>,
        }
        for e in &self.entries {
            let line = Line {
                role: e.role,
                frame_index: e.frame_index,
                tokens: (0..e.tokens.rows()).map(|r| e.tokens.row(r)).collect(),
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StreamOptions {
    /// Replace every Δ-token block with zeros.
    pub zero_delta: bool,
}

/// Embeds the sampled GOPs of `stream` in display order: I-frames through
/// the embedder (`M` tokens), P-frames through the Δ-encoder (`N` tokens).
pub fn build_token_stream<T: Scalar>(
    stream: &CodecStream,
    model: &DeltaTokModel<T>,
    sampled_gops: &[usize],
    opts: StreamOptions,
) -> Result<TokenStream> {
    validate_stream(stream).into_result()?;
    if model.embedder.dim != model.encoder.dim {
        return Err(EncoderError::Config(format!(
            "embedder width {} differs from Δ-encoder width {}",
            model.embedder.dim, model.encoder.dim
        )));
    }
    if stream.config.channels != model.config.channels {
        return Err(EncoderError::Config(format!(
            "stream has {} channels, model expects {}",
            stream.config.channels, model.config.channels
        )));
    }
    let ranges = stream.gop_ranges();
    if let Some(&bad) = sampled_gops.iter().find(|&&g| g >= ranges.len()) {
        return Err(EncoderError::Argument(format!(
            "GOP {bad} requested from a stream with {} GOPs",
            ranges.len()
        )));
    }
    if sampled_gops.windows(2).any(|w| w[0] >= w[1]) {
        return Err(EncoderError::Argument("sampled GOPs must be strictly increasing".into()));
    }
    let decoded = deltatok_core::decode(stream)?;
    let indices: Vec<usize> = sampled_gops.iter().flat_map(|&g| ranges[g].clone()).collect();
    let n = model.config.n_tokens();
    let entries = indices
        .par_iter()
        .map(|&j| {
            let (role, tokens) = match &stream.frames[j] {
                EncodedFrame::I(_) => (TokenRole::I, model.embed_iframe(&decoded[j])?.cast()),
                EncodedFrame::P(_) if opts.zero_delta => (TokenRole::P, Tensor::zeros(&[n, model.config.dim])),
                EncodedFrame::P(p) => (TokenRole::P, model.delta_tokens(p)?.cast()),
            };
            Ok(TokenEntry {
                role,
                frame_index: stream.timestamp(j),
                tokens,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TokenStream { entries })
}
