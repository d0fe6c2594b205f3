use serde::{Deserialize, Serialize};

use crate::error::{EncoderError, Result};

/// Side length of the square patches used by the embedder and both
/// Δ-encoder branches.
pub const PATCH: usize = 16;

/// Number of stride-2 convolutions in the residual branch; together they
/// downsample by [`PATCH`].
pub const RESIDUAL_CONVS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Token width `d`.
    pub dim: usize,
    pub heads: usize,
    /// Motion tokens per P-frame (`K_τ`).
    pub k_motion: usize,
    /// Residual tokens per P-frame (`K_δ`).
    pub k_residual: usize,
    /// PreNorm blocks in each transformer.
    pub layers: usize,
    pub mlp_ratio: usize,
    pub channels: usize,
    /// Seed of the trainable initialization.
    pub seed: u64,
    /// Seed of the frozen embedder projection.
    pub embed_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            heads: 4,
            k_motion: 4,
            k_residual: 4,
            layers: 4,
            mlp_ratio: 2,
            channels: 1,
            seed: 0,
            embed_seed: 0x0e3b_ed00,
        }
    }
}

impl ModelConfig {
    /// Δ-tokens per P-frame, `N = K_τ + K_δ`.
    pub fn n_tokens(&self) -> usize {
        self.k_motion + self.k_residual
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(EncoderError::Config(m));
        if self.dim == 0 || self.heads == 0 || self.dim % self.heads != 0 {
            return err(format!("dim {} must be a positive multiple of heads {}", self.dim, self.heads));
        }
        if self.dim % 8 != 0 {
            return err(format!("dim {} must be divisible by 8 for the residual convolutions", self.dim));
        }
        if self.k_motion == 0 || self.k_residual == 0 {
            return err("query counts must be positive".into());
        }
        if self.layers == 0 || self.mlp_ratio == 0 {
            return err("layers and mlp_ratio must be positive".into());
        }
        if self.channels != 1 && self.channels != 3 {
            return err(format!("channels must be 1 or 3, got {}", self.channels));
        }
        if self.seed >= 1 << 53 || self.embed_seed >= 1 << 53 {
            return err("seeds must be below 2^53 to be stored exactly".into());
        }
        Ok(())
    }

    /// Image tokens per frame of the given size.
    pub fn m_tokens(&self, height: usize, width: usize) -> usize {
        (height / PATCH) * (width / PATCH)
    }

    /// Packs the config into the numeric record stored in checkpoints.
    pub(crate) fn to_record(self) -> Vec<f64> {
        [
            self.dim,
            self.heads,
            self.k_motion,
            self.k_residual,
            self.layers,
            self.mlp_ratio,
            self.channels,
        ]
        .iter()
        .map(|&v| v as f64)
        .chain([self.seed as f64, self.embed_seed as f64])
        .collect()
    }

    pub(crate) fn from_record(values: &[f64]) -> Result<Self> {
        if values.len() != 9 || values.iter().any(|v| v.fract() != 0.0 || *v < 0.0) {
            return Err(EncoderError::Config(format!("malformed config record {values:?}")));
        }
        let u = |i: usize| values[i] as usize;
        let cfg = Self {
            dim: u(0),
            heads: u(1),
            k_motion: u(2),
            k_residual: u(3),
            layers: u(4),
            mlp_ratio: u(5),
            channels: u(6),
            seed: values[7] as u64,
            embed_seed: values[8] as u64,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
