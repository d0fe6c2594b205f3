//! Parameterized building blocks. Each layer only holds [`ParamId`]s; the
//! tensors live in a [`ParamStore`] so that whole models can be checkpointed,
//! cast and optimized as one flat list.

use rand::Rng;

use crate::error::{shape_err, Result};
use crate::graph::{Graph, Var};
use crate::params::{init_uniform, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            init_uniform(rng, &[in_dim, out_dim], in_dim),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_dim]));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let (w, b) = (g.param(self.weight), g.param(self.bias));
        g.linear(x, w, b)
    }

    pub fn zero<T: Scalar>(&self, store: &mut ParamStore<T>) {
        self.scale(store, T::zero());
    }

    /// Multiplies weight and bias by `factor`.
    pub fn scale<T: Scalar>(&self, store: &mut ParamStore<T>, factor: T) {
        for id in [self.weight, self.bias] {
            store.get_mut(id).tensor.scale_assign(factor);
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Self {
        Self {
            gain: store.add(format!("{name}.gain"), Tensor::full(&[dim], T::one())),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[dim])),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let (gain, bias) = (g.param(self.gain), g.param(self.bias));
        g.layer_norm(x, gain, bias)
    }
}

/// Unmasked multi-head scaled dot-product self-attention.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        heads: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return shape_err("attention", format!("dim {dim} not divisible by {heads} heads"));
        }
        Ok(Self {
            query: Linear::new(store, &format!("{name}.q"), dim, dim, rng),
            key: Linear::new(store, &format!("{name}.k"), dim, dim, rng),
            value: Linear::new(store, &format!("{name}.v"), dim, dim, rng),
            output: Linear::new(store, &format!("{name}.o"), dim, dim, rng),
            heads,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let dim = self.query.out_dim;
        let head_dim = dim / self.heads;
        let scale = T::one() / T::of(head_dim as f64).sqrt();
        let q = self.query.forward(g, x)?;
        let k = self.key.forward(g, x)?;
        let v = self.value.forward(g, x)?;
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let start = h * head_dim;
            let qh = g.slice_cols(q, start, head_dim)?;
            let kh = g.slice_cols(k, start, head_dim)?;
            let vh = g.slice_cols(v, start, head_dim)?;
            let scores = g.matmul_a_bt(qh, kh)?;
            let scores = g.scale(scores, scale)?;
            let attn = g.softmax_rows(scores)?;
            outs.push(g.matmul(attn, vh)?);
        }
        let merged = if outs.len() == 1 {
            outs[0]
        } else {
            g.concat_cols(&outs)?
        };
        self.output.forward(g, merged)
    }
}

#[derive(Debug, Clone)]
pub struct FeedForward {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl FeedForward {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            fc1: Linear::new(store, &format!("{name}.fc1"), dim, hidden, rng),
            fc2: Linear::new(store, &format!("{name}.fc2"), hidden, dim, rng),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let h = self.fc1.forward(g, x)?;
        let h = g.gelu(h)?;
        self.fc2.forward(g, h)
    }
}

/// `x + Attn(LN(x))`, then `x + FF(LN(x))`.
#[derive(Debug, Clone)]
pub struct PreNormBlock {
    pub norm1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub ff: FeedForward,
}

impl PreNormBlock {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        heads: usize,
        mlp_ratio: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            norm1: LayerNorm::new(store, &format!("{name}.ln1"), dim),
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), dim, heads, rng)?,
            norm2: LayerNorm::new(store, &format!("{name}.ln2"), dim),
            ff: FeedForward::new(store, &format!("{name}.ff"), dim, dim * mlp_ratio, rng),
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let h = self.norm1.forward(g, x)?;
        let h = self.attn.forward(g, h)?;
        let x = g.add(x, h)?;
        let h = self.norm2.forward(g, x)?;
        let h = self.ff.forward(g, h)?;
        g.add(x, h)
    }

    /// Zeroes both residual-branch output projections, making the block the
    /// identity map.
    pub fn zero_output_projections<T: Scalar>(&self, store: &mut ParamStore<T>) {
        self.scale_output_projections(store, T::zero());
    }

    pub fn scale_output_projections<T: Scalar>(&self, store: &mut ParamStore<T>, factor: T) {
        self.attn.output.scale(store, factor);
        self.ff.fc2.scale(store, factor);
    }
}

#[derive(Debug, Clone)]
pub struct TransformerConfig {
    pub dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub mlp_ratio: usize,
}

/// A stack of [`PreNormBlock`]s.
#[derive(Debug, Clone)]
pub struct Transformer {
    pub blocks: Vec<PreNormBlock>,
}

impl Transformer {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        cfg: &TransformerConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let blocks = (0..cfg.layers)
            .map(|i| {
                PreNormBlock::new(
                    store,
                    &format!("{name}.block{i}"),
                    cfg.dim,
                    cfg.heads,
                    cfg.mlp_ratio,
                    rng,
                )
            })
            .collect::<Result<_>>()?;
        Ok(Self { blocks })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, mut x: Var) -> Result<Var> {
        for block in &self.blocks {
            x = block.forward(g, x)?;
        }
        Ok(x)
    }

    pub fn zero_output_projections<T: Scalar>(&self, store: &mut ParamStore<T>) {
        self.scale_output_projections(store, T::zero());
    }

    pub fn scale_output_projections<T: Scalar>(&self, store: &mut ParamStore<T>, factor: T) {
        for block in &self.blocks {
            block.scale_output_projections(store, factor);
        }
    }
}

/// 3×3, stride-2, padding-1 convolution over `[H, W, C]` maps.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Conv2d {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = 9 * in_channels;
        Self {
            weight: store.add(
                format!("{name}.weight"),
                init_uniform(rng, &[3, 3, in_channels, out_channels], fan_in),
            ),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[out_channels])),
            in_channels,
            out_channels,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let (w, b) = (g.param(self.weight), g.param(self.bias));
        g.conv2d_s2(x, w, b)
    }
}
