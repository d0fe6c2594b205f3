//! Frozen patch embedder, Δ-encoder branches and pretraining heads.

use deltatok_core::{Frame, MotionField, PFrame, ResidualPlane};
use deltatok_nn::layers::{Conv2d, Linear, Transformer, TransformerConfig};
use deltatok_nn::{init_normal, Graph, ParamId, ParamStore, Scalar, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{ModelConfig, PATCH, RESIDUAL_CONVS};
use crate::error::{EncoderError, Result};
use crate::features::{check_geometry, frame_patches, motion_input, residual_input, sinusoid_table};

const QUERY_STD: f64 = 0.02;

/// Stand-in image encoder: per-patch frozen linear map, plus sinusoidal
/// positions, through `tanh`.
#[derive(Debug, Clone)]
pub struct PatchEmbedder {
    pub projection: ParamId,
    pub channels: usize,
    pub dim: usize,
}

impl PatchEmbedder {
    fn new<T: Scalar>(store: &mut ParamStore<T>, cfg: &ModelConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.embed_seed);
        let fan_in = PATCH * PATCH * cfg.channels;
        let projection = store.add_frozen(
            "embedder.projection",
            init_normal(&mut rng, &[fan_in, cfg.dim], 1.0 / (fan_in as f64).sqrt()),
        );
        Self {
            projection,
            channels: cfg.channels,
            dim: cfg.dim,
        }
    }

    /// `[M, d]` image tokens of `frame`.
    pub fn embed<T: Scalar>(&self, store: &ParamStore<T>, frame: &Frame) -> Result<Tensor<T>> {
        if frame.channels() != self.channels {
            return Err(EncoderError::Shape(format!(
                "frame has {} channels, embedder expects {}",
                frame.channels(),
                self.channels
            )));
        }
        let patches = frame_patches::<T>(frame)?;
        let m = patches.rows();
        let mut g = Graph::new(store);
        let x = g.input(patches)?;
        let w = g.param(self.projection);
        let zero = g.input(Tensor::zeros(&[self.dim]))?;
        let h = g.linear(x, w, zero)?;
        let pe = g.input(sinusoid_table(m, self.dim))?;
        let h = g.add(h, pe)?;
        let y = g.tanh(h)?;
        Ok(g.value(y).clone())
    }
}

/// Motion and residual branches producing `K_τ + K_δ` Δ-tokens.
#[derive(Debug, Clone)]
pub struct DeltaEncoder {
    pub motion_fc1: Linear,
    pub motion_fc2: Linear,
    pub motion_queries: ParamId,
    pub motion_transformer: Transformer,
    pub residual_convs: Vec<Conv2d>,
    pub residual_queries: ParamId,
    pub residual_transformer: Transformer,
    pub k_motion: usize,
    pub k_residual: usize,
    pub dim: usize,
    pub channels: usize,
}

/// Reference and warped transformers used only for alignment pretraining.
#[derive(Debug, Clone)]
pub struct PretrainHeads {
    pub reference: Transformer,
    pub warped: Transformer,
}

/// All parameters of the embedder, Δ-encoder and heads in one store.
#[derive(Debug, Clone)]
pub struct DeltaTokModel<T: Scalar> {
    pub config: ModelConfig,
    pub store: ParamStore<T>,
    pub embedder: PatchEmbedder,
    pub encoder: DeltaEncoder,
    pub heads: PretrainHeads,
}

fn transformer_config(cfg: &ModelConfig) -> TransformerConfig {
    TransformerConfig {
        dim: cfg.dim,
        heads: cfg.heads,
        layers: cfg.layers,
        mlp_ratio: cfg.mlp_ratio,
    }
}

fn grid_features<T: Scalar>(g: &mut Graph<'_, T>, x: Var, queries: ParamId, tf: &Transformer, k: usize) -> Result<Var> {
    let (m, d) = (g.value(x).rows(), g.value(x).cols());
    let pe = g.input(sinusoid_table(m, d))?;
    let x = g.add(x, pe)?;
    let q = g.param(queries);
    let seq = g.concat_rows(&[x, q])?;
    let y = tf.forward(g, seq)?;
    Ok(g.slice_rows(y, m, k)?)
}

impl DeltaEncoder {
    fn new<T: Scalar>(store: &mut ParamStore<T>, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let d = cfg.dim;
        let tf = transformer_config(cfg);
        let motion_fc1 = Linear::new(store, "motion.fc1", PATCH * PATCH * 2, d, rng);
        let motion_fc2 = Linear::new(store, "motion.fc2", d, d, rng);
        let motion_queries = store.add("motion.queries", init_normal(rng, &[cfg.k_motion, d], QUERY_STD));
        let motion_transformer = Transformer::new(store, "motion.transformer", &tf, rng)?;
        let mut widths = vec![cfg.channels];
        widths.extend((0..RESIDUAL_CONVS).map(|i| d >> (RESIDUAL_CONVS - 1 - i)));
        let residual_convs = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Conv2d::new(store, &format!("residual.conv{i}"), w[0], w[1], rng))
            .collect();
        let residual_queries = store.add("residual.queries", init_normal(rng, &[cfg.k_residual, d], QUERY_STD));
        let residual_transformer = Transformer::new(store, "residual.transformer", &tf, rng)?;
        Ok(Self {
            motion_fc1,
            motion_fc2,
            motion_queries,
            motion_transformer,
            residual_convs,
            residual_queries,
            residual_transformer,
            k_motion: cfg.k_motion,
            k_residual: cfg.k_residual,
            dim: d,
            channels: cfg.channels,
        })
    }

    /// Motion tokens `[K_τ, d]` from a prepared `[M, 512]` motion input.
    pub fn motion_tokens<T: Scalar>(&self, g: &mut Graph<'_, T>, input: Var) -> Result<Var> {
        let h = self.motion_fc1.forward(g, input)?;
        let h = g.gelu(h)?;
        let h = self.motion_fc2.forward(g, h)?;
        grid_features(g, h, self.motion_queries, &self.motion_transformer, self.k_motion)
    }

    /// Residual tokens `[K_δ, d]` from a prepared `[H, W, C]` residual input.
    pub fn residual_tokens<T: Scalar>(&self, g: &mut Graph<'_, T>, input: Var) -> Result<Var> {
        let mut h = input;
        for (i, conv) in self.residual_convs.iter().enumerate() {
            h = conv.forward(g, h)?;
            if i + 1 < self.residual_convs.len() {
                h = g.gelu(h)?;
            }
        }
        let shape = g.value(h).shape().to_vec();
        let h = g.reshape(h, &[shape[0] * shape[1], shape[2]])?;
        grid_features(g, h, self.residual_queries, &self.residual_transformer, self.k_residual)
    }
}

impl PretrainHeads {
    fn new<T: Scalar>(store: &mut ParamStore<T>, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let tf = transformer_config(cfg);
        Ok(Self {
            reference: Transformer::new(store, "heads.reference", &tf, rng)?,
            warped: Transformer::new(store, "heads.warped", &tf, rng)?,
        })
    }

    /// Predicted `[M, d]` tokens of the target frame from the reference
    /// frame's tokens and the P-frame's Δ-tokens.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        prev_tokens: Var,
        motion_tokens: Var,
        residual_tokens: Var,
    ) -> Result<Var> {
        let m = g.value(prev_tokens).rows();
        let seq = g.concat_rows(&[prev_tokens, motion_tokens])?;
        let r = self.reference.forward(g, seq)?;
        let warped = g.slice_rows(r, 0, m)?;
        let seq = g.concat_rows(&[warped, residual_tokens])?;
        let out = self.warped.forward(g, seq)?;
        Ok(g.slice_rows(out, 0, m)?)
    }

    pub fn zero_output_projections<T: Scalar>(&self, store: &mut ParamStore<T>) {
        self.reference.zero_output_projections(store);
        self.warped.zero_output_projections(store);
    }
}

/// Prepared, geometry-checked inputs of one P-frame.
#[derive(Debug, Clone)]
pub struct PFrameInputs<T> {
    pub motion: Tensor<T>,
    pub residual: Tensor<T>,
}

impl<T: Scalar> PFrameInputs<T> {
    pub fn new(motion: &MotionField, residual: &ResidualPlane) -> Result<Self> {
        let (h, w) = (motion.rows() * motion.block_size(), motion.cols() * motion.block_size());
        if (h, w) != (residual.height(), residual.width()) {
            return Err(EncoderError::Shape(format!(
                "motion grid covers {h}x{w}, residual is {}x{}",
                residual.height(),
                residual.width()
            )));
        }
        check_geometry(h, w)?;
        Ok(Self {
            motion: motion_input(motion)?,
            residual: residual_input(residual)?,
        })
    }

    pub fn from_pframe(p: &PFrame) -> Result<Self> {
        Self::new(&p.motion, &p.residual)
    }

    pub fn cast<U: Scalar>(&self) -> PFrameInputs<U> {
        PFrameInputs {
            motion: self.motion.cast(),
            residual: self.residual.cast(),
        }
    }
}

impl<T: Scalar> DeltaTokModel<T> {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let embedder = PatchEmbedder::new(&mut store, &config);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let encoder = DeltaEncoder::new(&mut store, &config, &mut rng)?;
        let heads = PretrainHeads::new(&mut store, &config, &mut rng)?;
        Ok(Self {
            config,
            store,
            embedder,
            encoder,
            heads,
        })
    }

    /// Same model at another precision.
    pub fn cast<U: Scalar>(&self) -> DeltaTokModel<U> {
        DeltaTokModel {
            config: self.config,
            store: self.store.cast(),
            embedder: self.embedder.clone(),
            encoder: self.encoder.clone(),
            heads: self.heads.clone(),
        }
    }

    /// Trainable parameter count of the Δ-encoder (heads excluded).
    pub fn encoder_param_count(&self) -> usize {
        self.count_params(|name| name.starts_with("motion.") || name.starts_with("residual."))
    }

    pub fn head_param_count(&self) -> usize {
        self.count_params(|name| name.starts_with("heads."))
    }

    fn count_params(&self, keep: impl Fn(&str) -> bool) -> usize {
        self.store
            .iter()
            .filter(|(_, p)| p.trainable && keep(&p.name))
            .map(|(_, p)| p.tensor.len())
            .sum()
    }

    fn check_channels(&self, channels: usize) -> Result<()> {
        if channels != self.config.channels {
            return Err(EncoderError::Shape(format!(
                "input has {channels} channels, model expects {}",
                self.config.channels
            )));
        }
        Ok(())
    }

    pub fn embed_iframe(&self, frame: &Frame) -> Result<Tensor<T>> {
        self.embedder.embed(&self.store, frame)
    }

    pub fn encode_motion(&self, motion: &MotionField) -> Result<Tensor<T>> {
        let (h, w) = (motion.rows() * motion.block_size(), motion.cols() * motion.block_size());
        check_geometry(h, w)?;
        let mut g = Graph::new(&self.store);
        let x = g.input(motion_input(motion)?)?;
        let y = self.encoder.motion_tokens(&mut g, x)?;
        Ok(g.value(y).clone())
    }

    pub fn encode_residual(&self, residual: &ResidualPlane) -> Result<Tensor<T>> {
        self.check_channels(residual.channels())?;
        let mut g = Graph::new(&self.store);
        let x = g.input(residual_input(residual)?)?;
        let y = self.encoder.residual_tokens(&mut g, x)?;
        Ok(g.value(y).clone())
    }

    /// `[N, d]` Δ-tokens: motion tokens followed by residual tokens.
    pub fn delta_tokens(&self, p: &PFrame) -> Result<Tensor<T>> {
        self.check_channels(p.residual.channels())?;
        let inputs = PFrameInputs::from_pframe(p)?;
        let mut g = Graph::new(&self.store);
        let (tau, delta) = self.delta_vars(&mut g, &inputs)?;
        let y = g.concat_rows(&[tau, delta])?;
        Ok(g.value(y).clone())
    }

    pub fn delta_vars(&self, g: &mut Graph<'_, T>, inputs: &PFrameInputs<T>) -> Result<(Var, Var)> {
        let m = g.input(inputs.motion.clone())?;
        let tau = self.encoder.motion_tokens(g, m)?;
        let r = g.input(inputs.residual.clone())?;
        let delta = self.encoder.residual_tokens(g, r)?;
        Ok((tau, delta))
    }

    /// Builds the prediction graph; returns `(prev_tokens input, prediction)`.
    pub fn pretrain_graph(
        &self,
        g: &mut Graph<'_, T>,
        prev_tokens: &Tensor<T>,
        inputs: &PFrameInputs<T>,
    ) -> Result<(Var, Var)> {
        let x = g.input(prev_tokens.clone())?;
        let pred = self.predict(g, x, inputs)?;
        Ok((x, pred))
    }

    /// Prediction from previous-frame tokens already in the graph.
    pub fn predict(&self, g: &mut Graph<'_, T>, prev_tokens: Var, inputs: &PFrameInputs<T>) -> Result<Var> {
        let shape = g.value(prev_tokens).shape();
        if shape.len() != 2 || shape[1] != self.config.dim {
            return Err(EncoderError::Shape(format!(
                "previous tokens {shape:?}, expected [M, {}]",
                self.config.dim
            )));
        }
        let m = inputs.motion.rows();
        if shape[0] != m {
            return Err(EncoderError::Shape(format!(
                "{} previous tokens for a P-frame with {m} patches",
                shape[0]
            )));
        }
        let (tau, delta) = self.delta_vars(g, inputs)?;
        self.heads.forward(g, prev_tokens, tau, delta)
    }

    /// `X̂_P`, the predicted `[M, d]` tokens of the P-frame's target.
    pub fn pretrain_forward(&self, prev_tokens: &Tensor<T>, p: &PFrame) -> Result<Tensor<T>> {
        self.check_channels(p.residual.channels())?;
        let inputs = PFrameInputs::from_pframe(p)?;
        let mut g = Graph::new(&self.store);
        let (_, pred) = self.pretrain_graph(&mut g, prev_tokens, &inputs)?;
        Ok(g.value(pred).clone())
    }
}

/// `(1/M) Σ_i ‖target_i − predicted_i‖²`.
pub fn alignment_loss<T: Scalar>(predicted: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let p = g.input(predicted.clone())?;
    let t = g.input(target.clone())?;
    let l = g.mse_rows(p, t)?;
    Ok(g.value(l).item())
}
