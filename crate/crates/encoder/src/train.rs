//! Alignment pretraining on seeded synthetic video.

use deltatok_core::{
    decode, encode, fuse_gop, synth_video, CodecStream, EncodedFrame, EncoderParams, Frame, FusionPlan, SynthKind,
    VideoConfig,
};
use deltatok_nn::optim::{adam_step, AdamConfig, AdamState, CosineSchedule};
use deltatok_nn::{Graph, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{EncoderError, Result};
use crate::config::ModelConfig;
use crate::model::{DeltaTokModel, PFrameInputs};

/// Geometry and content of a synthetic video collection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DataConfig {
    pub kind: SynthKind,
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub block_size: usize,
    /// Source frames per video.
    pub frames: usize,
    /// Fusion window applied before sampling; 1 keeps every frame.
    pub window: usize,
    pub videos: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            kind: SynthKind::MovingRect,
            width: 32,
            height: 32,
            channels: 1,
            block_size: 8,
            frames: 16,
            window: 1,
            videos: 64,
        }
    }
}

impl DataConfig {
    pub fn video_config(&self) -> VideoConfig {
        VideoConfig::new(self.width, self.height, self.channels)
            .with_block(self.block_size)
            .with_gop(self.frames.div_ceil(self.window) * self.window)
            .with_window(1)
    }
}

/// A synthetic video and its (possibly fused) codec stream.
#[derive(Debug, Clone)]
pub struct EncodedVideo {
    /// Decoded frames at the stream's retained timestamps.
    pub frames: Vec<Frame>,
    pub stream: CodecStream,
}

/// Synthesizes, encodes and fuses video `index` of the collection seeded by
/// `data_seed`.
pub fn make_video(data: &DataConfig, data_seed: u64, index: usize) -> Result<EncodedVideo> {
    let cfg = data.video_config();
    let seed = data_seed.wrapping_mul(0x9e37_79b9).wrapping_add(index as u64);
    let raw = synth_video(data.kind, seed, &cfg, data.frames)?;
    let mut stream = encode(&raw, &cfg, &EncoderParams::default())?;
    if data.window > 1 {
        stream = fuse_gop(&stream, &FusionPlan::new(data.window, cfg.gop_size)?)?;
    }
    let frames = decode(&stream)?;
    Ok(EncodedVideo { frames, stream })
}

pub fn make_videos(data: &DataConfig, data_seed: u64) -> Result<Vec<EncodedVideo>> {
    (0..data.videos)
        .into_par_iter()
        .map(|i| make_video(data, data_seed, i))
        .collect()
}

/// One `(previous frame, P-frame, target frame)` triple, already embedded.
#[derive(Debug, Clone)]
pub struct Sample {
    pub prev_tokens: Tensor<f64>,
    pub inputs: PFrameInputs<f64>,
    pub target_tokens: Tensor<f64>,
}

/// Every P-frame of `videos` as a training sample.
pub fn build_samples(model: &DeltaTokModel<f64>, videos: &[EncodedVideo]) -> Result<Vec<Sample>> {
    let per_video: Vec<Vec<Sample>> = videos
        .par_iter()
        .map(|v| {
            let tokens: Vec<Tensor<f64>> = v.frames.iter().map(|f| model.embed_iframe(f)).collect::<Result<_>>()?;
            v.stream
                .frames
                .iter()
                .enumerate()
                .filter_map(|(j, f)| match f {
                    EncodedFrame::P(p) => Some((j, p)),
                    EncodedFrame::I(_) => None,
                })
                .map(|(j, p)| {
                    Ok(Sample {
                        prev_tokens: tokens[j - 1].clone(),
                        inputs: PFrameInputs::from_pframe(p)?,
                        target_tokens: tokens[j].clone(),
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let samples: Vec<Sample> = per_video.into_iter().flatten().collect();
    if samples.is_empty() {
        return Err(EncoderError::Argument("dataset has no P-frames".into()));
    }
    Ok(samples)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch: usize,
    pub lr: f64,
    pub min_lr: f64,
    pub warmup: u64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip: Option<f64>,
    /// Seed of the batch order.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            batch: 16,
            lr: 3e-4,
            min_lr: 3e-5,
            warmup: 50,
            weight_decay: 0.01,
            clip: Some(1.0),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
}

/// Loss and parameter gradients for one sample.
pub fn sample_loss_and_grads(model: &DeltaTokModel<f64>, sample: &Sample) -> Result<(f64, Vec<Tensor<f64>>)> {
    let mut g = Graph::new(&model.store);
    let (_, pred) = model.pretrain_graph(&mut g, &sample.prev_tokens, &sample.inputs)?;
    let target = g.input(sample.target_tokens.clone())?;
    let loss = g.mse_rows(pred, target)?;
    let value = g.value(loss).item();
    Ok((value, g.backward(loss)?.into_params()))
}

pub fn sample_loss(model: &DeltaTokModel<f64>, sample: &Sample) -> Result<f64> {
    let mut g = Graph::new(&model.store);
    let (_, pred) = model.pretrain_graph(&mut g, &sample.prev_tokens, &sample.inputs)?;
    let target = g.input(sample.target_tokens.clone())?;
    let loss = g.mse_rows(pred, target)?;
    Ok(g.value(loss).item())
}

/// Deterministic epoch-shuffled batch order.
struct Batches {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    pos: usize,
}

impl Batches {
    fn new(len: usize, seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            order: (0..len).collect(),
            pos: len,
        }
    }

    fn next(&mut self, batch: usize) -> Vec<usize> {
        (0..batch)
            .map(|_| {
                if self.pos == self.order.len() {
                    self.order.shuffle(&mut self.rng);
                    self.pos = 0;
                }
                self.pos += 1;
                self.order[self.pos - 1]
            })
            .collect()
    }
}

/// Trains the Δ-encoder and heads in place; returns the per-step loss history.
///
/// Per-sample gradients are computed in parallel and summed in batch order,
/// so the result does not depend on the thread count.
pub fn pretrain(
    model: &mut DeltaTokModel<f64>,
    samples: &[Sample],
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&LossRecord),
) -> Result<Vec<LossRecord>> {
    if samples.is_empty() || cfg.batch == 0 {
        return Err(EncoderError::Argument("training needs samples and a positive batch size".into()));
    }
    let schedule = CosineSchedule {
        base_lr: cfg.lr,
        min_lr: cfg.min_lr,
        warmup_steps: cfg.warmup,
        total_steps: cfg.steps,
    };
    let adam = AdamConfig {
        weight_decay: cfg.weight_decay,
        ..AdamConfig::default()
    };
    let mut state = AdamState::new(&model.store);
    let mut batches = Batches::new(samples.len(), cfg.seed);
    let mut history = Vec::with_capacity(cfg.steps as usize);
    for step in 0..cfg.steps {
        let idx = batches.next(cfg.batch);
        let results = idx
            .par_iter()
            .map(|&i| sample_loss_and_grads(model, &samples[i]))
            .collect::<Result<Vec<_>>>()?;
        let scale = 1.0 / cfg.batch as f64;
        let mut loss = 0.0;
        let mut grads: Option<Vec<Tensor<f64>>> = None;
        for (l, g) in results {
            loss += l;
            match grads.as_mut() {
                None => grads = Some(g),
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| a.add_assign(b)),
            }
        }
        let mut grads = grads.expect("batch is non-empty");
        let norm = grads.iter().map(|g| g.data().iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt() * scale;
        let factor = match cfg.clip {
            Some(c) if norm > c => scale * c / norm,
            _ => scale,
        };
        grads.iter_mut().for_each(|g| g.scale_assign(factor));
        model.store.set_grads(grads)?;
        let lr = schedule.lr(step);
        adam_step(&mut model.store, &mut state, lr, &adam);
        let record = LossRecord {
            step,
            lr,
            loss: loss * scale,
        };
        on_step(&record);
        history.push(record);
    }
    Ok(history)
}

/// Fresh model trained on the synthetic collection of `data_seed`.
pub fn train_on_seed(
    model_config: ModelConfig,
    data: &DataConfig,
    data_seed: u64,
    cfg: &TrainConfig,
    on_step: impl FnMut(&LossRecord),
) -> Result<(DeltaTokModel<f64>, Vec<LossRecord>)> {
    if model_config.channels != data.channels {
        return Err(EncoderError::Config(format!(
            "model expects {} channels, data has {}",
            model_config.channels, data.channels
        )));
    }
    let mut model = DeltaTokModel::new(model_config)?;
    let samples = build_samples(&model, &make_videos(data, data_seed)?)?;
    let history = pretrain(&mut model, &samples, cfg, on_step)?;
    Ok((model, history))
}

/// Mean over consecutive windows: `(first window, last window)`.
pub fn smoothed_endpoints(history: &[LossRecord], window: usize) -> Option<(f64, f64)> {
    if window == 0 || history.len() < window {
        return None;
    }
    let mean = |s: &[LossRecord]| s.iter().map(|r| r.loss).sum::<f64>() / s.len() as f64;
    Some((mean(&history[..window]), mean(&history[history.len() - window..])))
}

pub fn write_loss_csv<W: std::io::Write>(history: &[LossRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in history {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
