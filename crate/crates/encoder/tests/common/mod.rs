#![allow(dead_code)]

use deltatok_core::{MotionField, MotionVector, PFrame, ResidualPlane};
use deltatok_encoder::ModelConfig;
use deltatok_nn::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn small_config(seed: u64) -> ModelConfig {
    ModelConfig {
        dim: 8,
        heads: 2,
        k_motion: 2,
        k_residual: 2,
        layers: 2,
        mlp_ratio: 2,
        channels: 1,
        seed,
        ..ModelConfig::default()
    }
}

pub fn random_pframe(rng: &mut ChaCha8Rng, height: usize, width: usize, channels: usize, block: usize) -> PFrame {
    let (rows, cols) = (height / block, width / block);
    let vectors = (0..rows * cols)
        .map(|_| MotionVector::new(rng.random_range(-6..=6), rng.random_range(-6..=6)))
        .collect();
    let residual = (0..height * width * channels).map(|_| rng.random_range(-40..=40)).collect();
    PFrame {
        ref_offset: 1,
        motion: MotionField::new(rows, cols, block, vectors).unwrap(),
        residual: ResidualPlane::new(width, height, channels, residual).unwrap(),
    }
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
