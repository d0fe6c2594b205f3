//! Seeded synthetic videos for tests, training data and CLI demos.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CodecError, Result};
use crate::model::{Frame, VideoConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SynthKind {
    /// Textured bright rectangle moving at constant integer velocity over a
    /// static textured background (toroidal wrap).
    MovingRect,
    /// A seeded texture shifted globally each frame.
    TranslatingTexture,
    /// A static texture plus independent low-amplitude noise per frame.
    NoiseDrift,
}

impl SynthKind {
    pub const ALL: [SynthKind; 3] = [Self::MovingRect, Self::TranslatingTexture, Self::NoiseDrift];

    pub fn name(self) -> &'static str {
        match self {
            Self::MovingRect => "moving_rect",
            Self::TranslatingTexture => "translating_texture",
            Self::NoiseDrift => "noise_drift",
        }
    }
}

impl std::str::FromStr for SynthKind {
    type Err = CodecError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| CodecError::Argument(format!("unknown synth kind {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SynthOptions {
    /// Per-frame displacement `(dy, dx)`; drawn from the seed when `None`.
    pub velocity: Option<(i32, i32)>,
}

/// Fully-resolved parameters of a moving-rectangle video.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RectLayout {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
    pub velocity: (i32, i32),
}

impl RectLayout {
    /// Whether `(y, x)` lies inside the rectangle at frame `t`; returns the
    /// texture coordinate inside the rectangle when it does.
    pub fn hit(&self, cfg: &VideoConfig, t: usize, y: usize, x: usize) -> Option<(usize, usize)> {
        let oy = (self.top as i64 + self.velocity.0 as i64 * t as i64).rem_euclid(cfg.height as i64);
        let ox = (self.left as i64 + self.velocity.1 as i64 * t as i64).rem_euclid(cfg.width as i64);
        let ry = (y as i64 - oy).rem_euclid(cfg.height as i64) as usize;
        let rx = (x as i64 - ox).rem_euclid(cfg.width as i64) as usize;
        (ry < self.height && rx < self.width).then_some((ry, rx))
    }
}

fn texture(rng: &mut ChaCha8Rng, len: usize, lo: u8, hi: u8) -> Vec<u8> {
    (0..len).map(|_| rng.random_range(lo..=hi)).collect()
}

fn velocity(rng: &mut ChaCha8Rng, opts: &SynthOptions, max: i32) -> (i32, i32) {
    opts.velocity.unwrap_or_else(|| loop {
        let v = (rng.random_range(-max..=max), rng.random_range(-max..=max));
        if v != (0, 0) {
            break v;
        }
    })
}

/// Deterministic layout of a [`SynthKind::MovingRect`] video.
pub fn rect_layout(seed: u64, config: &VideoConfig, opts: &SynthOptions) -> RectLayout {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let height = rng.random_range(config.height / 4..=config.height / 2).max(1);
    let width = rng.random_range(config.width / 4..=config.width / 2).max(1);
    let top = rng.random_range(0..config.height);
    let left = rng.random_range(0..config.width);
    let velocity = velocity(&mut rng, opts, 3);
    RectLayout {
        top,
        left,
        height,
        width,
        velocity,
    }
}

pub fn synth_video(kind: SynthKind, seed: u64, config: &VideoConfig, length: usize) -> Result<Vec<Frame>> {
    synth_video_with(kind, seed, config, length, &SynthOptions::default())
}

pub fn synth_video_with(
    kind: SynthKind,
    seed: u64,
    config: &VideoConfig,
    length: usize,
    opts: &SynthOptions,
) -> Result<Vec<Frame>> {
    // only the geometry matters here
    VideoConfig {
        fusion_window: 1,
        ..*config
    }
    .validate()?;
    if length == 0 {
        return Err(CodecError::Argument("video length must be at least 1".into()));
    }
    let (h, w, c) = (config.height, config.width, config.channels);
    let frames = match kind {
        SynthKind::MovingRect => {
            let layout = rect_layout(seed, config, opts);
            // independent stream for textures so the layout stays stable
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_7e47);
            let bg = texture(&mut rng, h * w * c, 20, 120);
            let fg = texture(&mut rng, layout.height * layout.width * c, 170, 255);
            (0..length)
                .map(|t| {
                    Frame::from_fn(config, |y, x, ch| match layout.hit(config, t, y, x) {
                        Some((ry, rx)) => fg[(ry * layout.width + rx) * c + ch],
                        None => bg[(y * w + x) * c + ch],
                    })
                })
                .collect()
        }
        SynthKind::TranslatingTexture => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v = velocity(&mut rng, opts, 3);
            let tex = texture(&mut rng, h * w * c, 0, 255);
            (0..length)
                .map(|t| {
                    Frame::from_fn(config, |y, x, ch| {
                        let sy = (y as i64 - v.0 as i64 * t as i64).rem_euclid(h as i64) as usize;
                        let sx = (x as i64 - v.1 as i64 * t as i64).rem_euclid(w as i64) as usize;
                        tex[(sy * w + sx) * c + ch]
                    })
                })
                .collect()
        }
        SynthKind::NoiseDrift => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let base = texture(&mut rng, h * w * c, 8, 247);
            (0..length)
                .map(|_| {
                    let noisy = base
                        .iter()
                        .map(|&p| (i16::from(p) + rng.random_range(-4i16..=4)).clamp(0, 255) as u8)
                        .collect();
                    Frame::new(w, h, c, noisy).expect("noise frame matches config")
                })
                .collect()
        }
    };
    Ok(frames)
}

/// Entry `index` of the seeded test corpus: mixed kinds, 16 to 64 frames,
/// 32 to 64 pixels per side, block 8, GOP 16.
pub fn corpus_entry(index: u64) -> (VideoConfig, Vec<Frame>) {
    let mut rng = ChaCha8Rng::seed_from_u64(0xc0_ffee ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let kind = SynthKind::ALL[(index % 3) as usize];
    let side = |rng: &mut ChaCha8Rng| 8 * rng.random_range(4..=8usize);
    let (width, height) = (side(&mut rng), side(&mut rng));
    let channels = if rng.random_bool(0.5) { 1 } else { 3 };
    let length = rng.random_range(16..=64);
    let config = VideoConfig::new(width, height, channels).with_block(8).with_gop(16).with_window(1);
    let frames = synth_video(kind, rng.random(), &config, length).expect("corpus config is valid");
    (config, frames)
}
