use deltatok_core::{
    corpus_entry, decode, decode_parallel, encode, estimate_motion, synth_video, synth_video_with, warp,
    EncodedFrame, EncoderParams, Frame, MotionField, MotionVector, SynthKind, SynthOptions, VideoConfig,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn kind_strategy() -> impl Strategy<Value = SynthKind> {
    prop_oneof![
        Just(SynthKind::MovingRect),
        Just(SynthKind::TranslatingTexture),
        Just(SynthKind::NoiseDrift)
    ]
}

/// Exhaustive scalar search with the documented tie-break, written without
/// any of the encoder's shortcuts.
fn scalar_best(target: &Frame, reference: &Frame, b: usize, row: usize, col: usize, r: i32) -> MotionVector {
    let (h, w, c) = (target.height() as i32, target.width() as i32, target.channels());
    let mut best = (u64::MAX, i64::MAX, i32::MAX, i32::MAX);
    for dy in -r..=r {
        for dx in -r..=r {
            let mut sad = 0u64;
            for y in row * b..(row + 1) * b {
                for x in col * b..(col + 1) * b {
                    let sy = (y as i32 - dy).clamp(0, h - 1) as usize;
                    let sx = (x as i32 - dx).clamp(0, w - 1) as usize;
                    for ch in 0..c {
                        sad += (i32::from(target.get(y, x, ch)) - i32::from(reference.get(sy, sx, ch))).unsigned_abs()
                            as u64;
                    }
                }
            }
            let key = (sad, i64::from(dy * dy + dx * dx), dy, dx);
            if key < best {
                best = key;
            }
        }
    }
    MotionVector::new(best.2, best.3)
}

#[test]
fn motion_search_matches_scalar_oracle() {
    let cfg = VideoConfig::new(24, 16, 1).with_block(8);
    for seed in 0..6u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // coarse texture so that ties actually occur
        let reference = Frame::from_fn(&cfg, |_, _, _| rng.random_range(0..4u8) * 60);
        let target = Frame::from_fn(&cfg, |y, x, _| reference.get((y + 1) % 16, (x + 15) % 24, 0));
        let params = EncoderParams {
            search_radius: 3,
            ..Default::default()
        };
        let field = estimate_motion(&target, &reference, 8, &params).unwrap();
        for r in 0..field.rows() {
            for c in 0..field.cols() {
                assert_eq!(field.get(r, c), scalar_best(&target, &reference, 8, r, c, 3), "seed {seed} block ({r},{c})");
            }
        }
    }
}

#[test]
fn translating_texture_motion_is_recovered() {
    let cfg = VideoConfig::new(64, 64, 1).with_block(16);
    let opts = SynthOptions { velocity: Some((0, 3)) };
    let v = synth_video_with(SynthKind::TranslatingTexture, 5, &cfg, 3, &opts).unwrap();
    let field = estimate_motion(&v[1], &v[0], 16, &EncoderParams::default()).unwrap();
    // interior blocks: away from the wrap-around seam at x = 0
    for r in 0..4 {
        for c in 1..4 {
            assert_eq!(field.get(r, c), MotionVector::new(0, 3));
        }
    }
}

#[test]
fn shifted_interior_region_reports_shift() {
    let cfg = VideoConfig::new(64, 64, 1).with_block(16);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let reference = Frame::from_fn(&cfg, |_, _, _| rng.random());
    // shift right by 3 inside, keep borders
    let target = Frame::from_fn(&cfg, |y, x, _| reference.get(y, x.saturating_sub(3), 0));
    let field = estimate_motion(&target, &reference, 16, &EncoderParams::default()).unwrap();
    for r in 1..3 {
        for c in 1..3 {
            assert_eq!(field.get(r, c), MotionVector::new(0, 3));
        }
    }
}

#[test]
fn corpus_round_trips_losslessly() {
    for i in 0..30 {
        let (cfg, frames) = corpus_entry(i);
        let stream = encode(&frames, &cfg, &EncoderParams::default()).unwrap();
        assert_eq!(decode(&stream).unwrap(), frames, "corpus video {i}");
    }
}

#[test]
fn residual_with_motion_never_exceeds_zero_motion() {
    let cfg = VideoConfig::new(48, 48, 1).with_block(8);
    for seed in 0..8 {
        let v = synth_video(SynthKind::TranslatingTexture, seed, &cfg, 4).unwrap();
        let stream = encode(&v, &cfg, &EncoderParams::default()).unwrap();
        for (t, f) in stream.frames.iter().enumerate().skip(1) {
            let p = f.as_p().unwrap();
            let zero = warp(&v[t - 1], &MotionField::zeros(&cfg)).unwrap();
            let naive = deltatok_core::ResidualPlane::difference(&v[t], &zero);
            assert!(p.residual.energy() <= naive.energy());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn encode_decode_is_lossless(
        kind in kind_strategy(),
        seed in any::<u64>(),
        wb in 2usize..=5,
        hb in 2usize..=5,
        channels in prop_oneof![Just(1usize), Just(3usize)],
        len in 1usize..12,
        gop in 1usize..8,
    ) {
        let cfg = VideoConfig::new(wb * 8, hb * 8, channels).with_block(8).with_gop(gop).with_window(1);
        let frames = synth_video(kind, seed, &cfg, len).unwrap();
        let stream = encode(&frames, &cfg, &EncoderParams { search_radius: 4, ..Default::default() }).unwrap();
        prop_assert!(stream.frames.iter().enumerate().all(|(t, f)| f.is_intra() == (t % gop == 0)));
        prop_assert_eq!(&decode(&stream).unwrap(), &frames);
        prop_assert_eq!(decode_parallel(&stream).unwrap(), frames);
    }

    #[test]
    fn warp_only_uses_reference_values(seed in any::<u64>(), vectors in proptest::collection::vec((-40i32..40, -40i32..40), 16)) {
        let cfg = VideoConfig::new(32, 32, 1).with_block(8);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let reference = Frame::from_fn(&cfg, |_, _, _| rng.random_range(0..32u8) * 3);
        let field = MotionField::new(4, 4, 8, vectors.iter().map(|&(y, x)| MotionVector::new(y, x)).collect()).unwrap();
        let out = warp(&reference, &field).unwrap();
        let present: std::collections::HashSet<u8> = reference.pixels().iter().copied().collect();
        prop_assert!(out.pixels().iter().all(|p| present.contains(p)));
    }
}

#[test]
fn static_video_has_empty_p_frames() {
    let cfg = VideoConfig::new(32, 32, 1).with_block(8);
    let frame = synth_video(SynthKind::NoiseDrift, 1, &cfg, 1).unwrap().remove(0);
    let stream = encode(&vec![frame; 10], &cfg, &EncoderParams::default()).unwrap();
    assert_eq!(stream.count_intra(), 1);
    for f in &stream.frames[1..] {
        let EncodedFrame::P(p) = f else { panic!("expected P-frame") };
        assert!(p.motion.is_zero() && p.residual.is_zero() && p.ref_offset == 1);
    }
}
