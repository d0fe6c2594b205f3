//! Fixed input transforms: patchify, sinusoidal positions, motion and
//! residual normalization.

use deltatok_core::{Frame, MotionField, ResidualPlane};
use deltatok_nn::{Scalar, Tensor};

use crate::config::PATCH;
use crate::error::{EncoderError, Result};

/// Sinusoidal position table `[len, dim]`: even columns `sin`, odd `cos`.
pub fn sinusoid_table<T: Scalar>(len: usize, dim: usize) -> Tensor<T> {
    Tensor::from_fn(&[len, dim], |i| {
        let (pos, j) = ((i / dim) as f64, i % dim);
        let freq = 10_000f64.powf(-((j / 2 * 2) as f64) / dim as f64);
        T::of(if j % 2 == 0 { (pos * freq).sin() } else { (pos * freq).cos() })
    })
}

pub(crate) fn check_geometry(height: usize, width: usize) -> Result<()> {
    if height == 0 || width == 0 || height % PATCH != 0 || width % PATCH != 0 {
        return Err(EncoderError::Shape(format!(
            "{height}x{width} is not divisible into {PATCH}x{PATCH} patches"
        )));
    }
    Ok(())
}

/// Splits an `[H, W, C]` raster into non-overlapping patches, one row per
/// patch (patch rows in raster order, pixels `(y, x, c)` within a patch).
pub fn patchify<T: Scalar>(data: &[T], height: usize, width: usize, channels: usize) -> Result<Tensor<T>> {
    check_geometry(height, width)?;
    if data.len() != height * width * channels {
        return Err(EncoderError::Shape(format!(
            "{} values for a {height}x{width}x{channels} raster",
            data.len()
        )));
    }
    let (gr, gc) = (height / PATCH, width / PATCH);
    let row_len = PATCH * PATCH * channels;
    let mut out = Vec::with_capacity(data.len());
    for pr in 0..gr {
        for pc in 0..gc {
            for y in pr * PATCH..(pr + 1) * PATCH {
                let start = (y * width + pc * PATCH) * channels;
                out.extend_from_slice(&data[start..start + PATCH * channels]);
            }
        }
    }
    Ok(Tensor::new(vec![gr * gc, row_len], out)?)
}

/// Pixels mapped to `[-1, 1]`, patchified.
pub fn frame_patches<T: Scalar>(frame: &Frame) -> Result<Tensor<T>> {
    let data: Vec<T> = frame
        .pixels()
        .iter()
        .map(|&p| T::of(f64::from(p) / 127.5 - 1.0))
        .collect();
    patchify(&data, frame.height(), frame.width(), frame.channels())
}

/// Per-field min–max normalization of the dense motion field to `[-1, 1]`,
/// joint over both components. A field without spread maps to zeros.
pub fn normalize_motion(dense: &[i32]) -> Vec<f64> {
    let (Some(&lo), Some(&hi)) = (dense.iter().min(), dense.iter().max()) else {
        return Vec::new();
    };
    if lo == hi {
        return vec![0.0; dense.len()];
    }
    let span = f64::from(hi - lo);
    dense
        .iter()
        .map(|&v| 2.0 * f64::from(v - lo) / span - 1.0)
        .collect()
}

/// Motion-branch input: normalized dense field, patchified to
/// `[M, 16·16·2]`.
pub fn motion_input<T: Scalar>(motion: &MotionField) -> Result<Tensor<T>> {
    let (h, w) = (motion.rows() * motion.block_size(), motion.cols() * motion.block_size());
    let data: Vec<T> = normalize_motion(&motion.dense()).into_iter().map(T::of).collect();
    patchify(&data, h, w, 2)
}

/// Residual-branch input: `[H, W, C]` values divided by 255.
pub fn residual_input<T: Scalar>(residual: &ResidualPlane) -> Result<Tensor<T>> {
    check_geometry(residual.height(), residual.width())?;
    let data = residual
        .values()
        .iter()
        .map(|&v| T::of(f64::from(v) / 255.0))
        .collect();
    Ok(Tensor::new(
        vec![residual.height(), residual.width(), residual.channels()],
        data,
    )?)
}
