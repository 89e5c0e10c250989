use rand::Rng;

use super::image::Image;
use crate::error::{FdpError, Result};

/// Side of the aligned source frames.
pub const SOURCE_SIZE: usize = 72;
/// Side of the crop fed to the network (before optional downsampling).
pub const CROP_SIZE: usize = 64;
/// Largest crop origin coordinate.
pub const MAX_CROP_ORIGIN: usize = SOURCE_SIZE - CROP_SIZE;
/// Crop origin used at evaluation time.
pub const EVAL_CROP_ORIGIN: usize = MAX_CROP_ORIGIN / 2;

fn stride(len: usize, t: usize) -> usize {
    (len / t.max(1)).max(1)
}

/// `t` frame indices `offset + k·s` with `s = max(1, floor(L/t))`, clamped to `L − 1`.
pub fn sample_clip(len: usize, t: usize, offset: usize) -> Vec<usize> {
    let s = stride(len, t);
    let last = len.saturating_sub(1);
    (0..t).map(|k| (offset + k * s).min(last)).collect()
}

/// Largest training offset, `L − 1 − (t − 1)·s`, or 0 when the clip is short.
pub fn max_offset(len: usize, t: usize) -> usize {
    let s = stride(len, t);
    len.saturating_sub(1).saturating_sub(t.saturating_sub(1) * s)
}

pub fn random_offset<R: Rng + ?Sized>(len: usize, t: usize, rng: &mut R) -> usize {
    rng.gen_range(0..=max_offset(len, t))
}

/// Geometric augmentation shared by every frame of one clip.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Augmentation {
    pub top: usize,
    pub left: usize,
    pub flip: bool,
}

impl Augmentation {
    /// Centre crop, no flip.
    pub fn eval() -> Self {
        Augmentation {
            top: EVAL_CROP_ORIGIN,
            left: EVAL_CROP_ORIGIN,
            flip: false,
        }
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Augmentation {
            top: rng.gen_range(0..=MAX_CROP_ORIGIN),
            left: rng.gen_range(0..=MAX_CROP_ORIGIN),
            flip: rng.gen_bool(0.5),
        }
    }

    /// Crops a `SOURCE_SIZE` frame (any channel count) to `CROP_SIZE` and flips.
    pub fn apply(&self, frame: &Image) -> Result<Image> {
        if frame.height() != SOURCE_SIZE || frame.width() != SOURCE_SIZE {
            return Err(FdpError::Shape(format!(
                "expected {SOURCE_SIZE}x{SOURCE_SIZE} frames, got {}x{}",
                frame.height(),
                frame.width()
            )));
        }
        if self.top > MAX_CROP_ORIGIN || self.left > MAX_CROP_ORIGIN {
            return Err(FdpError::InvalidArgument(format!(
                "crop origin ({}, {}) outside [0, {MAX_CROP_ORIGIN}]",
                self.top, self.left
            )));
        }
        let out = frame.crop(self.top, self.left, CROP_SIZE)?;
        Ok(if self.flip { out.flip_horizontal() } else { out })
    }
}

/// Random crop and clip-level flip; the caller draws one [`Augmentation`] per clip.
pub fn preprocess_train<R: Rng + ?Sized>(frame: &Image, rng: &mut R) -> Result<Image> {
    Augmentation::random(rng).apply(frame)
}

pub fn preprocess_eval(frame: &Image) -> Result<Image> {
    Augmentation::eval().apply(frame)
}

/// Network-side side length for a given downsampling factor.
pub fn input_size_for(factor: usize) -> Result<usize> {
    if factor == 0 || CROP_SIZE % factor != 0 {
        return Err(FdpError::Config(format!("{CROP_SIZE} is not divisible by {factor}")));
    }
    Ok(CROP_SIZE / factor)
}

/// Downsampling factor that maps the crop to `input_size`.
pub fn downsample_factor(input_size: usize) -> Result<usize> {
    if input_size == 0 || CROP_SIZE % input_size != 0 {
        return Err(FdpError::Config(format!(
            "input size {input_size} must divide the {CROP_SIZE}-pixel crop"
        )));
    }
    Ok(CROP_SIZE / input_size)
}
