//! Ground-truth dynamic images by approximate rank pooling.
//!
//! Each frame is weighted by a closed-form coefficient built from harmonic
//! numbers and the weighted sum is min-max normalized to `[0, 1]`. Everything
//! here is plain `f64` arithmetic, independent of the differentiable substrate,
//! so it can serve as a test oracle.

use crate::data::Image;
use crate::error::{FdpError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct RankPoolCoefficients {
    /// `α_1 ..= α_T`
    pub alphas: Vec<f64>,
    /// `H_0 ..= H_T`
    pub harmonics: Vec<f64>,
}

impl RankPoolCoefficients {
    pub fn frames(&self) -> usize {
        self.alphas.len()
    }
}

/// `α_t = 2(T − t + 1) − (T + 1)(H_T − H_{t−1})` for `t = 1..=T`.
pub fn rank_pool_coefficients(frames: usize) -> Result<RankPoolCoefficients> {
    if frames < 2 {
        return Err(FdpError::InvalidArgument(format!(
            "rank pooling needs at least 2 frames, got {frames}"
        )));
    }
    let mut harmonics = Vec::with_capacity(frames + 1);
    harmonics.push(0.0);
    for i in 1..=frames {
        harmonics.push(harmonics[i - 1] + 1.0 / i as f64);
    }
    let big_t = frames as f64;
    let h_t = harmonics[frames];
    let alphas = (1..=frames)
        .map(|t| 2.0 * (big_t - t as f64 + 1.0) - (big_t + 1.0) * (h_t - harmonics[t - 1]))
        .collect();
    Ok(RankPoolCoefficients { alphas, harmonics })
}

fn check_extents(frames: &[Image]) -> Result<[usize; 3]> {
    let first = frames
        .first()
        .ok_or_else(|| FdpError::Empty("no frames".into()))?
        .dims();
    for (i, f) in frames.iter().enumerate() {
        if f.dims() != first {
            return Err(FdpError::Shape(format!(
                "frame {i} is {:?}, frame 0 is {first:?}",
                f.dims()
            )));
        }
    }
    Ok(first)
}

/// Un-normalized pooled map `Σ_t α_t · frame_t`, per channel.
///
/// Accumulated as `Σ_{t≥2} α_t (frame_t − frame_1)`, equal because the
/// coefficients sum to zero, so a common offset on every frame cancels exactly.
pub fn rank_pool(frames: &[Image]) -> Result<Vec<f64>> {
    let dims = check_extents(frames)?;
    let coeffs = rank_pool_coefficients(frames.len())?;
    let n: usize = dims.iter().product();
    let base = frames[0].data();
    let mut acc = vec![0.0f64; n];
    for (frame, &a) in frames.iter().zip(&coeffs.alphas).skip(1) {
        for ((o, &v), &b) in acc.iter_mut().zip(frame.data()).zip(base) {
            *o += a * (v as f64 - b as f64);
        }
    }
    Ok(acc)
}

/// Min-max normalization to `[0, 1]`; a constant map becomes uniform 0.5.
pub fn normalize(values: &[f64]) -> Vec<f64> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(hi > lo) {
        return vec![0.5; values.len()];
    }
    let span = hi - lo;
    values.iter().map(|&v| (v - lo) / span).collect()
}

/// Single-channel dynamic image of a clip. Color clips are reduced to their
/// channel mean; pooling each channel first and averaging the pooled maps is
/// the same thing by linearity, and keeps a common offset exactly cancelling.
pub fn dynamic_image(frames: &[Image]) -> Result<Image> {
    let [channels, h, w] = check_extents(frames)?;
    if frames.len() < 2 {
        return Err(FdpError::InvalidArgument(format!(
            "dynamic image needs at least 2 frames, got {}",
            frames.len()
        )));
    }
    let pooled = rank_pool(frames)?;
    let plane = h * w;
    let gray: Vec<f64> = (0..plane)
        .map(|i| (0..channels).map(|c| pooled[c * plane + i]).sum::<f64>() / channels as f64)
        .collect();
    let data = normalize(&gray).into_iter().map(|v| v as f32).collect();
    Image::new(1, h, w, data)
}

/// Mean over samples of the per-sample pixel MSE.
pub fn average_mse<'a>(pairs: impl IntoIterator<Item = (&'a Image, &'a Image)>) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for (predicted, target) in pairs {
        total += predicted.mean_squared_error(target)?;
        count += 1;
    }
    if count == 0 {
        return Err(FdpError::Empty("average MSE over zero samples".into()));
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_and_three_frame_coefficients() {
        let c2 = rank_pool_coefficients(2).unwrap();
        assert!((c2.alphas[0] + 0.5).abs() < 1e-12 && (c2.alphas[1] - 0.5).abs() < 1e-12);
        let c3 = rank_pool_coefficients(3).unwrap();
        let want = [-4.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0];
        for (a, w) in c3.alphas.iter().zip(want) {
            assert!((a - w).abs() < 1e-12);
        }
        assert!(rank_pool_coefficients(1).is_err());
    }

    #[test]
    fn constant_video_is_mid_gray() {
        let frames = vec![Image::filled(1, 3, 3, 0.3); 5];
        let d = dynamic_image(&frames).unwrap();
        assert!(d.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn mismatched_extents_error() {
        let frames = vec![Image::filled(1, 3, 3, 0.3), Image::filled(1, 3, 4, 0.3)];
        assert!(matches!(dynamic_image(&frames), Err(FdpError::Shape(_))));
    }

    #[test]
    fn average_mse_examples() {
        let a = Image::filled(1, 2, 2, 0.5);
        let b = Image::filled(1, 2, 2, 1.0);
        assert_eq!(average_mse([(&a, &b)]).unwrap(), 0.25);
        assert_eq!(average_mse([(&a, &a), (&b, &b)]).unwrap(), 0.0);
        assert!(average_mse(std::iter::empty::<(&Image, &Image)>()).is_err());
    }
}
