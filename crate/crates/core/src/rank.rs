//! Rank scorer with the chronological rank loss, and 3-D-convolution temporal pooling.

use rand::Rng;

use crate::error::{FdpError, Result};
use crate::numerics::{Graph, ParamId, ParamStore, Scalar, Tensor, Var};

/// Target line `K(k) = slope · k` the frame scores regress onto.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RankTarget {
    slope: f64,
}

impl RankTarget {
    pub fn new(slope: f64) -> Result<Self> {
        if !(slope > 0.0 && slope.is_finite()) {
            return Err(FdpError::InvalidArgument(format!("rank slope {slope} must be positive")));
        }
        Ok(RankTarget { slope })
    }

    pub fn slope(&self) -> f64 {
        self.slope
    }

    pub fn at(&self, k: usize) -> f64 {
        self.slope * k as f64
    }
}

impl Default for RankTarget {
    fn default() -> Self {
        RankTarget { slope: 1.0 }
    }
}

/// `S(x) = uᵀx`.
pub fn rank_score(feature: &[f64], u: &[f64]) -> Result<f64> {
    if feature.len() != u.len() {
        return Err(FdpError::Shape(format!(
            "feature width {} vs scorer width {}",
            feature.len(),
            u.len()
        )));
    }
    Ok(feature.iter().zip(u).map(|(a, b)| a * b).sum())
}

/// `Σ_k |K(k) − S(F_k)|` over one clip's chronologically ordered scores.
pub fn rank_loss(scores: &[f64], target: RankTarget) -> Result<f64> {
    if scores.is_empty() {
        return Err(FdpError::Empty("rank loss needs at least one score".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(FdpError::NonFinite { op: "rank_loss".into() });
    }
    Ok(scores
        .iter()
        .enumerate()
        .map(|(k, s)| (target.at(k) - s).abs())
        .sum())
}

/// Fraction of clips whose scores strictly increase with frame index.
pub fn fraction_increasing(scores: &[f64], frames_per_clip: usize) -> f64 {
    if frames_per_clip == 0 || scores.is_empty() {
        return 0.0;
    }
    let clips: Vec<&[f64]> = scores.chunks(frames_per_clip).collect();
    let good = clips
        .iter()
        .filter(|c| c.windows(2).all(|w| w[0] < w[1]))
        .count();
    good as f64 / clips.len() as f64
}

/// Most-square factor pair `(h, w)` of `n` with `h <= w`.
pub fn square_factorization(n: usize) -> (usize, usize) {
    let mut h = (n as f64).sqrt() as usize;
    while h > 1 && n % h != 0 {
        h -= 1;
    }
    let h = h.max(1);
    (h, n / h)
}

#[derive(Clone, Debug)]
pub struct RankScorer {
    pub u: ParamId,
    pub width: usize,
}

impl RankScorer {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, width: usize, rng: &mut R) -> Self {
        let u = store.register(
            "rank.u",
            Tensor::randn(vec![width], 1.0 / (width as f64).sqrt(), rng),
        );
        RankScorer { u, width }
    }

    /// Scores for `B·t x d_F` features, returned as `B x t`.
    pub fn scores<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &ParamStore<T>,
        features: Var,
        frames_per_clip: usize,
    ) -> Result<Var> {
        let fs = g.shape(features).to_vec();
        if fs.len() != 2 || fs[1] != self.width || frames_per_clip == 0 || fs[0] % frames_per_clip != 0 {
            return Err(FdpError::Shape(format!(
                "rank scorer of width {} got features {fs:?} for t={frames_per_clip}",
                self.width
            )));
        }
        let u = g.param(p, self.u);
        let u = g.reshape(u, vec![self.width, 1])?;
        let s = g.matmul(features, u, false, false)?;
        g.reshape(s, vec![fs[0] / frames_per_clip, frames_per_clip])
    }
}

/// Stacks a clip's frame features as a `1 x t x H_r x W_r` volume and collapses
/// time with a `t x 3 x 3` convolution (no temporal padding, spatial padding 1).
#[derive(Clone, Debug)]
pub struct TemporalPool {
    pub kernel: ParamId,
    pub frames: usize,
    pub out_channels: usize,
    pub height: usize,
    pub width: usize,
}

impl TemporalPool {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        feature_width: usize,
        frames: usize,
        out_channels: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if frames == 0 || out_channels == 0 {
            return Err(FdpError::Config("temporal pool needs t >= 1 and C_d >= 1".into()));
        }
        let (height, width) = square_factorization(feature_width);
        let fan_in = frames * 9;
        let kernel = store.register(
            "temporal.kernel",
            Tensor::randn(
                vec![out_channels, 1, frames, 3, 3],
                (2.0 / fan_in as f64).sqrt(),
                rng,
            ),
        );
        Ok(TemporalPool {
            kernel,
            frames,
            out_channels,
            height,
            width,
        })
    }

    pub fn output_shape(&self) -> [usize; 3] {
        [self.out_channels, self.height, self.width]
    }

    /// `B·t x d_F` chronologically grouped features to `B x C_d x H_r x W_r`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &ParamStore<T>, features: Var) -> Result<Var> {
        let fs = g.shape(features).to_vec();
        let d = self.height * self.width;
        if fs.len() != 2 || fs[1] != d || fs[0] % self.frames != 0 {
            return Err(FdpError::Shape(format!(
                "temporal pool for t={} and d_F={d} got {fs:?}",
                self.frames
            )));
        }
        let clips = fs[0] / self.frames;
        let vol = g.reshape(features, vec![clips, 1, self.frames, self.height, self.width])?;
        let k = g.param(p, self.kernel);
        let y = g.conv3d(vol, k, [0, 1, 1])?;
        g.reshape(y, vec![clips, self.out_channels, self.height, self.width])
    }
}
