//! The full network: frame encoder → rank scorer / temporal pooling → two heads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::encoder::{EncoderConfig, FrameEncoder};
use crate::error::{FdpError, Result};
use crate::heads::{DicConfig, DicNetwork, LossWeights, MerHead, MerHeadConfig};
use crate::numerics::{Graph, ParamStore, Scalar, Tensor, Var};
use crate::rank::{RankScorer, RankTarget, TemporalPool};

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    /// Frames per clip, `t`.
    pub frames: usize,
    /// Channels `C_d` of the dynamic representation.
    pub temporal_channels: usize,
    pub mer: MerHeadConfig,
    pub dic: DicConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderConfig::default(),
            frames: 8,
            temporal_channels: 32,
            mer: MerHeadConfig::default(),
            dic: DicConfig::default(),
        }
    }
}

/// Graph handles produced by one forward pass over `B` clips.
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    /// `B·t x d_F`
    pub features: Var,
    /// `B x t`
    pub scores: Var,
    /// `B x C_d x H_r x W_r`
    pub dynamic: Var,
    /// `B x m`
    pub probs: Var,
    /// `B x 1 x S x S`
    pub dynamic_image: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub mer: Var,
    pub dic: Var,
    pub rank: Var,
}

/// Weighting of the three task losses; `mer` is 1 except in ablations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Objective {
    pub mer: f64,
    pub weights: LossWeights,
    pub target: RankTarget,
}

impl Default for Objective {
    fn default() -> Self {
        Objective {
            mer: 1.0,
            weights: LossWeights::default(),
            target: RankTarget::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct FdpModel<T> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    pub encoder: FrameEncoder,
    pub scorer: RankScorer,
    pub temporal: TemporalPool,
    pub mer: MerHead,
    pub dic: DicNetwork,
}

impl<T: Scalar> FdpModel<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let encoder = FrameEncoder::new(&mut params, config.encoder.clone(), &mut rng)?;
        let d = encoder.feature_width();
        let scorer = RankScorer::new(&mut params, d, &mut rng);
        let temporal = TemporalPool::new(&mut params, d, config.frames, config.temporal_channels, &mut rng)?;
        let rep = temporal.output_shape();
        let mer = MerHead::new(&mut params, config.mer.clone(), rep, &mut rng)?;
        if config.dic.output_size != config.encoder.input_size {
            return Err(FdpError::Config(format!(
                "dynamic image size {} must equal the frame input size {}",
                config.dic.output_size, config.encoder.input_size
            )));
        }
        let dic = DicNetwork::new(&mut params, config.dic.clone(), rep, &mut rng)?;
        Ok(FdpModel {
            config,
            params,
            encoder,
            scorer,
            temporal,
            mer,
            dic,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.config.mer.num_classes
    }

    pub fn frames(&self) -> usize {
        self.config.frames
    }

    pub fn input_size(&self) -> usize {
        self.config.encoder.input_size
    }

    /// Runs the network on `B·t x 3 x S x S` frames, grouped clip by clip in time order.
    pub fn forward(&self, g: &mut Graph<T>, frames: Var) -> Result<ForwardVars> {
        let p = &self.params;
        let features = self.encoder.forward(g, p, frames)?;
        let scores = self.scorer.scores(g, p, features, self.config.frames)?;
        let dynamic = self.temporal.forward(g, p, features)?;
        let probs = self.mer.forward(g, p, dynamic)?;
        let dynamic_image = self.dic.forward(g, p, dynamic)?;
        Ok(ForwardVars {
            features,
            scores,
            dynamic,
            probs,
            dynamic_image,
        })
    }

    /// Batch-mean task losses and their weighted total.
    pub fn losses(
        &self,
        g: &mut Graph<T>,
        out: &ForwardVars,
        labels: &[usize],
        targets: Var,
        objective: &Objective,
    ) -> Result<LossVars> {
        let mer = g.cross_entropy(out.probs, labels)?;
        let dic = g.mse(out.dynamic_image, targets)?;
        let rank = g.rank_loss(out.scores, T::of(objective.target.slope()))?;
        let a = g.scale(mer, T::of(objective.mer))?;
        let b = g.scale(dic, T::of(objective.weights.dic))?;
        let c = g.scale(rank, T::of(objective.weights.rank))?;
        let ab = g.add(a, b)?;
        let total = g.add(ab, c)?;
        Ok(LossVars { total, mer, dic, rank })
    }

    /// Applies queued running-statistics updates from a train-mode pass.
    pub fn apply_buffer_updates(&mut self, g: &mut Graph<T>) -> Result<()> {
        for u in g.take_buffer_updates() {
            self.params.set(u.id, u.value)?;
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> FdpModel<U> {
        FdpModel {
            config: self.config.clone(),
            params: self.params.cast(),
            encoder: self.encoder.clone(),
            scorer: self.scorer.clone(),
            temporal: self.temporal.clone(),
            mer: self.mer.clone(),
            dic: self.dic.clone(),
        }
    }

    /// Stacks preprocessed clips (each `t x 3 x S x S`) into one frame batch.
    pub fn frame_batch(&self, clips: &[Tensor<T>]) -> Result<Tensor<T>> {
        let s = self.input_size();
        let t = self.frames();
        let mut data = Vec::with_capacity(clips.len() * t * 3 * s * s);
        for c in clips {
            if c.shape() != [t, 3, s, s] {
                return Err(FdpError::Shape(format!(
                    "clip tensor {:?}, expected [{t}, 3, {s}, {s}]",
                    c.shape()
                )));
            }
            data.extend_from_slice(c.data());
        }
        Tensor::from_vec(vec![clips.len() * t, 3, s, s], data)
    }
}
