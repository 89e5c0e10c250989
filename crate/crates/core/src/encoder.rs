//! Local-global feature-aware frame encoder.
//!
//! `stem conv → N_S × (patch embedding → N_L local aggregators → N_G global
//! aggregators) → batch norm → global average pool` turns one frame into a
//! fixed-width feature vector.

use rand::Rng;

use crate::error::{FdpError, Result};
use crate::nn::{BatchNorm, Conv2d, ConvSpec};
use crate::numerics::{Graph, ParamStore, Scalar, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    /// Square input extent after cropping.
    pub input_size: usize,
    pub stem_channels: usize,
    /// Output channels of each stage; its length is `N_S`.
    pub stage_channels: Vec<usize>,
    /// Patch size of each stage's embedding.
    pub patch_sizes: Vec<usize>,
    /// `N_L`
    pub num_local: usize,
    /// `N_G`
    pub num_global: usize,
    pub heads: usize,
    /// MLP hidden width as a multiple of the block width.
    pub mlp_ratio: usize,
    /// Dropout after the per-head attention feed-forward layer.
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            input_size: 64,
            stem_channels: 16,
            stage_channels: vec![32, 64, 128, 256],
            patch_sizes: vec![2, 2, 2, 2],
            num_local: 2,
            num_global: 1,
            heads: 4,
            mlp_ratio: 2,
            dropout: 0.1,
        }
    }
}

impl EncoderConfig {
    pub fn num_stages(&self) -> usize {
        self.stage_channels.len()
    }

    /// Width `d_F` of the frame feature.
    pub fn feature_width(&self) -> usize {
        self.stage_channels.last().copied().unwrap_or(0)
    }

    /// Spatial extent after the stem and after each stage.
    pub fn spatial_trace(&self) -> Result<Vec<usize>> {
        self.validate()?;
        let mut s = self.input_size / 2;
        let mut trace = vec![s];
        for &p in &self.patch_sizes {
            s /= p;
            trace.push(s);
        }
        Ok(trace)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(FdpError::Config(m));
        if self.stage_channels.is_empty() {
            return bad("at least one encoder stage is required".into());
        }
        if self.patch_sizes.len() != self.stage_channels.len() {
            return bad(format!(
                "{} patch sizes for {} stages",
                self.patch_sizes.len(),
                self.stage_channels.len()
            ));
        }
        if self.heads == 0 || self.stem_channels == 0 || self.mlp_ratio == 0 {
            return bad("heads, stem channels and mlp ratio must be positive".into());
        }
        for &c in &self.stage_channels {
            if c == 0 || c % self.heads != 0 {
                return bad(format!("stage width {c} not divisible by {} heads", self.heads));
            }
        }
        if self.input_size % 2 != 0 || self.input_size == 0 {
            return bad(format!("input size {} must be even", self.input_size));
        }
        let mut s = self.input_size / 2;
        for &p in &self.patch_sizes {
            if p == 0 || s % p != 0 {
                return bad(format!("patch size {p} does not divide extent {s}"));
            }
            s /= p;
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }
}

/// Init gain of the last layer of every residual branch. Zero makes each
/// aggregator the identity at initialization; with He-scaled branches the
/// stacked attention blocks amplify pixel noise far above the image content.
pub const RESIDUAL_BRANCH_GAIN: f64 = 0.0;

fn check_heads(channels: usize, heads: usize) -> Result<()> {
    if heads == 0 || channels % heads != 0 {
        return Err(FdpError::Shape(format!(
            "{channels} channels cannot be split into {heads} heads"
        )));
    }
    Ok(())
}

/// Per-head 3x3 conv → BN → ReLU, heads concatenated, then a pointwise conv.
#[derive(Clone, Debug)]
pub struct MultiHeadConv {
    pub conv: Conv2d,
    pub bn: BatchNorm,
    pub pointwise: Conv2d,
}

impl MultiHeadConv {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        check_heads(channels, heads)?;
        Ok(MultiHeadConv {
            // A grouped conv is exactly one independent conv per channel group.
            conv: Conv2d::new(
                store,
                &format!("{name}.heads"),
                ConvSpec::same3(channels, channels).groups(heads).no_bias(),
                rng,
            ),
            bn: BatchNorm::new(store, &format!("{name}.bn"), channels),
            pointwise: Conv2d::new(
                store,
                &format!("{name}.pointwise"),
                ConvSpec::pointwise(channels, channels).gain(RESIDUAL_BRANCH_GAIN),
                rng,
            ),
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &ParamStore<T>, x: Var) -> Result<Var> {
        let y = self.conv.forward(g, p, x)?;
        let y = self.bn.forward(g, p, y)?;
        let y = g.relu(y)?;
        self.pointwise.forward(g, p, y)
    }
}

/// Two position-wise fully-connected layers with a ReLU between.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub fc1: Conv2d,
    pub fc2: Conv2d,
}

impl Mlp {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        ratio: usize,
        rng: &mut R,
    ) -> Self {
        let hidden = channels * ratio;
        Mlp {
            fc1: Conv2d::new(store, &format!("{name}.fc1"), ConvSpec::pointwise(channels, hidden), rng),
            fc2: Conv2d::new(store, &format!("{name}.fc2"), ConvSpec::pointwise(hidden, channels).gain(RESIDUAL_BRANCH_GAIN), rng),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &ParamStore<T>, x: Var) -> Result<Var> {
        let y = self.fc1.forward(g, p, x)?;
        let y = g.relu(y)?;
        self.fc2.forward(g, p, y)
    }
}

/// Convolutional block: `x + MHC(x)`, then `+ MLP(·)`.
#[derive(Clone, Debug)]
pub struct LocalAggregator {
    pub mhc: MultiHeadConv,
    pub mlp: Mlp,
}

impl LocalAggregator {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        cfg: &EncoderConfig,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(LocalAggregator {
            mhc: MultiHeadConv::new(store, &format!("{name}.mhc"), channels, cfg.heads, rng)?,
            mlp: Mlp::new(store, &format!("{name}.mlp"), channels, cfg.mlp_ratio, rng),
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &ParamStore<T>, x: Var) -> Result<Var> {
        let branch = self.mhc.forward(g, p, x)?;
        let x1 = g.add(x, branch)?;
        let branch = self.mlp.forward(g, p, x1)?;
        g.add(x1, branch)
    }
}

/// Scaled dot-product attention for already projected per-head maps.
///
/// `q`, `k`, `v` are `B x dim x T` (one row per channel, one column per token).
/// Returns the attended values in the same layout and the `B x T x T` weights.
pub fn attention_core<T: Scalar>(g: &mut Graph<T>, q: Var, k: Var, v: Var) -> Result<(Var, Var)> {
    let (qs, ks, vs) = (g.shape(q).to_vec(), g.shape(k).to_vec(), g.shape(v).to_vec());
    if qs.len() != 3 || qs != ks || qs != vs {
        return Err(FdpError::Shape(format!(
            "attention dims differ: q {qs:?} k {ks:?} v {vs:?}"
        )));
    }
    let dim = qs[1];
    let scores = g.matmul(q, k, true, false)?;
    let scores = g.scale(scores, T::of(1.0 / (dim as f64).sqrt()))?;
    let weights = g.softmax(scores)?;
    // out[c, i] = Σ_j v[c, j] · w[i, j]
    let out = g.matmul(v, weights, false, true)?;
    Ok((out, weights))
}

/// Multi-head self-attention over the `H·W` tokens of a feature map.
#[derive(Clone, Debug)]
pub struct MultiHeadSelfAttention {
    /// Per-head projections, realized as grouped 1x1 convolutions.
    pub query: Conv2d,
    pub key: Conv2d,
    pub value: Conv2d,
    /// Per-head position-wise feed-forward layer.
    pub ffn: Conv2d,
    /// Fuses the concatenated heads.
    pub proj: Conv2d,
    pub heads: usize,
    pub dropout: f64,
}

impl MultiHeadSelfAttention {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        heads: usize,
        dropout: f64,
        rng: &mut R,
    ) -> Result<Self> {
        check_heads(channels, heads)?;
        let head_proj = |store: &mut ParamStore<T>, rng: &mut R, n: &str, bias: bool| {
            let mut spec = ConvSpec::pointwise(channels, channels).groups(heads);
            if !bias {
                spec = spec.no_bias();
            }
            Conv2d::new(store, &format!("{name}.{n}"), spec, rng)
        };
        Ok(MultiHeadSelfAttention {
            query: head_proj(store, rng, "query", false),
            key: head_proj(store, rng, "key", false),
            value: head_proj(store, rng, "value", false),
            ffn: head_proj(store, rng, "ffn", true),
            proj: Conv2d::new(store, &format!("{name}.proj"), ConvSpec::pointwise(channels, channels).gain(RESIDUAL_BRANCH_GAIN), rng),
            heads,
            dropout,
        })
    }

    /// Returns the block output and the attention weights (`N·h x T x T`).
    pub fn forward_with_weights<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &ParamStore<T>,
        x: Var,
    ) -> Result<(Var, Var)> {
        let xs = g.shape(x).to_vec();
        if xs.len() != 4 {
            return Err(FdpError::Shape(format!("attention input {xs:?}")));
        }
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        check_heads(c, self.heads)?;
        let split = [n * self.heads, c / self.heads, h * w];
        let q = self.query.forward(g, p, x)?;
        let q = g.reshape(q, split)?;
        let k = self.key.forward(g, p, x)?;
        let k = g.reshape(k, split)?;
        let v = self.value.forward(g, p, x)?;
        let v = g.reshape(v, split)?;
        let (a, weights) = attention_core(g, q, k, v)?;
        let a = g.reshape(a, xs)?;
        let y = self.ffn.forward(g, p, a)?;
        let y = g.dropout(y, self.dropout)?;
        let y = self.proj.forward(g, p, y)?;
        Ok((y, weights))
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &ParamStore<T>, x: Var) -> Result<Var> {
        Ok(self.forward_with_weights(g, p, x)?.0)
    }
}

/// Attention block: `x + MHSA(PW(x))`, `+ MHC(·)`, `+ MLP(·)`.
#[derive(Clone, Debug)]
pub struct GlobalAggregator {
    pub pointwise: Conv2d,
    pub attention: MultiHeadSelfAttention,
    pub mhc: MultiHeadConv,
    pub mlp: Mlp,
}

impl GlobalAggregator {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        cfg: &EncoderConfig,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(GlobalAggregator {
            pointwise: Conv2d::new(
                store,
                &format!("{name}.pointwise"),
                ConvSpec::pointwise(channels, channels),
                rng,
            ),
            attention: MultiHeadSelfAttention::new(
                store,
                &format!("{name}.attn"),
                channels,
                cfg.heads,
                cfg.dropout,
                rng,
            )?,
            mhc: MultiHeadConv::new(store, &format!("{name}.mhc"), channels, cfg.heads, rng)?,
            mlp: Mlp::new(store, &format!("{name}.mlp"), channels, cfg.mlp_ratio, rng),
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &ParamStore<T>, x: Var) -> Result<Var> {
        let y = self.pointwise.forward(g, p, x)?;
        let y = self.attention.forward(g, p, y)?;
        let x1 = g.add(x, y)?;
        let y = self.mhc.forward(g, p, x1)?;
        let x2 = g.add(x1, y)?;
        let y = self.mlp.forward(g, p, x2)?;
        g.add(x2, y)
    }
}

/// Patch embedding (kernel = stride = patch) followed by the stage's aggregators.
#[derive(Clone, Debug)]
pub struct Stage {
    pub patch_embed: Conv2d,
    pub locals: Vec<LocalAggregator>,
    pub globals: Vec<GlobalAggregator>,
}

impl Stage {
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &ParamStore<T>, x: Var) -> Result<Var> {
        let mut x = patch_embed(g, p, &self.patch_embed, x)?;
        for block in &self.locals {
            x = block.forward(g, p, x)?;
        }
        for block in &self.globals {
            x = block.forward(g, p, x)?;
        }
        Ok(x)
    }
}

/// Strided patch projection; the patch size must divide both spatial extents.
pub fn patch_embed<T: Scalar>(g: &mut Graph<T>, p: &ParamStore<T>, conv: &Conv2d, x: Var) -> Result<Var> {
    let xs = g.shape(x);
    let patch = conv.stride;
    if xs.len() != 4 || xs[2] % patch != 0 || xs[3] % patch != 0 {
        return Err(FdpError::Shape(format!(
            "patch size {patch} does not divide feature map {xs:?}"
        )));
    }
    conv.forward(g, p, x)
}

#[derive(Clone, Debug)]
pub struct FrameEncoder {
    pub config: EncoderConfig,
    pub stem: Conv2d,
    pub stem_bn: BatchNorm,
    pub stages: Vec<Stage>,
    pub head_bn: BatchNorm,
}

impl FrameEncoder {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        config: EncoderConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let stem = Conv2d::new(
            store,
            "encoder.stem",
            ConvSpec::same3(3, config.stem_channels).stride(2),
            rng,
        );
        let stem_bn = BatchNorm::new(store, "encoder.stem_bn", config.stem_channels);
        let mut stages = Vec::with_capacity(config.num_stages());
        let mut cin = config.stem_channels;
        for (s, (&cout, &patch)) in config
            .stage_channels
            .iter()
            .zip(&config.patch_sizes)
            .enumerate()
        {
            let name = format!("encoder.stage{s}");
            let patch_embed = Conv2d::new(
                store,
                &format!("{name}.patch_embed"),
                ConvSpec::new(cin, cout, patch).stride(patch),
                rng,
            );
            let locals = (0..config.num_local)
                .map(|i| LocalAggregator::new(store, &format!("{name}.local{i}"), cout, &config, rng))
                .collect::<Result<Vec<_>>>()?;
            let globals = (0..config.num_global)
                .map(|i| GlobalAggregator::new(store, &format!("{name}.global{i}"), cout, &config, rng))
                .collect::<Result<Vec<_>>>()?;
            stages.push(Stage {
                patch_embed,
                locals,
                globals,
            });
            cin = cout;
        }
        let head_bn = BatchNorm::new(store, "encoder.head_bn", cin);
        Ok(FrameEncoder {
            config,
            stem,
            stem_bn,
            stages,
            head_bn,
        })
    }

    pub fn feature_width(&self) -> usize {
        self.config.feature_width()
    }

    /// `N x 3 x S x S` frames to `N x d_F` features.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &ParamStore<T>, frames: Var) -> Result<Var> {
        let s = self.config.input_size;
        let fs = g.shape(frames);
        if fs.len() != 4 || fs[1..] != [3, s, s] {
            return Err(FdpError::Shape(format!(
                "encoder expects N x 3 x {s} x {s} frames, got {fs:?}"
            )));
        }
        let x = self.stem.forward(g, p, frames)?;
        let x = self.stem_bn.forward(g, p, x)?;
        let mut x = g.relu(x)?;
        for stage in &self.stages {
            x = stage.forward(g, p, x)?;
        }
        let x = self.head_bn.forward(g, p, x)?;
        g.global_avg_pool(x)
    }
}
