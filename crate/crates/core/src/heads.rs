//! Recognition and dynamic-image heads over the shared dynamic representation,
//! plus the task losses.

use rand::Rng;

use crate::error::{FdpError, Result};
use crate::nn::{BatchNorm, Conv2d, ConvSpec, ConvTranspose2d, Linear};
use crate::numerics::{Graph, ParamStore, Scalar, Var, LOG_CLAMP};

/// Negative slope of the leaky ReLUs in the dynamic-image network.
pub const LEAKY_SLOPE: f64 = 0.01;

/// `λ_d`, `λ_r` in `L = L_MER + λ_d·L_DIC + λ_r·L_Rank`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub dic: f64,
    pub rank: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { dic: 100.0, rank: 0.1 }
    }
}

impl LossWeights {
    pub fn new(dic: f64, rank: f64) -> Result<Self> {
        if !(dic >= 0.0 && rank >= 0.0 && dic.is_finite() && rank.is_finite()) {
            return Err(FdpError::InvalidArgument(format!(
                "loss weights must be nonnegative, got ({dic}, {rank})"
            )));
        }
        Ok(LossWeights { dic, rank })
    }
}

pub fn full_loss(mer: f64, dic: f64, rank: f64, w: LossWeights) -> f64 {
    mer + w.dic * dic + w.rank * rank
}

/// `−ln max(p̂_c, 1e-12)`.
pub fn mer_loss(probs: &[f64], class: usize) -> Result<f64> {
    let p = probs
        .get(class)
        .ok_or_else(|| FdpError::InvalidArgument(format!("class {class} >= {}", probs.len())))?;
    Ok(-p.max(LOG_CLAMP).ln())
}

/// Mean squared pixel error.
pub fn dic_loss(predicted: &[f64], target: &[f64]) -> Result<f64> {
    if predicted.len() != target.len() || predicted.is_empty() {
        return Err(FdpError::Shape(format!(
            "dynamic images of {} and {} pixels",
            predicted.len(),
            target.len()
        )));
    }
    Ok(predicted
        .iter()
        .zip(target)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / predicted.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub probs: Vec<f64>,
    pub class: usize,
}

impl Prediction {
    /// Argmax with the lowest index winning ties.
    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(FdpError::Empty("prediction over zero classes".into()));
        }
        let mut class = 0;
        for (j, &p) in probs.iter().enumerate() {
            if p > probs[class] {
                class = j;
            }
        }
        Ok(Prediction { probs, class })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MerHeadConfig {
    pub num_classes: usize,
    pub hidden: usize,
    /// Max-pool window and stride.
    pub pool: usize,
}

impl Default for MerHeadConfig {
    fn default() -> Self {
        MerHeadConfig {
            num_classes: 5,
            hidden: 128,
            pool: 2,
        }
    }
}

/// Max-pool → flatten → FC → ReLU → FC → softmax.
#[derive(Clone, Debug)]
pub struct MerHead {
    pub config: MerHeadConfig,
    pub input: [usize; 3],
    pub fc1: Linear,
    pub fc2: Linear,
}

impl MerHead {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        config: MerHeadConfig,
        input: [usize; 3],
        rng: &mut R,
    ) -> Result<Self> {
        if config.num_classes < 2 {
            return Err(FdpError::Config("at least two classes are required".into()));
        }
        let [c, h, w] = input;
        if config.pool == 0 || h % config.pool != 0 || w % config.pool != 0 {
            return Err(FdpError::Config(format!(
                "max-pool {} does not tile {h}x{w}",
                config.pool
            )));
        }
        let flat = c * (h / config.pool) * (w / config.pool);
        let fc1 = Linear::new(store, "mer.fc1", flat, config.hidden, rng);
        let fc2 = Linear::new(store, "mer.fc2", config.hidden, config.num_classes, rng);
        Ok(MerHead {
            config,
            input,
            fc1,
            fc2,
        })
    }

    pub fn logits<T: Scalar>(&self, g: &mut Graph<T>, p: &ParamStore<T>, fd: Var) -> Result<Var> {
        let s = g.shape(fd).to_vec();
        if s.len() != 4 || s[1..] != self.input {
            return Err(FdpError::Shape(format!(
                "recognition head expects N x {:?}, got {s:?}",
                self.input
            )));
        }
        let y = g.max_pool2d(fd, self.config.pool, self.config.pool)?;
        let flat: usize = g.shape(y)[1..].iter().product();
        let y = g.reshape(y, vec![s[0], flat])?;
        let y = self.fc1.forward(g, p, y)?;
        let y = g.relu(y)?;
        self.fc2.forward(g, p, y)
    }

    /// Class probabilities, `N x m`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &ParamStore<T>, fd: Var) -> Result<Var> {
        let logits = self.logits(g, p, fd)?;
        g.softmax(logits)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DicConfig {
    /// Encoder block widths; each block halves the extent.
    pub encoder_channels: Vec<usize>,
    /// Widths of the extra upsampling blocks after the decoder.
    pub upsample_channels: Vec<usize>,
    /// Side of the square predicted dynamic image.
    pub output_size: usize,
}

impl Default for DicConfig {
    fn default() -> Self {
        DicConfig {
            encoder_channels: vec![64, 128, 256, 256],
            upsample_channels: vec![64, 32],
            output_size: 64,
        }
    }
}

#[derive(Clone, Debug)]
struct ConvBnAct {
    conv: Conv2d,
    bn: BatchNorm,
}

impl ConvBnAct {
    fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        rng: &mut R,
    ) -> Self {
        ConvBnAct {
            conv: Conv2d::new(store, &format!("{name}.conv"), ConvSpec::same3(cin, cout), rng),
            bn: BatchNorm::new(store, &format!("{name}.bn"), cout),
        }
    }

    fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &ParamStore<T>, x: Var) -> Result<Var> {
        let y = self.conv.forward(g, p, x)?;
        let y = self.bn.forward(g, p, y)?;
        g.leaky_relu(y, T::of(LEAKY_SLOPE))
    }
}

#[derive(Clone, Debug)]
struct UpBlock {
    deconv: ConvTranspose2d,
    body: ConvBnAct,
}

impl UpBlock {
    fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        rng: &mut R,
    ) -> Self {
        UpBlock {
            deconv: ConvTranspose2d::new(store, &format!("{name}.deconv"), cin, cout, 2, 2, rng),
            body: ConvBnAct::new(store, name, cout, cout, rng),
        }
    }

    fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &ParamStore<T>, x: Var) -> Result<Var> {
        let y = self.deconv.forward(g, p, x)?;
        self.body.forward(g, p, y)
    }
}

/// Fully convolutional encoder-decoder with additive skips, ending in a sigmoid.
#[derive(Clone, Debug)]
pub struct DicNetwork {
    pub config: DicConfig,
    pub input: [usize; 3],
    encoders: Vec<ConvBnAct>,
    decoders: Vec<UpBlock>,
    upsamplers: Vec<UpBlock>,
    out: Conv2d,
}

impl DicNetwork {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        config: DicConfig,
        input: [usize; 3],
        rng: &mut R,
    ) -> Result<Self> {
        let [c, h, w] = input;
        let depth = config.encoder_channels.len();
        if depth == 0 {
            return Err(FdpError::Config("dynamic-image encoder needs at least one block".into()));
        }
        if h != w {
            return Err(FdpError::Config(format!(
                "dynamic-image network needs a square representation, got {h}x{w}"
            )));
        }
        if h % (1 << depth) != 0 {
            return Err(FdpError::Config(format!(
                "{depth} pooling blocks do not divide extent {h}"
            )));
        }
        let scale = h << config.upsample_channels.len();
        if scale != config.output_size {
            return Err(FdpError::Config(format!(
                "{} upsampling blocks take {h} to {scale}, not {}",
                config.upsample_channels.len(),
                config.output_size
            )));
        }
        let mut encoders = Vec::with_capacity(depth);
        let mut cin = c;
        for (i, &cout) in config.encoder_channels.iter().enumerate() {
            encoders.push(ConvBnAct::new(store, &format!("dic.enc{i}"), cin, cout, rng));
            cin = cout;
        }
        // Decoder j mirrors encoder depth-1-j so its output matches that skip (or the input).
        let mut decoders = Vec::with_capacity(depth);
        for j in 0..depth {
            let cout = if j + 1 < depth {
                config.encoder_channels[depth - 2 - j]
            } else {
                c
            };
            decoders.push(UpBlock::new(store, &format!("dic.dec{j}"), cin, cout, rng));
            cin = cout;
        }
        let mut upsamplers = Vec::with_capacity(config.upsample_channels.len());
        for (j, &cout) in config.upsample_channels.iter().enumerate() {
            upsamplers.push(UpBlock::new(store, &format!("dic.up{j}"), cin, cout, rng));
            cin = cout;
        }
        let out = Conv2d::new(store, "dic.out", ConvSpec::pointwise(cin, 1), rng);
        Ok(DicNetwork {
            config,
            input,
            encoders,
            decoders,
            upsamplers,
            out,
        })
    }

    /// `N x C_d x H_r x W_r` to `N x 1 x S x S` in (0, 1).
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &ParamStore<T>, fd: Var) -> Result<Var> {
        let s = g.shape(fd).to_vec();
        if s.len() != 4 || s[1..] != self.input {
            return Err(FdpError::Shape(format!(
                "dynamic-image network expects N x {:?}, got {s:?}",
                self.input
            )));
        }
        let mut skips = vec![fd];
        let mut x = fd;
        for enc in &self.encoders {
            let y = enc.forward(g, p, x)?;
            x = g.max_pool2d(y, 2, 2)?;
            skips.push(x);
        }
        // The deepest encoder output feeds the decoder directly rather than as a skip.
        skips.pop();
        for dec in &self.decoders {
            let y = dec.forward(g, p, x)?;
            let skip = skips.pop().expect("one skip per decoder block");
            x = g.add(y, skip)?;
        }
        for up in &self.upsamplers {
            x = up.forward(g, p, x)?;
        }
        let y = self.out.forward(g, p, x)?;
        g.sigmoid(y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_examples() {
        assert_eq!(mer_loss(&[0.0, 1.0], 1).unwrap(), 0.0);
        assert!((mer_loss(&[0.2; 5], 3).unwrap() - 1.6094379124341003).abs() < 1e-12);
        assert!((mer_loss(&[1.0, 1e-20], 1).unwrap() - 27.631021115928547).abs() < 1e-9);
        assert_eq!(dic_loss(&[0.5; 4], &[1.0; 4]).unwrap(), 0.25);
        assert_eq!(dic_loss(&[0.0; 4], &[1.0, 1.0, 0.0, 0.0]).unwrap(), 0.5);
        assert!(dic_loss(&[0.0; 3], &[0.0; 4]).is_err());
    }

    #[test]
    fn full_loss_examples() {
        let w = LossWeights::default();
        assert!((full_loss(1.0, 0.01, 2.0, w) - 2.2).abs() < 1e-12);
        assert_eq!(full_loss(0.7, 3.0, 9.0, LossWeights::new(0.0, 0.0).unwrap()), 0.7);
        assert!(LossWeights::new(-1.0, 0.0).is_err());
    }

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(Prediction::from_probs(vec![0.4, 0.4, 0.2]).unwrap().class, 0);
        assert_eq!(Prediction::from_probs(vec![0.1, 0.2, 0.7]).unwrap().class, 2);
    }
}
