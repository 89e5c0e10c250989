//! Run configuration: line-based `key = value` text with `#` comments.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::encoder::EncoderConfig;
use crate::error::{FdpError, Result};
use crate::heads::{DicConfig, LossWeights, MerHeadConfig};
use crate::model::{ModelConfig, Objective};
use crate::optim::AdamConfig;
use crate::rank::RankTarget;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// Frames per clip, `t`.
    pub frames: usize,
    pub lambda_d: f64,
    pub lambda_r: f64,
    /// Weight of the recognition loss; 0 removes it (ablation).
    pub lambda_mer: f64,
    /// Slope `a` of the rank target `K_k = a·k`.
    pub rank_slope: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub deterministic: bool,
    /// Random offsets, crops and flips during training; off trains on the evaluation view.
    pub augment: bool,
    /// Horizontal flips when augmenting. Labels must be mirror-invariant.
    pub flip: bool,
    /// Number of classes; 0 takes the count from the manifest.
    pub num_classes: usize,
    pub input_size: usize,
    pub stem_channels: usize,
    pub stage_channels: Vec<usize>,
    pub patch_sizes: Vec<usize>,
    pub num_local: usize,
    pub num_global: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub dropout: f64,
    pub temporal_channels: usize,
    pub mer_hidden: usize,
    pub mer_pool: usize,
    pub dic_encoder_channels: Vec<usize>,
    pub dic_upsample_channels: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        let enc = model.encoder;
        RunConfig {
            frames: model.frames,
            lambda_d: 100.0,
            lambda_r: 0.1,
            lambda_mer: 1.0,
            rank_slope: 1.0,
            learning_rate: 1e-4,
            batch_size: 36,
            epochs: 100,
            seed: 0,
            deterministic: true,
            augment: true,
            flip: true,
            num_classes: 0,
            input_size: enc.input_size,
            stem_channels: enc.stem_channels,
            stage_channels: enc.stage_channels,
            patch_sizes: enc.patch_sizes,
            num_local: enc.num_local,
            num_global: enc.num_global,
            heads: enc.heads,
            mlp_ratio: enc.mlp_ratio,
            dropout: enc.dropout,
            temporal_channels: model.temporal_channels,
            mer_hidden: model.mer.hidden,
            mer_pool: model.mer.pool,
            dic_encoder_channels: model.dic.encoder_channels,
            dic_upsample_channels: model.dic.upsample_channels,
        }
    }
}

fn parse_value<V: FromStr>(key: &str, raw: &str) -> Result<V>
where
    V::Err: std::fmt::Display,
{
    raw.parse()
        .map_err(|e| FdpError::Config(format!("{key} = {raw}: {e}")))
}

fn parse_list(key: &str, raw: &str) -> Result<Vec<usize>> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_value(key, s))
        .collect()
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// A small network that trains on a CPU in minutes: 32-pixel inputs,
    /// two encoder stages, `t = 4`.
    pub fn tiny() -> Self {
        RunConfig {
            frames: 4,
            batch_size: 4,
            // The synthetic classes are motion directions, which a mirror changes.
            flip: false,
            learning_rate: 5e-4,
            epochs: 150,
            input_size: 32,
            stem_channels: 8,
            stage_channels: vec![16, 64],
            patch_sizes: vec![2, 2],
            num_local: 1,
            num_global: 1,
            heads: 2,
            mlp_ratio: 2,
            dropout: 0.0,
            temporal_channels: 8,
            mer_hidden: 32,
            mer_pool: 2,
            dic_encoder_channels: vec![16, 16],
            dic_upsample_channels: vec![8, 8],
            ..RunConfig::default()
        }
    }

    /// `default` or `tiny`.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "default" => Ok(RunConfig::default()),
            "tiny" => Ok(RunConfig::tiny()),
            other => Err(FdpError::Config(format!("unknown preset {other:?}"))),
        }
    }

    /// Line-based `key = value` text; `#` starts a comment. An optional leading
    /// `preset = tiny` starts from [`RunConfig::tiny`] instead of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut assigned = false;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| FdpError::Config(format!("line {}: expected key = value", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if key == "preset" {
                if assigned {
                    return Err(FdpError::Config(format!("line {}: preset must come first", lineno + 1)));
                }
                cfg = RunConfig::preset(value)?;
            } else {
                cfg.set(key, value)?;
            }
            assigned = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| FdpError::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            FdpError::Config(m) => FdpError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Assigns one key; unknown keys are rejected.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "frames" => self.frames = parse_value(key, v)?,
            "lambda_d" => self.lambda_d = parse_value(key, v)?,
            "lambda_r" => self.lambda_r = parse_value(key, v)?,
            "lambda_mer" => self.lambda_mer = parse_value(key, v)?,
            "rank_slope" => self.rank_slope = parse_value(key, v)?,
            "learning_rate" => self.learning_rate = parse_value(key, v)?,
            "batch_size" => self.batch_size = parse_value(key, v)?,
            "epochs" => self.epochs = parse_value(key, v)?,
            "seed" => self.seed = parse_value(key, v)?,
            "deterministic" => self.deterministic = parse_value(key, v)?,
            "augment" => self.augment = parse_value(key, v)?,
            "flip" => self.flip = parse_value(key, v)?,
            "num_classes" => self.num_classes = parse_value(key, v)?,
            "input_size" => self.input_size = parse_value(key, v)?,
            "stem_channels" => self.stem_channels = parse_value(key, v)?,
            "stage_channels" => self.stage_channels = parse_list(key, v)?,
            "patch_sizes" => self.patch_sizes = parse_list(key, v)?,
            "num_local" => self.num_local = parse_value(key, v)?,
            "num_global" => self.num_global = parse_value(key, v)?,
            "heads" => self.heads = parse_value(key, v)?,
            "mlp_ratio" => self.mlp_ratio = parse_value(key, v)?,
            "dropout" => self.dropout = parse_value(key, v)?,
            "temporal_channels" => self.temporal_channels = parse_value(key, v)?,
            "mer_hidden" => self.mer_hidden = parse_value(key, v)?,
            "mer_pool" => self.mer_pool = parse_value(key, v)?,
            "dic_encoder_channels" => self.dic_encoder_channels = parse_list(key, v)?,
            "dic_upsample_channels" => self.dic_upsample_channels = parse_list(key, v)?,
            _ => return Err(FdpError::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(FdpError::Config(m));
        for (k, v) in [
            ("frames", self.frames),
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
            ("temporal_channels", self.temporal_channels),
            ("mer_hidden", self.mer_hidden),
        ] {
            if v == 0 {
                return bad(format!("{k} must be positive"));
            }
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        for (k, v) in [
            ("lambda_d", self.lambda_d),
            ("lambda_r", self.lambda_r),
            ("lambda_mer", self.lambda_mer),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{k} must be finite and >= 0, got {v}"));
            }
        }
        RankTarget::new(self.rank_slope)?;
        self.encoder().validate()
    }

    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            input_size: self.input_size,
            stem_channels: self.stem_channels,
            stage_channels: self.stage_channels.clone(),
            patch_sizes: self.patch_sizes.clone(),
            num_local: self.num_local,
            num_global: self.num_global,
            heads: self.heads,
            mlp_ratio: self.mlp_ratio,
            dropout: self.dropout,
        }
    }

    /// Network configuration for `num_classes` classes.
    pub fn model(&self, num_classes: usize) -> ModelConfig {
        ModelConfig {
            encoder: self.encoder(),
            frames: self.frames,
            temporal_channels: self.temporal_channels,
            mer: MerHeadConfig {
                num_classes,
                hidden: self.mer_hidden,
                pool: self.mer_pool,
            },
            dic: DicConfig {
                encoder_channels: self.dic_encoder_channels.clone(),
                upsample_channels: self.dic_upsample_channels.clone(),
                output_size: self.input_size,
            },
        }
    }

    pub fn objective(&self) -> Result<Objective> {
        Ok(Objective {
            mer: self.lambda_mer,
            weights: LossWeights::new(self.lambda_d, self.lambda_r)?,
            target: RankTarget::new(self.rank_slope)?,
        })
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            ..AdamConfig::default()
        }
    }

    /// Canonical text: every key in a fixed order, parseable by [`RunConfig::parse`].
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("frames", self.frames.to_string());
        put("lambda_d", self.lambda_d.to_string());
        put("lambda_r", self.lambda_r.to_string());
        put("lambda_mer", self.lambda_mer.to_string());
        put("rank_slope", self.rank_slope.to_string());
        put("learning_rate", self.learning_rate.to_string());
        put("batch_size", self.batch_size.to_string());
        put("epochs", self.epochs.to_string());
        put("seed", self.seed.to_string());
        put("deterministic", self.deterministic.to_string());
        put("augment", self.augment.to_string());
        put("flip", self.flip.to_string());
        put("num_classes", self.num_classes.to_string());
        put("input_size", self.input_size.to_string());
        put("stem_channels", self.stem_channels.to_string());
        put("stage_channels", join(&self.stage_channels));
        put("patch_sizes", join(&self.patch_sizes));
        put("num_local", self.num_local.to_string());
        put("num_global", self.num_global.to_string());
        put("heads", self.heads.to_string());
        put("mlp_ratio", self.mlp_ratio.to_string());
        put("dropout", self.dropout.to_string());
        put("temporal_channels", self.temporal_channels.to_string());
        put("mer_hidden", self.mer_hidden.to_string());
        put("mer_pool", self.mer_pool.to_string());
        put("dic_encoder_channels", join(&self.dic_encoder_channels));
        put("dic_upsample_channels", join(&self.dic_upsample_channels));
        s
    }

    /// CRC-32 of the canonical text, as 8 hex digits.
    pub fn hash(&self) -> String {
        format!("{:08x}", crc32fast::hash(self.to_text().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_training_recipe() {
        let c = RunConfig::default();
        assert_eq!((c.frames, c.batch_size), (8, 36));
        assert_eq!((c.lambda_d, c.lambda_r, c.learning_rate), (100.0, 0.1, 1e-4));
        c.validate().unwrap();
        RunConfig::tiny().validate().unwrap();
    }

    #[test]
    fn text_round_trip() {
        let c = RunConfig::tiny();
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
        let parsed = RunConfig::parse("# comment\nepochs = 7  # trailing\n\nstage_channels = 8, 16\npatch_sizes=2,2\nheads=2").unwrap();
        assert_eq!(parsed.epochs, 7);
        assert_eq!(parsed.stage_channels, vec![8, 16]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(RunConfig::parse("colour = blue").is_err());
        assert!(RunConfig::parse("epochs").is_err());
        assert!(RunConfig::parse("epochs = -1").is_err());
        assert!(RunConfig::parse("learning_rate = 0").is_err());
    }
}
