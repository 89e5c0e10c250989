//! Joint training, inference and subject-wise cross-validation.

use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::sampling::{downsample_factor, random_offset, sample_clip, Augmentation};
use crate::data::{Image, Manifest, VideoClip};
use crate::dynimg;
use crate::error::{FdpError, Result};
use crate::eval::{self, Aggregation, ConfusionCounts, F1Average, FoldPlan, Metrics};
use crate::heads::Prediction;
use crate::model::FdpModel;
use crate::numerics::{Graph, Mode, Tensor};
use crate::optim::Adam;
use crate::rank;

/// Clips together with their oracle dynamic images at source resolution.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub clips: Vec<VideoClip>,
    pub oracles: Vec<Image>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(clips: Vec<VideoClip>, num_classes: usize) -> Result<Self> {
        if let Some(c) = clips.iter().find(|c| c.label >= num_classes) {
            return Err(FdpError::Manifest(format!(
                "clip {} has label {} but only {num_classes} classes",
                c.clip_id, c.label
            )));
        }
        let oracles = clips
            .iter()
            .map(|c| {
                if c.frames.len() < 2 {
                    // A single frame carries no motion.
                    let f = &c.frames[0];
                    Ok(Image::filled(1, f.height(), f.width(), 0.5))
                } else {
                    dynimg::dynamic_image(&c.frames)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            clips,
            oracles,
            num_classes,
        })
    }

    pub fn from_manifest(manifest: &Manifest) -> Result<Self> {
        Dataset::new(manifest.load_clips()?, manifest.num_classes())
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.clips.iter().map(|c| c.label).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            clips: indices.iter().map(|&i| self.clips[i].clone()).collect(),
            oracles: indices.iter().map(|&i| self.oracles[i].clone()).collect(),
            num_classes: self.num_classes,
        }
    }
}

/// Sampling offset and augmentation for one clip.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct View {
    pub offset: usize,
    pub augmentation: Augmentation,
}

impl View {
    pub fn eval() -> Self {
        View {
            offset: 0,
            augmentation: Augmentation::eval(),
        }
    }
}

/// Network inputs for one clip: `t x 3 x S x S` frames and the `1 x S x S` target.
pub fn prepare_clip(
    clip: &VideoClip,
    oracle: &Image,
    frames: usize,
    input_size: usize,
    view: View,
) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let factor = downsample_factor(input_size)?;
    let indices = sample_clip(clip.len(), frames, view.offset);
    let mut data = Vec::with_capacity(frames * 3 * input_size * input_size);
    for i in indices {
        let f = view.augmentation.apply(&clip.frames[i])?.downsample(factor)?;
        if f.channels() != 3 {
            return Err(FdpError::Shape(format!(
                "clip {} has {}-channel frames, expected colour",
                clip.clip_id,
                f.channels()
            )));
        }
        data.extend_from_slice(f.data());
    }
    let x = Tensor::from_vec(vec![frames, 3, input_size, input_size], data)?;
    let target = view.augmentation.apply(oracle)?.downsample(factor)?;
    let y = Tensor::from_vec(vec![1, input_size, input_size], target.data().to_vec())?;
    Ok((x, y))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub mer: f64,
    pub dic: f64,
    pub rank: f64,
    pub accuracy: f64,
}

impl fmt::Display for EpochStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch {:>4} loss {:.6} mer {:.6} dic {:.6} rank {:.6} acc {:.4}",
            self.epoch, self.loss, self.mer, self.dic, self.rank, self.accuracy
        )
    }
}

pub struct Trained {
    pub model: FdpModel<f32>,
    pub history: Vec<EpochStats>,
}

fn stack_batch(items: &[(Tensor<f32>, Tensor<f32>)]) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let xs: Vec<Tensor<f32>> = items.iter().map(|(x, _)| x.clone()).collect();
    let ys: Vec<Tensor<f32>> = items.iter().map(|(_, y)| y.clone()).collect();
    let x = Tensor::stack(&xs)?;
    let s = x.shape().to_vec();
    let x = x.into_shape(vec![s[0] * s[1], s[2], s[3], s[4]])?;
    Ok((x, Tensor::stack(&ys)?))
}

fn diverged(epoch: usize, batch: usize, e: FdpError) -> FdpError {
    match e {
        FdpError::NonFinite { op } => FdpError::Diverged {
            epoch,
            batch,
            detail: format!("non-finite value in {op}"),
        },
        other => other,
    }
}

/// Trains from scratch on `data`, calling `log` with one line per epoch.
pub fn train(config: &RunConfig, data: &Dataset, mut log: impl FnMut(&EpochStats)) -> Result<Trained> {
    config.validate()?;
    if data.is_empty() {
        return Err(FdpError::Empty("training set has no clips".into()));
    }
    if config.num_classes != 0 && config.num_classes != data.num_classes {
        return Err(FdpError::ClassMismatch {
            checkpoint: config.num_classes,
            manifest: data.num_classes,
        });
    }
    let mut model = FdpModel::<f32>::new(config.model(data.num_classes), config.seed)?;
    let objective = config.objective()?;
    let mut adam = Adam::new(config.adam())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let t = config.frames;
    let s = config.input_size;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut loss, mut mer, mut dic, mut rnk, mut correct) = (0.0, 0.0, 0.0, 0.0, 0usize);
        for (batch, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch = batch + 1;
            let mut items = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let clip = &data.clips[i];
                let view = if config.augment {
                    let offset = random_offset(clip.len(), t, &mut rng);
                    let mut augmentation = Augmentation::random(&mut rng);
                    augmentation.flip &= config.flip;
                    View { offset, augmentation }
                } else {
                    View::eval()
                };
                items.push(prepare_clip(clip, &data.oracles[i], t, s, view)?);
            }
            let labels: Vec<usize> = chunk.iter().map(|&i| data.clips[i].label).collect();
            let (x, y) = stack_batch(&items)?;
            let mut g = Graph::with_seed(Mode::Train, rng.gen());
            let step = (|| -> Result<_> {
                let xv = g.input(x);
                let yv = g.input(y);
                let out = model.forward(&mut g, xv)?;
                let l = model.losses(&mut g, &out, &labels, yv, &objective)?;
                let grads = g.backward(l.total)?;
                Ok((out, l, g.param_grads(&grads)))
            })();
            let (out, l, grads) = step.map_err(|e| diverged(epoch, batch, e))?;
            let value = |v| g.value(v).data()[0] as f64;
            let n = chunk.len() as f64;
            loss += value(l.total) * n;
            mer += value(l.mer) * n;
            dic += value(l.dic) * n;
            rnk += value(l.rank) * n;
            let probs = g.value(out.probs);
            let m = data.num_classes;
            for (row, &label) in probs.data().chunks(m).zip(&labels) {
                let p = Prediction::from_probs(row.iter().map(|&v| v as f64).collect())?;
                correct += (p.class == label) as usize;
            }
            if let Some((id, _)) = grads.iter().find(|(_, gr)| !gr.all_finite()) {
                return Err(FdpError::Diverged {
                    epoch,
                    batch,
                    detail: format!("non-finite gradient for {}", model.params.name(*id)),
                });
            }
            adam.step(&mut model.params, &grads)?;
            model.apply_buffer_updates(&mut g)?;
        }
        let n = data.len() as f64;
        let stats = EpochStats {
            epoch,
            loss: loss / n,
            mer: mer / n,
            dic: dic / n,
            rank: rnk / n,
            accuracy: correct as f64 / n,
        };
        if !stats.loss.is_finite() {
            return Err(FdpError::Diverged {
                epoch,
                batch: 0,
                detail: "non-finite epoch loss".into(),
            });
        }
        log(&stats);
        history.push(stats);
    }
    Ok(Trained { model, history })
}

/// Eval-mode outputs for a set of clips.
#[derive(Clone, Debug, PartialEq)]
pub struct Predictions {
    pub labels: Vec<usize>,
    pub predicted: Vec<usize>,
    pub probs: Vec<Vec<f64>>,
    /// Per-clip rank scores, `t` each.
    pub scores: Vec<Vec<f64>>,
    /// Per-clip pixel MSE between predicted and oracle dynamic images.
    pub dic_mse: Vec<f64>,
    /// Per-clip pixel MSE of the constant 0.5 predictor.
    pub baseline_mse: Vec<f64>,
}

impl Predictions {
    pub fn confusion(&self, classes: usize) -> Result<ConfusionCounts> {
        eval::confusion(&self.predicted, &self.labels, classes)
    }

    pub fn average_mse(&self) -> Result<f64> {
        mean(&self.dic_mse)
    }

    pub fn baseline_average_mse(&self) -> Result<f64> {
        mean(&self.baseline_mse)
    }

    /// Fraction of clips whose rank scores strictly increase with frame index.
    pub fn fraction_increasing(&self) -> f64 {
        let t = self.scores.first().map_or(1, Vec::len);
        let flat: Vec<f64> = self.scores.iter().flatten().copied().collect();
        rank::fraction_increasing(&flat, t)
    }
}

fn mean(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(FdpError::Empty("no clips evaluated".into()));
    }
    Ok(v.iter().sum::<f64>() / v.len() as f64)
}

/// Eval-mode inference with the centre crop and offset 0, in batches.
pub fn predict(model: &FdpModel<f32>, data: &Dataset, batch_size: usize) -> Result<Predictions> {
    if data.num_classes != model.num_classes() {
        return Err(FdpError::ClassMismatch {
            checkpoint: model.num_classes(),
            manifest: data.num_classes,
        });
    }
    let (t, s, m) = (model.frames(), model.input_size(), model.num_classes());
    let mut p = Predictions {
        labels: data.labels(),
        predicted: Vec::new(),
        probs: Vec::new(),
        scores: Vec::new(),
        dic_mse: Vec::new(),
        baseline_mse: Vec::new(),
    };
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let items = chunk
            .iter()
            .map(|&i| prepare_clip(&data.clips[i], &data.oracles[i], t, s, View::eval()))
            .collect::<Result<Vec<_>>>()?;
        let (x, y) = stack_batch(&items)?;
        let mut g = Graph::new(Mode::Eval);
        let xv = g.input(x);
        let out = model.forward(&mut g, xv)?;
        for row in g.value(out.probs).data().chunks(m) {
            let pr = Prediction::from_probs(row.iter().map(|&v| v as f64).collect())?;
            p.predicted.push(pr.class);
            p.probs.push(pr.probs);
        }
        for row in g.value(out.scores).data().chunks(t) {
            p.scores.push(row.iter().map(|&v| v as f64).collect());
        }
        let plane = s * s;
        let d_hat = g.value(out.dynamic_image).data();
        for (k, target) in y.data().chunks(plane).enumerate() {
            let pred = &d_hat[k * plane..(k + 1) * plane];
            let mse = pred
                .iter()
                .zip(target)
                .map(|(&a, &b)| ((a - b) as f64).powi(2))
                .sum::<f64>()
                / plane as f64;
            let base = target.iter().map(|&b| (0.5 - b as f64).powi(2)).sum::<f64>() / plane as f64;
            p.dic_mse.push(mse);
            p.baseline_mse.push(base);
        }
    }
    Ok(p)
}

/// Outcome of one cross-validation fold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub subject: String,
    pub test_clips: Vec<String>,
    pub confusion: ConfusionCounts,
    pub metrics: Metrics,
    pub average_mse: f64,
    pub final_train_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossValidation {
    pub folds: Vec<FoldReport>,
    pub pooled_confusion: ConfusionCounts,
    pub metrics: Metrics,
    pub average_mse: f64,
    pub aggregation: Aggregation,
}

/// Number of worker threads: `FDP_THREADS` if set, else available parallelism.
pub fn worker_threads() -> usize {
    std::env::var("FDP_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn run_fold(config: &RunConfig, data: &Dataset, fold: &eval::Fold, f1: F1Average) -> Result<FoldReport> {
    let train_set = data.subset(&fold.train);
    let test_set = data.subset(&fold.test);
    let trained = train(config, &train_set, |_| {})?;
    let preds = predict(&trained.model, &test_set, config.batch_size)?;
    let confusion = preds.confusion(data.num_classes)?;
    Ok(FoldReport {
        subject: fold.subject.clone(),
        test_clips: test_set.clips.iter().map(|c| c.clip_id.clone()).collect(),
        metrics: Metrics::from_counts(&confusion, f1)?,
        confusion,
        average_mse: preds.average_mse()?,
        final_train_loss: trained.history.last().map_or(f64::NAN, |h| h.loss),
    })
}

/// Leave-one-subject-out: retrains from scratch per fold. Folds run on up to
/// `threads` workers; each fold is deterministic, so results do not depend on it.
pub fn cross_validate(
    config: &RunConfig,
    data: &Dataset,
    plan: &FoldPlan,
    threads: usize,
    aggregation: Aggregation,
    f1: F1Average,
) -> Result<CrossValidation> {
    let threads = threads.clamp(1, plan.folds.len().max(1));
    let mut slots: Vec<Option<Result<FoldReport>>> = (0..plan.folds.len()).map(|_| None).collect();
    if threads == 1 {
        for (slot, fold) in slots.iter_mut().zip(&plan.folds) {
            *slot = Some(run_fold(config, data, fold, f1));
        }
    } else {
        std::thread::scope(|scope| {
            for (w, part) in slots.chunks_mut(plan.folds.len().div_ceil(threads)).enumerate() {
                let start = w * plan.folds.len().div_ceil(threads);
                scope.spawn(move || {
                    for (k, slot) in part.iter_mut().enumerate() {
                        *slot = Some(run_fold(config, data, &plan.folds[start + k], f1));
                    }
                });
            }
        });
    }
    let folds = slots
        .into_iter()
        .map(|s| s.expect("every fold runs"))
        .collect::<Result<Vec<_>>>()?;
    let mut pooled = ConfusionCounts::zeros(data.num_classes);
    for f in &folds {
        pooled.merge(&f.confusion)?;
    }
    let metrics = match aggregation {
        Aggregation::Pooled => Metrics::from_counts(&pooled, f1)?,
        Aggregation::Mean => Metrics::mean(&folds.iter().map(|f| f.metrics).collect::<Vec<_>>())?,
    };
    // Clip-weighted mean of the per-fold averages.
    let total: usize = folds.iter().map(|f| f.test_clips.len()).sum();
    let average_mse = folds
        .iter()
        .map(|f| f.average_mse * f.test_clips.len() as f64)
        .sum::<f64>()
        / total as f64;
    Ok(CrossValidation {
        folds,
        pooled_confusion: pooled,
        metrics,
        average_mse,
        aggregation,
    })
}
