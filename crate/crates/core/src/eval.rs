//! Confusion counting, recall/F1 metrics, subject-wise fold plans and the
//! Wilcoxon rank-sum test.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::Manifest;
use crate::error::{FdpError, Result};

/// `m x m` counts, rows = true class, columns = predicted class.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    classes: usize,
    counts: Vec<Vec<u64>>,
}

impl ConfusionCounts {
    pub fn zeros(classes: usize) -> Self {
        ConfusionCounts {
            classes,
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn from_matrix(counts: Vec<Vec<u64>>) -> Result<Self> {
        let m = counts.len();
        if counts.iter().any(|r| r.len() != m) {
            return Err(FdpError::Shape("confusion matrix must be square".into()));
        }
        Ok(ConfusionCounts { classes: m, counts })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn matrix(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn record(&mut self, truth: usize, predicted: usize) -> Result<()> {
        let m = self.classes;
        if truth >= m || predicted >= m {
            return Err(FdpError::InvalidArgument(format!(
                "class pair ({truth}, {predicted}) outside [0, {m})"
            )));
        }
        self.counts[truth][predicted] += 1;
        Ok(())
    }

    /// Adds another matrix of the same size.
    pub fn merge(&mut self, other: &ConfusionCounts) -> Result<()> {
        if other.classes != self.classes {
            return Err(FdpError::Shape(format!(
                "merging {}-class into {}-class counts",
                other.classes, self.classes
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn tp(&self, j: usize) -> u64 {
        self.counts[j][j]
    }

    pub fn fn_(&self, j: usize) -> u64 {
        self.support(j) - self.tp(j)
    }

    pub fn fp(&self, j: usize) -> u64 {
        self.counts.iter().map(|r| r[j]).sum::<u64>() - self.tp(j)
    }

    /// Row sum: number of samples whose true class is `j`.
    pub fn support(&self, j: usize) -> u64 {
        self.counts[j].iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|j| self.tp(j)).sum()
    }
}

pub fn confusion(predictions: &[usize], labels: &[usize], classes: usize) -> Result<ConfusionCounts> {
    if predictions.len() != labels.len() {
        return Err(FdpError::Shape(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut c = ConfusionCounts::zeros(classes);
    for (&p, &l) in predictions.iter().zip(labels) {
        c.record(l, p)?;
    }
    Ok(c)
}

/// Unweighted average recall, `(1/m) Σ_j TP_j / (TP_j + FN_j)`.
pub fn uar(c: &ConfusionCounts) -> Result<f64> {
    if c.classes == 0 {
        return Err(FdpError::Empty("zero classes".into()));
    }
    let mut sum = 0.0;
    for j in 0..c.classes {
        let n = c.support(j);
        if n == 0 {
            return Err(FdpError::EmptyClass { class: j });
        }
        sum += c.tp(j) as f64 / n as f64;
    }
    Ok(sum / c.classes as f64)
}

/// Weighted average recall, `Σ_j TP_j / N` (overall accuracy).
pub fn war(c: &ConfusionCounts) -> Result<f64> {
    let n = c.total();
    if n == 0 {
        return Err(FdpError::Empty("no samples in confusion matrix".into()));
    }
    Ok(c.trace() as f64 / n as f64)
}

/// Per-class F1; 0 when the class has no true positives.
pub fn class_f1(c: &ConfusionCounts) -> Vec<f64> {
    (0..c.classes)
        .map(|j| {
            let tp = c.tp(j) as f64;
            if tp == 0.0 {
                return 0.0;
            }
            let p = tp / (tp + c.fp(j) as f64);
            let r = tp / (tp + c.fn_(j) as f64);
            2.0 * p * r / (p + r)
        })
        .collect()
}

pub fn macro_f1(c: &ConfusionCounts) -> f64 {
    if c.classes == 0 {
        return 0.0;
    }
    class_f1(c).iter().sum::<f64>() / c.classes as f64
}

/// Support-weighted mean of per-class F1.
pub fn weighted_f1(c: &ConfusionCounts) -> f64 {
    let n = c.total();
    if n == 0 {
        return 0.0;
    }
    class_f1(c)
        .iter()
        .enumerate()
        .map(|(j, f)| f * c.support(j) as f64)
        .sum::<f64>()
        / n as f64
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum F1Average {
    #[default]
    Macro,
    Weighted,
}

/// How fold results are combined under subject-wise cross-validation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    /// One confusion matrix over all folds' test predictions.
    #[default]
    Pooled,
    /// Unweighted mean of per-fold metrics.
    Mean,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub f1: f64,
    /// `None` when some class has no samples.
    pub uar: Option<f64>,
    pub war: f64,
}

impl Metrics {
    pub fn from_counts(c: &ConfusionCounts, average: F1Average) -> Result<Self> {
        let war = war(c)?;
        let uar = match uar(c) {
            Ok(v) => Some(v),
            Err(FdpError::EmptyClass { .. }) => None,
            Err(e) => return Err(e),
        };
        let f1 = match average {
            F1Average::Macro => macro_f1(c),
            F1Average::Weighted => weighted_f1(c),
        };
        Ok(Metrics {
            accuracy: war,
            f1,
            uar,
            war,
        })
    }

    /// Unweighted mean; UAR averages over folds where it is defined.
    pub fn mean(items: &[Metrics]) -> Result<Self> {
        if items.is_empty() {
            return Err(FdpError::Empty("no metrics to average".into()));
        }
        let n = items.len() as f64;
        let uars: Vec<f64> = items.iter().filter_map(|m| m.uar).collect();
        Ok(Metrics {
            accuracy: items.iter().map(|m| m.accuracy).sum::<f64>() / n,
            f1: items.iter().map(|m| m.f1).sum::<f64>() / n,
            uar: (!uars.is_empty()).then(|| uars.iter().sum::<f64>() / uars.len() as f64),
            war: items.iter().map(|m| m.war).sum::<f64>() / n,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    /// Held-out subject.
    pub subject: String,
    /// Row indices into the source manifest.
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub folds: Vec<Fold>,
}

/// One fold per distinct subject, ordered by subject id.
pub fn loso_split<'a>(subjects: impl IntoIterator<Item = &'a str>) -> Result<FoldPlan> {
    let subjects: Vec<&str> = subjects.into_iter().collect();
    let mut by_subject: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in subjects.iter().enumerate() {
        by_subject.entry(s).or_default().push(i);
    }
    if by_subject.len() < 2 {
        return Err(FdpError::InvalidArgument(format!(
            "subject-wise cross-validation needs at least 2 subjects, found {}",
            by_subject.len()
        )));
    }
    let folds = by_subject
        .into_iter()
        .map(|(subject, test)| Fold {
            subject: subject.to_string(),
            train: (0..subjects.len()).filter(|&i| subjects[i] != subject).collect(),
            test,
        })
        .collect();
    Ok(FoldPlan { folds })
}

pub fn loso_split_manifest(manifest: &Manifest) -> Result<FoldPlan> {
    loso_split(manifest.rows.iter().map(|r| r.subject_id.as_str()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sidedness {
    TwoSided,
    /// Alternative: `a` tends to be smaller than `b`.
    Less,
    /// Alternative: `a` tends to be larger than `b`.
    Greater,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankSumResult {
    /// Rank sum of `a` in the pooled sample.
    pub w: f64,
    /// Continuity-corrected standardized statistic.
    pub z: f64,
    /// Normal-approximation p-value.
    pub p: f64,
    /// Enumeration p-value, for pooled sizes up to [`EXACT_LIMIT`].
    pub p_exact: Option<f64>,
    pub sidedness: Sidedness,
}

/// Largest pooled sample size for exact enumeration.
pub const EXACT_LIMIT: usize = 12;

/// Midranks (1-based) of `values`, plus the tie term `Σ (t³ − t)`.
pub fn midranks(values: &[f64]) -> (Vec<f64>, f64) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        let t = (j - i + 1) as f64;
        ties += t * t * t - t;
        i = j + 1;
    }
    (ranks, ties)
}

/// Upper tail `P(Z > z)` of the standard normal.
pub fn normal_sf(z: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("standard normal").sf(z)
}

pub fn normal_cdf(z: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("standard normal").cdf(z)
}

fn exact_p(ranks: &[f64], na: usize, w: f64, mu: f64, side: Sidedness) -> f64 {
    let n = ranks.len();
    let tol = 1e-9;
    let mut hits = 0u64;
    let mut total = 0u64;
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != na {
            continue;
        }
        let s: f64 = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| ranks[i]).sum();
        total += 1;
        let extreme = match side {
            Sidedness::Less => s <= w + tol,
            Sidedness::Greater => s >= w - tol,
            Sidedness::TwoSided => (s - mu).abs() >= (w - mu).abs() - tol,
        };
        hits += extreme as u64;
    }
    hits as f64 / total as f64
}

pub fn wilcoxon_rank_sum(a: &[f64], b: &[f64], sidedness: Sidedness) -> Result<RankSumResult> {
    if a.is_empty() || b.is_empty() {
        return Err(FdpError::Empty("rank-sum samples must be nonempty".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(FdpError::InvalidArgument("rank-sum samples must be finite".into()));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let n = na + nb;
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (ranks, ties) = midranks(&pooled);
    let w: f64 = ranks[..a.len()].iter().sum();
    let mu = na * (n + 1.0) / 2.0;
    let var = na * nb / 12.0 * ((n + 1.0) - ties / (n * (n - 1.0)));
    let sigma = var.max(0.0).sqrt();
    let d = w - mu;
    let corrected = |shift: f64| if sigma > 0.0 { (d + shift) / sigma } else { 0.0 };
    let z = if d.abs() <= 0.5 { 0.0 } else { corrected(-0.5 * d.signum()) };
    let p = if sigma == 0.0 {
        1.0
    } else {
        match sidedness {
            Sidedness::TwoSided => (2.0 * normal_sf(z.abs())).min(1.0),
            Sidedness::Less => normal_cdf(corrected(0.5)),
            Sidedness::Greater => normal_sf(corrected(-0.5)),
        }
    };
    let p_exact = (pooled.len() <= EXACT_LIMIT).then(|| exact_p(&ranks, a.len(), w, mu, sidedness));
    Ok(RankSumResult {
        w,
        z,
        p,
        p_exact,
        sidedness,
    })
}
