//! The command implementations behind the `fdp` binary.
//!
//! Each command writes human-readable output to `out` and returns an
//! [`FdpError`] whose [`exit_code`](FdpError::exit_code) the binary reports.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::checkpoint;
use crate::config::RunConfig;
use crate::data::{pnm, synth, Image, Manifest, SynthSpec};
use crate::dynimg;
use crate::error::{FdpError, Result};
use crate::eval::{self, Aggregation, ConfusionCounts, F1Average, Metrics, Sidedness};
use crate::gradsuite;
use crate::train::{self, Dataset, FoldReport};

fn io_err(e: std::io::Error) -> FdpError {
    FdpError::io("<stdout>", e)
}

pub fn gen_synth(spec: &SynthSpec, out_dir: &Path, out: &mut dyn Write) -> Result<()> {
    let manifest = synth::write_dataset(spec, out_dir)?;
    writeln!(
        out,
        "wrote {} clips ({} subjects, {} classes) to {}",
        manifest.len(),
        spec.num_subjects,
        spec.num_classes,
        out_dir.display()
    )
    .map_err(io_err)
}

/// Class count for a run: the config's if set, else the manifest's.
fn resolve_classes(config: &RunConfig, manifest: &Manifest) -> Result<usize> {
    match config.num_classes {
        0 => Ok(manifest.num_classes()),
        m if m == manifest.num_classes() => Ok(m),
        m => Err(FdpError::ClassMismatch {
            checkpoint: m,
            manifest: manifest.num_classes(),
        }),
    }
}

pub struct TrainArgs<'a> {
    pub config: RunConfig,
    pub manifest: &'a Path,
    pub checkpoint: &'a Path,
    pub log: Option<&'a Path>,
}

/// Trains on every clip of the manifest and writes the checkpoint.
///
/// Log lines go to `out` and, if requested, to a log file. Unless the config
/// is deterministic each line also carries the elapsed wall-clock time.
pub fn train(args: TrainArgs<'_>, out: &mut dyn Write) -> Result<()> {
    let manifest = Manifest::load(args.manifest)?;
    resolve_classes(&args.config, &manifest)?;
    let data = Dataset::from_manifest(&manifest)?;
    let mut lines = Vec::new();
    let start = Instant::now();
    let mut write_err = None;
    let trained = train::train(&args.config, &data, |s| {
        let line = if args.config.deterministic {
            s.to_string()
        } else {
            format!("{s} time {:.1}s", start.elapsed().as_secs_f64())
        };
        if let Err(e) = writeln!(out, "{line}") {
            write_err.get_or_insert(e);
        }
        lines.push(line);
    })?;
    if let Some(e) = write_err {
        return Err(io_err(e));
    }
    if let Some(path) = args.log {
        let mut text = lines.join("\n");
        text.push('\n');
        fs::write(path, text).map_err(|e| FdpError::io(path, e))?;
    }
    checkpoint::save(args.checkpoint, &args.config, &trained.model)?;
    writeln!(out, "checkpoint {}", args.checkpoint.display()).map_err(io_err)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Protocol {
    /// Retrain once per held-out subject.
    Loso,
    /// Score a checkpoint on the clips of chosen test subjects.
    Holdout,
    /// Score a checkpoint on every clip of another dataset.
    Cross,
}

impl std::str::FromStr for Protocol {
    type Err = FdpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "loso" => Ok(Protocol::Loso),
            "holdout" => Ok(Protocol::Holdout),
            "cross" => Ok(Protocol::Cross),
            other => Err(FdpError::InvalidArgument(format!(
                "unknown protocol {other:?} (expected loso, holdout or cross)"
            ))),
        }
    }
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::Loso => "loso",
            Protocol::Holdout => "holdout",
            Protocol::Cross => "cross",
        }
    }
}

pub struct EvalArgs<'a> {
    pub protocol: Protocol,
    pub manifest: &'a Path,
    /// Required for holdout and cross; for LOSO it only supplies the config.
    pub checkpoint: Option<&'a Path>,
    /// Overrides the checkpoint's config for LOSO.
    pub config: Option<RunConfig>,
    pub test_subjects: Vec<String>,
    pub f1: F1Average,
    pub aggregation: Aggregation,
    pub threads: usize,
    pub report: Option<&'a Path>,
}

#[derive(Clone, Debug, Serialize)]
pub struct FoldSummary {
    pub subject: String,
    pub clips: usize,
    pub metrics: Metrics,
    pub average_mse: f64,
}

impl From<&FoldReport> for FoldSummary {
    fn from(f: &FoldReport) -> Self {
        FoldSummary {
            subject: f.subject.clone(),
            clips: f.test_clips.len(),
            metrics: f.metrics,
            average_mse: f.average_mse,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct EvalReport {
    pub protocol: String,
    pub config_hash: String,
    pub clips: usize,
    pub classes: Vec<String>,
    pub metrics: Metrics,
    pub confusion: Vec<Vec<u64>>,
    /// Mean per-clip MSE of the predicted dynamic image against the oracle.
    pub average_mse: f64,
    /// The same for a constant mid-gray prediction.
    pub baseline_mse: Option<f64>,
    pub folds: Vec<FoldSummary>,
}

pub fn eval(args: EvalArgs<'_>, out: &mut dyn Write) -> Result<EvalReport> {
    let manifest = Manifest::load(args.manifest)?;
    let report = match args.protocol {
        Protocol::Loso => {
            let config = match (args.config, args.checkpoint) {
                (Some(c), _) => c,
                (None, Some(p)) => checkpoint::load(p)?.config,
                (None, None) => {
                    return Err(FdpError::InvalidArgument(
                        "loso needs --config or --checkpoint".into(),
                    ))
                }
            };
            resolve_classes(&config, &manifest)?;
            let data = Dataset::from_manifest(&manifest)?;
            let plan = eval::loso_split_manifest(&manifest)?;
            let cv = train::cross_validate(&config, &data, &plan, args.threads, args.aggregation, args.f1)?;
            EvalReport {
                protocol: args.protocol.name().into(),
                config_hash: config.hash(),
                clips: data.len(),
                classes: manifest.classes.clone(),
                metrics: cv.metrics,
                confusion: cv.pooled_confusion.matrix().to_vec(),
                average_mse: cv.average_mse,
                baseline_mse: None,
                folds: cv.folds.iter().map(FoldSummary::from).collect(),
            }
        }
        Protocol::Holdout | Protocol::Cross => {
            let path = args.checkpoint.ok_or_else(|| {
                FdpError::InvalidArgument(format!("{} needs --checkpoint", args.protocol.name()))
            })?;
            let ckpt = checkpoint::load(path)?;
            let manifest = if args.protocol == Protocol::Holdout {
                if args.test_subjects.is_empty() {
                    return Err(FdpError::InvalidArgument("holdout needs --test-subjects".into()));
                }
                let m = manifest.filter_subjects(&args.test_subjects, true);
                if m.is_empty() {
                    return Err(FdpError::Empty(format!(
                        "no clips for test subjects {:?}",
                        args.test_subjects
                    )));
                }
                m
            } else {
                manifest
            };
            if ckpt.model.num_classes() != manifest.num_classes() {
                return Err(FdpError::ClassMismatch {
                    checkpoint: ckpt.model.num_classes(),
                    manifest: manifest.num_classes(),
                });
            }
            let data = Dataset::from_manifest(&manifest)?;
            let preds = train::predict(&ckpt.model, &data, ckpt.config.batch_size)?;
            let counts = preds.confusion(data.num_classes)?;
            EvalReport {
                protocol: args.protocol.name().into(),
                config_hash: ckpt.config.hash(),
                clips: data.len(),
                classes: manifest.classes.clone(),
                metrics: Metrics::from_counts(&counts, args.f1)?,
                confusion: counts.matrix().to_vec(),
                average_mse: preds.average_mse()?,
                baseline_mse: Some(preds.baseline_average_mse()?),
                folds: Vec::new(),
            }
        }
    };
    print_report(&report, out).map_err(io_err)?;
    if let Some(path) = args.report {
        let json = serde_json::to_string_pretty(&report)
            .map_err(|e| FdpError::InvalidArgument(format!("report serialization: {e}")))?;
        fs::write(path, json + "\n").map_err(|e| FdpError::io(path, e))?;
    }
    Ok(report)
}

fn print_report(r: &EvalReport, out: &mut dyn Write) -> std::io::Result<()> {
    for f in &r.folds {
        writeln!(
            out,
            "fold {:<8} clips {:>3} acc {:.4} mse {:.6}",
            f.subject, f.clips, f.metrics.accuracy, f.average_mse
        )?;
    }
    let uar = r.metrics.uar.map_or("n/a".to_string(), |u| format!("{u:.4}"));
    writeln!(
        out,
        "{} clips {} acc {:.4} f1 {:.4} uar {uar} war {:.4} average_mse {:.6} config {}",
        r.protocol, r.clips, r.metrics.accuracy, r.metrics.f1, r.metrics.war, r.average_mse, r.config_hash
    )?;
    let counts = ConfusionCounts::from_matrix(r.confusion.clone()).map_err(std::io::Error::other)?;
    for (j, row) in counts.matrix().iter().enumerate() {
        let name = r.classes.get(j).map_or("?", String::as_str);
        let cells: Vec<String> = row.iter().map(|v| format!("{v:>4}")).collect();
        writeln!(out, "  {name:<10}{}", cells.join(""))?;
    }
    Ok(())
}

/// Image files of a directory in name order.
fn frame_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| FdpError::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| FdpError::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        if ext.eq_ignore_ascii_case("ppm") || ext.eq_ignore_ascii_case("pgm") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Writes the oracle dynamic image of every frame in `frames_dir` as a PGM.
pub fn dynimg(frames_dir: &Path, out_path: &Path, out: &mut dyn Write) -> Result<Image> {
    let files = frame_files(frames_dir)?;
    if files.len() < 2 {
        return Err(FdpError::Empty(format!(
            "{} holds {} frames, a dynamic image needs at least 2",
            frames_dir.display(),
            files.len()
        )));
    }
    let frames = files.iter().map(pnm::read_image).collect::<Result<Vec<_>>>()?;
    let image = dynimg::dynamic_image(&frames)?;
    pnm::write_image(out_path, &image)?;
    writeln!(out, "dynamic image of {} frames -> {}", frames.len(), out_path.display()).map_err(io_err)?;
    Ok(image)
}

/// Runs the gradient suite; a failing check is a numerical error.
pub fn gradcheck(out: &mut dyn Write) -> Result<()> {
    let outcomes = gradsuite::run_all()?;
    let mut failed = Vec::new();
    for o in &outcomes {
        writeln!(out, "{o}").map_err(io_err)?;
        if !o.passed() {
            failed.push(o.name.clone());
        }
    }
    if failed.is_empty() {
        writeln!(out, "all {} checks passed", outcomes.len()).map_err(io_err)
    } else {
        Err(FdpError::GradientCheck(format!("{} of {}: {}", failed.len(), outcomes.len(), failed.join(", "))))
    }
}

/// Numbers separated by commas or whitespace, or the path of a file holding them.
pub fn parse_values(arg: &str) -> Result<Vec<f64>> {
    let text = if Path::new(arg).is_file() {
        fs::read_to_string(arg).map_err(|e| FdpError::io(arg, e))?
    } else {
        arg.to_string()
    };
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| FdpError::InvalidArgument(format!("not a finite number: {s:?}")))
        })
        .collect()
}

pub fn ranksum(a: &[f64], b: &[f64], sidedness: Sidedness, out: &mut dyn Write) -> Result<eval::RankSumResult> {
    let r = eval::wilcoxon_rank_sum(a, b, sidedness)?;
    let exact = r.p_exact.map_or("n/a".to_string(), |p| format!("{p:.6}"));
    writeln!(out, "W {:.1} z {:.4} p {:.6} exact_p {exact}", r.w, r.z, r.p).map_err(io_err)?;
    Ok(r)
}
