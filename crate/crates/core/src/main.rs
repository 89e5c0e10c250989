use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use fdp::commands::{self, EvalArgs, Protocol, TrainArgs};
use fdp::config::RunConfig;
use fdp::data::SynthSpec;
use fdp::eval::{Aggregation, F1Average, Sidedness};
use fdp::train::worker_threads;
use fdp::{FdpError, Result};

/// Micro-expression recognition with rank-scored temporal dynamics.
#[derive(Parser)]
#[command(name = "fdp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic micro-motion dataset (PPM frames plus manifest).
    GenSynth(GenSynth),
    /// Train on a manifest and write a checkpoint.
    Train(Train),
    /// Evaluate under a protocol and print (optionally save) a report.
    Eval(Eval),
    /// Write the oracle dynamic image of a directory of frames as a PGM.
    Dynimg(Dynimg),
    /// Run the finite-difference gradient suite.
    Gradcheck,
    /// Statistical tests.
    #[command(subcommand)]
    Stats(Stats),
}

#[derive(Args)]
struct GenSynth {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 6)]
    subjects: usize,
    #[arg(long, default_value_t = 3)]
    classes: usize,
    #[arg(long, default_value_t = 4)]
    clips_per_cell: usize,
    #[arg(long, default_value_t = 24)]
    frames: usize,
    /// Total blob displacement in pixels.
    #[arg(long, default_value_t = 2.5)]
    amplitude: f64,
    #[arg(long, default_value_t = 0.02)]
    noise: f64,
}

#[derive(Args)]
struct RunOptions {
    /// `key = value` config file; omitted keys keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from the small CPU preset instead of the defaults (ignored with --config).
    #[arg(long)]
    tiny: bool,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Keep wall-clock fields out of the log so reruns are byte-identical.
    #[arg(long)]
    deterministic: bool,
    /// Extra `key=value` config assignments.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl RunOptions {
    fn resolve(&self) -> Result<RunConfig> {
        let mut config = match (&self.config, self.tiny) {
            (Some(path), _) => RunConfig::load(path)?,
            (None, true) => RunConfig::tiny(),
            (None, false) => RunConfig::default(),
        };
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| FdpError::InvalidArgument(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            config.set(k.trim(), v.trim())?;
        }
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if self.deterministic {
            config.deterministic = true;
        }
        config.validate()?;
        Ok(config)
    }

    fn given(&self) -> bool {
        self.config.is_some() || self.tiny || !self.set.is_empty()
    }
}

#[derive(Args)]
struct Train {
    #[command(flatten)]
    run: RunOptions,
    #[arg(long)]
    manifest: PathBuf,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Also write the epoch log here.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProtocolArg {
    Loso,
    Holdout,
    Cross,
}

#[derive(Clone, Copy, ValueEnum)]
enum F1Arg {
    Macro,
    Weighted,
}

#[derive(Clone, Copy, ValueEnum)]
enum AggregationArg {
    Pooled,
    Mean,
}

#[derive(Args)]
struct Eval {
    #[command(flatten)]
    run: RunOptions,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum)]
    protocol: ProtocolArg,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Comma-separated subjects scored by the holdout protocol.
    #[arg(long, value_delimiter = ',')]
    test_subjects: Vec<String>,
    #[arg(long, value_enum, default_value = "macro")]
    f1: F1Arg,
    /// How LOSO folds are combined.
    #[arg(long, value_enum, default_value = "pooled")]
    aggregation: AggregationArg,
    /// JSON report path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Dynimg {
    /// Directory of PPM/PGM frames, taken in file-name order.
    frames: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Stats {
    /// Wilcoxon rank-sum test of sample A against sample B.
    Ranksum(Ranksum),
}

#[derive(Clone, Copy, ValueEnum)]
enum SideArg {
    TwoSided,
    Less,
    Greater,
}

#[derive(Args)]
struct Ranksum {
    /// Values separated by commas or spaces, or a file holding them.
    #[arg(long, allow_hyphen_values = true)]
    a: String,
    #[arg(long, allow_hyphen_values = true)]
    b: String,
    #[arg(long, value_enum, default_value = "two-sided")]
    alternative: SideArg,
}

fn run(cli: Cli) -> Result<()> {
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::GenSynth(a) => {
            let spec = SynthSpec {
                num_subjects: a.subjects,
                num_classes: a.classes,
                clips_per_cell: a.clips_per_cell,
                frames_per_clip: a.frames,
                amplitude: a.amplitude,
                noise: a.noise,
                seed: a.seed,
                ..SynthSpec::default()
            };
            commands::gen_synth(&spec, &a.out, &mut out)
        }
        Command::Train(a) => commands::train(
            TrainArgs {
                config: a.run.resolve()?,
                manifest: &a.manifest,
                checkpoint: &a.out,
                log: a.log.as_deref(),
            },
            &mut out,
        ),
        Command::Eval(a) => {
            let protocol = match a.protocol {
                ProtocolArg::Loso => Protocol::Loso,
                ProtocolArg::Holdout => Protocol::Holdout,
                ProtocolArg::Cross => Protocol::Cross,
            };
            let config = if a.run.given() || a.checkpoint.is_none() {
                Some(a.run.resolve()?)
            } else {
                None
            };
            commands::eval(
                EvalArgs {
                    protocol,
                    manifest: &a.manifest,
                    checkpoint: a.checkpoint.as_deref(),
                    config,
                    test_subjects: a.test_subjects,
                    f1: match a.f1 {
                        F1Arg::Macro => F1Average::Macro,
                        F1Arg::Weighted => F1Average::Weighted,
                    },
                    aggregation: match a.aggregation {
                        AggregationArg::Pooled => Aggregation::Pooled,
                        AggregationArg::Mean => Aggregation::Mean,
                    },
                    threads: worker_threads(),
                    report: a.out.as_deref(),
                },
                &mut out,
            )
            .map(|_| ())
        }
        Command::Dynimg(a) => commands::dynimg(&a.frames, &a.out, &mut out).map(|_| ()),
        Command::Gradcheck => commands::gradcheck(&mut out),
        Command::Stats(Stats::Ranksum(a)) => {
            let side = match a.alternative {
                SideArg::TwoSided => Sidedness::TwoSided,
                SideArg::Less => Sidedness::Less,
                SideArg::Greater => Sidedness::Greater,
            };
            let (x, y) = (commands::parse_values(&a.a)?, commands::parse_values(&a.b)?);
            commands::ranksum(&x, &y, side, &mut out).map(|_| ())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => {
            let _ = io::stdout().flush();
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
