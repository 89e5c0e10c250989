//! Leave-one-subject-out evaluation of the tiny configuration on synthetic clips.
//!
//! ```text
//! cargo run --release --example loso -- [amplitude] [key=value ...]
//! ```
//!
//! Extra `key=value` arguments override fields of the tiny run configuration.

use std::time::Instant;

use fdp::config::RunConfig;
use fdp::data::synth::{generate, SynthSpec};
use fdp::eval::{loso_split, Aggregation, F1Average};
use fdp::train::{cross_validate, worker_threads, Dataset};

fn main() -> fdp::Result<()> {
    let mut args = std::env::args().skip(1);
    let mut config = RunConfig::tiny();
    let mut spec = SynthSpec::default();
    if let Some(a) = args.next() {
        spec.amplitude = a.parse().expect("amplitude");
    }
    for kv in args {
        let (k, v) = kv.split_once('=').expect("key=value");
        config.set(k, v)?;
    }
    let data = Dataset::new(generate(&spec)?, spec.num_classes)?;
    let plan = loso_split(data.clips.iter().map(|c| c.subject_id.as_str()))?;
    let start = Instant::now();
    let cv = cross_validate(&config, &data, &plan, worker_threads(), Aggregation::Pooled, F1Average::Macro)?;
    for f in &cv.folds {
        println!("{:<4} acc {:.3}  mse {:.5}", f.subject, f.metrics.accuracy, f.average_mse);
    }
    let m = &cv.metrics;
    println!(
        "pooled acc {:.3}  uar {:.3}  f1 {:.3}  average mse {:.5}  ({:.0?})",
        m.accuracy,
        m.uar.unwrap_or(f64::NAN),
        m.f1,
        cv.average_mse,
        start.elapsed()
    );
    Ok(())
}
