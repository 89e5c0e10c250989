//! Trains the tiny configuration on 12 clips of one subject until it memorizes
//! them, then reports recognition accuracy, rank-score monotonicity and the
//! dynamic-image error on the same clips.
//!
//! ```text
//! cargo run --release --example overfit -- [epochs]
//! ```

use fdp::config::RunConfig;
use fdp::data::synth::generate;
use fdp::data::SynthSpec;
use fdp::eval::war;
use fdp::train::{predict, train, Dataset};

fn main() -> fdp::Result<()> {
    let epochs = std::env::args().nth(1).map_or(200, |a| a.parse().expect("epochs"));
    let spec = SynthSpec {
        num_subjects: 1,
        ..SynthSpec::default()
    };
    let data = Dataset::new(generate(&spec)?, spec.num_classes)?;
    let mut config = RunConfig::tiny();
    config.augment = false;
    config.epochs = epochs;
    let trained = train(&config, &data, |s| {
        if s.epoch == 1 || s.epoch % 20 == 0 {
            println!("{s}");
        }
    })?;
    let preds = predict(&trained.model, &data, config.batch_size)?;
    println!(
        "accuracy {:.3}  increasing {:.0}%  average mse {:.5} (constant 0.5: {:.5})",
        war(&preds.confusion(data.num_classes)?)?,
        100.0 * preds.fraction_increasing(),
        preds.average_mse()?,
        preds.baseline_average_mse()?
    );
    Ok(())
}
