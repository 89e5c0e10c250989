//! Saves a briefly trained model, loads it back and checks that the reloaded
//! model predicts exactly the same probabilities.
//!
//! ```text
//! cargo run --release --example checkpoint -- [path]
//! ```

use fdp::checkpoint;
use fdp::config::RunConfig;
use fdp::data::synth::generate;
use fdp::data::SynthSpec;
use fdp::train::{predict, train, Dataset};

fn main() -> fdp::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "model.fdp".into());
    let spec = SynthSpec {
        num_subjects: 1,
        clips_per_cell: 2,
        ..SynthSpec::default()
    };
    let data = Dataset::new(generate(&spec)?, spec.num_classes)?;
    let mut config = RunConfig::tiny();
    config.epochs = 3;
    let trained = train(&config, &data, |s| println!("{s}"))?;

    checkpoint::save(&path, &config, &trained.model)?;
    let loaded = checkpoint::load(&path)?;
    let bytes = std::fs::metadata(&path).map_err(|e| fdp::FdpError::io(&path, e))?.len();
    println!("{path}: {bytes} bytes, config hash {}", loaded.config.hash());

    let before = predict(&trained.model, &data, config.batch_size)?;
    let after = predict(&loaded.model, &data, config.batch_size)?;
    println!("identical predictions after reload: {}", before.probs == after.probs);
    Ok(())
}
