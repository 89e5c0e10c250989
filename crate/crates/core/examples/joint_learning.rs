//! Does recognition help reconstruction? Trains the tiny model with and without
//! the recognition loss on five synthetic subjects and compares the average MSE
//! of the predicted dynamic images on the held-out sixth.
//!
//! ```text
//! cargo run --release --example joint_learning -- [epochs] [seeds]
//! ```

use std::time::Instant;

use fdp::config::RunConfig;
use fdp::data::synth::{generate, subject_id, SynthSpec};
use fdp::train::{predict, train, Dataset};

fn main() -> fdp::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().map_or(100, |a| a.parse().expect("epochs"));
    let seeds: u64 = args.next().map_or(3, |a| a.parse().expect("seeds"));

    let spec = SynthSpec::default();
    let data = Dataset::new(generate(&spec)?, spec.num_classes)?;
    let held_out = subject_id(0);
    let (test, train_idx): (Vec<usize>, Vec<usize>) =
        (0..data.len()).partition(|&i| data.clips[i].subject_id == held_out);
    let (train_set, test_set) = (data.subset(&train_idx), data.subset(&test));

    let start = Instant::now();
    let mut sums = [0.0; 3];
    for seed in 0..seeds {
        let mut row = [0.0; 3];
        for (k, lambda_mer) in [1.0, 0.0].into_iter().enumerate() {
            let mut config = RunConfig::tiny();
            config.epochs = epochs;
            config.seed = seed;
            config.lambda_mer = lambda_mer;
            let trained = train(&config, &train_set, |_| {})?;
            let preds = predict(&trained.model, &test_set, config.batch_size)?;
            row[k] = preds.average_mse()?;
            row[2] = preds.baseline_average_mse()?;
        }
        println!("seed {seed}: full {:.5}  without mer {:.5}  constant 0.5 {:.5}", row[0], row[1], row[2]);
        for k in 0..3 {
            sums[k] += row[k] / seeds as f64;
        }
    }
    println!(
        "mean:   full {:.5}  without mer {:.5}  constant 0.5 {:.5}  ({:.0?})",
        sums[0],
        sums[1],
        sums[2],
        start.elapsed()
    );
    Ok(())
}
