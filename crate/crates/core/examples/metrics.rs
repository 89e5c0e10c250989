//! Recognition metrics from a confusion matrix, and how pooling LOSO folds
//! differs from averaging them when a subject has few clips.
//!
//! ```text
//! cargo run --example metrics
//! ```

use fdp::eval::{confusion, Metrics, F1Average};

fn main() -> fdp::Result<()> {
    let labels = [0, 0, 0, 0, 1, 1, 1, 1, 1, 1];
    let preds = [0, 0, 0, 1, 0, 0, 1, 1, 1, 1];
    let c = confusion(&preds, &labels, 2)?;
    println!("confusion {:?}", c.matrix());
    for avg in [F1Average::Macro, F1Average::Weighted] {
        let m = Metrics::from_counts(&c, avg)?;
        println!("{avg:?}: acc {:.4} uar {:.4} f1 {:.4}", m.accuracy, m.uar.unwrap_or(f64::NAN), m.f1);
    }

    // Two folds: a large subject scored well and a one-clip subject missed.
    let a = confusion(&[0, 1, 1, 0, 1, 0, 1, 0], &[0, 1, 1, 0, 1, 0, 1, 1], 2)?;
    let b = confusion(&[0], &[1], 2)?;
    let mut pooled = a.clone();
    pooled.merge(&b)?;
    let per_fold = [Metrics::from_counts(&a, F1Average::Macro)?, Metrics::from_counts(&b, F1Average::Macro)?];
    println!("pooled accuracy {:.3}", Metrics::from_counts(&pooled, F1Average::Macro)?.accuracy);
    println!("mean of folds   {:.3}", Metrics::mean(&per_fold)?.accuracy);
    Ok(())
}
