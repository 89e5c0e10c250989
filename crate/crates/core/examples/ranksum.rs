//! Wilcoxon rank-sum test on two small samples of F1 scores.
//!
//! ```text
//! cargo run --example ranksum
//! ```

use fdp::eval::{wilcoxon_rank_sum, Sidedness};

fn main() -> fdp::Result<()> {
    let ours = [0.871, 0.853, 0.802, 0.795, 0.834, 0.861];
    let theirs = [0.781, 0.812, 0.755, 0.790, 0.768, 0.809];
    for side in [Sidedness::Greater, Sidedness::TwoSided] {
        let r = wilcoxon_rank_sum(&ours, &theirs, side)?;
        println!(
            "{side:?}: W = {}  z = {:.4}  p (normal) = {:.4}  p (exact) = {:.4}",
            r.w,
            r.z,
            r.p,
            r.p_exact.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
