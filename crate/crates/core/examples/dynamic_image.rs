//! Rank-pooling coefficients and the oracle dynamic image of one synthetic clip
//! per class, written as PGM files.
//!
//! ```text
//! cargo run --example dynamic_image -- [out_dir]
//! ```

use std::path::PathBuf;

use fdp::data::pnm::write_image;
use fdp::data::synth::generate;
use fdp::data::SynthSpec;
use fdp::dynimg::{dynamic_image, rank_pool_coefficients};

fn main() -> fdp::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "dynimg".into()));
    std::fs::create_dir_all(&out).map_err(|e| fdp::FdpError::io(&out, e))?;

    for t in [2, 3, 4, 8] {
        let alphas = rank_pool_coefficients(t)?.alphas;
        let shown: Vec<String> = alphas.iter().map(|a| format!("{a:+.3}")).collect();
        println!("T={t:<2} alpha = [{}]", shown.join(", "));
    }

    let spec = SynthSpec {
        num_subjects: 1,
        clips_per_cell: 1,
        ..SynthSpec::default()
    };
    let names = spec.class_names();
    for clip in generate(&spec)? {
        let image = dynamic_image(&clip.frames)?;
        let path = out.join(format!("{}.pgm", clip.clip_id));
        write_image(&path, &image)?;
        println!("{} ({}): {}", clip.clip_id, names[clip.label], path.display());
    }
    Ok(())
}
