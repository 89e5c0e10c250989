//! Writes the default synthetic dataset (6 subjects x 3 motion directions x 4 clips).
//!
//! ```text
//! cargo run --example gen_synth -- [out_dir]
//! ```

use fdp::data::synth::write_dataset;
use fdp::data::SynthSpec;

fn main() -> fdp::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "synth".into());
    let spec = SynthSpec::default();
    let manifest = write_dataset(&spec, &out)?;
    println!("{} clips of {} frames in {out}", manifest.len(), spec.frames_per_clip);
    println!("classes: {}", manifest.classes.join(", "));
    println!("subjects: {}", manifest.subjects().join(", "));
    for row in manifest.rows.iter().take(3) {
        println!("  {} subject {} label {} -> {}", row.clip_id, row.subject_id, row.label, row.frame_dir);
    }
    Ok(())
}
