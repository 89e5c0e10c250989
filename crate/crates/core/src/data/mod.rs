//! Clip loading, frame sampling, augmentation and the synthetic generator.

mod image;
mod manifest;
pub mod pnm;
pub mod sampling;
pub mod synth;

pub use image::Image;
pub use manifest::{frame_file_name, Manifest, ManifestRow, VideoClip, CLASS_FILE};
pub use sampling::{max_offset, preprocess_eval, preprocess_train, sample_clip, Augmentation};
pub use synth::{SynthSpec, MANIFEST_FILE};
