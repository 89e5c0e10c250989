//! Deterministic synthetic micro-motion clips.
//!
//! Every subject owns a smooth static background texture. Each clip adds a
//! faint Gaussian blob that drifts a few pixels along the direction of its
//! class (`2πj/m`) plus independent per-frame pixel noise.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::image::Image;
use super::manifest::{frame_file_name, Manifest, ManifestRow, VideoClip};
use super::pnm;
use super::sampling::SOURCE_SIZE;
use crate::error::{FdpError, Result};

/// File name of the manifest written by [`write_dataset`].
pub const MANIFEST_FILE: &str = "manifest.csv";

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub num_subjects: usize,
    pub num_classes: usize,
    pub clips_per_cell: usize,
    pub frames_per_clip: usize,
    /// Total blob displacement over the clip, in pixels.
    pub amplitude: f64,
    /// Standard deviation of the per-frame pixel noise.
    pub noise: f64,
    pub seed: u64,
    /// Blob standard deviation in pixels.
    pub blob_sigma: f64,
    /// Peak intensity added by the blob.
    pub blob_contrast: f64,
    /// Half-width of the uniform jitter of the blob's starting point.
    pub start_jitter: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            num_subjects: 6,
            num_classes: 3,
            clips_per_cell: 4,
            frames_per_clip: 24,
            amplitude: 2.5,
            noise: 0.02,
            seed: 0,
            blob_sigma: 5.0,
            blob_contrast: 0.45,
            start_jitter: 2.0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("num_subjects", self.num_subjects),
            ("num_classes", self.num_classes),
            ("clips_per_cell", self.clips_per_cell),
            ("frames_per_clip", self.frames_per_clip),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(FdpError::InvalidArgument(format!("{name} must be at least 1")));
            }
        }
        let reals = [
            ("amplitude", self.amplitude),
            ("noise", self.noise),
            ("blob_contrast", self.blob_contrast),
            ("start_jitter", self.start_jitter),
        ];
        for (name, v) in reals {
            if !v.is_finite() || v < 0.0 {
                return Err(FdpError::InvalidArgument(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !(self.blob_sigma.is_finite() && self.blob_sigma > 0.0) {
            return Err(FdpError::InvalidArgument(format!("blob_sigma must be > 0, got {}", self.blob_sigma)));
        }
        // Micro-motion regime: the blob must stay well inside the frame.
        let reach = self.amplitude + self.start_jitter + 3.0 * self.blob_sigma;
        if reach > SOURCE_SIZE as f64 / 2.0 {
            return Err(FdpError::InvalidArgument(format!(
                "amplitude {} with jitter {} and sigma {} leaves the {SOURCE_SIZE}-pixel frame",
                self.amplitude, self.start_jitter, self.blob_sigma
            )));
        }
        Ok(())
    }

    pub fn num_clips(&self) -> usize {
        self.num_subjects * self.num_classes * self.clips_per_cell
    }

    pub fn class_names(&self) -> Vec<String> {
        (0..self.num_classes)
            .map(|j| format!("dir{:03}", (360 * j) / self.num_classes))
            .collect()
    }
}

pub fn subject_id(s: usize) -> String {
    format!("s{s:02}")
}

pub fn clip_id(s: usize, class: usize, k: usize) -> String {
    format!("s{s:02}_c{class}_{k:02}")
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Sum of a few random low-frequency plane waves per channel, in about `[0.2, 0.8]`.
fn background(spec: &SynthSpec, subject: usize) -> Image {
    let mut rng = rng_for(spec.seed, (1 << 40) + subject as u64);
    let n = SOURCE_SIZE;
    let mut img = Image::filled(3, n, n, 0.0);
    let base: f64 = rng.gen_range(0.4..0.6);
    let tint: [f64; 3] = [rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05)];
    let waves: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            let theta = rng.gen_range(0.0..2.0 * PI);
            let freq = rng.gen_range(1.0..4.0) * 2.0 * PI / n as f64;
            let phase = rng.gen_range(0.0..2.0 * PI);
            let amp = rng.gen_range(0.02..0.05);
            (theta, freq, phase, amp)
        })
        .collect();
    for y in 0..n {
        for x in 0..n {
            let v: f64 = waves
                .iter()
                .map(|&(theta, freq, phase, amp)| {
                    amp * ((x as f64 * theta.cos() + y as f64 * theta.sin()) * freq + phase).sin()
                })
                .sum();
            for (c, t) in tint.iter().enumerate() {
                img.set(c, y, x, (base + t + v) as f32);
            }
        }
    }
    img
}

/// Frames of one clip, quantized to 8 bits exactly as they are stored on disk.
fn render_clip(spec: &SynthSpec, bg: &Image, stream: u64, class: usize) -> Result<Vec<Image>> {
    let mut rng = rng_for(spec.seed, stream);
    let n = SOURCE_SIZE;
    let centre = (n as f64 - 1.0) / 2.0;
    let j = spec.start_jitter;
    let (x0, y0) = if j > 0.0 {
        (centre + rng.gen_range(-j..=j), centre + rng.gen_range(-j..=j))
    } else {
        (centre, centre)
    };
    let angle = 2.0 * PI * class as f64 / spec.num_classes as f64;
    let (dx, dy) = (angle.cos(), angle.sin());
    let noise = Normal::new(0.0, spec.noise.max(f64::MIN_POSITIVE))
        .map_err(|e| FdpError::InvalidArgument(format!("noise level: {e}")))?;
    let len = spec.frames_per_clip;
    let inv2s2 = 1.0 / (2.0 * spec.blob_sigma * spec.blob_sigma);
    let mut frames = Vec::with_capacity(len);
    for k in 0..len {
        let progress = if len > 1 { k as f64 / (len - 1) as f64 } else { 0.0 };
        let cx = x0 + spec.amplitude * progress * dx;
        let cy = y0 + spec.amplitude * progress * dy;
        let mut frame = bg.clone();
        for y in 0..n {
            let ey = (y as f64 - cy).powi(2);
            for x in 0..n {
                let blob = spec.blob_contrast * (-((x as f64 - cx).powi(2) + ey) * inv2s2).exp();
                for c in 0..3 {
                    let eps = if spec.noise > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                    let v = frame.get(c, y, x) as f64 + blob + eps;
                    frame.set(c, y, x, pnm::quantize(v as f32) as f32 / 255.0);
                }
            }
        }
        frames.push(frame);
    }
    Ok(frames)
}

/// Generates every clip in memory, in manifest row order.
pub fn generate(spec: &SynthSpec) -> Result<Vec<VideoClip>> {
    spec.validate()?;
    let mut clips = Vec::with_capacity(spec.num_clips());
    for s in 0..spec.num_subjects {
        let bg = background(spec, s);
        for class in 0..spec.num_classes {
            for k in 0..spec.clips_per_cell {
                let stream = ((s * spec.num_classes + class) * spec.clips_per_cell + k) as u64;
                let frames = render_clip(spec, &bg, stream, class)?;
                clips.push(VideoClip::new(clip_id(s, class, k), subject_id(s), class, frames)?);
            }
        }
    }
    Ok(clips)
}

/// Writes `manifest.csv`, `classes.txt` and `clips/<clip_id>/frame_NNNN.ppm` under `out_dir`.
pub fn write_dataset(spec: &SynthSpec, out_dir: impl AsRef<Path>) -> Result<Manifest> {
    let out_dir = out_dir.as_ref();
    let clips = generate(spec)?;
    let mut rows = Vec::with_capacity(clips.len());
    for clip in &clips {
        let rel = format!("clips/{}", clip.clip_id);
        let dir = out_dir.join(&rel);
        fs::create_dir_all(&dir).map_err(|e| FdpError::io(&dir, e))?;
        for (i, f) in clip.frames.iter().enumerate() {
            pnm::write_image(dir.join(frame_file_name(i)), f)?;
        }
        rows.push(ManifestRow {
            clip_id: clip.clip_id.clone(),
            subject_id: clip.subject_id.clone(),
            label: clip.label,
            frame_dir: rel,
            num_frames: clip.frames.len(),
        });
    }
    let manifest = Manifest::new(rows, spec.class_names(), out_dir.to_path_buf())?;
    manifest.write(out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}
