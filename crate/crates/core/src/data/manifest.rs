use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::image::Image;
use super::pnm;
use crate::error::{FdpError, Result};

/// Name of the class table written next to a manifest.
pub const CLASS_FILE: &str = "classes.txt";

/// File name of frame `i` inside a clip directory.
pub fn frame_file_name(i: usize) -> String {
    format!("frame_{i:04}.ppm")
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub clip_id: String,
    pub subject_id: String,
    pub label: usize,
    /// Relative paths resolve against the manifest's directory.
    pub frame_dir: String,
    pub num_frames: usize,
}

/// A clip with all of its frames in memory.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoClip {
    pub clip_id: String,
    pub subject_id: String,
    pub label: usize,
    pub frames: Vec<Image>,
}

impl VideoClip {
    pub fn new(clip_id: String, subject_id: String, label: usize, frames: Vec<Image>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| FdpError::Manifest(format!("clip {clip_id} has no frames")))?
            .dims();
        if let Some(i) = frames.iter().position(|f| f.dims() != first) {
            return Err(FdpError::Shape(format!(
                "clip {clip_id}: frame {i} is {:?}, frame 0 is {first:?}",
                frames[i].dims()
            )));
        }
        Ok(VideoClip {
            clip_id,
            subject_id,
            label,
            frames,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
    pub classes: Vec<String>,
    /// Directory that relative frame directories are resolved against.
    pub root: PathBuf,
}

impl Manifest {
    /// Checks id uniqueness and label range; does not touch the disk.
    pub fn new(rows: Vec<ManifestRow>, classes: Vec<String>, root: PathBuf) -> Result<Self> {
        if classes.is_empty() {
            return Err(FdpError::Manifest("empty class table".into()));
        }
        let mut seen = HashSet::new();
        for r in &rows {
            if !seen.insert(r.clip_id.as_str()) {
                return Err(FdpError::Manifest(format!("duplicate clip id {}", r.clip_id)));
            }
            if r.label >= classes.len() {
                return Err(FdpError::Manifest(format!(
                    "clip {} has label {} but only {} classes",
                    r.clip_id,
                    r.label,
                    classes.len()
                )));
            }
            if r.num_frames == 0 {
                return Err(FdpError::Manifest(format!("clip {} has zero frames", r.clip_id)));
            }
        }
        Ok(Manifest { rows, classes, root })
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Distinct subject ids in sorted order.
    pub fn subjects(&self) -> Vec<String> {
        let mut s: Vec<String> = self.rows.iter().map(|r| r.subject_id.clone()).collect();
        s.sort();
        s.dedup();
        s
    }

    pub fn frame_dir(&self, row: &ManifestRow) -> PathBuf {
        let p = Path::new(&row.frame_dir);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    /// Reads the CSV at `path` and the class table beside it, then verifies
    /// every clip's frame count against the files on disk.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let text = fs::read_to_string(path).map_err(|e| FdpError::io(path, e))?;
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let mut rows = Vec::new();
        for rec in reader.deserialize() {
            let row: ManifestRow =
                rec.map_err(|e| FdpError::Manifest(format!("{}: {e}", path.display())))?;
            rows.push(row);
        }
        let class_path = root.join(CLASS_FILE);
        let classes: Vec<String> = fs::read_to_string(&class_path)
            .map_err(|e| FdpError::io(&class_path, e))?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect();
        let manifest = Manifest::new(rows, classes, root)?;
        manifest.verify_frames()?;
        Ok(manifest)
    }

    fn verify_frames(&self) -> Result<()> {
        for r in &self.rows {
            let dir = self.frame_dir(r);
            let entries = fs::read_dir(&dir).map_err(|e| FdpError::io(&dir, e))?;
            let mut count = 0;
            for e in entries {
                let e = e.map_err(|e| FdpError::io(&dir, e))?;
                let name = e.file_name();
                let name = name.to_string_lossy();
                if name.starts_with("frame_") && (name.ends_with(".ppm") || name.ends_with(".pgm")) {
                    count += 1;
                }
            }
            if count != r.num_frames {
                return Err(FdpError::Manifest(format!(
                    "clip {} lists {} frames but {} holds {count}",
                    r.clip_id,
                    r.num_frames,
                    dir.display()
                )));
            }
        }
        Ok(())
    }

    /// Writes the CSV to `path` and the class table beside it.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut writer = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            writer
                .serialize(r)
                .map_err(|e| FdpError::Manifest(format!("serializing {}: {e}", r.clip_id)))?;
        }
        let bytes = writer
            .into_inner()
            .map_err(|e| FdpError::Manifest(format!("flushing manifest: {e}")))?;
        fs::write(path, bytes).map_err(|e| FdpError::io(path, e))?;
        let class_path = path.parent().unwrap_or(Path::new("")).join(CLASS_FILE);
        let mut table = self.classes.join("\n");
        table.push('\n');
        fs::write(&class_path, table).map_err(|e| FdpError::io(&class_path, e))
    }

    pub fn load_clip(&self, row: &ManifestRow) -> Result<VideoClip> {
        let dir = self.frame_dir(row);
        let frames = (0..row.num_frames)
            .map(|i| {
                let ppm = dir.join(frame_file_name(i));
                if ppm.exists() {
                    pnm::read_image(ppm)
                } else {
                    pnm::read_image(dir.join(format!("frame_{i:04}.pgm")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        VideoClip::new(row.clip_id.clone(), row.subject_id.clone(), row.label, frames)
    }

    /// Loads every clip in row order.
    pub fn load_clips(&self) -> Result<Vec<VideoClip>> {
        self.rows.iter().map(|r| self.load_clip(r)).collect()
    }

    /// Rows whose subject is (or is not) in `subjects`.
    pub fn filter_subjects(&self, subjects: &[String], keep: bool) -> Manifest {
        let rows = self
            .rows
            .iter()
            .filter(|r| subjects.contains(&r.subject_id) == keep)
            .cloned()
            .collect();
        Manifest {
            rows,
            classes: self.classes.clone(),
            root: self.root.clone(),
        }
    }
}
