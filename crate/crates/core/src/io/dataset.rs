//! Dataset directories: `features/<name>.cft`, `labels/<name>.txt` and an
//! optional `manifest.json`.

use std::fs;
use std::path::{Path, PathBuf};

use super::features::{read_features, read_labels, write_features, write_labels};
use super::synth::{Manifest, SyntheticDataset};
use crate::error::{ClotError, Result};
use crate::numeric::DenseMatrix;

pub const FEATURE_EXT: &str = "cft";
pub const LABEL_EXT: &str = "txt";
pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq)]
pub struct Video {
    pub name: String,
    pub features: DenseMatrix,
    /// Ground truth when `labels/<name>.txt` exists.
    pub labels: Option<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub videos: Vec<Video>,
    pub manifest: Option<Manifest>,
}

impl Dataset {
    pub fn features(&self) -> Vec<DenseMatrix> {
        self.videos.iter().map(|v| v.features.clone()).collect()
    }

    /// Number of ground-truth classes, `max label + 1`.
    pub fn label_count(&self) -> Option<usize> {
        if let Some(m) = &self.manifest {
            return Some(m.spec.label_count());
        }
        self.videos.iter().filter_map(|v| v.labels.as_ref()).flatten().max().map(|m| m + 1)
    }
}

pub fn feature_path(dir: &Path, name: &str) -> PathBuf {
    dir.join("features").join(format!("{name}.{FEATURE_EXT}"))
}

pub fn label_path(dir: &Path, name: &str) -> PathBuf {
    dir.join("labels").join(format!("{name}.{LABEL_EXT}"))
}

/// Sorted stems of files with extension `ext` in `dir`.
pub fn list_stems(dir: &Path, ext: &str) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) == Some(ext) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                names.push(stem.to_string());
            }
        }
    }
    names.sort();
    Ok(names)
}

pub fn write_dataset(dir: &Path, ds: &SyntheticDataset) -> Result<()> {
    fs::create_dir_all(dir.join("features"))?;
    fs::create_dir_all(dir.join("labels"))?;
    for v in &ds.videos {
        write_features(&feature_path(dir, &v.name), &v.features)?;
        write_labels(&label_path(dir, &v.name), &v.labels)?;
    }
    fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&ds.manifest())?)?;
    Ok(())
}

/// Loads every feature file and any matching labels. A label file whose
/// line count differs from the feature rows is an input error.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let feature_dir = dir.join("features");
    if !feature_dir.is_dir() {
        return Err(ClotError::Input(format!("{} has no features/ directory", dir.display())));
    }
    let names = list_stems(&feature_dir, FEATURE_EXT)?;
    if names.is_empty() {
        return Err(ClotError::Input(format!("no .{FEATURE_EXT} files in {}", feature_dir.display())));
    }
    let mut videos = Vec::with_capacity(names.len());
    for name in names {
        let fpath = feature_path(dir, &name);
        let features = read_features(&fpath).map_err(|e| with_path(e, &fpath))?;
        let lpath = label_path(dir, &name);
        let labels = if lpath.is_file() {
            let l = read_labels(&lpath).map_err(|e| with_path(e, &lpath))?;
            if l.len() != features.rows() {
                return Err(ClotError::Input(format!(
                    "{} has {} lines but {} has {} frames",
                    lpath.display(),
                    l.len(),
                    fpath.display(),
                    features.rows()
                )));
            }
            Some(l)
        } else {
            None
        };
        videos.push(Video { name, features, labels });
    }
    let mpath = dir.join(MANIFEST);
    let manifest = if mpath.is_file() {
        Some(serde_json::from_str(&fs::read_to_string(&mpath)?).map_err(|e| ClotError::Input(format!("{}: {e}", mpath.display())))?)
    } else {
        None
    };
    Ok(Dataset { videos, manifest })
}

/// Prefixes input and format errors with the offending file.
pub fn with_path(e: ClotError, path: &Path) -> ClotError {
    match e {
        ClotError::Input(m) => ClotError::Input(format!("{}: {m}", path.display())),
        ClotError::Format { offset, message } => ClotError::Format { offset, message: format!("{}: {message}", path.display()) },
        ClotError::Io(io) => ClotError::Input(format!("{}: {io}", path.display())),
        other => other,
    }
}
