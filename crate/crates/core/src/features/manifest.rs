use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::format::{read_feature_file, FeatureRecord, IGNORE};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    /// Relative to the manifest's directory unless absolute.
    pub path: PathBuf,
    pub split: Split,
}

/// Dataset index: `{name, classes, feature_dim, patch_grid, records}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub classes: usize,
    pub feature_dim: usize,
    pub patch_grid: [usize; 2],
    pub records: Vec<ManifestRecord>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: Self = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, record: &ManifestRecord) -> PathBuf {
        if record.path.is_absolute() {
            record.path.clone()
        } else {
            self.base_dir.join(&record.path)
        }
    }

    /// Resolved file paths of one split, in manifest order.
    pub fn paths(&self, split: Split) -> Vec<PathBuf> {
        self.records
            .iter()
            .filter(|r| r.split == split)
            .map(|r| self.resolve(r))
            .collect()
    }

    /// Loads every record of a split, in manifest order.
    pub fn load_split(&self, split: Split) -> Result<Vec<FeatureRecord>> {
        self.paths(split).iter().map(|p| read_feature_file(p)).collect()
    }
}

/// One consistency problem found by [`validate_manifest`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationFailure {
    pub path: PathBuf,
    pub problem: String,
}

impl std::fmt::Display for ValidationFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.path.display(), self.problem)
    }
}

/// Checks that every referenced file exists, parses, and agrees with the
/// declared feature dimension, patch grid and class count. An empty report
/// means the dataset is valid.
pub fn validate_manifest(manifest: &DatasetManifest) -> Vec<ValidationFailure> {
    let mut report = Vec::new();
    let [gh, gw] = manifest.patch_grid;
    for rec in &manifest.records {
        let path = manifest.resolve(rec);
        let mut fail = |problem: String| {
            report.push(ValidationFailure {
                path: path.clone(),
                problem,
            })
        };
        if !path.exists() {
            fail("file does not exist".into());
            continue;
        }
        let record = match read_feature_file(&path) {
            Ok(r) => r,
            Err(e) => {
                fail(e.to_string());
                continue;
            }
        };
        if record.feature_dim() != manifest.feature_dim {
            fail(format!(
                "feature dimension {} != manifest {}",
                record.feature_dim(),
                manifest.feature_dim
            ));
        }
        if (record.h, record.w) != (gh, gw) {
            fail(format!(
                "patch grid {}x{} != manifest {gh}x{gw}",
                record.h, record.w
            ));
        }
        if let Some(labels) = &record.labels {
            if let Some(bad) = labels
                .values
                .iter()
                .find(|&&v| v != IGNORE && v as usize >= manifest.classes)
            {
                fail(format!(
                    "label {bad} outside [0, {}) and not IGNORE",
                    manifest.classes
                ));
            }
        }
    }
    report
}

/// Loads a manifest and fails with a validation error if it is inconsistent.
pub fn load_validated(path: &Path) -> Result<DatasetManifest> {
    let m = DatasetManifest::load(path)?;
    let report = validate_manifest(&m);
    if let Some(first) = report.first() {
        return Err(Error::InvalidArgument(format!(
            "manifest {} has {} problem(s); first: {first}",
            path.display(),
            report.len()
        )));
    }
    Ok(m)
}
