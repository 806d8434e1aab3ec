//! Artifact files and the run manifest.
//!
//! Every pipeline product is a JSON file inside the workspace; the manifest
//! lists each file with its sha256 so a finished run can be audited or
//! compared bit-for-bit against a rerun.

use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const WORLD_FILE: &str = "world.json";
pub const DRIVES_FILE: &str = "drives.json";
pub const SEGMENTATION_FILE: &str = "segmentation.json";
pub const ANNOTATIONS_FILE: &str = "annotations.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const PREDICTIONS_FILE: &str = "predictions.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const METRICS_TEXT_FILE: &str = "metrics.txt";
pub const MANIFEST_FILE: &str = "manifest.json";

fn file_error(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        detail: e.to_string(),
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| file_error(path, e))?;
    std::fs::write(path, text).map_err(|e| file_error(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| file_error(path, e))?;
    serde_json::from_str(&text).map_err(|e| file_error(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| file_error(path, e))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| file_error(path, e))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for b in digest {
        hex.push_str(&format!("{b:02x}"));
    }
    Ok(hex)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Artifact family: world, drives, segmentation, annotations,
    /// checkpoint, predictions, or metrics.
    pub kind: String,
    /// File name relative to the workspace.
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    /// Hash `file` under `workspace` and record it. The file must already
    /// be written.
    pub fn record(&mut self, workspace: &Path, kind: &str, file: &str) -> Result<()> {
        let sha256 = sha256_file(&workspace.join(file))?;
        self.entries.push(ManifestEntry {
            kind: kind.to_string(),
            file: file.to_string(),
            sha256,
        });
        Ok(())
    }

    pub fn kinds(&self) -> Vec<&str> {
        let mut kinds: Vec<&str> = self.entries.iter().map(|e| e.kind.as_str()).collect();
        kinds.dedup();
        kinds
    }

    pub fn save(&self, workspace: &Path) -> Result<PathBuf> {
        let path = workspace.join(MANIFEST_FILE);
        write_json(&path, self)?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_and_stable_hash() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.json");
        let value = vec![(1u32, "a".to_string()), (2, "b".to_string())];
        write_json(&path, &value).unwrap();
        let back: Vec<(u32, String)> = read_json(&path).unwrap();
        assert_eq!(back, value);

        let h1 = sha256_file(&path).unwrap();
        write_json(&path, &value).unwrap();
        assert_eq!(h1, sha256_file(&path).unwrap());
        assert_eq!(h1.len(), 64);
    }

    #[test]
    fn hashing_known_bytes_matches_the_reference_digest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("abc.bin");
        std::fs::write(&path, b"abc").unwrap();
        // sha256("abc"), a published test vector.
        assert_eq!(
            sha256_file(&path).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn manifest_records_files_and_lists_kinds_once() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.json"), "{}").unwrap();
        std::fs::write(dir.path().join("b.json"), "[]").unwrap();
        let mut m = Manifest::default();
        m.record(dir.path(), "world", "a.json").unwrap();
        m.record(dir.path(), "metrics", "b.json").unwrap();
        m.record(dir.path(), "metrics", "b.json").unwrap();
        assert_eq!(m.kinds(), vec!["world", "metrics"]);

        let saved = m.save(dir.path()).unwrap();
        let back: Manifest = read_json(&saved).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn io_errors_carry_the_path() {
        let err = read_json::<Manifest>(Path::new("/nonexistent/x.json")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/x.json"));
    }
}
