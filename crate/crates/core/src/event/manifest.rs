//! Clip manifests: a CSV file with a `path,label,subject_id,config_id`
//! header and one clip per row. Relative paths resolve against the
//! manifest's own directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::EventError;
use crate::fsutil::write_atomic;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: usize,
    pub subject_id: String,
    pub config_id: String,
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>, EventError> {
    let base = path.parent().unwrap_or(Path::new("."));
    let mut rdr = csv::Reader::from_path(path).map_err(|e| EventError::Manifest(format!("{}: {e}", path.display())))?;
    let mut entries = Vec::new();
    for row in rdr.deserialize::<ManifestEntry>() {
        let mut entry = row.map_err(|e| EventError::Manifest(format!("{}: {e}", path.display())))?;
        if entry.path.is_relative() {
            entry.path = base.join(&entry.path);
        }
        entries.push(entry);
    }
    Ok(entries)
}

/// Writes entries verbatim; callers pass paths relative to the manifest
/// directory when the dataset should stay relocatable.
pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<(), EventError> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    for e in entries {
        wtr.serialize(e).map_err(|e| EventError::Manifest(e.to_string()))?;
    }
    let bytes = wtr.into_inner().map_err(|e| EventError::Manifest(e.to_string()))?;
    write_atomic(path, &bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trip_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let entries = vec![
            ManifestEntry {
                path: PathBuf::from("clips/a.evs"),
                label: 3,
                subject_id: "s1".into(),
                config_id: "dark".into(),
            },
            ManifestEntry {
                path: PathBuf::from("/abs/b.evs"),
                label: 0,
                subject_id: "s2".into(),
                config_id: "light".into(),
            },
        ];
        let path = dir.path().join("train.csv");
        write_manifest(&path, &entries).unwrap();
        let back = read_manifest(&path).unwrap();
        assert_eq!(back[0].path, dir.path().join("clips/a.evs"));
        assert_eq!(back[1].path, PathBuf::from("/abs/b.evs"));
        assert_eq!(back[0].label, 3);
        assert_eq!(back[1].config_id, "light");
    }

    #[test]
    fn manifest_bad_label() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        std::fs::write(&path, "path,label,subject_id,config_id\na.evs,notanumber,s,c\n").unwrap();
        assert!(matches!(read_manifest(&path), Err(EventError::Manifest(_))));
    }
}
