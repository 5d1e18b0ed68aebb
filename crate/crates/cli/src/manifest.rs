//! Self-describing run directories.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::Command;

pub const MANIFEST: &str = "manifest.json";

/// Written last into every run directory. Holds no timestamps or absolute
/// output paths, so a replayed run produces the same manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub bundle_version: u32,
    pub library_version: u32,
    pub command: Command,
    pub seed: u64,
    pub config_sha256: String,
    pub config: String,
    /// SHA-256 of every output file, keyed by path relative to the run dir.
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|e| e.file_name());
    for entry in entries {
        let path = entry.path();
        if path.is_dir() {
            walk(root, &path, out)?;
            continue;
        }
        let rel = path.strip_prefix(root)?.to_string_lossy().replace('\\', "/");
        if rel == MANIFEST {
            continue;
        }
        let bytes = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
        out.insert(rel, sha256_hex(&bytes));
    }
    Ok(())
}

/// Hashes of every file under `dir` except the manifest itself.
pub fn hash_outputs(dir: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out)?;
    Ok(out)
}

impl Manifest {
    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST);
        fs::write(&path, serde_json::to_string_pretty(self)? + "\n").with_context(|| format!("writing {}", path.display()))
    }

    /// Reads `path`, or `path/manifest.json` when given a run directory.
    pub fn read(path: &Path) -> Result<Self> {
        let file = if path.is_dir() { path.join(MANIFEST) } else { path.to_path_buf() };
        let text = fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", file.display()))
    }
}

/// Paths whose hashes differ, or that exist on only one side.
pub fn diff_outputs(expected: &BTreeMap<String, String>, actual: &BTreeMap<String, String>) -> Vec<String> {
    let mut keys: Vec<&String> = expected.keys().chain(actual.keys()).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .filter(|k| expected.get(*k) != actual.get(*k))
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hashes_skip_the_manifest_and_recurse() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("sub")).unwrap();
        fs::write(dir.path().join("a.txt"), "abc").unwrap();
        fs::write(dir.path().join("sub/b.txt"), "").unwrap();
        fs::write(dir.path().join(MANIFEST), "{}").unwrap();
        let h = hash_outputs(dir.path()).unwrap();
        assert_eq!(h.len(), 2);
        assert_eq!(h["a.txt"], "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        assert_eq!(h["sub/b.txt"], "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    }

    #[test]
    fn diff_reports_changed_and_missing_files() {
        let a: BTreeMap<String, String> = [("x".into(), "1".into()), ("y".into(), "2".into())].into();
        let b: BTreeMap<String, String> = [("x".into(), "1".into()), ("z".into(), "3".into())].into();
        assert_eq!(diff_outputs(&a, &b), vec!["y".to_string(), "z".to_string()]);
        assert!(diff_outputs(&a, &a).is_empty());
    }
}
