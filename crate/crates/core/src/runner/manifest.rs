//! Run manifest: status plus a SHA-256 of every artifact under the output root.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Succeeded,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Path relative to the output root, `/`-separated.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub status: RunStatus,
    pub error: Option<String>,
    pub seed: u64,
    pub targets_completed: Vec<String>,
    pub artifacts: Vec<Artifact>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl Manifest {
    /// Lists every file under `root` except the manifest itself, sorted by path.
    pub fn collect(
        root: &Path,
        status: RunStatus,
        error: Option<String>,
        seed: u64,
        targets_completed: Vec<String>,
    ) -> Result<Self> {
        let mut artifacts = Vec::new();
        walk(root, root, &mut artifacts)?;
        artifacts.retain(|a| a.path != MANIFEST_FILE);
        artifacts.sort_by(|a, b| a.path.cmp(&b.path));
        Ok(Manifest {
            status,
            error,
            seed,
            targets_completed,
            artifacts,
        })
    }

    pub fn write(&self, root: &Path) -> Result<()> {
        let path = root.join(MANIFEST_FILE);
        let body = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(&path, body).map_err(|e| Error::io(path, e))
    }

    pub fn load(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let body = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&body).map_err(|e| Error::Validation(format!("malformed manifest: {e}")))
    }

    /// Re-hashes every listed artifact.
    pub fn verify(&self, root: &Path) -> Result<()> {
        for a in &self.artifacts {
            let path = root.join(&a.path);
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            if sha256_hex(&bytes) != a.sha256 {
                return Err(Error::Integrity(format!("{} does not match its manifest checksum", a.path)));
            }
        }
        Ok(())
    }
}

fn walk(root: &Path, dir: &Path, out: &mut Vec<Artifact>) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            walk(root, &path, out)?;
        } else {
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            let rel = path.strip_prefix(root).expect("walk stays under root");
            out.push(Artifact {
                path: rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/"),
                bytes: bytes.len() as u64,
                sha256: sha256_hex(&bytes),
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lists_nested_files_and_detects_tampering() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("a/b")).unwrap();
        fs::write(dir.path().join("a/b/x.csv"), "1,2\n").unwrap();
        fs::write(dir.path().join("top.txt"), "hi").unwrap();
        let m = Manifest::collect(dir.path(), RunStatus::Succeeded, None, 1, vec![]).unwrap();
        m.write(dir.path()).unwrap();
        let paths: Vec<&str> = m.artifacts.iter().map(|a| a.path.as_str()).collect();
        assert_eq!(paths, ["a/b/x.csv", "top.txt"]);
        assert_eq!(Manifest::load(dir.path()).unwrap(), m);
        m.verify(dir.path()).unwrap();
        fs::write(dir.path().join("top.txt"), "ho").unwrap();
        assert!(matches!(m.verify(dir.path()), Err(Error::Integrity(_))));
    }

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
