//! Content-hash provenance for pipeline stages and the work-directory lock.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const RUN_MANIFEST: &str = "run_manifest.json";
pub const LOCK_FILE: &str = ".lock";

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn hash_bytes(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

/// SHA-256 of a file, or of the sorted `(relative name, hash)` list of every
/// file below a directory.
pub fn hash_path(path: &Path) -> Result<String> {
    let meta = std::fs::metadata(path).map_err(|e| Error::io(path, e))?;
    if meta.is_file() {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        return Ok(hash_bytes(&bytes));
    }
    let mut files = Vec::new();
    collect_files(path, path, &mut files)?;
    files.sort();
    let mut h = Sha256::new();
    for rel in files {
        let full = path.join(&rel);
        let bytes = std::fs::read(&full).map_err(|e| Error::io(&full, e))?;
        h.update(rel.to_string_lossy().as_bytes());
        h.update([0]);
        h.update(Sha256::digest(&bytes));
    }
    Ok(hex(&h.finalize()))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let p = entry.path();
        if p.is_dir() {
            collect_files(root, &p, out)?;
        } else {
            out.push(p.strip_prefix(root).expect("below root").to_path_buf());
        }
    }
    Ok(())
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub config_hash: String,
    /// Workdir-relative path to content hash.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

/// Stage name to record. Each stage lists the hashes of what it read and
/// wrote, so a consumer can tell whether its inputs are the ones the
/// producer made from its own current inputs.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub stages: BTreeMap<String, StageRecord>,
}

impl RunManifest {
    pub fn load(workdir: &Path) -> Result<Self> {
        let path = workdir.join(RUN_MANIFEST);
        if !path.exists() {
            return Ok(Self::default());
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(e.line(), e.to_string()))
    }

    pub fn save(&self, workdir: &Path) -> Result<()> {
        let path = workdir.join(RUN_MANIFEST);
        let text = serde_json::to_string_pretty(self).expect("manifest serialises");
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    /// Stage that recorded `rel` as an output.
    pub fn producer(&self, rel: &str) -> Option<(&str, &StageRecord)> {
        self.stages
            .iter()
            .find(|(_, r)| r.outputs.contains_key(rel))
            .map(|(n, r)| (n.as_str(), r))
    }

    /// Checks that every input of `stage` exists, matches what its producer
    /// wrote, and that the producer's own inputs are unchanged. Returns the
    /// current input hashes.
    pub fn check_inputs(&self, workdir: &Path, stage: &str, inputs: &[&str]) -> Result<BTreeMap<String, String>> {
        let mut hashes = BTreeMap::new();
        for &rel in inputs {
            let path = workdir.join(rel);
            if !path.exists() {
                return Err(Error::MissingArtifact {
                    stage: stage.into(),
                    path,
                });
            }
            let h = hash_path(&path)?;
            if let Some((producer, rec)) = self.producer(rel) {
                let stale = || Error::StaleInput {
                    stage: stage.into(),
                    path: path.clone(),
                    producer: producer.into(),
                };
                if rec.outputs[rel] != h {
                    return Err(stale());
                }
                for (up, uh) in &rec.inputs {
                    let p = workdir.join(up);
                    if !p.exists() || hash_path(&p)? != *uh {
                        return Err(stale());
                    }
                }
            }
            hashes.insert(rel.to_string(), h);
        }
        Ok(hashes)
    }

    /// True when `stage` already ran with these inputs and config and its
    /// outputs are intact.
    pub fn is_current(&self, workdir: &Path, stage: &str, config_hash: &str, inputs: &BTreeMap<String, String>) -> bool {
        let Some(rec) = self.stages.get(stage) else {
            return false;
        };
        if rec.config_hash != config_hash || &rec.inputs != inputs || rec.outputs.is_empty() {
            return false;
        }
        rec.outputs
            .iter()
            .all(|(rel, h)| hash_path(&workdir.join(rel)).is_ok_and(|cur| cur == *h))
    }
}

/// Advisory lock held for the lifetime of the value.
#[derive(Debug)]
pub struct WorkdirLock {
    path: PathBuf,
}

impl WorkdirLock {
    pub fn acquire(workdir: &Path) -> Result<Self> {
        std::fs::create_dir_all(workdir).map_err(|e| Error::io(workdir, e))?;
        let path = workdir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                use std::io::Write;
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Locked(path)),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for WorkdirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn directory_hash_tracks_names_and_contents() {
        let d = tempfile::tempdir().unwrap();
        std::fs::write(d.path().join("a"), b"1").unwrap();
        std::fs::create_dir(d.path().join("sub")).unwrap();
        std::fs::write(d.path().join("sub/b"), b"2").unwrap();
        let h0 = hash_path(d.path()).unwrap();
        assert_eq!(h0, hash_path(d.path()).unwrap());
        std::fs::write(d.path().join("sub/b"), b"3").unwrap();
        assert_ne!(h0, hash_path(d.path()).unwrap());
    }

    #[test]
    fn lock_is_exclusive() {
        let d = tempfile::tempdir().unwrap();
        let l = WorkdirLock::acquire(d.path()).unwrap();
        assert!(matches!(WorkdirLock::acquire(d.path()), Err(Error::Locked(_))));
        drop(l);
        WorkdirLock::acquire(d.path()).unwrap();
    }
}
