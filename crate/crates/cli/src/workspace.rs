//! Artifact directory: atomic writes and a manifest of content hashes.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// Relative path (forward slashes) to hex sha256.
    pub artifacts: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Writes through a sibling temporary file, then renames.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(|e| CliError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| CliError::io(&tmp, e))?;
    f.sync_all().map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

/// A fresh staging directory next to `dest`, to be moved into place with
/// [`commit_dir`].
pub fn staging_dir(dest: &Path) -> Result<PathBuf, CliError> {
    let mut tmp = dest.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(|e| CliError::io(&tmp, e))?;
    }
    fs::create_dir_all(&tmp).map_err(|e| CliError::io(&tmp, e))?;
    Ok(tmp)
}

pub fn commit_dir(staging: &Path, dest: &Path) -> Result<(), CliError> {
    if dest.exists() {
        fs::remove_dir_all(dest).map_err(|e| CliError::io(dest, e))?;
    }
    fs::rename(staging, dest).map_err(|e| CliError::io(dest, e))
}

fn files_under(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), CliError> {
    for entry in fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
        let p = entry.map_err(|e| CliError::io(dir, e))?.path();
        if p.is_dir() {
            files_under(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

pub struct Workspace {
    root: PathBuf,
    manifest: Manifest,
}

impl Workspace {
    pub fn open(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        let mp = root.join(MANIFEST);
        let manifest = if mp.exists() {
            let text = fs::read_to_string(&mp).map_err(|e| CliError::io(&mp, e))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Failed(format!("corrupt manifest {}: {e}", mp.display())))?
        } else {
            Manifest::default()
        };
        Ok(Workspace { root: root.to_path_buf(), manifest })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    fn rel(&self, path: &Path) -> String {
        let r = path.strip_prefix(&self.root).unwrap_or(path);
        r.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/")
    }

    pub fn write_bytes(&mut self, rel: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let p = self.path(rel);
        atomic_write(&p, bytes)?;
        self.manifest.artifacts.insert(rel.to_string(), sha256_hex(bytes));
        Ok(p)
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<PathBuf, CliError> {
        let mut text = serde_json::to_vec_pretty(value).map_err(|e| CliError::Failed(e.to_string()))?;
        text.push(b'\n');
        self.write_bytes(rel, &text)
    }

    /// Replaces every manifest entry under `rel_dir` with the current files.
    pub fn record_dir(&mut self, rel_dir: &str) -> Result<(), CliError> {
        let prefix = format!("{rel_dir}/");
        self.manifest.artifacts.retain(|k, _| !k.starts_with(&prefix));
        let mut files = Vec::new();
        files_under(&self.path(rel_dir), &mut files)?;
        for f in files {
            let h = sha256_file(&f)?;
            let r = self.rel(&f);
            self.manifest.artifacts.insert(r, h);
        }
        Ok(())
    }

    /// Path of an existing artifact whose content matches the manifest.
    pub fn require(&self, rel: &str) -> Result<PathBuf, CliError> {
        let p = self.path(rel);
        if !p.is_file() {
            return Err(CliError::Missing(p));
        }
        if let Some(expected) = self.manifest.artifacts.get(rel) {
            let found = sha256_file(&p)?;
            if &found != expected {
                return Err(CliError::Checksum { path: p, expected: expected.clone(), found });
            }
        }
        Ok(p)
    }

    pub fn require_dir(&self, rel: &str) -> Result<PathBuf, CliError> {
        let p = self.path(rel);
        if !p.is_dir() {
            return Err(CliError::Missing(p));
        }
        let prefix = format!("{rel}/");
        for k in self.manifest.artifacts.keys().filter(|k| k.starts_with(&prefix)) {
            self.require(k)?;
        }
        Ok(p)
    }

    pub fn read_json<T: DeserializeOwned>(&self, rel: &str) -> Result<T, CliError> {
        let p = self.require(rel)?;
        let text = fs::read_to_string(&p).map_err(|e| CliError::io(&p, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Failed(format!("malformed {}: {e}", p.display())))
    }

    pub fn save_manifest(&self) -> Result<(), CliError> {
        let mut text = serde_json::to_vec_pretty(&self.manifest).map_err(|e| CliError::Failed(e.to_string()))?;
        text.push(b'\n');
        atomic_write(&self.path(MANIFEST), &text)
    }
}
