//! Content-addressed stage cache.
//!
//! Each stage lives in `<root>/<stage>/<hash>/` next to a `stage.json` that
//! records a checksum of every file. A stage is built in a temporary sibling
//! directory and renamed into place once complete.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::scene::io::{read_json, write_json};
use crate::{Error, Result};

pub const CACHE_ENV: &str = "FLOWDISTILL_CACHE_DIR";
pub const DEFAULT_CACHE_DIR: &str = ".flowdistill-cache";
const STAGE_FILE: &str = "stage.json";

/// `$FLOWDISTILL_CACHE_DIR`, or `./.flowdistill-cache`.
pub fn default_cache_dir() -> PathBuf {
    std::env::var_os(CACHE_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_CACHE_DIR))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of a parent stage hash and this stage's own inputs.
pub fn stage_hash<T: Serialize>(stage: &str, parent: Option<&str>, inputs: &T) -> String {
    let mut h = Sha256::new();
    h.update(b"flowdistill-stage\0");
    h.update(env!("CARGO_PKG_VERSION").as_bytes());
    h.update([0]);
    h.update(stage.as_bytes());
    h.update([0]);
    h.update(parent.unwrap_or("").as_bytes());
    h.update([0]);
    h.update(serde_json::to_vec(inputs).expect("config serializes"));
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub hash: String,
    /// Relative path (with `/` separators) to SHA-256.
    pub files: BTreeMap<String, String>,
    pub wall_time_ms: u64,
}

/// Outcome of [`StageCache::get_or_build`].
#[derive(Debug, Clone, PartialEq)]
pub struct StageOutput {
    pub dir: PathBuf,
    pub record: StageRecord,
    pub cache_hit: bool,
}

#[derive(Debug, Clone)]
pub struct StageCache {
    root: PathBuf,
}

fn collect_files(base: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::io(dir, e))?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let path = e.path();
        if path.is_dir() {
            collect_files(base, &path, out)?;
        } else if !(dir == base && e.file_name() == STAGE_FILE) {
            out.push(path);
        }
    }
    Ok(())
}

fn relative(base: &Path, path: &Path) -> String {
    path.strip_prefix(base)
        .expect("file under stage dir")
        .components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

/// Checksums of every file under `dir` except the stage record.
pub fn checksum_dir(dir: &Path) -> Result<BTreeMap<String, String>> {
    let mut files = Vec::new();
    collect_files(dir, dir, &mut files)?;
    files
        .into_iter()
        .map(|p| {
            let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
            Ok((relative(dir, &p), sha256_hex(&bytes)))
        })
        .collect()
}

impl StageCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        StageCache { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn stage_dir(&self, stage: &str, hash: &str) -> PathBuf {
        self.root.join(stage).join(hash)
    }

    /// Verifies a cached stage against its record; `Ok(None)` if absent.
    pub fn lookup(&self, stage: &str, hash: &str) -> Result<Option<StageOutput>> {
        let dir = self.stage_dir(stage, hash);
        let record_path = dir.join(STAGE_FILE);
        if !record_path.exists() {
            return Ok(None);
        }
        let record: StageRecord = read_json(&record_path).map_err(|e| Error::CacheCorrupt {
            path: record_path.clone(),
            reason: e.to_string(),
        })?;
        if record.hash != hash || record.stage != stage {
            return Err(Error::CacheCorrupt {
                path: record_path,
                reason: "stage record does not match its location".into(),
            });
        }
        let actual = checksum_dir(&dir)?;
        if actual != record.files {
            let bad = record
                .files
                .iter()
                .find(|(k, v)| actual.get(*k) != Some(v))
                .map(|(k, _)| k.clone())
                .or_else(|| {
                    actual
                        .keys()
                        .find(|k| !record.files.contains_key(*k))
                        .cloned()
                })
                .unwrap_or_default();
            return Err(Error::CacheCorrupt {
                path: dir.join(&bad),
                reason: "checksum mismatch".into(),
            });
        }
        Ok(Some(StageOutput {
            dir,
            record,
            cache_hit: true,
        }))
    }

    /// Returns the cached stage, or runs `build` on an empty directory and
    /// commits the result.
    pub fn get_or_build<F>(&self, stage: &str, hash: &str, build: F) -> Result<StageOutput>
    where
        F: FnOnce(&Path) -> Result<()>,
    {
        if let Some(hit) = self.lookup(stage, hash)? {
            return Ok(hit);
        }
        let dir = self.stage_dir(stage, hash);
        let parent = dir.parent().expect("stage dir has parent");
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        let tmp = parent.join(format!("{hash}.tmp-{}", std::process::id()));
        if tmp.exists() {
            std::fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
        }
        std::fs::create_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let start = Instant::now();
        if let Err(e) = build(&tmp) {
            let _ = std::fs::remove_dir_all(&tmp);
            return Err(e);
        }
        let record = StageRecord {
            stage: stage.to_string(),
            hash: hash.to_string(),
            files: checksum_dir(&tmp)?,
            wall_time_ms: start.elapsed().as_millis() as u64,
        };
        write_json(&tmp.join(STAGE_FILE), &record)?;
        if dir.exists() {
            // A stale, unrecorded directory from an interrupted run.
            std::fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        std::fs::rename(&tmp, &dir).map_err(|e| Error::io(&dir, e))?;
        Ok(StageOutput {
            dir,
            record,
            cache_hit: false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn build_then_hit_then_detect_corruption() {
        let root = tempfile::tempdir().unwrap();
        let cache = StageCache::new(root.path());
        let mut builds = 0;
        let mut build = |d: &Path| {
            builds += 1;
            std::fs::create_dir_all(d.join("sub")).unwrap();
            std::fs::write(d.join("sub/a.txt"), b"hello").unwrap();
            Ok(())
        };
        let first = cache.get_or_build("demo", "abc", &mut build).unwrap();
        assert!(!first.cache_hit);
        assert_eq!(
            first.record.files.keys().collect::<Vec<_>>(),
            vec!["sub/a.txt"]
        );
        let second = cache.get_or_build("demo", "abc", &mut build).unwrap();
        assert!(second.cache_hit);
        assert_eq!(builds, 1);

        std::fs::write(first.dir.join("sub/a.txt"), b"tampered").unwrap();
        let err = cache.lookup("demo", "abc").unwrap_err();
        assert!(matches!(err, Error::CacheCorrupt { .. }), "{err}");
    }

    #[test]
    fn failed_build_leaves_nothing() {
        let root = tempfile::tempdir().unwrap();
        let cache = StageCache::new(root.path());
        let err = cache.get_or_build("demo", "x", |_| Err(Error::Empty("boom")));
        assert!(err.is_err());
        assert!(cache.lookup("demo", "x").unwrap().is_none());
        assert_eq!(
            std::fs::read_dir(root.path().join("demo")).unwrap().count(),
            0
        );
    }

    #[test]
    fn hashes_chain() {
        let a = stage_hash("s", None, &1);
        assert_ne!(a, stage_hash("s", None, &2));
        assert_ne!(
            stage_hash("t", Some(&a), &1),
            stage_hash("t", Some("other"), &1)
        );
        assert_eq!(a.len(), 64);
    }
}
