use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CompletionRequest, CompletionResponse};

/// Content-addressed response store laid out as
/// `<dir>/<first 2 hex chars>/<digest>.json`.
#[derive(Clone, Debug)]
pub struct ResponseCache {
    dir: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    key: String,
    request: CompletionRequest,
    response: CompletionResponse,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct CacheStats {
    pub entries: u64,
    pub bytes: u64,
}

impl ResponseCache {
    pub fn open(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(ResponseCache { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn entry_path(&self, key: &str) -> PathBuf {
        let shard = key.get(..2).unwrap_or("xx");
        self.dir.join(shard).join(format!("{key}.json"))
    }

    /// Returns the stored response marked `cached`. Unreadable or mismatched
    /// entries count as misses.
    pub fn get(&self, key: &str, req: &CompletionRequest) -> Option<CompletionResponse> {
        let path = self.entry_path(key);
        let bytes = match std::fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return None,
            Err(e) => {
                log::warn!("cache entry {} unreadable: {e}", path.display());
                return None;
            }
        };
        let entry: Entry = match serde_json::from_slice(&bytes) {
            Ok(e) => e,
            Err(e) => {
                log::warn!("cache entry {} is corrupt, treating as miss: {e}", path.display());
                return None;
            }
        };
        if entry.key != key || &entry.request != req {
            log::warn!("cache entry {} does not match its request, treating as miss", path.display());
            return None;
        }
        let mut resp = entry.response;
        resp.cached = true;
        Some(resp)
    }

    /// Writes through a temp file in the shard directory, then renames.
    pub fn put(&self, key: &str, req: &CompletionRequest, resp: &CompletionResponse) -> std::io::Result<()> {
        let path = self.entry_path(key);
        let shard = path.parent().expect("entry path has a shard dir");
        std::fs::create_dir_all(shard)?;
        let mut stored = resp.clone();
        stored.cached = false;
        let entry = Entry {
            key: key.to_string(),
            request: req.clone(),
            response: stored,
        };
        let mut tmp = tempfile::NamedTempFile::new_in(shard)?;
        serde_json::to_writer_pretty(&mut tmp, &entry)?;
        tmp.write_all(b"\n")?;
        tmp.as_file().sync_all()?;
        tmp.persist(&path).map_err(|e| e.error)?;
        Ok(())
    }

    pub fn stats(&self) -> std::io::Result<CacheStats> {
        stats(&self.dir)
    }

    /// Swaps the directory out with a rename before deleting it, so readers
    /// see either the full old cache or an empty one.
    pub fn clear(&self) -> std::io::Result<()> {
        clear(&self.dir)
    }
}

pub(crate) fn stats(dir: &Path) -> std::io::Result<CacheStats> {
    let mut out = CacheStats::default();
    for shard in std::fs::read_dir(dir)? {
        let shard = shard?;
        if !shard.file_type()?.is_dir() {
            continue;
        }
        for file in std::fs::read_dir(shard.path())? {
            let file = file?;
            let path = file.path();
            if path.extension().and_then(|e| e.to_str()) == Some("json") {
                out.entries += 1;
                out.bytes += file.metadata()?.len();
            }
        }
    }
    Ok(out)
}

pub(crate) fn clear(dir: &Path) -> std::io::Result<()> {
    if !dir.is_dir() {
        return Err(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("cache directory {} does not exist", dir.display()),
        ));
    }
    let parent = dir.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let graveyard = tempfile::Builder::new().prefix(".cache-trash-").tempdir_in(parent)?;
    let moved = graveyard.path().join("old");
    std::fs::rename(dir, &moved)?;
    std::fs::create_dir_all(dir)?;
    drop(graveyard);
    Ok(())
}
