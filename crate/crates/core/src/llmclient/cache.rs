//! Content-addressed JSON blob store.
//!
//! Layout: `<root>/<first two hex chars>/<digest>.json`. Writes go to a
//! unique temporary file and are renamed into place, so concurrent writers
//! of the same digest race harmlessly (last rename wins, contents equal).

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, Clone)]
pub struct ContentCache {
    root: PathBuf,
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

impl ContentCache {
    pub fn open(root: impl Into<PathBuf>) -> io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path_for(&self, digest: &str) -> PathBuf {
        let shard = digest.get(..2).unwrap_or("__");
        self.root.join(shard).join(format!("{digest}.json"))
    }

    /// Returns `None` on a miss. A blob that exists but no longer parses as
    /// `T` is also treated as a miss.
    pub fn get<T: DeserializeOwned>(&self, digest: &str) -> io::Result<Option<T>> {
        match fs::read(self.path_for(digest)) {
            Ok(bytes) => Ok(serde_json::from_slice(&bytes).ok()),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }

    pub fn put<T: Serialize>(&self, digest: &str, value: &T) -> io::Result<()> {
        let path = self.path_for(digest);
        let dir = path.parent().expect("cache path has a parent");
        fs::create_dir_all(dir)?;
        let tmp = dir.join(format!(
            ".{digest}.{}.{}.tmp",
            std::process::id(),
            TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        let bytes = serde_json::to_vec(value).map_err(io::Error::other)?;
        fs::write(&tmp, bytes)?;
        fs::rename(&tmp, &path)
    }

    pub fn contains(&self, digest: &str) -> bool {
        self.path_for(digest).is_file()
    }
}
