//! Content-addressed blob storage for HTML and extracted text.
//!
//! Blobs are named by the hex SHA-256 of their bytes, so writing the same
//! content twice is a no-op and references are stable across runs.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub fn content_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone)]
pub struct BlobStore {
    root: PathBuf,
    prefix: String,
}

impl BlobStore {
    /// Opens (creating if necessary) a store under `base/prefix`.
    ///
    /// References returned by [`BlobStore::put`] are relative to `base`, so a
    /// log written next to `base` can carry them verbatim.
    pub fn open(base: impl AsRef<Path>, prefix: &str) -> Result<Self> {
        let root = base.as_ref().join(prefix);
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(Self {
            root: base.as_ref().to_path_buf(),
            prefix: prefix.trim_matches('/').to_string(),
        })
    }

    pub fn put(&self, bytes: &[u8], extension: &str) -> Result<String> {
        let name = format!("{}.{extension}", content_hash(bytes));
        let rel = format!("{}/{name}", self.prefix);
        let path = self.root.join(&rel);
        if !path.exists() {
            let tmp = path.with_extension(format!("{extension}.tmp{}", std::process::id()));
            fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
            fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        }
        Ok(rel)
    }

    pub fn get(&self, rel: &str) -> Result<Vec<u8>> {
        let path = self.root.join(rel);
        fs::read(&path).map_err(|e| Error::io(path, e))
    }

    pub fn base(&self) -> &Path {
        &self.root
    }
}

/// Cache of extracted text keyed by `(html hash, representation)`.
#[derive(Debug, Clone)]
pub struct TextCache {
    store: BlobStore,
}

impl TextCache {
    pub fn open(base: impl AsRef<Path>) -> Result<Self> {
        Ok(Self {
            store: BlobStore::open(base, "text-cache")?,
        })
    }

    fn rel(&self, html_hash: &str, representation: &str) -> String {
        format!("{}/{html_hash}.{representation}.txt", self.store.prefix)
    }

    pub fn get(&self, html_hash: &str, representation: &str) -> Option<String> {
        let bytes = fs::read(self.store.base().join(self.rel(html_hash, representation))).ok()?;
        String::from_utf8(bytes).ok()
    }

    pub fn put(&self, html_hash: &str, representation: &str, text: &str) -> Result<()> {
        let path = self.store.base().join(self.rel(html_hash, representation));
        fs::write(&path, text).map_err(|e| Error::io(path, e))
    }
}
