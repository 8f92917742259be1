//! Content-addressed keys for cached intermediate artifacts.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// SHA-256 over a sequence of length-prefixed fields.
#[derive(Clone, Default)]
pub struct ContentKey(Sha256);

impl ContentKey {
    pub fn new() -> Self {
        ContentKey(Sha256::new())
    }

    pub fn bytes(&mut self, b: &[u8]) -> &mut Self {
        self.0.update((b.len() as u64).to_le_bytes());
        self.0.update(b);
        self
    }

    pub fn text(&mut self, s: &str) -> &mut Self {
        self.bytes(s.as_bytes())
    }

    /// Hashes a file's contents, or a directory's files in name order
    /// (relative names included, so renames change the key).
    pub fn path(&mut self, p: &Path) -> Result<&mut Self> {
        let meta = std::fs::metadata(p).map_err(|e| Error::io(p, e))?;
        if meta.is_dir() {
            let mut entries: Vec<_> = std::fs::read_dir(p)
                .map_err(|e| Error::io(p, e))?
                .map(|e| e.map(|e| e.path()))
                .collect::<std::io::Result<_>>()
                .map_err(|e| Error::io(p, e))?;
            entries.sort();
            self.text("dir");
            for entry in entries {
                let name = entry.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                self.text(&name);
                self.path(&entry)?;
            }
        } else {
            let data = std::fs::read(p).map_err(|e| Error::io(p, e))?;
            self.text("file").bytes(&data);
        }
        Ok(self)
    }

    pub fn hex(&self) -> String {
        self.0.clone().finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}
