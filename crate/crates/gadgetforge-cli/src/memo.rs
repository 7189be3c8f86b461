//! Atomic output writes and content-digest memoization.
//!
//! Each stage hashes everything that determines its outputs — a stage tag,
//! its parameters, and the bytes of every input file — into a digest stored
//! in a `.memo` sidecar next to the primary output. A re-run whose digest
//! matches and whose outputs still exist is skipped. Digests depend only on
//! content, never on timestamps, so checkouts and copies stay memoized.

use std::fmt::Display;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

/// Write via a temp file in the same directory plus rename, so readers never
/// observe a half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        fs::create_dir_all(dir)?;
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "path has no file name"))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

/// Accumulates a stage's identity. Every item is length-framed so distinct
/// input sequences can never collide by concatenation.
pub struct StageDigest {
    hasher: Sha256,
}

impl StageDigest {
    pub fn new(stage: &str) -> Self {
        let mut digest = StageDigest {
            hasher: Sha256::new(),
        };
        digest.item("stage", stage.as_bytes());
        digest
    }

    fn item(&mut self, label: &str, payload: &[u8]) {
        self.hasher.update((label.len() as u64).to_le_bytes());
        self.hasher.update(label.as_bytes());
        self.hasher.update((payload.len() as u64).to_le_bytes());
        self.hasher.update(payload);
    }

    /// Fold in a named parameter.
    pub fn param(&mut self, key: &str, value: impl Display) {
        self.item(&format!("param:{key}"), value.to_string().as_bytes());
    }

    /// Fold in a labeled byte payload.
    pub fn bytes(&mut self, label: &str, payload: &[u8]) {
        self.item(&format!("bytes:{label}"), payload);
    }

    pub fn finish(self) -> String {
        hex::encode(self.hasher.finalize())
    }
}

/// Sidecar path: `out.cgd` → `out.cgd.memo`.
pub fn memo_path(primary_output: &Path) -> PathBuf {
    let mut name = primary_output.as_os_str().to_os_string();
    name.push(".memo");
    PathBuf::from(name)
}

/// A stage is current when its sidecar holds the same digest and every
/// declared output still exists.
pub fn is_current(memo: &Path, digest: &str, outputs: &[&Path]) -> bool {
    let Ok(stored) = fs::read_to_string(memo) else {
        return false;
    };
    stored.trim() == digest && outputs.iter().all(|p| p.exists())
}

pub fn record(memo: &Path, digest: &str) -> io::Result<()> {
    write_atomic(memo, format!("{digest}\n").as_bytes())
}
