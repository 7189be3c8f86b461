//! Versioned binary checkpoints: named parameter tensors plus the config
//! key/value pairs needed to rebuild the model around them.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes  "GFORGE01" (format name + version)
//! config count u32      then per entry: u32 key len, key bytes,
//!                                        u32 value len, value bytes
//! tensor count u32      then per tensor: u32 name len, name bytes,
//!                                        u32 rows, u32 cols,
//!                                        rows·cols f64 values
//! ```
//!
//! Values must be finite; a checkpoint holding NaN or infinity is rejected
//! at read time rather than poisoning a later training run.

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use super::tensor::Tensor;

const MAGIC: &[u8; 8] = b"GFORGE01";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o failed: {0}")]
    Io(#[from] io::Error),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

/// A model snapshot: rebuild config plus every named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: Vec<(String, String)>,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        push_u32(&mut out, self.config.len() as u32);
        for (k, v) in &self.config {
            push_str(&mut out, k);
            push_str(&mut out, v);
        }
        push_u32(&mut out, self.tensors.len() as u32);
        for (name, t) in &self.tensors {
            push_str(&mut out, name);
            push_u32(&mut out, t.rows() as u32);
            push_u32(&mut out, t.cols() as u32);
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(MAGIC.len())?;
        if magic != MAGIC {
            return Err(CheckpointError::Malformed(
                "unrecognized magic prefix".into(),
            ));
        }
        let nconf = r.u32()? as usize;
        let mut config = Vec::with_capacity(nconf);
        for _ in 0..nconf {
            let k = r.string()?;
            let v = r.string()?;
            config.push((k, v));
        }
        let ntens = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(ntens);
        for _ in 0..ntens {
            let name = r.string()?;
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let count = rows.checked_mul(cols).ok_or_else(|| {
                CheckpointError::Malformed(format!("tensor {name} dimensions overflow"))
            })?;
            let mut data = Vec::with_capacity(count);
            for _ in 0..count {
                let v = r.f64()?;
                if !v.is_finite() {
                    return Err(CheckpointError::Malformed(format!(
                        "tensor {name} holds a non-finite value"
                    )));
                }
                data.push(v);
            }
            tensors.push((name, Tensor::new(rows, cols, data)));
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::Malformed(format!(
                "{} trailing bytes after the last tensor",
                bytes.len() - r.pos
            )));
        }
        Ok(Checkpoint { config, tensors })
    }

    /// Look up a config value by key.
    pub fn config_value(&self, key: &str) -> Option<&str> {
        self.config
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

/// Write a checkpoint atomically (temp file + rename).
pub fn write_checkpoint(path: &Path, ck: &Checkpoint) -> Result<(), CheckpointError> {
    let tmp = path.with_extension("ckpt.tmp");
    fs::write(&tmp, ck.to_bytes())?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    Checkpoint::from_bytes(&fs::read(path)?)
}

fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_str(out: &mut Vec<u8>, s: &str) {
    push_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.bytes.len() {
            return Err(CheckpointError::Malformed("truncated checkpoint".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        let b = self.take(8)?;
        let mut buf = [0u8; 8];
        buf.copy_from_slice(b);
        Ok(f64::from_le_bytes(buf))
    }

    fn string(&mut self) -> Result<String, CheckpointError> {
        let len = self.u32()? as usize;
        let b = self.take(len)?;
        String::from_utf8(b.to_vec())
            .map_err(|_| CheckpointError::Malformed("non-UTF-8 string field".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            config: vec![
                ("family".into(), "bilstm".into()),
                ("classes".into(), "2".into()),
            ],
            tensors: vec![
                (
                    "embed".into(),
                    Tensor::from_rows(&[vec![1.5, -2.5], vec![0.0, 3.25]]),
                ),
                ("head.0.b".into(), Tensor::row_vec(&[0.125])),
            ],
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = sample();
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(ck, back);
    }

    #[test]
    fn serialization_is_byte_stable() {
        let ck = sample();
        assert_eq!(ck.to_bytes(), ck.to_bytes());
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(ck.to_bytes(), back.to_bytes());
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let mut bytes = sample().to_bytes();
        bytes[0] = b'X';
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(CheckpointError::Malformed(_))
        ));
    }

    #[test]
    fn truncation_is_rejected() {
        let bytes = sample().to_bytes();
        for cut in [3, 11, bytes.len() - 5] {
            assert!(matches!(
                Checkpoint::from_bytes(&bytes[..cut]),
                Err(CheckpointError::Malformed(_))
            ));
        }
    }

    #[test]
    fn trailing_garbage_is_rejected() {
        let mut bytes = sample().to_bytes();
        bytes.push(0);
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(CheckpointError::Malformed(_))
        ));
    }

    #[test]
    fn non_finite_values_are_rejected() {
        let mut ck = sample();
        ck.tensors[0].1.data_mut()[1] = f64::NAN;
        assert!(matches!(
            Checkpoint::from_bytes(&ck.to_bytes()),
            Err(CheckpointError::Malformed(_))
        ));
    }

    #[test]
    fn file_round_trip_via_atomic_write() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let ck = sample();
        write_checkpoint(&path, &ck).unwrap();
        assert_eq!(read_checkpoint(&path).unwrap(), ck);
        // No stray temp file left behind.
        let entries: Vec<_> = std::fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        assert_eq!(entries.len(), 1);
    }
}
