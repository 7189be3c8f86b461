//! On-disk gadget corpus format, corpus manifests, and source-tree ingestion.
//!
//! A corpus file is a sequence of blocks:
//!
//! ```text
//! <id> <path> <function> <line>     header, >= 4 whitespace-separated tokens
//! <body line 1>
//! ...
//! <body line k>
//! <label>                           decimal class id, or "-" when unlabeled
//! ------------------------------    delimiter, >= 30 consecutive '-'
//! ```
//!
//! Parsing and writing round-trip byte-for-byte (modulo CRLF normalization on
//! parse), which keeps corpus digests reproducible across machines.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

/// Minimum run of '-' characters that terminates a record block.
pub const DELIMITER_MIN: usize = 30;
const DELIMITER_LINE: &str = "---------------------------------";

/// Where a gadget came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Origin {
    Nvd,
    Sard,
    #[default]
    Extracted,
    Synthetic,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Origin::Nvd => "NVD",
            Origin::Sard => "SARD",
            Origin::Extracted => "extracted",
            Origin::Synthetic => "synthetic",
        };
        f.write_str(s)
    }
}

/// Vulnerability category a record was drawn from.
///
/// `Be`/`Rme` are CWE-scoped (buffer errors, resource-management errors);
/// the other four classify a gadget by the construct at its core (API call,
/// arithmetic, array, pointer). The category travels with the record in
/// memory only; the corpus file format does not carry it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum VulnCategory {
    /// Buffer Error (CWE-119).
    Be,
    /// Resource Management Error (CWE-399).
    Rme,
    /// API Function Call.
    Afc,
    /// Arithmetic Expression.
    Ae,
    /// Array Usage.
    Au,
    /// Pointer Usage.
    Pu,
}

impl VulnCategory {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_uppercase().as_str() {
            "BE" => Some(VulnCategory::Be),
            "RME" => Some(VulnCategory::Rme),
            "AFC" => Some(VulnCategory::Afc),
            "AE" => Some(VulnCategory::Ae),
            "AU" => Some(VulnCategory::Au),
            "PU" => Some(VulnCategory::Pu),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            VulnCategory::Be => "BE",
            VulnCategory::Rme => "RME",
            VulnCategory::Afc => "AFC",
            VulnCategory::Ae => "AE",
            VulnCategory::Au => "AU",
            VulnCategory::Pu => "PU",
        }
    }
}

impl fmt::Display for VulnCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One code gadget: a header line, an ordered body, and an optional label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GadgetRecord {
    /// Record id; always equals the first header token.
    pub id: u64,
    /// Raw header line, verbatim: `<id> <path> <function> <line>` plus any
    /// extra tokens a released corpus mirror may carry.
    pub header: String,
    /// Gadget body lines, non-empty.
    pub body: Vec<String>,
    /// Class label under the active scheme, if assigned.
    pub label: Option<u32>,
    pub origin: Origin,
    /// Source category, set at load time (not stored in the file).
    pub category: Option<VulnCategory>,
}

impl GadgetRecord {
    pub fn new(id: u64, header: impl Into<String>, body: Vec<String>) -> Self {
        GadgetRecord {
            id,
            header: header.into(),
            body,
            label: None,
            origin: Origin::default(),
            category: None,
        }
    }
}

/// Pipeline stage a corpus file belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Raw,
    Cleaned,
    Symbolized,
    Split,
}

impl Stage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Raw => "raw",
            Stage::Cleaned => "cleaned",
            Stage::Symbolized => "symbolized",
            Stage::Split => "split",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "raw" => Some(Stage::Raw),
            "cleaned" => Some(Stage::Cleaned),
            "symbolized" => Some(Stage::Symbolized),
            "split" => Some(Stage::Split),
            _ => None,
        }
    }
}

/// Summary of a corpus file: per-label counts and a content digest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusManifest {
    pub name: String,
    pub stage: Stage,
    /// Lowercase hex SHA-256 of the serialized corpus bytes.
    pub digest: String,
    /// Count per label; unlabeled records are keyed under `None`.
    pub counts: BTreeMap<Option<u32>, u64>,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("malformed record in block {block}: {reason}")]
    MalformedRecord { block: usize, reason: String },
    #[error("io failure on {path}: {source}")]
    IoFailure {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    SourceFailure {
        path: PathBuf,
        source: crate::extract::ExtractError,
    },
    #[error("malformed manifest line {line}: {reason}")]
    MalformedManifest { line: usize, reason: String },
}

/// Options controlling how a corpus file is interpreted.
#[derive(Debug, Clone, Copy, Default)]
pub struct ParseOptions {
    /// Origin assigned to every parsed record (the format has no origin field).
    pub origin: Origin,
    /// Category assigned to every parsed record, if the file is a category corpus.
    pub category: Option<VulnCategory>,
    /// When set, labels must be `< classes`.
    pub classes: Option<u32>,
}

fn malformed(block: usize, reason: impl Into<String>) -> CorpusError {
    CorpusError::MalformedRecord {
        block,
        reason: reason.into(),
    }
}

fn is_delimiter(line: &str) -> bool {
    line.len() >= DELIMITER_MIN && line.bytes().all(|b| b == b'-')
}

/// Parse a corpus byte stream into records, in file order.
///
/// Any malformed block fails the whole parse; partial results are never
/// returned. Line terminators are normalized to LF.
pub fn parse_gadget_corpus(
    bytes: &[u8],
    opts: &ParseOptions,
) -> Result<Vec<GadgetRecord>, CorpusError> {
    let text = String::from_utf8_lossy(bytes);
    let mut records = Vec::new();
    let mut block_lines: Vec<&str> = Vec::new();
    let mut block_index = 0usize;

    let finish_block = |lines: &[&str], block: usize| -> Result<GadgetRecord, CorpusError> {
        // lines = header, body.., label (delimiter already consumed)
        if lines.len() < 3 {
            return Err(malformed(
                block,
                "block needs header, body, and label lines",
            ));
        }
        let header = lines[0];
        let tokens: Vec<&str> = header.split_whitespace().collect();
        if tokens.len() < 4 {
            return Err(malformed(
                block,
                format!("header has {} tokens, need at least 4", tokens.len()),
            ));
        }
        let id: u64 = tokens[0].parse().map_err(|_| {
            malformed(
                block,
                format!("header id `{}` is not an integer", tokens[0]),
            )
        })?;
        let label_line = lines[lines.len() - 1].trim();
        let label = if label_line == "-" {
            None
        } else {
            let value: u32 = label_line.parse().map_err(|_| {
                malformed(
                    block,
                    format!("label line `{label_line}` is not a decimal label"),
                )
            })?;
            if let Some(classes) = opts.classes {
                if value >= classes {
                    return Err(malformed(
                        block,
                        format!("label {value} out of domain (scheme has {classes} classes)"),
                    ));
                }
            }
            Some(value)
        };
        let body: Vec<String> = lines[1..lines.len() - 1]
            .iter()
            .map(|s| (*s).to_string())
            .collect();
        if body.is_empty() {
            return Err(malformed(block, "empty body"));
        }
        Ok(GadgetRecord {
            id,
            header: header.to_string(),
            body,
            label,
            origin: opts.origin,
            category: opts.category,
        })
    };

    for raw_line in text.split('\n') {
        let line = raw_line.strip_suffix('\r').unwrap_or(raw_line);
        if is_delimiter(line) {
            records.push(finish_block(&block_lines, block_index)?);
            block_lines.clear();
            block_index += 1;
        } else {
            block_lines.push(line);
        }
    }
    // Trailing content after the last delimiter must be blank.
    if block_lines.iter().any(|l| !l.trim().is_empty()) {
        return Err(malformed(block_index, "trailing content without delimiter"));
    }
    Ok(records)
}

/// Serialize records to the corpus format. Inverse of [`parse_gadget_corpus`].
pub fn write_gadget_corpus(records: &[GadgetRecord]) -> Vec<u8> {
    let mut out = String::new();
    for rec in records {
        out.push_str(&rec.header);
        out.push('\n');
        for line in &rec.body {
            out.push_str(line);
            out.push('\n');
        }
        match rec.label {
            Some(l) => out.push_str(&l.to_string()),
            None => out.push('-'),
        }
        out.push('\n');
        out.push_str(DELIMITER_LINE);
        out.push('\n');
    }
    out.into_bytes()
}

/// Lowercase hex SHA-256 of the serialized corpus.
pub fn corpus_digest(records: &[GadgetRecord]) -> String {
    let bytes = write_gadget_corpus(records);
    hex::encode(Sha256::digest(&bytes))
}

/// Build a manifest for a record set.
pub fn build_manifest(name: &str, stage: Stage, records: &[GadgetRecord]) -> CorpusManifest {
    let mut counts: BTreeMap<Option<u32>, u64> = BTreeMap::new();
    for rec in records {
        *counts.entry(rec.label).or_insert(0) += 1;
    }
    CorpusManifest {
        name: name.to_string(),
        stage,
        digest: corpus_digest(records),
        counts,
    }
}

impl CorpusManifest {
    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    /// Render as line-oriented `key = value` text.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("name = {}\n", self.name));
        out.push_str(&format!("stage = {}\n", self.stage.as_str()));
        out.push_str(&format!("digest = {}\n", self.digest));
        for (label, count) in &self.counts {
            match label {
                Some(l) => out.push_str(&format!("count.{l} = {count}\n")),
                None => out.push_str(&format!("count.none = {count}\n")),
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, CorpusError> {
        let mut name = None;
        let mut stage = None;
        let mut digest = None;
        let mut counts = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(CorpusError::MalformedManifest {
                line: idx + 1,
                reason: "expected `key = value`".into(),
            })?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "name" => name = Some(value.to_string()),
                "stage" => {
                    stage =
                        Some(
                            Stage::parse(value).ok_or_else(|| CorpusError::MalformedManifest {
                                line: idx + 1,
                                reason: format!("unknown stage `{value}`"),
                            })?,
                        )
                }
                "digest" => digest = Some(value.to_string()),
                _ => {
                    if let Some(label) = key.strip_prefix("count.") {
                        let label = if label == "none" {
                            None
                        } else {
                            Some(label.parse().map_err(|_| CorpusError::MalformedManifest {
                                line: idx + 1,
                                reason: format!("bad label key `{key}`"),
                            })?)
                        };
                        let count = value.parse().map_err(|_| CorpusError::MalformedManifest {
                            line: idx + 1,
                            reason: format!("bad count `{value}`"),
                        })?;
                        counts.insert(label, count);
                    } else {
                        return Err(CorpusError::MalformedManifest {
                            line: idx + 1,
                            reason: format!("unknown key `{key}`"),
                        });
                    }
                }
            }
        }
        let missing = |what: &str| CorpusError::MalformedManifest {
            line: 0,
            reason: format!("missing key `{what}`"),
        };
        Ok(CorpusManifest {
            name: name.ok_or_else(|| missing("name"))?,
            stage: stage.ok_or_else(|| missing("stage"))?,
            digest: digest.ok_or_else(|| missing("digest"))?,
            counts,
        })
    }
}

const SOURCE_EXTENSIONS: [&str; 5] = ["c", "cc", "cpp", "h", "hpp"];

/// Load every C/C++ file under `root`, normalized, in lexicographic path order.
///
/// With `permissive` set, unreadable or unnormalizable files are logged and
/// skipped instead of failing the whole ingest.
pub fn ingest_source_tree(
    root: &Path,
    permissive: bool,
) -> Result<Vec<(PathBuf, String)>, CorpusError> {
    let mut paths: Vec<PathBuf> = Vec::new();
    for entry in walkdir::WalkDir::new(root).follow_links(false) {
        let entry = entry.map_err(|e| CorpusError::IoFailure {
            path: e
                .path()
                .map(Path::to_path_buf)
                .unwrap_or_else(|| root.to_path_buf()),
            source: e.into(),
        })?;
        if !entry.file_type().is_file() {
            continue;
        }
        let ext = entry
            .path()
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase());
        if ext
            .as_deref()
            .is_some_and(|e| SOURCE_EXTENSIONS.contains(&e))
        {
            paths.push(entry.path().to_path_buf());
        }
    }
    paths.sort();

    let mut units = Vec::with_capacity(paths.len());
    for path in paths {
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) => {
                if permissive {
                    log::warn!("skipping unreadable {}: {e}", path.display());
                    continue;
                }
                return Err(CorpusError::IoFailure { path, source: e });
            }
        };
        match crate::extract::normalize_source(&text) {
            Ok(normalized) => units.push((path, normalized)),
            Err(e) => {
                if permissive {
                    log::warn!("skipping {}: {e}", path.display());
                    continue;
                }
                return Err(CorpusError::SourceFailure { path, source: e });
            }
        }
    }
    Ok(units)
}
