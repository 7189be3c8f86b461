//! Symbolic renaming, label assignment, group assembly, and dataset splits.
//!
//! Symbolization rewrites user identifiers to `FUNC_n`/`VAR_n` so that models
//! learn structure rather than naming. Groups select category slices of the
//! cleaned corpus (BE, RME, combinations, the four construct categories); each
//! group then gets an 80:20 stratified train/test split and, optionally,
//! k-fold partitions. Everything here is a pure function of (input, seed).

use std::collections::{BTreeMap, HashMap, HashSet};

use thiserror::Error;

use crate::corpus::{GadgetRecord, VulnCategory};
use crate::extract::is_keyword;
use crate::rng;

#[derive(Debug, Error)]
pub enum PrepError {
    #[error("record {0} carries no label")]
    MissingLabel(u64),
    #[error("unknown vulnerability category `{0}`")]
    UnknownCategory(String),
    #[error("group `{0}` matched no records")]
    EmptyGroup(String),
    #[error("need at least {need} records, have {have}")]
    TooFewRecords { have: usize, need: usize },
    #[error("duplicate record id {0} in group")]
    DuplicateId(u64),
    #[error("malformed group spec line {line}: {reason}")]
    MalformedGroupSpec { line: usize, reason: String },
    #[error("malformed id file line {line}: {reason}")]
    MalformedIdFile { line: usize, reason: String },
}

// ---------------------------------------------------------------------------
// Labeling

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelMode {
    Binary,
    Multiclass,
}

/// Class-id assignment. Index 0 is always the non-vulnerable class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelScheme {
    pub mode: LabelMode,
    pub class_names: Vec<String>,
}

impl LabelScheme {
    pub fn binary() -> Self {
        LabelScheme {
            mode: LabelMode::Binary,
            class_names: vec!["clean".into(), "vulnerable".into()],
        }
    }

    /// Multi-class scheme over the given categories, in order: the first
    /// category gets label 1, the second label 2, and so on.
    pub fn multiclass(categories: &[VulnCategory]) -> Self {
        let mut class_names = vec!["clean".to_string()];
        class_names.extend(categories.iter().map(|c| c.name().to_string()));
        LabelScheme {
            mode: LabelMode::Multiclass,
            class_names,
        }
    }

    pub fn num_classes(&self) -> u32 {
        self.class_names.len() as u32
    }

    /// Indices of the vulnerable classes (everything but 0).
    pub fn vulnerable_classes(&self) -> impl Iterator<Item = u32> + '_ {
        1..self.num_classes()
    }

    fn class_index(&self, name: &str) -> Option<u32> {
        self.class_names
            .iter()
            .position(|c| c == name)
            .map(|i| i as u32)
    }
}

/// Map raw binary labels onto the scheme: clean stays 0; a vulnerable record
/// becomes 1 (binary) or its category's class id (multi-class).
pub fn assign_labels(
    records: &[GadgetRecord],
    scheme: &LabelScheme,
) -> Result<Vec<GadgetRecord>, PrepError> {
    let mut out = Vec::with_capacity(records.len());
    for rec in records {
        let raw = rec.label.ok_or(PrepError::MissingLabel(rec.id))?;
        let mut rec = rec.clone();
        rec.label = Some(if raw == 0 {
            0
        } else {
            match scheme.mode {
                LabelMode::Binary => 1,
                LabelMode::Multiclass => {
                    let cat = rec
                        .category
                        .ok_or_else(|| PrepError::UnknownCategory("<untagged>".into()))?;
                    scheme
                        .class_index(cat.name())
                        .ok_or_else(|| PrepError::UnknownCategory(cat.name().into()))?
                }
            }
        });
        out.push(rec);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Symbolization

/// Library identifiers that keep their spelling even though they are not
/// keywords or API-list members.
const STD_IDENTS: &[&str] = &[
    "NULL",
    "EOF",
    "FILE",
    "DIR",
    "stdin",
    "stdout",
    "stderr",
    "errno",
    "size_t",
    "ssize_t",
    "ptrdiff_t",
    "intptr_t",
    "uintptr_t",
    "int8_t",
    "int16_t",
    "int32_t",
    "int64_t",
    "uint8_t",
    "uint16_t",
    "uint32_t",
    "uint64_t",
];

/// `FUNC_<n>` or `VAR_<n>` → n.
fn reserved_number(ident: &str, prefix: &str) -> Option<u32> {
    ident
        .strip_prefix(prefix)
        .filter(|rest| !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()))
        .and_then(|rest| rest.parse().ok())
}

/// Identifier spans within one line, skipping string/char literal contents.
fn ident_spans(line: &str) -> Vec<(usize, usize)> {
    let bytes = line.as_bytes();
    let mut spans = Vec::new();
    let mut i = 0usize;
    let mut quote: Option<u8> = None;
    while i < bytes.len() {
        let b = bytes[i];
        if let Some(q) = quote {
            if b == b'\\' {
                i += 2;
                continue;
            }
            if b == q {
                quote = None;
            }
            i += 1;
            continue;
        }
        match b {
            b'"' | b'\'' => {
                quote = Some(b);
                i += 1;
            }
            b'A'..=b'Z' | b'a'..=b'z' | b'_' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                spans.push((start, i));
            }
            b'0'..=b'9' => {
                // consume the whole numeric literal so 0xFF's F is not an ident
                while i < bytes.len()
                    && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_' || bytes[i] == b'.')
                {
                    i += 1;
                }
            }
            _ => i += 1,
        }
    }
    spans
}

fn is_called(line: &str, end: usize) -> bool {
    line.as_bytes()[end..]
        .iter()
        .find(|b| !b.is_ascii_whitespace())
        .is_some_and(|&b| b == b'(')
}

/// Rewrite user-defined function and variable names to `FUNC_n` / `VAR_n`.
///
/// Numbering is per gadget in first-occurrence order; keywords, API-list
/// functions, standard identifiers, literals, and already-symbolic names are
/// untouched. Pre-existing `FUNC_n`/`VAR_n` keep their numbers and fresh ones
/// continue above the highest seen, so the operation is idempotent.
pub fn symbolize(record: &GadgetRecord, api: &std::collections::BTreeSet<String>) -> GadgetRecord {
    let mut max_func = 0u32;
    let mut max_var = 0u32;
    for line in &record.body {
        for (s, e) in ident_spans(line) {
            let ident = &line[s..e];
            if let Some(n) = reserved_number(ident, "FUNC_") {
                max_func = max_func.max(n);
            }
            if let Some(n) = reserved_number(ident, "VAR_") {
                max_var = max_var.max(n);
            }
        }
    }

    let mut mapping: HashMap<String, String> = HashMap::new();
    let mut next_func = max_func + 1;
    let mut next_var = max_var + 1;
    let mut body = Vec::with_capacity(record.body.len());
    for line in &record.body {
        let mut rewritten = String::with_capacity(line.len());
        let mut cursor = 0usize;
        for (s, e) in ident_spans(line) {
            rewritten.push_str(&line[cursor..s]);
            cursor = e;
            let ident = &line[s..e];
            let keep = is_keyword(ident)
                || api.contains(ident)
                || STD_IDENTS.contains(&ident)
                || reserved_number(ident, "FUNC_").is_some()
                || reserved_number(ident, "VAR_").is_some();
            if keep {
                rewritten.push_str(ident);
                continue;
            }
            let symbol = mapping.entry(ident.to_string()).or_insert_with(|| {
                if is_called(line, e) {
                    let sym = format!("FUNC_{next_func}");
                    next_func += 1;
                    sym
                } else {
                    let sym = format!("VAR_{next_var}");
                    next_var += 1;
                    sym
                }
            });
            rewritten.push_str(symbol);
        }
        rewritten.push_str(&line[cursor..]);
        body.push(rewritten);
    }

    let mut out = record.clone();
    out.body = body;
    out
}

// ---------------------------------------------------------------------------
// Groups

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupSpec {
    pub name: String,
    pub categories: Vec<VulnCategory>,
}

#[derive(Debug, Clone)]
pub struct DatasetGroup {
    pub name: String,
    pub scheme: LabelScheme,
    pub records: Vec<GadgetRecord>,
}

/// The standard eight groups: 1–3 over BE/RME, 4–8 over the construct
/// categories.
pub fn default_group_specs() -> Vec<GroupSpec> {
    use VulnCategory::*;
    let table: [(&str, &[VulnCategory]); 8] = [
        ("Group 1", &[Be]),
        ("Group 2", &[Rme]),
        ("Group 3", &[Be, Rme]),
        ("Group 4", &[Afc]),
        ("Group 5", &[Ae]),
        ("Group 6", &[Au]),
        ("Group 7", &[Pu]),
        ("Group 8", &[Afc, Ae, Au, Pu]),
    ];
    table
        .into_iter()
        .map(|(name, cats)| GroupSpec {
            name: name.to_string(),
            categories: cats.to_vec(),
        })
        .collect()
}

/// Parse a group-spec file: one `name = CAT[,CAT...]` line per group.
pub fn parse_group_specs(text: &str) -> Result<Vec<GroupSpec>, PrepError> {
    let mut specs = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (name, value) = line.split_once('=').ok_or(PrepError::MalformedGroupSpec {
            line: idx + 1,
            reason: "expected `name = categories`".into(),
        })?;
        let mut categories = Vec::new();
        for part in value.split(',') {
            let part = part.trim();
            let cat = VulnCategory::parse(part).ok_or_else(|| PrepError::MalformedGroupSpec {
                line: idx + 1,
                reason: format!("unknown category `{part}`"),
            })?;
            categories.push(cat);
        }
        specs.push(GroupSpec {
            name: name.trim().to_string(),
            categories,
        });
    }
    Ok(specs)
}

/// Assemble labeled groups by category filter. A record lands in every group
/// whose filter covers its category.
pub fn build_groups(
    records: &[GadgetRecord],
    specs: &[GroupSpec],
    mode: LabelMode,
) -> Result<Vec<DatasetGroup>, PrepError> {
    let mut groups = Vec::with_capacity(specs.len());
    for spec in specs {
        let subset: Vec<GadgetRecord> = records
            .iter()
            .filter(|r| r.category.is_some_and(|c| spec.categories.contains(&c)))
            .cloned()
            .collect();
        if subset.is_empty() {
            return Err(PrepError::EmptyGroup(spec.name.clone()));
        }
        let scheme = match mode {
            LabelMode::Binary => LabelScheme::binary(),
            LabelMode::Multiclass => LabelScheme::multiclass(&spec.categories),
        };
        let records = assign_labels(&subset, &scheme)?;
        groups.push(DatasetGroup {
            name: spec.name.clone(),
            scheme,
            records,
        });
    }
    Ok(groups)
}

// ---------------------------------------------------------------------------
// Splits

const SPLIT_SALT: u64 = 0x5350_4c49;
const FOLD_SALT: u64 = 0x464f_4c44;

/// Train/test membership plus optional k-fold partitions, all by record id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<u64>,
    pub test: Vec<u64>,
    pub folds: Vec<Vec<u64>>,
    pub seed: u64,
}

fn check_unique_ids(records: &[GadgetRecord]) -> Result<(), PrepError> {
    let mut seen = HashSet::with_capacity(records.len());
    for rec in records {
        if !seen.insert(rec.id) {
            return Err(PrepError::DuplicateId(rec.id));
        }
    }
    Ok(())
}

/// Stratified train/test split.
///
/// The train size is `round(ratio · N)` exactly; per-class train quotas come
/// from largest-remainder apportionment, so every class is within one record
/// of its exact proportion. Within a class the assignment is a seeded
/// shuffle, making the whole split reproducible.
pub fn split_train_test(group: &DatasetGroup, ratio: f64, seed: u64) -> Result<Split, PrepError> {
    check_unique_ids(&group.records)?;
    let n = group.records.len();
    let train_target = ((ratio * n as f64).round() as usize).min(n);

    let mut by_class: BTreeMap<u32, Vec<u64>> = BTreeMap::new();
    for rec in &group.records {
        by_class
            .entry(rec.label.ok_or(PrepError::MissingLabel(rec.id))?)
            .or_default()
            .push(rec.id);
    }

    // Largest-remainder apportionment of the train quota across classes.
    let mut quotas: Vec<(u32, usize, f64)> = by_class
        .iter()
        .map(|(&label, ids)| {
            let exact = ratio * ids.len() as f64;
            (label, exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let mut assigned: usize = quotas.iter().map(|&(_, base, _)| base).sum();
    quotas.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap().then(a.0.cmp(&b.0)));
    let mut extra: HashMap<u32, usize> = HashMap::new();
    let mut qi = 0;
    while assigned < train_target && qi < quotas.len() {
        let (label, base, _) = quotas[qi];
        if base + extra.get(&label).copied().unwrap_or(0) < by_class[&label].len() {
            *extra.entry(label).or_insert(0) += 1;
            assigned += 1;
        }
        qi += 1;
        if qi == quotas.len() && assigned < train_target {
            qi = 0; // another round if some classes were saturated
        }
    }

    let mut split = Split {
        seed,
        ..Split::default()
    };
    for (label, ids) in &by_class {
        let mut ids = ids.clone();
        let mut r = rng::seeded(seed, SPLIT_SALT ^ u64::from(*label));
        rng::shuffle(&mut ids, &mut r);
        let take = quotas
            .iter()
            .find(|&&(l, ..)| l == *label)
            .map(|&(_, base, _)| base + extra.get(label).copied().unwrap_or(0))
            .unwrap_or(0);
        split.train.extend(&ids[..take.min(ids.len())]);
        split.test.extend(&ids[take.min(ids.len())..]);
        if take >= ids.len() {
            log::warn!(
                "class {label} in {} has no test records ({} total)",
                group.name,
                ids.len()
            );
        }
    }
    split.train.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}

/// Partition the group into k near-equal folds by seeded shuffle. Fold sizes
/// differ by at most one, larger folds first.
pub fn make_folds(group: &DatasetGroup, k: usize, seed: u64) -> Result<Split, PrepError> {
    check_unique_ids(&group.records)?;
    let n = group.records.len();
    if n < k || k == 0 {
        return Err(PrepError::TooFewRecords { have: n, need: k });
    }
    let mut ids: Vec<u64> = group.records.iter().map(|r| r.id).collect();
    let mut r = rng::seeded(seed, FOLD_SALT);
    rng::shuffle(&mut ids, &mut r);

    let base = n / k;
    let remainder = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut cursor = 0usize;
    for i in 0..k {
        let size = base + usize::from(i < remainder);
        let mut fold: Vec<u64> = ids[cursor..cursor + size].to_vec();
        fold.sort_unstable();
        folds.push(fold);
        cursor += size;
    }
    Ok(Split {
        folds,
        seed,
        ..Split::default()
    })
}

impl Split {
    /// Test ids for fold `i`.
    pub fn fold_test(&self, i: usize) -> &[u64] {
        &self.folds[i]
    }

    /// Train ids for fold `i`: every other fold.
    pub fn fold_train(&self, i: usize) -> Vec<u64> {
        let mut ids: Vec<u64> = self
            .folds
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .flat_map(|(_, f)| f.iter().copied())
            .collect();
        ids.sort_unstable();
        ids
    }
}

/// One decimal id per line.
pub fn write_id_file(ids: &[u64]) -> String {
    let mut out = String::new();
    for id in ids {
        out.push_str(&id.to_string());
        out.push('\n');
    }
    out
}

pub fn read_id_file(text: &str) -> Result<Vec<u64>, PrepError> {
    let mut ids = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        ids.push(line.parse().map_err(|_| PrepError::MalformedIdFile {
            line: idx + 1,
            reason: format!("`{line}` is not an id"),
        })?);
    }
    Ok(ids)
}
