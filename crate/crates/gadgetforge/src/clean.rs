//! Duplicate and label-conflict removal over a gadget corpus.
//!
//! Two records are "the same gadget" when their canonicalized bodies hash to
//! the same SHA-256 digest; headers and ids never enter the hash. A digest
//! that occurs with two or more distinct labels is a *confliction* and every
//! record carrying it is dropped. Among the records that survive, repeated
//! digests are *redundancy*: only the first occurrence in corpus order is
//! kept. One pass produces both the cleaned corpus and a [`CleanReport`]
//! accounting for every removal.

use std::collections::{BTreeMap, HashMap, HashSet};

use sha2::{Digest, Sha256};

use crate::corpus::GadgetRecord;

/// Canonicalization switches. The defaults match how the counting in
/// [`clean_corpus`] is validated; turning a switch off widens what counts as
/// a distinct gadget.
#[derive(Debug, Clone, Copy)]
pub struct CanonicalizeOptions {
    /// Strip trailing whitespace from every body line.
    pub strip_trailing: bool,
    /// Drop blank lines at the start and end of the body.
    pub trim_blank_edges: bool,
}

impl Default for CanonicalizeOptions {
    fn default() -> Self {
        CanonicalizeOptions {
            strip_trailing: true,
            trim_blank_edges: true,
        }
    }
}

/// Canonical body text: optional per-line rstrip, LF-joined, blank edge lines
/// dropped. The header/id is deliberately excluded so re-ids and path moves
/// do not change identity.
pub fn canonicalize_body(body: &[String], opts: &CanonicalizeOptions) -> String {
    let lines: Vec<&str> = body
        .iter()
        .map(|l| {
            if opts.strip_trailing {
                l.trim_end()
            } else {
                l.as_str()
            }
        })
        .collect();
    let mut start = 0;
    let mut end = lines.len();
    if opts.trim_blank_edges {
        while start < end && lines[start].trim().is_empty() {
            start += 1;
        }
        while end > start && lines[end - 1].trim().is_empty() {
            end -= 1;
        }
    }
    lines[start..end].join("\n")
}

/// Lowercase hex SHA-256 of the canonical body.
pub fn gadget_hash(record: &GadgetRecord, opts: &CanonicalizeOptions) -> String {
    let canon = canonicalize_body(&record.body, opts);
    hex::encode(Sha256::digest(canon.as_bytes()))
}

/// Per-class before/after accounting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClassCounts {
    pub original: u64,
    pub cleaned: u64,
    pub conflict_removed: u64,
    pub dedup_removed: u64,
}

/// What cleaning did, with enough detail to audit every removed record.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CleanReport {
    /// Records whose digest occurs with >= 2 distinct labels (all removed).
    pub confliction: u64,
    /// Records that repeat an earlier (digest, label) pair, conflicting
    /// digests included.
    pub redundancy: u64,
    /// Records counted in both categories above.
    pub both: u64,
    /// Per-label breakdown; unlabeled records are keyed under `None`.
    pub per_class: BTreeMap<Option<u32>, ClassCounts>,
}

impl CleanReport {
    /// `original = cleaned + conflict_removed + dedup_removed`, per class.
    pub fn is_consistent(&self) -> bool {
        self.per_class
            .values()
            .all(|c| c.original == c.cleaned + c.conflict_removed + c.dedup_removed)
    }

    pub fn original_total(&self) -> u64 {
        self.per_class.values().map(|c| c.original).sum()
    }

    pub fn cleaned_total(&self) -> u64 {
        self.per_class.values().map(|c| c.cleaned).sum()
    }

    /// Render as line-oriented `key = value` text, matching the manifest style.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("confliction = {}\n", self.confliction));
        out.push_str(&format!("redundancy = {}\n", self.redundancy));
        out.push_str(&format!("both = {}\n", self.both));
        for (label, c) in &self.per_class {
            let key = match label {
                Some(l) => l.to_string(),
                None => "none".to_string(),
            };
            out.push_str(&format!(
                "class.{key} = {} {} {} {}\n",
                c.original, c.cleaned, c.conflict_removed, c.dedup_removed
            ));
        }
        out
    }
}

/// Remove label conflicts, then duplicates, preserving first-occurrence order.
pub fn clean_corpus(
    records: &[GadgetRecord],
    opts: &CanonicalizeOptions,
) -> (Vec<GadgetRecord>, CleanReport) {
    let hashes: Vec<String> = records.iter().map(|r| gadget_hash(r, opts)).collect();

    // Which digests appear with >= 2 distinct labels?
    let mut labels_by_digest: HashMap<&str, HashSet<Option<u32>>> = HashMap::new();
    for (rec, h) in records.iter().zip(&hashes) {
        labels_by_digest.entry(h).or_default().insert(rec.label);
    }
    let conflicting: HashSet<&str> = labels_by_digest
        .iter()
        .filter(|(_, labels)| labels.len() >= 2)
        .map(|(h, _)| *h)
        .collect();

    let mut report = CleanReport::default();
    let mut seen_pairs: HashSet<(&str, Option<u32>)> = HashSet::new();
    let mut kept = Vec::new();

    for (rec, h) in records.iter().zip(&hashes) {
        let counts = report.per_class.entry(rec.label).or_default();
        counts.original += 1;

        let is_repeat = !seen_pairs.insert((h.as_str(), rec.label));
        if is_repeat {
            report.redundancy += 1;
        }
        if conflicting.contains(h.as_str()) {
            report.confliction += 1;
            if is_repeat {
                report.both += 1;
                counts.dedup_removed += 1;
            } else {
                counts.conflict_removed += 1;
            }
            continue;
        }
        if is_repeat {
            counts.dedup_removed += 1;
            continue;
        }
        counts.cleaned += 1;
        kept.push(rec.clone());
    }

    debug_assert!(report.is_consistent());
    (kept, report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: u64, body: &[&str], label: u32) -> GadgetRecord {
        let mut r = GadgetRecord::new(
            id,
            format!("{id} f.c fn {id}"),
            body.iter().map(|s| s.to_string()).collect(),
        );
        r.label = Some(label);
        r
    }

    #[test]
    fn canonical_ignores_trailing_space_and_blank_edges() {
        let opts = CanonicalizeOptions::default();
        let a = canonicalize_body(
            &["".into(), "x = 1;  ".into(), "y = 2;".into(), "  ".into()],
            &opts,
        );
        let b = canonicalize_body(&["x = 1;".into(), "y = 2;".into()], &opts);
        assert_eq!(a, b);
        assert_eq!(a, "x = 1;\ny = 2;");
    }

    #[test]
    fn canonical_keeps_interior_blank_lines() {
        let opts = CanonicalizeOptions::default();
        let a = canonicalize_body(&["x;".into(), "".into(), "y;".into()], &opts);
        assert_eq!(a, "x;\n\ny;");
    }

    #[test]
    fn options_widen_identity() {
        let loose = CanonicalizeOptions {
            strip_trailing: false,
            trim_blank_edges: false,
        };
        let a = canonicalize_body(&["x; ".into()], &loose);
        let b = canonicalize_body(&["x;".into()], &loose);
        assert_ne!(a, b);
    }

    #[test]
    fn hash_ignores_header() {
        let opts = CanonicalizeOptions::default();
        let a = rec(1, &["x = 1;"], 0);
        let mut b = rec(2, &["x = 1;"], 1);
        b.header = "2 other.c g 99".into();
        assert_eq!(gadget_hash(&a, &opts), gadget_hash(&b, &opts));
    }

    #[test]
    fn dedup_keeps_first_occurrence() {
        let records = vec![rec(1, &["a;"], 0), rec(2, &["b;"], 0), rec(3, &["a;"], 0)];
        let (kept, report) = clean_corpus(&records, &CanonicalizeOptions::default());
        assert_eq!(kept.iter().map(|r| r.id).collect::<Vec<_>>(), vec![1, 2]);
        assert_eq!(report.redundancy, 1);
        assert_eq!(report.confliction, 0);
        assert_eq!(report.both, 0);
    }

    #[test]
    fn conflict_removes_every_copy() {
        let records = vec![rec(1, &["a;"], 0), rec(2, &["a;"], 1), rec(3, &["b;"], 1)];
        let (kept, report) = clean_corpus(&records, &CanonicalizeOptions::default());
        assert_eq!(kept.iter().map(|r| r.id).collect::<Vec<_>>(), vec![3]);
        assert_eq!(report.confliction, 2);
        assert_eq!(report.redundancy, 0);
        assert_eq!(report.both, 0);
    }

    #[test]
    fn conflicting_duplicate_lands_in_both() {
        // digest X: labels {0, 0, 1} -> conflicting; the second 0 is also a repeat.
        let records = vec![rec(1, &["a;"], 0), rec(2, &["a;"], 0), rec(3, &["a;"], 1)];
        let (kept, report) = clean_corpus(&records, &CanonicalizeOptions::default());
        assert!(kept.is_empty());
        assert_eq!(report.confliction, 3);
        assert_eq!(report.redundancy, 1);
        assert_eq!(report.both, 1);
        assert!(report.is_consistent());
    }

    #[test]
    fn cleaning_is_idempotent() {
        let records = vec![
            rec(1, &["a;"], 0),
            rec(2, &["a;"], 0),
            rec(3, &["b;"], 1),
            rec(4, &["c;"], 1),
            rec(5, &["c;"], 0),
        ];
        let (once, _) = clean_corpus(&records, &CanonicalizeOptions::default());
        let (twice, report) = clean_corpus(&once, &CanonicalizeOptions::default());
        assert_eq!(once, twice);
        assert_eq!(report.confliction, 0);
        assert_eq!(report.redundancy, 0);
    }

    #[test]
    fn report_totals_balance() {
        let records = vec![
            rec(1, &["a;"], 0),
            rec(2, &["a;"], 1),
            rec(3, &["b;"], 0),
            rec(4, &["b;"], 0),
            rec(5, &["d;"], 1),
        ];
        let (kept, report) = clean_corpus(&records, &CanonicalizeOptions::default());
        assert!(report.is_consistent());
        assert_eq!(report.original_total(), 5);
        assert_eq!(report.cleaned_total(), kept.len() as u64);
        assert_eq!(
            report.original_total(),
            report.cleaned_total()
                + report
                    .per_class
                    .values()
                    .map(|c| c.conflict_removed + c.dedup_removed)
                    .sum::<u64>()
        );
    }

    #[test]
    fn report_text_lists_classes() {
        let records = vec![rec(1, &["a;"], 0), rec(2, &["b;"], 1)];
        let (_, report) = clean_corpus(&records, &CanonicalizeOptions::default());
        let text = report.to_text();
        assert!(text.contains("confliction = 0"));
        assert!(text.contains("class.0 = 1 1 0 0"));
        assert!(text.contains("class.1 = 1 1 0 0"));
    }
}
