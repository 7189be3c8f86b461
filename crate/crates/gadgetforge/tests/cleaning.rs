//! Cleaning checked against a brute-force pairwise oracle, on a 200-record
//! fixture with frozen counts and on randomized corpora.
//!
//! The oracle never hashes: it canonicalizes bodies with its own few lines of
//! string handling and compares every pair directly, so it shares no code
//! with the implementation under test.

mod common;

use gadgetforge::clean::{clean_corpus, CanonicalizeOptions, CleanReport};
use gadgetforge::corpus::{parse_gadget_corpus, write_gadget_corpus, GadgetRecord, ParseOptions};
use gadgetforge::rng;

/// Independent re-statement of default canonicalization: rstrip each line,
/// drop blank edge lines, join with LF.
fn naive_canonical(body: &[String]) -> String {
    let mut lines: Vec<&str> = body.iter().map(|l| l.trim_end()).collect();
    while lines.first().is_some_and(|l| l.trim().is_empty()) {
        lines.remove(0);
    }
    while lines.last().is_some_and(|l| l.trim().is_empty()) {
        lines.pop();
    }
    lines.join("\n")
}

struct OracleOutcome {
    confliction: u64,
    redundancy: u64,
    both: u64,
    kept_ids: Vec<u64>,
}

/// O(n^2) pairwise comparison. A record conflicts when any other record has
/// the same canonical body under a different label; it is redundant when an
/// earlier record has the same canonical body and the same label.
fn brute_force_clean(records: &[GadgetRecord]) -> OracleOutcome {
    let canon: Vec<String> = records.iter().map(|r| naive_canonical(&r.body)).collect();
    let mut outcome = OracleOutcome {
        confliction: 0,
        redundancy: 0,
        both: 0,
        kept_ids: Vec::new(),
    };
    for i in 0..records.len() {
        let conflict = (0..records.len())
            .any(|j| j != i && canon[j] == canon[i] && records[j].label != records[i].label);
        let repeat = (0..i).any(|j| canon[j] == canon[i] && records[j].label == records[i].label);
        if conflict {
            outcome.confliction += 1;
        }
        if repeat {
            outcome.redundancy += 1;
        }
        if conflict && repeat {
            outcome.both += 1;
        }
        if !conflict && !repeat {
            outcome.kept_ids.push(records[i].id);
        }
    }
    outcome
}

fn load_fixture() -> Vec<GadgetRecord> {
    let bytes = std::fs::read(common::data_path("cleaning_fixture.cgd")).expect("fixture readable");
    parse_gadget_corpus(&bytes, &ParseOptions::default()).expect("fixture parses")
}

fn kept_count_for(report: &CleanReport, label: Option<u32>) -> u64 {
    report.per_class.get(&label).map_or(0, |c| c.cleaned)
}

#[test]
fn fixture_counts_match_frozen_values() {
    let records = load_fixture();
    assert_eq!(records.len(), 200);

    let oracle = brute_force_clean(&records);
    assert_eq!(oracle.confliction, 18);
    assert_eq!(oracle.redundancy, 18);
    assert_eq!(oracle.both, 2);
    assert_eq!(oracle.kept_ids.len(), 166);

    let (kept, report) = clean_corpus(&records, &CanonicalizeOptions::default());
    assert_eq!(report.confliction, 18);
    assert_eq!(report.redundancy, 18);
    assert_eq!(report.both, 2);
    assert_eq!(kept.len(), 166);
    assert_eq!(kept_count_for(&report, Some(0)), 84);
    assert_eq!(kept_count_for(&report, Some(1)), 81);
    assert_eq!(kept_count_for(&report, None), 1);
    assert!(report.is_consistent());
}

#[test]
fn cleaner_matches_brute_force_on_the_fixture() {
    let records = load_fixture();
    let oracle = brute_force_clean(&records);
    let (kept, report) = clean_corpus(&records, &CanonicalizeOptions::default());
    assert_eq!(report.confliction, oracle.confliction);
    assert_eq!(report.redundancy, oracle.redundancy);
    assert_eq!(report.both, oracle.both);
    let kept_ids: Vec<u64> = kept.iter().map(|r| r.id).collect();
    assert_eq!(kept_ids, oracle.kept_ids, "survivors and their order");
}

#[test]
fn fixture_round_trips_through_the_corpus_format() {
    let records = load_fixture();
    let written = write_gadget_corpus(&records);
    let reparsed = parse_gadget_corpus(&written, &ParseOptions::default()).expect("round trip");
    assert_eq!(records, reparsed);
}

#[test]
fn cleaner_matches_brute_force_on_random_corpora() {
    // Bodies drawn from a small pool force collisions; random labels
    // (including unlabeled) force conflicts.
    let pool = [
        "a = 1 ;",
        "b = a ;",
        "free ( p ) ;",
        "strcpy ( d , s ) ;",
        "  ", // canonicalizes away at edges
        "",
    ];
    let mut rng = rng::seeded(0x434c_4e46, 0x4f52_4143);
    for case in 0..30 {
        let n = 10 + rng::below(&mut rng, 40);
        let mut records = Vec::new();
        for id in 1..=n {
            let len = 1 + rng::below(&mut rng, 3);
            let body: Vec<String> = (0..len)
                .map(|_| pool[rng::below(&mut rng, pool.len() as u64) as usize].to_string())
                .collect();
            // Keep at least one non-blank line so canonical bodies are non-empty.
            let mut body = body;
            body.push("z = 0 ;".to_string());
            let label = match rng::below(&mut rng, 3) {
                0 => Some(0),
                1 => Some(1),
                _ => None,
            };
            let mut rec = GadgetRecord::new(id, format!("{id} pool.c site {id}"), body);
            rec.label = label;
            records.push(rec);
        }
        let oracle = brute_force_clean(&records);
        let (kept, report) = clean_corpus(&records, &CanonicalizeOptions::default());
        let kept_ids: Vec<u64> = kept.iter().map(|r| r.id).collect();
        assert_eq!(report.confliction, oracle.confliction, "case {case}");
        assert_eq!(report.redundancy, oracle.redundancy, "case {case}");
        assert_eq!(report.both, oracle.both, "case {case}");
        assert_eq!(kept_ids, oracle.kept_ids, "case {case}");
        assert!(report.is_consistent(), "case {case}");
    }
}
