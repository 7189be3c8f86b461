//! End-to-end extraction checks: the interprocedural slicing fixture with a
//! hand-built dependence oracle, plus randomized normalization fuzzing.

mod common;

use std::collections::BTreeSet;

use gadgetforge::extract::{
    backtrack_slice, extract_definitions, extract_gadgets, find_api_calls, function_spans,
    normalize_source, SliceConfig, SourceUnit,
};
use gadgetforge::rng;

use common::{INTERPROCEDURAL_ORACLE, INTERPROCEDURAL_SOURCE};

fn fixture_unit() -> SourceUnit {
    let normalized = normalize_source(INTERPROCEDURAL_SOURCE).expect("fixture normalizes");
    SourceUnit::new("f.c", &normalized)
}

#[test]
fn interprocedural_slice_matches_hand_oracle() {
    let unit = fixture_unit();
    let units = vec![unit];
    let api: BTreeSet<String> = ["strcpy".to_string()].into_iter().collect();

    let sites = find_api_calls(0, &units[0], &api);
    assert_eq!(sites.len(), 1, "exactly one strcpy site");
    let site = &sites[0];
    assert_eq!(site.callee, "strcpy");
    assert_eq!(site.line, 3);
    assert_eq!(site.arguments, vec!["dst".to_string(), "src".to_string()]);
    assert_eq!(site.enclosing, "copy_into");

    let spans = vec![function_spans(&units[0])];
    let defs = vec![extract_definitions(&units[0])];
    let slice = backtrack_slice(site, &defs, &units, &spans, &SliceConfig::default())
        .expect("slice within depth limit");

    let expected: Vec<(String, u32)> = INTERPROCEDURAL_ORACLE
        .iter()
        .map(|(p, l)| (p.to_string(), *l))
        .collect();
    assert_eq!(slice, expected);
}

#[test]
fn assembled_gadget_carries_caller_lines_before_callee_lines() {
    let unit = fixture_unit();
    let units = vec![unit];
    let api: BTreeSet<String> = ["strcpy".to_string()].into_iter().collect();

    let records = extract_gadgets(&units, &api);
    assert_eq!(records.len(), 1);
    let rec = &records[0];
    assert_eq!(rec.header, "1 f.c strcpy 3");
    let expected_body: Vec<String> = INTERPROCEDURAL_ORACLE
        .iter()
        .map(|&(_, line)| units[0].line(line).to_string())
        .collect();
    assert_eq!(rec.body, expected_body);
    assert!(rec.label.is_none(), "labels are assigned downstream");
}

#[test]
fn independent_lines_stay_out_of_the_slice() {
    let units = vec![fixture_unit()];
    let api: BTreeSet<String> = ["strcpy".to_string()].into_iter().collect();
    let records = extract_gadgets(&units, &api);
    let body = records[0].body.join("\n");
    assert!(!body.contains("other"), "line 9/11 are data-independent");
    assert!(!body.contains("report"));
}

#[test]
fn extraction_is_deterministic() {
    let api: BTreeSet<String> = ["strcpy".to_string()].into_iter().collect();
    let a = extract_gadgets(&[fixture_unit()], &api);
    let b = extract_gadgets(&[fixture_unit()], &api);
    assert_eq!(a, b);
    assert_eq!(
        gadgetforge::corpus::write_gadget_corpus(&a),
        gadgetforge::corpus::write_gadget_corpus(&b)
    );
}

/// Self-contained fragments: comments close themselves, quotes are balanced,
/// so any concatenation is well-formed input for the normalizer.
const FRAGMENTS: [&str; 14] = [
    "int x = 1;\n",
    "// line comment with */ inside\n",
    "/* block */",
    "/* multi\nline\ncomment */",
    "s = \"/*not a comment*/\";\n",
    "t = \"tail // not a comment\";\n",
    "u = \"escaped \\\" quote /* still string */\";\n",
    "c = '\\'';\n",
    "d = '\"';\n",
    "p = \"back\\\\\";\n",
    "caf\u{e9} \u{4e2d}\u{6587}\n",
    "  \t \n",
    "y += x; /* trailing */ z = y;\n",
    "/**//**/\n",
];

#[test]
fn normalize_is_idempotent_over_random_interleavings() {
    let mut rng = rng::seeded(0x4655_5a5a, 0x4e4f_524d);
    for case in 0..1000 {
        let parts = 3 + rng::below(&mut rng, 13) as usize;
        let mut input = String::new();
        for _ in 0..parts {
            input.push_str(FRAGMENTS[rng::below(&mut rng, FRAGMENTS.len() as u64) as usize]);
        }
        let once = normalize_source(&input)
            .unwrap_or_else(|e| panic!("case {case}: first pass failed: {e}\ninput: {input:?}"));
        let twice = normalize_source(&once)
            .unwrap_or_else(|e| panic!("case {case}: second pass failed: {e}"));
        assert_eq!(once, twice, "case {case}: not idempotent\ninput: {input:?}");
        assert!(
            once.len() <= input.len(),
            "case {case}: normalization grew the text"
        );
        assert!(once.is_ascii(), "case {case}: non-ASCII byte survived");
    }
}

#[test]
fn api_calls_always_come_from_the_configured_list() {
    let api: BTreeSet<String> = ["strcpy", "memcpy", "free"]
        .into_iter()
        .map(str::to_string)
        .collect();
    let idents = ["strcpy", "memcpy", "free", "helper", "x", "buf", "n"];
    let mut rng = rng::seeded(0x4655_5a5a, 0x4150_4953);
    for _ in 0..200 {
        let mut src = String::from("void fuzz(int n)\n{\n");
        for _ in 0..(1 + rng::below(&mut rng, 6)) {
            let name = idents[rng::below(&mut rng, idents.len() as u64) as usize];
            let arg = idents[rng::below(&mut rng, idents.len() as u64) as usize];
            src.push_str(&format!("    {name}({arg});\n"));
        }
        src.push_str("}\n");
        let unit = SourceUnit::new("fuzz.c", &src);
        for site in find_api_calls(0, &unit, &api) {
            assert!(
                api.contains(&site.callee),
                "{} not in api list",
                site.callee
            );
        }
    }
}
