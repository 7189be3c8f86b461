//! Code-gadget extraction from C/C++ sources.
//!
//! The pipeline is: [`normalize_source`] strips comments and non-ASCII bytes,
//! [`SourceUnit::new`] tokenizes, [`find_api_calls`] locates calls to a
//! configured library/API function list, and [`backtrack_slice`] walks data
//! dependencies backwards from each call — through callers when an argument
//! traces to a function parameter — to produce the ordered line slice that
//! [`assemble_gadget`] turns into a corpus record.
//!
//! This is a token-level scanner with brace/paren matching, not a C frontend:
//! gadget bodies are raw source lines, so identifiers, call sites, and line
//! relations are all the structure we need. No macro expansion, no points-to
//! analysis, no control-dependence edges.

mod defs;
mod lex;
mod normalize;
mod slice;

use std::collections::BTreeSet;

use thiserror::Error;

pub use defs::{extract_definitions, function_spans, DefKind, Definition, FunctionSpan};
pub use lex::{is_keyword, tokenize, Token, TokenKind};
pub use normalize::normalize_source;
pub use slice::{backtrack_slice, find_api_calls, CallSite, SliceConfig};

use crate::corpus::GadgetRecord;

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error("unterminated block comment starting on line {0}")]
    UnterminatedComment(u32),
    #[error("caller back-tracking exceeded depth {depth} at function `{function}`")]
    RecursionLimit { function: String, depth: usize },
}

/// One normalized source file, tokenized once up front.
#[derive(Debug, Clone)]
pub struct SourceUnit {
    pub path: String,
    pub lines: Vec<String>,
    pub tokens: Vec<Token>,
}

impl SourceUnit {
    /// Build a unit from already-normalized text.
    pub fn new(path: impl Into<String>, normalized: &str) -> Self {
        let mut lines: Vec<String> = normalized.split('\n').map(str::to_string).collect();
        if lines.last().is_some_and(|l| l.is_empty()) {
            lines.pop();
        }
        SourceUnit {
            path: path.into(),
            lines,
            tokens: tokenize(normalized),
        }
    }

    /// Line text by 1-based line number; empty for out-of-range.
    pub fn line(&self, number: u32) -> &str {
        self.lines
            .get(number as usize - 1)
            .map(String::as_str)
            .unwrap_or("")
    }
}

/// Parse an API-list file: one symbol per line, `#` starts a comment.
pub fn load_api_list(text: &str) -> BTreeSet<String> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
}

/// C standard library memory/string functions, the usual slicing targets.
pub fn default_api_list() -> BTreeSet<String> {
    [
        "strcpy", "strncpy", "strcat", "strncat", "sprintf", "vsprintf", "snprintf", "gets",
        "fgets", "getline", "memcpy", "memmove", "memset", "bcopy", "malloc", "calloc", "realloc",
        "free", "alloca", "strtok", "scanf", "sscanf", "fscanf", "read", "recv",
    ]
    .into_iter()
    .map(str::to_string)
    .collect()
}

/// Turn a slice into a gadget record.
///
/// The header is `<id> <path> <callee> <line>` for the originating call site;
/// the body is the slice's line text in slice order with runs of blank lines
/// collapsed; the label is left unset for downstream labeling.
pub fn assemble_gadget(
    slice: &[(String, u32)],
    site: &CallSite,
    units: &[SourceUnit],
    id: u64,
) -> GadgetRecord {
    let path = units[site.unit].path.clone();
    let header = format!("{id} {path} {} {}", site.callee, site.line);
    let mut body: Vec<String> = Vec::with_capacity(slice.len());
    for (unit_path, line) in slice {
        let text = units
            .iter()
            .find(|u| &u.path == unit_path)
            .map(|u| u.line(*line))
            .unwrap_or("");
        let blank = text.trim().is_empty();
        if blank
            && body
                .last()
                .is_some_and(|prev: &String| prev.trim().is_empty())
        {
            continue;
        }
        body.push(text.to_string());
    }
    GadgetRecord::new(id, header, body)
}

/// Run the whole extraction over a set of units, in unit order.
///
/// Sites whose slice hits the caller-recursion limit are skipped with a
/// warning rather than failing the corpus build. Ids are assigned 1, 2, ...
/// in discovery order, so extraction is deterministic for fixed inputs.
pub fn extract_gadgets(units: &[SourceUnit], api: &BTreeSet<String>) -> Vec<GadgetRecord> {
    let config = SliceConfig::default();
    let spans: Vec<Vec<FunctionSpan>> = units.iter().map(function_spans).collect();
    let defs: Vec<Vec<Definition>> = units.iter().map(extract_definitions).collect();
    let mut records = Vec::new();
    let mut next_id = 1u64;
    for (ui, unit) in units.iter().enumerate() {
        for site in find_api_calls(ui, unit, api) {
            match backtrack_slice(&site, &defs, units, &spans, &config) {
                Ok(slice) if !slice.is_empty() => {
                    records.push(assemble_gadget(&slice, &site, units, next_id));
                    next_id += 1;
                }
                Ok(_) => {}
                Err(e) => log::warn!(
                    "skipping {} call at {}:{}: {e}",
                    site.callee,
                    unit.path,
                    site.line
                ),
            }
        }
    }
    records
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn api_list_parses_comments_and_blanks() {
        let list = load_api_list("strcpy\n# a comment\n\n  memcpy  # trailing\n");
        assert_eq!(
            list.iter().map(String::as_str).collect::<Vec<_>>(),
            vec!["memcpy", "strcpy"]
        );
    }

    #[test]
    fn default_list_contains_classics() {
        let list = default_api_list();
        assert!(list.contains("strcpy"));
        assert!(list.contains("malloc"));
        assert!(!list.contains("printf"));
    }

    #[test]
    fn extraction_is_deterministic() {
        let src = "void f(char *x) {\n  char b[8];\n  strcpy(b, x);\n}\n";
        let unit = SourceUnit::new("a.c", src);
        let api = default_api_list();
        let once = extract_gadgets(std::slice::from_ref(&unit), &api);
        let twice = extract_gadgets(std::slice::from_ref(&unit), &api);
        assert_eq!(once, twice);
        assert_eq!(once.len(), 1);
        assert_eq!(once[0].header, "1 a.c strcpy 3");
    }

    #[test]
    fn assemble_collapses_blank_runs() {
        let unit = SourceUnit::new("a.c", "int a;\n\n\nstrcpy(p, q);\n");
        let site = CallSite {
            callee: "strcpy".into(),
            line: 4,
            arguments: vec!["p".into(), "q".into()],
            enclosing: "f".into(),
            unit: 0,
        };
        let slice = vec![
            ("a.c".to_string(), 1),
            ("a.c".to_string(), 2),
            ("a.c".to_string(), 3),
            ("a.c".to_string(), 4),
        ];
        let rec = assemble_gadget(&slice, &site, std::slice::from_ref(&unit), 7);
        assert_eq!(rec.body, vec!["int a;", "", "strcpy(p, q);"]);
        assert_eq!(rec.header, "7 a.c strcpy 4");
    }
}
