//! API call detection and backward data-dependence slicing.
//!
//! A slice starts at a library/API call and walks upward, collecting every
//! line that declares or assigns a variable the call (transitively) depends
//! on. Dependencies are data edges only — declarations and assignments;
//! control structure is not followed. When a depended-on variable is a
//! parameter of the enclosing function, the walk continues in each caller,
//! mapping arguments to parameters by position, up to a configured depth.

use std::collections::{BTreeSet, HashMap, HashSet};

use super::defs::{matching_close, Definition, FunctionSpan};
use super::lex::{is_assign_op, Token, TokenKind};
use super::{ExtractError, SourceUnit};

/// One call to a function on the configured API list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallSite {
    pub callee: String,
    pub line: u32,
    /// Identifiers appearing in the argument list, first occurrence order,
    /// nested callee names excluded.
    pub arguments: Vec<String>,
    pub enclosing: String,
    /// Index of the unit the call appears in.
    pub unit: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct SliceConfig {
    /// Maximum caller hops before [`ExtractError::RecursionLimit`].
    pub max_caller_depth: usize,
}

impl Default for SliceConfig {
    fn default() -> Self {
        SliceConfig {
            max_caller_depth: 8,
        }
    }
}

/// Argument identifiers per comma-separated position, and the `)` index.
fn call_positions(tokens: &[Token], open: usize) -> Option<(Vec<Vec<String>>, usize)> {
    let close = matching_close(tokens, open, "(", ")")?;
    let mut positions = Vec::new();
    let mut current: Vec<String> = Vec::new();
    let mut depth = 0i32;
    for k in open + 1..close {
        let t = &tokens[k];
        if t.kind == TokenKind::Punct {
            match t.text.as_str() {
                "(" | "[" => depth += 1,
                ")" | "]" => depth -= 1,
                "," if depth == 0 => {
                    positions.push(std::mem::take(&mut current));
                }
                _ => {}
            }
        } else if t.kind == TokenKind::Ident {
            let is_nested_callee = tokens.get(k + 1).is_some_and(|n| n.text == "(");
            if !is_nested_callee && !current.contains(&t.text) {
                current.push(t.text.clone());
            }
        }
    }
    if close > open + 1 || !current.is_empty() {
        positions.push(current);
    }
    Some((positions, close))
}

/// Find every call to a listed API function inside some function body,
/// in line order.
pub fn find_api_calls(
    unit_index: usize,
    unit: &SourceUnit,
    api: &BTreeSet<String>,
) -> Vec<CallSite> {
    let spans = super::function_spans(unit);
    let tokens = &unit.tokens;
    let mut sites = Vec::new();
    for (i, t) in tokens.iter().enumerate() {
        if t.kind != TokenKind::Ident || !api.contains(&t.text) {
            continue;
        }
        if !tokens.get(i + 1).is_some_and(|n| n.text == "(") {
            continue;
        }
        let Some((positions, _)) = call_positions(tokens, i + 1) else {
            continue;
        };
        let Some(span) = spans.iter().find(|s| s.contains_line(t.line)) else {
            log::debug!(
                "{}:{}: call to {} outside any function",
                unit.path,
                t.line,
                t.text
            );
            continue;
        };
        let mut arguments = Vec::new();
        for pos in positions {
            for name in pos {
                if !arguments.contains(&name) {
                    arguments.push(name);
                }
            }
        }
        sites.push(CallSite {
            callee: t.text.clone(),
            line: t.line,
            arguments,
            enclosing: span.name.clone(),
            unit: unit_index,
        });
    }
    sites
}

struct Slicer<'a> {
    units: &'a [SourceUnit],
    defs: &'a [Vec<Definition>],
    spans: &'a [Vec<FunctionSpan>],
    config: &'a SliceConfig,
    /// Per unit: token indices grouped by line.
    line_tokens: Vec<HashMap<u32, Vec<usize>>>,
}

impl<'a> Slicer<'a> {
    fn new(
        units: &'a [SourceUnit],
        defs: &'a [Vec<Definition>],
        spans: &'a [Vec<FunctionSpan>],
        config: &'a SliceConfig,
    ) -> Self {
        let line_tokens = units
            .iter()
            .map(|u| {
                let mut by_line: HashMap<u32, Vec<usize>> = HashMap::new();
                for (k, t) in u.tokens.iter().enumerate() {
                    by_line.entry(t.line).or_default().push(k);
                }
                by_line
            })
            .collect();
        Slicer {
            units,
            defs,
            spans,
            config,
            line_tokens,
        }
    }

    /// Does this line declare or write any currently-tainted variable?
    fn line_touches(&self, unit: usize, line: u32, tainted: &HashSet<String>) -> bool {
        if self.defs[unit]
            .iter()
            .any(|d| d.decl_line == line && tainted.contains(&d.name))
        {
            return true;
        }
        let tokens = &self.units[unit].tokens;
        let Some(indices) = self.line_tokens[unit].get(&line) else {
            return false;
        };
        for &idx in indices {
            let t = &tokens[idx];
            if t.kind != TokenKind::Ident || !tainted.contains(&t.text) {
                continue;
            }
            // v = ..., v[i] = ..., v++ / ++v
            let mut k = idx + 1;
            if tokens.get(k).is_some_and(|n| n.text == "[") {
                match matching_close(tokens, k, "[", "]") {
                    Some(close) => k = close + 1,
                    None => continue,
                }
            }
            let written = tokens.get(k).is_some_and(|n| {
                n.kind == TokenKind::Punct
                    && (is_assign_op(&n.text) || n.text == "++" || n.text == "--")
            }) || (idx > 0 && matches!(tokens[idx - 1].text.as_str(), "++" | "--"));
            if written {
                return true;
            }
        }
        false
    }

    /// Add every identifier on the line to the tainted set, skipping callee
    /// names (an identifier directly followed by `(`).
    fn taint_line(&self, unit: usize, line: u32, tainted: &mut HashSet<String>) {
        let tokens = &self.units[unit].tokens;
        if let Some(indices) = self.line_tokens[unit].get(&line) {
            for &idx in indices {
                let t = &tokens[idx];
                if t.kind == TokenKind::Ident && !tokens.get(idx + 1).is_some_and(|n| n.text == "(")
                {
                    tainted.insert(t.text.clone());
                }
            }
        }
    }

    /// Call sites of `name` across all units, as (unit, line, `(` token index).
    fn callers_of(&self, name: &str) -> Vec<(usize, u32, usize)> {
        let mut found = Vec::new();
        for (ui, unit) in self.units.iter().enumerate() {
            for (i, t) in unit.tokens.iter().enumerate() {
                if t.kind != TokenKind::Ident || t.text != name {
                    continue;
                }
                if !unit.tokens.get(i + 1).is_some_and(|n| n.text == "(") {
                    continue;
                }
                // The definition head is not a call.
                if self.spans[ui].iter().any(|s| s.name_index == i) {
                    continue;
                }
                found.push((ui, t.line, i + 1));
            }
        }
        found.sort_unstable_by_key(|&(ui, line, _)| (ui, line));
        found
    }

    #[allow(clippy::too_many_arguments)]
    fn slice_function(
        &self,
        unit: usize,
        span: &FunctionSpan,
        from_line: u32,
        seed: HashSet<String>,
        depth: usize,
        visited: &mut Vec<String>,
        groups: &mut Vec<(usize, BTreeSet<u32>)>,
    ) -> Result<(), ExtractError> {
        let mut own: BTreeSet<u32> = BTreeSet::new();
        own.insert(from_line);
        let mut tainted = seed;
        for line in (span.head_line..from_line).rev() {
            if self.line_touches(unit, line, &tainted) {
                own.insert(line);
                self.taint_line(unit, line, &mut tainted);
            }
        }

        let tainted_positions: Vec<usize> = span
            .params
            .iter()
            .enumerate()
            .filter(|(_, (name, _))| tainted.contains(name))
            .map(|(k, _)| k)
            .collect();
        if !tainted_positions.is_empty() {
            if depth >= self.config.max_caller_depth {
                return Err(ExtractError::RecursionLimit {
                    function: span.name.clone(),
                    depth,
                });
            }
            visited.push(span.name.clone());
            for (caller_unit, caller_line, open_idx) in self.callers_of(&span.name) {
                let Some(caller_span) = self.spans[caller_unit]
                    .iter()
                    .find(|s| s.contains_line(caller_line))
                else {
                    continue;
                };
                if visited.contains(&caller_span.name) {
                    continue;
                }
                let Some((positions, _)) =
                    call_positions(&self.units[caller_unit].tokens, open_idx)
                else {
                    continue;
                };
                let mut caller_seed = HashSet::new();
                for &p in &tainted_positions {
                    if let Some(idents) = positions.get(p) {
                        caller_seed.extend(idents.iter().cloned());
                    }
                }
                self.slice_function(
                    caller_unit,
                    caller_span,
                    caller_line,
                    caller_seed,
                    depth + 1,
                    visited,
                    groups,
                )?;
            }
            visited.pop();
        }

        groups.push((unit, own));
        Ok(())
    }
}

/// Backward slice from an API call site.
///
/// Returns `(path, line)` pairs in gadget order: caller lines before callee
/// lines, ascending line order within each function, the call line last
/// within its unit.
pub fn backtrack_slice(
    site: &CallSite,
    defs: &[Vec<Definition>],
    units: &[SourceUnit],
    spans: &[Vec<FunctionSpan>],
    config: &SliceConfig,
) -> Result<Vec<(String, u32)>, ExtractError> {
    let Some(span) = spans[site.unit]
        .iter()
        .find(|s| s.name == site.enclosing && s.contains_line(site.line))
    else {
        return Ok(Vec::new());
    };
    let slicer = Slicer::new(units, defs, spans, config);
    let seed: HashSet<String> = site.arguments.iter().cloned().collect();
    let mut groups = Vec::new();
    let mut visited = Vec::new();
    slicer.slice_function(
        site.unit,
        span,
        site.line,
        seed,
        0,
        &mut visited,
        &mut groups,
    )?;

    let mut out: Vec<(String, u32)> = Vec::new();
    for (unit, lines) in groups {
        for line in lines {
            let entry = (units[unit].path.clone(), line);
            if !out.contains(&entry) {
                out.push(entry);
            }
        }
    }
    Ok(out)
}
