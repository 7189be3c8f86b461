//! Function spans, variable/function definitions, and their use sites.
//!
//! Scope handling is nearest-enclosing-brace: each `{` opens a scope, each
//! `}` closes one, and an identifier resolves to the innermost declaration in
//! effect. That is not full C name resolution — no typedef table, no macro
//! awareness — but it is exactly enough to attach use lines to the right
//! declaration in real-world gadget sources, shadowing included.

use std::collections::HashMap;

use super::lex::{Token, TokenKind};
use super::SourceUnit;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DefKind {
    Function,
    Variable,
}

/// One declared name and every line where it is used after declaration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Definition {
    pub name: String,
    pub kind: DefKind,
    pub decl_line: u32,
    /// Sorted, deduplicated use lines; never earlier than `decl_line`.
    pub uses: Vec<u32>,
}

/// A function definition's extent and parameter list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunctionSpan {
    pub name: String,
    pub head_line: u32,
    pub open_line: u32,
    pub close_line: u32,
    /// Parameter names with the line each appears on, in position order.
    pub params: Vec<(String, u32)>,
    /// Token index of the function name, and of the body's `{`.
    pub(super) name_index: usize,
    pub(super) open_index: usize,
}

impl FunctionSpan {
    pub fn contains_line(&self, line: u32) -> bool {
        self.head_line <= line && line <= self.close_line
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|(n, _)| n.as_str())
    }
}

pub(super) fn matching_close(
    tokens: &[Token],
    open: usize,
    open_text: &str,
    close_text: &str,
) -> Option<usize> {
    let mut depth = 0i32;
    for (k, t) in tokens.iter().enumerate().skip(open) {
        if t.kind == TokenKind::Punct {
            if t.text == open_text {
                depth += 1;
            } else if t.text == close_text {
                depth -= 1;
                if depth == 0 {
                    return Some(k);
                }
            }
        }
    }
    None
}

/// Locate every top-level `name ( params ) {` function definition.
pub fn function_spans(unit: &SourceUnit) -> Vec<FunctionSpan> {
    let tokens = &unit.tokens;
    let mut spans = Vec::new();
    let mut depth = 0i32;
    let mut i = 0usize;
    while i < tokens.len() {
        let t = &tokens[i];
        if t.kind == TokenKind::Punct {
            match t.text.as_str() {
                "{" => depth += 1,
                "}" => depth -= 1,
                _ => {}
            }
            i += 1;
            continue;
        }
        if depth == 0
            && t.kind == TokenKind::Ident
            && tokens.get(i + 1).is_some_and(|n| n.text == "(")
        {
            if let Some(close_paren) = matching_close(tokens, i + 1, "(", ")") {
                if tokens.get(close_paren + 1).is_some_and(|n| n.text == "{") {
                    let open_index = close_paren + 1;
                    if let Some(close_brace) = matching_close(tokens, open_index, "{", "}") {
                        spans.push(FunctionSpan {
                            name: t.text.clone(),
                            head_line: t.line,
                            open_line: tokens[open_index].line,
                            close_line: tokens[close_brace].line,
                            params: parse_params(&tokens[i + 2..close_paren]),
                            name_index: i,
                            open_index,
                        });
                        // Resume inside the body so nested braces are counted.
                        depth += 1;
                        i = open_index + 1;
                        continue;
                    }
                }
            }
        }
        i += 1;
    }
    spans
}

/// Declared name per comma-separated parameter: the last identifier in the
/// group (`char *buf` → buf, `char s[10]` → s, `void` → none).
fn parse_params(tokens: &[Token]) -> Vec<(String, u32)> {
    let mut params = Vec::new();
    let mut depth = 0i32;
    let mut last_ident: Option<(String, u32)> = None;
    for t in tokens {
        match (t.kind, t.text.as_str()) {
            (TokenKind::Punct, "(" | "[") => depth += 1,
            (TokenKind::Punct, ")" | "]") => depth -= 1,
            (TokenKind::Punct, ",") if depth == 0 => {
                params.extend(last_ident.take());
            }
            (TokenKind::Ident, _) => last_ident = Some((t.text.clone(), t.line)),
            _ => {}
        }
    }
    params.extend(last_ident.take());
    params
}

const TYPE_KEYWORDS: &[&str] = &[
    "auto", "bool", "char", "const", "double", "enum", "extern", "float", "inline", "int", "long",
    "register", "short", "signed", "static", "struct", "typedef", "union", "unsigned", "void",
    "volatile", "wchar_t",
];

fn is_type_keyword(t: &Token) -> bool {
    t.kind == TokenKind::Keyword && TYPE_KEYWORDS.contains(&t.text.as_str())
}

/// Outcome of feeding one token to the in-declaration state machine.
enum DeclStep {
    Consumed,
    ConsumedEnd,
    /// Token belongs to the enclosing walk (a function body `{`).
    Rejected,
}

struct DeclState {
    paren_depth: i32,
    brace_depth: i32,
    expecting_name: bool,
    after_eq: bool,
}

impl DeclState {
    fn new() -> Self {
        DeclState {
            paren_depth: 0,
            brace_depth: 0,
            expecting_name: true,
            after_eq: false,
        }
    }
}

struct Walker<'a> {
    tokens: &'a [Token],
    scopes: Vec<HashMap<String, usize>>,
    defs: Vec<Definition>,
}

impl<'a> Walker<'a> {
    fn resolve_use(&mut self, name: &str, line: u32) {
        for scope in self.scopes.iter().rev() {
            if let Some(&idx) = scope.get(name) {
                self.defs[idx].uses.push(line);
                return;
            }
        }
    }

    fn define(&mut self, name: &str, kind: DefKind, line: u32) {
        let idx = self.defs.len();
        self.defs.push(Definition {
            name: name.to_string(),
            kind,
            decl_line: line,
            uses: Vec::new(),
        });
        self.scopes
            .last_mut()
            .expect("scope stack never empty")
            .insert(name.to_string(), idx);
    }

    fn next_significant(&self, i: usize) -> Option<&Token> {
        self.tokens.get(i + 1)
    }

    /// Is the identifier at `i` playing the role of a type name
    /// (`FILE *fp`, `struct foo x`) rather than the declared name?
    fn ident_is_type_part(&self, i: usize) -> bool {
        let mut k = i + 1;
        while self
            .tokens
            .get(k)
            .is_some_and(|t| t.text == "*" || t.text == "&")
        {
            k += 1;
        }
        k > i + 1
            && self
                .tokens
                .get(k)
                .is_some_and(|t| t.kind == TokenKind::Ident)
            || self
                .next_significant(i)
                .is_some_and(|t| t.kind == TokenKind::Ident)
    }

    fn decl_step(&mut self, i: usize, st: &mut DeclState) -> DeclStep {
        let t = &self.tokens[i];
        match t.kind {
            TokenKind::Keyword | TokenKind::Literal => DeclStep::Consumed,
            TokenKind::Ident => {
                let naming_position =
                    st.expecting_name && st.paren_depth == 0 && st.brace_depth == 0 && !st.after_eq;
                if naming_position && !self.ident_is_type_part(i) {
                    let kind = if self.next_significant(i).is_some_and(|n| n.text == "(") {
                        DefKind::Function
                    } else {
                        DefKind::Variable
                    };
                    self.define(&t.text.clone(), kind, t.line);
                    st.expecting_name = false;
                } else if !naming_position {
                    self.resolve_use(&t.text.clone(), t.line);
                }
                DeclStep::Consumed
            }
            TokenKind::Punct => match t.text.as_str() {
                "(" => {
                    st.paren_depth += 1;
                    DeclStep::Consumed
                }
                ")" => {
                    st.paren_depth = (st.paren_depth - 1).max(0);
                    DeclStep::Consumed
                }
                "=" => {
                    if st.paren_depth == 0 && st.brace_depth == 0 {
                        st.after_eq = true;
                    }
                    DeclStep::Consumed
                }
                "," => {
                    if st.paren_depth == 0 && st.brace_depth == 0 {
                        st.expecting_name = true;
                        st.after_eq = false;
                    }
                    DeclStep::Consumed
                }
                ";" => {
                    if st.paren_depth == 0 && st.brace_depth == 0 {
                        DeclStep::ConsumedEnd
                    } else {
                        DeclStep::Consumed
                    }
                }
                "{" => {
                    if st.after_eq || st.brace_depth > 0 {
                        st.brace_depth += 1;
                        DeclStep::Consumed
                    } else {
                        DeclStep::Rejected
                    }
                }
                "}" => {
                    if st.brace_depth > 0 {
                        st.brace_depth -= 1;
                        DeclStep::Consumed
                    } else {
                        DeclStep::Rejected
                    }
                }
                _ => DeclStep::Consumed,
            },
        }
    }
}

/// Extract every function/variable definition with its use lines.
pub fn extract_definitions(unit: &SourceUnit) -> Vec<Definition> {
    let spans = function_spans(unit);
    let tokens = &unit.tokens;
    let mut w = Walker {
        tokens,
        scopes: vec![HashMap::new()],
        defs: Vec::new(),
    };
    let mut decl: Option<DeclState> = None;
    // Punct text that means "a new statement can begin here".
    let mut last_sig: Option<String> = None;

    for i in 0..tokens.len() {
        let t = &tokens[i];
        let at_statement_start = match last_sig.as_deref() {
            None | Some(";") | Some("{") | Some("}") => true,
            // `for (int i = 0; ...` declares inside the header parens.
            Some("(") if i >= 2 && tokens[i - 2].text == "for" => true,
            _ => false,
        };
        if decl.is_none()
            && at_statement_start
            && (is_type_keyword(t) || (t.kind == TokenKind::Ident && w.ident_is_type_part(i)))
        {
            decl = Some(DeclState::new());
        }
        if let Some(st) = decl.as_mut() {
            match w.decl_step(i, st) {
                DeclStep::Consumed => {
                    last_sig = (t.kind == TokenKind::Punct).then(|| t.text.clone());
                    continue;
                }
                DeclStep::ConsumedEnd => {
                    decl = None;
                    last_sig = Some(";".to_string());
                    continue;
                }
                DeclStep::Rejected => decl = None,
            }
        }
        match t.kind {
            TokenKind::Punct if t.text == "{" => {
                w.scopes.push(HashMap::new());
                if let Some(span) = spans.iter().find(|s| s.open_index == i) {
                    for (name, line) in span.params.clone() {
                        w.define(&name, DefKind::Variable, line);
                    }
                }
            }
            TokenKind::Punct if t.text == "}" => {
                if w.scopes.len() > 1 {
                    w.scopes.pop();
                }
            }
            TokenKind::Ident => {
                let (name, line) = (t.text.clone(), t.line);
                w.resolve_use(&name, line);
            }
            _ => {}
        }
        last_sig = (t.kind == TokenKind::Punct).then(|| t.text.clone());
    }

    for def in &mut w.defs {
        def.uses.sort_unstable();
        def.uses.dedup();
    }
    w.defs
}
