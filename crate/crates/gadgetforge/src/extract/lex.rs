//! Token scanner for normalized C/C++ text.

/// Token classes. `Literal` covers numeric, string, and character literals;
/// `Punct` is operators and delimiters with maximal munch (`<<=` before `<<`
/// before `<`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Ident,
    Keyword,
    Literal,
    Punct,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub kind: TokenKind,
    pub text: String,
    /// 1-based source line.
    pub line: u32,
}

const KEYWORDS: &[&str] = &[
    "auto",
    "bool",
    "break",
    "case",
    "catch",
    "char",
    "class",
    "const",
    "continue",
    "default",
    "delete",
    "do",
    "double",
    "else",
    "enum",
    "extern",
    "false",
    "float",
    "for",
    "friend",
    "goto",
    "if",
    "inline",
    "int",
    "long",
    "namespace",
    "new",
    "nullptr",
    "operator",
    "private",
    "protected",
    "public",
    "register",
    "return",
    "short",
    "signed",
    "sizeof",
    "static",
    "struct",
    "switch",
    "template",
    "this",
    "throw",
    "true",
    "try",
    "typedef",
    "typename",
    "union",
    "unsigned",
    "using",
    "virtual",
    "void",
    "volatile",
    "wchar_t",
    "while",
];

/// Multi-character operators, longest first so maximal munch works by scan order.
const MULTI_PUNCT: &[&str] = &[
    "<<=", ">>=", "...", "->*", "->", "::", "++", "--", "<<", ">>", "<=", ">=", "==", "!=", "&&",
    "||", "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "##",
];

/// Operators that write to their left-hand side.
pub fn is_assign_op(text: &str) -> bool {
    matches!(
        text,
        "=" | "+=" | "-=" | "*=" | "/=" | "%=" | "&=" | "|=" | "^=" | "<<=" | ">>="
    )
}

pub fn is_keyword(text: &str) -> bool {
    KEYWORDS.contains(&text)
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_ident_cont(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

/// Tokenize normalized source. Unrecognized bytes are skipped.
pub fn tokenize(text: &str) -> Vec<Token> {
    let bytes: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0usize;
    let mut line = 1u32;

    while i < bytes.len() {
        let c = bytes[i];
        if c == '\n' {
            line += 1;
            i += 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if is_ident_start(c) {
            let start = i;
            while i < bytes.len() && is_ident_cont(bytes[i]) {
                i += 1;
            }
            let text: String = bytes[start..i].iter().collect();
            let kind = if is_keyword(&text) {
                TokenKind::Keyword
            } else {
                TokenKind::Ident
            };
            tokens.push(Token { kind, text, line });
            continue;
        }
        if c.is_ascii_digit() || (c == '.' && bytes.get(i + 1).is_some_and(|d| d.is_ascii_digit()))
        {
            let start = i;
            i += 1;
            while i < bytes.len() {
                let d = bytes[i];
                let exponent_sign =
                    (d == '+' || d == '-') && matches!(bytes[i - 1], 'e' | 'E' | 'p' | 'P');
                if is_ident_cont(d) || d == '.' || exponent_sign {
                    i += 1;
                } else {
                    break;
                }
            }
            tokens.push(Token {
                kind: TokenKind::Literal,
                text: bytes[start..i].iter().collect(),
                line,
            });
            continue;
        }
        if c == '"' || c == '\'' {
            let quote = c;
            let start = i;
            let start_line = line;
            i += 1;
            while i < bytes.len() {
                let d = bytes[i];
                if d == '\\' {
                    i += 2;
                    continue;
                }
                if d == quote {
                    i += 1;
                    break;
                }
                if d == '\n' {
                    break; // lenient: unterminated literal ends at the line
                }
                i += 1;
            }
            let end = i.min(bytes.len());
            tokens.push(Token {
                kind: TokenKind::Literal,
                text: bytes[start..end].iter().collect(),
                line: start_line,
            });
            continue;
        }
        if let Some(op) = MULTI_PUNCT.iter().find(|op| text_at(&bytes, i, op)) {
            tokens.push(Token {
                kind: TokenKind::Punct,
                text: (*op).to_string(),
                line,
            });
            i += op.len();
            continue;
        }
        tokens.push(Token {
            kind: TokenKind::Punct,
            text: c.to_string(),
            line,
        });
        i += 1;
    }
    tokens
}

fn text_at(bytes: &[char], at: usize, needle: &str) -> bool {
    needle
        .chars()
        .enumerate()
        .all(|(k, c)| bytes.get(at + k) == Some(&c))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts(tokens: &[Token]) -> Vec<&str> {
        tokens.iter().map(|t| t.text.as_str()).collect()
    }

    #[test]
    fn classifies_kinds() {
        let toks = tokenize("int x = f(3);");
        let kinds: Vec<TokenKind> = toks.iter().map(|t| t.kind).collect();
        assert_eq!(
            kinds,
            vec![
                TokenKind::Keyword,
                TokenKind::Ident,
                TokenKind::Punct,
                TokenKind::Ident,
                TokenKind::Punct,
                TokenKind::Literal,
                TokenKind::Punct,
                TokenKind::Punct,
            ]
        );
    }

    #[test]
    fn tracks_line_numbers() {
        let toks = tokenize("a\nb\n\nc");
        let lines: Vec<u32> = toks.iter().map(|t| t.line).collect();
        assert_eq!(lines, vec![1, 2, 4]);
    }

    #[test]
    fn maximal_munch_on_operators() {
        assert_eq!(
            texts(&tokenize("a<<=b==c->d")),
            vec!["a", "<<=", "b", "==", "c", "->", "d"]
        );
    }

    #[test]
    fn equality_is_not_assignment() {
        let toks = tokenize("a == b; a = b; a += b;");
        let ops: Vec<bool> = toks
            .iter()
            .filter(|t| t.kind == TokenKind::Punct && t.text != ";")
            .map(|t| is_assign_op(&t.text))
            .collect();
        assert_eq!(ops, vec![false, true, true]);
    }

    #[test]
    fn string_literal_is_one_token() {
        let toks = tokenize("s = \"a, b; c\";");
        assert_eq!(texts(&toks), vec!["s", "=", "\"a, b; c\"", ";"]);
    }

    #[test]
    fn numbers_with_exponents_and_suffixes() {
        assert_eq!(
            texts(&tokenize("1e+5 0x1F 3.14f 10UL")),
            vec!["1e+5", "0x1F", "3.14f", "10UL"]
        );
    }
}
