//! Source normalization: comment removal and non-ASCII stripping.

use super::ExtractError;

/// Strip `//` and `/* */` comments (string literals protected) and every
/// non-ASCII character. Newlines inside block comments are kept so line
/// numbers downstream still match the original file. Idempotent, and never
/// grows the input.
pub fn normalize_source(text: &str) -> Result<String, ExtractError> {
    // Non-ASCII (and stray CR) removal happens first so that a second run
    // sees exactly the bytes this run produced.
    let ascii: String = text
        .chars()
        .filter(|&c| c != '\r' && (c as u32) < 0x80)
        .collect();
    strip_comments(&ascii)
}

enum State {
    Code,
    Str,
    Chr,
    LineComment,
    BlockComment { start_line: u32 },
}

fn strip_comments(text: &str) -> Result<String, ExtractError> {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.chars().peekable();
    let mut line = 1u32;
    let mut state = State::Code;

    while let Some(c) = chars.next() {
        if c == '\n' {
            line += 1;
        }
        match state {
            State::Code => match c {
                '"' => {
                    out.push(c);
                    state = State::Str;
                }
                '\'' => {
                    out.push(c);
                    state = State::Chr;
                }
                '/' => match chars.peek() {
                    Some('/') => {
                        chars.next();
                        state = State::LineComment;
                    }
                    Some('*') => {
                        chars.next();
                        state = State::BlockComment { start_line: line };
                    }
                    _ => out.push(c),
                },
                _ => out.push(c),
            },
            State::Str | State::Chr => {
                out.push(c);
                let closer = if matches!(state, State::Str) {
                    '"'
                } else {
                    '\''
                };
                if c == '\\' {
                    if let Some(next) = chars.next() {
                        if next == '\n' {
                            line += 1;
                        }
                        out.push(next);
                    }
                } else if c == closer || c == '\n' {
                    // A bare newline ends the literal leniently; broken
                    // sources should not wedge the scanner in string state.
                    state = State::Code;
                }
            }
            State::LineComment => {
                if c == '\n' {
                    out.push(c);
                    state = State::Code;
                }
            }
            State::BlockComment { start_line } => {
                if c == '\n' {
                    out.push(c);
                    state = State::BlockComment { start_line };
                } else if c == '*' && chars.peek() == Some(&'/') {
                    chars.next();
                    state = State::Code;
                }
            }
        }
    }

    if let State::BlockComment { start_line } = state {
        return Err(ExtractError::UnterminatedComment(start_line));
    }
    Ok(out)
}
