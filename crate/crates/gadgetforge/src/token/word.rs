//! Word-level tokenization: whitespace/punctuation split plus a frequency
//! vocabulary with deterministic tie-breaking.

use std::collections::HashMap;

use super::{VocabKind, Vocabulary};

/// Split on whitespace and punctuation boundaries: identifier/number runs
/// (`[A-Za-z0-9_]+`) are single tokens, every other non-space character is a
/// token of its own. `"VAR_1 += x;"` → `VAR_1`, `+`, `=`, `x`, `;`.
pub fn word_split(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut run = String::new();
    for c in text.chars() {
        if c.is_ascii_alphanumeric() || c == '_' {
            run.push(c);
            continue;
        }
        if !run.is_empty() {
            tokens.push(std::mem::take(&mut run));
        }
        if !c.is_whitespace() {
            tokens.push(c.to_string());
        }
    }
    if !run.is_empty() {
        tokens.push(run);
    }
    tokens
}

/// Build a word vocabulary: count tokens across the corpus, drop those seen
/// fewer than `min_freq` times, keep the most frequent up to `max_size` total
/// entries (specials included). Equal frequencies break lexicographically.
pub fn build_word_vocab<'a, I>(texts: I, max_size: usize, min_freq: u64) -> Vocabulary
where
    I: IntoIterator<Item = &'a str>,
{
    let mut freq: HashMap<String, u64> = HashMap::new();
    for text in texts {
        for tok in word_split(text) {
            *freq.entry(tok).or_insert(0) += 1;
        }
    }
    let mut ranked: Vec<(String, u64)> = freq.into_iter().filter(|&(_, n)| n >= min_freq).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

    let mut vocab = Vocabulary::with_specials(VocabKind::Word);
    let budget = max_size.saturating_sub(vocab.len());
    for (tok, _) in ranked.into_iter().take(budget) {
        vocab.push(tok.into_bytes());
    }
    vocab
}
