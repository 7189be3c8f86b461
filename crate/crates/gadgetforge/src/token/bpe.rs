//! Byte-level byte-pair encoding.
//!
//! Training is the classic greedy loop: count adjacent symbol pairs across
//! the corpus, merge the most frequent pair everywhere, repeat. Starting from
//! raw bytes means every input segments without UNK, and decoding is plain
//! concatenation — lossless by construction.

use std::collections::HashMap;

use super::{VocabKind, Vocabulary};

type Pair = (Vec<u8>, Vec<u8>);

/// Apply one merge rule left-to-right, greedily: a freshly merged symbol can
/// immediately pair with the next one (`aaaa` + rule `a a` → `aa aa`).
fn apply_merge(seq: &mut Vec<Vec<u8>>, rule: &Pair) {
    let mut out: Vec<Vec<u8>> = Vec::with_capacity(seq.len());
    let mut i = 0usize;
    while i < seq.len() {
        if i + 1 < seq.len() && seq[i] == rule.0 && seq[i + 1] == rule.1 {
            let mut merged = seq[i].clone();
            merged.extend_from_slice(&seq[i + 1]);
            out.push(merged);
            i += 2;
        } else {
            out.push(std::mem::take(&mut seq[i]));
            i += 1;
        }
    }
    *seq = out;
}

/// Most frequent adjacent pair; ties go to the pair whose first occurrence
/// comes earliest in scan order (sequence by sequence, left to right).
fn best_pair(seqs: &[Vec<Vec<u8>>]) -> Option<Pair> {
    let mut counts: HashMap<Pair, u64> = HashMap::new();
    let mut first_seen: HashMap<Pair, usize> = HashMap::new();
    let mut position = 0usize;
    for seq in seqs {
        for window in seq.windows(2) {
            let pair = (window[0].clone(), window[1].clone());
            *counts.entry(pair.clone()).or_insert(0) += 1;
            first_seen.entry(pair).or_insert(position);
            position += 1;
        }
        position += 1; // sequences never pair across the boundary
    }
    counts
        .into_iter()
        .max_by(|a, b| {
            a.1.cmp(&b.1)
                .then_with(|| first_seen[&b.0].cmp(&first_seen[&a.0]))
        })
        .map(|(pair, _)| pair)
}

/// Learn `merge_count` merges over the corpus. Stops early when no adjacent
/// pair is left to merge. The returned vocabulary holds the four specials,
/// all 256 single bytes, then one token per merge, in that order.
pub fn train_bpe<'a, I>(texts: I, merge_count: usize) -> Vocabulary
where
    I: IntoIterator<Item = &'a str>,
{
    let mut seqs: Vec<Vec<Vec<u8>>> = texts
        .into_iter()
        .map(|t| t.bytes().map(|b| vec![b]).collect())
        .collect();

    let mut vocab = Vocabulary::with_specials(VocabKind::Bpe);
    for b in 0..=255u8 {
        vocab.push(vec![b]);
    }

    for _ in 0..merge_count {
        let Some(pair) = best_pair(&seqs) else {
            break;
        };
        for seq in &mut seqs {
            apply_merge(seq, &pair);
        }
        let mut merged = pair.0.clone();
        merged.extend_from_slice(&pair.1);
        vocab.push(merged);
        vocab.merges.push(pair);
    }
    vocab
}

/// Segment bytes by replaying the merge rules in order.
pub fn bpe_segment(bytes: &[u8], merges: &[Pair]) -> Vec<Vec<u8>> {
    let mut seq: Vec<Vec<u8>> = bytes.iter().map(|&b| vec![b]).collect();
    for rule in merges {
        apply_merge(&mut seq, rule);
    }
    seq
}
