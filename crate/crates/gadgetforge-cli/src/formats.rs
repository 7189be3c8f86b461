//! On-disk formats owned by the driver: the vocabulary file, `id,value`
//! label/prediction CSVs, the cleaning report CSV, and parsing of the
//! evaluation CSV back into fold tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use anyhow::{bail, Context, Result};
use gadgetforge::clean::CleanReport;
use gadgetforge::eval::{Metric, MetricSet, Summary, METRIC_NAMES};
use gadgetforge::token::{VocabKind, Vocabulary};

// ---------------------------------------------------------------------------
// Vocabulary files

/// Single-file layout: a `kind = …` line, the token table, and (for BPE) the
/// merge rules. Section markers cannot collide with content: token lines
/// always contain a tab, merge lines always contain a space.
pub fn vocab_to_file(vocab: &Vocabulary) -> String {
    let kind = match vocab.kind {
        VocabKind::Word => "word",
        VocabKind::Bpe => "bpe",
    };
    let mut out = format!("kind = {kind}\n[tokens]\n");
    out.push_str(&vocab.to_text());
    if vocab.kind == VocabKind::Bpe {
        out.push_str("[merges]\n");
        out.push_str(&vocab.merges_to_text());
    }
    out
}

pub fn vocab_from_file(text: &str) -> Result<Vocabulary> {
    let mut lines = text.lines();
    let kind = match lines.next().map(str::trim) {
        Some("kind = word") => VocabKind::Word,
        Some("kind = bpe") => VocabKind::Bpe,
        other => bail!("vocabulary file must start with `kind = word|bpe`, got {other:?}"),
    };
    let rest: Vec<&str> = lines.collect();
    let mut sections: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    let mut current: Option<&str> = None;
    for line in rest {
        match line.trim_end() {
            "[tokens]" => current = Some("tokens"),
            "[merges]" => current = Some("merges"),
            content => {
                let section = current.context("content before any section header")?;
                sections.entry(section).or_default().push(content);
            }
        }
    }
    let tokens = sections
        .get("tokens")
        .context("vocabulary file has no [tokens] section")?
        .join("\n");
    let mut vocab = Vocabulary::from_text(&tokens, kind)?;
    if let Some(merges) = sections.get("merges") {
        vocab.merges_from_text(&merges.join("\n"))?;
    }
    Ok(vocab)
}

// ---------------------------------------------------------------------------
// id,value CSVs

/// Parse `id,<column>` lines into an id-keyed map. A first line whose second
/// field is not numeric is treated as a header and skipped; duplicate ids are
/// an error.
pub fn read_id_value_csv(text: &str, column: &str) -> Result<BTreeMap<u64, u32>> {
    let mut map = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let Some((id, value)) = line.split_once(',') else {
            bail!("line {}: expected `id,{column}`", idx + 1);
        };
        let (id, value) = (id.trim(), value.trim());
        if idx == 0 && value.parse::<u32>().is_err() {
            continue; // header row
        }
        let id: u64 = id
            .parse()
            .with_context(|| format!("line {}: bad id `{id}`", idx + 1))?;
        let value: u32 = value
            .parse()
            .with_context(|| format!("line {}: bad {column} `{value}`", idx + 1))?;
        if map.insert(id, value).is_some() {
            bail!("line {}: duplicate id {id}", idx + 1);
        }
    }
    Ok(map)
}

// ---------------------------------------------------------------------------
// Cleaning report

/// `key,value` CSV mirroring the cleaning report: the three removal
/// counters, then per-class original/cleaned/removed columns.
pub fn clean_report_csv(report: &CleanReport) -> String {
    let mut out = String::from("key,value\n");
    let _ = writeln!(out, "confliction,{}", report.confliction);
    let _ = writeln!(out, "redundancy,{}", report.redundancy);
    let _ = writeln!(out, "both,{}", report.both);
    for (label, counts) in &report.per_class {
        let key = match label {
            Some(l) => l.to_string(),
            None => "none".to_string(),
        };
        let _ = writeln!(out, "class.{key}.original,{}", counts.original);
        let _ = writeln!(out, "class.{key}.cleaned,{}", counts.cleaned);
        let _ = writeln!(
            out,
            "class.{key}.conflict_removed,{}",
            counts.conflict_removed
        );
        let _ = writeln!(out, "class.{key}.dedup_removed,{}", counts.dedup_removed);
    }
    out
}

// ---------------------------------------------------------------------------
// Evaluation CSV, read back for `report`

/// The global (micro-averaged) metrics of every `group,model,fold` triple in
/// an evaluation CSV, keyed for table assembly.
pub type FoldMetrics = BTreeMap<(String, String), BTreeMap<u32, MetricSet>>;

pub fn read_eval_csv(text: &str, into: &mut FoldMetrics) -> Result<()> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == gadgetforge::eval::CSV_HEADER => {}
        other => bail!("not an evaluation CSV (bad header line: {other:?})"),
    }
    // (group, model, fold) -> metric name -> Metric
    let mut cells: BTreeMap<(String, String, u32), BTreeMap<String, Metric>> = BTreeMap::new();
    for (idx, raw) in lines {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            bail!(
                "line {}: expected 7 fields, found {}",
                idx + 1,
                fields.len()
            );
        }
        let [group, model, fold, class, metric, value, defined] = [
            fields[0], fields[1], fields[2], fields[3], fields[4], fields[5], fields[6],
        ];
        if class != "global" {
            continue;
        }
        let fold: u32 = fold
            .parse()
            .with_context(|| format!("line {}: bad fold `{fold}`", idx + 1))?;
        let value: f64 = value
            .parse()
            .with_context(|| format!("line {}: bad value `{value}`", idx + 1))?;
        let defined: bool = defined
            .parse()
            .with_context(|| format!("line {}: bad defined flag `{defined}`", idx + 1))?;
        cells
            .entry((group.to_string(), model.to_string(), fold))
            .or_default()
            .insert(metric.to_string(), Metric { value, defined });
    }
    for ((group, model, fold), metrics) in cells {
        let get = |name: &str| -> Result<Metric> {
            metrics
                .get(name)
                .copied()
                .with_context(|| format!("{group}/{model} fold {fold}: missing global {name}"))
        };
        let set = MetricSet {
            fpr: get("fpr")?,
            fnr: get("fnr")?,
            precision: get("precision")?,
            recall: get("recall")?,
            f1: get("f1")?,
        };
        into.entry((group, model)).or_default().insert(fold, set);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Single-evaluation text table

/// Render one summary as a table: a row per class, then the global
/// (micro-averaged) row, then the macro averages. FPR/FNR have no macro
/// definition, so those cells hold `-`.
pub fn summary_table(summary: &Summary) -> String {
    let mut out = format!(
        "{:<8} {:>9} {:>9} {:>9} {:>9} {:>9}\n",
        "Class", "FPR", "FNR", "Precision", "Recall", "F1"
    );
    let mut row = |name: &str, cells: [String; 5]| {
        let _ = writeln!(
            out,
            "{name:<8} {:>9} {:>9} {:>9} {:>9} {:>9}",
            cells[0], cells[1], cells[2], cells[3], cells[4]
        );
    };
    let metric_cells = |m: &MetricSet| -> [String; 5] {
        METRIC_NAMES.map(|name| m.by_name(name).unwrap().display())
    };
    for (class, set) in &summary.per_class {
        row(&class.to_string(), metric_cells(set));
    }
    row("global", metric_cells(&summary.global));
    row(
        "macro",
        [
            "-".to_string(),
            "-".to_string(),
            summary.macro_precision.display(),
            summary.macro_recall.display(),
            summary.macro_f1.display(),
        ],
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use gadgetforge::eval::{aggregate, Confusion};
    use gadgetforge::token::{build_word_vocab, train_bpe};

    #[test]
    fn word_vocab_file_round_trips() {
        let texts = ["a b c a", "b c d"];
        let vocab = build_word_vocab(texts.iter().copied(), 64, 1);
        let reread = vocab_from_file(&vocab_to_file(&vocab)).unwrap();
        assert_eq!(vocab, reread);
    }

    #[test]
    fn bpe_vocab_file_round_trips_with_merges() {
        let texts = ["abab abab", "ababab"];
        let vocab = train_bpe(texts.iter().copied(), 6);
        assert!(!vocab.merges.is_empty());
        let reread = vocab_from_file(&vocab_to_file(&vocab)).unwrap();
        assert_eq!(vocab, reread);
        assert_eq!(vocab.merges, reread.merges);
    }

    #[test]
    fn vocab_file_requires_kind_line() {
        assert!(vocab_from_file("[tokens]\nx\t0\n").is_err());
    }

    #[test]
    fn id_value_csv_skips_header_and_rejects_duplicates() {
        let map = read_id_value_csv("id,pred\n3,1\n1,0\n", "pred").unwrap();
        assert_eq!(map.get(&3), Some(&1));
        assert_eq!(map.get(&1), Some(&0));
        assert!(read_id_value_csv("1,0\n1,1\n", "pred").is_err());
        assert!(read_id_value_csv("1;0\n", "pred").is_err());
    }

    #[test]
    fn eval_csv_round_trips_global_rows() {
        let summary = aggregate(&[(
            1,
            Confusion {
                true_pos: 9,
                false_pos: 1,
                false_neg: 3,
                true_neg: 7,
            },
        )])
        .unwrap();
        let rows = gadgetforge::eval::summary_rows("g1", "bilstm", 2, &summary);
        let csv = gadgetforge::eval::csv_report(&rows);
        let mut folds = FoldMetrics::new();
        read_eval_csv(&csv, &mut folds).unwrap();
        let per_fold = &folds[&("g1".to_string(), "bilstm".to_string())];
        let set = per_fold.get(&2).expect("fold 2 present");
        assert!((set.precision.value - 0.9).abs() < 1e-12);
        assert!((set.recall.value - 0.75).abs() < 1e-12);
    }

    #[test]
    fn summary_table_has_global_and_macro_rows() {
        let summary = aggregate(&[(
            1,
            Confusion {
                true_pos: 1,
                false_pos: 0,
                false_neg: 0,
                true_neg: 1,
            },
        )])
        .unwrap();
        let table = summary_table(&summary);
        assert!(table.contains("global"));
        assert!(table.contains("macro"));
        assert!(table.lines().count() >= 4);
    }
}
