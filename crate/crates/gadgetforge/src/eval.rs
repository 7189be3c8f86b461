//! Classification metrics and report rendering.
//!
//! Everything is computed one-vs-rest from hard predictions: a
//! [`Confusion`] per positive class, [`MetricSet`]s derived from it, and
//! two aggregations across classes — *global* (sum the confusions, then
//! compute metrics) and *macro* (average the per-class metrics). A metric
//! whose denominator is zero is reported as undefined rather than silently
//! zero, and the renderers print `n/a` for it.

use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{preds} predictions against {labels} labels")]
    LengthMismatch { preds: usize, labels: usize },
    #[error("no vulnerable class to aggregate over")]
    NoVulnerableClasses,
}

/// One-vs-rest confusion counts for a single positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub true_pos: u64,
    pub false_pos: u64,
    pub false_neg: u64,
    pub true_neg: u64,
}

impl Confusion {
    /// Count outcomes treating `positive` as the positive class and every
    /// other label as negative.
    pub fn tally(preds: &[u32], labels: &[u32], positive: u32) -> Result<Confusion, EvalError> {
        if preds.len() != labels.len() {
            return Err(EvalError::LengthMismatch {
                preds: preds.len(),
                labels: labels.len(),
            });
        }
        let mut c = Confusion::default();
        for (&p, &l) in preds.iter().zip(labels) {
            match (p == positive, l == positive) {
                (true, true) => c.true_pos += 1,
                (true, false) => c.false_pos += 1,
                (false, true) => c.false_neg += 1,
                (false, false) => c.true_neg += 1,
            }
        }
        Ok(c)
    }

    pub fn add(&self, other: &Confusion) -> Confusion {
        Confusion {
            true_pos: self.true_pos + other.true_pos,
            false_pos: self.false_pos + other.false_pos,
            false_neg: self.false_neg + other.false_neg,
            true_neg: self.true_neg + other.true_neg,
        }
    }

    pub fn total(&self) -> u64 {
        self.true_pos + self.false_pos + self.false_neg + self.true_neg
    }
}

/// A ratio that may be undefined when its denominator is zero; undefined
/// metrics carry value 0 but must never be rendered as `0.00%`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metric {
    pub value: f64,
    pub defined: bool,
}

impl Metric {
    pub fn defined(value: f64) -> Metric {
        Metric {
            value,
            defined: true,
        }
    }

    pub fn undefined() -> Metric {
        Metric {
            value: 0.0,
            defined: false,
        }
    }

    fn ratio(num: u64, den: u64) -> Metric {
        if den == 0 {
            Metric::undefined()
        } else {
            Metric::defined(num as f64 / den as f64)
        }
    }

    /// `12.34%`-style rendering, or `n/a` when undefined.
    pub fn display(&self) -> String {
        if self.defined {
            format!("{:.2}%", self.value * 100.0)
        } else {
            "n/a".to_string()
        }
    }
}

/// The five report metrics for one confusion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSet {
    pub fpr: Metric,
    pub fnr: Metric,
    pub precision: Metric,
    pub recall: Metric,
    pub f1: Metric,
}

pub const METRIC_NAMES: [&str; 5] = ["fpr", "fnr", "precision", "recall", "f1"];

impl MetricSet {
    pub fn by_name(&self, name: &str) -> Option<Metric> {
        match name {
            "fpr" => Some(self.fpr),
            "fnr" => Some(self.fnr),
            "precision" => Some(self.precision),
            "recall" => Some(self.recall),
            "f1" => Some(self.f1),
            _ => None,
        }
    }
}

/// Derive false-positive rate, false-negative rate, precision, recall and
/// F1 from one confusion.
pub fn metrics(c: &Confusion) -> MetricSet {
    let fpr = Metric::ratio(c.false_pos, c.false_pos + c.true_neg);
    let fnr = Metric::ratio(c.false_neg, c.false_neg + c.true_pos);
    let precision = Metric::ratio(c.true_pos, c.true_pos + c.false_pos);
    let recall = Metric::ratio(c.true_pos, c.true_pos + c.false_neg);
    let f1 = if precision.defined && recall.defined && precision.value + recall.value > 0.0 {
        Metric::defined(2.0 * precision.value * recall.value / (precision.value + recall.value))
    } else {
        Metric::undefined()
    };
    MetricSet {
        fpr,
        fnr,
        precision,
        recall,
        f1,
    }
}

/// Per-class metrics plus the two cross-class aggregations.
#[derive(Debug, Clone)]
pub struct Summary {
    /// `(class, metrics)` in the order the confusions were given.
    pub per_class: Vec<(u32, MetricSet)>,
    /// Metrics of the summed confusion.
    pub global: MetricSet,
    /// Unweighted means of the per-class precision/recall/F1.
    pub macro_precision: Metric,
    pub macro_recall: Metric,
    pub macro_f1: Metric,
}

/// Aggregate per-class confusions for the vulnerable classes (label ≥ 1).
///
/// Class 0 is the non-vulnerable background; it never contributes a
/// one-vs-rest confusion of its own, so passing only vulnerable classes is
/// expected, and an input without any is an error.
pub fn aggregate(confusions: &[(u32, Confusion)]) -> Result<Summary, EvalError> {
    let vulnerable: Vec<&(u32, Confusion)> =
        confusions.iter().filter(|(class, _)| *class != 0).collect();
    if vulnerable.is_empty() {
        return Err(EvalError::NoVulnerableClasses);
    }
    let per_class: Vec<(u32, MetricSet)> = vulnerable
        .iter()
        .map(|(class, c)| (*class, metrics(c)))
        .collect();
    let summed = vulnerable
        .iter()
        .fold(Confusion::default(), |acc, (_, c)| acc.add(c));
    let global = metrics(&summed);
    let macro_of = |pick: fn(&MetricSet) -> Metric| {
        let values: Vec<f64> = per_class
            .iter()
            .map(|(_, m)| pick(m))
            .filter(|m| m.defined)
            .map(|m| m.value)
            .collect();
        if values.len() == per_class.len() {
            Metric::defined(values.iter().sum::<f64>() / values.len() as f64)
        } else if values.is_empty() {
            Metric::undefined()
        } else {
            // Partially defined: average what exists but flag it.
            Metric {
                value: values.iter().sum::<f64>() / values.len() as f64,
                defined: false,
            }
        }
    };
    let macro_precision = macro_of(|m| m.precision);
    let macro_recall = macro_of(|m| m.recall);
    let macro_f1 = macro_of(|m| m.f1);
    Ok(Summary {
        per_class,
        global,
        macro_precision,
        macro_recall,
        macro_f1,
    })
}

/// One row of the flat CSV report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub group: String,
    pub model: String,
    pub fold: u32,
    /// A class number rendered in decimal, or `global` / `macro`.
    pub class: String,
    pub metric: String,
    pub value: f64,
    pub defined: bool,
}

/// Flatten one evaluation summary into CSV rows: per-class, then global,
/// then the macro averages.
pub fn summary_rows(group: &str, model: &str, fold: u32, s: &Summary) -> Vec<ReportRow> {
    let mut rows = Vec::new();
    let mut push = |class: &str, metric: &str, m: Metric| {
        rows.push(ReportRow {
            group: group.to_string(),
            model: model.to_string(),
            fold,
            class: class.to_string(),
            metric: metric.to_string(),
            value: m.value,
            defined: m.defined,
        });
    };
    for (class, set) in &s.per_class {
        for name in METRIC_NAMES {
            push(&class.to_string(), name, set.by_name(name).unwrap());
        }
    }
    for name in METRIC_NAMES {
        push("global", name, s.global.by_name(name).unwrap());
    }
    push("macro", "precision", s.macro_precision);
    push("macro", "recall", s.macro_recall);
    push("macro", "f1", s.macro_f1);
    rows
}

pub const CSV_HEADER: &str = "group,model,fold,class,metric,value,defined";

/// Render report rows as CSV (with header). Values are raw ratios, not
/// percentages, so downstream tooling can do its own formatting.
pub fn csv_report(rows: &[ReportRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.group, r.model, r.fold, r.class, r.metric, r.value, r.defined
        );
    }
    out
}

/// Mean across folds, counting only folds where the metric is defined.
fn fold_average(values: &[Metric]) -> Metric {
    let defined: Vec<f64> = values
        .iter()
        .filter(|m| m.defined)
        .map(|m| m.value)
        .collect();
    if defined.is_empty() {
        Metric::undefined()
    } else {
        Metric::defined(defined.iter().sum::<f64>() / defined.len() as f64)
    }
}

/// Render one metric table: a row per metric, a column per fold, plus the
/// cross-fold average. Percentages use two decimals; undefined cells say
/// `n/a`.
pub fn fold_table(title: &str, folds: &[MetricSet]) -> String {
    const LABELS: [&str; 5] = ["FPR", "FNR", "Precision", "Recall", "F1"];
    let mut out = String::new();
    let _ = writeln!(out, "{title}");
    let mut header = format!("{:<10}", "Metric");
    for i in 0..folds.len() {
        let _ = write!(header, " {:>9}", format!("Fold {}", i + 1));
    }
    let _ = write!(header, " {:>9}", "Average");
    let _ = writeln!(out, "{header}");
    for (label, name) in LABELS.iter().zip(METRIC_NAMES) {
        let mut line = format!("{label:<10}");
        let values: Vec<Metric> = folds.iter().map(|f| f.by_name(name).unwrap()).collect();
        for v in &values {
            let _ = write!(line, " {:>9}", v.display());
        }
        let _ = write!(line, " {:>9}", fold_average(&values).display());
        let _ = writeln!(out, "{line}");
    }
    out
}
