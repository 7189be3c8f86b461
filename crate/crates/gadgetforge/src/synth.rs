//! Deterministic synthetic gadget corpora.
//!
//! Pipeline-level tests need labeled corpora whose classes are actually
//! learnable by a small model. Each synthetic record carries a short
//! class-specific *motif* line near the top of its body — the signal — and
//! a few record-unique filler lines, so that no two records hash equal and
//! duplicate-removal keeps everything. Generation is a pure function of
//! the [`GeneratorSpec`].

use crate::corpus::{GadgetRecord, Origin, VulnCategory};
use crate::rng;

/// Salt for the filler-value stream.
const SYNTH_SALT: u64 = 0x53594e54;

#[derive(Debug, Clone)]
pub struct GeneratorSpec {
    /// Records generated for each class label.
    pub records_per_class: usize,
    /// Label domain size, including the non-vulnerable class 0.
    pub classes: u32,
    /// Unique filler lines per record.
    pub filler_lines: usize,
    /// Category stamped on every record.
    pub category: VulnCategory,
    pub seed: u64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec {
            records_per_class: 50,
            classes: 2,
            filler_lines: 3,
            category: VulnCategory::Be,
            seed: 1,
        }
    }
}

/// The telltale line for a class. Class 0 performs a bounded copy; each
/// vulnerable class calls its own unbounded routine.
pub fn class_motif(label: u32) -> String {
    if label == 0 {
        "safe_copy ( dst , src , cap ) ;".to_string()
    } else {
        format!("risky_op_{label} ( dst , src ) ;")
    }
}

/// Generate `records_per_class · classes` records, classes interleaved
/// round-robin, ids sequential from 1.
pub fn generate(spec: &GeneratorSpec) -> Vec<GadgetRecord> {
    assert!(
        spec.classes >= 2,
        "need the clean class plus one vulnerable"
    );
    let mut r = rng::seeded(spec.seed, SYNTH_SALT);
    let mut out = Vec::with_capacity(spec.records_per_class * spec.classes as usize);
    let mut id: u64 = 0;
    for round in 0..spec.records_per_class {
        for label in 0..spec.classes {
            id += 1;
            let header = format!(
                "{id} synthetic/{}.c sample_{id} {}",
                spec.category.name(),
                round + 1
            );
            let mut body = vec![format!("char * dst = alloc_buffer ( {id} ) ;")];
            body.push(class_motif(label));
            for j in 0..spec.filler_lines {
                let value = rng::below(&mut r, 1_000_000);
                body.push(format!("int aux_{id}_{j} = {value} ;"));
            }
            body.push("return dst ;".to_string());
            let mut rec = GadgetRecord::new(id, header, body);
            rec.label = Some(label);
            rec.origin = Origin::Synthetic;
            rec.category = Some(spec.category);
            out.push(rec);
        }
    }
    out
}
