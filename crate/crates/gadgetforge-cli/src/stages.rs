//! The seven pipeline stages behind the subcommands.
//!
//! Each stage resolves its settings, reads its inputs, and then consults the
//! content-digest memo: when the digest matches the previous run and the
//! outputs still exist, the stage is a no-op (unless `--force`). All file
//! writes go through [`memo::write_atomic`].

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;

use gadgetforge::clean::{clean_corpus, CanonicalizeOptions};
use gadgetforge::corpus::{
    build_manifest, ingest_source_tree, parse_gadget_corpus, write_gadget_corpus, GadgetRecord,
    ParseOptions, Stage, VulnCategory,
};
use gadgetforge::eval::{aggregate, csv_report, fold_table, summary_rows, Confusion, Summary};
use gadgetforge::extract::{default_api_list, extract_gadgets, load_api_list, SourceUnit};
use gadgetforge::nn::{
    build_classifier, model_from_checkpoint, read_checkpoint, Classifier, HeadKind, ModelConfig,
    ModelFamily, PoolKind,
};
use gadgetforge::prep::{
    build_groups, default_group_specs, make_folds, parse_group_specs, split_train_test, symbolize,
    write_id_file, DatasetGroup, GroupSpec, LabelMode,
};
use gadgetforge::token::{
    build_word_vocab, encode, train_bpe, TokenSequence, Truncation, Vocabulary,
};
use gadgetforge::train::{default_epochs, run_log_csv, Schedule, TrainConfig, TrainError};

use crate::config::Settings;
use crate::formats;
use crate::memo::{is_current, memo_path, record, write_atomic, StageDigest};
use crate::{
    usage, Classify, CleanArgs, EvalArgs, ExtractArgs, Failure, PrepareArgs, ReportArgs,
    TokenizeArgs, TrainArgs,
};

// ---------------------------------------------------------------------------
// Shared helpers

fn read_bytes(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .or_data()
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .or_data()
}

fn write_out(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    write_atomic(path, bytes)
        .with_context(|| format!("cannot write {}", path.display()))
        .or_internal()
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "corpus".to_string())
}

/// A bool flag resolved like any other setting: the flag can only turn the
/// switch on; when absent, env/file/default decide.
fn flag_or(settings: &Settings, set: bool, key: &str, default: bool) -> Result<bool, Failure> {
    settings
        .get_or(if set { Some(true) } else { None }, key, default)
        .or_usage()
}

fn api_list(
    settings: &Settings,
    flag: &Option<PathBuf>,
    key: &str,
) -> Result<(BTreeSet<String>, String), Failure> {
    let path: Option<PathBuf> = settings.get(flag.clone(), key).or_usage()?;
    match path {
        Some(p) => {
            let text = read_text(&p)?;
            Ok((load_api_list(&text), text))
        }
        None => {
            let api = default_api_list();
            let joined = api.iter().cloned().collect::<Vec<_>>().join("\n");
            Ok((api, joined))
        }
    }
}

/// Group names compare by slug, so `group1`, `Group 1`, and `GROUP1` match.
fn slug(name: &str) -> String {
    name.chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .map(|c| c.to_ascii_lowercase())
        .collect()
}

fn parse_ratio(text: &str) -> Result<f64, Failure> {
    let parse = |s: &str| s.trim().parse::<u64>().ok();
    let parts = text
        .split_once(':')
        .and_then(|(a, b)| Some((parse(a)?, parse(b)?)));
    match parts {
        Some((a, b)) if a + b > 0 => Ok(a as f64 / (a + b) as f64),
        _ => Err(usage(format!(
            "bad split ratio `{text}`; expected something like 80:20"
        ))),
    }
}

/// `binary` → 2 classes, `multiclassN` → N classes.
fn parse_scheme(text: &str) -> Result<u32, Failure> {
    if text == "binary" {
        return Ok(2);
    }
    if let Some(n) = text.strip_prefix("multiclass") {
        if let Ok(n) = n.parse::<u32>() {
            if n >= 2 {
                return Ok(n);
            }
        }
    }
    Err(usage(format!(
        "bad scheme `{text}`; expected binary or multiclassN"
    )))
}

fn parse_truncation(text: &str) -> Result<Truncation, Failure> {
    match text {
        "head" => Ok(Truncation::Head),
        "tail" => Ok(Truncation::Tail),
        other => Err(usage(format!(
            "bad truncation `{other}`; expected head or tail"
        ))),
    }
}

/// Encode labeled records for the model. Unlabeled records are a data error.
fn encode_corpus(
    records: &[GadgetRecord],
    vocab: &Vocabulary,
    max_len: usize,
    trunc: Truncation,
) -> Result<Vec<(TokenSequence, u32)>, Failure> {
    records
        .iter()
        .map(|rec| {
            let label = rec
                .label
                .ok_or_else(|| Failure::Data(anyhow::anyhow!("record {} has no label", rec.id)))?;
            let seq = encode(&rec.body.join("\n"), vocab, max_len, trunc);
            Ok((seq, label))
        })
        .collect()
}

/// Report names become CSV fields, so a comma would corrupt the file.
fn check_csv_name(what: &str, value: &str) -> Result<(), Failure> {
    if value.contains(',') {
        return Err(usage(format!("{what} must not contain a comma: `{value}`")));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// extract

pub fn extract(args: &ExtractArgs, settings: &Settings, force: bool) -> Result<(), Failure> {
    let sources: PathBuf = settings
        .require(args.sources.clone(), "extract.sources", "--sources")
        .or_usage()?;
    let out: PathBuf = settings
        .require(args.out.clone(), "extract.out", "--out")
        .or_usage()?;
    let permissive = flag_or(settings, args.permissive, "extract.permissive", false)?;
    let (api, api_text) = api_list(settings, &args.api, "extract.api")?;

    let ingested = ingest_source_tree(&sources, permissive).or_data()?;
    let units: Vec<SourceUnit> = ingested
        .iter()
        .map(|(path, text)| {
            let rel = path.strip_prefix(&sources).unwrap_or(path);
            SourceUnit::new(rel.to_string_lossy(), text)
        })
        .collect();

    let mut digest = StageDigest::new("extract");
    digest.param("permissive", permissive);
    digest.bytes("api", api_text.as_bytes());
    for ((_, text), unit) in ingested.iter().zip(&units) {
        digest.bytes(&format!("src:{}", unit.path), text.as_bytes());
    }
    let digest = digest.finish();

    let manifest_path = out.with_extension("manifest");
    let memo = memo_path(&out);
    if !force && is_current(&memo, &digest, &[&out, &manifest_path]) {
        log::info!("extract: outputs up to date, skipping");
        return Ok(());
    }

    let records = extract_gadgets(&units, &api);
    write_out(&out, &write_gadget_corpus(&records))?;
    let manifest = build_manifest(&file_stem(&out), Stage::Raw, &records);
    write_out(&manifest_path, manifest.to_text().as_bytes())?;
    record(&memo, &digest).or_internal()?;
    println!(
        "extract: {} gadgets from {} files -> {}",
        records.len(),
        units.len(),
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// clean

pub fn clean(args: &CleanArgs, settings: &Settings, force: bool) -> Result<(), Failure> {
    let input: PathBuf = settings
        .require(args.input.clone(), "clean.in", "--in")
        .or_usage()?;
    let out: PathBuf = settings
        .require(args.out.clone(), "clean.out", "--out")
        .or_usage()?;
    let report_path: Option<PathBuf> = settings
        .get(args.report.clone(), "clean.report")
        .or_usage()?;
    let strip_trailing = !flag_or(
        settings,
        args.keep_trailing_ws,
        "clean.keep-trailing-ws",
        false,
    )?;
    let trim_blank_edges = !flag_or(
        settings,
        args.keep_blank_edges,
        "clean.keep-blank-edges",
        false,
    )?;
    let opts = CanonicalizeOptions {
        strip_trailing,
        trim_blank_edges,
    };

    let bytes = read_bytes(&input)?;
    let mut digest = StageDigest::new("clean");
    digest.param("strip_trailing", strip_trailing);
    digest.param("trim_blank_edges", trim_blank_edges);
    digest.bytes("in", &bytes);
    let digest = digest.finish();

    let manifest_path = out.with_extension("manifest");
    let mut outputs: Vec<&Path> = vec![&out, &manifest_path];
    if let Some(r) = &report_path {
        outputs.push(r);
    }
    let memo = memo_path(&out);
    if !force && is_current(&memo, &digest, &outputs) {
        log::info!("clean: outputs up to date, skipping");
        return Ok(());
    }

    let records = parse_gadget_corpus(&bytes, &ParseOptions::default())
        .with_context(|| format!("in {}", input.display()))
        .or_data()?;
    let (kept, report) = clean_corpus(&records, &opts);
    write_out(&out, &write_gadget_corpus(&kept))?;
    let manifest = build_manifest(&file_stem(&out), Stage::Cleaned, &kept);
    write_out(&manifest_path, manifest.to_text().as_bytes())?;
    if let Some(r) = &report_path {
        write_out(r, formats::clean_report_csv(&report).as_bytes())?;
    }
    record(&memo, &digest).or_internal()?;
    println!(
        "clean: kept {} of {} (confliction {}, redundancy {}, both {})",
        kept.len(),
        records.len(),
        report.confliction,
        report.redundancy,
        report.both
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// prepare

/// Merged corpora can repeat ids, so every record is renumbered 1.. in merge
/// order; the header's first token is rewritten to match.
fn reassign_ids(mut records: Vec<GadgetRecord>) -> Vec<GadgetRecord> {
    for (idx, rec) in records.iter_mut().enumerate() {
        let id = idx as u64 + 1;
        let rest = rec
            .header
            .split_once(char::is_whitespace)
            .map(|(_, rest)| rest)
            .unwrap_or("");
        rec.header = format!("{id} {rest}");
        rec.id = id;
    }
    records
}

fn records_by_id(group: &DatasetGroup, ids: &[u64]) -> Vec<GadgetRecord> {
    let wanted: HashSet<u64> = ids.iter().copied().collect();
    group
        .records
        .iter()
        .filter(|r| wanted.contains(&r.id))
        .cloned()
        .collect()
}

pub fn prepare(args: &PrepareArgs, settings: &Settings, force: bool) -> Result<(), Failure> {
    let inputs = settings.get_list(&args.inputs, "prepare.in");
    if inputs.is_empty() {
        return Err(usage("prepare needs at least one --in CATEGORY=PATH"));
    }
    let out_dir: PathBuf = settings
        .require(args.out_dir.clone(), "prepare.out-dir", "--out-dir")
        .or_usage()?;
    let group_filter: Option<String> = settings
        .get(args.group.clone(), "prepare.group")
        .or_usage()?;
    let groups_path: Option<PathBuf> = settings
        .get(args.groups.clone(), "prepare.groups")
        .or_usage()?;
    let labels_path: Option<PathBuf> = settings
        .get(args.labels.clone(), "prepare.labels")
        .or_usage()?;
    let mode_name: String = settings
        .get_or(args.mode.clone(), "prepare.mode", "binary".into())
        .or_usage()?;
    let mode = match mode_name.as_str() {
        "binary" => LabelMode::Binary,
        "multiclass" => LabelMode::Multiclass,
        other => {
            return Err(usage(format!(
                "bad mode `{other}`; expected binary or multiclass"
            )))
        }
    };
    let split_text: String = settings
        .get_or(args.split.clone(), "prepare.split", "80:20".into())
        .or_usage()?;
    let ratio = parse_ratio(&split_text)?;
    let folds: usize = settings.get_or(args.folds, "prepare.folds", 3).or_usage()?;
    let seed: u64 = settings.get_or(args.seed, "pipeline.seed", 1).or_usage()?;
    let (api, api_text) = api_list(settings, &args.api, "prepare.api")?;

    // Inputs: CATEGORY=PATH pairs.
    let mut corpora: Vec<(VulnCategory, PathBuf, Vec<u8>)> = Vec::new();
    for spec in &inputs {
        let (cat, path) = spec
            .split_once('=')
            .ok_or_else(|| usage(format!("bad input `{spec}`; expected CATEGORY=PATH")))?;
        let cat = VulnCategory::parse(cat.trim())
            .ok_or_else(|| usage(format!("unknown category `{cat}` in `{spec}`")))?;
        let path = PathBuf::from(path.trim());
        let bytes = read_bytes(&path)?;
        corpora.push((cat, path, bytes));
    }
    let label_map = match &labels_path {
        Some(p) => Some(formats::read_id_value_csv(&read_text(p)?, "label").or_data()?),
        None => None,
    };

    // Group specs, filtered down when --group names one.
    let specs_all = match &groups_path {
        Some(p) => parse_group_specs(&read_text(p)?).or_data()?,
        None => default_group_specs(),
    };
    let selected: Vec<GroupSpec> = match &group_filter {
        Some(name) => {
            let wanted = slug(name);
            let hit: Vec<GroupSpec> = specs_all
                .iter()
                .filter(|s| slug(&s.name) == wanted)
                .cloned()
                .collect();
            if hit.is_empty() {
                let known: Vec<String> = specs_all.iter().map(|s| slug(&s.name)).collect();
                return Err(usage(format!(
                    "unknown group `{name}`; known: {}",
                    known.join(", ")
                )));
            }
            hit
        }
        None => specs_all,
    };

    let mut digest = StageDigest::new("prepare");
    digest.param("mode", &mode_name);
    digest.param("split", &split_text);
    digest.param("folds", folds);
    digest.param("seed", seed);
    digest.param("group", group_filter.as_deref().unwrap_or("*"));
    digest.bytes("api", api_text.as_bytes());
    for spec in &selected {
        digest.param("spec", format!("{} = {:?}", spec.name, spec.categories));
    }
    if let Some(map) = &label_map {
        for (id, label) in map {
            digest.param(&format!("label:{id}"), label);
        }
    }
    for (cat, path, bytes) in &corpora {
        digest.bytes(&format!("in:{}:{}", cat.name(), path.display()), bytes);
    }
    let digest = digest.finish();

    // Plan outputs so the memo can check their existence.
    let group_dirs: Vec<(GroupSpec, PathBuf)> = selected
        .iter()
        .map(|s| (s.clone(), out_dir.join(slug(&s.name))))
        .collect();
    let mut outputs: Vec<PathBuf> = Vec::new();
    for (_, dir) in &group_dirs {
        outputs.push(dir.join("train_ids.txt"));
        outputs.push(dir.join("test_ids.txt"));
        outputs.push(dir.join("train.cgd"));
        outputs.push(dir.join("test.cgd"));
        outputs.push(dir.join("manifest.txt"));
        for i in 1..=folds {
            outputs.push(dir.join(format!("fold{i}_ids.txt")));
        }
    }
    let output_refs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
    let memo = out_dir.join("prepare.memo");
    if !force && is_current(&memo, &digest, &output_refs) {
        log::info!("prepare: outputs up to date, skipping");
        return Ok(());
    }

    // Parse, label, renumber, symbolize.
    let mut merged: Vec<GadgetRecord> = Vec::new();
    for (cat, path, bytes) in &corpora {
        let opts = ParseOptions {
            category: Some(*cat),
            ..ParseOptions::default()
        };
        let mut records = parse_gadget_corpus(bytes, &opts)
            .with_context(|| format!("in {}", path.display()))
            .or_data()?;
        if let Some(map) = &label_map {
            for rec in &mut records {
                if rec.label.is_none() {
                    rec.label = map.get(&rec.id).copied();
                }
            }
        }
        merged.extend(records);
    }
    let merged = reassign_ids(merged);
    let merged: Vec<GadgetRecord> = merged.iter().map(|r| symbolize(r, &api)).collect();

    let groups = build_groups(&merged, &selected, mode).or_data()?;
    for (group, (_, dir)) in groups.iter().zip(&group_dirs) {
        let split = split_train_test(group, ratio, seed).or_data()?;
        write_out(
            &dir.join("train_ids.txt"),
            write_id_file(&split.train).as_bytes(),
        )?;
        write_out(
            &dir.join("test_ids.txt"),
            write_id_file(&split.test).as_bytes(),
        )?;
        write_out(
            &dir.join("train.cgd"),
            &write_gadget_corpus(&records_by_id(group, &split.train)),
        )?;
        write_out(
            &dir.join("test.cgd"),
            &write_gadget_corpus(&records_by_id(group, &split.test)),
        )?;
        let manifest = build_manifest(&slug(&group.name), Stage::Split, &group.records);
        write_out(&dir.join("manifest.txt"), manifest.to_text().as_bytes())?;
        if folds > 0 {
            let fold_split = make_folds(group, folds, seed).or_data()?;
            for (i, fold) in fold_split.folds.iter().enumerate() {
                write_out(
                    &dir.join(format!("fold{}_ids.txt", i + 1)),
                    write_id_file(fold).as_bytes(),
                )?;
            }
        }
        println!(
            "prepare: {} -> {} records ({} train / {} test) in {}",
            group.name,
            group.records.len(),
            split.train.len(),
            split.test.len(),
            dir.display()
        );
    }
    record(&memo, &digest).or_internal()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// tokenize

pub fn tokenize(args: &TokenizeArgs, settings: &Settings, force: bool) -> Result<(), Failure> {
    let input_flags: Vec<String> = args
        .inputs
        .iter()
        .map(|p| p.display().to_string())
        .collect();
    let inputs: Vec<PathBuf> = settings
        .get_list(&input_flags, "tokenize.in")
        .into_iter()
        .map(PathBuf::from)
        .collect();
    if inputs.is_empty() {
        return Err(usage("tokenize needs at least one --in corpus"));
    }
    let out: PathBuf = settings
        .require(args.out.clone(), "tokenize.out", "--out")
        .or_usage()?;
    let mode: String = settings
        .get_or(args.mode.clone(), "tokenize.mode", "word".into())
        .or_usage()?;
    let max_size: usize = settings
        .get_or(args.max_size, "tokenize.max-size", 16384)
        .or_usage()?;
    let min_freq: u64 = settings
        .get_or(args.min_freq, "tokenize.min-freq", 1)
        .or_usage()?;
    let merges: usize = settings
        .get_or(args.merges, "tokenize.merges", 8000)
        .or_usage()?;

    let mut digest = StageDigest::new("tokenize");
    digest.param("mode", &mode);
    digest.param("max_size", max_size);
    digest.param("min_freq", min_freq);
    digest.param("merges", merges);
    let mut texts: Vec<String> = Vec::new();
    for path in &inputs {
        let bytes = read_bytes(path)?;
        digest.bytes(&format!("in:{}", path.display()), &bytes);
        let records = parse_gadget_corpus(&bytes, &ParseOptions::default())
            .with_context(|| format!("in {}", path.display()))
            .or_data()?;
        texts.extend(records.iter().map(|r| r.body.join("\n")));
    }
    let digest = digest.finish();

    let memo = memo_path(&out);
    if !force && is_current(&memo, &digest, &[&out]) {
        log::info!("tokenize: vocabulary up to date, skipping");
        return Ok(());
    }

    let vocab = match mode.as_str() {
        "word" => build_word_vocab(texts.iter().map(String::as_str), max_size, min_freq),
        "bpe" => train_bpe(texts.iter().map(String::as_str), merges),
        other => return Err(usage(format!("bad mode `{other}`; expected word or bpe"))),
    };
    write_out(&out, formats::vocab_to_file(&vocab).as_bytes())?;
    record(&memo, &digest).or_internal()?;
    println!(
        "tokenize: {} tokens ({}) from {} gadgets -> {}",
        vocab.len(),
        mode,
        texts.len(),
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train

fn classify_train_error(e: TrainError) -> Failure {
    match e {
        TrainError::Eval(_) | TrainError::EmptyDataset => Failure::Data(e.into()),
        other => Failure::Internal(other.into()),
    }
}

pub fn train(args: &TrainArgs, settings: &Settings, force: bool) -> Result<(), Failure> {
    let train_path: PathBuf = settings
        .require(args.train.clone(), "train.train", "--train")
        .or_usage()?;
    let test_path: PathBuf = settings
        .require(args.test.clone(), "train.test", "--test")
        .or_usage()?;
    let vocab_path: PathBuf = settings
        .require(args.vocab.clone(), "train.vocab", "--vocab")
        .or_usage()?;
    let out: PathBuf = settings
        .require(args.out.clone(), "train.out", "--out")
        .or_usage()?;
    let log_path: Option<PathBuf> = settings.get(args.log.clone(), "train.log").or_usage()?;
    let family_name: String = settings
        .require(args.model.clone(), "train.model", "--model")
        .or_usage()?;
    let family = ModelFamily::parse(&family_name).or_usage()?;
    let classes: usize = settings
        .get_or(args.classes, "train.classes", 2)
        .or_usage()?;
    let seed: u64 = settings.get_or(args.seed, "pipeline.seed", 1).or_usage()?;

    let vocab_bytes = read_bytes(&vocab_path)?;
    let vocab = formats::vocab_from_file(&String::from_utf8_lossy(&vocab_bytes)).or_data()?;

    let mut mc = ModelConfig::new(family, vocab.len(), classes);
    mc.max_len = settings
        .get_or(args.max_len, "train.max-len", mc.max_len)
        .or_usage()?;
    mc.embed_dim = settings
        .get_or(args.embed_dim, "train.embed-dim", mc.embed_dim)
        .or_usage()?;
    mc.hidden = settings
        .get_or(args.hidden, "train.hidden", mc.hidden)
        .or_usage()?;
    mc.layers = settings
        .get_or(args.layers, "train.layers", mc.layers)
        .or_usage()?;
    mc.heads = settings
        .get_or(args.heads, "train.heads", mc.heads)
        .or_usage()?;
    mc.dropout = settings
        .get_or(args.dropout, "train.dropout", mc.dropout)
        .or_usage()?;
    mc.seed = seed;
    let head_name: String = settings
        .get_or(args.head.clone(), "train.head", mc.head.as_str().into())
        .or_usage()?;
    mc.head = HeadKind::parse(&head_name).or_usage()?;
    let pool_name: String = settings
        .get_or(args.pool.clone(), "train.pool", mc.pool.as_str().into())
        .or_usage()?;
    mc.pool = PoolKind::parse(&pool_name).or_usage()?;
    let trunc_name: String = settings
        .get_or(args.truncation.clone(), "train.truncation", "head".into())
        .or_usage()?;
    let trunc = parse_truncation(&trunc_name)?;

    let defaults = TrainConfig::default();
    let schedule_name: String = settings
        .get_or(
            args.schedule.clone(),
            "train.schedule",
            defaults.schedule.as_str().into(),
        )
        .or_usage()?;
    let tc = TrainConfig {
        lr: settings
            .get_or(args.lr, "train.lr", defaults.lr)
            .or_usage()?,
        weight_decay: settings
            .get_or(
                args.weight_decay,
                "train.weight-decay",
                defaults.weight_decay,
            )
            .or_usage()?,
        warmup_steps: settings
            .get_or(args.warmup, "train.warmup", defaults.warmup_steps)
            .or_usage()?,
        batch_size: settings
            .get_or(args.batch, "train.batch", defaults.batch_size)
            .or_usage()?,
        epochs: settings
            .get_or(args.epochs, "train.epochs", default_epochs(family))
            .or_usage()?,
        schedule: Schedule::parse(&schedule_name).or_usage()?,
        seed,
    };

    let train_bytes = read_bytes(&train_path)?;
    let test_bytes = read_bytes(&test_path)?;
    let parse_opts = ParseOptions {
        classes: Some(classes as u32),
        ..ParseOptions::default()
    };
    let train_records = parse_gadget_corpus(&train_bytes, &parse_opts)
        .with_context(|| format!("in {}", train_path.display()))
        .or_data()?;
    let test_records = parse_gadget_corpus(&test_bytes, &parse_opts)
        .with_context(|| format!("in {}", test_path.display()))
        .or_data()?;
    let train_data = encode_corpus(&train_records, &vocab, mc.max_len, trunc)?;
    let test_data = encode_corpus(&test_records, &vocab, mc.max_len, trunc)?;

    let mut digest = StageDigest::new("train");
    for (k, v) in mc.to_pairs() {
        digest.param(&format!("model.{k}"), v);
    }
    digest.param("lr", tc.lr);
    digest.param("weight_decay", tc.weight_decay);
    digest.param("warmup", tc.warmup_steps);
    digest.param("batch", tc.batch_size);
    digest.param("epochs", tc.epochs);
    digest.param("schedule", tc.schedule.as_str());
    digest.param("truncation", &trunc_name);
    digest.bytes("vocab", &vocab_bytes);
    digest.bytes("train", &train_bytes);
    digest.bytes("test", &test_bytes);
    let digest = digest.finish();

    let memo = memo_path(&out);
    let mut outputs: Vec<&Path> = vec![&out];
    if let Some(l) = &log_path {
        outputs.push(l);
    }
    if !force && is_current(&memo, &digest, &outputs) {
        log::info!("train: checkpoint up to date, skipping");
        return Ok(());
    }

    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).or_internal()?;
    }
    let mut model = build_classifier(&mc).or_usage()?;
    log::info!(
        "train: {} on {} records ({} eval), {} epochs",
        family.as_str(),
        train_data.len(),
        test_data.len(),
        tc.epochs
    );
    let outcome =
        gadgetforge::train::train(model.as_mut(), &train_data, &test_data, &tc, Some(&out))
            .map_err(classify_train_error)?;
    if let Some(l) = &log_path {
        write_out(l, run_log_csv(&outcome.logs).as_bytes())?;
    }
    record(&memo, &digest).or_internal()?;
    let best = &outcome.logs[outcome.best_epoch];
    println!(
        "train: best epoch {} of {} (eval F1 {}) -> {}",
        outcome.best_epoch + 1,
        tc.epochs,
        best.eval.f1.display(),
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// eval

fn eval_from_files(preds_text: &str, labels_text: &str, classes: u32) -> Result<Summary, Failure> {
    let preds = formats::read_id_value_csv(preds_text, "pred").or_data()?;
    let golds = formats::read_id_value_csv(labels_text, "label").or_data()?;
    if preds.len() != golds.len() || !preds.keys().all(|id| golds.contains_key(id)) {
        return Err(Failure::Data(anyhow::anyhow!(
            "prediction ids do not match label ids ({} vs {})",
            preds.len(),
            golds.len()
        )));
    }
    for (id, &v) in preds.iter().chain(golds.iter()) {
        if v >= classes {
            return Err(Failure::Data(anyhow::anyhow!(
                "id {id}: value {v} outside the {classes}-class scheme"
            )));
        }
    }
    let pred_vec: Vec<u32> = golds.keys().map(|id| preds[id]).collect();
    let gold_vec: Vec<u32> = golds.values().copied().collect();
    let confusions: Vec<(u32, Confusion)> = (1..classes)
        .map(|c| Confusion::tally(&pred_vec, &gold_vec, c).map(|conf| (c, conf)))
        .collect::<Result<_, _>>()
        .or_data()?;
    aggregate(&confusions).or_data()
}

pub fn eval(args: &EvalArgs, settings: &Settings, force: bool) -> Result<(), Failure> {
    let preds_path: Option<PathBuf> = settings.get(args.preds.clone(), "eval.preds").or_usage()?;
    let model_path: Option<PathBuf> = settings.get(args.model.clone(), "eval.model").or_usage()?;
    let report_path: Option<PathBuf> = settings
        .get(args.report.clone(), "eval.report")
        .or_usage()?;
    let group: String = settings
        .get_or(args.group.clone(), "eval.group", "eval".into())
        .or_usage()?;
    let fold: u32 = settings.get_or(args.fold, "eval.fold", 1).or_usage()?;
    check_csv_name("group", &group)?;

    let mut digest = StageDigest::new("eval");
    digest.param("group", &group);
    digest.param("fold", fold);

    let (summary, model_name) = match (&preds_path, &model_path) {
        (Some(preds), None) => {
            let labels: PathBuf = settings
                .require(args.labels.clone(), "eval.labels", "--labels")
                .or_usage()?;
            let scheme: String = settings
                .get_or(args.scheme.clone(), "eval.scheme", "binary".into())
                .or_usage()?;
            let classes = parse_scheme(&scheme)?;
            let preds_text = read_text(preds)?;
            let labels_text = read_text(&labels)?;
            digest.param("scheme", &scheme);
            digest.bytes("preds", preds_text.as_bytes());
            digest.bytes("labels", labels_text.as_bytes());
            let summary = eval_from_files(&preds_text, &labels_text, classes)?;
            let name: String = settings
                .get_or(args.name.clone(), "eval.name", "preds".into())
                .or_usage()?;
            (summary, name)
        }
        (None, Some(model_path)) => {
            let test: PathBuf = settings
                .require(args.test.clone(), "eval.test", "--test")
                .or_usage()?;
            let vocab_path: PathBuf = settings
                .require(args.vocab.clone(), "eval.vocab", "--vocab")
                .or_usage()?;
            let trunc_name: String = settings
                .get_or(args.truncation.clone(), "eval.truncation", "head".into())
                .or_usage()?;
            let trunc = parse_truncation(&trunc_name)?;

            let ck_bytes = read_bytes(model_path)?;
            let ck = read_checkpoint(model_path).or_data()?;
            let model: Box<dyn Classifier> = model_from_checkpoint(&ck).or_data()?;
            let cfg = model.config().clone();
            let vocab_bytes = read_bytes(&vocab_path)?;
            let vocab = formats::vocab_from_file(&String::from_utf8_lossy(&vocab_bytes)).or_data()?;
            let test_bytes = read_bytes(&test)?;
            let parse_opts = ParseOptions {
                classes: Some(cfg.classes as u32),
                ..ParseOptions::default()
            };
            let records = parse_gadget_corpus(&test_bytes, &parse_opts)
                .with_context(|| format!("in {}", test.display()))
                .or_data()?;
            let data = encode_corpus(&records, &vocab, cfg.max_len, trunc)?;
            digest.param("truncation", &trunc_name);
            digest.bytes("model", &ck_bytes);
            digest.bytes("vocab", &vocab_bytes);
            digest.bytes("test", &test_bytes);
            let summary = gadgetforge::train::evaluate(model.as_ref(), &data)
                .map_err(classify_train_error)?;
            let name: String = settings
                .get_or(args.name.clone(), "eval.name", cfg.family.as_str().into())
                .or_usage()?;
            (summary, name)
        }
        _ => {
            return Err(usage(
                "eval needs exactly one input: --preds with --labels, or --model with --test and --vocab",
            ))
        }
    };
    check_csv_name("model name", &model_name)?;
    digest.param("name", &model_name);

    print!("{}", formats::summary_table(&summary));
    if let Some(report) = &report_path {
        let digest = digest.finish();
        let memo = memo_path(report);
        if !force && is_current(&memo, &digest, &[report]) {
            log::info!("eval: report up to date, skipping write");
            return Ok(());
        }
        let rows = summary_rows(&group, &model_name, fold, &summary);
        write_out(report, csv_report(&rows).as_bytes())?;
        record(&memo, &digest).or_internal()?;
        println!("eval: report -> {}", report.display());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// report

pub fn report(args: &ReportArgs, settings: &Settings, force: bool) -> Result<(), Failure> {
    let input_flags: Vec<String> = args
        .inputs
        .iter()
        .map(|p| p.display().to_string())
        .collect();
    let inputs: Vec<PathBuf> = settings
        .get_list(&input_flags, "report.in")
        .into_iter()
        .map(PathBuf::from)
        .collect();
    if inputs.is_empty() {
        return Err(usage("report needs at least one --in evaluation CSV"));
    }
    let out: Option<PathBuf> = settings.get(args.out.clone(), "report.out").or_usage()?;

    let mut digest = StageDigest::new("report");
    let mut folds = formats::FoldMetrics::new();
    for path in &inputs {
        let text = read_text(path)?;
        digest.bytes(&format!("in:{}", path.display()), text.as_bytes());
        formats::read_eval_csv(&text, &mut folds)
            .with_context(|| format!("in {}", path.display()))
            .or_data()?;
    }
    let digest = digest.finish();

    let mut rendered = String::new();
    for ((group, model), by_fold) in &folds {
        let sets: Vec<_> = by_fold.values().copied().collect();
        if !rendered.is_empty() {
            rendered.push('\n');
        }
        rendered.push_str(&fold_table(&format!("{group} — {model}"), &sets));
    }

    match &out {
        Some(path) => {
            let memo = memo_path(path);
            if !force && is_current(&memo, &digest, &[path]) {
                log::info!("report: tables up to date, skipping");
                return Ok(());
            }
            write_out(path, rendered.as_bytes())?;
            record(&memo, &digest).or_internal()?;
            println!("report: {} table(s) -> {}", folds.len(), path.display());
        }
        None => print!("{rendered}"),
    }
    Ok(())
}
