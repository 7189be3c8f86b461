//! `gadgetforge` — drives the gadget pipeline end to end.
//!
//! Seven subcommands mirror the pipeline stages: `extract` slices gadgets
//! out of C/C++ sources, `clean` removes label conflicts and duplicates,
//! `prepare` symbolizes/groups/splits, `tokenize` builds a vocabulary,
//! `train` fits a classifier, `eval` scores predictions or a checkpoint,
//! and `report` renders metric tables.
//!
//! Every setting resolves flag > `GADGETFORGE_*` environment variable >
//! config file > built-in default. Stage outputs are written atomically and
//! guarded by a content-digest memo: re-running a stage with unchanged
//! inputs is a no-op unless `--force` is given.

mod config;
mod formats;
mod memo;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::Settings;

/// How a failed run exits: 1 usage, 2 bad data, 3 internal fault.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags, bad config values, missing required settings.
    Usage(String),
    /// Inputs exist but their content is unusable (parse errors and the like).
    Data(anyhow::Error),
    /// I/O faults and violated internal expectations.
    Internal(anyhow::Error),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Internal(_) => 3,
        }
    }
}

pub fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

/// Classify an error result at the call site.
pub trait Classify<T> {
    fn or_data(self) -> Result<T, Failure>;
    fn or_internal(self) -> Result<T, Failure>;
    fn or_usage(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn or_data(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Data(e.into()))
    }

    fn or_internal(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Internal(e.into()))
    }

    fn or_usage(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Usage(format!("{:#}", e.into())))
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "gadgetforge",
    version,
    about = "Code-gadget pipeline: extraction, cleaning, preparation, tokenization, training, evaluation"
)]
struct Cli {
    /// Config file: `key = value` lines under `[section]` headers.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Re-run the stage even when inputs are unchanged.
    #[arg(long, global = true)]
    force: bool,

    /// Worker cap; stages currently run single-threaded.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Slice code gadgets out of a C/C++ source tree.
    Extract(ExtractArgs),
    /// Drop label conflicts and duplicate gadgets from a corpus.
    Clean(CleanArgs),
    /// Symbolize, assemble groups, assign labels, and split train/test.
    Prepare(PrepareArgs),
    /// Build a word or byte-pair vocabulary from corpora.
    Tokenize(TokenizeArgs),
    /// Train a classifier and checkpoint its best state.
    Train(TrainArgs),
    /// Score a predictions file or a trained checkpoint.
    Eval(EvalArgs),
    /// Render per-fold metric tables from evaluation CSVs.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct ExtractArgs {
    /// Root of the source tree to ingest [config: extract.sources].
    #[arg(long)]
    pub sources: Option<PathBuf>,
    /// API list file, one function per line [config: extract.api].
    #[arg(long)]
    pub api: Option<PathBuf>,
    /// Output corpus path [config: extract.out].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Skip unreadable files instead of failing [config: extract.permissive].
    #[arg(long)]
    pub permissive: bool,
}

#[derive(Args, Debug)]
pub struct CleanArgs {
    /// Input corpus [config: clean.in].
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    /// Cleaned corpus output [config: clean.out].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Removal-count report (CSV) [config: clean.report].
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Keep trailing whitespace when comparing bodies.
    #[arg(long)]
    pub keep_trailing_ws: bool,
    /// Keep blank edge lines when comparing bodies.
    #[arg(long)]
    pub keep_blank_edges: bool,
}

#[derive(Args, Debug)]
pub struct PrepareArgs {
    /// Input corpus as CATEGORY=PATH (repeatable) [config: prepare.in].
    #[arg(long = "in")]
    pub inputs: Vec<String>,
    /// Output directory; one subdirectory per group [config: prepare.out-dir].
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Only build the named group (for example `group1`) [config: prepare.group].
    #[arg(long)]
    pub group: Option<String>,
    /// Group spec file (`name = CAT,CAT` lines); default is the standard
    /// eight groups [config: prepare.groups].
    #[arg(long)]
    pub groups: Option<PathBuf>,
    /// Label file (`id,label` CSV) for unlabeled records [config: prepare.labels].
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Labeling mode: binary or multiclass [config: prepare.mode].
    #[arg(long)]
    pub mode: Option<String>,
    /// Train:test ratio, e.g. `80:20` [config: prepare.split].
    #[arg(long)]
    pub split: Option<String>,
    /// Cross-validation fold count; 0 disables folds [config: prepare.folds].
    #[arg(long)]
    pub folds: Option<usize>,
    /// API list kept verbatim during symbolization [config: prepare.api].
    #[arg(long)]
    pub api: Option<PathBuf>,
    /// Split/fold seed [config: pipeline.seed].
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct TokenizeArgs {
    /// Input corpus (repeatable) [config: tokenize.in].
    #[arg(long = "in")]
    pub inputs: Vec<PathBuf>,
    /// Vocabulary output path [config: tokenize.out].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Vocabulary kind: `word` or `bpe` [config: tokenize.mode].
    #[arg(long)]
    pub mode: Option<String>,
    /// Word mode: vocabulary size cap, special tokens included
    /// [config: tokenize.max-size].
    #[arg(long)]
    pub max_size: Option<usize>,
    /// Word mode: minimum occurrences for a token [config: tokenize.min-freq].
    #[arg(long)]
    pub min_freq: Option<u64>,
    /// BPE mode: number of merges to learn [config: tokenize.merges].
    #[arg(long)]
    pub merges: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Training corpus [config: train.train].
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Held-out corpus evaluated every epoch [config: train.test].
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Vocabulary file from `tokenize` [config: train.vocab].
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Model family: `bilstm`, `bigru`, or `encoder` [config: train.model].
    #[arg(long)]
    pub model: Option<String>,
    /// Checkpoint output path [config: train.out].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-epoch run log (CSV) [config: train.log].
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Class count, non-vulnerable class included [config: train.classes].
    #[arg(long)]
    pub classes: Option<usize>,
    /// Sequence length every gadget is padded/truncated to [config: train.max-len].
    #[arg(long)]
    pub max_len: Option<usize>,
    /// Truncation side when a gadget overflows: `head` or `tail`
    /// [config: train.truncation].
    #[arg(long)]
    pub truncation: Option<String>,
    /// Embedding width (model width for the encoder) [config: train.embed-dim].
    #[arg(long)]
    pub embed_dim: Option<usize>,
    /// Hidden units per recurrent direction [config: train.hidden].
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Encoder block count [config: train.layers].
    #[arg(long)]
    pub layers: Option<usize>,
    /// Attention head count [config: train.heads].
    #[arg(long)]
    pub heads: Option<usize>,
    /// Classification head: `linear`, `dropout_linear`, `relu_tower`,
    /// `tanh_tower` [config: train.head].
    #[arg(long)]
    pub head: Option<String>,
    /// Feature pooling: `first` or `last` [config: train.pool].
    #[arg(long)]
    pub pool: Option<String>,
    /// Dropout probability in the classification head [config: train.dropout].
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Peak learning rate [config: train.lr].
    #[arg(long)]
    pub lr: Option<f64>,
    /// Decoupled weight-decay coefficient [config: train.weight-decay].
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Warmup steps before the peak rate [config: train.warmup].
    #[arg(long)]
    pub warmup: Option<u64>,
    /// Batch size [config: train.batch].
    #[arg(long)]
    pub batch: Option<usize>,
    /// Epoch count; default depends on the family [config: train.epochs].
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Learning-rate schedule: `linear` or `stepwise` [config: train.schedule].
    #[arg(long)]
    pub schedule: Option<String>,
    /// Init/shuffle/dropout seed [config: pipeline.seed].
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Predictions CSV (`id,pred`); needs --labels [config: eval.preds].
    #[arg(long, conflicts_with_all = ["model", "test", "vocab"])]
    pub preds: Option<PathBuf>,
    /// Gold labels CSV (`id,label`) [config: eval.labels].
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Label scheme: `binary` or `multiclassN` [config: eval.scheme].
    #[arg(long)]
    pub scheme: Option<String>,
    /// Trained checkpoint to score; needs --test and --vocab [config: eval.model].
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Labeled corpus to score the checkpoint on [config: eval.test].
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Vocabulary file from `tokenize` [config: eval.vocab].
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Truncation side, as in `train` [config: eval.truncation].
    #[arg(long)]
    pub truncation: Option<String>,
    /// Metric rows output (CSV) [config: eval.report].
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Group name recorded in the report [config: eval.group].
    #[arg(long)]
    pub group: Option<String>,
    /// Model name recorded in the report [config: eval.name].
    #[arg(long)]
    pub name: Option<String>,
    /// Fold number recorded in the report [config: eval.fold].
    #[arg(long)]
    pub fold: Option<u32>,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Evaluation CSV (repeatable) [config: report.in].
    #[arg(long = "in")]
    pub inputs: Vec<PathBuf>,
    /// Write tables here instead of stdout [config: report.out].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help/--version arrive as "errors" but are successful runs.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };

    let result = run(cli);
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            match &failure {
                Failure::Usage(msg) => eprintln!("error: {msg}"),
                Failure::Data(e) => eprintln!("error: {e:#}"),
                Failure::Internal(e) => eprintln!("error: {e:#}"),
            }
            ExitCode::from(failure.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let settings = Settings::load(cli.config.as_deref()).or_usage()?;
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(usage("--jobs must be at least 1"));
        }
    }
    let force = cli.force;
    match cli.command {
        Command::Extract(args) => stages::extract(&args, &settings, force),
        Command::Clean(args) => stages::clean(&args, &settings, force),
        Command::Prepare(args) => stages::prepare(&args, &settings, force),
        Command::Tokenize(args) => stages::tokenize(&args, &settings, force),
        Command::Train(args) => stages::train(&args, &settings, force),
        Command::Eval(args) => stages::eval(&args, &settings, force),
        Command::Report(args) => stages::report(&args, &settings, force),
    }
}
