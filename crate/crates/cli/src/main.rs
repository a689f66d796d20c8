//! `ctc`: prepare corpora, train models, assemble and run the 21-model
//! ensemble, and emit evaluation reports.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or integrity error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ctc_core::corpus::Fraction;
use ctc_core::ModelConfig;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
}

impl From<ctc_core::Error> for CliError {
    fn from(e: ctc_core::Error) -> Self {
        if e.is_data_error() {
            CliError::Data(e.to_string())
        } else {
            CliError::Usage(e.to_string())
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "ctc", version, about = "Cybersecurity topic classifier")]
pub struct Cli {
    /// key = value run configuration; flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Clean and length-filter a JSONL corpus; writes JSONL plus stats JSON.
    Prep(PrepArgs),
    /// Train one model and write its container file.
    Train(TrainArgs),
    /// Train every family on every corpus and validate across sources.
    Crossval(CrossvalArgs),
    /// Label documents with a saved ensemble; writes verdict JSONL.
    Classify(ClassifyArgs),
    /// FN/FP rates as a function of the minimum usable token count.
    SweepTokens(SweepArgs),
    /// Error rates per confidence bin for one model.
    Confidence(ConfidenceArgs),
    /// Ensemble throughput at increasing batch sizes.
    Bench(BenchArgs),
    /// Bundle trained model files and a dictionary into an ensemble directory.
    Assemble(AssembleArgs),
    /// prep, train x21, crossval, confidence and bench in one run.
    Reproduce(ReproduceArgs),
}

#[derive(Args, Debug)]
pub struct PrepArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    dict: Option<PathBuf>,
    #[arg(long)]
    min_tokens: Option<usize>,
    #[arg(long)]
    output: PathBuf,
    /// Stats JSON path; defaults to `<output>.stats.json`.
    #[arg(long)]
    stats: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Source tag for the model; defaults to the corpus documents' source.
    #[arg(long)]
    source: Option<String>,
    #[arg(long)]
    family: ModelConfig,
    /// Accuracy threshold for `--family dnn`.
    #[arg(long)]
    dnn_threshold: Option<f64>,
    /// Comma-separated hidden widths for network families.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    dict: Option<PathBuf>,
    #[arg(long)]
    min_tokens: Option<usize>,
    /// Fraction of the corpus used for training, e.g. `1/2`.
    #[arg(long)]
    split: Option<Fraction>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Fit IDF on the training documents instead of the dictionary.
    #[arg(long)]
    fit_on_corpus: bool,
}

#[derive(Args, Debug)]
pub struct CrossvalArgs {
    /// Corpus files as `[SOURCE=]PATH`.
    #[arg(long, num_args = 1..)]
    corpora: Vec<String>,
    #[arg(long, num_args = 1.., value_delimiter = ',')]
    families: Option<Vec<ModelConfig>>,
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    dict: Option<PathBuf>,
    #[arg(long)]
    min_tokens: Option<usize>,
    #[arg(long)]
    split: Option<Fraction>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Also save the trained models and an ensemble manifest here.
    #[arg(long)]
    save_models: bool,
    /// Fit IDF on the training documents instead of the dictionary.
    #[arg(long)]
    fit_on_corpus: bool,
}

#[derive(Args, Debug)]
pub struct ClassifyArgs {
    /// `ensemble.json` or the directory holding it.
    #[arg(long)]
    ensemble: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// Verdict JSONL; standard output when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, num_args = 1.., value_delimiter = ',')]
    families: Option<Vec<ModelConfig>>,
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    n_values: Option<Vec<usize>>,
    /// Per-class documents per side as `CYBER,NONCYBER`, `paper` for the
    /// source's full-scale sizes, or `all`.
    #[arg(long, default_value = "paper")]
    subset: String,
    #[arg(long)]
    dict: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ConfidenceArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    bins: Option<usize>,
    #[arg(long)]
    dict: Option<PathBuf>,
    #[arg(long)]
    min_tokens: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long)]
    ensemble: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
pub struct AssembleArgs {
    #[arg(long)]
    dict: Option<PathBuf>,
    #[arg(long, num_args = 1..)]
    models: Vec<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct ReproduceArgs {
    /// Corpus files as `[SOURCE=]PATH`.
    #[arg(long, num_args = 1..)]
    corpora: Vec<String>,
    #[arg(long, num_args = 1.., value_delimiter = ',')]
    families: Option<Vec<ModelConfig>>,
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    dict: Option<PathBuf>,
    #[arg(long)]
    min_tokens: Option<usize>,
    #[arg(long)]
    split: Option<Fraction>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    bins: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    bench_sizes: Option<Vec<usize>>,
    #[arg(long)]
    bench_repeats: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Fit IDF on the training documents instead of the dictionary.
    #[arg(long)]
    fit_on_corpus: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(CliError::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
