mod commands;
mod config;
mod exit;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::exit::Status;

#[derive(Parser, Debug)]
#[command(name = "stereobias", version, about = "Stereotype-bias evaluation for language models")]
struct Cli {
    /// TOML file with run settings; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed passed to the backend and to corpus sampling.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Number of concurrent provider connections.
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Backend endpoint: tcp://host:port, exec:<command>, or mock[:kind].
    #[arg(long, global = true)]
    provider: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check a dataset file and print its summary.
    Validate {
        dataset: PathBuf,
        /// Language tag used when the file has none.
        #[arg(long, default_value = "en")]
        language: String,
    },
    /// Score every example with a backend and write prediction files.
    Predict(PredictArgs),
    /// Compute bias scores from prediction files.
    Score(ScoreArgs),
    /// Predict and score in one step.
    Run(PredictArgs),
    /// Machine-translate a dataset.
    Translate(TranslateArgs),
    /// Write a terminology file that keeps BLANK untranslated.
    Terminology {
        #[arg(long)]
        from: String,
        #[arg(long)]
        to: String,
        /// Extra fixed translations, as SOURCE=TARGET.
        #[arg(long = "entry")]
        entries: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build a next-sentence-prediction corpus from article sentences.
    NspCorpus {
        /// Tab-separated article, index and sentence per line.
        #[arg(long)]
        sentences: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Fraction of negative pairs in the output.
        #[arg(long, default_value_t = 0.5)]
        negative_ratio: f64,
    },
}

#[derive(Args, Debug, Clone)]
struct PredictArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Output directory for predictions and reports.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    language: Option<String>,
    /// Override the backend's model kind: encoder, decoder or encoder_decoder.
    #[arg(long)]
    model_kind: Option<String>,
    /// nsp, gen or gen_orig.
    #[arg(long)]
    inter_mode: Option<String>,
    /// Mask every remaining piece instead of truncating.
    #[arg(long)]
    intra_mlm_trailing_masks: bool,
    /// String placed between context and candidate sentences.
    #[arg(long)]
    joiner: Option<String>,
}

#[derive(Args, Debug)]
struct ScoreArgs {
    /// Prediction files (JSON lines).
    #[arg(required = true)]
    predictions: Vec<PathBuf>,
    /// Run metadata to embed; defaults to meta.json beside the first input.
    #[arg(long)]
    meta: Option<PathBuf>,
    /// Directory for report.json and report.md.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TranslateArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Source language; defaults to the dataset's own tag.
    #[arg(long)]
    from: Option<String>,
    #[arg(long)]
    to: String,
    #[arg(long)]
    out: PathBuf,
    /// Copy text unchanged instead of calling the translation service.
    #[arg(long)]
    identity: bool,
    /// Progress file; finished examples listed there are not sent again.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    concurrency: usize,
    #[arg(long = "entry")]
    entries: Vec<String>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { Status::Config.into() } else { Status::Ok.into() };
        }
    };
    match commands::dispatch(cli) {
        Ok(status) => status.into(),
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            f.status.into()
        }
    }
}

