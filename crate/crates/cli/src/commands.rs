use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use stereobias::corpus::{
    build_nsp_corpus, read_dataset, read_sentences, serialize_dataset, validate_dataset, write_nsp_tsv, TestKind,
};
use stereobias::intra::MaskStyle;
use stereobias::pipeline::{plan, predict, BoxedProvider, Plan};
use stereobias::prediction::{read_records, write_records, PredictionRecord};
use stereobias::provider::client::Endpoint;
use stereobias::provider::{Client, MockProvider, Provider, ProviderError, ProviderInfo};
use stereobias::scoring::build_report;
use stereobias::translate::{
    translate_dataset, validate_translation, HttpTranslator, IdentityTranslator, TerminologySpec, TranslateOptions,
    Translator,
};

use crate::config::{FileConfig, ProviderSpec, RunConfig, RunFlags};
use crate::exit::{CliResult, Failure, Status, WithStatus};
use crate::{Cli, Command, PredictArgs, ScoreArgs, TranslateArgs};

pub const INTRA_FILE: &str = "intra.jsonl";
pub const INTER_FILE: &str = "inter.jsonl";
pub const META_FILE: &str = "meta.json";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_MD: &str = "report.md";

/// Environment variable through which spawned backends receive the seed.
const SEED_ENV: &str = "STEREO_EVAL_SEED";

pub fn dispatch(cli: Cli) -> CliResult<Status> {
    let file = FileConfig::load(cli.config.as_deref())?;
    let seed = cli.seed.or(file.seed);
    match cli.command {
        Command::Validate { dataset, language } => validate(&dataset, &language),
        Command::Predict(args) => {
            let cfg = RunConfig::resolve(run_flags(args, cli.seed, cli.workers, cli.provider), file)?;
            run_predict(&cfg).map(|_| Status::Ok)
        }
        Command::Run(args) => {
            let cfg = RunConfig::resolve(run_flags(args, cli.seed, cli.workers, cli.provider), file)?;
            let meta = run_predict(&cfg)?;
            let records = [INTRA_FILE, INTER_FILE]
                .iter()
                .map(|f| load_records(&cfg.output_dir.join(f)))
                .collect::<CliResult<Vec<_>>>()?
                .concat();
            write_report(&records, Some(meta), &cfg.output_dir).map(|_| Status::Ok)
        }
        Command::Score(args) => score(args),
        Command::Translate(args) => translate(args, file.language),
        Command::Terminology { from, to, entries, out } => terminology(&from, &to, &entries, out.as_deref()),
        Command::NspCorpus { sentences, out, negative_ratio } => {
            nsp_corpus(&sentences, &out, negative_ratio, seed.unwrap_or(0))
        }
    }
}

fn run_flags(a: PredictArgs, seed: Option<u64>, workers: Option<usize>, provider: Option<String>) -> RunFlags {
    RunFlags {
        dataset: a.dataset,
        language: a.language,
        provider,
        model_kind: a.model_kind,
        inter_mode: a.inter_mode,
        trailing_masks: a.intra_mlm_trailing_masks,
        joiner: a.joiner,
        output_dir: a.out,
        workers,
        seed,
    }
}

fn validate(path: &Path, language: &str) -> CliResult<Status> {
    let dataset = read_dataset(path, language).map_err(|e| Failure::from(e).context(format!("{}", path.display())))?;
    let report = validate_dataset(&dataset);
    print_json(&report)?;
    Ok(if report.is_clean() { Status::Ok } else { Status::Domain })
}

/// Opens one backend connection for a worker.
fn connect(spec: &ProviderSpec, seed: u64) -> Result<BoxedProvider, ProviderError> {
    match spec {
        ProviderSpec::Mock(kind) => {
            Ok(Box::new(MockProvider::from_name(kind, seed).expect("mock kind checked when parsing")))
        }
        ProviderSpec::Remote(Endpoint::Exec(cmd)) => {
            let cmd = format!("export {SEED_ENV}={seed}; {cmd}");
            Ok(Box::new(Client::connect(&Endpoint::Exec(cmd))?))
        }
        ProviderSpec::Remote(ep) => Ok(Box::new(Client::connect(ep)?)),
    }
}

fn fingerprint(cfg: &RunConfig, dataset_sha256: &str, info: &ProviderInfo, plan: &Plan) -> Value {
    json!({
        "dataset_sha256": dataset_sha256,
        "language": cfg.language,
        "backend": cfg.provider.describe(),
        "backend_info": info,
        "plan": plan,
        "mask_style": match cfg.pipeline.mask_style {
            MaskStyle::Truncate => "truncate",
            MaskStyle::TrailingMasks => "trailing_masks",
        },
        "joiner": cfg.pipeline.joiner,
        "seed": cfg.seed,
    })
}

/// Writes prediction files and run metadata; returns the metadata.
fn run_predict(cfg: &RunConfig) -> CliResult<Value> {
    let bytes = fs::read(&cfg.dataset)
        .map_err(|e| Failure::from(e).context(format!("cannot read dataset {}", cfg.dataset.display())))?;
    let digest = format!("{:x}", Sha256::digest(&bytes));
    let dataset = stereobias::corpus::parse_dataset(&bytes, &cfg.language)
        .map_err(|e| Failure::from(e).context(format!("{}", cfg.dataset.display())))?;

    let probe = connect(&cfg.provider, cfg.seed).map_err(|e| Failure::from(e).context("cannot reach backend"))?;
    let info = probe.info().clone();
    drop(probe);
    let plan = plan(&info, &cfg.pipeline)?;
    info!(
        "model kind {}, intra {:?}, inter {:?} ({}), {} worker(s)",
        plan.model_kind, plan.intra, plan.inter, plan.inter_mode, cfg.pipeline.workers
    );

    let start = Instant::now();
    let mut outputs = Vec::with_capacity(2);
    for (kind, file) in [(TestKind::Intra, INTRA_FILE), (TestKind::Inter, INTER_FILE)] {
        let examples = dataset.examples(kind);
        info!("{kind}: {} examples", examples.len());
        outputs.push((file, predict(examples, &plan, &cfg.pipeline, || connect(&cfg.provider, cfg.seed))?));
    }
    info!("prediction finished in {:.1?}", start.elapsed());

    fs::create_dir_all(&cfg.output_dir)?;
    for (file, records) in outputs {
        let mut w = BufWriter::new(File::create(cfg.output_dir.join(file))?);
        write_records(&mut w, &records)?;
        w.flush()?;
    }

    let meta = fingerprint(cfg, &digest, &info, &plan);
    write_pretty(&cfg.output_dir.join(META_FILE), &meta)?;
    Ok(meta)
}

fn load_records(path: &Path) -> CliResult<Vec<PredictionRecord>> {
    let f = File::open(path).map_err(|e| Failure::from(e).context(format!("cannot open {}", path.display())))?;
    read_records(BufReader::new(f)).map_err(|e| Failure::from(e).context(format!("{}", path.display())))
}

fn score(args: ScoreArgs) -> CliResult<Status> {
    let mut records = Vec::new();
    for p in &args.predictions {
        records.extend(load_records(p)?);
    }
    let meta_path = args.meta.clone().or_else(|| {
        let candidate = args.predictions[0].parent().unwrap_or(Path::new(".")).join(META_FILE);
        candidate.is_file().then_some(candidate)
    });
    let meta = match meta_path {
        Some(p) => {
            let text = fs::read_to_string(&p)
                .map_err(|e| Failure::from(e).context(format!("cannot read {}", p.display())))?;
            Some(serde_json::from_str(&text).status(Status::Io).map_err(|f| f.context(format!("{}", p.display())))?)
        }
        None => None,
    };
    let out = args
        .out
        .unwrap_or_else(|| args.predictions[0].parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(".")));
    write_report(&records, meta, &out).map(|_| Status::Ok)
}

fn write_report(records: &[PredictionRecord], meta: Option<Value>, out: &Path) -> CliResult<()> {
    let report = build_report(records, meta)?;
    fs::create_dir_all(out)?;
    write_pretty(&out.join(REPORT_JSON), &report)?;
    let md = report.to_markdown();
    fs::write(out.join(REPORT_MD), &md)?;
    print!("{md}");
    Ok(())
}

fn parse_entries(entries: &[String], mut spec: TerminologySpec) -> CliResult<TerminologySpec> {
    for e in entries {
        let (src, tgt) = e
            .split_once('=')
            .ok_or_else(|| Failure::config(format!("terminology entry `{e}` is not SOURCE=TARGET")))?;
        spec = spec.with_entry(src, tgt);
    }
    Ok(spec)
}

fn terminology(from: &str, to: &str, entries: &[String], out: Option<&Path>) -> CliResult<Status> {
    let spec = parse_entries(entries, TerminologySpec::new(from, to)?)?;
    match out {
        Some(p) => fs::write(p, spec.to_bytes())?,
        None => io::stdout().write_all(&spec.to_bytes())?,
    }
    Ok(Status::Ok)
}

fn translate(args: TranslateArgs, default_language: Option<String>) -> CliResult<Status> {
    let fallback = args.from.clone().or(default_language).unwrap_or_else(|| "en".into());
    let source = read_dataset(&args.dataset, &fallback)
        .map_err(|e| Failure::from(e).context(format!("{}", args.dataset.display())))?;
    let from = args.from.unwrap_or_else(|| source.language.clone());
    let spec = parse_entries(&args.entries, TerminologySpec::new(&from, &args.to)?)?;
    if args.concurrency == 0 {
        return Err(Failure::config("concurrency must be at least 1"));
    }
    let translator: Box<dyn Translator> =
        if args.identity { Box::new(IdentityTranslator) } else { Box::new(HttpTranslator::from_env()?) };
    let opts = TranslateOptions { concurrency: args.concurrency, resume_path: args.resume, ..Default::default() };
    let translated = translate_dataset(&source, translator.as_ref(), &spec, &opts)?;
    fs::write(&args.out, serialize_dataset(&translated))?;
    let issues = validate_translation(&translated, Some(&source));
    print_json(&json!({ "examples": translated.intra.len() + translated.inter.len(), "issues": issues }))?;
    Ok(if issues.is_empty() { Status::Ok } else { Status::Domain })
}

fn nsp_corpus(sentences: &Path, out: &Path, negative_ratio: f64, seed: u64) -> CliResult<Status> {
    let f = File::open(sentences).map_err(|e| Failure::from(e).context(format!("cannot open {}", sentences.display())))?;
    let records = read_sentences(BufReader::new(f))?;
    let pairs = build_nsp_corpus(&records, negative_ratio, seed)?;
    let mut w = BufWriter::new(File::create(out)?);
    write_nsp_tsv(&mut w, &pairs)?;
    w.flush()?;
    info!("wrote {} pairs to {}", pairs.len(), out.display());
    Ok(Status::Ok)
}

fn write_pretty<T: serde::Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).status(Status::Io)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Failure::from(e).context(format!("cannot write {}", path.display())))
}

fn print_json<T: serde::Serialize>(value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).status(Status::Io)?;
    println!("{text}");
    Ok(())
}
