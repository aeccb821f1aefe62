//! Machine translation of CAT datasets with `BLANK` kept verbatim, and
//! checks on the translated output.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{extract_fill_word, Dataset, Example, TestKind, BLANK};

#[derive(Debug, Error)]
pub enum TranslateError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("translation service error: {0}")]
    Service(String),
    #[error("{} example(s) could not be translated: {}", .untranslated.len(), .untranslated.join(", "))]
    Incomplete { untranslated: Vec<String> },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Terms the translation service must map verbatim.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TerminologySpec {
    source_lang: String,
    target_lang: String,
    entries: Vec<(String, String)>,
}

impl TerminologySpec {
    pub fn new(source_lang: &str, target_lang: &str) -> Result<Self, TranslateError> {
        if source_lang.is_empty() || target_lang.is_empty() {
            return Err(TranslateError::Config("language tags must be non-empty".into()));
        }
        if source_lang == target_lang {
            return Err(TranslateError::Config(format!("source and target language are both `{source_lang}`")));
        }
        Ok(TerminologySpec {
            source_lang: source_lang.into(),
            target_lang: target_lang.into(),
            entries: vec![(BLANK.into(), BLANK.into())],
        })
    }

    pub fn with_entry(mut self, source: &str, target: &str) -> Self {
        self.entries.push((source.into(), target.into()));
        self
    }

    pub fn source_lang(&self) -> &str {
        &self.source_lang
    }

    pub fn target_lang(&self) -> &str {
        &self.target_lang
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    /// CSV bytes: a `source,target` header line, then one line per entry.
    /// No trailing newline.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut lines = vec![format!("{},{}", self.source_lang, self.target_lang)];
        lines.extend(self.entries.iter().map(|(s, t)| format!("{s},{t}")));
        lines.join("\n").into_bytes()
    }
}

pub fn build_terminology(source: &str, target: &str) -> Result<Vec<u8>, TranslateError> {
    Ok(TerminologySpec::new(source, target)?.to_bytes())
}

pub trait Translator: Sync {
    fn translate(&self, text: &str, terminology: &TerminologySpec) -> Result<String, TranslateError>;
}

/// Returns its input unchanged.
#[derive(Debug, Default, Clone, Copy)]
pub struct IdentityTranslator;

impl Translator for IdentityTranslator {
    fn translate(&self, text: &str, _: &TerminologySpec) -> Result<String, TranslateError> {
        Ok(text.to_string())
    }
}

pub const MT_ENDPOINT_ENV: &str = "MT_ENDPOINT";
pub const MT_API_KEY_ENV: &str = "MT_API_KEY";

#[derive(Serialize)]
struct HttpRequest<'a> {
    text: &'a str,
    source_language: &'a str,
    target_language: &'a str,
    terminology: String,
}

#[derive(Deserialize)]
struct HttpReply {
    translated_text: String,
}

/// JSON-over-HTTP client for a translation service.
///
/// Posts `{text, source_language, target_language, terminology}` and expects
/// `{translated_text}`. The terminology is sent as its CSV text.
pub struct HttpTranslator {
    endpoint: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpTranslator {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(120)))
            .http_status_as_error(true)
            .build()
            .into();
        HttpTranslator { endpoint: endpoint.into(), api_key, agent }
    }

    /// Reads the endpoint and optional key from the environment.
    pub fn from_env() -> Result<Self, TranslateError> {
        let endpoint = std::env::var(MT_ENDPOINT_ENV)
            .map_err(|_| TranslateError::Config(format!("{MT_ENDPOINT_ENV} is not set")))?;
        Ok(Self::new(endpoint, std::env::var(MT_API_KEY_ENV).ok()))
    }
}

impl Translator for HttpTranslator {
    fn translate(&self, text: &str, terminology: &TerminologySpec) -> Result<String, TranslateError> {
        let body = HttpRequest {
            text,
            source_language: terminology.source_lang(),
            target_language: terminology.target_lang(),
            terminology: String::from_utf8_lossy(&terminology.to_bytes()).into_owned(),
        };
        let mut req = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let reply: HttpReply = req
            .send_json(&body)
            .map_err(|e| TranslateError::Service(e.to_string()))?
            .body_mut()
            .read_json()
            .map_err(|e| TranslateError::Service(format!("bad reply: {e}")))?;
        Ok(reply.translated_text)
    }
}

#[derive(Debug, Clone)]
pub struct TranslateOptions {
    pub concurrency: usize,
    pub resume_path: Option<PathBuf>,
    pub attempts: u32,
    /// Delay before the first retry; doubled for each further retry.
    pub retry_delay: Duration,
}

impl Default for TranslateOptions {
    fn default() -> Self {
        TranslateOptions { concurrency: 4, resume_path: None, attempts: 3, retry_delay: Duration::from_millis(500) }
    }
}

/// One translated example as persisted in the resume file.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ResumeEntry {
    test_kind: TestKind,
    id: String,
    context: String,
    candidates: Vec<String>,
}

fn load_resume(path: &Path) -> Result<HashMap<(TestKind, String), ResumeEntry>, TranslateError> {
    let mut done = HashMap::new();
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(done),
        Err(e) => return Err(e.into()),
    };
    for line in BufReader::new(file).lines() {
        let line = line?;
        // a torn final line from an interrupted run is dropped
        match serde_json::from_str::<ResumeEntry>(&line) {
            Ok(e) => {
                done.insert((e.test_kind, e.id.clone()), e);
            }
            Err(_) if !line.trim().is_empty() => warn!("skipping unreadable resume line in {}", path.display()),
            Err(_) => {}
        }
    }
    Ok(done)
}

fn with_retry<T>(
    opts: &TranslateOptions,
    mut f: impl FnMut() -> Result<T, TranslateError>,
) -> Result<T, TranslateError> {
    let mut delay = opts.retry_delay;
    let mut attempt = 1;
    loop {
        match f() {
            Ok(v) => return Ok(v),
            Err(e) if attempt >= opts.attempts.max(1) => return Err(e),
            Err(e) => {
                warn!("translation attempt {attempt} failed: {e}; retrying in {delay:?}");
                std::thread::sleep(delay);
                delay *= 2;
                attempt += 1;
            }
        }
    }
}

fn translate_example(
    ex: &Example,
    translator: &dyn Translator,
    spec: &TerminologySpec,
    opts: &TranslateOptions,
) -> Result<ResumeEntry, TranslateError> {
    let tr = |text: &str| with_retry(opts, || translator.translate(text, spec));
    Ok(ResumeEntry {
        test_kind: ex.test_kind,
        id: ex.id.clone(),
        context: tr(&ex.context)?,
        candidates: ex.candidates.iter().map(|c| tr(&c.text)).collect::<Result<_, _>>()?,
    })
}

fn apply(ex: &Example, entry: &ResumeEntry) -> Example {
    let mut out = ex.clone();
    out.context = entry.context.clone();
    for (c, text) in out.candidates.iter_mut().zip(&entry.candidates) {
        c.text = text.clone();
        if ex.test_kind == TestKind::Intra {
            c.fill_word = extract_fill_word(&out.context, text).ok();
        }
    }
    out
}

/// Translates every context and candidate sentence of `d`.
///
/// Ids, labels, targets and bias types are copied unchanged. Intra fill words
/// are re-extracted from the translated sentences (`None` where that fails).
/// With a resume path, each finished example is appended to that file and
/// examples already present there are not sent again.
pub fn translate_dataset(
    d: &Dataset,
    translator: &dyn Translator,
    spec: &TerminologySpec,
    opts: &TranslateOptions,
) -> Result<Dataset, TranslateError> {
    if d.language != spec.source_lang() {
        return Err(TranslateError::Config(format!(
            "dataset language `{}` does not match terminology source `{}`",
            d.language,
            spec.source_lang()
        )));
    }
    let mut done = match &opts.resume_path {
        Some(p) => load_resume(p)?,
        None => HashMap::new(),
    };
    let writer = match &opts.resume_path {
        Some(p) => Some(Mutex::new(OpenOptions::new().create(true).append(true).open(p)?)),
        None => None,
    };

    let all: Vec<&Example> = d.intra.iter().chain(&d.inter).collect();
    let pending: Vec<&Example> =
        all.iter().copied().filter(|e| !done.contains_key(&(e.test_kind, e.id.clone()))).collect();
    info!("translating {} of {} examples ({} resumed)", pending.len(), all.len(), all.len() - pending.len());

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Result<ResumeEntry, (String, TranslateError)>>> = Mutex::new(Vec::new());
    std::thread::scope(|s| {
        for _ in 0..opts.concurrency.max(1).min(pending.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(ex) = pending.get(i) else { break };
                let r = translate_example(ex, translator, spec, opts).and_then(|entry| {
                    if let Some(w) = &writer {
                        let mut line = serde_json::to_string(&entry).expect("entry serializes");
                        line.push('\n');
                        let mut f = w.lock().expect("resume writer lock");
                        f.write_all(line.as_bytes())?;
                        f.flush()?;
                    }
                    Ok(entry)
                });
                results.lock().expect("results lock").push(r.map_err(|e| (ex.id.clone(), e)));
            });
        }
    });

    let mut failed = Vec::new();
    for r in results.into_inner().expect("results lock") {
        match r {
            Ok(entry) => {
                done.insert((entry.test_kind, entry.id.clone()), entry);
            }
            Err((id, e)) => {
                warn!("example `{id}` not translated: {e}");
                failed.push(id);
            }
        }
    }
    if !failed.is_empty() {
        failed.sort();
        return Err(TranslateError::Incomplete { untranslated: failed });
    }

    let convert = |examples: &[Example]| -> Vec<Example> {
        examples.iter().map(|e| apply(e, &done[&(e.test_kind, e.id.clone())])).collect()
    };
    Ok(Dataset {
        language: spec.target_lang().to_string(),
        version: d.version.clone(),
        intra: convert(&d.intra),
        inter: convert(&d.inter),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IssueKind {
    BlankMissing,
    BlankDuplicated,
    BlankDisplaced,
    Punctuation,
    CandidateCount,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationIssue {
    pub test_kind: TestKind,
    pub example_id: String,
    pub kind: IssueKind,
    pub detail: String,
}

/// Drift in relative `BLANK` position above which a translation is flagged.
pub const BLANK_DRIFT_LIMIT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Terminal {
    FullStop,
    Question,
    Exclamation,
    Other,
    None,
}

fn terminal_class(s: &str) -> Terminal {
    match s.trim_end().chars().last() {
        Some('.' | '。' | '…' | '।') => Terminal::FullStop,
        Some('?' | '？' | '؟') => Terminal::Question,
        Some('!' | '！') => Terminal::Exclamation,
        Some(c) if c.is_ascii_punctuation() || (!c.is_alphanumeric() && !c.is_whitespace()) => Terminal::Other,
        _ => Terminal::None,
    }
}

/// Relative position of `BLANK` among the whitespace tokens of `context`.
fn blank_quantile(context: &str) -> Option<f64> {
    let tokens: Vec<&str> = context.split_whitespace().collect();
    let at = tokens.iter().position(|t| t.contains(BLANK))?;
    Some(if tokens.len() > 1 { at as f64 / (tokens.len() - 1) as f64 } else { 0.0 })
}

/// Flags translation defects. With a `reference` (the source dataset),
/// terminal punctuation and `BLANK` placement are compared per example.
pub fn validate_translation(d: &Dataset, reference: Option<&Dataset>) -> Vec<ValidationIssue> {
    let refs: HashMap<(TestKind, &str), &Example> = reference
        .map(|r| r.intra.iter().chain(&r.inter).map(|e| ((e.test_kind, e.id.as_str()), e)).collect())
        .unwrap_or_default();
    let mut issues = Vec::new();
    for ex in d.intra.iter().chain(&d.inter) {
        let mut flag =
            |kind, detail: String| issues.push(ValidationIssue { test_kind: ex.test_kind, example_id: ex.id.clone(), kind, detail });
        if ex.candidates.len() != 3 {
            flag(IssueKind::CandidateCount, format!("{} candidates", ex.candidates.len()));
        }
        let original = refs.get(&(ex.test_kind, ex.id.as_str())).copied();

        if ex.test_kind == TestKind::Intra {
            match ex.context.matches(BLANK).count() {
                0 => flag(IssueKind::BlankMissing, format!("context {:?} has no BLANK", ex.context)),
                1 => {
                    for c in &ex.candidates {
                        if extract_fill_word(&ex.context, &c.text).is_err() {
                            flag(
                                IssueKind::BlankDisplaced,
                                format!("candidate `{}` ({:?}) does not fill the context", c.id, c.text),
                            );
                        }
                    }
                    if let Some(orig) = original {
                        if let (Some(a), Some(b)) = (blank_quantile(&orig.context), blank_quantile(&ex.context)) {
                            if (a - b).abs() > BLANK_DRIFT_LIMIT {
                                flag(IssueKind::BlankDisplaced, format!("BLANK moved from position {a:.2} to {b:.2}"));
                            }
                        }
                    }
                }
                n => flag(IssueKind::BlankDuplicated, format!("context has {n} BLANK tokens")),
            }
        }

        if let Some(orig) = original {
            let mut pairs = vec![("context".to_string(), orig.context.as_str(), ex.context.as_str())];
            for c in &ex.candidates {
                if let Some(oc) = orig.candidates.iter().find(|oc| oc.id == c.id) {
                    pairs.push((format!("candidate `{}`", c.id), oc.text.as_str(), c.text.as_str()));
                }
            }
            for (what, before, after) in pairs {
                let (a, b) = (terminal_class(before), terminal_class(after));
                if a != b {
                    flag(IssueKind::Punctuation, format!("{what}: terminal punctuation {a:?} became {b:?}"));
                }
            }
        }
    }
    issues
}
