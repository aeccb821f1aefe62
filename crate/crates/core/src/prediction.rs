//! Per-example candidate probabilities and their JSON-lines file format.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::corpus::{BiasType, CandidateLabel, Example, TestKind};
use crate::provider::ProviderError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateProbs {
    pub stereotype: f64,
    #[serde(rename = "anti-stereotype")]
    pub anti_stereotype: f64,
    pub unrelated: f64,
}

impl CandidateProbs {
    pub fn get(&self, label: CandidateLabel) -> f64 {
        match label {
            CandidateLabel::Stereotype => self.stereotype,
            CandidateLabel::AntiStereotype => self.anti_stereotype,
            CandidateLabel::Unrelated => self.unrelated,
        }
    }
}

/// Scores of the three candidates of one example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub example_id: String,
    pub test_kind: TestKind,
    pub bias_type: BiasType,
    pub target: String,
    pub probs: CandidateProbs,
}

impl PredictionRecord {
    pub fn new(example: &Example, [stereotype, anti_stereotype, unrelated]: [f64; 3]) -> Self {
        PredictionRecord {
            example_id: example.id.clone(),
            test_kind: example.test_kind,
            bias_type: example.bias_type,
            target: example.target.clone(),
            probs: CandidateProbs { stereotype, anti_stereotype, unrelated },
        }
    }

    pub fn x_stereo(&self) -> f64 {
        self.probs.stereotype
    }

    pub fn x_anti(&self) -> f64 {
        self.probs.anti_stereotype
    }

    pub fn x_unr(&self) -> f64 {
        self.probs.unrelated
    }
}

#[derive(Debug, Error)]
pub enum PredictError {
    #[error("example `{example_id}`: {source}")]
    Provider {
        example_id: String,
        #[source]
        source: ProviderError,
    },
    #[error("example `{example_id}`: {message}")]
    Example { example_id: String, message: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("cannot reach the backend: {0}")]
    Connect(#[source] ProviderError),
}

impl PredictError {
    pub(crate) fn provider(example: &Example) -> impl Fn(ProviderError) -> PredictError + '_ {
        move |source| PredictError::Provider { example_id: example.id.clone(), source }
    }

    pub(crate) fn example(example: &Example, message: impl Into<String>) -> PredictError {
        PredictError::Example { example_id: example.id.clone(), message: message.into() }
    }
}

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("record `{example_id}` (line {line}): {message}")]
    Invalid { line: usize, example_id: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn write_records<W: Write>(mut w: W, records: &[PredictionRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

/// Reads JSON-lines prediction records. Errors name the offending record.
pub fn read_records<R: BufRead>(reader: R) -> Result<Vec<PredictionRecord>, RecordError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value =
            serde_json::from_str(&line).map_err(|e| RecordError::Malformed { line: n, message: e.to_string() })?;
        let example_id = value
            .get("example_id")
            .and_then(Value::as_str)
            .ok_or_else(|| RecordError::Malformed { line: n, message: "missing example_id".into() })?
            .to_string();
        let invalid = |message: String| RecordError::Invalid { line: n, example_id: example_id.clone(), message };
        if let Some(b) = value.get("bias_type").and_then(Value::as_str) {
            b.parse::<BiasType>().map_err(invalid)?;
        }
        let record: PredictionRecord = serde_json::from_value(value).map_err(|e| invalid(e.to_string()))?;
        for label in CandidateLabel::ALL {
            let p = record.probs.get(label);
            if !(p.is_finite() && p >= 0.0) {
                return Err(invalid(format!("{} probability {p} is not a finite non-negative number", label.as_str())));
            }
        }
        out.push(record);
    }
    Ok(out)
}
