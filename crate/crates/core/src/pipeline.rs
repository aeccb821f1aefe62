//! Chooses scoring strategies for a backend and runs them over a dataset
//! with a pool of workers.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use log::info;
use serde::Serialize;

use crate::corpus::{Example, TestKind};
use crate::inter::{self, InterMode, DEFAULT_JOINER};
use crate::intra::{self, MaskStyle};
use crate::prediction::{PredictError, PredictionRecord};
use crate::provider::{Capability, ModelKind, Provider, ProviderError, ProviderInfo};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum IntraStrategy {
    Mlm,
    Causal,
    Seq2seq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InterStrategy {
    Nsp,
    CausalGen,
    CausalGenOrig,
    Seq2seq,
}

impl IntraStrategy {
    fn capability(self) -> Capability {
        match self {
            IntraStrategy::Mlm => Capability::Mlm,
            IntraStrategy::Causal => Capability::CausalLm,
            IntraStrategy::Seq2seq => Capability::Seq2seqLm,
        }
    }
}

impl InterStrategy {
    fn capability(self) -> Capability {
        match self {
            InterStrategy::Nsp => Capability::Nsp,
            InterStrategy::CausalGen | InterStrategy::CausalGenOrig => Capability::CausalLm,
            InterStrategy::Seq2seq => Capability::Seq2seqLm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PipelineConfig {
    /// Overrides the kind the backend reports.
    pub model_kind: Option<ModelKind>,
    /// `None` picks the default for the model kind.
    pub inter_mode: Option<InterMode>,
    pub mask_style: MaskStyle,
    pub joiner: String,
    pub workers: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            model_kind: None,
            inter_mode: None,
            mask_style: MaskStyle::Truncate,
            joiner: DEFAULT_JOINER.to_string(),
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Plan {
    pub model_kind: ModelKind,
    pub intra: IntraStrategy,
    pub inter: InterStrategy,
    pub inter_mode: InterMode,
}

/// Maps the model kind and requested inter mode to strategies, and checks
/// the backend offers the capabilities they need.
pub fn plan(info: &ProviderInfo, cfg: &PipelineConfig) -> Result<Plan, PredictError> {
    let kind = cfg.model_kind.unwrap_or(info.model_kind);
    let intra = match kind {
        ModelKind::Encoder => IntraStrategy::Mlm,
        ModelKind::Decoder => IntraStrategy::Causal,
        ModelKind::EncoderDecoder => IntraStrategy::Seq2seq,
    };
    let mode = cfg.inter_mode.unwrap_or(match kind {
        ModelKind::Encoder => InterMode::Nsp,
        ModelKind::Decoder => InterMode::Gen,
        ModelKind::EncoderDecoder if info.has(Capability::Nsp) => InterMode::Nsp,
        ModelKind::EncoderDecoder => InterMode::Gen,
    });
    let inter = match (mode, kind) {
        (InterMode::Nsp, _) => InterStrategy::Nsp,
        (InterMode::Gen, ModelKind::Decoder) => InterStrategy::CausalGen,
        (InterMode::Gen, ModelKind::EncoderDecoder) => InterStrategy::Seq2seq,
        (InterMode::GenOrig, ModelKind::Decoder) => InterStrategy::CausalGenOrig,
        (mode, kind) => {
            return Err(PredictError::Config(format!("inter-sentence mode `{mode}` is not available for {kind} models")))
        }
    };
    for (what, cap) in [("intra-sentence", intra.capability()), ("inter-sentence", inter.capability())] {
        if !info.has(cap) {
            return Err(PredictError::Config(format!(
                "{what} scoring for a {kind} model needs the `{cap}` capability, which the backend does not offer"
            )));
        }
    }
    Ok(Plan { model_kind: kind, intra, inter, inter_mode: mode })
}

/// Scores one example with the strategy for its test kind.
pub fn score_example<P: Provider + ?Sized>(
    plan: &Plan,
    cfg: &PipelineConfig,
    example: &Example,
    provider: &mut P,
) -> Result<PredictionRecord, PredictError> {
    match example.test_kind {
        TestKind::Intra => match plan.intra {
            IntraStrategy::Mlm => intra::score_intra_mlm(example, provider, cfg.mask_style),
            IntraStrategy::Causal => intra::score_intra_causal(example, provider),
            IntraStrategy::Seq2seq => intra::score_intra_seq2seq(example, provider),
        },
        TestKind::Inter => match plan.inter {
            InterStrategy::Nsp => inter::score_inter_nsp(example, provider),
            InterStrategy::CausalGen => inter::score_inter_causal_gen(example, provider, &cfg.joiner),
            InterStrategy::CausalGenOrig => inter::score_inter_causal_gen_orig(example, provider, &cfg.joiner),
            InterStrategy::Seq2seq => inter::score_inter_seq2seq(example, provider),
        },
    }
}

pub type BoxedProvider = Box<dyn Provider + Send>;

/// Scores `examples` with `cfg.workers` workers, each holding its own
/// provider from `connect`. Output order follows input order regardless of
/// the worker count. The first failing example (in input order) is reported.
pub fn predict<F>(examples: &[Example], plan: &Plan, cfg: &PipelineConfig, connect: F) -> Result<Vec<PredictionRecord>, PredictError>
where
    F: Fn() -> Result<BoxedProvider, ProviderError> + Sync,
{
    let workers = cfg.workers.max(1).min(examples.len().max(1));
    let next = AtomicUsize::new(0);
    let done = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let slots: Vec<Mutex<Option<Result<PredictionRecord, PredictError>>>> =
        examples.iter().map(|_| Mutex::new(None)).collect();
    let connect_error: Mutex<Option<ProviderError>> = Mutex::new(None);
    let report_every = (examples.len() / 10).max(1);

    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| {
                let mut provider = match connect() {
                    Ok(p) => p,
                    Err(e) => {
                        stop.store(true, Ordering::Relaxed);
                        connect_error.lock().expect("lock").get_or_insert(e);
                        return;
                    }
                };
                while !stop.load(Ordering::Relaxed) {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(ex) = examples.get(i) else { break };
                    let r = score_example(plan, cfg, ex, &mut provider);
                    if r.is_err() {
                        stop.store(true, Ordering::Relaxed);
                    }
                    *slots[i].lock().expect("lock") = Some(r);
                    let n = done.fetch_add(1, Ordering::Relaxed) + 1;
                    if n.is_multiple_of(report_every) || n == examples.len() {
                        info!("scored {n}/{} examples", examples.len());
                    }
                }
            });
        }
    });

    if let Some(e) = connect_error.into_inner().expect("lock") {
        return Err(PredictError::Connect(e));
    }
    let mut out = Vec::with_capacity(examples.len());
    for slot in slots {
        match slot.into_inner().expect("lock") {
            Some(Ok(r)) => out.push(r),
            Some(Err(e)) => return Err(e),
            None => {}
        }
    }
    if out.len() != examples.len() {
        return Err(PredictError::Config("prediction stopped before every example was scored".into()));
    }
    Ok(out)
}
