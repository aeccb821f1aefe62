//! Wire protocol: newline-delimited UTF-8 JSON.
//!
//! Request:  `{"id": 7, "op": "causal", "payload": {...}}`
//! Response: `{"id": 7, "ok": true, "payload": {...}}` or
//!           `{"id": 7, "ok": false, "error": {"code": "...", "message": "..."}}`
//!
//! Token sequences travel as `{"ids": [..], "pieces": [..]}` without padding
//! or model-specific framing tokens. A `batch` request carries a list of
//! `{op, payload}` sub-requests; its response lists `{index, ok, payload |
//! error}` items so that backends may answer sub-requests in any order.

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::{ErrorCode, ProbSeq, ProviderError, ProviderInfo, TokenId, TokenPiece, TokenPieceSeq};

#[derive(Debug, Clone, PartialEq)]
pub enum Request {
    Tokenize { text: String },
    Mlm { sequence: TokenPieceSeq, targets: Vec<(usize, TokenId)> },
    Causal { sequence: TokenPieceSeq, prepend_bos: bool },
    Seq2seq { encoder_input: TokenPieceSeq, decoder_input: TokenPieceSeq, targets: TokenPieceSeq },
    Nsp { sentence_a: String, sentence_b: String },
}

impl Request {
    pub fn op(&self) -> &'static str {
        match self {
            Request::Tokenize { .. } => "tokenize",
            Request::Mlm { .. } => "mlm",
            Request::Causal { .. } => "causal",
            Request::Seq2seq { .. } => "seq2seq",
            Request::Nsp { .. } => "nsp",
        }
    }

    fn payload(&self) -> Value {
        match self {
            Request::Tokenize { text } => json!({ "text": text }),
            Request::Mlm { sequence, targets } => json!({
                "sequence": WireTokens::from(sequence),
                "targets": targets
                    .iter()
                    .map(|&(position, token_id)| WireTarget { position, token_id })
                    .collect::<Vec<_>>(),
            }),
            Request::Causal { sequence, prepend_bos } => json!({
                "sequence": WireTokens::from(sequence),
                "prepend_bos": prepend_bos,
            }),
            Request::Seq2seq { encoder_input, decoder_input, targets } => json!({
                "encoder_input": WireTokens::from(encoder_input),
                "decoder_input": WireTokens::from(decoder_input),
                "targets": WireTokens::from(targets),
            }),
            Request::Nsp { sentence_a, sentence_b } => json!({
                "sentence_a": sentence_a,
                "sentence_b": sentence_b,
            }),
        }
    }

    fn from_parts(op: &str, payload: Value) -> Result<Self, ProviderError> {
        Ok(match op {
            "tokenize" => {
                let p: TokenizePayload = from_value(payload)?;
                Request::Tokenize { text: p.text }
            }
            "mlm" => {
                let p: MlmPayload = from_value(payload)?;
                Request::Mlm {
                    sequence: p.sequence.try_into()?,
                    targets: p.targets.into_iter().map(|t| (t.position, t.token_id)).collect(),
                }
            }
            "causal" => {
                let p: CausalPayload = from_value(payload)?;
                Request::Causal { sequence: p.sequence.try_into()?, prepend_bos: p.prepend_bos }
            }
            "seq2seq" => {
                let p: Seq2seqPayload = from_value(payload)?;
                Request::Seq2seq {
                    encoder_input: p.encoder_input.try_into()?,
                    decoder_input: p.decoder_input.try_into()?,
                    targets: p.targets.try_into()?,
                }
            }
            "nsp" => {
                let p: NspPayload = from_value(payload)?;
                Request::Nsp { sentence_a: p.sentence_a, sentence_b: p.sentence_b }
            }
            other => return Err(ProviderError::Protocol(format!("unknown op `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Response {
    Tokens(TokenPieceSeq),
    Probs(ProbSeq),
    Prob(f64),
}

impl Response {
    pub fn into_tokens(self) -> Result<TokenPieceSeq, ProviderError> {
        match self {
            Response::Tokens(t) => Ok(t),
            other => Err(unexpected("tokens", &other)),
        }
    }

    pub fn into_probs(self) -> Result<ProbSeq, ProviderError> {
        match self {
            Response::Probs(p) => Ok(p),
            other => Err(unexpected("probs", &other)),
        }
    }

    pub fn into_prob(self) -> Result<f64, ProviderError> {
        match self {
            Response::Prob(p) => Ok(p),
            other => Err(unexpected("prob", &other)),
        }
    }

    /// Whether this response has the shape `request` calls for.
    pub fn answers(&self, request: &Request) -> bool {
        matches!(
            (request, self),
            (Request::Tokenize { .. }, Response::Tokens(_))
                | (Request::Mlm { .. } | Request::Causal { .. } | Request::Seq2seq { .. }, Response::Probs(_))
                | (Request::Nsp { .. }, Response::Prob(_))
        )
    }

    fn payload(&self) -> Value {
        match self {
            Response::Tokens(t) => serde_json::to_value(WireTokens::from(t)).expect("token payload"),
            Response::Probs(p) => json!({ "probs": p.probs }),
            Response::Prob(p) => json!({ "prob": p }),
        }
    }

    fn from_payload(payload: Value) -> Result<Self, ProviderError> {
        let obj = payload
            .as_object()
            .ok_or_else(|| ProviderError::Protocol("response payload must be an object".into()))?;
        if obj.contains_key("ids") {
            let t: WireTokens = from_value(payload)?;
            Ok(Response::Tokens(t.try_into()?))
        } else if obj.contains_key("probs") {
            let p: ProbsPayload = from_value(payload)?;
            Ok(Response::Probs(ProbSeq::new(p.probs)))
        } else if obj.contains_key("prob") {
            let p: ProbPayload = from_value(payload)?;
            Ok(Response::Prob(p.prob))
        } else {
            Err(ProviderError::Protocol("unrecognised response payload".into()))
        }
    }
}

fn unexpected(wanted: &str, got: &Response) -> ProviderError {
    ProviderError::Protocol(format!("expected a {wanted} response, got {got:?}"))
}

/// Body of a request envelope.
#[derive(Debug, Clone, PartialEq)]
pub enum RequestBody {
    Hello { protocol_version: u32 },
    Single(Request),
    Batch(Vec<Request>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RequestEnvelope {
    pub id: u64,
    pub body: RequestBody,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireError {
    pub code: ErrorCode,
    pub message: String,
}

impl From<&ProviderError> for WireError {
    fn from(e: &ProviderError) -> Self {
        let message = match e {
            ProviderError::Remote { message, .. } => message.clone(),
            other => other.to_string(),
        };
        WireError { code: e.code(), message }
    }
}

impl From<WireError> for ProviderError {
    fn from(e: WireError) -> Self {
        ProviderError::Remote { code: e.code, message: e.message }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchItem {
    pub index: usize,
    pub result: Result<Response, WireError>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ResponseBody {
    Hello { protocol_version: u32, info: ProviderInfo },
    Single(Response),
    Batch(Vec<BatchItem>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResponseEnvelope {
    pub id: u64,
    pub result: Result<ResponseBody, WireError>,
}

#[derive(Serialize, Deserialize)]
struct WireTokens {
    ids: Vec<TokenId>,
    pieces: Vec<String>,
}

impl From<&TokenPieceSeq> for WireTokens {
    fn from(seq: &TokenPieceSeq) -> Self {
        WireTokens {
            ids: seq.pieces.iter().map(|p| p.id).collect(),
            pieces: seq.pieces.iter().map(|p| p.surface.clone()).collect(),
        }
    }
}

impl TryFrom<WireTokens> for TokenPieceSeq {
    type Error = ProviderError;

    fn try_from(w: WireTokens) -> Result<Self, Self::Error> {
        if w.ids.len() != w.pieces.len() {
            return Err(ProviderError::Protocol(format!(
                "token sequence has {} ids but {} pieces",
                w.ids.len(),
                w.pieces.len()
            )));
        }
        Ok(w.ids.into_iter().zip(w.pieces).map(|(id, surface)| TokenPiece { id, surface }).collect())
    }
}

#[derive(Serialize, Deserialize)]
struct WireTarget {
    position: usize,
    token_id: TokenId,
}

#[derive(Deserialize)]
struct TokenizePayload {
    text: String,
}

#[derive(Deserialize)]
struct MlmPayload {
    sequence: WireTokens,
    targets: Vec<WireTarget>,
}

#[derive(Deserialize)]
struct CausalPayload {
    sequence: WireTokens,
    #[serde(default)]
    prepend_bos: bool,
}

#[derive(Deserialize)]
struct Seq2seqPayload {
    encoder_input: WireTokens,
    decoder_input: WireTokens,
    targets: WireTokens,
}

#[derive(Deserialize)]
struct NspPayload {
    sentence_a: String,
    sentence_b: String,
}

#[derive(Serialize, Deserialize)]
struct HelloPayload {
    protocol_version: u32,
}

#[derive(Serialize, Deserialize)]
struct HelloResponse {
    protocol_version: u32,
    #[serde(flatten)]
    info: ProviderInfo,
}

#[derive(Deserialize)]
struct ProbsPayload {
    probs: Vec<f64>,
}

#[derive(Deserialize)]
struct ProbPayload {
    prob: f64,
}

#[derive(Serialize, Deserialize)]
struct WireSub {
    op: String,
    payload: Value,
}

#[derive(Serialize, Deserialize)]
struct WireBatchItem {
    index: usize,
    ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    payload: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    error: Option<WireError>,
}

#[derive(Serialize, Deserialize)]
struct RawRequest {
    id: u64,
    op: String,
    #[serde(default)]
    payload: Value,
}

#[derive(Serialize, Deserialize)]
struct RawResponse {
    id: u64,
    ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    payload: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    error: Option<WireError>,
}

fn from_value<T: serde::de::DeserializeOwned>(v: Value) -> Result<T, ProviderError> {
    serde_json::from_value(v).map_err(|e| ProviderError::Protocol(e.to_string()))
}

/// Encodes a request envelope as one JSON line (without the trailing newline).
pub fn encode_request(env: &RequestEnvelope) -> String {
    let (op, payload) = match &env.body {
        RequestBody::Hello { protocol_version } => ("hello", json!({ "protocol_version": protocol_version })),
        RequestBody::Single(r) => (r.op(), r.payload()),
        RequestBody::Batch(reqs) => (
            "batch",
            json!({
                "requests": reqs
                    .iter()
                    .map(|r| WireSub { op: r.op().to_string(), payload: r.payload() })
                    .collect::<Vec<_>>(),
            }),
        ),
    };
    serde_json::to_string(&RawRequest { id: env.id, op: op.to_string(), payload })
        .expect("request envelopes always serialize")
}

pub fn decode_request(line: &str) -> Result<RequestEnvelope, ProviderError> {
    let raw: RawRequest = serde_json::from_str(line).map_err(|e| ProviderError::Protocol(e.to_string()))?;
    let body = match raw.op.as_str() {
        "hello" => {
            let p: HelloPayload = from_value(raw.payload)?;
            RequestBody::Hello { protocol_version: p.protocol_version }
        }
        "batch" => {
            #[derive(Deserialize)]
            struct BatchPayload {
                requests: Vec<WireSub>,
            }
            let p: BatchPayload = from_value(raw.payload)?;
            RequestBody::Batch(
                p.requests
                    .into_iter()
                    .map(|s| Request::from_parts(&s.op, s.payload))
                    .collect::<Result<_, _>>()?,
            )
        }
        op => RequestBody::Single(Request::from_parts(op, raw.payload)?),
    };
    Ok(RequestEnvelope { id: raw.id, body })
}

pub fn encode_response(env: &ResponseEnvelope) -> String {
    let raw = match &env.result {
        Ok(body) => {
            let payload = match body {
                ResponseBody::Hello { protocol_version, info } => serde_json::to_value(HelloResponse {
                    protocol_version: *protocol_version,
                    info: info.clone(),
                })
                .expect("provider info serializes"),
                ResponseBody::Single(r) => r.payload(),
                ResponseBody::Batch(items) => {
                    let items: Vec<WireBatchItem> = items
                        .iter()
                        .map(|item| match &item.result {
                            Ok(r) => WireBatchItem {
                                index: item.index,
                                ok: true,
                                payload: Some(r.payload()),
                                error: None,
                            },
                            Err(e) => WireBatchItem {
                                index: item.index,
                                ok: false,
                                payload: None,
                                error: Some(e.clone()),
                            },
                        })
                        .collect();
                    json!({ "responses": items })
                }
            };
            RawResponse { id: env.id, ok: true, payload: Some(payload), error: None }
        }
        Err(e) => RawResponse { id: env.id, ok: false, payload: None, error: Some(e.clone()) },
    };
    serde_json::to_string(&raw).expect("response envelopes always serialize")
}

pub fn decode_response(line: &str) -> Result<ResponseEnvelope, ProviderError> {
    let raw: RawResponse = serde_json::from_str(line).map_err(|e| ProviderError::Protocol(e.to_string()))?;
    let result = if raw.ok {
        let payload = raw
            .payload
            .ok_or_else(|| ProviderError::Protocol("ok response without payload".into()))?;
        Ok(decode_response_payload(payload)?)
    } else {
        Err(raw
            .error
            .ok_or_else(|| ProviderError::Protocol("error response without error object".into()))?)
    };
    Ok(ResponseEnvelope { id: raw.id, result })
}

fn decode_response_payload(payload: Value) -> Result<ResponseBody, ProviderError> {
    let obj: &Map<String, Value> = payload
        .as_object()
        .ok_or_else(|| ProviderError::Protocol("response payload must be an object".into()))?;
    if obj.contains_key("model_kind") {
        let h: HelloResponse = from_value(payload)?;
        return Ok(ResponseBody::Hello { protocol_version: h.protocol_version, info: h.info });
    }
    if obj.contains_key("responses") {
        #[derive(Deserialize)]
        struct BatchResponse {
            responses: Vec<WireBatchItem>,
        }
        let b: BatchResponse = from_value(payload)?;
        let items = b
            .responses
            .into_iter()
            .map(|item| {
                let result = if item.ok {
                    let payload = item
                        .payload
                        .ok_or_else(|| ProviderError::Protocol("ok batch item without payload".into()))?;
                    Ok(Response::from_payload(payload)?)
                } else {
                    Err(item
                        .error
                        .ok_or_else(|| ProviderError::Protocol("failed batch item without error".into()))?)
                };
                Ok(BatchItem { index: item.index, result })
            })
            .collect::<Result<Vec<_>, ProviderError>>()?;
        return Ok(ResponseBody::Batch(items));
    }
    Ok(ResponseBody::Single(Response::from_payload(payload)?))
}
