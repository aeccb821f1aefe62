//! Protocol client for out-of-process backends.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};

use log::debug;

use super::protocol::{
    decode_response, encode_request, RequestBody, ResponseBody, ResponseEnvelope, WireError,
};
use super::{Provider, ProviderError, ProviderInfo, Request, Response, PROTOCOL_VERSION};

/// Where a backend lives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    /// `tcp://host:port`
    Tcp(String),
    /// `exec:<command>`, run through `sh -c`, protocol on stdio.
    Exec(String),
}

impl std::str::FromStr for Endpoint {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(addr) = s.strip_prefix("tcp://") {
            Ok(Endpoint::Tcp(addr.to_string()))
        } else if let Some(cmd) = s.strip_prefix("exec:") {
            if cmd.trim().is_empty() {
                return Err("exec: endpoint needs a command".into());
            }
            Ok(Endpoint::Exec(cmd.to_string()))
        } else {
            Err(format!("unrecognised provider endpoint `{s}` (expected tcp://host:port or exec:<command>)"))
        }
    }
}

/// One protocol connection. Several requests may be in flight at once;
/// responses are matched to requests by id whatever order they arrive in.
pub struct Client {
    reader: Box<dyn BufRead + Send>,
    writer: Box<dyn Write + Send>,
    next_id: u64,
    arrived: HashMap<u64, Result<ResponseBody, WireError>>,
    info: ProviderInfo,
    child: Option<Child>,
}

impl Client {
    pub fn connect(endpoint: &Endpoint) -> Result<Self, ProviderError> {
        match endpoint {
            Endpoint::Tcp(addr) => {
                let stream = TcpStream::connect(addr)?;
                stream.set_nodelay(true)?;
                let reader = BufReader::new(stream.try_clone()?);
                Self::handshake(Box::new(reader), Box::new(stream), None)
            }
            Endpoint::Exec(cmd) => {
                let mut child = Command::new("sh")
                    .arg("-c")
                    .arg(cmd)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                Self::handshake(Box::new(BufReader::new(stdout)), Box::new(stdin), Some(child))
            }
        }
    }

    /// Runs the `hello` exchange over an already-open transport.
    pub fn handshake(
        reader: Box<dyn BufRead + Send>,
        writer: Box<dyn Write + Send>,
        child: Option<Child>,
    ) -> Result<Self, ProviderError> {
        let mut client = Client {
            reader,
            writer,
            next_id: 0,
            arrived: HashMap::new(),
            info: placeholder_info(),
            child,
        };
        let id = client.submit(RequestBody::Hello { protocol_version: PROTOCOL_VERSION })?;
        match client.wait(id)? {
            Ok(ResponseBody::Hello { protocol_version, info }) => {
                if protocol_version != PROTOCOL_VERSION {
                    return Err(ProviderError::Handshake(format!(
                        "backend speaks protocol version {protocol_version}, expected {PROTOCOL_VERSION}"
                    )));
                }
                info.check().map_err(ProviderError::Handshake)?;
                client.info = info;
                Ok(client)
            }
            Ok(other) => Err(ProviderError::Handshake(format!("unexpected hello response {other:?}"))),
            Err(e) => Err(ProviderError::Handshake(format!("{:?}: {}", e.code, e.message))),
        }
    }

    /// Sends a request without waiting for its answer.
    pub fn submit(&mut self, body: RequestBody) -> Result<u64, ProviderError> {
        let id = self.next_id;
        self.next_id += 1;
        let mut line = encode_request(&super::protocol::RequestEnvelope { id, body });
        line.push('\n');
        self.writer.write_all(line.as_bytes())?;
        self.writer.flush()?;
        Ok(id)
    }

    /// Blocks until the response for `id` arrives, buffering any others.
    pub fn wait(&mut self, id: u64) -> Result<Result<ResponseBody, WireError>, ProviderError> {
        loop {
            if let Some(r) = self.arrived.remove(&id) {
                return Ok(r);
            }
            let mut line = String::new();
            if self.reader.read_line(&mut line)? == 0 {
                return Err(ProviderError::Protocol("backend closed the connection".into()));
            }
            if line.trim().is_empty() {
                continue;
            }
            let ResponseEnvelope { id: got, result } = decode_response(line.trim_end())?;
            if got >= self.next_id {
                return Err(ProviderError::Protocol(format!("response for unknown request id {got}")));
            }
            if got != id {
                debug!("buffering out-of-order response {got} while waiting for {id}");
            }
            self.arrived.insert(got, result);
        }
    }

    /// Collects a batch response into sub-request order.
    pub fn collect_batch(
        requests: &[Request],
        body: Result<ResponseBody, WireError>,
    ) -> Result<Vec<Result<Response, ProviderError>>, ProviderError> {
        let items = match body.map_err(ProviderError::from)? {
            ResponseBody::Batch(items) => items,
            ResponseBody::Single(r) if requests.len() == 1 => {
                return Ok(vec![check_shape(&requests[0], r)]);
            }
            other => return Err(ProviderError::Protocol(format!("expected a batch response, got {other:?}"))),
        };
        let mut slots: Vec<Option<Result<Response, ProviderError>>> = (0..requests.len()).map(|_| None).collect();
        for item in items {
            let slot = slots
                .get_mut(item.index)
                .ok_or_else(|| ProviderError::Protocol(format!("batch index {} out of range", item.index)))?;
            if slot.is_some() {
                return Err(ProviderError::Protocol(format!("duplicate batch index {}", item.index)));
            }
            *slot = Some(match item.result {
                Ok(r) => check_shape(&requests[item.index], r),
                Err(e) => Err(e.into()),
            });
        }
        slots
            .into_iter()
            .enumerate()
            .map(|(i, s)| s.ok_or_else(|| ProviderError::Protocol(format!("batch response is missing index {i}"))))
            .collect()
    }
}

fn check_shape(request: &Request, response: Response) -> Result<Response, ProviderError> {
    if response.answers(request) {
        Ok(response)
    } else {
        Err(ProviderError::Protocol(format!("`{}` answered with {response:?}", request.op())))
    }
}

fn placeholder_info() -> ProviderInfo {
    ProviderInfo {
        model_kind: super::ModelKind::Encoder,
        capabilities: Default::default(),
        special_tokens: Default::default(),
        vocab_size: 1,
    }
}

impl Provider for Client {
    fn info(&self) -> &ProviderInfo {
        &self.info
    }

    fn execute(&mut self, requests: &[Request]) -> Result<Vec<Result<Response, ProviderError>>, ProviderError> {
        if requests.is_empty() {
            return Ok(Vec::new());
        }
        let body = if requests.len() == 1 {
            RequestBody::Single(requests[0].clone())
        } else {
            RequestBody::Batch(requests.to_vec())
        };
        let id = self.submit(body)?;
        let answer = self.wait(id)?;
        if requests.len() == 1 {
            // single requests answer with a bare payload or an error envelope
            return Ok(vec![match answer {
                Ok(ResponseBody::Single(r)) => check_shape(&requests[0], r),
                Ok(other) => Err(ProviderError::Protocol(format!("unexpected response {other:?}"))),
                Err(e) => Err(e.into()),
            }]);
        }
        Self::collect_batch(requests, answer)
    }
}

impl Drop for Client {
    fn drop(&mut self) {
        if let Some(mut child) = self.child.take() {
            // closing stdin lets a well-behaved backend exit on EOF
            self.writer = Box::new(std::io::sink());
            if matches!(child.try_wait(), Ok(None)) {
                std::thread::sleep(std::time::Duration::from_millis(20));
                if matches!(child.try_wait(), Ok(None)) {
                    let _ = child.kill();
                }
            }
            let _ = child.wait();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::protocol::{decode_request, encode_response, BatchItem, RequestEnvelope};
    use crate::provider::{server, MockProvider, ProbSeq};
    use std::io::{BufRead, BufReader, Write};
    use std::net::TcpListener;

    #[test]
    fn endpoint_parsing() {
        assert_eq!("tcp://127.0.0.1:9000".parse::<Endpoint>().unwrap(), Endpoint::Tcp("127.0.0.1:9000".into()));
        assert_eq!("exec:python sidecar.py".parse::<Endpoint>().unwrap(), Endpoint::Exec("python sidecar.py".into()));
        assert!("http://x".parse::<Endpoint>().is_err());
        assert!("exec:".parse::<Endpoint>().is_err());
    }

    #[test]
    fn tcp_round_trip_against_mock_server() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        std::thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let reader = BufReader::new(stream.try_clone().unwrap());
            server::serve(MockProvider::new(11), reader, stream).unwrap();
        });
        let mut client = Client::connect(&Endpoint::Tcp(addr.to_string())).unwrap();
        let mut local = MockProvider::new(11);
        assert_eq!(client.info(), local.info());

        let seq = client.tokenize("my professor is a man").unwrap();
        assert_eq!(seq, local.tokenize("my professor is a man").unwrap());
        let reqs = vec![
            Request::Causal { sequence: seq.clone(), prepend_bos: true },
            Request::Nsp { sentence_a: "a".into(), sentence_b: "b".into() },
            Request::Mlm { sequence: seq.clone(), targets: vec![(0, 5)] },
        ];
        let remote = client.execute(&reqs).unwrap();
        let direct = local.execute(&reqs).unwrap();
        assert_eq!(remote.len(), 3);
        assert_eq!(remote[0].as_ref().unwrap(), direct[0].as_ref().unwrap());
        assert_eq!(remote[1].as_ref().unwrap(), direct[1].as_ref().unwrap());
        // unmasked target position is a per-item request error, not a batch failure
        assert!(remote[2].is_err());
    }

    #[test]
    fn out_of_order_responses_are_correlated() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        std::thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut writer = stream;
            let mock = MockProvider::new(0);
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            let hello = decode_request(line.trim()).unwrap();
            let resp = ResponseEnvelope {
                id: hello.id,
                result: Ok(ResponseBody::Hello { protocol_version: 1, info: mock.info().clone() }),
            };
            writeln!(writer, "{}", encode_response(&resp)).unwrap();
            // read two requests, answer the second first, batch items reversed
            let mut envs: Vec<RequestEnvelope> = Vec::new();
            for _ in 0..2 {
                line.clear();
                reader.read_line(&mut line).unwrap();
                envs.push(decode_request(line.trim()).unwrap());
            }
            for env in envs.iter().rev() {
                let body = match &env.body {
                    RequestBody::Batch(reqs) => ResponseBody::Batch(
                        (0..reqs.len())
                            .rev()
                            .map(|i| BatchItem { index: i, result: Ok(Response::Prob(i as f64 / 10.0)) })
                            .collect(),
                    ),
                    _ => ResponseBody::Single(Response::Probs(ProbSeq::new(vec![0.25]))),
                };
                writeln!(writer, "{}", encode_response(&ResponseEnvelope { id: env.id, result: Ok(body) })).unwrap();
            }
        });
        let mut client = Client::connect(&Endpoint::Tcp(addr.to_string())).unwrap();
        let nsp = |i: usize| Request::Nsp { sentence_a: format!("{i}"), sentence_b: "x".into() };
        let batch_reqs = vec![nsp(0), nsp(1), nsp(2)];
        let first = client.submit(RequestBody::Batch(batch_reqs.clone())).unwrap();
        let second = client
            .submit(RequestBody::Single(Request::Causal { sequence: Default::default(), prepend_bos: true }))
            .unwrap();
        let batch = Client::collect_batch(&batch_reqs, client.wait(first).unwrap()).unwrap();
        let probs: Vec<f64> = batch.into_iter().map(|r| r.unwrap().into_prob().unwrap()).collect();
        assert_eq!(probs, vec![0.0, 0.1, 0.2]);
        match client.wait(second).unwrap() {
            Ok(ResponseBody::Single(Response::Probs(p))) => assert_eq!(p.probs, vec![0.25]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn protocol_version_mismatch_fails_handshake() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        std::thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut writer = stream;
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            let resp = ResponseEnvelope {
                id: 0,
                result: Ok(ResponseBody::Hello { protocol_version: 2, info: MockProvider::new(0).info().clone() }),
            };
            writeln!(writer, "{}", encode_response(&resp)).unwrap();
        });
        assert!(matches!(
            Client::connect(&Endpoint::Tcp(addr.to_string())),
            Err(ProviderError::Handshake(_))
        ));
    }
}
