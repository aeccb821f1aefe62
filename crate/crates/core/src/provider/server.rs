//! Serves any [`Provider`] over the wire protocol.
//!
//! Used by the bundled mock backend binary and by tests; real model
//! backends implement the same protocol out of process.

use std::io::{self, BufRead, Write};
use std::net::TcpListener;

use log::warn;

use super::protocol::{
    decode_request, encode_response, BatchItem, RequestBody, ResponseBody, ResponseEnvelope, WireError,
};
use super::{ErrorCode, Provider, PROTOCOL_VERSION};

/// Answers requests from `reader` until EOF. The first exchange must be `hello`.
pub fn serve<P, R, W>(mut provider: P, mut reader: R, mut writer: W) -> io::Result<()>
where
    P: Provider,
    R: BufRead,
    W: Write,
{
    let mut greeted = false;
    let mut line = String::new();
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Ok(());
        }
        if line.trim().is_empty() {
            continue;
        }
        let env = match decode_request(line.trim_end()) {
            Ok(env) => env,
            Err(e) => {
                warn!("undecodable request: {e}");
                // no usable id; answer with id 0 is all we can do
                let id = serde_json::from_str::<serde_json::Value>(&line)
                    .ok()
                    .and_then(|v| v.get("id").and_then(|i| i.as_u64()))
                    .unwrap_or(0);
                write_response(&mut writer, id, Err(WireError::from(&e)))?;
                continue;
            }
        };
        let result = match env.body {
            RequestBody::Hello { protocol_version } => {
                if protocol_version == PROTOCOL_VERSION {
                    greeted = true;
                    Ok(ResponseBody::Hello { protocol_version: PROTOCOL_VERSION, info: provider.info().clone() })
                } else {
                    Err(WireError {
                        code: ErrorCode::Handshake,
                        message: format!("unsupported protocol version {protocol_version}"),
                    })
                }
            }
            _ if !greeted => Err(WireError {
                code: ErrorCode::Protocol,
                message: "the first exchange on a connection must be `hello`".into(),
            }),
            RequestBody::Single(request) => match provider.call(request) {
                Ok(r) => Ok(ResponseBody::Single(r)),
                Err(e) => Err(WireError::from(&e)),
            },
            RequestBody::Batch(requests) => match provider.execute(&requests) {
                Ok(results) => Ok(ResponseBody::Batch(
                    results
                        .into_iter()
                        .enumerate()
                        .map(|(index, r)| BatchItem { index, result: r.map_err(|e| WireError::from(&e)) })
                        .collect(),
                )),
                Err(e) => Err(WireError::from(&e)),
            },
        };
        write_response(&mut writer, env.id, result)?;
    }
}

fn write_response<W: Write>(writer: &mut W, id: u64, result: Result<ResponseBody, WireError>) -> io::Result<()> {
    let mut out = encode_response(&ResponseEnvelope { id, result });
    out.push('\n');
    writer.write_all(out.as_bytes())?;
    writer.flush()
}

/// Accepts TCP connections forever, one thread per connection.
pub fn serve_tcp<P, F>(listener: TcpListener, make_provider: F) -> io::Result<()>
where
    P: Provider + Send + 'static,
    F: Fn() -> P,
{
    for stream in listener.incoming() {
        let stream = stream?;
        let provider = make_provider();
        std::thread::spawn(move || {
            let reader = io::BufReader::new(match stream.try_clone() {
                Ok(s) => s,
                Err(e) => {
                    warn!("cannot clone connection: {e}");
                    return;
                }
            });
            if let Err(e) = serve(provider, reader, stream) {
                warn!("connection ended with error: {e}");
            }
        });
    }
    Ok(())
}
