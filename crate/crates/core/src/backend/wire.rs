//! Server side of the wire protocol, usable with any [`Backend`].
//!
//! [`serve_request`] maps one HTTP exchange onto backend calls.
//! [`Loopback`] plugs it straight into [`HttpBackend`] as a transport, and
//! [`serve_connection`] speaks just enough HTTP/1.1 over a socket for
//! contract tests against a real client.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;

use serde_json::json;

use super::*;

pub fn status_for(err: &BackendError) -> u16 {
    match err {
        BackendError::UnknownJob(_) | BackendError::UnknownModel(_) => 404,
        BackendError::InvalidRequest(_) | BackendError::Config(_) => 400,
        BackendError::UnsupportedPair { .. } => 422,
        BackendError::Timeout(_) => 504,
        BackendError::Service { kind, .. } if kind == "unavailable" => 503,
        _ => 500,
    }
}

pub fn error_body(kind: &str, detail: &str) -> String {
    json!({ "error": { "kind": kind, "detail": detail } }).to_string()
}

fn reply<T: Serialize>(r: Result<T>) -> (u16, String) {
    match r {
        Ok(v) => (200, serde_json::to_string(&v).expect("wire types serialize")),
        Err(e) => (status_for(&e), error_body(e.kind(), &e.detail())),
    }
}

fn parse<T: serde::de::DeserializeOwned>(body: &str) -> Result<T> {
    serde_json::from_str(body).map_err(|e| BackendError::InvalidRequest(e.to_string()))
}

/// Handles one request: returns status code and JSON body.
pub fn serve_request(backend: &dyn Backend, method: Method, path: &str, body: &str) -> (u16, String) {
    match (method, path) {
        (Method::Post, "/v1/translate") => reply(parse::<TranslateRequest>(body).and_then(|r| backend.translate(&r))),
        (Method::Post, "/v1/classify") => reply(parse::<ClassifyRequest>(body).and_then(|r| backend.classify(&r))),
        (Method::Post, "/v1/train") => reply(
            parse::<TrainingJob>(body)
                .and_then(|j| backend.submit_training_job(&j))
                .map(|job_id| JobSubmitted { job_id }),
        ),
        (m, p) if p.starts_with("/v1/jobs/") && p.len() > "/v1/jobs/".len() => {
            let id = &p["/v1/jobs/".len()..];
            match m {
                Method::Get => reply(backend.poll_job(id)),
                Method::Post => reply(parse::<JobAction>(body).and_then(|a| match a {
                    JobAction::Stop { select_checkpoint } => backend.stop_job(id, select_checkpoint.as_deref()),
                })),
            }
        }
        (_, "/v1/translate" | "/v1/classify" | "/v1/train") => (405, error_body("method_not_allowed", path)),
        _ => (404, error_body("not_found", path)),
    }
}

/// In-process transport that hands requests to [`serve_request`].
pub struct Loopback<B: Backend> {
    pub backend: B,
}

impl<B: Backend> Transport for Loopback<B> {
    fn send(&self, method: Method, path: &str, body: Option<&str>) -> Result<(u16, String)> {
        Ok(serve_request(&self.backend, method, path, body.unwrap_or("")))
    }
}

/// Serves HTTP/1.1 requests on one connection until the peer closes it.
pub fn serve_connection(stream: TcpStream, backend: &dyn Backend) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut out = stream;
    loop {
        let mut request_line = String::new();
        if reader.read_line(&mut request_line)? == 0 {
            return Ok(());
        }
        let mut parts = request_line.split_whitespace();
        let (verb, path) = (parts.next().unwrap_or(""), parts.next().unwrap_or("").to_string());
        let mut length = 0usize;
        let mut close = false;
        loop {
            let mut line = String::new();
            if reader.read_line(&mut line)? == 0 {
                return Ok(());
            }
            let line = line.trim_end();
            if line.is_empty() {
                break;
            }
            if let Some((k, v)) = line.split_once(':') {
                let k = k.trim().to_ascii_lowercase();
                if k == "content-length" {
                    length = v.trim().parse().unwrap_or(0);
                } else if k == "connection" && v.trim().eq_ignore_ascii_case("close") {
                    close = true;
                }
            }
        }
        let mut body = vec![0u8; length];
        reader.read_exact(&mut body)?;
        let body = String::from_utf8_lossy(&body);
        let (status, text) = match verb {
            "GET" => serve_request(backend, Method::Get, &path, &body),
            "POST" => serve_request(backend, Method::Post, &path, &body),
            _ => (405, error_body("method_not_allowed", verb)),
        };
        write!(
            out,
            "HTTP/1.1 {status} {}\r\ncontent-type: application/json; charset=utf-8\r\ncontent-length: {}\r\n\r\n{text}",
            if status == 200 { "OK" } else { "Error" },
            text.len()
        )?;
        out.flush()?;
        if close {
            return Ok(());
        }
    }
}
