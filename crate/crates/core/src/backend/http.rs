use std::io::Read;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use super::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Get,
    Post,
}

/// Moves one HTTP exchange. `Ok` carries any status code; `Err` is for
/// failures below HTTP (connection refused, timeout).
pub trait Transport: Send + Sync {
    fn send(&self, method: Method, path: &str, body: Option<&str>) -> Result<(u16, String)>;
}

/// Blocking transport over `ureq`.
pub struct UreqTransport {
    base: String,
    timeout: Duration,
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(base_url: &str, timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build();
        UreqTransport {
            base: base_url.trim_end_matches('/').to_string(),
            timeout,
            agent: ureq::Agent::new_with_config(config),
        }
    }
}

impl Transport for UreqTransport {
    fn send(&self, method: Method, path: &str, body: Option<&str>) -> Result<(u16, String)> {
        let url = format!("{}{}", self.base, path);
        let result = match method {
            Method::Get => self.agent.get(&url).call(),
            Method::Post => self
                .agent
                .post(&url)
                .header("content-type", "application/json")
                .send(body.unwrap_or("")),
        };
        let mut resp = result.map_err(|e| match e {
            ureq::Error::Timeout(_) => BackendError::Timeout(self.timeout),
            other => BackendError::Transport(format!("{url}: {other}")),
        })?;
        let status = resp.status().as_u16();
        let mut text = String::new();
        resp.body_mut()
            .as_reader()
            .read_to_string(&mut text)
            .map_err(|e| BackendError::Transport(format!("{url}: reading body: {e}")))?;
        Ok((status, text))
    }
}

// Counting semaphore bounding requests in flight across all callers.
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn new(n: usize) -> Self {
        Gate {
            free: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn run<R>(&self, f: impl FnOnce() -> R) -> R {
        {
            let mut free = self.free.lock().expect("gate lock");
            while *free == 0 {
                free = self.cv.wait(free).expect("gate lock");
            }
            *free -= 1;
        }
        let r = f();
        *self.free.lock().expect("gate lock") += 1;
        self.cv.notify_one();
        r
    }
}

#[derive(Deserialize)]
struct ErrorBody {
    error: ErrorDetail,
}

#[derive(Deserialize)]
struct ErrorDetail {
    kind: String,
    #[serde(default)]
    detail: String,
}

/// Wire client for the model service.
///
/// Translate and classify requests are split into `batch_size` chunks,
/// sent with at most `max_in_flight` outstanding requests, retried on
/// transient failures with exponential backoff, and reassembled in request
/// order after checking that every id came back exactly once. Training
/// endpoints are not idempotent and are never retried.
pub struct HttpBackend<T: Transport> {
    transport: T,
    cfg: BackendConfig,
    gate: Gate,
}

impl<T: Transport> HttpBackend<T> {
    pub fn new(transport: T, cfg: BackendConfig) -> Self {
        let gate = Gate::new(cfg.max_in_flight.max(1));
        HttpBackend { transport, cfg, gate }
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }

    fn exchange(&self, method: Method, path: &str, body: Option<&str>) -> Result<String> {
        let (status, text) = self.gate.run(|| self.transport.send(method, path, body))?;
        if (200..300).contains(&status) {
            return Ok(text);
        }
        let (kind, detail) = match serde_json::from_str::<ErrorBody>(&text) {
            Ok(b) => (b.error.kind, b.error.detail),
            Err(_) if status >= 500 => ("internal".to_string(), format!("HTTP {status}: {text}")),
            Err(_) => ("invalid_response".to_string(), format!("HTTP {status}: {text}")),
        };
        Err(match kind.as_str() {
            "timeout" => BackendError::Timeout(self.cfg.timeout()),
            "unknown_job" => BackendError::UnknownJob(detail),
            "unknown_model" => BackendError::UnknownModel(detail),
            "invalid_request" => BackendError::InvalidRequest(detail),
            "invalid_response" => BackendError::InvalidResponse(detail),
            _ => BackendError::Service { kind, detail },
        })
    }

    fn with_retries(&self, path: &str, body: &str) -> Result<String> {
        let policy = self.cfg.retry;
        let mut attempt = 1;
        loop {
            match self.exchange(Method::Post, path, Some(body)) {
                Err(e) if e.is_transient() && attempt < policy.max_attempts => {
                    attempt += 1;
                    std::thread::sleep(policy.delay(attempt));
                }
                other => return other,
            }
        }
    }

    // Runs `f` over item chunks with bounded concurrency, in chunk order.
    fn chunked<R: Send>(&self, items: &[TextItem], f: impl Fn(&[TextItem]) -> Result<R> + Sync) -> Result<Vec<R>> {
        let chunks: Vec<&[TextItem]> = items.chunks(self.cfg.batch_size.max(1)).collect();
        if chunks.len() == 1 {
            return Ok(vec![f(chunks[0])?]);
        }
        let workers = self.cfg.max_in_flight.max(1).min(chunks.len());
        let next = std::sync::atomic::AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<Result<R>>>> = chunks.iter().map(|_| Mutex::new(None)).collect();
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let c = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                    if c >= chunks.len() {
                        break;
                    }
                    *slots[c].lock().expect("slot lock") = Some(f(chunks[c]));
                });
            }
        });
        slots
            .into_iter()
            .map(|s| s.into_inner().expect("slot lock").expect("every chunk ran"))
            .collect()
    }
}

fn decode<R: serde::de::DeserializeOwned>(text: &str) -> Result<R> {
    serde_json::from_str(text).map_err(|e| BackendError::InvalidResponse(e.to_string()))
}

fn encode<R: Serialize>(v: &R) -> String {
    serde_json::to_string(v).expect("wire types serialize")
}

impl<T: Transport> Backend for HttpBackend<T> {
    fn translate(&self, req: &TranslateRequest) -> Result<TranslateResponse> {
        if req.items.is_empty() {
            return Ok(TranslateResponse {
                items: Vec::new(),
                model_id: req.model_id.clone().unwrap_or_default(),
            });
        }
        let parts = self.chunked(&req.items, |chunk| {
            let sub = TranslateRequest {
                items: chunk.to_vec(),
                ..req.clone()
            };
            let resp: TranslateResponse = match self.with_retries("/v1/translate", &encode(&sub)) {
                Err(BackendError::Service { kind, .. }) if kind == "unsupported_pair" => {
                    return Err(BackendError::UnsupportedPair {
                        src: req.src.to_string(),
                        tgt: req.tgt.to_string(),
                    })
                }
                other => decode(&other?)?,
            };
            let items = conserve_ids(chunk, &resp.items, |t| &t.id)?;
            Ok((items, resp.model_id))
        })?;
        let model_id = parts[0].1.clone();
        Ok(TranslateResponse {
            items: parts.into_iter().flat_map(|p| p.0).collect(),
            model_id,
        })
    }

    fn classify(&self, req: &ClassifyRequest) -> Result<ClassifyResponse> {
        if req.items.is_empty() {
            return Ok(ClassifyResponse {
                items: Vec::new(),
                model_id: req.model_id.clone().unwrap_or_default(),
            });
        }
        let parts = self.chunked(&req.items, |chunk| {
            let sub = ClassifyRequest {
                items: chunk.to_vec(),
                ..req.clone()
            };
            let resp: ClassifyResponse = decode(&self.with_retries("/v1/classify", &encode(&sub))?)?;
            let items = conserve_ids(chunk, &resp.items, |c| &c.id)?
                .into_iter()
                .map(|c| normalize_classification(req.task, c))
                .collect::<Result<Vec<_>>>()?;
            Ok((items, resp.model_id))
        })?;
        let model_id = parts[0].1.clone();
        Ok(ClassifyResponse {
            items: parts.into_iter().flat_map(|p| p.0).collect(),
            model_id,
        })
    }

    fn submit_training_job(&self, job: &TrainingJob) -> Result<String> {
        let r: JobSubmitted = decode(&self.exchange(Method::Post, "/v1/train", Some(&encode(job)))?)?;
        Ok(r.job_id)
    }

    fn poll_job(&self, job_id: &str) -> Result<JobStatus> {
        decode(&self.exchange(Method::Get, &format!("/v1/jobs/{job_id}"), None)?)
    }

    fn stop_job(&self, job_id: &str, select_checkpoint: Option<&str>) -> Result<JobStatus> {
        let action = JobAction::Stop {
            select_checkpoint: select_checkpoint.map(str::to_string),
        };
        decode(&self.exchange(Method::Post, &format!("/v1/jobs/{job_id}"), Some(&encode(&action)))?)
    }

    fn describe(&self) -> String {
        self.cfg.endpoint.clone()
    }
}
