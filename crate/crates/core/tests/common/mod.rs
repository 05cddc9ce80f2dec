#![allow(dead_code)]

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};

use serde_json::{json, Value};
use ultraese::providers::{Embedder, LanguageModel, SimilarityRanker};

/// What the server saw for one request.
#[derive(Debug, Clone)]
pub struct Seen {
    pub path: String,
    pub body: Value,
    pub request_id: Option<String>,
    pub auth: Option<String>,
}

pub type Log = Arc<Mutex<Vec<Seen>>>;

/// Scripted replies, consumed in order; `None` falls through to the backend.
pub type Script = Arc<Mutex<VecDeque<(u16, String)>>>;

pub struct Backend {
    pub embedder: Option<Box<dyn Embedder>>,
    pub lm: Option<Box<dyn LanguageModel>>,
    pub ranker: Option<Box<dyn SimilarityRanker>>,
}

impl Backend {
    pub fn none() -> Self {
        Self {
            embedder: None,
            lm: None,
            ranker: None,
        }
    }

    fn answer(&self, path: &str, b: &Value) -> Result<Value, String> {
        let strs = |v: &Value| -> Vec<String> {
            v.as_array()
                .map(|a| a.iter().filter_map(|s| s.as_str().map(str::to_owned)).collect())
                .unwrap_or_default()
        };
        let err = |e: ultraese::providers::ProviderError| e.to_string();
        match path {
            "/v1/embed" => {
                let e = self.embedder.as_ref().ok_or("no embedder")?;
                Ok(json!({ "vectors": e.embed(&strs(&b["texts"])).map_err(err)? }))
            }
            "/v1/next_token_logprobs" => {
                let lm = self.lm.as_ref().ok_or("no lm")?;
                let lp = lm
                    .next_token_logprobs(&strs(&b["prefix_tokens"]), &strs(&b["allowed"]))
                    .map_err(err)?;
                Ok(json!({ "logprobs": lp }))
            }
            "/v1/score_continuation" => {
                let lm = self.lm.as_ref().ok_or("no lm")?;
                let s = lm
                    .score_continuation(
                        b["prefix"].as_str().unwrap_or_default(),
                        b["continuation"].as_str().unwrap_or_default(),
                    )
                    .map_err(err)?;
                Ok(json!({ "logprob": s.logprob, "token_count": s.token_count }))
            }
            "/v1/complete" => {
                let lm = self.lm.as_ref().ok_or("no lm")?;
                let text = lm
                    .complete(
                        b["prompt"].as_str().unwrap_or_default(),
                        b["max_tokens"].as_u64().unwrap_or(0) as usize,
                    )
                    .map_err(err)?;
                Ok(json!({ "text": text }))
            }
            "/v1/rank_similar" => {
                let r = self.ranker.as_ref().ok_or("no ranker")?;
                let out = r
                    .rank_similar(
                        &strs(&b["candidates"]),
                        &strs(&b["seeds"]),
                        b["top"].as_u64().unwrap_or(0) as usize,
                    )
                    .map_err(err)?;
                Ok(json!({ "entities": out }))
            }
            _ => Err(format!("unknown path {path}")),
        }
    }
}

const WORKERS: usize = 4;

/// Status 0 in a script means: wait `SLOW` and then answer 200.
pub const SLOW: std::time::Duration = std::time::Duration::from_millis(1500);

pub struct MockSidecar {
    pub url: String,
    pub log: Log,
    pub script: Script,
    server: Arc<tiny_http::Server>,
}

impl MockSidecar {
    pub fn start(backend: Backend) -> Self {
        let server = Arc::new(tiny_http::Server::http("127.0.0.1:0").expect("bind"));
        let url = format!("http://{}", server.server_addr().to_ip().expect("ip"));
        let log: Log = Arc::default();
        let script: Script = Arc::default();
        let backend = Arc::new(backend);
        for _ in 0..WORKERS {
            let (server, log, script, backend) =
                (server.clone(), log.clone(), script.clone(), backend.clone());
            std::thread::spawn(move || {
                for mut req in server.incoming_requests() {
                    let header = |name: &'static str| {
                        req.headers()
                            .iter()
                            .find(|h| h.field.equiv(name))
                            .map(|h| h.value.as_str().to_owned())
                    };
                    let request_id = header("X-Request-Id");
                    let auth = header("Authorization");
                    let body: Value = serde_json::from_reader(req.as_reader()).unwrap_or(Value::Null);
                    let path = req.url().to_owned();
                    log.lock().unwrap().push(Seen {
                        path: path.clone(),
                        body: body.clone(),
                        request_id: request_id.clone(),
                        auth,
                    });
                    let scripted = script.lock().unwrap().pop_front();
                    let (status, text) = match scripted {
                        Some((0, body)) => {
                            std::thread::sleep(SLOW);
                            (200, body)
                        }
                        Some(s) => s,
                        None => match backend.answer(&path, &body) {
                            Ok(v) => (200, v.to_string()),
                            Err(e) => (
                                500,
                                json!({ "error": e, "request_id": request_id.unwrap_or_default() })
                                    .to_string(),
                            ),
                        },
                    };
                    let resp = tiny_http::Response::from_string(text).with_status_code(status);
                    let _ = req.respond(resp);
                }
            });
        }
        Self {
            url,
            log,
            script,
            server,
        }
    }

    pub fn push_reply(&self, status: u16, body: impl Into<String>) {
        self.script.lock().unwrap().push_back((status, body.into()));
    }

    pub fn seen(&self) -> Vec<Seen> {
        self.log.lock().unwrap().clone()
    }
}

impl Drop for MockSidecar {
    fn drop(&mut self) {
        for _ in 0..WORKERS {
            self.server.unblock();
        }
    }
}
