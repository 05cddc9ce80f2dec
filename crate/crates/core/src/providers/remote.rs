//! Blocking HTTP client for the model sidecar.
//!
//! Wire protocol (HTTP/1.1, JSON, UTF-8):
//!
//! | endpoint                     | request                                   | response                              |
//! |------------------------------|-------------------------------------------|---------------------------------------|
//! | `POST /v1/embed`             | `{"texts": [str]}`                        | `{"vectors": [[number]]}`             |
//! | `POST /v1/next_token_logprobs` | `{"prefix_tokens": [str], "allowed": [str]}` | `{"logprobs": {str: number}}`   |
//! | `POST /v1/score_continuation`| `{"prefix": str, "continuation": str}`    | `{"logprob": number, "token_count": int}` |
//! | `POST /v1/complete`          | `{"prompt": str, "max_tokens": int}`      | `{"text": str}`                       |
//! | `POST /v1/rank_similar`      | `{"candidates": [str], "seeds": [str], "top": int}` | `{"entities": [str]}`       |
//!
//! Failures are non-200 responses carrying `{"error": str, "request_id": str}`.
//! Every request carries an `X-Request-Id` header; 429 and 5xx responses and
//! transport failures are retried up to `retry` times under the same id.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{ContinuationScore, Embedder, LanguageModel, ProviderError, SimilarityRanker};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderEndpoint {
    pub base_url: String,
    #[serde(with = "millis")]
    pub timeout: Duration,
    pub retry: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_token: Option<String>,
}

mod millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_millis)
    }
}

impl ProviderEndpoint {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            timeout: Duration::from_secs(30),
            retry: 2,
            auth_token: None,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.timeout.is_zero() {
            return Err("endpoint timeout must be positive".into());
        }
        if !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://")) {
            return Err(format!("endpoint url {:?} is not http(s)", self.base_url));
        }
        Ok(())
    }
}

static NEXT_REQUEST: AtomicU64 = AtomicU64::new(1);

/// Client implementing every provider contract against a sidecar.
pub struct RemoteProvider {
    endpoint: ProviderEndpoint,
    agent: ureq::Agent,
    mask_token: String,
    retries: AtomicU64,
}

impl std::fmt::Debug for RemoteProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteProvider")
            .field("endpoint", &self.endpoint.base_url)
            .finish()
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Serialize)]
struct NextTokenRequest<'a> {
    prefix_tokens: &'a [String],
    allowed: &'a [String],
}

#[derive(Serialize)]
struct ContinuationRequest<'a> {
    prefix: &'a str,
    continuation: &'a str,
}

#[derive(Serialize)]
struct CompleteRequest<'a> {
    prompt: &'a str,
    max_tokens: usize,
}

#[derive(Serialize)]
struct RankRequest<'a> {
    candidates: &'a [String],
    seeds: &'a [String],
    top: usize,
}

impl RemoteProvider {
    pub fn new(endpoint: ProviderEndpoint) -> Result<Self, ProviderError> {
        endpoint.validate().map_err(ProviderError::Other)?;
        let agent = ureq::AgentBuilder::new().timeout(endpoint.timeout).build();
        Ok(Self {
            endpoint,
            agent,
            mask_token: "[MASK]".into(),
            retries: AtomicU64::new(0),
        })
    }

    pub fn with_mask_token(mut self, mask: impl Into<String>) -> Self {
        self.mask_token = mask.into();
        self
    }

    pub fn endpoint(&self) -> &ProviderEndpoint {
        &self.endpoint
    }

    /// Number of retried attempts so far.
    pub fn retries_performed(&self) -> u64 {
        self.retries.load(Ordering::Relaxed)
    }

    fn post<T>(
        &self,
        path: &str,
        body: &impl Serialize,
        parse: impl Fn(&Value) -> Result<T, String>,
    ) -> Result<T, ProviderError> {
        let request_id = format!("req-{:08x}", NEXT_REQUEST.fetch_add(1, Ordering::Relaxed));
        let payload = serde_json::to_string(body).map_err(|e| ProviderError::Protocol {
            request_id: request_id.clone(),
            detail: format!("cannot encode request: {e}"),
        })?;
        let url = format!("{}{}", self.endpoint.base_url.trim_end_matches('/'), path);

        let mut attempt = 0;
        loop {
            let mut req = self
                .agent
                .post(&url)
                .set("Content-Type", "application/json")
                .set("X-Request-Id", &request_id);
            if let Some(token) = &self.endpoint.auth_token {
                req = req.set("Authorization", &format!("Bearer {token}"));
            }
            let failure = match req.send_string(&payload) {
                Ok(resp) => return read_ok(resp, &request_id, &parse),
                Err(ureq::Error::Status(status, resp)) => {
                    let retryable = status == 429 || status >= 500;
                    let err = status_error(status, resp, &request_id);
                    if !retryable {
                        return Err(err);
                    }
                    err
                }
                Err(ureq::Error::Transport(t)) => transport_error(t, &request_id),
            };
            if attempt >= self.endpoint.retry {
                return Err(failure);
            }
            attempt += 1;
            self.retries.fetch_add(1, Ordering::Relaxed);
            log::warn!("{path}: retry {attempt}/{} after: {failure}", self.endpoint.retry);
        }
    }
}

fn read_ok<T>(
    resp: ureq::Response,
    request_id: &str,
    parse: &impl Fn(&Value) -> Result<T, String>,
) -> Result<T, ProviderError> {
    let protocol = |detail: String| ProviderError::Protocol {
        request_id: request_id.to_owned(),
        detail,
    };
    let text = resp
        .into_string()
        .map_err(|e| protocol(format!("unreadable body: {e}")))?;
    let value: Value =
        serde_json::from_str(&text).map_err(|e| protocol(format!("invalid json: {e}")))?;
    parse(&value).map_err(protocol)
}

fn status_error(status: u16, resp: ureq::Response, request_id: &str) -> ProviderError {
    let body = resp.into_string().unwrap_or_default();
    let envelope: Option<Value> = serde_json::from_str(&body).ok();
    let field = |name: &str| {
        envelope
            .as_ref()
            .and_then(|v| v.get(name))
            .and_then(Value::as_str)
            .map(str::to_owned)
    };
    ProviderError::Http {
        request_id: field("request_id").unwrap_or_else(|| request_id.to_owned()),
        status,
        message: field("error").unwrap_or(body),
    }
}

fn transport_error(t: ureq::Transport, request_id: &str) -> ProviderError {
    let timed_out = std::error::Error::source(&t)
        .and_then(|s| s.downcast_ref::<std::io::Error>())
        .is_some_and(|e| {
            matches!(
                e.kind(),
                std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock
            )
        })
        || t.to_string().contains("timed out");
    if timed_out {
        ProviderError::Timeout {
            request_id: request_id.to_owned(),
        }
    } else {
        ProviderError::Transport {
            request_id: request_id.to_owned(),
            message: t.to_string(),
        }
    }
}

fn field<'a>(v: &'a Value, name: &str) -> Result<&'a Value, String> {
    v.get(name).ok_or_else(|| format!("missing field `{name}`"))
}

fn number(v: &Value, what: &str) -> Result<f64, String> {
    v.as_f64().ok_or_else(|| format!("`{what}` is not a number"))
}

fn strings(v: &Value, what: &str) -> Result<Vec<String>, String> {
    v.as_array()
        .ok_or_else(|| format!("`{what}` is not an array"))?
        .iter()
        .map(|s| {
            s.as_str()
                .map(str::to_owned)
                .ok_or_else(|| format!("`{what}` contains a non-string"))
        })
        .collect()
}

impl Embedder for RemoteProvider {
    fn mask_token(&self) -> &str {
        &self.mask_token
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        self.post("/v1/embed", &EmbedRequest { texts }, |v| {
            let rows = field(v, "vectors")?
                .as_array()
                .ok_or("`vectors` is not an array")?;
            if rows.len() != texts.len() {
                return Err(format!(
                    "`vectors` has {} rows for {} texts",
                    rows.len(),
                    texts.len()
                ));
            }
            rows.iter()
                .map(|row| {
                    row.as_array()
                        .ok_or_else(|| "`vectors` row is not an array".to_owned())?
                        .iter()
                        .map(|x| number(x, "vectors"))
                        .collect()
                })
                .collect()
        })
    }
}

impl LanguageModel for RemoteProvider {
    fn next_token_logprobs(
        &self,
        prefix_tokens: &[String],
        allowed: &[String],
    ) -> Result<BTreeMap<String, f64>, ProviderError> {
        let body = NextTokenRequest {
            prefix_tokens,
            allowed,
        };
        self.post("/v1/next_token_logprobs", &body, |v| {
            field(v, "logprobs")?
                .as_object()
                .ok_or("`logprobs` is not an object")?
                .iter()
                .map(|(k, x)| Ok((k.clone(), number(x, "logprobs")?)))
                .collect()
        })
    }

    fn score_continuation(
        &self,
        prefix: &str,
        continuation: &str,
    ) -> Result<ContinuationScore, ProviderError> {
        let body = ContinuationRequest {
            prefix,
            continuation,
        };
        self.post("/v1/score_continuation", &body, |v| {
            Ok(ContinuationScore {
                logprob: number(field(v, "logprob")?, "logprob")?,
                token_count: field(v, "token_count")?
                    .as_u64()
                    .ok_or("`token_count` is not a non-negative integer")?
                    as usize,
            })
        })
    }

    fn complete(&self, prompt: &str, max_tokens: usize) -> Result<String, ProviderError> {
        self.post("/v1/complete", &CompleteRequest { prompt, max_tokens }, |v| {
            field(v, "text")?
                .as_str()
                .map(str::to_owned)
                .ok_or_else(|| "`text` is not a string".to_owned())
        })
    }
}

impl SimilarityRanker for RemoteProvider {
    fn rank_similar(
        &self,
        candidates: &[String],
        seeds: &[String],
        top: usize,
    ) -> Result<Vec<String>, ProviderError> {
        let body = RankRequest {
            candidates,
            seeds,
            top,
        };
        self.post("/v1/rank_similar", &body, |v| {
            strings(field(v, "entities")?, "entities")
        })
    }
}
