//! Model provider contracts.
//!
//! Each pipeline stage asks for exactly one capability:
//!
//! * [`Embedder`] returns the hidden state at the mask position of each text.
//! * [`LanguageModel`] scores next tokens (constrained decoding), whole
//!   continuations (generative similarity), and free completions (class-name
//!   reasoning).
//! * [`SimilarityRanker`] picks the candidates closest to a seed set (pair
//!   mining).
//!
//! In-process stubs are deterministic functions of their inputs and seed; the
//! [`remote`] client speaks the sidecar's HTTP protocol. All providers must be
//! safe to call concurrently.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

mod hashing;
pub mod remote;
pub mod stub_embedder;
pub mod stub_lm;

pub use remote::{ProviderEndpoint, RemoteProvider};
pub use stub_embedder::StubEmbedder;
pub use stub_lm::StubLm;

pub(crate) use hashing::splitmix64;

/// Token emitted by a decoder to close an entity.
pub const END_TOKEN: &str = "<|end|>";

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("request {request_id} timed out")]
    Timeout { request_id: String },

    #[error("request {request_id}: protocol violation: {detail}")]
    Protocol { request_id: String, detail: String },

    #[error("request {request_id}: http status {status}: {message}")]
    Http {
        request_id: String,
        status: u16,
        message: String,
    },

    #[error("request {request_id}: transport error: {message}")]
    Transport { request_id: String, message: String },

    #[error("{0}")]
    Other(String),
}

/// Log-probability of a continuation together with its token length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContinuationScore {
    pub logprob: f64,
    pub token_count: usize,
}

pub trait Embedder: Send + Sync {
    fn mask_token(&self) -> &str;

    /// One vector per text, taken at the (single) mask position.
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError>;
}

pub trait LanguageModel: Send + Sync {
    /// Log-probabilities of the `allowed` tokens after `prefix_tokens`,
    /// renormalized over `allowed`.
    fn next_token_logprobs(
        &self,
        prefix_tokens: &[String],
        allowed: &[String],
    ) -> Result<BTreeMap<String, f64>, ProviderError>;

    fn score_continuation(
        &self,
        prefix: &str,
        continuation: &str,
    ) -> Result<ContinuationScore, ProviderError>;

    fn complete(&self, prompt: &str, max_tokens: usize) -> Result<String, ProviderError>;
}

pub trait SimilarityRanker: Send + Sync {
    /// The `top` candidates most similar to `seeds`, best first.
    fn rank_similar(
        &self,
        candidates: &[String],
        seeds: &[String],
        top: usize,
    ) -> Result<Vec<String>, ProviderError>;
}

impl<T: Embedder + ?Sized> Embedder for &T {
    fn mask_token(&self) -> &str {
        (**self).mask_token()
    }
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        (**self).embed(texts)
    }
}

impl<T: LanguageModel + ?Sized> LanguageModel for &T {
    fn next_token_logprobs(
        &self,
        prefix_tokens: &[String],
        allowed: &[String],
    ) -> Result<BTreeMap<String, f64>, ProviderError> {
        (**self).next_token_logprobs(prefix_tokens, allowed)
    }
    fn score_continuation(
        &self,
        prefix: &str,
        continuation: &str,
    ) -> Result<ContinuationScore, ProviderError> {
        (**self).score_continuation(prefix, continuation)
    }
    fn complete(&self, prompt: &str, max_tokens: usize) -> Result<String, ProviderError> {
        (**self).complete(prompt, max_tokens)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenizerKind {
    /// One token per Unicode scalar value.
    #[default]
    Character,
    /// Tokens are maximal runs of non-whitespace.
    Whitespace,
    /// Tokens come from a caller-supplied function; see [`Tokenizer::external`].
    External,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizerSpec {
    pub kind: TokenizerKind,
    pub mask_token: String,
}

impl Default for TokenizerSpec {
    fn default() -> Self {
        Self {
            kind: TokenizerKind::Character,
            mask_token: "[MASK]".into(),
        }
    }
}

impl TokenizerSpec {
    /// Checks the mask token is non-empty and never occurs in `texts`.
    pub fn validate<'a>(&self, texts: impl IntoIterator<Item = &'a str>) -> Result<(), String> {
        if self.mask_token.is_empty() {
            return Err("mask token is empty".into());
        }
        match texts.into_iter().find(|t| t.contains(&self.mask_token)) {
            Some(t) => Err(format!("mask token {:?} occurs in text {:?}", self.mask_token, t)),
            None => Ok(()),
        }
    }
}

type ExternalFn = dyn Fn(&str) -> Vec<String> + Send + Sync;

/// Splits text into the token units shared by the decoder and the trie.
#[derive(Clone)]
pub struct Tokenizer {
    kind: TokenizerKind,
    external: Option<std::sync::Arc<ExternalFn>>,
}

impl std::fmt::Debug for Tokenizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tokenizer").field("kind", &self.kind).finish()
    }
}

impl Tokenizer {
    pub fn new(kind: TokenizerKind) -> Self {
        assert!(
            kind != TokenizerKind::External,
            "external tokenizers need a function; use Tokenizer::external"
        );
        Self {
            kind,
            external: None,
        }
    }

    pub fn character() -> Self {
        Self::new(TokenizerKind::Character)
    }

    pub fn whitespace() -> Self {
        Self::new(TokenizerKind::Whitespace)
    }

    pub fn external(f: impl Fn(&str) -> Vec<String> + Send + Sync + 'static) -> Self {
        Self {
            kind: TokenizerKind::External,
            external: Some(std::sync::Arc::new(f)),
        }
    }

    pub fn kind(&self) -> TokenizerKind {
        self.kind
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        match self.kind {
            TokenizerKind::Character => text.chars().map(String::from).collect(),
            TokenizerKind::Whitespace => text.split_whitespace().map(String::from).collect(),
            TokenizerKind::External => (self.external.as_ref().expect("external fn"))(text),
        }
    }

    /// Inverse of [`tokenize`](Self::tokenize) for the built-in kinds.
    pub fn detokenize(&self, tokens: &[String]) -> String {
        match self.kind {
            TokenizerKind::Character | TokenizerKind::External => tokens.concat(),
            TokenizerKind::Whitespace => tokens.join(" "),
        }
    }
}

/// Log-softmax of raw weights restricted to `allowed`.
pub(crate) fn renormalize(weights: &[(String, f64)]) -> BTreeMap<String, f64> {
    let total: f64 = weights.iter().map(|(_, w)| w).sum();
    weights
        .iter()
        .map(|(t, w)| (t.clone(), (w / total).ln()))
        .collect()
}
