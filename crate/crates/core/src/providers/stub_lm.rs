use std::collections::{BTreeMap, BTreeSet, HashMap};

use super::hashing::{fnv1a, unit_interval};
use super::{renormalize, ContinuationScore, LanguageModel, ProviderError, Tokenizer, END_TOKEN};

/// Floor for tokens an explicit table leaves out.
const TABLE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone)]
enum Backing {
    /// Add-k smoothed n-gram counts; the longest observed context wins.
    NGram {
        order: usize,
        smoothing: f64,
        counts: HashMap<Vec<String>, ContextCounts>,
        vocab: BTreeSet<String>,
    },
    /// Every (prefix, token) weight is a hash of the seed; used for fuzzing.
    Random { seed: u64 },
}

#[derive(Debug, Clone, Default)]
struct ContextCounts {
    next: BTreeMap<String, f64>,
    total: f64,
}

/// Deterministic next-token / completion provider.
///
/// Explicit probability tables keyed by the full token prefix override the
/// backing model, which makes exact-oracle tests possible.
#[derive(Debug, Clone)]
pub struct StubLm {
    tokenizer: Tokenizer,
    backing: Backing,
    tables: HashMap<Vec<String>, BTreeMap<String, f64>>,
    canned: BTreeMap<String, String>,
    default_reply: Option<String>,
}

impl StubLm {
    /// Trains an `order`-gram model on `texts`.
    ///
    /// The end marker counts once per text end, plus once wherever a
    /// delimiter token (no alphanumeric characters) follows, so names end
    /// where words end.
    pub fn ngram<'a>(
        tokenizer: Tokenizer,
        order: usize,
        texts: impl IntoIterator<Item = &'a str>,
    ) -> Self {
        assert!(order >= 1, "n-gram order must be at least 1");
        let mut counts: HashMap<Vec<String>, ContextCounts> = HashMap::new();
        let mut vocab = BTreeSet::new();
        for text in texts {
            let tokens = tokenizer.tokenize(text);
            for i in 0..=tokens.len() {
                let next = tokens.get(i).map_or(END_TOKEN, String::as_str);
                let delimiter = i < tokens.len() && !next.chars().any(char::is_alphanumeric);
                for ctx_len in 0..order.min(i + 1) {
                    let ctx = tokens[i - ctx_len..i].to_vec();
                    let entry = counts.entry(ctx).or_default();
                    *entry.next.entry(next.to_owned()).or_default() += 1.0;
                    entry.total += 1.0;
                    if delimiter {
                        *entry.next.entry(END_TOKEN.to_owned()).or_default() += 1.0;
                        entry.total += 1.0;
                    }
                }
                vocab.insert(next.to_owned());
            }
        }
        vocab.insert(END_TOKEN.to_owned());
        Self {
            tokenizer,
            backing: Backing::NGram {
                order,
                smoothing: 0.1,
                counts,
                vocab,
            },
            tables: HashMap::new(),
            canned: BTreeMap::new(),
            default_reply: None,
        }
    }

    /// A model whose token weights are seeded hashes of (prefix, token).
    pub fn random(seed: u64, tokenizer: Tokenizer) -> Self {
        Self {
            tokenizer,
            backing: Backing::Random { seed },
            tables: HashMap::new(),
            canned: BTreeMap::new(),
            default_reply: None,
        }
    }

    pub fn with_smoothing(mut self, k: f64) -> Self {
        assert!(k > 0.0, "smoothing must be positive");
        if let Backing::NGram { smoothing, .. } = &mut self.backing {
            *smoothing = k;
        }
        self
    }

    /// Fixes the next-token distribution after exactly `prefix`.
    pub fn with_table<S: Into<String>>(
        mut self,
        prefix: &[&str],
        probs: impl IntoIterator<Item = (S, f64)>,
    ) -> Self {
        let key = prefix.iter().map(|s| s.to_string()).collect();
        let table = probs.into_iter().map(|(k, p)| (k.into(), p)).collect();
        self.tables.insert(key, table);
        self
    }

    /// Reply returned verbatim for `prompt`.
    pub fn with_canned(mut self, prompt: impl Into<String>, reply: impl Into<String>) -> Self {
        self.canned.insert(prompt.into(), reply.into());
        self
    }

    /// Reply for prompts without a canned entry.
    pub fn with_default_reply(mut self, reply: impl Into<String>) -> Self {
        self.default_reply = Some(reply.into());
        self
    }

    pub fn tokenizer(&self) -> &Tokenizer {
        &self.tokenizer
    }

    /// Raw n-gram count of `next` after `context`; 0 for the random backing.
    pub fn count(&self, context: &[&str], next: &str) -> f64 {
        match &self.backing {
            Backing::NGram { counts, .. } => {
                let key: Vec<String> = context.iter().map(|s| s.to_string()).collect();
                counts
                    .get(&key)
                    .and_then(|c| c.next.get(next))
                    .copied()
                    .unwrap_or(0.0)
            }
            Backing::Random { .. } => 0.0,
        }
    }

    /// Probability of `token` after `prefix` under the full model.
    pub fn probability(&self, prefix: &[String], token: &str) -> f64 {
        if let Some(table) = self.tables.get(prefix) {
            return table.get(token).copied().unwrap_or(TABLE_FLOOR);
        }
        match &self.backing {
            Backing::NGram {
                order,
                smoothing,
                counts,
                vocab,
            } => {
                let max_ctx = (order - 1).min(prefix.len());
                let observed = (0..=max_ctx)
                    .rev()
                    .find_map(|len| counts.get(&prefix[prefix.len() - len..]));
                let v = vocab.len() as f64;
                match observed {
                    Some(c) => {
                        (c.next.get(token).copied().unwrap_or(0.0) + smoothing)
                            / (c.total + smoothing * v)
                    }
                    None => 1.0 / v,
                }
            }
            Backing::Random { seed } => {
                let mut key = prefix.join("\u{1f}");
                key.push('\u{1e}');
                key.push_str(token);
                unit_interval(fnv1a(*seed, key.as_bytes()))
            }
        }
    }

    fn greedy(&self, prompt: &str, max_tokens: usize) -> String {
        let Backing::NGram { vocab, .. } = &self.backing else {
            return String::new();
        };
        let mut prefix = self.tokenizer.tokenize(prompt);
        let mut out = Vec::new();
        for _ in 0..max_tokens {
            let best = vocab
                .iter()
                .map(|t| (t, self.probability(&prefix, t)))
                .fold(None::<(&String, f64)>, |best, (t, p)| match best {
                    Some((_, bp)) if bp >= p => best,
                    _ => Some((t, p)),
                });
            match best {
                Some((t, _)) if t != END_TOKEN => {
                    prefix.push(t.clone());
                    out.push(t.clone());
                }
                _ => break,
            }
        }
        self.tokenizer.detokenize(&out)
    }
}

impl LanguageModel for StubLm {
    fn next_token_logprobs(
        &self,
        prefix_tokens: &[String],
        allowed: &[String],
    ) -> Result<BTreeMap<String, f64>, ProviderError> {
        if allowed.is_empty() {
            return Ok(BTreeMap::new());
        }
        let weights: Vec<(String, f64)> = allowed
            .iter()
            .map(|t| (t.clone(), self.probability(prefix_tokens, t)))
            .collect();
        Ok(renormalize(&weights))
    }

    fn score_continuation(
        &self,
        prefix: &str,
        continuation: &str,
    ) -> Result<ContinuationScore, ProviderError> {
        let mut context = self.tokenizer.tokenize(prefix);
        let tokens = self.tokenizer.tokenize(continuation);
        let mut logprob = 0.0;
        for t in &tokens {
            logprob += self.probability(&context, t).ln();
            context.push(t.clone());
        }
        Ok(ContinuationScore {
            logprob,
            token_count: tokens.len(),
        })
    }

    fn complete(&self, prompt: &str, max_tokens: usize) -> Result<String, ProviderError> {
        if let Some(reply) = self.canned.get(prompt) {
            return Ok(reply.clone());
        }
        if let Some(reply) = &self.default_reply {
            return Ok(reply.clone());
        }
        Ok(self.greedy(prompt, max_tokens))
    }
}
