use std::collections::BTreeSet;

use super::trie::{EntityTrie, NodeId};
use crate::corpus::EntityId;
use crate::error::{Error, Result};
use crate::providers::{LanguageModel, END_TOKEN};

#[derive(Debug, Clone, PartialEq)]
pub struct BeamHypothesis {
    pub tokens: Vec<String>,
    pub logprob: f64,
    cursor: NodeId,
    pub finished: bool,
}

impl BeamHypothesis {
    pub fn cursor(&self) -> NodeId {
        self.cursor
    }
}

/// Beam search whose token choices are restricted to the trie, so every
/// emitted entity is a vocabulary member.
///
/// At each step every live hypothesis is extended by the tokens allowed at
/// its cursor, scored by the LM renormalized over that set. Choosing the end
/// marker finishes a hypothesis; the best `width` unfinished extensions
/// survive. Search stops when no live hypothesis remains, or once `M`
/// entities are finished and no live hypothesis can beat the `M`-th (log
/// probabilities only decrease along a path).
///
/// Returns up to `max_entities` `(entity, logprob)` pairs, best first, ties by
/// id.
pub fn constrained_beam_search(
    lm: &dyn LanguageModel,
    prompt: &str,
    trie: &EntityTrie,
    width: usize,
    max_entities: usize,
) -> Result<Vec<(EntityId, f64)>> {
    constrained_beam_search_excluding(lm, prompt, trie, width, max_entities, &BTreeSet::new())
}

/// As [`constrained_beam_search`], but finished hypotheses for entities in
/// `exclude` are discarded (the end marker stays in the allowed set, so the
/// scores of the other entities are unaffected).
pub fn constrained_beam_search_excluding(
    lm: &dyn LanguageModel,
    prompt: &str,
    trie: &EntityTrie,
    width: usize,
    max_entities: usize,
    exclude: &BTreeSet<EntityId>,
) -> Result<Vec<(EntityId, f64)>> {
    if width == 0 {
        return Err(Error::invalid("beam width must be at least 1"));
    }
    if max_entities == 0 {
        return Ok(Vec::new());
    }
    let prompt_tokens = trie.tokenizer().tokenize(prompt);
    let mut live = vec![BeamHypothesis {
        tokens: Vec::new(),
        logprob: 0.0,
        cursor: EntityTrie::ROOT,
        finished: false,
    }];
    let mut finished: Vec<(EntityId, f64)> = Vec::new();

    while !live.is_empty() {
        let mut next = Vec::new();
        for hyp in &live {
            let allowed = trie.allowed_at(hyp.cursor);
            let mut context = prompt_tokens.clone();
            context.extend(hyp.tokens.iter().cloned());
            let logprobs = lm
                .next_token_logprobs(&context, &allowed)
                .map_err(|e| Error::provider_in("next_token_logprobs", e))?;
            for token in &allowed {
                let lp = *logprobs.get(token).ok_or_else(|| {
                    Error::provider_in(
                        "next_token_logprobs",
                        crate::providers::ProviderError::Other(format!(
                            "no log-probability returned for allowed token {token:?}"
                        )),
                    )
                })?;
                let logprob = hyp.logprob + lp.min(0.0);
                if token == END_TOKEN {
                    let id = trie.terminal(hyp.cursor).expect("end offered only at terminals");
                    if !exclude.contains(id) {
                        finished.push((id.clone(), logprob));
                    }
                } else {
                    let mut tokens = hyp.tokens.clone();
                    tokens.push(token.clone());
                    next.push(BeamHypothesis {
                        tokens,
                        logprob,
                        cursor: trie.child(hyp.cursor, token).expect("allowed child"),
                        finished: false,
                    });
                }
            }
        }
        next.sort_by(|a, b| {
            b.logprob
                .total_cmp(&a.logprob)
                .then_with(|| a.tokens.cmp(&b.tokens))
        });
        next.truncate(width);
        live = next;

        if finished.len() >= max_entities {
            sort_finished(&mut finished);
            finished.truncate(max_entities);
            let bar = finished[max_entities - 1].1;
            if live.first().is_none_or(|h| h.logprob < bar) {
                break;
            }
        }
    }
    sort_finished(&mut finished);
    finished.truncate(max_entities);
    Ok(finished)
}

fn sort_finished(items: &mut [(EntityId, f64)]) {
    items.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
}

/// Exhaustive reference: the score of every trie path, best first.
pub fn enumerate_paths(lm: &dyn LanguageModel, prompt: &str, trie: &EntityTrie) -> Result<Vec<(EntityId, f64)>> {
    let prompt_tokens = trie.tokenizer().tokenize(prompt);
    let mut out = Vec::new();
    for (id, tokens) in trie.paths() {
        let mut context = prompt_tokens.clone();
        let mut total = 0.0;
        let mut node = EntityTrie::ROOT;
        for t in tokens.iter().map(String::as_str).chain([END_TOKEN]) {
            let allowed = trie.allowed_at(node);
            let lp = lm.next_token_logprobs(&context, &allowed)?;
            total += lp[t].min(0.0);
            if t != END_TOKEN {
                node = trie.child(node, t).expect("path token");
                context.push(t.to_string());
            }
        }
        out.push((id, total));
    }
    sort_finished(&mut out);
    Ok(out)
}
