//! Generation-based expansion.
//!
//! Each round prompts the language model with three example entities,
//! decodes candidate names through the entity trie, scores every candidate
//! by how readily the model continues `"{candidate} is similar to "` with
//! each positive seed, and keeps the best few. The accumulated list is then
//! re-ranked segment by segment against the negative seeds exactly as in
//! retrieval expansion.

mod beam;
mod cot;
mod trie;

use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use beam::{constrained_beam_search, constrained_beam_search_excluding, enumerate_paths, BeamHypothesis};
pub use cot::{cot_augment, cot_prompt, parse_cot_reply, CotContext, CotMode, CotRecord, COT_MAX_TOKENS};
pub use trie::{EntityTrie, NodeId};

use crate::classgen::Query;
use crate::corpus::{Corpus, EntityId};
use crate::error::{Error, Result};
use crate::providers::LanguageModel;
use crate::ranking::RankedList;
use crate::retexpan::{segmented_rerank, DEFAULT_SEGMENT_LEN};

/// Prompt used to generate more members of the seeds' class. The trailing
/// space separates the prompt from the first generated token.
pub fn generation_prompt(entities: &[&str], cot: Option<&CotContext>) -> String {
    format!(
        "{}These entities share a semantic class: {}. Another entity of the same class is ",
        cot.map(CotContext::preamble).unwrap_or_default(),
        entities.join(", ")
    )
}

/// Prefix whose continuation measures similarity to `entity`.
pub fn similarity_prefix(entity: &str) -> String {
    format!("{entity} is similar to ")
}

/// Mean over seeds of the per-token geometric mean probability of the seed
/// name following `"{entity} is similar to "`.
pub fn gen_similarity_score(lm: &dyn LanguageModel, entity: &str, seeds: &[&str]) -> Result<f64> {
    if seeds.is_empty() {
        return Err(Error::invalid("similarity needs at least one seed"));
    }
    let prefix = similarity_prefix(entity);
    let mut total = 0.0;
    for seed in seeds {
        let s = lm
            .score_continuation(&prefix, seed)
            .map_err(|e| Error::provider_in("score_continuation", e))?;
        if s.token_count == 0 {
            return Err(Error::invalid(format!("seed `{seed}` tokenizes to nothing")));
        }
        total += (s.logprob.min(0.0) / s.token_count as f64).exp();
    }
    Ok(total / seeds.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpandedEntity {
    pub id: EntityId,
    pub score: f64,
    pub round: usize,
}

/// Entities expanded so far for one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionState {
    pub query: Query,
    pub expanded: Vec<ExpandedEntity>,
    /// Rounds completed.
    pub round: usize,
}

impl ExpansionState {
    pub fn new(query: Query) -> Self {
        Self {
            query,
            expanded: Vec::new(),
            round: 0,
        }
    }

    pub fn contains(&self, id: &EntityId) -> bool {
        self.expanded.iter().any(|e| &e.id == id)
    }

    /// Earlier rounds first, then higher score, then id.
    pub fn ordered(&self) -> Vec<&ExpandedEntity> {
        let mut out: Vec<&ExpandedEntity> = self.expanded.iter().collect();
        out.sort_by(|a, b| {
            a.round
                .cmp(&b.round)
                .then_with(|| b.score.total_cmp(&a.score))
                .then_with(|| a.id.cmp(&b.id))
        });
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub prompt_entities: Vec<EntityId>,
    pub prompt: String,
    pub generated: Vec<(EntityId, f64)>,
    pub scored: Vec<(EntityId, f64)>,
    pub appended: Vec<EntityId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenExpanConfig {
    pub k: usize,
    pub segment_len: usize,
    /// Defaults to `ceil(k / select)`.
    pub rounds: Option<usize>,
    /// Entities decoded per round (`G`).
    pub per_round: usize,
    /// Entities kept per round (`p`).
    pub select: usize,
    pub beam_width: usize,
    pub rerank: bool,
    pub seed: u64,
    pub cot: Option<CotMode>,
}

impl Default for GenExpanConfig {
    fn default() -> Self {
        Self {
            k: 100,
            segment_len: DEFAULT_SEGMENT_LEN,
            rounds: None,
            per_round: 20,
            select: 5,
            beam_width: 20,
            rerank: true,
            seed: 0,
            cot: None,
        }
    }
}

impl GenExpanConfig {
    pub fn effective_rounds(&self) -> usize {
        self.rounds.unwrap_or_else(|| self.k.div_ceil(self.select.max(1)))
    }

    fn validate(&self) -> Result<()> {
        if self.k == 0 || self.per_round == 0 || self.select == 0 || self.beam_width == 0 {
            return Err(Error::invalid("K, G, p and beam width must all be positive"));
        }
        if self.segment_len == 0 {
            return Err(Error::invalid("segment length must be at least 1"));
        }
        Ok(())
    }
}

fn name_of<'a>(corpus: &'a Corpus, id: &EntityId) -> Result<&'a str> {
    corpus
        .entity(id)
        .map(|e| e.name.as_str())
        .ok_or_else(|| Error::UnknownEntity(id.to_string()))
}

fn scores_against(
    corpus: &Corpus,
    lm: &dyn LanguageModel,
    ids: &[&EntityId],
    seeds: &[&str],
) -> Result<Vec<f64>> {
    ids.par_iter()
        .map(|id| gen_similarity_score(lm, name_of(corpus, id)?, seeds))
        .collect()
}

/// One generate, score, select round. The state is unchanged (apart from
/// the round counter) when nothing new is generated.
pub fn expansion_round(
    state: &mut ExpansionState,
    corpus: &Corpus,
    lm: &dyn LanguageModel,
    trie: &EntityTrie,
    rng: &mut ChaCha8Rng,
    config: &GenExpanConfig,
    cot: Option<&CotContext>,
) -> Result<RoundRecord> {
    let pos = &state.query.pos_seeds;
    if pos.is_empty() {
        return Err(Error::invalid("query has no positive seeds"));
    }
    let mut prompt_entities: Vec<EntityId> = if state.expanded.is_empty() {
        pos.choose_multiple(rng, 3.min(pos.len())).cloned().collect()
    } else {
        pos.choose_multiple(rng, 2.min(pos.len())).cloned().collect()
    };
    if let Some(e) = state.expanded.choose(rng) {
        prompt_entities.push(e.id.clone());
    }
    let names = prompt_entities
        .iter()
        .map(|id| name_of(corpus, id))
        .collect::<Result<Vec<_>>>()?;
    let prompt = generation_prompt(&names, cot);

    let exclude: BTreeSet<EntityId> = state
        .query
        .seeds()
        .cloned()
        .chain(state.expanded.iter().map(|e| e.id.clone()))
        .collect();
    let generated = constrained_beam_search_excluding(
        lm,
        &prompt,
        trie,
        config.beam_width,
        config.per_round,
        &exclude,
    )?;

    let seed_names = pos.iter().map(|id| name_of(corpus, id)).collect::<Result<Vec<_>>>()?;
    let ids: Vec<&EntityId> = generated.iter().map(|(id, _)| id).collect();
    let mut scored: Vec<(EntityId, f64)> = ids
        .iter()
        .map(|id| (*id).clone())
        .zip(scores_against(corpus, lm, &ids, &seed_names)?)
        .collect();
    crate::ranking::sort_desc(&mut scored);

    state.round += 1;
    let mut appended = Vec::new();
    for (id, score) in &scored {
        if appended.len() == config.select {
            break;
        }
        if !state.contains(id) {
            state.expanded.push(ExpandedEntity {
                id: id.clone(),
                score: *score,
                round: state.round,
            });
            appended.push(id.clone());
        }
    }
    if generated.is_empty() {
        log::debug!("round {} generated no new entities", state.round);
    }
    Ok(RoundRecord {
        round: state.round,
        prompt_entities,
        prompt,
        generated,
        scored,
        appended,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenExpanRun {
    pub list: RankedList,
    pub rounds: Vec<RoundRecord>,
    pub cot: Option<CotRecord>,
}

/// Full pipeline for one query: optional CoT, `R` rounds, ordering by round
/// of entry then score, truncation to `K`, then segmented re-ranking with
/// negative scores from the same similarity measure against the negative
/// seeds.
pub fn run_genexpan(
    corpus: &Corpus,
    query: &Query,
    lm: &dyn LanguageModel,
    trie: &EntityTrie,
    config: &GenExpanConfig,
) -> Result<GenExpanRun> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let pos_names = query
        .pos_seeds
        .iter()
        .map(|id| name_of(corpus, id))
        .collect::<Result<Vec<_>>>()?;
    let neg_names = query
        .neg_seeds
        .iter()
        .map(|id| name_of(corpus, id))
        .collect::<Result<Vec<_>>>()?;

    let cot = match config.cot {
        Some(mode) => Some(cot_augment(lm, &pos_names, Some(&neg_names), mode)?),
        None => None,
    };
    let context = cot.as_ref().map(|c| &c.parsed).filter(|c| !c.is_empty());

    let mut state = ExpansionState::new(query.clone());
    let mut rounds = Vec::new();
    for _ in 0..config.effective_rounds() {
        rounds.push(expansion_round(&mut state, corpus, lm, trie, &mut rng, config, context)?);
    }

    let mut ordered: Vec<(EntityId, f64)> = state
        .ordered()
        .into_iter()
        .map(|e| (e.id.clone(), e.score))
        .collect();
    ordered.truncate(config.k);
    let mut list = RankedList::from_pairs(ordered)?;
    if config.rerank && !list.is_empty() {
        if neg_names.is_empty() {
            return Err(Error::invalid("re-ranking needs at least one negative seed"));
        }
        let ids: Vec<&EntityId> = list.ids().collect();
        let neg = scores_against(corpus, lm, &ids, &neg_names)?;
        let neg_scores: HashMap<EntityId, f64> = ids.into_iter().cloned().zip(neg).collect();
        list = segmented_rerank(&list, &neg_scores, config.segment_len)?;
    }
    Ok(GenExpanRun { list, rounds, cot })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Entity, FineClass};
    use crate::providers::{ContinuationScore, ProviderError, StubLm, Tokenizer, END_TOKEN};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    /// Whitespace-token LM that prefers planted names everywhere.
    struct Planted {
        good: BTreeSet<String>,
        continuation: HashMap<String, ContinuationScore>,
    }

    impl LanguageModel for Planted {
        fn next_token_logprobs(
            &self,
            _prefix: &[String],
            allowed: &[String],
        ) -> Result<BTreeMap<String, f64>, ProviderError> {
            let w: Vec<(String, f64)> = allowed
                .iter()
                .map(|t| {
                    let w = if t == END_TOKEN {
                        1.0
                    } else if self.good.contains(t) {
                        10.0
                    } else {
                        1.0
                    };
                    (t.clone(), w)
                })
                .collect();
            Ok(crate::providers::renormalize(&w))
        }

        fn score_continuation(&self, prefix: &str, cont: &str) -> Result<ContinuationScore, ProviderError> {
            if let Some(s) = self.continuation.get(cont) {
                return Ok(*s);
            }
            let e = prefix.trim_end_matches(" is similar to ");
            let p: f64 = if self.good.contains(e) { 0.9 } else { 0.1 };
            Ok(ContinuationScore {
                logprob: p.ln(),
                token_count: 1,
            })
        }

        fn complete(&self, _p: &str, _n: usize) -> Result<String, ProviderError> {
            Ok(String::new())
        }
    }

    fn planted(good: &[&str]) -> Planted {
        Planted {
            good: good.iter().map(|s| s.to_string()).collect(),
            continuation: HashMap::new(),
        }
    }

    fn corpus(names: &[&str]) -> Corpus {
        let entities = names
            .iter()
            .map(|n| Entity {
                id: EntityId(n.to_string()),
                name: n.to_string(),
                attrs: Default::default(),
            })
            .collect();
        Corpus::from_parts(
            entities,
            vec![],
            vec![FineClass {
                name: "c".into(),
                entity_ids: names.iter().map(|n| EntityId(n.to_string())).collect(),
            }],
        )
        .unwrap()
    }

    fn ids(xs: &[&str]) -> Vec<EntityId> {
        xs.iter().map(|x| EntityId(x.to_string())).collect()
    }

    fn query(pos: &[&str], neg: &[&str]) -> Query {
        Query {
            pos_seeds: ids(pos),
            neg_seeds: ids(neg),
        }
    }

    #[test]
    fn geometric_mean_examples() {
        let mut lm = planted(&[]);
        lm.continuation.insert("one".into(), ContinuationScore { logprob: 0.0, token_count: 3 });
        lm.continuation.insert("quarter".into(), ContinuationScore { logprob: 0.25f64.ln(), token_count: 2 });
        lm.continuation.insert("p3".into(), ContinuationScore { logprob: 0.3f64.ln(), token_count: 1 });
        lm.continuation.insert("p5".into(), ContinuationScore { logprob: 0.5f64.ln(), token_count: 1 });
        assert_abs_diff_eq!(gen_similarity_score(&lm, "e", &["one"]).unwrap(), 1.0);
        assert_abs_diff_eq!(gen_similarity_score(&lm, "e", &["quarter"]).unwrap(), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(gen_similarity_score(&lm, "e", &["p5", "p3"]).unwrap(), 0.4, epsilon = 1e-12);
        assert!(gen_similarity_score(&lm, "e", &[]).is_err());
    }

    #[test]
    fn padding_preserving_product_and_length_is_invisible() {
        // "a b": two tokens with product 0.36; "c": one token at 0.6
        let lm = StubLm::random(0, Tokenizer::whitespace())
            .with_table(&["x", "is", "similar", "to"], [("a", 0.6), ("c", 0.6)])
            .with_table(&["x", "is", "similar", "to", "a"], [("b", 0.6)]);
        let two = gen_similarity_score(&lm, "x", &["a b"]).unwrap();
        let one = gen_similarity_score(&lm, "x", &["c"]).unwrap();
        assert_abs_diff_eq!(two, 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(two, one, epsilon = 1e-12);
    }

    #[test]
    fn round_one_uses_the_three_seeds() {
        let c = corpus(&["s1", "s2", "s3", "n1", "a", "b", "z"]);
        let lm = planted(&["a", "b"]);
        let trie = EntityTrie::from_corpus(&c, &Tokenizer::whitespace()).unwrap();
        let mut state = ExpansionState::new(query(&["s1", "s2", "s3"], &["n1"]));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = GenExpanConfig::default();
        let rec = expansion_round(&mut state, &c, &lm, &trie, &mut rng, &cfg, None).unwrap();
        let mut used = rec.prompt_entities.clone();
        used.sort();
        assert_eq!(used, ids(&["s1", "s2", "s3"]));
        let names: Vec<&str> = rec.prompt_entities.iter().map(EntityId::as_str).collect();
        assert_eq!(
            rec.prompt,
            format!(
                "These entities share a semantic class: {}. Another entity of the same class is ",
                names.join(", ")
            )
        );
        // seeds are never generated
        assert!(rec.generated.iter().all(|(id, _)| !state.query.is_seed(id)));

        let rec2 = expansion_round(&mut state, &c, &lm, &trie, &mut rng, &cfg, None).unwrap();
        assert_eq!(rec2.prompt_entities.len(), 3);
        assert!(state.contains(&rec2.prompt_entities[2]));
    }

    #[test]
    fn appended_is_top_p_by_rescoring() {
        let names = ["s1", "s2", "s3", "n1", "a", "b", "c", "d", "e", "f"];
        let c = corpus(&names);
        let lm = planted(&["c", "e", "f"]);
        let trie = EntityTrie::from_corpus(&c, &Tokenizer::whitespace()).unwrap();
        let mut state = ExpansionState::new(query(&["s1", "s2", "s3"], &["n1"]));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cfg = GenExpanConfig {
            select: 2,
            ..Default::default()
        };
        let rec = expansion_round(&mut state, &c, &lm, &trie, &mut rng, &cfg, None).unwrap();
        let mut oracle: Vec<(EntityId, f64)> = rec
            .generated
            .iter()
            .map(|(id, _)| {
                (id.clone(), gen_similarity_score(&lm, id.as_str(), &["s1", "s2", "s3"]).unwrap())
            })
            .collect();
        crate::ranking::sort_desc(&mut oracle);
        let want: Vec<EntityId> = oracle.iter().take(2).map(|x| x.0.clone()).collect();
        assert_eq!(rec.appended, want);
        assert_eq!(rec.appended, ids(&["c", "e"]));
    }

    #[test]
    fn two_runs_are_identical() {
        let names = ["s1", "s2", "s3", "s4", "n1", "a", "b", "c", "d", "e", "f", "g"];
        let c = corpus(&names);
        let lm = StubLm::random(5, Tokenizer::whitespace());
        let trie = EntityTrie::from_corpus(&c, &Tokenizer::whitespace()).unwrap();
        let q = query(&["s1", "s2", "s3", "s4"], &["n1"]);
        let cfg = GenExpanConfig {
            k: 6,
            select: 2,
            seed: 3,
            ..Default::default()
        };
        let a = run_genexpan(&c, &q, &lm, &trie, &cfg).unwrap();
        let b = run_genexpan(&c, &q, &lm, &trie, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rounds.len(), 3);
        assert_eq!(a.list.len(), 6);
    }

    #[test]
    fn one_round_is_top_k_of_generation() {
        let names = ["s1", "s2", "s3", "n1", "a", "b", "c", "d", "e"];
        let c = corpus(&names);
        let lm = planted(&["b", "d"]);
        let trie = EntityTrie::from_corpus(&c, &Tokenizer::whitespace()).unwrap();
        let q = query(&["s1", "s2", "s3"], &["n1"]);
        let cfg = GenExpanConfig {
            k: 3,
            rounds: Some(1),
            select: 5,
            rerank: false,
            ..Default::default()
        };
        let run = run_genexpan(&c, &q, &lm, &trie, &cfg).unwrap();
        let want: Vec<EntityId> = run.rounds[0].scored.iter().take(3).map(|x| x.0.clone()).collect();
        assert_eq!(run.list.ids().cloned().collect::<Vec<_>>(), want);
    }

    #[test]
    fn nothing_left_to_generate_gives_empty_list() {
        let c = corpus(&["s1", "s2", "s3", "n1"]);
        let lm = planted(&[]);
        let trie = EntityTrie::from_corpus(&c, &Tokenizer::whitespace()).unwrap();
        let run = run_genexpan(&c, &query(&["s1", "s2", "s3"], &["n1"]), &lm, &trie, &GenExpanConfig::default()).unwrap();
        assert!(run.list.is_empty());
        assert!(run.rounds.iter().all(|r| r.generated.is_empty() && r.appended.is_empty()));
    }

    #[test]
    fn planted_targets_rank_above_distractors() {
        let mut names: Vec<String> = ["s1", "s2", "s3", "n1"].iter().map(|s| s.to_string()).collect();
        let good: Vec<String> = (0..8).map(|i| format!("good{i}")).collect();
        names.extend(good.iter().cloned());
        names.extend((0..30).map(|i| format!("junk{i}")));
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let c = corpus(&refs);
        let good_refs: Vec<&str> = good.iter().map(String::as_str).collect();
        let lm = planted(&good_refs);
        let trie = EntityTrie::from_corpus(&c, &Tokenizer::whitespace()).unwrap();
        let cfg = GenExpanConfig {
            k: 12,
            select: 4,
            rerank: false,
            ..Default::default()
        };
        let run = run_genexpan(&c, &query(&["s1", "s2", "s3"], &["n1"]), &lm, &trie, &cfg).unwrap();
        let top: BTreeSet<&str> = run.list.ids().take(8).map(EntityId::as_str).collect();
        assert_eq!(top, good_refs.iter().copied().collect());
    }

    #[test]
    fn cot_context_reaches_the_prompt() {
        let names = ["s1", "s2", "s3", "n1", "a"];
        let c = corpus(&names);
        let trie = EntityTrie::from_corpus(&c, &Tokenizer::whitespace()).unwrap();
        let lm = StubLm::random(1, Tokenizer::whitespace()).with_default_reply("Class: Things | Attr: k=v");
        let cfg = GenExpanConfig {
            k: 1,
            cot: Some(CotMode::ClassPos),
            ..Default::default()
        };
        let run = run_genexpan(&c, &query(&["s1", "s2", "s3"], &["n1"]), &lm, &trie, &cfg).unwrap();
        assert!(run.rounds[0].prompt.starts_with("The class is Things. Shared attributes: k=v. These"));
        assert_eq!(run.cot.unwrap().parsed.class_name, "Things");

        let lm = StubLm::random(1, Tokenizer::whitespace()).with_default_reply("???");
        let run = run_genexpan(&c, &query(&["s1", "s2", "s3"], &["n1"]), &lm, &trie, &cfg).unwrap();
        assert!(run.rounds[0].prompt.starts_with("These entities"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn rounds_never_duplicate(seed in any::<u64>(), rounds in 1usize..6, select in 1usize..4) {
            let names: Vec<String> = (0..15).map(|i| format!("e{i}")).collect();
            let refs: Vec<&str> = names.iter().map(String::as_str).collect();
            let c = corpus(&refs);
            let lm = StubLm::random(seed, Tokenizer::whitespace());
            let trie = EntityTrie::from_corpus(&c, &Tokenizer::whitespace()).unwrap();
            let q = query(&["e0", "e1", "e2"], &["e3"]);
            let mut state = ExpansionState::new(q);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cfg = GenExpanConfig { select, per_round: 4, ..Default::default() };
            for _ in 0..rounds {
                expansion_round(&mut state, &c, &lm, &trie, &mut rng, &cfg, None).unwrap();
            }
            let distinct: BTreeSet<_> = state.expanded.iter().map(|e| &e.id).collect();
            prop_assert_eq!(distinct.len(), state.expanded.len());
            prop_assert!(state.expanded.iter().all(|e| !state.query.is_seed(&e.id)));
        }
    }
}
