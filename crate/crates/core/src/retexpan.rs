//! Retrieval-based expansion.
//!
//! Candidates are ranked by mean cosine similarity to the positive seeds,
//! then the list is cut into fixed-length segments and each segment is
//! re-sorted by similarity to the negative seeds so that entities resembling
//! the negatives sink locally without pulling unrelated entities upward.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::classgen::Query;
use crate::corpus::{Corpus, EntityId, SentenceId};
use crate::embed::{cosine_similarity, EmbeddingStore};
use crate::error::{Error, Result};
use crate::providers::{ProviderError, SimilarityRanker};
use crate::ranking::{sort_desc, RankedEntry, RankedList};

/// Default segment length for re-ranking.
pub const DEFAULT_SEGMENT_LEN: usize = 10;
/// Default size of `L_pos` / `L_neg` in pair mining.
pub const DEFAULT_SIMILAR_T: usize = 10;

fn mean_similarity(store: &EmbeddingStore, e: &EntityId, seeds: &[EntityId]) -> Result<f64> {
    if seeds.is_empty() {
        return Err(Error::invalid("seed list is empty"));
    }
    let v = store.get(e)?;
    let mut total = 0.0;
    for s in seeds {
        total += cosine_similarity(v, store.get(s)?)?;
    }
    Ok(total / seeds.len() as f64)
}

/// Mean cosine similarity of `e` to the positive seeds.
pub fn score_positive(store: &EmbeddingStore, e: &EntityId, pos_seeds: &[EntityId]) -> Result<f64> {
    mean_similarity(store, e, pos_seeds)
}

/// Mean cosine similarity of `e` to the negative seeds.
pub fn score_negative(store: &EmbeddingStore, e: &EntityId, neg_seeds: &[EntityId]) -> Result<f64> {
    mean_similarity(store, e, neg_seeds)
}

/// Top-`k` non-seed candidates by positive score. Candidates without an
/// embedding are skipped.
pub fn expand(store: &EmbeddingStore, corpus: &Corpus, query: &Query, k: usize) -> Result<RankedList> {
    if k == 0 {
        return Err(Error::invalid("K must be positive"));
    }
    let seeds: BTreeSet<&EntityId> = query.seeds().collect();
    let mut scored = Vec::new();
    for id in corpus.candidate_vocab() {
        if seeds.contains(id) || !store.contains(id) {
            continue;
        }
        scored.push((id.clone(), score_positive(store, id, &query.pos_seeds)?));
    }
    sort_desc(&mut scored);
    scored.truncate(k);
    RankedList::from_pairs(scored)
}

/// Splits `l0` into consecutive segments of `segment_len` and stably sorts
/// each ascending by negative score. Segment membership is unchanged.
pub fn segmented_rerank(
    l0: &RankedList,
    neg_scores: &HashMap<EntityId, f64>,
    segment_len: usize,
) -> Result<RankedList> {
    if segment_len == 0 {
        return Err(Error::invalid("segment length must be at least 1"));
    }
    let mut keyed = Vec::with_capacity(l0.len());
    for entry in l0.entries() {
        let s = *neg_scores
            .get(&entry.id)
            .ok_or_else(|| Error::invalid(format!("no negative score for `{}`", entry.id)))?;
        keyed.push((entry.clone(), s));
    }
    for segment in keyed.chunks_mut(segment_len) {
        segment.sort_by(|a, b| a.1.total_cmp(&b.1));
    }
    RankedList::new(keyed.into_iter().map(|(e, _)| e).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetExpanConfig {
    pub k: usize,
    pub segment_len: usize,
    /// Skip re-ranking (ablation).
    pub rerank: bool,
}

impl Default for RetExpanConfig {
    fn default() -> Self {
        Self {
            k: 100,
            segment_len: DEFAULT_SEGMENT_LEN,
            rerank: true,
        }
    }
}

/// Expansion followed by segmented re-ranking.
pub fn run_retexpan(
    corpus: &Corpus,
    store: &EmbeddingStore,
    query: &Query,
    config: &RetExpanConfig,
) -> Result<RankedList> {
    let l0 = expand(store, corpus, query, config.k)?;
    if !config.rerank {
        return Ok(l0);
    }
    let neg_scores = l0
        .ids()
        .map(|id| Ok((id.clone(), score_negative(store, id, &query.neg_seeds)?)))
        .collect::<Result<HashMap<_, _>>>()?;
    segmented_rerank(&l0, &neg_scores, config.segment_len)
}

/// One training sample: a sentence mentioning an entity, with the query's
/// seeds appended.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub sentence_id: SentenceId,
    pub entity_id: EntityId,
    pub text: String,
}

/// Contrastive pairs at entity level (unordered, `a <= b`). Every sample of
/// the left entity pairs with every sample of the right one.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContrastivePairSet {
    pub positives: BTreeSet<(EntityId, EntityId)>,
    pub negatives: BTreeSet<(EntityId, EntityId)>,
    pub samples: BTreeMap<EntityId, Vec<Sample>>,
}

fn pair(a: &EntityId, b: &EntityId) -> (EntityId, EntityId) {
    if a <= b {
        (a.clone(), b.clone())
    } else {
        (b.clone(), a.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairMiningConfig {
    /// Sentences per entity turned into samples.
    pub cap: usize,
    pub mask_token: String,
}

impl Default for PairMiningConfig {
    fn default() -> Self {
        Self {
            cap: crate::corpus::DEFAULT_SENTENCE_CAP,
            mask_token: "[MASK]".into(),
        }
    }
}

/// Sample text: the sentence with this mention masked, then the seed names.
pub fn sample_text(masked_sentence: &str, pos_names: &[&str], neg_names: &[&str]) -> String {
    format!(
        "{masked_sentence} [SEP] {} [SEP] {}",
        pos_names.join(", "),
        neg_names.join(", ")
    )
}

/// Builds positive pairs (within `l_pos`, within `l_neg`, and self pairs)
/// and negative pairs (`l_pos × l_neg` and `(l_pos ∪ l_neg) × pool`).
pub fn mine_contrastive_pairs(
    l0: &RankedList,
    l_pos: &[EntityId],
    l_neg: &[EntityId],
    other_class_pool: &[EntityId],
    corpus: &Corpus,
    query: &Query,
    config: &PairMiningConfig,
) -> Result<ContrastivePairSet> {
    let in_l0: BTreeSet<&EntityId> = l0.ids().collect();
    let pos: BTreeSet<&EntityId> = l_pos.iter().collect();
    let neg: BTreeSet<&EntityId> = l_neg.iter().collect();
    if let Some(both) = pos.intersection(&neg).next() {
        return Err(Error::invalid(format!("`{both}` is in both L_pos and L_neg")));
    }
    if let Some(out) = pos.iter().chain(&neg).find(|id| !in_l0.contains(**id)) {
        return Err(Error::invalid(format!("`{out}` is not in the initial list")));
    }
    if let Some(dup) = other_class_pool.iter().find(|id| in_l0.contains(id)) {
        return Err(Error::invalid(format!("pool entity `{dup}` is in the initial list")));
    }

    let mut set = ContrastivePairSet::default();
    for group in [&pos, &neg] {
        for a in group.iter() {
            for b in group.iter() {
                set.positives.insert(pair(a, b));
            }
        }
    }
    for id in other_class_pool {
        set.positives.insert(pair(id, id));
    }
    for a in &pos {
        for b in &neg {
            set.negatives.insert(pair(a, b));
        }
    }
    for a in pos.iter().chain(&neg) {
        for z in other_class_pool {
            set.negatives.insert(pair(a, z));
        }
    }
    debug_assert!(set.positives.is_disjoint(&set.negatives));

    let name = |id: &EntityId| -> Result<&str> {
        corpus
            .entity(id)
            .map(|e| e.name.as_str())
            .ok_or_else(|| Error::UnknownEntity(id.to_string()))
    };
    let pos_names = query.pos_seeds.iter().map(name).collect::<Result<Vec<_>>>()?;
    let neg_names = query.neg_seeds.iter().map(name).collect::<Result<Vec<_>>>()?;
    let entities: BTreeSet<&EntityId> = pos
        .iter()
        .chain(&neg)
        .copied()
        .chain(other_class_pool)
        .collect();
    for id in entities {
        let mut samples = Vec::new();
        for s in corpus.sentences_for(id, config.cap)? {
            for m in s.mentions.iter().filter(|m| &m.entity_id == id) {
                if let Some(masked) = s.replace_span(m.start, m.end, &config.mask_token) {
                    samples.push(Sample {
                        sentence_id: s.id.clone(),
                        entity_id: id.clone(),
                        text: sample_text(&masked, &pos_names, &neg_names),
                    });
                }
            }
        }
        set.samples.insert(id.clone(), samples);
    }
    Ok(set)
}

/// Asks `ranker` for the `t` members of `l0` closest to the positive seeds
/// and to the negative seeds. Entities returned for both are dropped from
/// both lists.
pub fn select_similar_lists(
    l0: &RankedList,
    query: &Query,
    t: usize,
    ranker: &dyn SimilarityRanker,
    corpus: &Corpus,
) -> Result<(Vec<EntityId>, Vec<EntityId>)> {
    if t == 0 {
        return Err(Error::invalid("T must be positive"));
    }
    let name_of = |id: &EntityId| -> Result<String> {
        corpus
            .entity(id)
            .map(|e| e.name.clone())
            .ok_or_else(|| Error::UnknownEntity(id.to_string()))
    };
    let candidates = l0.ids().map(name_of).collect::<Result<Vec<_>>>()?;
    // names in l0 back to ids; first (highest-ranked) occurrence wins
    let mut by_name: HashMap<&str, &EntityId> = HashMap::new();
    for (name, id) in candidates.iter().zip(l0.ids()) {
        by_name.entry(name.as_str()).or_insert(id);
    }

    let fetch = |seeds: &[EntityId]| -> Result<Vec<EntityId>> {
        let seed_names = seeds.iter().map(name_of).collect::<Result<Vec<_>>>()?;
        let names = ranker
            .rank_similar(&candidates, &seed_names, t)
            .map_err(|e| Error::provider_in("rank_similar", e))?;
        let mut out = Vec::new();
        for n in names {
            match by_name.get(n.as_str()) {
                Some(&id) if !out.contains(id) => out.push(id.clone()),
                Some(_) => {}
                None => log::warn!("ranker returned `{n}`, which is not a candidate"),
            }
        }
        out.truncate(t);
        Ok(out)
    };
    let mut l_pos = fetch(&query.pos_seeds)?;
    let mut l_neg = fetch(&query.neg_seeds)?;
    let both: BTreeSet<EntityId> = l_pos.iter().filter(|id| l_neg.contains(id)).cloned().collect();
    l_pos.retain(|id| !both.contains(id));
    l_neg.retain(|id| !both.contains(id));
    Ok((l_pos, l_neg))
}

/// Embedding-similarity fallback for [`SimilarityRanker`]: ranks by mean
/// cosine to the seeds. Names resolve to ids through the corpus; duplicate
/// names resolve to the smallest id.
pub struct EmbeddingRanker<'a> {
    store: &'a EmbeddingStore,
    ids: BTreeMap<&'a str, &'a EntityId>,
}

impl<'a> EmbeddingRanker<'a> {
    pub fn new(store: &'a EmbeddingStore, corpus: &'a Corpus) -> Self {
        Self {
            store,
            ids: corpus.name_index(),
        }
    }

    fn resolve(&self, name: &str) -> Result<EntityId, ProviderError> {
        self.ids
            .get(name)
            .map(|&id| id.clone())
            .ok_or_else(|| ProviderError::Other(format!("unknown entity name `{name}`")))
    }
}

impl SimilarityRanker for EmbeddingRanker<'_> {
    fn rank_similar(
        &self,
        candidates: &[String],
        seeds: &[String],
        top: usize,
    ) -> Result<Vec<String>, ProviderError> {
        let seed_ids = seeds
            .iter()
            .map(|s| self.resolve(s))
            .collect::<Result<Vec<_>, _>>()?;
        let mut scored = Vec::with_capacity(candidates.len());
        for name in candidates {
            let id = self.resolve(name)?;
            let s = mean_similarity(self.store, &id, &seed_ids)
                .map_err(|e| ProviderError::Other(e.to_string()))?;
            scored.push((id, s, name));
        }
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Ok(scored.into_iter().take(top).map(|(_, _, n)| n.clone()).collect())
    }
}

/// Entries of `list` paired with their rank (1-based).
pub fn with_ranks(list: &RankedList) -> impl Iterator<Item = (usize, &RankedEntry)> {
    list.entries().iter().enumerate().map(|(i, e)| (i + 1, e))
}
