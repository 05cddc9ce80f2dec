//! Entity representations built from masked-context sentence embeddings.
//!
//! Each mention of an entity is replaced with the provider's mask token and
//! the provider's mask-position vector is taken; the entity vector is the
//! arithmetic mean over all selected mentions. Vectors are stored raw
//! (unnormalized); cosine similarity is scale-free.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, DEFAULT_SENTENCE_CAP, EntityId};
use crate::error::{Error, Result};
use crate::providers::Embedder;

pub mod cache;
pub mod loss;

pub use cache::{read_cache, write_cache};
pub use loss::{infonce_loss, infonce_loss_and_grad, masked_entity_loss};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(pub Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("embedding vector is empty"));
        }
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("embedding vector has non-finite entries"));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine similarity of raw slices, clamped to `[-1, 1]`.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    cosine(&a.0, &b.0)
}

/// Scales `v` onto the unit hypersphere.
pub fn project_unit(v: &EmbeddingVector) -> Result<EmbeddingVector> {
    let n = v.norm();
    if n == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(EmbeddingVector(v.0.iter().map(|x| x / n).collect()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbedConfig {
    /// Sentences sampled per entity.
    pub cap: usize,
    /// Embed `"{mask} {name}"` for entities without sentences.
    pub name_fallback: bool,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        Self {
            cap: DEFAULT_SENTENCE_CAP,
            name_fallback: false,
        }
    }
}

/// Mean mask-position vector over an entity's mentions, and the sample count.
pub fn embed_entity_sentences(
    corpus: &Corpus,
    entity: &EntityId,
    provider: &dyn Embedder,
    config: &EmbedConfig,
) -> Result<(EmbeddingVector, usize)> {
    let mask = provider.mask_token();
    let sentences = corpus.sentences_for(entity, config.cap)?;

    let mut mean = RunningMean::default();

    for s in &sentences {
        // one sample per mention of this entity
        let texts: Vec<String> = s
            .mentions
            .iter()
            .filter(|m| &m.entity_id == entity)
            .filter_map(|m| s.replace_span(m.start, m.end, mask))
            .collect();
        let vectors = provider
            .embed(&texts)
            .map_err(|e| Error::provider_in(format!("sentence {}", s.id), e))?;
        if vectors.len() != texts.len() {
            return Err(Error::invalid(format!(
                "provider returned {} vectors for {} texts (sentence {})",
                vectors.len(),
                texts.len(),
                s.id
            )));
        }
        mean.add(vectors, &format!("sentence {}", s.id))?;
    }

    if mean.count == 0 {
        if !config.name_fallback {
            return Err(Error::NoSentences {
                entity: entity.to_string(),
            });
        }
        let name = &corpus
            .entity(entity)
            .ok_or_else(|| Error::UnknownEntity(entity.to_string()))?
            .name;
        let vectors = provider
            .embed(&[format!("{mask} {name}")])
            .map_err(|e| Error::provider_in(format!("name fallback for {entity}"), e))?;
        mean.add(vectors, "name fallback")?;
    }
    mean.finish()
}

#[derive(Default)]
struct RunningMean {
    sum: Option<Vec<f64>>,
    count: usize,
}

impl RunningMean {
    fn add(&mut self, vectors: Vec<Vec<f64>>, origin: &str) -> Result<()> {
        for v in vectors {
            let acc = self.sum.get_or_insert_with(|| vec![0.0; v.len()]);
            if acc.len() != v.len() {
                return Err(Error::DimensionMismatch {
                    left: acc.len(),
                    right: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::invalid(format!(
                    "provider returned non-finite values for {origin}"
                )));
            }
            acc.iter_mut().zip(&v).for_each(|(a, x)| *a += x);
            self.count += 1;
        }
        Ok(())
    }

    fn finish(self) -> Result<(EmbeddingVector, usize)> {
        let total = self
            .sum
            .ok_or_else(|| Error::invalid("provider returned no vectors"))?;
        let n = self.count as f64;
        Ok((
            EmbeddingVector::new(total.into_iter().map(|x| x / n).collect())?,
            self.count,
        ))
    }
}

/// Entity vectors plus how many samples each one averages.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    vectors: BTreeMap<EntityId, EmbeddingVector>,
    provenance: BTreeMap<EntityId, usize>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ..Self::default()
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn insert(&mut self, id: EntityId, v: EmbeddingVector, count: usize) -> Result<()> {
        if self.vectors.is_empty() && self.dim == 0 {
            self.dim = v.dim();
        }
        if v.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                left: self.dim,
                right: v.dim(),
            });
        }
        if count == 0 {
            return Err(Error::invalid(format!("entity {id} averages zero samples")));
        }
        self.provenance.insert(id.clone(), count);
        self.vectors.insert(id, v);
        Ok(())
    }

    pub fn get(&self, id: &EntityId) -> Result<&EmbeddingVector> {
        self.vectors
            .get(id)
            .ok_or_else(|| Error::MissingEmbedding(id.to_string()))
    }

    pub fn contains(&self, id: &EntityId) -> bool {
        self.vectors.contains_key(id)
    }

    pub fn samples_averaged(&self, id: &EntityId) -> Option<usize> {
        self.provenance.get(id).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&EntityId, &EmbeddingVector, usize)> {
        self.vectors
            .iter()
            .map(|(id, v)| (id, v, self.provenance[id]))
    }

    pub fn ids(&self) -> impl Iterator<Item = &EntityId> {
        self.vectors.keys()
    }

    pub fn similarity(&self, a: &EntityId, b: &EntityId) -> Result<f64> {
        cosine_similarity(self.get(a)?, self.get(b)?)
    }

    /// Embeds every candidate entity of `corpus` in parallel.
    ///
    /// Entities with no sentences are skipped (and logged) unless
    /// `config.name_fallback` is set.
    pub fn build(corpus: &Corpus, provider: &dyn Embedder, config: &EmbedConfig) -> Result<Self> {
        let ids: Vec<&EntityId> = corpus.candidate_vocab().iter().collect();
        let results: Vec<Option<(EntityId, EmbeddingVector, usize)>> = ids
            .par_iter()
            .map(|&id| match embed_entity_sentences(corpus, id, provider, config) {
                Ok((v, n)) => Ok(Some((id.clone(), v, n))),
                Err(Error::NoSentences { .. }) => Ok(None),
                Err(e) => Err(e),
            })
            .collect::<Result<_>>()?;

        let mut store = EmbeddingStore::default();
        let mut skipped = 0usize;
        for r in results {
            match r {
                Some((id, v, n)) => store.insert(id, v, n)?,
                None => skipped += 1,
            }
        }
        if skipped > 0 {
            log::warn!("{skipped} entities have no sentences and were not embedded");
        }
        Ok(store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Entity, FineClass, Mention, Sentence};
    use crate::providers::{ProviderError, StubEmbedder};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    /// Returns a fixed vector per distinct text.
    struct TableEmbedder(BTreeMap<String, Vec<f64>>);

    impl Embedder for TableEmbedder {
        fn mask_token(&self) -> &str {
            "[MASK]"
        }
        fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
            texts
                .iter()
                .map(|t| {
                    self.0
                        .get(t)
                        .cloned()
                        .ok_or_else(|| ProviderError::Other(format!("no entry for {t}")))
                })
                .collect()
        }
    }

    fn mention(e: &str, text: &str, surface: &str) -> Mention {
        let start = text.find(surface).unwrap();
        Mention {
            entity_id: e.into(),
            start,
            end: start + surface.len(),
            surface: surface.into(),
        }
    }

    fn corpus() -> Corpus {
        let e = |id: &str, name: &str| Entity {
            id: id.into(),
            name: name.into(),
            attrs: BTreeMap::new(),
        };
        let s = |id: &str, text: &str, ms: Vec<Mention>| Sentence {
            id: id.into(),
            text: text.into(),
            mentions: ms,
        };
        Corpus::from_parts(
            vec![e("a", "Alpha"), e("b", "Beta"), e("z", "Zed")],
            vec![
                s("s1", "Alpha is big", vec![mention("a", "Alpha is big", "Alpha")]),
                s(
                    "s2",
                    "Beta beats Alpha",
                    vec![
                        mention("b", "Beta beats Alpha", "Beta"),
                        mention("a", "Beta beats Alpha", "Alpha"),
                    ],
                ),
            ],
            vec![FineClass {
                name: "c".into(),
                entity_ids: vec!["a".into(), "b".into()],
            }],
        )
        .unwrap()
    }

    #[test]
    fn cosine_examples() {
        let v = |x: &[f64]| EmbeddingVector(x.to_vec());
        assert_abs_diff_eq!(cosine_similarity(&v(&[1., 0.]), &v(&[1., 0.])).unwrap(), 1.0);
        assert_abs_diff_eq!(cosine_similarity(&v(&[1., 0.]), &v(&[0., 1.])).unwrap(), 0.0);
        assert_abs_diff_eq!(
            cosine_similarity(&v(&[1., 1.]), &v(&[1., 0.])).unwrap(),
            std::f64::consts::FRAC_1_SQRT_2,
            epsilon = 1e-12
        );
        assert!(matches!(
            cosine(&[1.0], &[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(cosine(&[0.0, 0.0], &[1.0, 2.0]), Err(Error::ZeroVector)));
    }

    #[test]
    fn projection() {
        let p = project_unit(&EmbeddingVector(vec![3.0, 4.0])).unwrap();
        assert_abs_diff_eq!(p.0[0], 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(p.0[1], 0.8, epsilon = 1e-12);
        let again = project_unit(&p).unwrap();
        assert_abs_diff_eq!(again.0.as_slice(), p.0.as_slice(), epsilon = 1e-15);
        assert!(matches!(
            project_unit(&EmbeddingVector(vec![0.0, 0.0])),
            Err(Error::ZeroVector)
        ));
    }

    #[test]
    fn mean_of_one_and_two_samples() {
        let table = TableEmbedder(BTreeMap::from([
            ("[MASK] is big".to_string(), vec![1.0, 2.0]),
            ("Beta beats [MASK]".to_string(), vec![3.0, 0.0]),
            ("[MASK] beats Alpha".to_string(), vec![5.0, 5.0]),
        ]));
        let c = corpus();
        let cfg = EmbedConfig::default();
        let (b, n) = embed_entity_sentences(&c, &"b".into(), &table, &cfg).unwrap();
        assert_eq!((b.0, n), (vec![5.0, 5.0], 1));
        let (a, n) = embed_entity_sentences(&c, &"a".into(), &table, &cfg).unwrap();
        assert_eq!((a.0, n), (vec![2.0, 1.0], 2));
    }

    #[test]
    fn zero_sentences_needs_fallback() {
        let c = corpus();
        let stub = StubEmbedder::new(8, 0);
        let cfg = EmbedConfig::default();
        assert!(matches!(
            embed_entity_sentences(&c, &"z".into(), &stub, &cfg),
            Err(Error::NoSentences { .. })
        ));
        let cfg = EmbedConfig {
            name_fallback: true,
            ..cfg
        };
        let (_, n) = embed_entity_sentences(&c, &"z".into(), &stub, &cfg).unwrap();
        assert_eq!(n, 1);
    }

    #[test]
    fn provider_failure_names_sentence() {
        let empty = TableEmbedder(BTreeMap::new());
        let err = embed_entity_sentences(&corpus(), &"a".into(), &empty, &EmbedConfig::default())
            .unwrap_err()
            .to_string();
        assert!(err.contains("sentence s1"), "{err}");
    }

    #[test]
    fn store_matches_independent_recomputation() {
        let c = corpus();
        let stub = StubEmbedder::new(16, 11);
        let store = EmbeddingStore::build(&c, &stub, &EmbedConfig::default()).unwrap();
        assert_eq!(store.len(), 2);
        assert!(!store.contains(&"z".into()));
        // re-run the stub outside the store and average by hand
        let a1 = stub.embed(&["[MASK] is big".into()]).unwrap().remove(0);
        let a2 = stub.embed(&["Beta beats [MASK]".into()]).unwrap().remove(0);
        let expected: Vec<f64> = a1.iter().zip(&a2).map(|(x, y)| (x + y) / 2.0).collect();
        assert_eq!(store.get(&"a".into()).unwrap().0, expected);
        assert_eq!(store.samples_averaged(&"a".into()), Some(2));
    }

    #[test]
    fn store_rejects_mixed_dimensions() {
        let mut s = EmbeddingStore::default();
        s.insert("a".into(), EmbeddingVector(vec![1.0, 0.0]), 1).unwrap();
        assert!(s.insert("b".into(), EmbeddingVector(vec![1.0]), 1).is_err());
        assert!(s.insert("c".into(), EmbeddingVector(vec![1.0, 1.0]), 0).is_err());
    }

    proptest! {
        #[test]
        fn cosine_symmetric_and_scale_invariant(
            a in prop::collection::vec(-10.0f64..10.0, 4),
            b in prop::collection::vec(-10.0f64..10.0, 4),
            alpha in 0.01f64..100.0,
        ) {
            prop_assume!(norm(&a) > 1e-3 && norm(&b) > 1e-3);
            let ab = cosine(&a, &b).unwrap();
            prop_assert!((ab - cosine(&b, &a).unwrap()).abs() < 1e-12);
            let scaled: Vec<f64> = a.iter().map(|x| x * alpha).collect();
            prop_assert!((ab - cosine(&scaled, &b).unwrap()).abs() < 1e-9);
            prop_assert!((-1.0..=1.0).contains(&ab));
        }

        #[test]
        fn projection_has_unit_norm(v in prop::collection::vec(-1e3f64..1e3, 1..16)) {
            prop_assume!(norm(&v) > 1e-6);
            let p = project_unit(&EmbeddingVector(v)).unwrap();
            prop_assert!((p.norm() - 1.0).abs() < 1e-9);
        }
    }
}
