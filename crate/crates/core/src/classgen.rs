//! Ultra-fine-grained classes: a fine-grained class narrowed by attribute
//! constraints, with positive targets `P` (match every positive constraint)
//! and negative targets `N` (match every negative constraint). The expansion
//! target is `P - N`.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Entity, EntityId};
use crate::error::{Error, Result};
use crate::providers::splitmix64;

/// Seed-set size bounds and queries per class.
pub const SEEDS_MIN: usize = 3;
pub const SEEDS_MAX: usize = 5;
pub const QUERIES_PER_CLASS: usize = 3;

/// Default minimum target-set size (exclusive).
pub const DEFAULT_N_THRED: usize = 6;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "(String, String)", into = "(String, String)")]
pub struct AttributeConstraint {
    pub attribute: String,
    pub value: String,
}

impl AttributeConstraint {
    pub fn new(attribute: impl Into<String>, value: impl Into<String>) -> Result<Self> {
        let (attribute, value) = (attribute.into(), value.into());
        if attribute.is_empty() || value.is_empty() {
            return Err(Error::invalid("attribute constraints need a name and a value"));
        }
        Ok(Self { attribute, value })
    }

    pub fn matches(&self, entity: &Entity) -> bool {
        entity.attr(&self.attribute) == Some(self.value.as_str())
    }
}

impl TryFrom<(String, String)> for AttributeConstraint {
    type Error = Error;
    fn try_from((a, v): (String, String)) -> Result<Self> {
        Self::new(a, v)
    }
}

impl From<AttributeConstraint> for (String, String) {
    fn from(c: AttributeConstraint) -> Self {
        (c.attribute, c.value)
    }
}

impl std::fmt::Display for AttributeConstraint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}={}", self.attribute, self.value)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub pos_seeds: Vec<EntityId>,
    pub neg_seeds: Vec<EntityId>,
}

impl Query {
    pub fn seeds(&self) -> impl Iterator<Item = &EntityId> {
        self.pos_seeds.iter().chain(&self.neg_seeds)
    }

    pub fn is_seed(&self, id: &EntityId) -> bool {
        self.seeds().any(|s| s == id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UltraClass {
    pub fine_class: String,
    pub pos: Vec<AttributeConstraint>,
    pub neg: Vec<AttributeConstraint>,
    #[serde(rename = "P")]
    pub positives: BTreeSet<EntityId>,
    #[serde(rename = "N")]
    pub negatives: BTreeSet<EntityId>,
    pub queries: Vec<Query>,
}

impl UltraClass {
    /// Checks stored targets and seeds against the corpus.
    pub fn verify(&self, corpus: &Corpus) -> Result<()> {
        let (p, n) = derive_targets(corpus, &self.fine_class, &self.pos, &self.neg)?;
        if p != self.positives || n != self.negatives {
            return Err(Error::invalid(format!(
                "class {}: stored targets differ from recomputed ones",
                self.describe()
            )));
        }
        for (i, q) in self.queries.iter().enumerate() {
            let disjoint = q.pos_seeds.iter().all(|s| !q.neg_seeds.contains(s));
            if !disjoint
                || !q.pos_seeds.iter().all(|s| p.contains(s))
                || !q.neg_seeds.iter().all(|s| n.contains(s))
            {
                return Err(Error::invalid(format!(
                    "class {}: query {i} seeds violate target membership",
                    self.describe()
                )));
            }
        }
        Ok(())
    }

    /// `fine_class[+pos][-neg]` label for logs.
    pub fn describe(&self) -> String {
        let join = |cs: &[AttributeConstraint]| {
            cs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
        };
        format!("{}[+{}][-{}]", self.fine_class, join(&self.pos), join(&self.neg))
    }
}

fn satisfies_all(entity: &Entity, constraints: &[AttributeConstraint]) -> bool {
    constraints.iter().all(|c| c.matches(entity))
}

/// Members of `fine_class` matching all positive (resp. negative) constraints.
pub fn derive_targets(
    corpus: &Corpus,
    fine_class: &str,
    pos: &[AttributeConstraint],
    neg: &[AttributeConstraint],
) -> Result<(BTreeSet<EntityId>, BTreeSet<EntityId>)> {
    let members = corpus.fine_class(fine_class)?;
    let select = |constraints: &[AttributeConstraint]| {
        members
            .iter()
            .filter(|id| {
                corpus
                    .entity(id)
                    .is_some_and(|e| satisfies_all(e, constraints))
            })
            .cloned()
            .collect()
    };
    Ok((select(pos), select(neg)))
}

/// All `k`-subsets of `items`, in lexicographic order.
fn combinations<T: Clone>(items: &[T], k: usize) -> Vec<Vec<T>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    if items.len() < k {
        return Vec::new();
    }
    let mut out = Vec::new();
    for (i, first) in items.iter().enumerate() {
        for mut rest in combinations(&items[i + 1..], k - 1) {
            rest.insert(0, first.clone());
            out.push(rest);
        }
    }
    out
}

/// Value tuples over `attrs` observed among `members` (entities lacking any
/// of the attributes contribute nothing).
fn observed_tuples<'a>(
    members: impl Iterator<Item = &'a Entity>,
    attrs: &[String],
) -> BTreeSet<Vec<String>> {
    members
        .filter_map(|e| {
            attrs
                .iter()
                .map(|a| e.attr(a).map(str::to_owned))
                .collect::<Option<Vec<_>>>()
        })
        .collect()
}

fn constraints(attrs: &[String], values: &[String]) -> Vec<AttributeConstraint> {
    attrs
        .iter()
        .zip(values)
        .map(|(a, v)| AttributeConstraint {
            attribute: a.clone(),
            value: v.clone(),
        })
        .collect()
}

/// Enumerates every `m` positive / `n` negative attribute choice and every
/// observed value tuple for them, keeping classes whose `P` and `N` both
/// exceed `n_thred`. Each survivor gets [`QUERIES_PER_CLASS`] queries.
pub fn generate_ultra_classes(
    corpus: &Corpus,
    fine_class: &str,
    m: usize,
    n: usize,
    n_thred: usize,
    seed: u64,
) -> Result<Vec<UltraClass>> {
    let members: Vec<&Entity> = corpus
        .fine_class(fine_class)?
        .iter()
        .filter_map(|id| corpus.entity(id))
        .collect();
    if m == 0 || n == 0 {
        return Err(Error::invalid("m and n must be at least 1"));
    }
    if n_thred == 0 {
        return Err(Error::invalid("n_thred must be at least 1"));
    }
    let attrs: Vec<String> = members
        .iter()
        .flat_map(|e| e.attrs.keys().cloned())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if attrs.len() < m.max(n) {
        return Err(Error::invalid(format!(
            "class `{fine_class}` has {} attributes, need {}",
            attrs.len(),
            m.max(n)
        )));
    }

    let pos_sets = combinations(&attrs, m);
    let neg_sets = combinations(&attrs, n);
    let mut tuples: BTreeMap<&Vec<String>, BTreeSet<Vec<String>>> = BTreeMap::new();
    for set in pos_sets.iter().chain(&neg_sets) {
        tuples
            .entry(set)
            .or_insert_with(|| observed_tuples(members.iter().copied(), set));
    }

    let mut out = Vec::new();
    for pos_attrs in &pos_sets {
        for neg_attrs in &neg_sets {
            for pos_vals in &tuples[pos_attrs] {
                for neg_vals in &tuples[neg_attrs] {
                    if pos_attrs == neg_attrs && pos_vals == neg_vals {
                        continue;
                    }
                    let pos = constraints(pos_attrs, pos_vals);
                    let neg = constraints(neg_attrs, neg_vals);
                    let (p, nn) = derive_targets(corpus, fine_class, &pos, &neg)?;
                    if p.len() <= n_thred || nn.len() <= n_thred {
                        continue;
                    }
                    let mut class = UltraClass {
                        fine_class: fine_class.to_owned(),
                        pos,
                        neg,
                        positives: p,
                        negatives: nn,
                        queries: Vec::new(),
                    };
                    let class_seed = splitmix64(seed ^ splitmix64(out.len() as u64 + 1));
                    let k_max = SEEDS_MAX.min(class.positives.len()).min(class.negatives.len());
                    if k_max < SEEDS_MIN {
                        log::warn!("skipping {}: target sets too small for seeds", class.describe());
                        continue;
                    }
                    match sample_queries(&class, SEEDS_MIN, k_max, QUERIES_PER_CLASS, class_seed) {
                        Ok(qs) => {
                            class.queries = qs;
                            out.push(class);
                        }
                        Err(Error::InsufficientPool(why)) => {
                            log::warn!("skipping {}: {why}", class.describe());
                        }
                        Err(e) => return Err(e),
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Draws `count` queries: positive seeds without replacement from `P`,
/// negative seeds from `N` minus the chosen positive seeds.
pub fn sample_queries(
    class: &UltraClass,
    k_min: usize,
    k_max: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<Query>> {
    if k_min == 0 || k_min > k_max {
        return Err(Error::invalid(format!("bad seed-size range [{k_min}, {k_max}]")));
    }
    if class.positives.len() < k_max || class.negatives.len() < k_max {
        return Err(Error::InsufficientPool(format!(
            "|P| = {}, |N| = {}, need {k_max} each",
            class.positives.len(),
            class.negatives.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pos_pool: Vec<&EntityId> = class.positives.iter().collect();
    (0..count)
        .map(|_| {
            let k_pos = rng.gen_range(k_min..=k_max);
            let pos_seeds: Vec<EntityId> = pos_pool
                .choose_multiple(&mut rng, k_pos)
                .map(|&id| id.clone())
                .collect();
            let neg_pool: Vec<&EntityId> = class
                .negatives
                .iter()
                .filter(|id| !pos_seeds.contains(id))
                .collect();
            let k_neg = rng.gen_range(k_min..=k_max);
            if neg_pool.len() < k_neg {
                return Err(Error::InsufficientPool(format!(
                    "{} negatives left after removing positive seeds, need {k_neg}",
                    neg_pool.len()
                )));
            }
            let neg_seeds = neg_pool
                .choose_multiple(&mut rng, k_neg)
                .map(|&id| id.clone())
                .collect();
            Ok(Query {
                pos_seeds,
                neg_seeds,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::FineClass;
    use proptest::prelude::*;

    fn entity(id: &str, attrs: &[(&str, &str)]) -> Entity {
        Entity {
            id: id.into(),
            name: id.to_uppercase(),
            attrs: attrs
                .iter()
                .map(|(a, v)| (a.to_string(), v.to_string()))
                .collect(),
        }
    }

    fn corpus_of(entities: Vec<Entity>) -> Corpus {
        let ids = entities.iter().map(|e| e.id.clone()).collect();
        Corpus::from_parts(
            entities,
            vec![],
            vec![FineClass {
                name: "phones".into(),
                entity_ids: ids,
            }],
        )
        .unwrap()
    }

    fn phones() -> Corpus {
        corpus_of(vec![
            entity("samsung", &[("os", "android"), ("origin", "asia")]),
            entity("motorola", &[("os", "android"), ("origin", "america")]),
            entity("google", &[("os", "android"), ("origin", "america")]),
            entity("xiaomi", &[("os", "android"), ("origin", "asia")]),
            entity("apple", &[("os", "ios"), ("origin", "america")]),
            entity("nokia", &[("origin", "europe")]),
        ])
    }

    fn c(a: &str, v: &str) -> AttributeConstraint {
        AttributeConstraint::new(a, v).unwrap()
    }

    fn ids(xs: &[&str]) -> BTreeSet<EntityId> {
        xs.iter().map(|&x| x.into()).collect()
    }

    /// Brute-force filter, written independently of `derive_targets`.
    fn oracle(corpus: &Corpus, cs: &[AttributeConstraint]) -> BTreeSet<EntityId> {
        let mut out = BTreeSet::new();
        for e in corpus.entities() {
            let mut ok = true;
            for c in cs {
                if e.attrs.get(&c.attribute) != Some(&c.value) {
                    ok = false;
                }
            }
            if ok {
                out.insert(e.id.clone());
            }
        }
        out
    }

    #[test]
    fn vacuous_constraints_select_whole_class() {
        let corpus = phones();
        let (p, _) = derive_targets(&corpus, "phones", &[], &[]).unwrap();
        assert_eq!(p.len(), 6);
    }

    #[test]
    fn android_fixture() {
        let corpus = phones();
        let pos = [c("os", "android")];
        let neg = [c("origin", "asia")];
        let (p, n) = derive_targets(&corpus, "phones", &pos, &neg).unwrap();
        assert_eq!(p, ids(&["google", "motorola", "samsung", "xiaomi"]));
        assert_eq!(p, oracle(&corpus, &pos));
        assert_eq!(n, oracle(&corpus, &neg));
        // Asian android brands sit in both sets
        assert_eq!(p.intersection(&n).count(), 2);
    }

    #[test]
    fn missing_attribute_satisfies_nothing() {
        let (p, _) = derive_targets(&phones(), "phones", &[c("os", "android")], &[]).unwrap();
        assert!(!p.contains(&EntityId::from("nokia")));
    }

    #[test]
    fn unknown_class() {
        assert!(matches!(
            derive_targets(&phones(), "cars", &[], &[]),
            Err(Error::UnknownClass(_))
        ));
    }

    #[test]
    fn constraint_wire_format() {
        let json = serde_json::to_string(&c("os", "android")).unwrap();
        assert_eq!(json, r#"["os","android"]"#);
        assert!(serde_json::from_str::<AttributeConstraint>(r#"["", "x"]"#).is_err());
    }

    fn grid_corpus() -> Corpus {
        // 20 entities over os∈{a,b} × origin∈{x,y} with uneven counts
        let counts = [("a", "x", 7), ("a", "y", 5), ("b", "x", 2), ("b", "y", 6)];
        let mut entities = Vec::new();
        for (os, origin, k) in counts {
            for i in 0..k {
                entities.push(entity(
                    &format!("{os}{origin}{i}"),
                    &[("os", os), ("origin", origin)],
                ));
            }
        }
        corpus_of(entities)
    }

    #[test]
    fn threshold_filter_matches_exhaustive_enumeration() {
        let corpus = grid_corpus();
        let classes = generate_ultra_classes(&corpus, "phones", 1, 1, 2, 42).unwrap();

        // oracle: every (attr, value) pair for pos and neg, filtered
        let pairs = [
            ("origin", "x"),
            ("origin", "y"),
            ("os", "a"),
            ("os", "b"),
        ];
        let mut expected = BTreeSet::new();
        for (pa, pv) in pairs {
            for (na, nv) in pairs {
                if (pa, pv) == (na, nv) {
                    continue;
                }
                let p = oracle(&corpus, &[c(pa, pv)]);
                let n = oracle(&corpus, &[c(na, nv)]);
                if p.len() > 2 && n.len() > 2 {
                    expected.insert((pa.to_string(), pv.to_string(), na.to_string(), nv.to_string()));
                }
            }
        }
        let got: BTreeSet<_> = classes
            .iter()
            .map(|u| {
                (
                    u.pos[0].attribute.clone(),
                    u.pos[0].value.clone(),
                    u.neg[0].attribute.clone(),
                    u.neg[0].value.clone(),
                )
            })
            .collect();
        assert_eq!(got, expected);
        for u in &classes {
            u.verify(&corpus).unwrap();
            assert_eq!(u.queries.len(), QUERIES_PER_CLASS);
        }
    }

    #[test]
    fn nothing_survives_high_threshold() {
        let classes = generate_ultra_classes(&grid_corpus(), "phones", 1, 1, 20, 0).unwrap();
        assert!(classes.is_empty());
    }

    #[test]
    fn same_attribute_classes_are_disjoint() {
        let classes = generate_ultra_classes(&grid_corpus(), "phones", 1, 1, 2, 0).unwrap();
        let same: Vec<_> = classes
            .iter()
            .filter(|u| u.pos[0].attribute == u.neg[0].attribute)
            .collect();
        assert!(!same.is_empty());
        for u in same {
            assert!(u.positives.is_disjoint(&u.negatives));
        }
    }

    #[test]
    fn too_few_attributes() {
        assert!(generate_ultra_classes(&grid_corpus(), "phones", 3, 1, 2, 0).is_err());
    }

    fn class_with(p: &[&str], n: &[&str]) -> UltraClass {
        UltraClass {
            fine_class: "phones".into(),
            pos: vec![],
            neg: vec![],
            positives: ids(p),
            negatives: ids(n),
            queries: vec![],
        }
    }

    #[test]
    fn forced_sampling_uses_whole_pools() {
        let u = class_with(&["a", "b", "c", "d", "e"], &["f", "g", "h", "i", "j"]);
        for q in sample_queries(&u, 5, 5, 3, 1).unwrap() {
            assert_eq!(q.pos_seeds.iter().cloned().collect::<BTreeSet<_>>(), u.positives);
            assert_eq!(q.neg_seeds.iter().cloned().collect::<BTreeSet<_>>(), u.negatives);
        }
    }

    #[test]
    fn sampling_is_deterministic_and_in_bounds() {
        let corpus = grid_corpus();
        let pos = [c("os", "a")];
        let neg = [c("origin", "x")];
        let (p, n) = derive_targets(&corpus, "phones", &pos, &neg).unwrap();
        let u = UltraClass {
            fine_class: "phones".into(),
            pos: pos.to_vec(),
            neg: neg.to_vec(),
            positives: p.clone(),
            negatives: n.clone(),
            queries: vec![],
        };
        let a = sample_queries(&u, 3, 5, 3, 7).unwrap();
        assert_eq!(a, sample_queries(&u, 3, 5, 3, 7).unwrap());
        for q in &a {
            assert!((3..=5).contains(&q.pos_seeds.len()));
            assert!((3..=5).contains(&q.neg_seeds.len()));
            assert!(q.pos_seeds.iter().all(|s| p.contains(s)));
            assert!(q.neg_seeds.iter().all(|s| n.contains(s)));
            assert!(q.pos_seeds.iter().all(|s| !q.neg_seeds.contains(s)));
        }
    }

    #[test]
    fn insufficient_pool() {
        let u = class_with(&["a", "b"], &["c", "d", "e", "f", "g"]);
        assert!(matches!(
            sample_queries(&u, 3, 5, 1, 0),
            Err(Error::InsufficientPool(_))
        ));
    }

    fn arb_corpus() -> impl Strategy<Value = Corpus> {
        prop::collection::vec((0..3usize, 0..3usize, prop::bool::ANY), 1..30).prop_map(|rows| {
            let entities = rows
                .iter()
                .enumerate()
                .map(|(i, &(a, b, has_c))| {
                    let mut attrs = vec![("a", ["0", "1", "2"][a]), ("b", ["0", "1", "2"][b])];
                    if has_c {
                        attrs.push(("c", "1"));
                    }
                    entity(&format!("e{i:02}"), &attrs)
                })
                .collect();
            corpus_of(entities)
        })
    }

    fn arb_constraints() -> impl Strategy<Value = Vec<AttributeConstraint>> {
        prop::collection::vec(
            (prop::sample::select(vec!["a", "b", "c"]), prop::sample::select(vec!["0", "1", "2"]))
                .prop_map(|(a, v)| c(a, v)),
            0..3,
        )
    }

    proptest! {
        #[test]
        fn derive_targets_properties(
            corpus in arb_corpus(),
            pos in arb_constraints(),
            neg in arb_constraints(),
            extra in arb_constraints(),
        ) {
            let (p, n) = derive_targets(&corpus, "phones", &pos, &neg).unwrap();
            prop_assert_eq!(&p, &oracle(&corpus, &pos));
            prop_assert_eq!(&n, &oracle(&corpus, &neg));
            // idempotent and order-independent
            let mut rev_pos = pos.clone();
            rev_pos.reverse();
            let (p2, _) = derive_targets(&corpus, "phones", &rev_pos, &neg).unwrap();
            prop_assert_eq!(&p, &p2);
            // monotone: more constraints never grow the set
            let mut more = pos.clone();
            more.extend(extra);
            let (p3, _) = derive_targets(&corpus, "phones", &more, &neg).unwrap();
            prop_assert!(p3.is_subset(&p));
        }

        #[test]
        fn generated_classes_hold_invariants(corpus in arb_corpus(), thred in 1usize..4, seed in 0u64..1000) {
            let classes = generate_ultra_classes(&corpus, "phones", 1, 1, thred, seed).unwrap();
            for u in &classes {
                prop_assert!(u.positives.len() > thred && u.negatives.len() > thred);
                u.verify(&corpus).unwrap();
                if u.pos.iter().map(|c| &c.attribute).eq(u.neg.iter().map(|c| &c.attribute)) {
                    prop_assert!(u.positives.is_disjoint(&u.negatives));
                }
            }
        }
    }
}
