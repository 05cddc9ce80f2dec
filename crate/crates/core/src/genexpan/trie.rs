use std::collections::BTreeMap;

use crate::corpus::{Corpus, EntityId};
use crate::error::{Error, Result};
use crate::providers::{Tokenizer, END_TOKEN};

/// Index of a node inside an [`EntityTrie`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone, Default)]
struct Node {
    children: BTreeMap<String, NodeId>,
    terminal: Option<EntityId>,
}

/// Prefix tree over the tokenizations of candidate entity names.
///
/// Two entities with the same tokenization share a terminal, which carries
/// the smaller id; the other is recorded in [`collisions`](Self::collisions).
#[derive(Debug, Clone)]
pub struct EntityTrie {
    nodes: Vec<Node>,
    tokenizer: Tokenizer,
    collisions: Vec<(EntityId, EntityId)>,
    terminals: usize,
}

impl EntityTrie {
    pub const ROOT: NodeId = NodeId(0);

    /// Builds the trie from `(id, surface name)` pairs.
    pub fn build<'a>(
        vocab: impl IntoIterator<Item = (&'a EntityId, &'a str)>,
        tokenizer: &Tokenizer,
    ) -> Result<Self> {
        let mut trie = Self {
            nodes: vec![Node::default()],
            tokenizer: tokenizer.clone(),
            collisions: Vec::new(),
            terminals: 0,
        };
        for (id, name) in vocab {
            let tokens = tokenizer.tokenize(name);
            if tokens.is_empty() {
                return Err(Error::invalid(format!("entity `{id}` tokenizes to nothing")));
            }
            if tokens.iter().any(|t| t == END_TOKEN) {
                return Err(Error::invalid(format!(
                    "entity `{id}` contains the reserved token {END_TOKEN}"
                )));
            }
            trie.insert(id, &tokens);
        }
        if trie.terminals == 0 {
            return Err(Error::invalid("cannot build a trie over an empty vocabulary"));
        }
        Ok(trie)
    }

    /// Trie over every entity name in the corpus.
    pub fn from_corpus(corpus: &Corpus, tokenizer: &Tokenizer) -> Result<Self> {
        Self::build(corpus.entities().map(|e| (&e.id, e.name.as_str())), tokenizer)
    }

    fn insert(&mut self, id: &EntityId, tokens: &[String]) {
        let mut cur = Self::ROOT;
        for t in tokens {
            cur = match self.nodes[cur.0].children.get(t) {
                Some(&next) => next,
                None => {
                    let next = NodeId(self.nodes.len());
                    self.nodes.push(Node::default());
                    self.nodes[cur.0].children.insert(t.clone(), next);
                    next
                }
            };
        }
        let slot = &mut self.nodes[cur.0].terminal;
        match slot {
            None => {
                *slot = Some(id.clone());
                self.terminals += 1;
            }
            Some(existing) => {
                let (keep, drop) = if id < existing {
                    (id.clone(), existing.clone())
                } else {
                    (existing.clone(), id.clone())
                };
                log::warn!("`{drop}` and `{keep}` tokenize identically; keeping `{keep}`");
                *slot = Some(keep.clone());
                self.collisions.push((keep, drop));
            }
        }
    }

    pub fn tokenizer(&self) -> &Tokenizer {
        &self.tokenizer
    }

    /// Number of distinct entity terminals.
    pub fn terminal_count(&self) -> usize {
        self.terminals
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// `(kept, dropped)` pairs for entities whose tokenizations coincide.
    pub fn collisions(&self) -> &[(EntityId, EntityId)] {
        &self.collisions
    }

    pub fn child(&self, node: NodeId, token: &str) -> Option<NodeId> {
        self.nodes[node.0].children.get(token).copied()
    }

    pub fn terminal(&self, node: NodeId) -> Option<&EntityId> {
        self.nodes[node.0].terminal.as_ref()
    }

    /// Follows `tokens` from the root.
    pub fn walk(&self, tokens: &[String]) -> Option<NodeId> {
        tokens
            .iter()
            .try_fold(Self::ROOT, |node, t| self.child(node, t))
    }

    /// The entity spelled exactly by `tokens`, if any.
    pub fn lookup(&self, tokens: &[String]) -> Option<&EntityId> {
        self.walk(tokens).and_then(|n| self.terminal(n))
    }

    /// Tokens that may follow `node`: child labels in order, then the end
    /// marker if the node is terminal.
    pub fn allowed_at(&self, node: NodeId) -> Vec<String> {
        let n = &self.nodes[node.0];
        let mut out: Vec<String> = n.children.keys().cloned().collect();
        if n.terminal.is_some() {
            out.push(END_TOKEN.to_string());
        }
        out
    }

    pub fn allowed_next(&self, prefix: &[String]) -> Result<Vec<String>> {
        let node = self
            .walk(prefix)
            .ok_or_else(|| Error::invalid(format!("prefix {prefix:?} is not in the trie")))?;
        Ok(self.allowed_at(node))
    }

    /// Every root-to-terminal path with its entity, in token order.
    pub fn paths(&self) -> Vec<(EntityId, Vec<String>)> {
        let mut out = Vec::new();
        let mut stack = vec![(Self::ROOT, Vec::new())];
        while let Some((node, tokens)) = stack.pop() {
            let n = &self.nodes[node.0];
            if let Some(id) = &n.terminal {
                out.push((id.clone(), tokens.clone()));
            }
            for (t, &child) in n.children.iter().rev() {
                let mut next = tokens.clone();
                next.push(t.clone());
                stack.push((child, next));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    fn toks(s: &str) -> Vec<String> {
        s.chars().map(String::from).collect()
    }

    fn trie(names: &[&str]) -> (Vec<EntityId>, EntityTrie) {
        let ids: Vec<EntityId> = (0..names.len()).map(|i| EntityId(format!("e{i}"))).collect();
        let t = EntityTrie::build(ids.iter().zip(names.iter().copied()), &Tokenizer::character()).unwrap();
        (ids, t)
    }

    #[test]
    fn two_names_share_a_prefix() {
        let (_, t) = trie(&["ab", "ac"]);
        assert_eq!(t.node_count(), 4);
        assert_eq!(t.terminal_count(), 2);
        assert_eq!(t.allowed_next(&[]).unwrap(), ["a"]);
        assert_eq!(t.allowed_next(&toks("a")).unwrap(), ["b", "c"]);
        assert_eq!(t.allowed_next(&toks("ab")).unwrap(), [END_TOKEN]);
        assert!(t.allowed_next(&toks("x")).is_err());
    }

    #[test]
    fn single_entity_is_a_single_path() {
        let (ids, t) = trie(&["xyz"]);
        assert_eq!(t.node_count(), 4);
        assert_eq!(t.paths(), vec![(ids[0].clone(), toks("xyz"))]);
    }

    #[test]
    fn terminal_with_children_offers_end_and_children() {
        let (ids, t) = trie(&["ab", "abc"]);
        assert_eq!(t.allowed_next(&toks("ab")).unwrap(), ["c", END_TOKEN]);
        assert_eq!(t.lookup(&toks("ab")), Some(&ids[0]));
        assert_eq!(t.lookup(&toks("a")), None);
    }

    #[test]
    fn collisions_keep_smallest_id() {
        let ids = [EntityId::from("z"), EntityId::from("b")];
        let t = EntityTrie::build(
            ids.iter().zip(["same", "same"]),
            &Tokenizer::character(),
        )
        .unwrap();
        assert_eq!(t.terminal_count(), 1);
        assert_eq!(t.lookup(&toks("same")), Some(&ids[1]));
        assert_eq!(t.collisions(), [(ids[1].clone(), ids[0].clone())]);
    }

    #[test]
    fn rejects_bad_vocab() {
        let id = EntityId::from("a");
        assert!(EntityTrie::build(std::iter::empty(), &Tokenizer::character()).is_err());
        assert!(EntityTrie::build([(&id, "")], &Tokenizer::character()).is_err());
        assert!(EntityTrie::build([(&id, "x <|end|>")], &Tokenizer::whitespace()).is_err());
    }

    #[test]
    fn membership_matches_set_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let word = |rng: &mut ChaCha8Rng| -> String {
            let len = rng.gen_range(1..7);
            (0..len).map(|_| (b'a' + rng.gen_range(0..4)) as char).collect()
        };
        let mut names = BTreeSet::new();
        while names.len() < 50 {
            names.insert(word(&mut rng));
        }
        let names: Vec<&str> = names.iter().map(String::as_str).collect();
        let (_, t) = trie(&names);
        for n in &names {
            assert!(t.lookup(&toks(n)).is_some());
        }
        for _ in 0..500 {
            let w = word(&mut rng);
            assert_eq!(t.lookup(&toks(&w)).is_some(), names.contains(&w.as_str()), "{w}");
        }
    }

    proptest! {
        #[test]
        fn paths_spell_exactly_the_vocab(names in prop::collection::btree_set("[ab]{1,5}", 1..30)) {
            let names: Vec<&str> = names.iter().map(String::as_str).collect();
            let (ids, t) = trie(&names);
            let mut got: Vec<(EntityId, String)> = t
                .paths()
                .into_iter()
                .map(|(id, tokens)| (id, tokens.concat()))
                .collect();
            got.sort();
            let mut want: Vec<(EntityId, String)> =
                ids.into_iter().zip(names.iter().map(|s| s.to_string())).collect();
            want.sort();
            prop_assert_eq!(got, want);
            prop_assert_eq!(t.terminal_count(), names.len());
        }
    }
}
