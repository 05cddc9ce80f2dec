//! Planted synthetic corpora for tests, examples and smoke runs.
//!
//! Every entity belongs to one fine class and carries two binary
//! attributes, `os` and `origin`. Its sentences mention the class word and
//! the attribute values, and [`planted_embedder`] maps each of those words to
//! its own coordinate block, so embeddings recover the attribute structure
//! while still carrying hashed noise from filler words.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Entity, EntityId, FineClass, Mention, Sentence, SentenceId};
use crate::error::{Error, Result};
use crate::providers::StubEmbedder;

pub const CLASS_WORDS: [&str; 8] = [
    "phone", "tablet", "watch", "camera", "speaker", "router", "drone", "console",
];
pub const OS_VALUES: [&str; 2] = ["android", "harmony"];
pub const ORIGIN_VALUES: [&str; 2] = ["asia", "europe"];

const FILLERS: [&str; 24] = [
    "sleek", "bulky", "cheap", "premium", "quiet", "loud", "modern", "classic", "rugged", "fragile",
    "popular", "obscure", "bright", "matte", "slim", "heavy", "compact", "vintage", "smart", "basic",
    "glossy", "bold", "tiny", "massive",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedConfig {
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            classes: 5,
            per_class: 100,
            dim: 64,
            seed: 0,
        }
    }
}

impl PlantedConfig {
    fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.classes > CLASS_WORDS.len() {
            return Err(Error::invalid(format!(
                "classes must be between 1 and {}",
                CLASS_WORDS.len()
            )));
        }
        if self.per_class == 0 {
            return Err(Error::invalid("per_class must be positive"));
        }
        let blocks = self.classes + OS_VALUES.len() + ORIGIN_VALUES.len();
        if blocks * BLOCK_WIDTH > self.dim {
            return Err(Error::invalid(format!(
                "dim {} cannot hold {blocks} planted blocks of width {BLOCK_WIDTH}",
                self.dim
            )));
        }
        Ok(())
    }
}

const BLOCK_WIDTH: usize = 4;
const BLOCK_STRENGTH: f64 = 3.0;

/// Sentence templates; `{e}` is the mention.
const TEMPLATES: [&str; 3] = [
    "{e} is a {class} running {os} .",
    "The {filler} {class} {e} was built in {origin} .",
    "Critics called {e} a {filler} {class} .",
];

fn sentence(id: String, template: &str, entity: &Entity, fill: &BTreeMap<&str, &str>) -> Sentence {
    let mut text = template.to_string();
    for (k, v) in fill {
        text = text.replace(&format!("{{{k}}}"), v);
    }
    let at = text.find("{e}").expect("template mentions the entity");
    let start = text[..at].chars().count();
    text = text.replacen("{e}", &entity.name, 1);
    Sentence {
        id: SentenceId(id),
        mentions: vec![Mention {
            entity_id: entity.id.clone(),
            start,
            end: start + entity.name.chars().count(),
            surface: entity.name.clone(),
        }],
        text,
    }
}

/// Builds the corpus: `classes × per_class` entities with independent,
/// uniformly drawn `os` and `origin`, three sentences each.
pub fn planted_corpus(config: &PlantedConfig) -> Result<Corpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut entities = Vec::new();
    let mut sentences = Vec::new();
    let mut classes = Vec::new();
    for (c, class_word) in CLASS_WORDS.iter().take(config.classes).enumerate() {
        let mut members = Vec::new();
        for i in 0..config.per_class {
            let n = c * config.per_class + i;
            let os = OS_VALUES[rng.gen_range(0..OS_VALUES.len())];
            let origin = ORIGIN_VALUES[rng.gen_range(0..ORIGIN_VALUES.len())];
            let entity = Entity {
                id: EntityId(format!("e{n:04}")),
                name: format!("{}{i:03}", capitalize(class_word)),
                attrs: [("os", os), ("origin", origin)]
                    .into_iter()
                    .map(|(k, v)| (k.to_string(), v.to_string()))
                    .collect(),
            };
            for (t, template) in TEMPLATES.iter().enumerate() {
                let filler = *FILLERS.choose(&mut rng).expect("fillers");
                let fill: BTreeMap<&str, &str> = [
                    ("class", *class_word),
                    ("os", os),
                    ("origin", origin),
                    ("filler", filler),
                ]
                .into();
                sentences.push(sentence(
                    format!("s{:05}", n * TEMPLATES.len() + t),
                    template,
                    &entity,
                    &fill,
                ));
            }
            members.push(entity.id.clone());
            entities.push(entity);
        }
        classes.push(FineClass {
            name: format!("{class_word}s"),
            entity_ids: members,
        });
    }
    Corpus::from_parts(entities, sentences, classes)
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Stub embedder with one block per class word and attribute value.
pub fn planted_embedder(config: &PlantedConfig) -> Result<StubEmbedder> {
    config.validate()?;
    let mut e = StubEmbedder::new(config.dim, config.seed).with_blocks(BLOCK_WIDTH, BLOCK_STRENGTH);
    let words = CLASS_WORDS
        .iter()
        .take(config.classes)
        .chain(&OS_VALUES)
        .chain(&ORIGIN_VALUES);
    for (block, w) in words.enumerate() {
        e = e.plant(*w, block);
    }
    Ok(e)
}
