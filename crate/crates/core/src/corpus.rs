//! Dataset ingestion and indexing.
//!
//! A corpus is three line-delimited JSON files:
//!
//! ```text
//! entities.jsonl      {"id": str, "name": str, "attrs": {str: str}}
//! sentences.jsonl     {"id": str, "text": str, "mentions": [{"entity_id": str, "start": int, "end": int, "surface": str}]}
//! fine_classes.jsonl  {"name": str, "entity_ids": [str]}
//! ```
//!
//! Mention offsets count Unicode scalar values (not bytes) into `text`, end
//! exclusive. Loading validates everything and reports all problems at once,
//! each with its file and line number.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, ValidationReport};

/// Default number of sentences sampled per entity.
pub const DEFAULT_SENTENCE_CAP: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntityId(pub String);

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SentenceId(pub String);

macro_rules! id_impls {
    ($t:ty) => {
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }
        impl From<&str> for $t {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }
        impl From<String> for $t {
            fn from(s: String) -> Self {
                Self(s)
            }
        }
        impl $t {
            pub fn as_str(&self) -> &str {
                &self.0
            }
        }
    };
}

id_impls!(EntityId);
id_impls!(SentenceId);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub id: EntityId,
    pub name: String,
    #[serde(default)]
    pub attrs: BTreeMap<String, String>,
}

impl Entity {
    pub fn attr(&self, name: &str) -> Option<&str> {
        self.attrs.get(name).map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mention {
    pub entity_id: EntityId,
    pub start: usize,
    pub end: usize,
    pub surface: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub id: SentenceId,
    pub text: String,
    #[serde(default)]
    pub mentions: Vec<Mention>,
}

impl Sentence {
    /// Byte range of a character-offset span, `None` if out of bounds.
    pub fn byte_span(&self, start: usize, end: usize) -> Option<std::ops::Range<usize>> {
        char_span_to_bytes(&self.text, start, end)
    }

    /// Text with the span `[start, end)` (character offsets) replaced.
    pub fn replace_span(&self, start: usize, end: usize, with: &str) -> Option<String> {
        let range = self.byte_span(start, end)?;
        let mut out = String::with_capacity(self.text.len() + with.len());
        out.push_str(&self.text[..range.start]);
        out.push_str(with);
        out.push_str(&self.text[range.end..]);
        Some(out)
    }
}

fn char_span_to_bytes(text: &str, start: usize, end: usize) -> Option<std::ops::Range<usize>> {
    if start >= end {
        return None;
    }
    let mut bounds = text
        .char_indices()
        .map(|(b, _)| b)
        .chain(std::iter::once(text.len()));
    let s = bounds.nth(start)?;
    let e = bounds.nth(end - start - 1)?;
    Some(s..e)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FineClass {
    pub name: String,
    pub entity_ids: Vec<EntityId>,
}

/// An immutable, fully indexed dataset.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    entities: BTreeMap<EntityId, Entity>,
    /// Sorted by sentence id.
    sentences: Vec<Sentence>,
    sentence_pos: BTreeMap<SentenceId, usize>,
    sentence_index: BTreeMap<EntityId, Vec<SentenceId>>,
    fine_classes: BTreeMap<String, BTreeSet<EntityId>>,
    candidate_vocab: BTreeSet<EntityId>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub entities: usize,
    pub sentences: usize,
    pub classes: usize,
    pub mentions: usize,
    /// Entities that no sentence mentions; still part of the vocabulary.
    pub unmentioned_entities: usize,
}

impl Corpus {
    /// Builds and validates a corpus from in-memory records.
    pub fn from_parts(
        entities: Vec<Entity>,
        sentences: Vec<Sentence>,
        classes: Vec<FineClass>,
    ) -> Result<Self> {
        let mut report = ValidationReport::default();
        let corpus = build(
            entities.into_iter().enumerate().map(|(i, e)| (i + 1, e)),
            sentences.into_iter().enumerate().map(|(i, s)| (i + 1, s)),
            classes.into_iter().enumerate().map(|(i, c)| (i + 1, c)),
            ["<entities>", "<sentences>", "<classes>"].map(Path::new),
            &mut report,
        );
        if report.is_empty() {
            Ok(corpus)
        } else {
            Err(Error::Validation(report))
        }
    }

    pub fn entity(&self, id: &EntityId) -> Option<&Entity> {
        self.entities.get(id)
    }

    pub fn entities(&self) -> impl Iterator<Item = &Entity> {
        self.entities.values()
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn sentences(&self) -> &[Sentence] {
        &self.sentences
    }

    pub fn sentence(&self, id: &SentenceId) -> Option<&Sentence> {
        self.sentence_pos.get(id).map(|&i| &self.sentences[i])
    }

    /// Ids of sentences mentioning `entity`, ascending.
    pub fn sentence_ids_for(&self, entity: &EntityId) -> &[SentenceId] {
        self.sentence_index
            .get(entity)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn fine_classes(&self) -> &BTreeMap<String, BTreeSet<EntityId>> {
        &self.fine_classes
    }

    pub fn fine_class(&self, name: &str) -> Result<&BTreeSet<EntityId>> {
        self.fine_classes
            .get(name)
            .ok_or_else(|| Error::UnknownClass(name.to_owned()))
    }

    pub fn candidate_vocab(&self) -> &BTreeSet<EntityId> {
        &self.candidate_vocab
    }

    pub fn is_unmentioned(&self, id: &EntityId) -> bool {
        self.entities.contains_key(id) && self.sentence_ids_for(id).is_empty()
    }

    /// Up to `cap` sentences mentioning `entity`, in sentence-id order.
    pub fn sentences_for(&self, entity: &EntityId, cap: usize) -> Result<Vec<&Sentence>> {
        if !self.entities.contains_key(entity) {
            return Err(Error::UnknownEntity(entity.to_string()));
        }
        Ok(self
            .sentence_ids_for(entity)
            .iter()
            .take(cap)
            .filter_map(|sid| self.sentence(sid))
            .collect())
    }

    pub fn stats(&self) -> CorpusStats {
        CorpusStats {
            entities: self.entities.len(),
            sentences: self.sentences.len(),
            classes: self.fine_classes.len(),
            mentions: self.sentences.iter().map(|s| s.mentions.len()).sum(),
            unmentioned_entities: self
                .entities
                .keys()
                .filter(|id| self.sentence_ids_for(id).is_empty())
                .count(),
        }
    }

    /// Entity ids keyed by display name; duplicate names keep the smallest id.
    pub fn name_index(&self) -> BTreeMap<&str, &EntityId> {
        let mut out = BTreeMap::new();
        for e in self.entities.values() {
            out.entry(e.name.as_str()).or_insert(&e.id);
        }
        out
    }

    /// Writes the three JSONL files in canonical order.
    pub fn write_jsonl(
        &self,
        mut entities: impl Write,
        mut sentences: impl Write,
        mut classes: impl Write,
    ) -> std::io::Result<()> {
        for e in self.entities.values() {
            writeln!(entities, "{}", serde_json::to_string(e)?)?;
        }
        for s in &self.sentences {
            writeln!(sentences, "{}", serde_json::to_string(s)?)?;
        }
        for (name, ids) in &self.fine_classes {
            let record = FineClass {
                name: name.clone(),
                entity_ids: ids.iter().cloned().collect(),
            };
            writeln!(classes, "{}", serde_json::to_string(&record)?)?;
        }
        Ok(())
    }

    pub fn save(&self, entity_file: &Path, sentence_file: &Path, class_file: &Path) -> Result<()> {
        let open = |p: &Path| crate::io::create(p).map(std::io::BufWriter::new);
        let (mut e, mut s, mut c) = (open(entity_file)?, open(sentence_file)?, open(class_file)?);
        self.write_jsonl(&mut e, &mut s, &mut c)
            .and_then(|_| e.flush())
            .and_then(|_| s.flush())
            .and_then(|_| c.flush())
            .map_err(|err| Error::io(entity_file, err))
    }
}

/// Loads and validates a corpus from its three JSONL files.
pub fn load_corpus(entity_file: &Path, sentence_file: &Path, class_file: &Path) -> Result<Corpus> {
    let mut report = ValidationReport::default();
    let entities = read_records::<Entity>(entity_file, &mut report)?;
    let sentences = read_records::<Sentence>(sentence_file, &mut report)?;
    let classes = read_records::<FineClass>(class_file, &mut report)?;
    let corpus = build(
        entities.into_iter(),
        sentences.into_iter(),
        classes.into_iter(),
        [entity_file, sentence_file, class_file],
        &mut report,
    );
    if report.is_empty() {
        log::info!("loaded corpus: {:?}", corpus.stats());
        Ok(corpus)
    } else {
        Err(Error::Validation(report))
    }
}

fn read_records<T: for<'de> Deserialize<'de>>(
    path: &Path,
    report: &mut ValidationReport,
) -> Result<Vec<(usize, T)>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<T>(&line) {
            Ok(record) => out.push((i + 1, record)),
            Err(e) => report.push(path, i + 1, format!("malformed record: {e}")),
        }
    }
    Ok(out)
}

fn build(
    entities: impl Iterator<Item = (usize, Entity)>,
    sentences: impl Iterator<Item = (usize, Sentence)>,
    classes: impl Iterator<Item = (usize, FineClass)>,
    [entity_file, sentence_file, class_file]: [&Path; 3],
    report: &mut ValidationReport,
) -> Corpus {
    let mut entity_map = BTreeMap::new();
    for (line, e) in entities {
        if e.id.0.is_empty() {
            report.push(entity_file, line, "empty entity id");
            continue;
        }
        if e.name.trim().is_empty() {
            report.push(entity_file, line, format!("entity `{}` has an empty name", e.id));
        }
        if entity_map.contains_key(&e.id) {
            report.push(entity_file, line, format!("duplicate entity id `{}`", e.id));
            continue;
        }
        entity_map.insert(e.id.clone(), e);
    }

    let mut sentence_list: Vec<Sentence> = Vec::new();
    let mut seen_sentences = BTreeSet::new();
    for (line, s) in sentences {
        if !seen_sentences.insert(s.id.clone()) {
            report.push(sentence_file, line, format!("duplicate sentence id `{}`", s.id));
            continue;
        }
        let char_len = s.text.chars().count();
        for m in &s.mentions {
            if !entity_map.contains_key(&m.entity_id) {
                report.push(
                    sentence_file,
                    line,
                    format!("mention references unknown entity `{}`", m.entity_id),
                );
            }
            if m.start >= m.end || m.end > char_len {
                report.push(
                    sentence_file,
                    line,
                    format!(
                        "mention span [{}, {}) out of bounds for text of {} chars",
                        m.start, m.end, char_len
                    ),
                );
                continue;
            }
            let range = s.byte_span(m.start, m.end).expect("bounds checked above");
            if s.text[range.clone()] != m.surface {
                report.push(
                    sentence_file,
                    line,
                    format!(
                        "mention surface `{}` does not match text `{}`",
                        m.surface,
                        &s.text[range]
                    ),
                );
            }
        }
        sentence_list.push(s);
    }
    sentence_list.sort_by(|a, b| a.id.cmp(&b.id));

    let sentence_pos = sentence_list
        .iter()
        .enumerate()
        .map(|(i, s)| (s.id.clone(), i))
        .collect();

    let mut sentence_index: BTreeMap<EntityId, Vec<SentenceId>> = BTreeMap::new();
    for s in &sentence_list {
        let mentioned: BTreeSet<&EntityId> = s.mentions.iter().map(|m| &m.entity_id).collect();
        for id in mentioned {
            sentence_index.entry(id.clone()).or_default().push(s.id.clone());
        }
    }

    let mut fine_classes = BTreeMap::new();
    for (line, c) in classes {
        if c.name.is_empty() {
            report.push(class_file, line, "empty class name");
            continue;
        }
        if fine_classes.contains_key(&c.name) {
            report.push(class_file, line, format!("duplicate class `{}`", c.name));
            continue;
        }
        let mut members = BTreeSet::new();
        for id in c.entity_ids {
            if !entity_map.contains_key(&id) {
                report.push(
                    class_file,
                    line,
                    format!("class `{}` lists unknown entity `{id}`", c.name),
                );
            }
            members.insert(id);
        }
        fine_classes.insert(c.name, members);
    }

    let candidate_vocab = entity_map.keys().cloned().collect();
    Corpus {
        entities: entity_map,
        sentences: sentence_list,
        sentence_pos,
        sentence_index,
        fine_classes,
        candidate_vocab,
    }
}
