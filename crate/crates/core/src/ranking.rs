use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::corpus::EntityId;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub id: EntityId,
    pub score: f64,
}

/// An ordered list of distinct entities; index 0 is rank 1.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<RankedEntry>", into = "Vec<RankedEntry>")]
pub struct RankedList {
    entries: Vec<RankedEntry>,
}

impl RankedList {
    pub fn new(entries: Vec<RankedEntry>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(entries.len());
        for e in &entries {
            if !seen.insert(&e.id) {
                return Err(Error::invalid(format!("duplicate entity `{}` in ranked list", e.id)));
            }
        }
        Ok(Self { entries })
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (EntityId, f64)>) -> Result<Self> {
        Self::new(
            pairs
                .into_iter()
                .map(|(id, score)| RankedEntry { id, score })
                .collect(),
        )
    }

    pub fn entries(&self) -> &[RankedEntry] {
        &self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = &EntityId> {
        self.entries.iter().map(|e| &e.id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn truncate(&mut self, k: usize) {
        self.entries.truncate(k);
    }

    pub fn into_entries(self) -> Vec<RankedEntry> {
        self.entries
    }
}

impl TryFrom<Vec<RankedEntry>> for RankedList {
    type Error = Error;

    fn try_from(entries: Vec<RankedEntry>) -> Result<Self> {
        Self::new(entries)
    }
}

impl From<RankedList> for Vec<RankedEntry> {
    fn from(list: RankedList) -> Self {
        list.entries
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Framework {
    Ret,
    Gen,
}

impl Framework {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Ret => "ret",
            Self::Gen => "gen",
        }
    }

    /// Method label used in report tables.
    pub fn method_name(self) -> &'static str {
        match self {
            Self::Ret => "RetExpan",
            Self::Gen => "GenExpan",
        }
    }
}

impl std::str::FromStr for Framework {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ret" => Ok(Self::Ret),
            "gen" => Ok(Self::Gen),
            _ => Err(Error::invalid(format!("unknown framework `{s}` (expected ret or gen)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RankedLine {
    id: EntityId,
    score: f64,
    rank: usize,
}

/// One line of a ranked-list output file:
/// `{"query_index":0,"framework":"ret","entries":[{"id":"e1","score":0.9,"rank":1}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RankedListLine", into = "RankedListLine")]
pub struct RankedListRecord {
    pub query_index: usize,
    pub framework: Framework,
    pub list: RankedList,
}

#[derive(Serialize, Deserialize)]
struct RankedListLine {
    query_index: usize,
    framework: Framework,
    entries: Vec<RankedLine>,
}

impl TryFrom<RankedListLine> for RankedListRecord {
    type Error = Error;

    fn try_from(line: RankedListLine) -> Result<Self> {
        let mut entries = Vec::with_capacity(line.entries.len());
        for (i, e) in line.entries.into_iter().enumerate() {
            if e.rank != i + 1 {
                return Err(Error::invalid(format!(
                    "query {}: entry `{}` has rank {}, expected {}",
                    line.query_index,
                    e.id,
                    e.rank,
                    i + 1
                )));
            }
            entries.push(RankedEntry { id: e.id, score: e.score });
        }
        Ok(Self {
            query_index: line.query_index,
            framework: line.framework,
            list: RankedList::new(entries)?,
        })
    }
}

impl From<RankedListRecord> for RankedListLine {
    fn from(r: RankedListRecord) -> Self {
        Self {
            query_index: r.query_index,
            framework: r.framework,
            entries: r
                .list
                .into_entries()
                .into_iter()
                .enumerate()
                .map(|(i, e)| RankedLine {
                    id: e.id,
                    score: e.score,
                    rank: i + 1,
                })
                .collect(),
        }
    }
}

/// Descending by score, ties by entity id ascending.
pub(crate) fn sort_desc(items: &mut [(EntityId, f64)]) {
    items.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_duplicates() {
        let e = |id: &str| RankedEntry {
            id: id.into(),
            score: 0.0,
        };
        assert!(RankedList::new(vec![e("a"), e("b")]).is_ok());
        assert!(RankedList::new(vec![e("a"), e("a")]).is_err());
        assert!(serde_json::from_str::<RankedList>(r#"[{"id":"a","score":1},{"id":"a","score":0}]"#).is_err());
    }

    #[test]
    fn record_line_format() {
        let rec = RankedListRecord {
            query_index: 3,
            framework: Framework::Gen,
            list: RankedList::from_pairs([("b".into(), 0.5), ("a".into(), 0.25)]).unwrap(),
        };
        let json = serde_json::to_string(&rec).unwrap();
        assert_eq!(
            json,
            r#"{"query_index":3,"framework":"gen","entries":[{"id":"b","score":0.5,"rank":1},{"id":"a","score":0.25,"rank":2}]}"#
        );
        assert_eq!(serde_json::from_str::<RankedListRecord>(&json).unwrap(), rec);
        let bad = r#"{"query_index":0,"framework":"ret","entries":[{"id":"a","score":1,"rank":2}]}"#;
        assert!(serde_json::from_str::<RankedListRecord>(bad).is_err());
    }

    #[test]
    fn sort_breaks_ties_by_id() {
        let mut v = vec![("b".into(), 1.0), ("a".into(), 1.0), ("c".into(), 2.0)];
        sort_desc(&mut v);
        let ids: Vec<&str> = v.iter().map(|(id, _): &(EntityId, f64)| id.as_str()).collect();
        assert_eq!(ids, ["c", "a", "b"]);
    }
}
