//! Embedding cache file.
//!
//! JSON lines, UTF-8, `\n` terminated:
//!
//! ```text
//! {"dim":64,"count":2}
//! {"id":"e1","count_averaged":3,"values":[0.5,-1.25,...]}
//! {"id":"e2","count_averaged":1,"values":[...]}
//! ```
//!
//! Records are sorted by entity id and numbers use the shortest decimal form
//! that round-trips, so identical stores produce identical bytes.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{EmbeddingStore, EmbeddingVector};
use crate::corpus::EntityId;
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct Header {
    dim: usize,
    count: usize,
}

#[derive(Serialize, Deserialize)]
struct Record {
    id: EntityId,
    count_averaged: usize,
    values: Vec<f64>,
}

pub fn write_cache(store: &EmbeddingStore, mut out: impl Write) -> std::io::Result<()> {
    let header = Header {
        dim: store.dim(),
        count: store.len(),
    };
    writeln!(out, "{}", serde_json::to_string(&header)?)?;
    for (id, v, n) in store.iter() {
        let record = Record {
            id: id.clone(),
            count_averaged: n,
            values: v.0.clone(),
        };
        writeln!(out, "{}", serde_json::to_string(&record)?)?;
    }
    Ok(())
}

pub fn read_cache(input: impl BufRead) -> Result<EmbeddingStore> {
    let mut lines = input.lines().enumerate();
    let bad = |line: usize, msg: String| Error::invalid(format!("embedding cache line {line}: {msg}"));
    let (_, first) = lines
        .next()
        .ok_or_else(|| Error::invalid("embedding cache is empty"))?;
    let first = first.map_err(|e| Error::io("<embedding cache>", e))?;
    let header: Header = serde_json::from_str(&first).map_err(|e| bad(1, e.to_string()))?;

    let mut store = EmbeddingStore::new(header.dim);
    for (i, line) in lines {
        let line = line.map_err(|e| Error::io("<embedding cache>", e))?;
        if line.is_empty() {
            continue;
        }
        let r: Record = serde_json::from_str(&line).map_err(|e| bad(i + 1, e.to_string()))?;
        let v = EmbeddingVector::new(r.values).map_err(|e| bad(i + 1, e.to_string()))?;
        store
            .insert(r.id, v, r.count_averaged)
            .map_err(|e| bad(i + 1, e.to_string()))?;
    }
    if store.len() != header.count {
        return Err(Error::invalid(format!(
            "embedding cache header says {} records, found {}",
            header.count,
            store.len()
        )));
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_exact_and_byte_stable(
            rows in prop::collection::btree_map("[a-z]{1,6}", (prop::collection::vec(-1e6f64..1e6, 3), 1usize..50), 0..20)
        ) {
            let mut store = EmbeddingStore::new(3);
            for (id, (values, n)) in &rows {
                store.insert(id.as_str().into(), EmbeddingVector(values.clone()), *n).unwrap();
            }
            let mut bytes = Vec::new();
            write_cache(&store, &mut bytes).unwrap();
            let back = read_cache(bytes.as_slice()).unwrap();
            prop_assert_eq!(&back, &store);
            let mut again = Vec::new();
            write_cache(&back, &mut again).unwrap();
            prop_assert_eq!(bytes, again);
        }
    }

    #[test]
    fn count_mismatch_rejected() {
        let text = "{\"dim\":1,\"count\":2}\n{\"id\":\"a\",\"count_averaged\":1,\"values\":[1.0]}\n";
        assert!(read_cache(text.as_bytes()).is_err());
    }

    #[test]
    fn exact_layout() {
        let mut store = EmbeddingStore::new(2);
        store
            .insert("b".into(), EmbeddingVector(vec![0.5, -1.0]), 2)
            .unwrap();
        store
            .insert("a".into(), EmbeddingVector(vec![0.1, 3.0]), 1)
            .unwrap();
        let mut bytes = Vec::new();
        write_cache(&store, &mut bytes).unwrap();
        assert_eq!(
            String::from_utf8(bytes).unwrap(),
            "{\"dim\":2,\"count\":2}\n\
             {\"id\":\"a\",\"count_averaged\":1,\"values\":[0.1,3.0]}\n\
             {\"id\":\"b\",\"count_averaged\":2,\"values\":[0.5,-1.0]}\n"
        );
    }
}
