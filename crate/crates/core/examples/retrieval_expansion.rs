//! Retrieval-based expansion on the planted corpus: embed every entity,
//! rank by similarity to the positive seeds, push entities resembling the
//! negative seeds down within each segment, and score the result.

use ultraese::classgen::generate_ultra_classes;
use ultraese::embed::{EmbedConfig, EmbeddingStore};
use ultraese::eval::{evaluate, flatten_queries, render_table, EvalConfig};
use ultraese::ranking::{Framework, RankedListRecord};
use ultraese::retexpan::{run_retexpan, RetExpanConfig};
use ultraese::synthetic::{planted_corpus, planted_embedder, PlantedConfig};

fn main() -> ultraese::Result<()> {
    let cfg = PlantedConfig::default();
    let corpus = planted_corpus(&cfg)?;
    let store = EmbeddingStore::build(&corpus, &planted_embedder(&cfg)?, &EmbedConfig::default())?;

    let mut dataset = Vec::new();
    for name in corpus.fine_classes().keys() {
        dataset.extend(generate_ultra_classes(&corpus, name, 1, 1, 6, 7)?);
    }
    let queries = flatten_queries(&dataset);

    let mut reports = Vec::new();
    for (label, rerank) in [("no re-rank", false), ("re-rank l=30", true)] {
        let config = RetExpanConfig {
            k: 100,
            segment_len: 30,
            rerank,
        };
        let records = queries
            .iter()
            .enumerate()
            .map(|(i, (_, q))| {
                Ok(RankedListRecord {
                    query_index: i,
                    framework: Framework::Ret,
                    list: run_retexpan(&corpus, &store, q, &config)?,
                })
            })
            .collect::<ultraese::Result<Vec<_>>>()?;
        reports.push(evaluate(label, &records, &dataset, &EvalConfig::default())?);
    }
    print!("{}", render_table(&reports));
    Ok(())
}
