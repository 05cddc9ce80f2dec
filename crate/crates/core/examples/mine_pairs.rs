//! Mine contrastive pairs for refining the entity encoder, and evaluate the
//! two training objectives on toy inputs.

use ultraese::classgen::generate_ultra_classes;
use ultraese::embed::{infonce_loss_and_grad, masked_entity_loss, EmbedConfig, EmbeddingStore, EmbeddingVector};
use ultraese::retexpan::{expand, mine_contrastive_pairs, select_similar_lists, EmbeddingRanker, PairMiningConfig};
use ultraese::synthetic::{planted_corpus, planted_embedder, PlantedConfig};

fn main() -> ultraese::Result<()> {
    let cfg = PlantedConfig::default();
    let corpus = planted_corpus(&cfg)?;
    let store = EmbeddingStore::build(&corpus, &planted_embedder(&cfg)?, &EmbedConfig::default())?;
    let class = &generate_ultra_classes(&corpus, "watchs", 1, 1, 6, 1)?[0];
    let query = &class.queries[0];

    let l0 = expand(&store, &corpus, query, 100)?;
    let ranker = EmbeddingRanker::new(&store, &corpus);
    let (l_pos, l_neg) = select_similar_lists(&l0, query, 10, &ranker, &corpus)?;
    let pool: Vec<_> = corpus.fine_class("phones")?.iter().take(5).cloned().collect();
    let pairs = mine_contrastive_pairs(&l0, &l_pos, &l_neg, &pool, &corpus, query, &PairMiningConfig::default())?;
    println!("class {}", class.describe());
    println!(
        "{} positive pairs, {} negative pairs, {} entities with samples",
        pairs.positives.len(),
        pairs.negatives.len(),
        pairs.samples.len()
    );
    if let Some(s) = pairs.samples.values().next().and_then(|v| v.first()) {
        println!("sample: {}", s.text);
    }

    let batch = vec![(vec![0.7, 0.2, 0.1], 0), (vec![0.1, 0.1, 0.8], 2)];
    println!("masked entity loss eta=0.1: {:.4}", masked_entity_loss(&batch, 0.1)?);
    let a = EmbeddingVector::new(vec![1.0, 0.2, 0.0])?;
    let p = EmbeddingVector::new(vec![0.9, 0.3, 0.1])?;
    let n = vec![EmbeddingVector::new(vec![-0.2, 1.0, 0.0])?];
    let (loss, grad) = infonce_loss_and_grad(&a, &p, &n, 0.5)?;
    println!("infonce tau=0.5: {loss:.4}, grad {grad:.3?}");
    Ok(())
}
