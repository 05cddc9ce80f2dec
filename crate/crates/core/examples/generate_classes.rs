//! Derive ultra-fine-grained classes (fine class plus attribute constraints)
//! and their seed queries from an attribute-annotated corpus.

use ultraese::classgen::{generate_ultra_classes, DEFAULT_N_THRED};
use ultraese::synthetic::{planted_corpus, PlantedConfig};

fn main() -> ultraese::Result<()> {
    let corpus = planted_corpus(&PlantedConfig::default())?;
    let classes = generate_ultra_classes(&corpus, "phones", 1, 1, DEFAULT_N_THRED, 7)?;
    println!("{} ultra classes under `phones`", classes.len());
    for class in &classes {
        println!(
            "{:<50} |P|={:<3} |N|={:<3}",
            class.describe(),
            class.positives.len(),
            class.negatives.len()
        );
    }

    let class = &classes[0];
    class.verify(&corpus)?;
    for (i, q) in class.queries.iter().enumerate() {
        let names = |ids: &[ultraese::corpus::EntityId]| {
            ids.iter()
                .map(|id| corpus.entity(id).map(|e| e.name.as_str()).unwrap_or("?"))
                .collect::<Vec<_>>()
                .join(", ")
        };
        println!("query {i}: +[{}] -[{}]", names(&q.pos_seeds), names(&q.neg_seeds));
    }
    Ok(())
}
