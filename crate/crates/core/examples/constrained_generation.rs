//! Generation-based expansion: a token trie over entity names keeps beam
//! search inside the candidate vocabulary, and each round prompts the model
//! with a few seeds to pull in new entities.

use ultraese::classgen::Query;
use ultraese::corpus::EntityId;
use ultraese::genexpan::{
    constrained_beam_search, generation_prompt, run_genexpan, CotMode, EntityTrie, GenExpanConfig,
};
use ultraese::providers::{StubLm, Tokenizer};
use ultraese::synthetic::{planted_corpus, PlantedConfig};

fn main() -> ultraese::Result<()> {
    let tok = Tokenizer::character();
    let names = [("a", "cat"), ("b", "car"), ("c", "cart"), ("d", "dog")];
    let ids: Vec<EntityId> = names.iter().map(|(id, _)| EntityId(id.to_string())).collect();
    let trie = EntityTrie::build(ids.iter().zip(names.iter().map(|(_, n)| *n)), &tok)?;
    println!("allowed after \"ca\": {:?}", trie.allowed_next(&tok.tokenize("ca"))?);

    // a random LM still only ever produces names from the trie
    let lm = StubLm::random(3, tok.clone());
    for (id, logprob) in constrained_beam_search(&lm, "Pets: ", &trie, 3, 10)? {
        println!("  {id} {logprob:.3}");
    }

    let cfg = PlantedConfig {
        classes: 2,
        per_class: 30,
        ..Default::default()
    };
    let corpus = planted_corpus(&cfg)?;
    let tok = Tokenizer::whitespace();
    let trie = EntityTrie::from_corpus(&corpus, &tok)?;
    let texts = corpus.sentences().iter().map(|s| s.text.as_str());
    let lm = StubLm::ngram(tok, 3, texts)
        .with_default_reply("Class: phones | Attr: os=android | Neg: origin=europe");
    let query = Query {
        pos_seeds: ["e0000", "e0001", "e0002"].map(|s| EntityId(s.into())).to_vec(),
        neg_seeds: ["e0003", "e0004"].map(|s| EntityId(s.into())).to_vec(),
    };
    println!("{}", generation_prompt(&["Phone000", "Phone001", "Phone002"], None));
    let run = run_genexpan(
        &corpus,
        &query,
        &lm,
        &trie,
        &GenExpanConfig {
            k: 10,
            rounds: Some(3),
            cot: Some(CotMode::ClassPosNeg),
            ..Default::default()
        },
    )?;
    if let Some(cot) = &run.cot {
        println!("cot preamble: {}", cot.parsed.preamble());
    }
    let name = |id: &EntityId| corpus.entity(id).map_or("?", |e| e.name.as_str());
    for r in &run.rounds {
        let added: Vec<&str> = r.appended.iter().map(name).collect();
        println!("round {}: {}", r.round, added.join(", "));
    }
    // the n-gram stub scores every PhoneNNN alike, so ties fall back to id order
    for e in run.list.entries() {
        println!("  {} {:.4}", name(&e.id), e.score);
    }
    Ok(())
}
