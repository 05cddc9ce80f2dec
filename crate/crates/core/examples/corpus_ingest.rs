//! Build a corpus in memory, write it as JSONL, load it back and look at
//! what validation reports for a broken file.

use ultraese::corpus::{load_corpus, Corpus, Entity, EntityId, FineClass, Mention, Sentence, SentenceId};

fn entity(id: &str, name: &str, os: &str) -> Entity {
    Entity {
        id: EntityId(id.into()),
        name: name.into(),
        attrs: [("os".to_string(), os.to_string())].into(),
    }
}

fn sentence(id: &str, text: &str, e: &Entity) -> Sentence {
    let start = text.find(&e.name).expect("name in text");
    Sentence {
        id: SentenceId(id.into()),
        text: text.into(),
        mentions: vec![Mention {
            entity_id: e.id.clone(),
            start,
            end: start + e.name.len(),
            surface: e.name.clone(),
        }],
    }
}

fn main() -> ultraese::Result<()> {
    let entities = vec![
        entity("e1", "Pixel 8", "android"),
        entity("e2", "Mate 60", "harmony"),
        entity("e3", "Galaxy S24", "android"),
    ];
    let sentences = vec![
        sentence("s1", "The Pixel 8 ships with Android 14.", &entities[0]),
        sentence("s2", "Huawei launched the Mate 60 in August.", &entities[1]),
        sentence("s3", "Reviewers liked the Galaxy S24 camera.", &entities[2]),
    ];
    let classes = vec![FineClass {
        name: "phones".into(),
        entity_ids: entities.iter().map(|e| e.id.clone()).collect(),
    }];
    let corpus = Corpus::from_parts(entities, sentences, classes)?;

    let dir = tempfile::tempdir().expect("tempdir");
    let (e, s, c) = (
        dir.path().join("entities.jsonl"),
        dir.path().join("sentences.jsonl"),
        dir.path().join("fine_classes.jsonl"),
    );
    corpus.save(&e, &s, &c)?;
    let loaded = load_corpus(&e, &s, &c)?;
    assert_eq!(loaded, corpus);
    println!("stats: {:?}", loaded.stats());

    // a mention pointing at an unknown entity, plus a line that is not JSON
    let mut text = std::fs::read_to_string(&s).expect("read");
    text = text.replacen("\"e1\"", "\"e9\"", 1);
    text.push_str("{not json\n");
    std::fs::write(&s, text).expect("write");
    match load_corpus(&e, &s, &c) {
        Ok(_) => println!("unexpectedly valid"),
        Err(err) => println!("rejected:\n{err}"),
    }
    Ok(())
}
