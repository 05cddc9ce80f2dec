//! Rank metrics on hand-built lists: P@K, AP@K under each normalizer, and
//! the combined score that rewards finding positives and avoiding negatives.

use std::collections::BTreeSet;

use ultraese::corpus::EntityId;
use ultraese::eval::{ap_at_k_with, comb, precision_at_k, ApNormalizer};

fn ids(xs: &[&str]) -> Vec<EntityId> {
    xs.iter().map(|x| EntityId(x.to_string())).collect()
}

fn main() -> ultraese::Result<()> {
    let list = ids(&["a", "x", "b", "y", "c"]);
    let truth: BTreeSet<EntityId> = ids(&["a", "b", "c", "d"]).into_iter().collect();
    for k in [1, 3, 5] {
        print!("k={k} P={:.3}", precision_at_k(&list, &truth, k)?);
        for norm in [ApNormalizer::MinKG, ApNormalizer::GroundTruth, ApNormalizer::Hits] {
            print!("  AP[{norm:?}]={:.3}", ap_at_k_with(&list, &truth, k, norm)?);
        }
        println!();
    }
    println!("comb(66.34, 25.53) = {:.2}", comb(66.34, 25.53)?);
    Ok(())
}
