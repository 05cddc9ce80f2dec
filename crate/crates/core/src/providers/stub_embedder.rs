use std::collections::BTreeMap;

use super::hashing::fnv1a;
use super::{Embedder, ProviderError};

/// Deterministic stand-in for a masked-language-model encoder.
///
/// A text is embedded by hashing its lowercase context words and word bigrams
/// into signed coordinates (the mask token itself is skipped). Words closer
/// to the mask weigh more. Planted tokens additionally add a fixed offset to
/// a dedicated coordinate block, so fixtures can encode attribute structure
/// that survives averaging.
#[derive(Debug, Clone)]
pub struct StubEmbedder {
    dim: usize,
    seed: u64,
    mask_token: String,
    planted: BTreeMap<String, usize>,
    block_width: usize,
    planted_strength: f64,
}

impl StubEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self {
            dim,
            seed,
            mask_token: "[MASK]".into(),
            planted: BTreeMap::new(),
            block_width: 4,
            planted_strength: 3.0,
        }
    }

    pub fn with_mask_token(mut self, mask: impl Into<String>) -> Self {
        self.mask_token = mask.into();
        self
    }

    /// Makes occurrences of `token` shift coordinate block `block`.
    ///
    /// Panics if the block does not fit in the vector.
    pub fn plant(mut self, token: impl Into<String>, block: usize) -> Self {
        assert!(
            (block + 1) * self.block_width <= self.dim,
            "block {block} does not fit in dim {}",
            self.dim
        );
        self.planted.insert(token.into().to_lowercase(), block);
        self
    }

    pub fn with_blocks(mut self, width: usize, strength: f64) -> Self {
        assert!(width > 0);
        self.block_width = width;
        self.planted_strength = strength;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn embed_one(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        let (before, after) = match text.find(&self.mask_token) {
            Some(pos) => (&text[..pos], &text[pos + self.mask_token.len()..]),
            None => (text, ""),
        };
        let words = |s: &str| -> Vec<String> {
            s.split(|c: char| !c.is_alphanumeric())
                .filter(|w| !w.is_empty())
                .map(str::to_lowercase)
                .collect()
        };
        let left = words(before);
        let right = words(after);
        // (word, distance to mask)
        let context = left
            .iter()
            .rev()
            .enumerate()
            .chain(right.iter().enumerate())
            .map(|(d, w)| (w.as_str(), d + 1));

        for (word, dist) in context {
            let weight = 1.0 / (dist as f64).sqrt();
            self.add_feature(&mut v, word.as_bytes(), weight);
            if let Some(&block) = self.planted.get(word) {
                let start = block * self.block_width;
                for x in &mut v[start..start + self.block_width] {
                    *x += self.planted_strength;
                }
            }
        }
        for side in [&left, &right] {
            for pair in side.windows(2) {
                let bigram = format!("{} {}", pair[0], pair[1]);
                self.add_feature(&mut v, bigram.as_bytes(), 0.5);
            }
        }
        // bias term keeps context-free texts off the origin
        self.add_feature(&mut v, b"\0bias", 0.25);
        v
    }

    fn add_feature(&self, v: &mut [f64], key: &[u8], weight: f64) {
        let h = fnv1a(self.seed, key);
        let idx = (h % self.dim as u64) as usize;
        let sign = if (h >> 63) == 0 { 1.0 } else { -1.0 };
        v[idx] += sign * weight;
    }
}

impl Embedder for StubEmbedder {
    fn mask_token(&self) -> &str {
        &self.mask_token
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::cosine;

    #[test]
    fn deterministic_and_sized() {
        let e = StubEmbedder::new(64, 7);
        let texts = vec!["[MASK] runs android".to_string()];
        let a = e.embed(&texts).unwrap();
        let b = e.embed(&texts).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0].len(), 64);
        assert!(a[0].iter().all(|x| x.is_finite()));
    }

    #[test]
    fn seed_changes_output() {
        let t = vec!["[MASK] runs android".to_string()];
        let a = StubEmbedder::new(64, 1).embed(&t).unwrap();
        let b = StubEmbedder::new(64, 2).embed(&t).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn planted_tokens_cluster() {
        let e = StubEmbedder::new(64, 3).plant("android", 0).plant("ios", 1);
        let fillers = ["small", "old", "famous", "cheap", "blue", "quiet", "fast", "new"];
        let mut same = Vec::new();
        let mut cross = Vec::new();
        for (i, a) in fillers.iter().enumerate() {
            for b in fillers.iter().skip(i + 1) {
                let v = e
                    .embed(&[
                        format!("the {a} [MASK] runs android"),
                        format!("a {b} [MASK] runs android"),
                        format!("a {b} [MASK] runs ios"),
                    ])
                    .unwrap();
                same.push(cosine(&v[0], &v[1]).unwrap());
                cross.push(cosine(&v[0], &v[2]).unwrap());
            }
        }
        let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
        assert!(mean(&same) > mean(&cross), "{} vs {}", mean(&same), mean(&cross));
        for (s, c) in same.iter().zip(&cross) {
            assert!(s > c);
        }
    }
}
