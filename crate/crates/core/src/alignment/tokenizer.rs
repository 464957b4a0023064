use std::collections::{BTreeSet, HashMap};

use crate::curation::normalize_caption;

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
const FIRST_BUCKET: u32 = 3;

/// Whitespace tokenizer with a closed vocabulary; unknown words fall into
/// FNV-1a hash buckets so any caption still maps to valid ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Tokenizer {
    words: Vec<String>,
    index: HashMap<String, u32>,
    max_len: usize,
    hash_buckets: u32,
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl Tokenizer {
    pub fn new(words: Vec<String>, max_len: usize, hash_buckets: u32) -> Self {
        assert!(max_len >= 1, "max_len must leave room for EOS");
        let base = FIRST_BUCKET + hash_buckets;
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), base + i as u32)).collect();
        Self { words, index, max_len, hash_buckets }
    }

    /// Vocabulary = sorted distinct normalized words of `captions`.
    pub fn from_corpus<'a>(captions: impl IntoIterator<Item = &'a str>, max_len: usize, hash_buckets: u32) -> Self {
        let set: BTreeSet<String> = captions.into_iter().flat_map(normalize_caption).collect();
        Self::new(set.into_iter().collect(), max_len, hash_buckets)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn hash_buckets(&self) -> u32 {
        self.hash_buckets
    }

    pub fn vocab_size(&self) -> usize {
        (FIRST_BUCKET + self.hash_buckets) as usize + self.words.len()
    }

    pub fn token_id(&self, word: &str) -> u32 {
        match self.index.get(word) {
            Some(&id) => id,
            None if self.hash_buckets == 0 => PAD,
            None => FIRST_BUCKET + (fnv1a(word) % self.hash_buckets as u64) as u32,
        }
    }

    /// Fixed-length ids: at most `max_len - 1` words, then EOS, then PAD.
    pub fn tokenize(&self, caption: &str) -> Vec<u32> {
        let mut ids: Vec<u32> =
            normalize_caption(caption).iter().take(self.max_len - 1).map(|w| self.token_id(w)).collect();
        ids.push(EOS);
        ids.resize(self.max_len, PAD);
        ids
    }
}

/// Position of the EOS token in a tokenized sequence.
pub fn eos_position(ids: &[u32]) -> usize {
    ids.iter().position(|&t| t == EOS).unwrap_or(ids.len() - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tok() -> Tokenizer {
        Tokenizer::from_corpus(["red fox", "a blue cat"], 16, 8)
    }

    #[test]
    fn empty_caption() {
        let t = tok();
        let ids = t.tokenize("");
        assert_eq!(ids[0], EOS);
        assert!(ids[1..].iter().all(|&i| i == PAD));
        assert_eq!(eos_position(&ids), 0);
    }

    #[test]
    fn known_words() {
        let t = tok();
        let ids = t.tokenize("Red fox");
        assert_eq!(&ids[..3], &[t.token_id("red"), t.token_id("fox"), EOS]);
        assert!(t.token_id("red") >= 3 + 8);
    }

    #[test]
    fn truncation_keeps_eos() {
        let t = tok();
        let long = vec!["fox"; 100].join(" ");
        let ids = t.tokenize(&long);
        assert_eq!(ids.len(), 16);
        assert_eq!(ids[15], EOS);
        assert!(ids[..15].iter().all(|&i| i == t.token_id("fox")));
    }

    #[test]
    fn unknown_words_hash_deterministically() {
        let t = tok();
        let a = t.token_id("zebra");
        assert_eq!(a, t.token_id("zebra"));
        assert!((3..11).contains(&a));
    }
}
