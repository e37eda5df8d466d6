use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Dense token ids with `PAD = 0` and `UNK = 1` reserved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Assigns ids by descending frequency, then lexical order. Tokens seen
    /// fewer than `min_count` times are folded into `UNK`.
    pub fn from_counts(counts: &BTreeMap<String, u64>, min_count: u64) -> Self {
        let mut kept: Vec<(&String, u64)> = counts
            .iter()
            .filter(|(_, &c)| c >= min_count)
            .map(|(t, &c)| (t, c))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let unk_count = counts.values().filter(|&&c| c < min_count).sum();

        let mut vocab = Self::reserved_only();
        vocab.counts[UNK_ID] = unk_count;
        for (token, count) in kept {
            vocab.push(token.clone(), count);
        }
        vocab
    }

    fn reserved_only() -> Self {
        let mut v = Vocabulary {
            tokens: Vec::new(),
            counts: Vec::new(),
            index: HashMap::new(),
        };
        v.push(PAD_TOKEN.to_string(), 0);
        v.push(UNK_TOKEN.to_string(), 0);
        v
    }

    fn push(&mut self, token: String, count: u64) {
        self.index.insert(token.clone(), self.tokens.len());
        self.tokens.push(token);
        self.counts.push(count);
    }

    /// Rebuilds a vocabulary from `(token, count)` pairs listed in id order,
    /// starting with the two reserved entries.
    pub fn from_entries(entries: Vec<(String, u64)>) -> Result<Self> {
        if entries.len() < 2 || entries[PAD_ID].0 != PAD_TOKEN || entries[UNK_ID].0 != UNK_TOKEN {
            return Err(Error::format("vocabulary must start with <pad> and <unk>"));
        }
        let mut v = Vocabulary {
            tokens: Vec::new(),
            counts: Vec::new(),
            index: HashMap::new(),
        };
        for (token, count) in entries {
            if v.index.contains_key(&token) {
                return Err(Error::format(format!("duplicate vocabulary token '{token}'")));
            }
            v.push(token, count);
        }
        Ok(v)
    }

    /// Id of `token`, or `UNK` when unknown.
    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn lookup(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn count(&self, id: usize) -> u64 {
        self.counts.get(id).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn is_reserved(id: usize) -> bool {
        id == PAD_ID || id == UNK_ID
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, &str, u64)> {
        self.tokens
            .iter()
            .zip(&self.counts)
            .enumerate()
            .map(|(i, (t, &c))| (i, t.as_str(), c))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(pairs: &[(&str, u64)]) -> BTreeMap<String, u64> {
        pairs.iter().map(|(t, c)| (t.to_string(), *c)).collect()
    }

    #[test]
    fn every_token_gets_an_id_at_min_count_one() {
        let v = Vocabulary::from_counts(&counts(&[("fries", 3), ("coke", 1), ("pie", 2)]), 1);
        assert_eq!(v.len(), 5);
        assert_eq!(v.id("fries"), 2);
        assert_eq!(v.id("pie"), 3);
        assert_eq!(v.id("coke"), 4);
    }

    #[test]
    fn rare_tokens_resolve_to_unk() {
        let v = Vocabulary::from_counts(&counts(&[("fries", 3), ("coke", 1)]), 2);
        assert_eq!(v.id("coke"), UNK_ID);
        assert_eq!(v.id("never-seen"), UNK_ID);
        assert_eq!(v.count(UNK_ID), 1);
    }

    #[test]
    fn ties_break_lexically() {
        let v = Vocabulary::from_counts(&counts(&[("b", 2), ("a", 2), ("c", 2)]), 1);
        assert_eq!((v.id("a"), v.id("b"), v.id("c")), (2, 3, 4));
    }

    #[test]
    fn id_token_round_trip() {
        let v = Vocabulary::from_counts(&counts(&[("x", 5), ("y", 4), ("z", 9)]), 1);
        for (id, token, _) in v.entries() {
            if id != UNK_ID {
                assert_eq!(v.id(token), id);
            }
        }
    }
}
