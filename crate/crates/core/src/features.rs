//! Text normalization and hashed bag-of-n-grams features.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FNV64_OFFSET_BASIS: u64 = 0xcbf2_9ce4_8422_2325;
pub const FNV64_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Byte placed between tokens of an n-gram before hashing (ASCII unit separator).
pub const TOKEN_SEPARATOR: u8 = 0x1F;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureConfig {
    /// Largest n-gram order; every order from 1 up to it is extracted.
    pub ngram_order: u32,
    /// Number of hash buckets.
    pub buckets: u64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            ngram_order: 2,
            buckets: 1 << 20,
        }
    }
}

impl FeatureConfig {
    pub fn new(ngram_order: u32, buckets: u64) -> Result<Self> {
        let cfg = FeatureConfig { ngram_order, buckets };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.ngram_order < 1 {
            return Err(Error::invalid("ngram_order must be >= 1"));
        }
        if self.buckets < 2 {
            return Err(Error::invalid("buckets must be >= 2"));
        }
        if usize::try_from(self.buckets).is_err() {
            return Err(Error::invalid("buckets does not fit in memory"));
        }
        Ok(())
    }
}

/// Sparse bucket counts, iterated in ascending bucket order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FeatureVector {
    entries: BTreeMap<usize, u32>,
}

impl FeatureVector {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of distinct buckets.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, bucket: usize) -> u32 {
        self.entries.get(&bucket).copied().unwrap_or(0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, u32)> + '_ {
        self.entries.iter().map(|(&k, &v)| (k, v))
    }

    /// Sum of all counts, i.e. the number of n-grams extracted.
    pub fn total_count(&self) -> u64 {
        self.entries.values().map(|&c| u64::from(c)).sum()
    }

    pub fn add(&mut self, bucket: usize, count: u32) {
        if count > 0 {
            *self.entries.entry(bucket).or_insert(0) += count;
        }
    }
}

impl FromIterator<(usize, u32)> for FeatureVector {
    fn from_iter<T: IntoIterator<Item = (usize, u32)>>(iter: T) -> Self {
        let mut v = FeatureVector::default();
        for (b, c) in iter {
            v.add(b, c);
        }
        v
    }
}

/// Lowercases, turns every non-alphanumeric character into a space and
/// splits on whitespace.
///
/// Lowercasing is per character (no context-sensitive rules such as a
/// word-final sigma) so the result is the same in any implementation that
/// applies the Unicode simple+special lowercase mappings character by
/// character.
pub fn normalize(text: &str) -> Vec<String> {
    let mut cleaned = String::with_capacity(text.len());
    for c in text.chars().flat_map(char::to_lowercase) {
        cleaned.push(if c.is_alphanumeric() { c } else { ' ' });
    }
    cleaned.split_whitespace().map(str::to_owned).collect()
}

#[inline]
fn fnv1a_update(mut hash: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(FNV64_PRIME);
    }
    hash
}

/// 64-bit FNV-1a of a byte string.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    fnv1a_update(FNV64_OFFSET_BASIS, bytes)
}

/// FNV-1a 64 of the tokens joined by [`TOKEN_SEPARATOR`].
///
/// # Panics
///
/// Panics on an empty token list.
pub fn hash_ngram<S: AsRef<str>>(tokens: &[S]) -> u64 {
    assert!(!tokens.is_empty(), "hash_ngram needs at least one token");
    let mut hash = fnv1a_update(FNV64_OFFSET_BASIS, tokens[0].as_ref().as_bytes());
    for tok in &tokens[1..] {
        hash = fnv1a_update(hash, &[TOKEN_SEPARATOR]);
        hash = fnv1a_update(hash, tok.as_ref().as_bytes());
    }
    hash
}

pub fn bucket_of(hash: u64, buckets: u64) -> usize {
    (hash % buckets) as usize
}

/// Counts every n-gram of order `1..=cfg.ngram_order` into its hash bucket.
pub fn extract_features<S: AsRef<str>>(tokens: &[S], cfg: &FeatureConfig) -> FeatureVector {
    let mut features = FeatureVector::default();
    let max_n = cfg.ngram_order as usize;
    for n in 1..=max_n.min(tokens.len()) {
        for window in tokens.windows(n) {
            features.add(bucket_of(hash_ngram(window), cfg.buckets), 1);
        }
    }
    features
}

/// `extract_features(normalize(text))`.
pub fn featurize(text: &str, cfg: &FeatureConfig) -> FeatureVector {
    extract_features(&normalize(text), cfg)
}
