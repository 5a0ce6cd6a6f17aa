//! Hashed character n-gram featurization.

use serde::{Deserialize, Serialize};

use crate::corpus::normalize_phrase;
use crate::error::{Error, Result};

/// Start/end markers wrapped around words shorter than `ngram_min`, so
/// short function words still produce n-grams and hash apart from the
/// substrings of longer words.
pub const WORD_START: char = '\u{2402}';
pub const WORD_END: char = '\u{2403}';

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeaturizerConfig {
    pub ngram_min: usize,
    pub ngram_max: usize,
    pub num_buckets: usize,
    pub hash_seed: u64,
}

impl Default for FeaturizerConfig {
    fn default() -> Self {
        FeaturizerConfig {
            ngram_min: 2,
            ngram_max: 4,
            num_buckets: 32_768,
            hash_seed: 0,
        }
    }
}

impl FeaturizerConfig {
    /// Boundary validation for configs arriving from files or flags.
    pub fn validate(&self) -> Result<()> {
        if !(1 <= self.ngram_min && self.ngram_min <= self.ngram_max && self.ngram_max <= 8) {
            return Err(Error::InvalidConfig(format!(
                "ngram range {}..={} must satisfy 1 <= min <= max <= 8",
                self.ngram_min, self.ngram_max
            )));
        }
        if self.num_buckets < 256 || !self.num_buckets.is_power_of_two() {
            return Err(Error::InvalidConfig(format!(
                "num_buckets {} must be a power of two >= 256",
                self.num_buckets
            )));
        }
        Ok(())
    }
}

/// Sparse unit vector: strictly increasing bucket indices with their
/// weights. All-zero (empty) only when the text yields no n-grams.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseVec {
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

impl SparseVec {
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Seeded FNV-1a. The bucket assignment is part of the model file contract,
/// so the hash is pinned here rather than borrowed from the std hasher.
#[inline]
fn hash_ngram(seed: u64, ngram: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for b in ngram.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Count character n-grams of the normalized text, hash them into buckets,
/// and L2-normalize the counts. Deterministic for a given config.
pub fn featurize(cfg: &FeaturizerConfig, text: &str) -> Result<SparseVec> {
    let normalized = normalize_phrase(text);
    if normalized.is_empty() {
        return Err(Error::EmptyText);
    }

    let mut counts: std::collections::HashMap<u32, f64> = std::collections::HashMap::new();
    let mut wrapped = String::new();
    for word in normalized.split(' ') {
        let chars: Vec<char> = if word.chars().count() < cfg.ngram_min {
            wrapped.clear();
            wrapped.push(WORD_START);
            wrapped.push_str(word);
            wrapped.push(WORD_END);
            wrapped.chars().collect()
        } else {
            word.chars().collect()
        };
        for n in cfg.ngram_min..=cfg.ngram_max {
            if chars.len() < n {
                break;
            }
            for window in chars.windows(n) {
                let gram: String = window.iter().collect();
                let bucket = (hash_ngram(cfg.hash_seed, &gram) % cfg.num_buckets as u64) as u32;
                *counts.entry(bucket).or_insert(0.0) += 1.0;
            }
        }
    }

    let mut entries: Vec<(u32, f64)> = counts.into_iter().collect();
    entries.sort_unstable_by_key(|(i, _)| *i);
    let norm = entries.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
    let (indices, values) = entries
        .into_iter()
        .map(|(i, v)| (i, if norm > 0.0 { v / norm } else { v }))
        .unzip();
    Ok(SparseVec { indices, values })
}
