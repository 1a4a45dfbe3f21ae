//! Hashed word n-gram features.

use serde::{Deserialize, Serialize};

use crate::text::tokenize;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
const SEPARATOR: u8 = 0x1f;

fn fnv1a(bytes: impl IntoIterator<Item = u8>, mut h: u64) -> u64 {
    for b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

// splitmix64 finalizer so the low bits used by the bucket mask are well mixed
fn finalize(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stable 64-bit hash of a token n-gram.
pub fn ngram_hash<S: AsRef<str>>(tokens: &[S]) -> u64 {
    let mut h = FNV_OFFSET;
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            h = fnv1a([SEPARATOR], h);
        }
        h = fnv1a(t.as_ref().bytes(), h);
    }
    finalize(h)
}

/// Multiset of hashed n-gram ids in `[0, buckets)`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FeatureVector {
    pub ids: Vec<u32>,
}

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// N-gram orders and bucket count used to featurize text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub orders: Vec<u8>,
    pub buckets: usize,
}

impl FeatureSpec {
    pub fn new(mut orders: Vec<u8>, buckets: usize) -> crate::Result<Self> {
        orders.sort_unstable();
        orders.dedup();
        if orders.is_empty() || orders.iter().any(|o| !(1..=3).contains(o)) {
            return Err(crate::Error::invalid(format!("n-gram orders {orders:?} must be a non-empty subset of {{1,2,3}}")));
        }
        if !buckets.is_power_of_two() || buckets > u32::MAX as usize {
            return Err(crate::Error::invalid(format!("bucket count {buckets} must be a power of two")));
        }
        Ok(FeatureSpec { orders, buckets })
    }

    pub fn bucket_of<S: AsRef<str>>(&self, ngram: &[S]) -> u32 {
        (ngram_hash(ngram) & (self.buckets as u64 - 1)) as u32
    }

    pub fn featurize_tokens<S: AsRef<str>>(&self, tokens: &[S]) -> FeatureVector {
        let mut ids = Vec::new();
        for &n in &self.orders {
            let n = n as usize;
            if tokens.len() < n {
                continue;
            }
            for w in tokens.windows(n) {
                ids.push(self.bucket_of(w));
            }
        }
        FeatureVector { ids }
    }

    pub fn featurize(&self, text: &str) -> FeatureVector {
        self.featurize_tokens(&tokenize(text))
    }

    /// Every n-gram string with its bucket, in the same order as
    /// [`featurize_tokens`](Self::featurize_tokens).
    pub fn ngrams<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<(String, u32)> {
        let mut out = Vec::new();
        for &n in &self.orders {
            let n = n as usize;
            if tokens.len() < n {
                continue;
            }
            for w in tokens.windows(n) {
                let s = w.iter().map(AsRef::as_ref).collect::<Vec<_>>().join(" ");
                out.push((s, self.bucket_of(w)));
            }
        }
        out
    }
}

/// Featurize `text` with the given orders and bucket count.
pub fn featurize(text: &str, orders: &[u8], buckets: usize) -> crate::Result<FeatureVector> {
    Ok(FeatureSpec::new(orders.to_vec(), buckets)?.featurize(text))
}
