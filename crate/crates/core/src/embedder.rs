//! Fixed-width encoding of the reflection state `[current, remaining]`.
//!
//! The canonical text form is `CUR:<text>|REM:<text>@<n>;<text>@<n>` and the
//! vector is a signed feature-hashing encoder over token n-grams (n = 1..=3),
//! L2-normalised to unit length.

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::reflection::{AtomicCommand, CommandSet};
use crate::{Error, Result};

pub const EMBEDDING_DIM: usize = 1536;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
const BUCKET_SEED: u64 = 0x5bd1_e995;
const SIGN_SEED: u64 = 0x1b87_3593;

/// A unit-norm state vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateEmbedding(Vec<f64>);

impl StateEmbedding {
    /// Wraps raw values; the length must be [`EMBEDDING_DIM`].
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.len() != EMBEDDING_DIM {
            return Err(Error::Domain(format!(
                "embedding has {} values, expected {EMBEDDING_DIM}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedding value".into()));
        }
        Ok(StateEmbedding(values))
    }

    /// Basis vector e0, used when the hash output is all zeros.
    pub fn sentinel() -> Self {
        let mut v = vec![0.0; EMBEDDING_DIM];
        v[0] = 1.0;
        StateEmbedding(v)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn cosine(&self, other: &StateEmbedding) -> f64 {
        let dot: f64 = self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum();
        dot / (self.norm() * other.norm())
    }
}

/// Canonical text of the reflection state, remaining commands in ledger order.
pub fn serialize_reflection_state(current: Option<&str>, remaining: &[(&str, u32)]) -> String {
    let rem = remaining
        .iter()
        .map(|(text, attempts)| format!("{text}@{attempts}"))
        .collect::<Vec<_>>()
        .join(";");
    format!("CUR:{}|REM:{rem}", current.unwrap_or(""))
}

/// Convenience wrapper over the ledger types.
pub fn serialize_ledger(current: Option<&AtomicCommand>, remaining: &CommandSet) -> String {
    let rem: Vec<(&str, u32)> = remaining
        .iter()
        .map(|c| (c.text.as_str(), c.attempts))
        .collect();
    serialize_reflection_state(current.map(|c| c.text.as_str()), &rem)
}

fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET ^ seed.wrapping_mul(FNV_PRIME);
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    // FNV has weak low bits on short inputs; finish with a murmur-style mix.
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    h
}

/// Tokens of the canonical form. Section markers and attempt counters become
/// their own tokens so n-grams keep track of which command a word belongs to.
fn tokenize(canonical: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    let flush = |word: &mut String, tokens: &mut Vec<String>| {
        if !word.is_empty() {
            tokens.push(std::mem::take(word));
        }
    };
    let mut rest = canonical;
    while let Some(c) = rest.chars().next() {
        if let Some(tail) = rest.strip_prefix("CUR:") {
            flush(&mut word, &mut tokens);
            tokens.push("<cur>".into());
            rest = tail;
            continue;
        }
        if let Some(tail) = rest.strip_prefix("|REM:") {
            flush(&mut word, &mut tokens);
            tokens.push("<rem>".into());
            rest = tail;
            continue;
        }
        match c {
            ';' => {
                flush(&mut word, &mut tokens);
                tokens.push(";".into());
            }
            '@' => {
                flush(&mut word, &mut tokens);
                word.push('@');
            }
            c if c.is_alphanumeric() => word.extend(c.to_lowercase()),
            _ => flush(&mut word, &mut tokens),
        }
        rest = &rest[c.len_utf8()..];
    }
    flush(&mut word, &mut tokens);
    tokens
}

/// Weight of n-grams from queued commands relative to the current one.
pub const REM_WEIGHT: f64 = 0.5;

/// Deterministic hashing encoder.
pub fn embed_state(canonical: &str) -> StateEmbedding {
    let tokens = tokenize(canonical);
    // Section of each token: 'c' inside the current command, 'r' after <rem>.
    let mut section = 'c';
    let sections: Vec<char> = tokens
        .iter()
        .map(|t| {
            if t == "<rem>" {
                section = 'r';
            }
            section
        })
        .collect();
    let mut v = vec![0.0f64; EMBEDDING_DIM];
    for n in 1..=3 {
        for (i, gram) in tokens.windows(n).enumerate() {
            // Keys are namespaced by section so a word in the current command
            // and the same word in a queued command are different features.
            let key = format!("{}\u{1f}{}", sections[i], gram.join("\u{1f}"));
            let bucket = (fnv1a(BUCKET_SEED, key.as_bytes()) % EMBEDDING_DIM as u64) as usize;
            let sign = if fnv1a(SIGN_SEED, key.as_bytes()) & 1 == 0 {
                1.0
            } else {
                -1.0
            };
            let w = if sections[i] == 'r' { REM_WEIGHT } else { 1.0 };
            v[bucket] += sign * w;
        }
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return StateEmbedding::sentinel();
    }
    v.iter_mut().for_each(|x| *x /= norm);
    StateEmbedding(v)
}

/// Source of state embeddings.
pub trait Embedder: Send + Sync {
    fn embed(&self, canonical: &str) -> Result<StateEmbedding>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct HashingEmbedder;

impl Embedder for HashingEmbedder {
    fn embed(&self, canonical: &str) -> Result<StateEmbedding> {
        Ok(embed_state(canonical))
    }
}

/// Transport for an embedding service: UTF-8 text in, binary64 values out.
pub trait EmbedTransport: Send + Sync {
    fn call(&self, text: &str, timeout: Duration) -> Result<Vec<f64>, String>;
}

impl<F> EmbedTransport for F
where
    F: Fn(&str, Duration) -> Result<Vec<f64>, String> + Send + Sync,
{
    fn call(&self, text: &str, timeout: Duration) -> Result<Vec<f64>, String> {
        self(text, timeout)
    }
}

/// Remote encoder. Replies of any length other than 1536 are rejected.
#[derive(Clone)]
pub struct RemoteEmbedder {
    pub transport: Arc<dyn EmbedTransport>,
    pub timeout: Duration,
}

impl RemoteEmbedder {
    pub fn new(transport: Arc<dyn EmbedTransport>) -> Self {
        RemoteEmbedder {
            transport,
            timeout: Duration::from_secs(120),
        }
    }
}

impl Embedder for RemoteEmbedder {
    fn embed(&self, canonical: &str) -> Result<StateEmbedding> {
        let values = self
            .transport
            .call(canonical, self.timeout)
            .map_err(Error::RemoteFailure)?;
        if values.len() != EMBEDDING_DIM {
            return Err(Error::RemoteFailure(format!(
                "embedding service returned {} values, expected {EMBEDDING_DIM}",
                values.len()
            )));
        }
        StateEmbedding::from_values(values).map_err(|e| Error::RemoteFailure(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_form() {
        assert_eq!(
            serialize_reflection_state(Some("add a dog"), &[("fix sky", 1)]),
            "CUR:add a dog|REM:fix sky@1"
        );
        assert_eq!(serialize_reflection_state(None, &[]), "CUR:|REM:");
        assert_eq!(
            serialize_reflection_state(Some("a"), &[("b", 0), ("c", 2)]),
            "CUR:a|REM:b@0;c@2"
        );
    }

    #[test]
    fn tokens_mark_sections() {
        assert_eq!(
            tokenize("CUR:add a dog|REM:fix sky@1;b@0"),
            ["<cur>", "add", "a", "dog", "<rem>", "fix", "sky", "@1", ";", "b", "@0"]
        );
    }

    #[test]
    fn empty_text_maps_to_sentinel() {
        assert_eq!(embed_state(""), StateEmbedding::sentinel());
        assert!((embed_state("CUR:|REM:").norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn deterministic_and_unit_norm() {
        let s = "CUR:add 6 boats|REM:move the lamp to the left@1";
        let a = embed_state(s);
        assert_eq!(a, embed_state(s));
        assert_eq!(a.values().len(), EMBEDDING_DIM);
        assert!((a.norm() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn order_of_remaining_matters() {
        let a = serialize_reflection_state(Some("x"), &[("b", 0), ("c", 0)]);
        let b = serialize_reflection_state(Some("x"), &[("c", 0), ("b", 0)]);
        assert_ne!(a, b);
        assert_ne!(embed_state(&a), embed_state(&b));
    }

    #[test]
    fn remote_length_is_checked() {
        let short: Arc<dyn EmbedTransport> = Arc::new(|_: &str, _: Duration| Ok(vec![0.0; 10]));
        assert!(matches!(
            RemoteEmbedder::new(short).embed("x"),
            Err(Error::RemoteFailure(_))
        ));
        let good: Arc<dyn EmbedTransport> = Arc::new(|_: &str, _: Duration| {
            let mut v = vec![0.0; EMBEDDING_DIM];
            v[5] = 1.0;
            Ok(v)
        });
        assert_eq!(
            RemoteEmbedder::new(good).embed("x").unwrap().values()[5],
            1.0
        );
    }
}
