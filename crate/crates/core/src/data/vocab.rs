use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::EventRecord;
use crate::error::{Error, Result};
use crate::text::UNK_ID;

pub const DEFAULT_MIN_COUNT: usize = 2;
pub const DEFAULT_MAX_SIZE: usize = 5000;

/// Token index. Sequence ids 0 and 1 are reserved for padding and unknown
/// tokens; real tokens start at 2. Multi-hot features use `id - 2`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    counts: Vec<usize>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn from_tokens(tokens: Vec<String>, counts: Vec<usize>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i + 2))
            .collect();
        Self {
            tokens,
            counts,
            index,
        }
    }

    /// Rebuilds the lookup table after deserialization.
    pub fn reindexed(self) -> Self {
        Self::from_tokens(self.tokens, self.counts)
    }

    /// Number of real tokens (the multi-hot width).
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Rows needed in an embedding table: real tokens plus pad and unknown.
    pub fn sequence_rows(&self) -> usize {
        self.tokens.len() + 2
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Sequence id, falling back to the unknown id.
    pub fn seq_id(&self, token: &str) -> usize {
        self.id(token).unwrap_or(UNK_ID)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn count(&self, token: &str) -> Option<usize> {
        self.id(token).map(|i| self.counts[i - 2])
    }

    /// An event is empty when its source post keeps no in-vocabulary token.
    pub fn is_empty_event(&self, event: &EventRecord) -> bool {
        !event.root().tokens.iter().any(|t| self.id(t).is_some())
    }

    pub fn flag_empty(&self, events: &[EventRecord]) -> Vec<bool> {
        events.iter().map(|e| self.is_empty_event(e)).collect()
    }
}

/// Counts tokens over every post of `events`, drops tokens seen fewer than
/// `min_count` times, then keeps the `max_size` most frequent. Ties are
/// broken by token text so the result does not depend on event order.
pub fn build_vocabulary(events: &[EventRecord], min_count: usize, max_size: usize) -> Result<Vocabulary> {
    if events.is_empty() {
        return Err(Error::Input("cannot build a vocabulary from no events".into()));
    }
    let mut freq: HashMap<&str, usize> = HashMap::new();
    for e in events {
        for n in &e.nodes {
            for t in &n.tokens {
                *freq.entry(t.as_str()).or_default() += 1;
            }
        }
    }
    let mut kept: Vec<(&str, usize)> = freq.into_iter().filter(|&(_, c)| c >= min_count).collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    kept.truncate(max_size);
    let (tokens, counts) = kept.into_iter().map(|(t, c)| (t.to_string(), c)).unzip();
    Ok(Vocabulary::from_tokens(tokens, counts))
}
