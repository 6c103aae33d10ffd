//! Exhaustive Hamming-distance retrieval over bit-packed codes.

use std::collections::{BinaryHeap, HashSet};

use crate::error::{ensure_dim, Error, Result};
use crate::hamming::{word_distance, words_for, PackedCode};

/// Immutable index of `(id, code)` entries sharing one bit width.
///
/// Codes are stored contiguously, `words_for(bits)` words per entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HammingIndex {
    bits: usize,
    ids: Vec<u64>,
    words: Vec<u64>,
}

/// One query hit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Hit {
    pub distance: u64,
    pub id: u64,
}

impl HammingIndex {
    /// Builds an index. An empty list gives an empty index that answers
    /// every query with no results.
    pub fn build(entries: impl IntoIterator<Item = (u64, PackedCode)>) -> Result<Self> {
        let mut iter = entries.into_iter().peekable();
        let bits = iter.peek().map_or(0, |(_, c)| c.bits());
        let mut ids = Vec::new();
        let mut words = Vec::new();
        let mut seen = HashSet::new();
        for (id, code) in iter {
            ensure_dim("code bits", bits, code.bits())?;
            if !seen.insert(id) {
                return Err(Error::DuplicateId(id));
            }
            ids.push(id);
            words.extend_from_slice(code.words());
        }
        Ok(Self { bits, ids, words })
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    fn stride(&self) -> usize {
        words_for(self.bits)
    }

    /// Entry `i` in insertion order.
    pub fn entry(&self, i: usize) -> (u64, PackedCode) {
        let w = self.stride();
        let code = PackedCode::from_words(self.bits, self.words[i * w..(i + 1) * w].to_vec())
            .expect("index holds valid codes");
        (self.ids[i], code)
    }

    pub fn entries(&self) -> impl Iterator<Item = (u64, PackedCode)> + '_ {
        (0..self.len()).map(|i| self.entry(i))
    }

    /// The `min(r, N)` nearest entries by Hamming distance, ties broken by
    /// ascending id.
    pub fn query_top_r(&self, query: &PackedCode, r: usize) -> Result<Vec<Hit>> {
        if self.is_empty() || r == 0 {
            return Ok(Vec::new());
        }
        ensure_dim("query bits", self.bits, query.bits())?;
        let q = query.words();
        let w = self.stride();
        let mut heap: BinaryHeap<Hit> = BinaryHeap::with_capacity(r.min(self.len()) + 1);
        for (i, &id) in self.ids.iter().enumerate() {
            let hit = Hit {
                distance: word_distance(q, &self.words[i * w..(i + 1) * w]),
                id,
            };
            if heap.len() < r {
                heap.push(hit);
            } else if hit < *heap.peek().expect("heap is full") {
                heap.pop();
                heap.push(hit);
            }
        }
        Ok(heap.into_sorted_vec())
    }
}
