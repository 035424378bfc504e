//! FIFO support set of past embeddings with exact nearest-neighbor lookup.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::vecspace::{check_dims, dot, Embedding};

/// Tolerance on `|‖e‖ − 1|` accepted by [`SupportSet::insert_batch`].
pub const UNIT_NORM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct SupportEntry {
    pub embedding: Embedding,
    /// Class id, carried for diagnostics only.
    pub label: Option<u32>,
    pub step: u64,
}

impl SupportEntry {
    pub fn new(embedding: Embedding, label: Option<u32>, step: u64) -> Self {
        Self {
            embedding,
            label,
            step,
        }
    }
}

/// Result of a nearest-neighbor query.
#[derive(Debug, Clone, Copy)]
pub struct Neighbor<'a> {
    pub entry: &'a SupportEntry,
    pub index: usize,
    pub similarity: f64,
}

/// Fixed-capacity queue, oldest entry first.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportSet {
    capacity: usize,
    entries: VecDeque<SupportEntry>,
}

impl SupportSet {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidConfig(
                "support set capacity must be positive".into(),
            ));
        }
        Ok(Self {
            capacity,
            entries: VecDeque::with_capacity(capacity),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl ExactSizeIterator<Item = &SupportEntry> {
        self.entries.iter()
    }

    pub fn get(&self, index: usize) -> Option<&SupportEntry> {
        self.entries.get(index)
    }

    /// Appends `batch` in order, evicting the oldest entries beyond capacity.
    ///
    /// The whole batch is validated before anything is inserted.
    pub fn insert_batch(&mut self, batch: impl IntoIterator<Item = SupportEntry>) -> Result<()> {
        let batch: Vec<SupportEntry> = batch.into_iter().collect();
        let dim = self.entries.front().map(|e| e.embedding.dim());
        for (index, entry) in batch.iter().enumerate() {
            let norm = entry.embedding.norm();
            if norm.is_nan() || (norm - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::NotNormalized { index, norm });
            }
            let expected = dim.unwrap_or(batch[0].embedding.dim());
            check_dims(expected, entry.embedding.dim())?;
        }
        let skip = batch.len().saturating_sub(self.capacity);
        for entry in batch.into_iter().skip(skip) {
            if self.entries.len() == self.capacity {
                self.entries.pop_front();
            }
            self.entries.push_back(entry);
        }
        Ok(())
    }

    /// Entry with maximal cosine similarity to `z`; ties go to the oldest.
    pub fn nearest_neighbor(&self, z: &[f64]) -> Result<Neighbor<'_>> {
        let mut best: Option<(usize, f64)> = None;
        for (i, e) in self.entries.iter().enumerate() {
            check_dims(e.embedding.dim(), z.len())?;
            let s = dot(z, &e.embedding).clamp(-1.0, 1.0);
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
        let (index, similarity) = best.ok_or(Error::EmptySupportSet)?;
        Ok(Neighbor {
            entry: &self.entries[index],
            index,
            similarity,
        })
    }

    /// Fraction of `queries` whose hard nearest neighbor shares their label.
    ///
    /// Read-only; the training path never consults labels.
    pub fn class_match_rate<'a>(
        &self,
        queries: impl IntoIterator<Item = (&'a [f64], u32)>,
    ) -> Result<f64> {
        if let Some(i) = self.entries.iter().position(|e| e.label.is_none()) {
            return Err(Error::MissingLabels(i));
        }
        let mut hits = 0usize;
        let mut total = 0usize;
        for (z, label) in queries {
            let nn = self.nearest_neighbor(z)?;
            hits += usize::from(nn.entry.label == Some(label));
            total += 1;
        }
        if total == 0 {
            return Ok(0.0);
        }
        Ok(hits as f64 / total as f64)
    }
}
