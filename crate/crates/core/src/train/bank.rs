use crate::error::{Error, Result};
use crate::rng::{sample_without_replacement, RngStream};
use crate::tensor::DenseMatrix;

/// Per-concept store of projected teacher features from earlier records.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptBank {
    capacity: usize,
    dim: usize,
    /// One flat `occupancy × dim` buffer per concept.
    slots: Vec<Vec<f32>>,
}

impl ConceptBank {
    pub fn new(k: usize, capacity: usize, dim: usize) -> Self {
        Self {
            capacity,
            dim,
            slots: vec![Vec::new(); k],
        }
    }

    pub fn k(&self) -> usize {
        self.slots.len()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn occupancy(&self, concept: usize) -> usize {
        self.slots[concept].len() / self.dim.max(1)
    }

    pub fn total(&self) -> usize {
        (0..self.k()).map(|i| self.occupancy(i)).sum()
    }

    pub fn row(&self, concept: usize, slot: usize) -> &[f32] {
        &self.slots[concept][slot * self.dim..(slot + 1) * self.dim]
    }

    pub fn rows(&self, concept: usize) -> impl Iterator<Item = &[f32]> + '_ {
        self.slots[concept].chunks_exact(self.dim.max(1))
    }

    /// Random cut then random sample, per concept: drop `⌊occupancy/2⌋`
    /// stored rows chosen uniformly, then append `⌊n/2⌋` of the `n` batch
    /// rows carrying that concept id (uniformly chosen), up to capacity.
    pub fn update(&mut self, features: &DenseMatrix, concept_ids: &[usize], rng: &mut RngStream) -> Result<()> {
        if features.rows() != concept_ids.len() || features.cols() != self.dim {
            return Err(Error::dims(
                "bank_update",
                format!("{} rows x {}", concept_ids.len(), self.dim),
                format!("{:?}", features.shape()),
            ));
        }
        if let Some(&bad) = concept_ids.iter().find(|&&i| i >= self.k()) {
            return Err(Error::InvalidArgument(format!("concept id {bad} >= k = {}", self.k())));
        }
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); self.k()];
        for (pos, &id) in concept_ids.iter().enumerate() {
            members[id].push(pos);
        }
        let dim = self.dim;
        for (concept, slot) in self.slots.iter_mut().enumerate() {
            let occ = slot.len() / dim.max(1);
            let cut = occ / 2;
            if cut > 0 {
                let mut drop = vec![false; occ];
                for i in sample_without_replacement(occ, cut, rng)? {
                    drop[i] = true;
                }
                let mut kept = Vec::with_capacity((occ - cut) * dim);
                for (i, row) in slot.chunks_exact(dim).enumerate() {
                    if !drop[i] {
                        kept.extend_from_slice(row);
                    }
                }
                *slot = kept;
            }
            let m = &members[concept];
            let room = self.capacity.saturating_sub(slot.len() / dim.max(1));
            let take = (m.len() / 2).min(room);
            if take > 0 {
                for i in sample_without_replacement(m.len(), take, rng)? {
                    slot.extend_from_slice(features.row(m[i]));
                }
            }
            debug_assert!(slot.len() / dim.max(1) <= self.capacity);
        }
        Ok(())
    }
}
