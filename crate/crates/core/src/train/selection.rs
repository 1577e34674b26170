use crate::tensor::DenseMatrix;

/// Where a comparison row comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    /// Patch position in the current record (teacher output).
    Batch { position: usize, concept: usize },
    /// Stored bank row.
    Bank { concept: usize, slot: usize },
}

impl Source {
    pub fn concept(&self) -> usize {
        match *self {
            Source::Batch { concept, .. } | Source::Bank { concept, .. } => concept,
        }
    }
}

/// Positive and negative comparison rows chosen for one anchor.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnchorSelection {
    pub anchor: usize,
    pub concept: usize,
    pub positives: Vec<Source>,
    pub negatives: Vec<Source>,
}

impl AnchorSelection {
    pub fn is_usable(&self) -> bool {
        !self.positives.is_empty() && !self.negatives.is_empty()
    }
}

/// Threshold test on one `D_M` entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Positive,
    Negative,
    Neither,
}

#[inline]
pub fn relation(distance: f32, phi_pos: f64, phi_neg: f64) -> Relation {
    // compare at the storage precision of D_M so that 0.3 is not > 0.3
    if distance > phi_pos as f32 {
        Relation::Positive
    } else if distance < phi_neg as f32 {
        Relation::Negative
    } else {
        Relation::Neither
    }
}

/// In-batch selection: position `j` is positive when
/// `D_M[anchor_id, batch_ids[j]] > φ⁺` and negative when it is `< φ⁻`. The
/// anchor's own position is skipped.
pub fn select_pos_neg(
    anchor_position: usize,
    anchor_id: usize,
    batch_ids: &[usize],
    distances: &DenseMatrix,
    phi_pos: f64,
    phi_neg: f64,
) -> AnchorSelection {
    let row = distances.row(anchor_id);
    let mut sel = AnchorSelection {
        anchor: anchor_position,
        concept: anchor_id,
        ..Default::default()
    };
    for (position, &concept) in batch_ids.iter().enumerate() {
        if position == anchor_position {
            continue;
        }
        let src = Source::Batch { position, concept };
        match relation(row[concept], phi_pos, phi_neg) {
            Relation::Positive => sel.positives.push(src),
            Relation::Negative => sel.negatives.push(src),
            Relation::Neither => {}
        }
    }
    sel
}
