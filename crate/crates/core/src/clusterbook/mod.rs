//! Concept clusterbook: discretized prototypes, their distance matrix, and
//! vector quantization of patch features onto them.

mod fit;
mod io;
pub mod modularity;

pub use fit::{fit_clusterbook, fit_clusterbook_kmeanspp, initial_prototypes, BookConfig, FitReport};
pub use io::{read_clusterbook, write_clusterbook, BOOK_MAGIC, BOOK_VERSION};
pub use modularity::{
    affinity, assignment_matrix, modularity, modularity_and_gradient, modularity_gradient,
    modularity_of_assignment, modularity_with_kernel, AffinityStats, AssignmentKernel, ModularityEval,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kmeans::nearest;
use crate::tensor::{cosine_matrix, DenseMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BookBuilder {
    Modularity,
    #[serde(rename = "kmeanspp")]
    KMeansPlusPlus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub builder: BookBuilder,
    pub seed: u64,
}

/// `k` concept prototypes and their pairwise cosine matrix `D_M`.
#[derive(Debug, Clone, PartialEq)]
pub struct Clusterbook {
    prototypes: DenseMatrix,
    distances: DenseMatrix,
    pub tau_mod: f64,
    pub provenance: Provenance,
}

impl Clusterbook {
    pub fn new(prototypes: DenseMatrix, tau_mod: f64, provenance: Provenance) -> Result<Self> {
        if let Some(row) = prototypes.row_norms().iter().position(|&n| n < 1e-8) {
            return Err(Error::ZeroNormRow {
                op: "Clusterbook::new",
                row,
            });
        }
        let distances = distance_matrix(&prototypes)?;
        Ok(Self {
            prototypes,
            distances,
            tau_mod,
            provenance,
        })
    }

    pub fn k(&self) -> usize {
        self.prototypes.rows()
    }

    pub fn dim(&self) -> usize {
        self.prototypes.cols()
    }

    pub fn prototypes(&self) -> &DenseMatrix {
        &self.prototypes
    }

    /// `D_M`, `k × k` unclamped cosine.
    pub fn distances(&self) -> &DenseMatrix {
        &self.distances
    }
}

/// `D_M = cos(M, M)`, with the diagonal pinned to exactly one.
pub fn distance_matrix(m: &DenseMatrix) -> Result<DenseMatrix> {
    let mut d = cosine_matrix(m, m, false)?;
    let k = m.rows();
    for i in 0..k {
        d.set(i, i, 1.0);
        for j in 0..i {
            let v = d.get(i, j);
            d.set(j, i, v);
        }
    }
    Ok(d)
}

/// Concept ids per patch plus the quantized features `Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedAssignment {
    pub indices: Vec<usize>,
    pub quantized: DenseMatrix,
}

/// Nearest prototype per row by cosine; ties go to the lowest index.
pub fn concept_ids(t: &DenseMatrix, book: &Clusterbook) -> Result<Vec<usize>> {
    if t.cols() != book.dim() {
        return Err(Error::dims("vector_quantize", book.dim(), t.cols()));
    }
    let unit_book = book.prototypes.normalized_rows()?;
    let unit_t = t.normalized_rows()?;
    Ok(unit_t.row_iter().map(|r| nearest(r, &unit_book).0).collect())
}

pub fn vector_quantize(t: &DenseMatrix, book: &Clusterbook) -> Result<QuantizedAssignment> {
    let indices = concept_ids(t, book)?;
    let quantized = book.prototypes.select_rows(&indices);
    Ok(QuantizedAssignment { indices, quantized })
}
