use log::warn;
use serde::{Deserialize, Serialize};

use super::modularity::{affinity, modularity_and_gradient, AssignmentKernel};
use super::{BookBuilder, Clusterbook, Provenance};
use crate::error::{Error, Result};
use crate::features::FeatureRecord;
use crate::kmeans::{kmeanspp_seeds, spherical_kmeans};
use crate::optim::{AdamConfig, AdamState};
use crate::rng::RngStream;
use crate::tensor::DenseMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BookConfig {
    /// Number of concept prototypes.
    pub k: usize,
    /// Temperature inside `tanh(C Cᵀ / τ)`.
    pub tau_mod: f64,
    pub lr: f64,
    pub adam: AdamConfig,
    /// Passes over the training split.
    pub epochs: usize,
    pub builder: BookBuilder,
    /// Lloyd iterations for the k-means++ builder.
    pub kmeans_iters: usize,
}

impl Default for BookConfig {
    fn default() -> Self {
        Self {
            k: 2048,
            tau_mod: 0.1,
            lr: 0.001,
            adam: AdamConfig::default(),
            epochs: 1,
            builder: BookBuilder::Modularity,
            kmeans_iters: 30,
        }
    }
}

impl BookConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::InvalidArgument(format!("k = {} must be >= 2", self.k)));
        }
        if !(self.tau_mod > 0.0) || !(self.lr > 0.0) {
            return Err(Error::InvalidArgument("tau_mod and lr must be > 0".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub records_used: usize,
    pub records_skipped: usize,
    /// Modularity of each record at the moment it was used.
    pub modularity_trace: Vec<f64>,
}

/// Patches kept per prototype in the seeding pool.
const POOL_PER_PROTOTYPE: usize = 8;

/// Seeds `k` unit rows with k-means++ (`D²`) sampling over a uniform
/// reservoir of training patches. Drawing from the data keeps prototypes on
/// the feature manifold, so their pairwise cosines mean something to the
/// training stage; the `D²` weighting makes every well-separated mode likely
/// to get a seed. Without one, a prototype straddling two clusters sits in
/// the flat part of the tanh and ascent cannot split it. Rows are topped up
/// with Gaussian directions when there are fewer than `k` usable patches.
pub fn initial_prototypes<I>(records: I, k: usize, rng: &mut RngStream) -> Result<DenseMatrix>
where
    I: IntoIterator<Item = Result<FeatureRecord>>,
{
    let cap = (POOL_PER_PROTOTYPE * k).max(4096);
    let mut pool: Vec<Vec<f32>> = Vec::new();
    let mut seen = 0usize;
    let mut dim = None;
    for rec in records {
        let rec = rec?;
        if *dim.get_or_insert(rec.feature_dim()) != rec.feature_dim() {
            return Err(Error::dims("initial_prototypes", dim.unwrap(), rec.feature_dim()));
        }
        for row in rec.features.row_iter().filter(|r| crate::tensor::norm(r) > 1e-8) {
            seen += 1;
            if pool.len() < cap {
                pool.push(row.to_vec());
            } else {
                let j = rng.index(seen);
                if j < cap {
                    pool[j] = row.to_vec();
                }
            }
        }
    }
    let dim = dim.ok_or_else(|| Error::InvalidArgument("training split is empty".into()))?;
    let mut rows: Vec<Vec<f32>> = if pool.is_empty() {
        Vec::new()
    } else {
        let unit = DenseMatrix::from_rows(&pool)?.normalized_rows()?;
        let take = k.min(unit.rows());
        kmeanspp_seeds(&unit, take, rng).into_iter().map(|i| unit.row(i).to_vec()).collect()
    };
    while rows.len() < k {
        rows.push((0..dim).map(|_| rng.normal() as f32).collect());
    }
    DenseMatrix::from_rows(&rows)?.normalized_rows()
}

/// Builds the clusterbook by modularity ascent: one Adam step per training
/// record, in the given order.
pub fn fit_clusterbook<I>(records: I, cfg: &BookConfig, rng: &mut RngStream) -> Result<(Clusterbook, FitReport)>
where
    I: IntoIterator<Item = Result<FeatureRecord>>,
    I::IntoIter: Clone,
{
    cfg.validate()?;
    let records = records.into_iter();
    let kernel = AssignmentKernel::Tanh { tau: cfg.tau_mod };
    let mut report = FitReport::default();
    let mut m = initial_prototypes(records.clone(), cfg.k, &mut rng.child("init"))?;
    let mut state = AdamState::new(m.as_slice().len(), cfg.adam);

    for _ in 0..cfg.epochs {
        for rec in records.clone() {
            let rec = rec?;
            if rec.feature_dim() != m.cols() {
                return Err(Error::dims("fit_clusterbook", m.cols(), rec.feature_dim()));
            }
            let eval = affinity(&rec.features).and_then(|stats| modularity_and_gradient(&rec.features, &m, &stats, kernel));
            match eval {
                Ok(eval) => {
                    let descent: Vec<f64> = eval.gradient.iter().map(|g| -g).collect();
                    state.step(m.as_mut_slice(), &descent, cfg.lr)?;
                    report.records_used += 1;
                    report.modularity_trace.push(eval.value);
                }
                Err(e @ (Error::DegenerateGraph | Error::ZeroNormRow { .. } | Error::InvalidArgument(_))) => {
                    warn!("skipping record {}: {e}", rec.image_id);
                    report.records_skipped += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
    if report.records_used == 0 {
        return Err(Error::AllDegenerate {
            skipped: report.records_skipped,
        });
    }
    let provenance = Provenance {
        builder: BookBuilder::Modularity,
        seed: rng.seed(),
    };
    Ok((Clusterbook::new(m, cfg.tau_mod, provenance)?, report))
}

/// Builds the clusterbook by spherical k-means over all pooled patch
/// features.
pub fn fit_clusterbook_kmeanspp<I>(records: I, cfg: &BookConfig, rng: &mut RngStream) -> Result<Clusterbook>
where
    I: IntoIterator<Item = Result<FeatureRecord>>,
{
    cfg.validate()?;
    let mut pooled = Vec::new();
    let mut dim = None;
    let mut rows = 0;
    for rec in records {
        let rec = rec?;
        if *dim.get_or_insert(rec.feature_dim()) != rec.feature_dim() {
            return Err(Error::dims("fit_clusterbook_kmeanspp", dim.unwrap(), rec.feature_dim()));
        }
        rows += rec.features.rows();
        pooled.extend_from_slice(rec.features.as_slice());
    }
    let dim = dim.ok_or_else(|| Error::InvalidArgument("training split is empty".into()))?;
    if rows < cfg.k {
        return Err(Error::InvalidArgument(format!("{rows} patches < k = {}", cfg.k)));
    }
    let data = DenseMatrix::new(rows, dim, pooled)?;
    let km = spherical_kmeans(&data, cfg.k, cfg.kmeans_iters, &mut rng.child("kmeans"))?;
    let provenance = Provenance {
        builder: BookBuilder::KMeansPlusPlus,
        seed: rng.seed(),
    };
    Clusterbook::new(km.centroids, cfg.tau_mod, provenance)
}
