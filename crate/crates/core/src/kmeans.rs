//! Spherical k-means with k-means++ seeding.
//!
//! Rows are unit-normalized, distance is `1 - cos`, and centroids are
//! renormalized means. A cluster that empties out is reseeded with the
//! point farthest from its current centroid.

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::{dot, DenseMatrix};

#[derive(Debug, Clone)]
pub struct SphericalKMeans {
    /// `k` unit rows.
    pub centroids: DenseMatrix,
    pub assignments: Vec<usize>,
    /// `Σ (1 - cos)` after every assignment step, starting with the seeds.
    pub objective_trace: Vec<f64>,
}

impl SphericalKMeans {
    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().unwrap_or(&0.0)
    }
}

/// Index of the most similar centroid; ties go to the lowest index.
#[inline]
pub(crate) fn nearest(row: &[f32], centroids: &DenseMatrix) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (j, c) in centroids.row_iter().enumerate() {
        let s = dot(row, c);
        if s > best.1 {
            best = (j, s);
        }
    }
    best
}

/// k-means++ seeding on unit rows with `D² = 2 - 2 cos`.
pub fn kmeanspp_seeds(unit: &DenseMatrix, k: usize, rng: &mut RngStream) -> Vec<usize> {
    let n = unit.rows();
    let mut seeds = Vec::with_capacity(k);
    seeds.push(rng.index(n));
    let mut d2: Vec<f64> = unit
        .row_iter()
        .map(|r| (2.0 - 2.0 * dot(r, unit.row(seeds[0]))).max(0.0))
        .collect();
    while seeds.len() < k {
        let next = rng.weighted_index(&d2);
        seeds.push(next);
        let c = unit.row(next);
        for (d, r) in d2.iter_mut().zip(unit.row_iter()) {
            *d = d.min((2.0 - 2.0 * dot(r, c)).max(0.0));
        }
    }
    seeds
}

/// Lloyd iterations until assignments stop changing or `max_iters` is hit.
pub fn spherical_kmeans(data: &DenseMatrix, k: usize, max_iters: usize, rng: &mut RngStream) -> Result<SphericalKMeans> {
    let n = data.rows();
    if k == 0 || n < k {
        return Err(Error::InvalidArgument(format!(
            "spherical k-means needs 1 <= k <= rows, got k={k}, rows={n}"
        )));
    }
    let unit = data.normalized_rows()?;
    let dim = unit.cols();
    let seeds = kmeanspp_seeds(&unit, k, rng);
    let mut centroids = unit.select_rows(&seeds);
    let mut assignments = vec![usize::MAX; n];
    let mut trace = Vec::new();

    for iter in 0..=max_iters {
        let mut changed = false;
        let mut objective = 0.0;
        let mut sims = vec![0.0; n];
        for (i, r) in unit.row_iter().enumerate() {
            let (j, s) = nearest(r, &centroids);
            if assignments[i] != j {
                assignments[i] = j;
                changed = true;
            }
            sims[i] = s;
            objective += 1.0 - s;
        }
        trace.push(objective);
        if !changed || iter == max_iters {
            break;
        }

        let mut sums = vec![0.0f64; k * dim];
        let mut counts = vec![0usize; k];
        for (i, r) in unit.row_iter().enumerate() {
            let a = assignments[i];
            counts[a] += 1;
            for (s, &v) in sums[a * dim..(a + 1) * dim].iter_mut().zip(r) {
                *s += v as f64;
            }
        }
        let mut taken = vec![false; n];
        for a in 0..k {
            let sum = &sums[a * dim..(a + 1) * dim];
            let norm = sum.iter().map(|v| v * v).sum::<f64>().sqrt();
            if counts[a] > 0 && norm > 1e-12 {
                for (c, s) in centroids.row_mut(a).iter_mut().zip(sum) {
                    *c = (s / norm) as f32;
                }
            } else {
                // farthest point from its own centroid, not already reused
                let far = (0..n)
                    .filter(|&i| !taken[i])
                    .min_by(|&x, &y| sims[x].total_cmp(&sims[y]).then(x.cmp(&y)))
                    .expect("n >= k leaves a candidate");
                taken[far] = true;
                sims[far] = 1.0;
                centroids.row_mut(a).copy_from_slice(unit.row(far));
            }
        }
    }
    Ok(SphericalKMeans {
        centroids,
        assignments,
        objective_trace: trace,
    })
}
