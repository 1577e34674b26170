use crate::error::{Error, Result};
use crate::features::LabelMap;
use crate::kmeans::{nearest, spherical_kmeans};
use crate::rng::RngStream;
use crate::tensor::{bilinear_upsample, DenseMatrix};

/// `ℂ` unit-norm centroids fitted on head outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterProbe {
    centroids: DenseMatrix,
}

impl ClusterProbe {
    pub fn new(centroids: DenseMatrix) -> Result<Self> {
        if centroids.rows() < 2 {
            return Err(Error::InvalidArgument("a cluster probe needs at least 2 centroids".into()));
        }
        Ok(Self {
            centroids: centroids.normalized_rows()?,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.centroids.rows()
    }

    pub fn centroids(&self) -> &DenseMatrix {
        &self.centroids
    }

    /// Nearest centroid by cosine for every row; ties go to the lowest index.
    /// Zero rows fall to centroid 0.
    pub fn assign(&self, rows: &DenseMatrix) -> Result<Vec<usize>> {
        if rows.cols() != self.centroids.cols() {
            return Err(Error::dims("ClusterProbe::assign", self.centroids.cols(), rows.cols()));
        }
        Ok(rows.row_iter().map(|r| nearest(r, &self.centroids).0).collect())
    }
}

/// Spherical k-means with k-means++ seeding over pooled head outputs.
pub fn fit_cluster_probe(outputs: &DenseMatrix, n_classes: usize, iters: usize, rng: &mut RngStream) -> Result<ClusterProbe> {
    if n_classes < 2 {
        return Err(Error::InvalidArgument(format!("class count must be >= 2, got {n_classes}")));
    }
    let km = spherical_kmeans(outputs, n_classes, iters, rng)?;
    ClusterProbe::new(km.centroids)
}

/// Upsamples an `h × w` grid of head outputs to `out_h × out_w` pixels and
/// labels each pixel with its nearest centroid.
pub fn predict_labels(y: &DenseMatrix, h: usize, w: usize, probe: &ClusterProbe, out_h: usize, out_w: usize) -> Result<LabelMap> {
    let up = bilinear_upsample(y, h, w, out_h, out_w)?;
    let labels = probe.assign(&up)?.into_iter().map(|l| l as u16).collect();
    LabelMap::new(out_h, out_w, labels)
}
