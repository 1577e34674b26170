//! Unsupervised semantic segmentation from frozen patch features.
//!
//! The pipeline has two training stages and one evaluation stage:
//!
//! 1. [`clusterbook`]: discretize patch features into `k` concept prototypes
//!    by maximizing a soft graph modularity over each image's patch
//!    affinity graph.
//! 2. [`train`]: train a small MLP segmentation head with a concept-wise
//!    contrastive objective. Positives and negatives are chosen through the
//!    prototype distance matrix, compared against an EMA teacher and a
//!    per-concept feature bank.
//! 3. [`eval`]: cluster the head outputs, upsample, refine with a dense CRF,
//!    align clusters to classes with the Hungarian method and report mIoU and
//!    pixel accuracy. A supervised linear probe is also available.
//!
//! Inputs are `.causefeat` feature files indexed by a JSON manifest
//! ([`features`]); [`features::synth`] generates a synthetic dataset with a
//! known class/sub-concept hierarchy for desk-scale experiments.

pub mod clusterbook;
pub mod error;
pub mod eval;
pub mod features;
pub mod head;
pub mod kmeans;
pub mod optim;
pub mod pipeline;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, ErrorKind, Result};
pub use rng::RngStream;
pub use tensor::DenseMatrix;
