//! Inference and evaluation: cluster probe, upsampling, nearest centroid,
//! dense CRF refinement, Hungarian alignment and mIoU / pixel accuracy, plus
//! a supervised linear probe.

mod crf;
mod hungarian;
mod linear_probe;
mod metrics;
mod probe;
mod report;

pub use crf::{crf_marginals, crf_refine, unary_from_labels, CrfParams};
pub use hungarian::{assignment_value, hungarian_match};
pub use linear_probe::{linear_probe, softmax_cross_entropy, LinearProbe, LinearProbeConfig, LossAndGradient};
pub use metrics::{evaluate, score_confusion, ConfusionMatrix, EvalReport};
pub use probe::{fit_cluster_probe, predict_labels, ClusterProbe};
pub use report::{
    read_label_payload, write_label_payload, write_label_png, write_metrics_json, write_metrics_tsv, PALETTE,
};
