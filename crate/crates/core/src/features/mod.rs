//! Feature files, dataset manifests and the synthetic dataset generator.

pub mod format;
pub mod manifest;
pub mod synth;

pub use format::{read_feature_file, write_feature_file, FeatureRecord, LabelMap, RgbImage, IGNORE};
pub use manifest::{load_validated, validate_manifest, DatasetManifest, ManifestRecord, Split, ValidationFailure};
pub use synth::{generate_synthetic_dataset, SynthSpec, SyntheticImage, SyntheticWorld};
