//! Stage functions wiring the modules into reproducible runs, plus the
//! end-to-end pipeline driven by one JSON config.

mod run_manifest;

pub use run_manifest::{sha256_file, RunManifest};

use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clusterbook::{fit_clusterbook, fit_clusterbook_kmeanspp, write_clusterbook, BookBuilder, BookConfig, Clusterbook, FitReport};
use crate::error::{Error, Result};
use crate::eval::{
    crf_refine, evaluate, fit_cluster_probe, linear_probe, predict_labels, write_label_payload, write_label_png,
    write_metrics_json, write_metrics_tsv, ClusterProbe, CrfParams, EvalReport, LinearProbeConfig,
};
use crate::features::{
    generate_synthetic_dataset, load_validated, read_feature_file, DatasetManifest, FeatureRecord, LabelMap, Split,
    SynthSpec, IGNORE,
};
use crate::head::{write_head_checkpoint, MlpHead, Mode};
use crate::rng::RngStream;
use crate::tensor::DenseMatrix;
use crate::train::{train, write_loss_trace, TrainConfig, TrainOutcome};

/// Environment variable that overrides the configured seed.
pub const SEED_ENV: &str = "CAUSE_SEED";

/// Which head produces outputs at inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum HeadChoice {
    #[default]
    Teacher,
    Student,
}

/// Settings of the inference path shared by `infer`, `eval` and `pipeline`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferConfig {
    /// Cluster count; `None` uses the manifest's class count.
    pub n_classes: Option<usize>,
    pub probe_iters: usize,
    /// `None` disables CRF refinement.
    pub crf: Option<CrfParams>,
    pub head: HeadChoice,
}

impl Default for InferConfig {
    fn default() -> Self {
        Self {
            n_classes: None,
            probe_iters: 100,
            crf: Some(CrfParams {
                tile: Some(16),
                ..CrfParams::default()
            }),
            head: HeadChoice::Teacher,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Existing dataset; when absent a synthetic one is generated from
    /// `synth` under `out_dir/data`.
    pub manifest: Option<PathBuf>,
    pub synth: SynthSpec,
    pub book: BookConfig,
    pub train: TrainConfig,
    pub infer: InferConfig,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub save_predictions: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            synth: SynthSpec::default(),
            book: BookConfig::default(),
            train: TrainConfig::default(),
            infer: InferConfig::default(),
            out_dir: PathBuf::from("cause-run"),
            seed: 0,
            save_predictions: false,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    /// Pushes `seed` into every seeded component.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.synth.seed = seed;
        self.train.seed = seed;
        self
    }

    /// Applies [`SEED_ENV`] when it is set.
    pub fn with_env_seed(self) -> Result<Self> {
        match env_seed()? {
            Some(s) => Ok(self.with_seed(s)),
            None => Ok(self),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.book.validate()?;
        self.train.validate()?;
        if let Some(crf) = &self.infer.crf {
            crf.validate()?;
        }
        if self.manifest.is_none() {
            self.synth.validate()?;
        }
        Ok(())
    }
}

/// Seed from [`SEED_ENV`], if set.
pub fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::InvalidArgument(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn split_records(manifest: &DatasetManifest, split: Split) -> impl Iterator<Item = Result<FeatureRecord>> + Clone {
    manifest.paths(split).into_iter().map(|p| read_feature_file(&p))
}

/// Step 1: clusterbook from the training split.
pub fn build_book(manifest: &DatasetManifest, cfg: &BookConfig, seed: u64) -> Result<(Clusterbook, FitReport)> {
    let mut rng = RngStream::new(seed, "book");
    let records = split_records(manifest, Split::Train);
    match cfg.builder {
        BookBuilder::Modularity => fit_clusterbook(records, cfg, &mut rng),
        BookBuilder::KMeansPlusPlus => {
            let book = fit_clusterbook_kmeanspp(records, cfg, &mut rng)?;
            Ok((book, FitReport::default()))
        }
    }
}

/// Freshly initialized head for features of dimension `c`.
pub fn init_head(c: usize, cfg: &TrainConfig) -> Result<MlpHead> {
    MlpHead::init(c, cfg.out_dim, &mut RngStream::new(cfg.seed, "head-init"))
}

/// Step 2: contrastive training on the training split.
pub fn train_head(manifest: &DatasetManifest, book: &Clusterbook, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let head = init_head(book.dim(), cfg)?;
    train(split_records(manifest, Split::Train), book, head, cfg)
}

/// Head outputs (pre-projection) for one record.
pub fn head_outputs(head: &MlpHead, record: &FeatureRecord) -> Result<DenseMatrix> {
    Ok(head.forward(&record.features, Mode::Infer)?.0)
}

/// Predicted label maps for one split together with the fitted probe.
#[derive(Debug, Clone)]
pub struct Inference {
    pub probe: ClusterProbe,
    pub image_ids: Vec<String>,
    pub predictions: Vec<LabelMap>,
    pub truths: Vec<Option<LabelMap>>,
}

/// Steps (a)–(d): cluster probe on pooled head outputs, upsampling,
/// nearest centroid and optional CRF refinement.
pub fn infer(manifest: &DatasetManifest, split: Split, head: &MlpHead, cfg: &InferConfig, seed: u64) -> Result<Inference> {
    let records = manifest.load_split(split)?;
    if records.is_empty() {
        return Err(Error::InvalidArgument(format!("no {split:?} records in the manifest")));
    }
    let n_classes = cfg.n_classes.unwrap_or(manifest.classes);
    let outputs: Vec<DenseMatrix> = records.iter().map(|r| head_outputs(head, r)).collect::<Result<_>>()?;
    let pooled = DenseMatrix::vstack(&outputs.iter().collect::<Vec<_>>())?;
    let probe = fit_cluster_probe(&pooled, n_classes, cfg.probe_iters, &mut RngStream::new(seed, "probe"))?;
    if records.iter().any(|r| r.rgb.is_none()) && cfg.crf.is_some() {
        warn!("records without RGB are not CRF-refined");
    }
    let predictions = records
        .par_iter()
        .zip(&outputs)
        .map(|(rec, y)| {
            let (ih, iw) = rec.image_size();
            let coarse = predict_labels(y, rec.h, rec.w, &probe, ih, iw)?;
            match (&cfg.crf, &rec.rgb) {
                (Some(p), Some(rgb)) => crf_refine(rgb, &coarse, n_classes, p),
                _ => Ok(coarse),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Inference {
        probe,
        image_ids: records.iter().map(|r| r.image_id.clone()).collect(),
        predictions,
        truths: records.into_iter().map(|r| r.labels).collect(),
    })
}

/// Steps (e)–(f) over every labelled prediction.
pub fn evaluate_inference(inf: &Inference, n_classes: usize) -> Result<EvalReport> {
    let (preds, truths): (Vec<LabelMap>, Vec<LabelMap>) = inf
        .predictions
        .iter()
        .zip(&inf.truths)
        .filter_map(|(p, t)| t.as_ref().map(|t| (p.clone(), t.clone())))
        .unzip();
    if truths.is_empty() {
        return Err(Error::InvalidArgument("no ground-truth labels to evaluate against".into()));
    }
    evaluate(&preds, &truths, n_classes)
}

/// Inference plus scoring on the validation split.
pub fn evaluate_head(manifest: &DatasetManifest, head: &MlpHead, cfg: &InferConfig, seed: u64) -> Result<EvalReport> {
    let inf = infer(manifest, Split::Val, head, cfg, seed)?;
    evaluate_inference(&inf, cfg.n_classes.unwrap_or(manifest.classes))
}

/// Pooled head outputs with patch-level majority labels for one split.
pub fn patch_dataset(manifest: &DatasetManifest, split: Split, head: &MlpHead) -> Result<(DenseMatrix, Vec<u16>)> {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for rec in manifest.load_split(split)? {
        rows.push(head_outputs(head, &rec)?);
        match &rec.labels {
            Some(l) => labels.extend(l.downsample_majority(rec.h, rec.w)),
            None => labels.extend(std::iter::repeat_n(IGNORE, rec.h * rec.w)),
        }
    }
    Ok((DenseMatrix::vstack(&rows.iter().collect::<Vec<_>>())?, labels))
}

/// Supervised linear probe: train split → val split at patch resolution.
pub fn probe_head(manifest: &DatasetManifest, head: &MlpHead, cfg: &LinearProbeConfig) -> Result<EvalReport> {
    let (tx, ty) = patch_dataset(manifest, Split::Train, head)?;
    let (vx, vy) = patch_dataset(manifest, Split::Val, head)?;
    Ok(linear_probe(&tx, &ty, &vx, &vy, manifest.classes, cfg)?.1)
}

/// Writes each prediction as an indexed PNG and a raw label payload.
pub fn save_predictions(inf: &Inference, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for (id, pred) in inf.image_ids.iter().zip(&inf.predictions) {
        let png = dir.join(format!("{id}.png"));
        let raw = dir.join(format!("{id}.caulabel"));
        write_label_png(pred, &png)?;
        write_label_payload(pred, &raw)?;
        written.extend([png, raw]);
    }
    Ok(written)
}

/// Outcome of [`run_pipeline`].
#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub metrics: EvalReport,
    pub book_report: FitReport,
    pub train: TrainOutcome,
    pub manifest: DatasetManifest,
    pub out_dir: PathBuf,
}

/// Generate or load → build book → train → infer → evaluate. Failures are
/// tagged with the stage name. Artifacts land in `cfg.out_dir`.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutcome> {
    cfg.validate()?;
    let out = &cfg.out_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut run = RunManifest::new("pipeline", cfg, cfg.seed)?;

    let manifest = match &cfg.manifest {
        Some(path) => {
            let m = load_validated(path).map_err(|e| e.in_stage("load"))?;
            run.add_input(path).map_err(|e| e.in_stage("load"))?;
            m
        }
        None => generate_synthetic_dataset(&cfg.synth, &out.join("data")).map_err(|e| e.in_stage("gen-synth"))?,
    };
    info!("dataset {}: {} records", manifest.name, manifest.records.len());

    let (book, book_report) = build_book(&manifest, &cfg.book, cfg.seed).map_err(|e| e.in_stage("build-book"))?;
    let book_path = out.join("book.causebook");
    write_clusterbook(&book, &book_path).map_err(|e| e.in_stage("build-book"))?;

    let outcome = train_head(&manifest, &book, &cfg.train).map_err(|e| e.in_stage("train"))?;
    let head_path = out.join("head.causehead");
    write_head_checkpoint(&outcome.student, &outcome.teacher, &head_path).map_err(|e| e.in_stage("train"))?;
    write_loss_trace(&outcome.epochs, &out.join("loss.tsv")).map_err(|e| e.in_stage("train"))?;

    let head = match cfg.infer.head {
        HeadChoice::Teacher => outcome.teacher.head(),
        HeadChoice::Student => &outcome.student,
    };
    let inf = infer(&manifest, Split::Val, head, &cfg.infer, cfg.seed).map_err(|e| e.in_stage("infer"))?;
    if cfg.save_predictions {
        save_predictions(&inf, &out.join("predictions")).map_err(|e| e.in_stage("infer"))?;
    }
    let n_classes = cfg.infer.n_classes.unwrap_or(manifest.classes);
    let metrics = evaluate_inference(&inf, n_classes).map_err(|e| e.in_stage("eval"))?;
    write_metrics_json(&metrics, &out.join("metrics.json")).map_err(|e| e.in_stage("eval"))?;
    write_metrics_tsv(&metrics, &out.join("metrics.tsv")).map_err(|e| e.in_stage("eval"))?;

    for name in ["book.causebook", "head.causehead", "loss.tsv", "metrics.json", "metrics.tsv"] {
        run.add_output(&out.join(name));
    }
    run.write(&out.join("run_manifest.json"))?;
    Ok(PipelineOutcome {
        metrics,
        book_report,
        train: outcome,
        manifest,
        out_dir: out.clone(),
    })
}
