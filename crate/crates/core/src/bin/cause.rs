//! `cause`: command-line front end over the `cause_seg` library.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use cause_seg::clusterbook::{read_clusterbook, write_clusterbook, BookBuilder, BookConfig};
use cause_seg::eval::{evaluate, read_label_payload, write_metrics_json, write_metrics_tsv, LinearProbeConfig};
use cause_seg::features::{generate_synthetic_dataset, load_validated, Split, SynthSpec};
use cause_seg::head::{read_head_checkpoint, write_head_checkpoint};
use cause_seg::pipeline::{
    build_book, env_seed, infer, probe_head, read_json, run_pipeline, save_predictions, train_head, HeadChoice,
    InferConfig, PipelineConfig, RunManifest,
};
use cause_seg::train::{write_loss_trace, TrainConfig};
use cause_seg::{Error, Result};

#[derive(Parser)]
#[command(name = "cause", version, about = "Concept-clusterbook unsupervised semantic segmentation")]
struct Cli {
    /// Worker thread cap for parallel sections (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic class/sub-concept dataset.
    GenSynth(GenSynthArgs),
    /// Build the concept clusterbook from the training split.
    BuildBook(BuildBookArgs),
    /// Train the segmentation head with the concept-wise contrastive loss.
    Train(TrainArgs),
    /// Predict label maps: cluster probe, upsampling, nearest centroid, CRF.
    Infer(InferArgs),
    /// Score saved predictions against ground truth after Hungarian matching.
    Eval(EvalArgs),
    /// Supervised linear probe on frozen head outputs.
    Probe(ProbeArgs),
    /// Run generate/load, build-book, train, infer and eval in order.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct GenSynthArgs {
    /// Output directory for the feature files and manifest.json.
    #[arg(long)]
    out: PathBuf,
    /// JSON SynthSpec; flags override its fields.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Number of classes [default: 5].
    #[arg(long)]
    n_classes: Option<usize>,
    /// Sub-concepts per class [default: 3].
    #[arg(long)]
    subconcepts: Option<usize>,
    /// Feature dimension c [default: 64].
    #[arg(long)]
    c: Option<usize>,
    /// Patch grid height [default: 16].
    #[arg(long)]
    grid_h: Option<usize>,
    /// Patch grid width [default: 16].
    #[arg(long)]
    grid_w: Option<usize>,
    /// Training images [default: 200].
    #[arg(long)]
    n_train: Option<usize>,
    /// Validation images [default: 50].
    #[arg(long)]
    n_val: Option<usize>,
    /// Feature noise standard deviation [default: 0.05].
    #[arg(long)]
    noise_sigma: Option<f64>,
    /// Minimum pairwise prototype angle, degrees [default: 45].
    #[arg(long)]
    separation: Option<f64>,
    /// Cosine between sub-concepts of one class [default: 0.5].
    #[arg(long)]
    subconcept_cosine: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum BuilderArg {
    Modularity,
    Kmeanspp,
}

impl From<BuilderArg> for BookBuilder {
    fn from(b: BuilderArg) -> Self {
        match b {
            BuilderArg::Modularity => BookBuilder::Modularity,
            BuilderArg::Kmeanspp => BookBuilder::KMeansPlusPlus,
        }
    }
}

#[derive(Args)]
struct BuildBookArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Output .causebook path.
    #[arg(long)]
    out: PathBuf,
    /// JSON BookConfig; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of concept prototypes [default: 2048].
    #[arg(long)]
    k: Option<usize>,
    /// Modularity temperature τ [default: 0.1].
    #[arg(long)]
    tau_mod: Option<f64>,
    /// Adam learning rate [default: 0.001].
    #[arg(long)]
    lr: Option<f64>,
    /// Passes over the training split [default: 1].
    #[arg(long)]
    epochs: Option<usize>,
    /// Book builder [default: modularity].
    #[arg(long, value_enum)]
    builder: Option<BuilderArg>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    book: PathBuf,
    /// Output .causehead path (student and EMA teacher).
    #[arg(long)]
    out: PathBuf,
    /// JSON TrainConfig; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Positive relaxation φ⁺ [default: 0.3].
    #[arg(long, allow_hyphen_values = true)]
    phi_pos: Option<f64>,
    /// Negative relaxation φ⁻ [default: 0.1].
    #[arg(long, allow_hyphen_values = true)]
    phi_neg: Option<f64>,
    /// InfoNCE temperature [default: 0.1].
    #[arg(long)]
    tau_nce: Option<f64>,
    /// Adam learning rate [default: 0.001].
    #[arg(long)]
    lr: Option<f64>,
    /// EMA rate λ of the teacher [default: 0.99].
    #[arg(long)]
    lambda: Option<f64>,
    /// Passes over the training split [default: 1].
    #[arg(long)]
    epochs: Option<usize>,
    /// Bank rows per concept [default: 100].
    #[arg(long)]
    bank_capacity: Option<usize>,
    /// Head output dimension r [default: 90].
    #[arg(long)]
    out_dim: Option<usize>,
    /// Anchor window side [default: 4].
    #[arg(long)]
    window: Option<usize>,
    /// Anchor window stride [default: 4].
    #[arg(long)]
    stride: Option<usize>,
    /// Per-epoch loss trace (TSV) [default: <out>.loss.tsv].
    #[arg(long)]
    loss_trace: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum HeadArg {
    Teacher,
    Student,
}

impl From<HeadArg> for HeadChoice {
    fn from(h: HeadArg) -> Self {
        match h {
            HeadArg::Teacher => HeadChoice::Teacher,
            HeadArg::Student => HeadChoice::Student,
        }
    }
}

#[derive(Args)]
struct InferFlags {
    /// JSON InferConfig; flags override its fields.
    #[arg(long)]
    infer_config: Option<PathBuf>,
    /// Cluster count [default: the manifest's class count].
    #[arg(long)]
    n_classes: Option<usize>,
    /// Lloyd iterations of the cluster probe [default: 100].
    #[arg(long)]
    probe_iters: Option<usize>,
    /// Mean-field steps of the CRF [default: 10].
    #[arg(long)]
    crf_steps: Option<usize>,
    /// Tile side for images above the dense CRF budget [default: 16].
    #[arg(long)]
    crf_tile: Option<usize>,
    /// Skip CRF refinement.
    #[arg(long)]
    no_crf: bool,
    /// Head used at inference [default: teacher].
    #[arg(long, value_enum)]
    use_head: Option<HeadArg>,
}

impl InferFlags {
    /// Overrides `cfg` (or the `--infer-config` file, when given) with flags.
    fn apply(&self, cfg: &mut InferConfig) -> Result<()> {
        if let Some(p) = &self.infer_config {
            *cfg = read_json(p)?;
        }
        set(&mut cfg.n_classes, self.n_classes.map(Some));
        set(&mut cfg.probe_iters, self.probe_iters);
        if let Some(crf) = cfg.crf.as_mut() {
            set(&mut crf.steps, self.crf_steps);
            set(&mut crf.tile, self.crf_tile.map(Some));
        }
        if self.no_crf {
            cfg.crf = None;
        }
        if let Some(h) = self.use_head {
            cfg.head = h.into();
        }
        match &cfg.crf {
            Some(crf) => crf.validate(),
            None => Ok(()),
        }
    }
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    head: PathBuf,
    /// Output directory for PNG and raw label maps.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "val")]
    split: SplitArg,
    #[command(flatten)]
    flags: InferFlags,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Directory written by `cause infer`.
    #[arg(long)]
    predictions: PathBuf,
    /// Output directory for metrics.json and metrics.tsv.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "val")]
    split: SplitArg,
    /// Class count [default: the manifest's].
    #[arg(long)]
    n_classes: Option<usize>,
}

#[derive(Args)]
struct ProbeArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    head: PathBuf,
    /// Output directory for the probe metrics.
    #[arg(long)]
    out: PathBuf,
    /// Adam learning rate of the probe [default: 0.01].
    #[arg(long)]
    lr: Option<f64>,
    /// Full-batch steps [default: 300].
    #[arg(long)]
    steps: Option<usize>,
    /// Head to probe [default: teacher].
    #[arg(long, value_enum)]
    use_head: Option<HeadArg>,
}

#[derive(Args)]
struct PipelineArgs {
    /// JSON PipelineConfig; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Existing dataset manifest [default: generate synthetic data].
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Output directory [default: cause-run].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of concept prototypes [default: 2048].
    #[arg(long)]
    k: Option<usize>,
    /// Book builder [default: modularity].
    #[arg(long, value_enum)]
    builder: Option<BuilderArg>,
    /// Training epochs for the head [default: 1].
    #[arg(long)]
    epochs: Option<usize>,
    #[command(flatten)]
    infer: InferFlags,
    /// Write predicted label maps under <out>/predictions.
    #[arg(long)]
    save_predictions: bool,
    #[arg(long)]
    seed: Option<u64>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

/// Config < `CAUSE_SEED` < `--seed`.
fn resolve_seed(config: u64, flag: Option<u64>) -> Result<u64> {
    Ok(flag.or(env_seed()?).unwrap_or(config))
}

fn load_or_default<T: serde::de::DeserializeOwned + Default>(path: &Option<PathBuf>) -> Result<T> {
    path.as_deref().map_or_else(|| Ok(T::default()), read_json)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn with_ext(path: &Path, ext: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(ext);
    PathBuf::from(s)
}

fn gen_synth(a: GenSynthArgs) -> Result<()> {
    let mut spec: SynthSpec = load_or_default(&a.spec)?;
    set(&mut spec.n_classes, a.n_classes);
    set(&mut spec.subconcepts_per_class, a.subconcepts);
    set(&mut spec.c, a.c);
    set(&mut spec.grid[0], a.grid_h);
    set(&mut spec.grid[1], a.grid_w);
    set(&mut spec.n_train, a.n_train);
    set(&mut spec.n_val, a.n_val);
    set(&mut spec.noise_sigma, a.noise_sigma);
    set(&mut spec.prototype_separation, a.separation);
    set(&mut spec.subconcept_cosine, a.subconcept_cosine);
    spec.seed = resolve_seed(spec.seed, a.seed)?;
    let manifest = generate_synthetic_dataset(&spec, &a.out)?;
    let mut run = RunManifest::new("gen-synth", &spec, spec.seed)?;
    run.add_output(&a.out.join("manifest.json"));
    run.write(&a.out.join("run_manifest.json"))?;
    println!("wrote {} records to {}", manifest.records.len(), a.out.display());
    Ok(())
}

fn build_book_cmd(a: BuildBookArgs) -> Result<()> {
    let mut cfg: BookConfig = load_or_default(&a.config)?;
    set(&mut cfg.k, a.k);
    set(&mut cfg.tau_mod, a.tau_mod);
    set(&mut cfg.lr, a.lr);
    set(&mut cfg.epochs, a.epochs);
    set(&mut cfg.builder, a.builder.map(BookBuilder::from));
    cfg.validate()?;
    let seed = resolve_seed(0, a.seed)?;
    let manifest = load_validated(&a.manifest)?;
    let (book, report) = build_book(&manifest, &cfg, seed)?;
    write_clusterbook(&book, &a.out)?;
    let mut run = RunManifest::new("build-book", &cfg, seed)?;
    run.add_input(&a.manifest)?;
    run.add_output(&a.out);
    run.write(&with_ext(&a.out, ".run.json"))?;
    println!(
        "clusterbook k={} c={} ({} records used, {} skipped) -> {}",
        book.k(),
        book.dim(),
        report.records_used,
        report.records_skipped,
        a.out.display()
    );
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let mut cfg: TrainConfig = load_or_default(&a.config)?;
    set(&mut cfg.phi_pos, a.phi_pos);
    set(&mut cfg.phi_neg, a.phi_neg);
    set(&mut cfg.tau_nce, a.tau_nce);
    set(&mut cfg.lr, a.lr);
    set(&mut cfg.lambda, a.lambda);
    set(&mut cfg.epochs, a.epochs);
    set(&mut cfg.bank_capacity, a.bank_capacity);
    set(&mut cfg.out_dim, a.out_dim);
    set(&mut cfg.window, a.window);
    set(&mut cfg.stride, a.stride);
    cfg.seed = resolve_seed(cfg.seed, a.seed)?;
    cfg.validate()?;
    let manifest = load_validated(&a.manifest)?;
    let book = read_clusterbook(&a.book)?;
    let outcome = train_head(&manifest, &book, &cfg)?;
    write_head_checkpoint(&outcome.student, &outcome.teacher, &a.out)?;
    let trace = a.loss_trace.unwrap_or_else(|| with_ext(&a.out, ".loss.tsv"));
    write_loss_trace(&outcome.epochs, &trace)?;
    let mut run = RunManifest::new("train", &cfg, cfg.seed)?;
    run.add_input(&a.manifest)?;
    run.add_input(&a.book)?;
    run.add_output(&a.out);
    run.add_output(&trace);
    run.write(&with_ext(&a.out, ".run.json"))?;
    for e in &outcome.epochs {
        println!(
            "epoch {}: mean loss {:.4}, usable anchors {:.3}",
            e.epoch,
            e.mean_loss,
            e.usable_anchor_fraction()
        );
    }
    Ok(())
}

fn pick_head(path: &Path, choice: HeadChoice) -> Result<cause_seg::head::MlpHead> {
    let (student, teacher) = read_head_checkpoint(path)?;
    Ok(match choice {
        HeadChoice::Teacher => teacher.into_head(),
        HeadChoice::Student => student,
    })
}

fn infer_cmd(a: InferArgs) -> Result<()> {
    let mut cfg = InferConfig::default();
    a.flags.apply(&mut cfg)?;
    let seed = resolve_seed(0, a.seed)?;
    let manifest = load_validated(&a.manifest)?;
    let head = pick_head(&a.head, cfg.head)?;
    let inf = infer(&manifest, a.split.into(), &head, &cfg, seed)?;
    create_dir(&a.out)?;
    let written = save_predictions(&inf, &a.out)?;
    let mut run = RunManifest::new("infer", &cfg, seed)?;
    run.add_input(&a.manifest)?;
    run.add_input(&a.head)?;
    written.iter().for_each(|p| run.add_output(p));
    run.write(&a.out.join("run_manifest.json"))?;
    println!("wrote {} label maps to {}", inf.predictions.len(), a.out.display());
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let manifest = load_validated(&a.manifest)?;
    let n_classes = a.n_classes.unwrap_or(manifest.classes);
    let mut run = RunManifest::new("eval", &serde_json::json!({ "n_classes": n_classes }), 0)?;
    let (mut preds, mut truths) = (Vec::new(), Vec::new());
    for rec in manifest.load_split(a.split.into())? {
        let Some(gt) = rec.labels else { continue };
        let path = a.predictions.join(format!("{}.caulabel", rec.image_id));
        preds.push(read_label_payload(&path)?);
        run.add_input(&path)?;
        truths.push(gt);
    }
    if truths.is_empty() {
        return Err(Error::InvalidArgument("no labelled records in the split".into()));
    }
    let report = evaluate(&preds, &truths, n_classes)?;
    create_dir(&a.out)?;
    write_metrics_json(&report, &a.out.join("metrics.json"))?;
    write_metrics_tsv(&report, &a.out.join("metrics.tsv"))?;
    run.add_input(&a.manifest)?;
    run.add_output(&a.out.join("metrics.json"));
    run.add_output(&a.out.join("metrics.tsv"));
    run.write(&a.out.join("run_manifest.json"))?;
    println!("mIoU {:.4}  pAcc {:.4}", report.miou, report.pacc);
    Ok(())
}

fn probe_cmd(a: ProbeArgs) -> Result<()> {
    let mut cfg = LinearProbeConfig::default();
    set(&mut cfg.lr, a.lr);
    set(&mut cfg.steps, a.steps);
    let choice = a.use_head.map_or(HeadChoice::Teacher, HeadChoice::from);
    let manifest = load_validated(&a.manifest)?;
    let head = pick_head(&a.head, choice)?;
    let report = probe_head(&manifest, &head, &cfg)?;
    create_dir(&a.out)?;
    write_metrics_json(&report, &a.out.join("probe_metrics.json"))?;
    write_metrics_tsv(&report, &a.out.join("probe_metrics.tsv"))?;
    let mut run = RunManifest::new("probe", &cfg, 0)?;
    run.add_input(&a.manifest)?;
    run.add_input(&a.head)?;
    run.add_output(&a.out.join("probe_metrics.json"));
    run.write(&a.out.join("run_manifest.json"))?;
    println!("linear probe mIoU {:.4}  pAcc {:.4}", report.miou, report.pacc);
    Ok(())
}

fn pipeline_cmd(a: PipelineArgs) -> Result<()> {
    let mut cfg: PipelineConfig = load_or_default(&a.config)?;
    if a.manifest.is_some() {
        cfg.manifest = a.manifest;
    }
    set(&mut cfg.out_dir, a.out);
    set(&mut cfg.book.k, a.k);
    set(&mut cfg.book.builder, a.builder.map(BookBuilder::from));
    set(&mut cfg.train.epochs, a.epochs);
    a.infer.apply(&mut cfg.infer)?;
    cfg.save_predictions |= a.save_predictions;
    let seed = resolve_seed(cfg.seed, a.seed)?;
    let cfg = cfg.with_seed(seed);
    let outcome = run_pipeline(&cfg)?;
    info!("artifacts in {}", outcome.out_dir.display());
    println!(
        "mIoU {:.4}  pAcc {:.4}  (metrics in {})",
        outcome.metrics.miou,
        outcome.metrics.pacc,
        outcome.out_dir.join("metrics.json").display()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            eprintln!("error: could not size the thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::GenSynth(a) => gen_synth(a),
        Command::BuildBook(a) => build_book_cmd(a),
        Command::Train(a) => train_cmd(a),
        Command::Infer(a) => infer_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Probe(a) => probe_cmd(a),
        Command::Pipeline(a) => pipeline_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
