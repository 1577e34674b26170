//! Full pipeline on the synthetic benchmark: generate, build the book, train,
//! infer with cluster probe and CRF, evaluate. Usage:
//! `cargo run --release --example end_to_end [out_dir] [seed]`.

use cause_seg::pipeline::{run_pipeline, PipelineConfig};

fn main() -> cause_seg::Result<()> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| "cause-example-run".into());
    let seed = args.next().map_or(0, |s| s.parse().expect("seed must be an integer"));
    let mut cfg = PipelineConfig::default().with_seed(seed);
    cfg.book.k = 64;
    cfg.out_dir = out.into();
    let start = std::time::Instant::now();
    let run = run_pipeline(&cfg)?;
    println!(
        "mIoU {:.4}, pAcc {:.4} in {:.1?}; artifacts in {}",
        run.metrics.miou,
        run.metrics.pacc,
        start.elapsed(),
        run.out_dir.display()
    );
    for (class, iou) in run.metrics.per_class_iou.iter().enumerate() {
        println!("  class {class}: IoU {}", iou.map_or("n/a".into(), |v| format!("{v:.4}")));
    }
    Ok(())
}
