//! Supervised linear probe on frozen head outputs, before and after training.

use cause_seg::eval::LinearProbeConfig;
use cause_seg::features::{generate_synthetic_dataset, SynthSpec};
use cause_seg::pipeline::{build_book, init_head, probe_head, train_head};
use cause_seg::clusterbook::BookConfig;
use cause_seg::train::TrainConfig;

fn main() -> cause_seg::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let spec = SynthSpec {
        n_train: 100,
        n_val: 20,
        ..SynthSpec::default()
    };
    let manifest = generate_synthetic_dataset(&spec, dir.path())?;
    let book_cfg = BookConfig {
        k: 64,
        ..BookConfig::default()
    };
    let (book, _) = build_book(&manifest, &book_cfg, 0)?;
    let train_cfg = TrainConfig::default();
    let probe_cfg = LinearProbeConfig::default();

    let untrained = init_head(book.dim(), &train_cfg)?;
    let before = probe_head(&manifest, &untrained, &probe_cfg)?;
    let trained = train_head(&manifest, &book, &train_cfg)?;
    let after = probe_head(&manifest, trained.teacher.head(), &probe_cfg)?;
    println!("linear probe, untrained head: mIoU {:.4}, pAcc {:.4}", before.miou, before.pacc);
    println!("linear probe, trained head:   mIoU {:.4}, pAcc {:.4}", after.miou, after.pacc);
    Ok(())
}
