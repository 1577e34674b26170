//! Train the segmentation head with the concept-wise contrastive objective
//! and watch same-class sub-concepts move together in output space.

use cause_seg::clusterbook::{fit_clusterbook, BookConfig};
use cause_seg::features::{SynthSpec, SyntheticImage, SyntheticWorld};
use cause_seg::head::{MlpHead, Mode};
use cause_seg::pipeline::init_head;
use cause_seg::tensor::cosine;
use cause_seg::train::{train, TrainConfig};
use cause_seg::RngStream;

/// Mean cosine of (same class, other sub-concept) pairs and of cross-class pairs.
fn similarities(images: &[SyntheticImage], head: &MlpHead) -> (f64, f64) {
    let (mut same, mut ns, mut diff, mut nd) = (0.0, 0.0, 0.0, 0.0);
    for img in images {
        let (y, _, _) = head.forward(&img.record.features, Mode::Infer).expect("shapes match");
        for i in (0..y.rows()).step_by(7) {
            for j in (0..y.rows()).step_by(11) {
                let c = cosine(y.row(i), y.row(j)).unwrap_or(0.0);
                if img.patch_class[i] != img.patch_class[j] {
                    diff += c;
                    nd += 1.0;
                } else if img.patch_prototype[i] != img.patch_prototype[j] {
                    same += c;
                    ns += 1.0;
                }
            }
        }
    }
    (same / ns, diff / nd)
}

fn main() -> cause_seg::Result<()> {
    let world = SyntheticWorld::new(&SynthSpec::default())?;
    let train_images: Vec<_> = (0..200).map(|i| world.render(i)).collect();
    let held_out: Vec<_> = (200..220).map(|i| world.render(i)).collect();
    let book_cfg = BookConfig {
        k: 64,
        ..BookConfig::default()
    };
    let records = || train_images.iter().map(|i| Ok(i.record.clone()));
    let (book, _) = fit_clusterbook(records(), &book_cfg, &mut RngStream::new(0, "book"))?;

    let cfg = TrainConfig {
        epochs: 2,
        ..TrainConfig::default()
    };
    let student = init_head(book.dim(), &cfg)?;
    let (s0, d0) = similarities(&held_out, &student);
    let out = train(records(), &book, student, &cfg)?;
    for e in &out.epochs {
        println!(
            "epoch {}: loss {:.4}, usable anchors {:.1}%",
            e.epoch,
            e.mean_loss,
            100.0 * e.usable_anchor_fraction()
        );
    }
    let (s1, d1) = similarities(&held_out, out.teacher.head());
    println!("held-out cosine   same class / other class");
    println!("  untrained       {s0:.3} / {d0:.3}");
    println!("  trained teacher {s1:.3} / {d1:.3}");
    println!("bank holds {} projected features", out.bank.total());
    Ok(())
}
