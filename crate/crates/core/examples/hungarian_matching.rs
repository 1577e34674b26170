//! Match unsupervised cluster ids to ground-truth classes and score them.

use cause_seg::eval::{assignment_value, evaluate, hungarian_match};
use cause_seg::features::LabelMap;

fn main() -> cause_seg::Result<()> {
    // counts[pred * n + truth]
    let counts = [
        5, 40, 2, //
        30, 1, 4, //
        0, 3, 50,
    ];
    let perm = hungarian_match(&counts, 3)?;
    println!("cluster -> class: {perm:?}, matched pixels {}", assignment_value(&counts, 3, &perm));

    // the same idea through the metrics: cluster ids are an arbitrary relabelling
    let truth = LabelMap::new(2, 6, vec![0, 0, 1, 1, 2, 2, 0, 0, 1, 1, 2, 2])?;
    let pred = LabelMap::new(2, 6, vec![2, 2, 0, 0, 1, 1, 2, 2, 0, 0, 1, 2])?;
    let report = evaluate(&[pred], &[truth], 3)?;
    println!(
        "mIoU {:.4}, pAcc {:.4}, matched {:?}, per class {:?}",
        report.miou, report.pacc, report.matched_permutation, report.per_class_iou
    );
    Ok(())
}
