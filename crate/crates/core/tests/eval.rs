mod common;

use cause_seg::eval::{
    assignment_value, crf_marginals, evaluate, hungarian_match, score_confusion, ConfusionMatrix, CrfParams,
};
use cause_seg::features::{LabelMap, RgbImage};
use cause_seg::RngStream;
use common::*;
use proptest::prelude::*;

#[test]
fn hungarian_matches_enumeration_on_5x5() {
    let mut rng = RngStream::new(17, "hung5");
    for trial in 0..200 {
        let counts: Vec<u64> = (0..25).map(|_| rng.index(50) as u64).collect();
        let perm = hungarian_match(&counts, 5).unwrap();
        assert_eq!(assignment_value(&counts, 5, &perm), brute_force_assignment(&counts, 5), "trial {trial}");
    }
}

#[test]
fn all_equal_matrix_gives_n_times_value() {
    let perm = hungarian_match(&[7; 16], 4).unwrap();
    assert_eq!(assignment_value(&[7; 16], 4, &perm), 28);
}

#[test]
fn metrics_match_set_arithmetic() {
    let mut rng = RngStream::new(4, "metrics");
    for _ in 0..50 {
        let pred: Vec<u16> = (0..400).map(|_| rng.index(4) as u16).collect();
        let truth: Vec<u16> = (0..400).map(|_| rng.index(4) as u16).collect();
        let report = evaluate(
            &[LabelMap::new(20, 20, pred.clone()).unwrap()],
            &[LabelMap::new(20, 20, truth.clone()).unwrap()],
            4,
        )
        .unwrap();
        let (ious, pacc) = set_metrics(&pred, &truth, &report.matched_permutation, 4);
        assert_eq!(report.per_class_iou, ious);
        assert_eq!(report.pacc, pacc);
        let present: Vec<f64> = ious.iter().flatten().copied().collect();
        assert_eq!(report.miou, present.iter().sum::<f64>() / present.len() as f64);
    }
}

#[test]
fn crf_mean_field_tracks_exact_marginals() {
    let params = CrfParams::default();
    let (h, w) = (3, 4);
    let (mut agree, mut total) = (0, 0);
    for seed in 100..120u64 {
        let mut rng = RngStream::new(seed, "crf-exact");
        let colors: Vec<[u8; 3]> = (0..h * w).map(|_| [0; 3].map(|_: u8| rng.index(256) as u8)).collect();
        let unary: Vec<[f64; 2]> = (0..h * w)
            .map(|_| {
                let p = rng.uniform_range(0.05, 0.95);
                [-(1.0 - p).ln(), -p.ln()]
            })
            .collect();
        let rgb = RgbImage::new(h, w, colors.iter().flatten().copied().collect()).unwrap();
        let flat: Vec<f64> = unary.iter().flatten().copied().collect();
        let q = crf_marginals(&rgb, &flat, 2, &params, |_, _| {}).unwrap();
        let exact = exact_binary_marginals(&unary, &|i, j| crf_kernel(&colors, w, i, j, &params));
        for (i, m) in exact.iter().enumerate() {
            agree += usize::from((q[2 * i + 1] > q[2 * i]) == (m[1] > m[0]));
            total += 1;
        }
    }
    assert!(agree as f64 >= 0.9 * total as f64, "{agree}/{total}");
}

/// Number of permutations attaining the optimal matched total.
fn optimal_permutations(counts: &[u64], n: usize) -> usize {
    fn go(row: usize, n: usize, used: &mut [bool], counts: &[u64], acc: u64, best: u64, hits: &mut usize) {
        if row == n {
            *hits += usize::from(acc == best);
            return;
        }
        for j in 0..n {
            if !used[j] {
                used[j] = true;
                go(row + 1, n, used, counts, acc + counts[row * n + j], best, hits);
                used[j] = false;
            }
        }
    }
    let best = brute_force_assignment(counts, n);
    let mut hits = 0;
    go(0, n, &mut vec![false; n], counts, 0, best, &mut hits);
    hits
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn relabelling_clusters_leaves_scores_unchanged(seed in any::<u64>(), n in 2usize..6) {
        let mut rng = RngStream::new(seed, "relabel");
        let pred: Vec<u16> = (0..120).map(|_| rng.index(n) as u16).collect();
        let truth: Vec<u16> = (0..120).map(|_| rng.index(n) as u16).collect();
        let mut sigma: Vec<u16> = (0..n as u16).collect();
        rng.shuffle(&mut sigma);
        let relabelled: Vec<u16> = pred.iter().map(|&p| sigma[p as usize]).collect();
        let t = [LabelMap::new(10, 12, truth).unwrap()];
        let a = evaluate(&[LabelMap::new(10, 12, pred).unwrap()], &t, n).unwrap();
        let b = evaluate(&[LabelMap::new(10, 12, relabelled).unwrap()], &t, n).unwrap();
        // matched pixels are invariant; mIoU only when the optimum is unique
        prop_assert_eq!(a.pacc, b.pacc);
        if optimal_permutations(&a.confusion.as_ref().unwrap().counts, n) == 1 {
            prop_assert!((a.miou - b.miou).abs() < 1e-12);
        }
    }

    #[test]
    fn hungarian_beats_every_permutation(seed in any::<u64>(), n in 1usize..7) {
        let mut rng = RngStream::new(seed, "hung-prop");
        let counts: Vec<u64> = (0..n * n).map(|_| rng.index(1000) as u64).collect();
        let best = assignment_value(&counts, n, &hungarian_match(&counts, n).unwrap());
        for _ in 0..20 {
            let mut perm: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut perm);
            prop_assert!(assignment_value(&counts, n, &perm) <= best);
        }
    }

    #[test]
    fn confusion_scores_are_bounded(seed in any::<u64>()) {
        let mut rng = RngStream::new(seed, "bounded");
        let pred = LabelMap::new(8, 8, (0..64).map(|_| rng.index(3) as u16).collect()).unwrap();
        let truth = LabelMap::new(8, 8, (0..64).map(|_| rng.index(3) as u16).collect()).unwrap();
        let mut conf = ConfusionMatrix::new(3);
        conf.accumulate(&pred, &truth).unwrap();
        let r = score_confusion(&conf, &[0, 1, 2]).unwrap();
        prop_assert!((0.0..=1.0).contains(&r.miou) && (0.0..=1.0).contains(&r.pacc));
    }
}
