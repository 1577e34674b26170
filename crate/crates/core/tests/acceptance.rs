//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Runs without the libtest harness so the lines always print.

mod common;

use std::time::{Duration, Instant};

use cause_seg::clusterbook::{
    affinity, fit_clusterbook, modularity, modularity_and_gradient, modularity_of_assignment, modularity_with_kernel,
    AssignmentKernel, BookBuilder, BookConfig,
};
use cause_seg::eval::{
    assignment_value, crf_marginals, crf_refine, evaluate, hungarian_match, softmax_cross_entropy, CrfParams,
};
use cause_seg::features::{LabelMap, RgbImage, SynthSpec, SyntheticWorld};
use cause_seg::head::{MlpHead, Mode, B1, W1};
use cause_seg::kmeans::spherical_kmeans;
use cause_seg::pipeline::{evaluate_head, init_head, run_pipeline, PipelineConfig};
use cause_seg::train::{infonce, sample_anchors, ConceptBank, TrainConfig, Trainer};
use cause_seg::{DenseMatrix, RngStream};
use common::*;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut worst = [0.0f64; 4];
    for seed in 0..100u64 {
        let mut rng = RngStream::new(seed, "grad");

        // head: every parameter tensor and the input, through the projection
        let (n, c, r) = (4, 5, 3);
        let mut head = MlpHead::init(c, r, &mut rng).map_err(|e| e.to_string())?;
        for b in [1, 3, 5] {
            head.params[b] = random_matrix(1, head.params[b].cols(), &mut rng);
        }
        let t = random_matrix(n, c, &mut rng);
        let weights: Vec<f64> = (0..n * r).map(|_| rng.normal()).collect();
        let cache = head.forward_cache(&t, Mode::Train);
        let grads = head.backward(&cache, &weights).map_err(|e| e.to_string())?;
        for p in 0..6 {
            let base = head.params[p].clone();
            let mut probe = head.clone();
            let fd = central_differences_f32(
                base.as_slice(),
                1e-3,
                |vals| {
                    probe.params[p].as_mut_slice().copy_from_slice(vals);
                    head_functional(&probe, &t, Mode::Train, &weights)
                },
                |plus, minus| {
                    if p != W1 && p != B1 {
                        return false;
                    }
                    let mut a = head.clone();
                    a.params[p].as_mut_slice().copy_from_slice(plus);
                    let mut b = head.clone();
                    b.params[p].as_mut_slice().copy_from_slice(minus);
                    relu_pattern(&a, &t) != relu_pattern(&b, &t)
                },
            );
            let (num, ana): (Vec<f64>, Vec<f64>) =
                fd.iter().zip(&grads.params[p]).filter_map(|(f, &g)| f.map(|f| (f, g))).unzip();
            worst[0] = worst[0].max(rel_error(&ana, &num, 1e-6));
        }
        let fd_in = central_differences_f32(
            t.as_slice(),
            1e-3,
            |vals| head_functional(&head, &DenseMatrix::new(n, c, vals.to_vec()).unwrap(), Mode::Train, &weights),
            |plus, minus| {
                relu_pattern(&head, &DenseMatrix::new(n, c, plus.to_vec()).unwrap())
                    != relu_pattern(&head, &DenseMatrix::new(n, c, minus.to_vec()).unwrap())
            },
        );
        let (num, ana): (Vec<f64>, Vec<f64>) =
            fd_in.iter().zip(&grads.input).filter_map(|(f, &g)| f.map(|f| (f, g))).unzip();
        worst[0] = worst[0].max(rel_error(&ana, &num, 1e-6));

        // InfoNCE with respect to the anchor
        let dim = 6;
        let anchor: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        let rows = |count: usize, rng: &mut RngStream| -> Vec<Vec<f64>> {
            (0..count).map(|_| (0..dim).map(|_| rng.normal()).collect()).collect()
        };
        let pos = rows(1 + rng.index(4), &mut rng);
        let neg = rows(1 + rng.index(6), &mut rng);
        let term = infonce(&anchor, &pos, &neg, 0.1).ok_or("unexpected skip")?;
        let fd = central_differences_f64(&anchor, 1e-6, |a| infonce(a, &pos, &neg, 0.1).unwrap().log_p);
        worst[1] = worst[1].max(rel_error(&term.grad, &fd, 1e-8));

        // modularity with respect to the prototypes
        let t = random_matrix(10, 4, &mut rng);
        let m = random_matrix(3, 4, &mut rng);
        let Ok(stats) = affinity(&t) else { continue };
        let kernel = AssignmentKernel::Tanh { tau: 0.1 };
        let eval = modularity_and_gradient(&t, &m, &stats, kernel).map_err(|e| e.to_string())?;
        let signs = |mv: &[f32]| -> Vec<bool> {
            let mm = DenseMatrix::new(3, 4, mv.to_vec()).unwrap();
            cause_seg::clusterbook::assignment_matrix(&t, &mm).unwrap().iter().map(|&v| v > 0.0).collect()
        };
        let fd = central_differences_f32(
            m.as_slice(),
            2e-4,
            |mv| {
                let mm = DenseMatrix::new(3, 4, mv.to_vec()).unwrap();
                modularity_of_assignment(
                    &cause_seg::clusterbook::assignment_matrix(&t, &mm).unwrap(),
                    3,
                    &stats,
                    kernel,
                )
            },
            |plus, minus| signs(plus) != signs(minus),
        );
        let (num, ana): (Vec<f64>, Vec<f64>) =
            fd.iter().zip(&eval.gradient).filter_map(|(f, &g)| f.map(|f| (f, g))).unzip();
        worst[2] = worst[2].max(rel_error(&ana, &num, 1e-6));

        // linear probe softmax cross-entropy
        let (n, d, k) = (12, 4, 3);
        let x = random_matrix(n, d, &mut rng);
        let y: Vec<u16> = (0..n).map(|_| rng.index(k) as u16).collect();
        let w: Vec<f64> = (0..d * k).map(|_| rng.normal()).collect();
        let b: Vec<f64> = (0..k).map(|_| rng.normal()).collect();
        let g = softmax_cross_entropy(&w, &b, &x, &y, k).map_err(|e| e.to_string())?;
        let fd_w = central_differences_f64(&w, 1e-6, |w| softmax_cross_entropy(w, &b, &x, &y, k).unwrap().loss);
        let fd_b = central_differences_f64(&b, 1e-6, |b| softmax_cross_entropy(&w, b, &x, &y, k).unwrap().loss);
        worst[3] = worst[3].max(rel_error(&g.grad_w, &fd_w, 1e-8)).max(rel_error(&g.grad_b, &fd_b, 1e-8));
    }
    let elapsed = start.elapsed();
    let detail = format!(
        "max rel. error head {:.1e}, infonce {:.1e}, modularity {:.1e}, linear probe {:.1e}; {:.1?}",
        worst[0], worst[1], worst[2], worst[3], elapsed
    );
    check(
        worst[0] < 1e-3 && worst[1] < 1e-4 && worst[2] < 1e-3 && worst[3] < 1e-3 && elapsed < Duration::from_secs(30),
        detail,
    )
}

fn modularity_oracles() -> Outcome {
    let mut rng = RngStream::new(7, "mod-oracle");
    // constant assignment
    let t = random_matrix(12, 5, &mut rng);
    let stats = affinity(&t).map_err(|e| e.to_string())?;
    let row: Vec<f64> = (0..4).map(|_| rng.uniform()).collect();
    let constant: Vec<f64> = (0..12).flat_map(|_| row.clone()).collect();
    let h_const = modularity_of_assignment(&constant, 4, &stats, AssignmentKernel::Tanh { tau: 0.1 })
        .abs()
        .max(modularity_of_assignment(&constant, 4, &stats, AssignmentKernel::Linear).abs());

    // two disconnected cliques, hard assignment
    let e1 = [1.0f32, 0.0, 0.0];
    let e2 = [0.0f32, 1.0, 0.0];
    let t = DenseMatrix::from_rows(&[e1, e1, e1, e1, e2, e2, e2, e2]).unwrap();
    let labels = [0, 0, 0, 0, 1, 1, 1, 1];
    let oracle = delta_modularity(&t, &labels);
    let hard: Vec<f64> = labels.iter().flat_map(|&l| if l == 0 { [1.0, 0.0] } else { [0.0, 1.0] }).collect();
    let stats = affinity(&t).map_err(|e| e.to_string())?;
    let lib = modularity_of_assignment(&hard, 2, &stats, AssignmentKernel::Linear);
    let protos = DenseMatrix::from_rows(&[e1, e2]).unwrap();
    let via_protos = modularity_with_kernel(&t, &protos, AssignmentKernel::Linear).map_err(|e| e.to_string())?;

    // trace form vs plain double sum
    let mut worst = 0.0f64;
    let mut done = 0;
    while done < 50 {
        let n = 6 + rng.index(10);
        let c = 3 + rng.index(6);
        let k = 2 + rng.index(6);
        let t = random_matrix(n, c, &mut rng);
        let m = random_matrix(k, c, &mut rng);
        let Ok(h_tanh) = modularity(&t, &m, 0.1) else { continue };
        let h_lin = modularity_with_kernel(&t, &m, AssignmentKernel::Linear).map_err(|e| e.to_string())?;
        worst = worst
            .max((h_tanh - naive_modularity(&t, &m, Some(0.1))).abs())
            .max((h_lin - naive_modularity(&t, &m, None)).abs());
        done += 1;
    }
    check(
        h_const < 1e-9 && (oracle - 0.5).abs() < 1e-6 && (lib - 0.5).abs() < 1e-6 && (via_protos - 0.5).abs() < 1e-6 && worst < 1e-6,
        format!(
            "constant |H| {h_const:.1e}; cliques δ-form {oracle:.6}, library {lib:.6}, via prototypes {via_protos:.6}; \
             max |trace - double sum| {worst:.1e} over 50 instances"
        ),
    )
}

fn hungarian() -> Outcome {
    let start = Instant::now();
    let mut rng = RngStream::new(11, "hungarian");
    let mut mismatches = 0;
    for _ in 0..200 {
        let counts: Vec<u64> = (0..36).map(|_| rng.index(100) as u64).collect();
        let perm = hungarian_match(&counts, 6).map_err(|e| e.to_string())?;
        let mut seen = perm.clone();
        seen.sort_unstable();
        if seen != (0..6).collect::<Vec<_>>() || assignment_value(&counts, 6, &perm) != brute_force_assignment(&counts, 6) {
            mismatches += 1;
        }
    }
    let elapsed = start.elapsed();
    check(
        mismatches == 0 && elapsed < Duration::from_secs(5),
        format!("{mismatches}/200 mismatches vs 720-permutation enumeration; {elapsed:.1?}"),
    )
}

fn spherical_kmeans_checks() -> Outcome {
    let mut increases = 0;
    for seed in 0..50u64 {
        let mut rng = RngStream::new(seed, "km-data");
        let n = 20 + rng.index(80);
        let data = random_matrix(n, 2 + rng.index(8), &mut rng);
        let k = 2 + rng.index(6);
        let km = spherical_kmeans(&data, k, 100, &mut RngStream::new(seed, "km")).map_err(|e| e.to_string())?;
        increases += km.objective_trace.windows(2).filter(|w| w[1] > w[0]).count();
    }
    // three separated blobs
    let mut rng = RngStream::new(3, "blobs");
    let centers = [[1.0f64, 0.0, 0.0, 0.2], [0.0, 1.0, 0.1, 0.0], [0.0, 0.1, 0.0, 1.0]];
    let mut rows = Vec::new();
    let mut truth = Vec::new();
    for (ci, ctr) in centers.iter().enumerate() {
        for _ in 0..30 {
            rows.push(ctr.iter().map(|&v| (v + 0.05 * rng.normal()) as f32).collect::<Vec<_>>());
            truth.push(ci as u16);
        }
    }
    let data = DenseMatrix::from_rows(&rows).unwrap();
    let km = spherical_kmeans(&data, 3, 50, &mut RngStream::new(0, "km")).map_err(|e| e.to_string())?;
    let pred = LabelMap::new(1, 90, km.assignments.iter().map(|&a| a as u16).collect()).unwrap();
    let report = evaluate(&[pred], &[LabelMap::new(1, 90, truth).unwrap()], 3).map_err(|e| e.to_string())?;
    check(
        increases == 0 && report.miou == 1.0,
        format!("{increases} objective increases over 50 runs; 3-blob mIoU {:.3}", report.miou),
    )
}

fn crf_checks() -> Outcome {
    let params = CrfParams::default();
    let (h, w) = (3, 4);
    let mut agree = 0;
    let mut total = 0;
    let mut worst_norm = 0.0f64;
    let mut steps_seen = 0;
    for seed in 0..20u64 {
        let mut rng = RngStream::new(seed, "crf-enum");
        let base = [[40u8, 90, 200], [210, 120, 30]];
        let colors: Vec<[u8; 3]> = (0..h * w)
            .map(|_| base[rng.index(2)].map(|v| (v as i32 + rng.index(21) as i32 - 10).clamp(0, 255) as u8))
            .collect();
        let unary: Vec<[f64; 2]> = (0..h * w)
            .map(|_| {
                let p = rng.uniform_range(0.05, 0.95);
                [-(1.0 - p).ln(), -p.ln()]
            })
            .collect();
        let rgb = RgbImage::new(h, w, colors.iter().flatten().copied().collect()).unwrap();
        let flat: Vec<f64> = unary.iter().flatten().copied().collect();
        let q = crf_marginals(&rgb, &flat, 2, &params, |_, q| {
            steps_seen += 1;
            for row in q.chunks_exact(2) {
                worst_norm = worst_norm.max((row[0] + row[1] - 1.0).abs());
                if row.iter().any(|&v| v < 0.0) {
                    worst_norm = f64::INFINITY;
                }
            }
        })
        .map_err(|e| e.to_string())?;
        let exact = exact_binary_marginals(&unary, &|i, j| crf_kernel(&colors, w, i, j, &params));
        for (i, m) in exact.iter().enumerate() {
            let mf = usize::from(q[2 * i + 1] > q[2 * i]);
            let ex = usize::from(m[1] > m[0]);
            agree += usize::from(mf == ex);
            total += 1;
        }
    }
    let agreement = agree as f64 / total as f64;

    // zero pairwise weights leave any label map unchanged
    let mut rng = RngStream::new(5, "crf-id");
    let zero = CrfParams {
        w_appearance: 0.0,
        w_smooth: 0.0,
        ..CrfParams::default()
    };
    let mut identity = true;
    for _ in 0..10 {
        let rgb = RgbImage::new(6, 7, (0..6 * 7 * 3).map(|_| rng.index(256) as u8).collect()).unwrap();
        let lm = LabelMap::new(6, 7, (0..42).map(|_| rng.index(4) as u16).collect()).unwrap();
        identity &= crf_refine(&rgb, &lm, 4, &zero).map_err(|e| e.to_string())? == lm;
    }
    check(
        worst_norm <= 1e-6 && steps_seen == 200 && agreement >= 0.9 && identity,
        format!(
            "max |Σq - 1| {worst_norm:.1e} over {steps_seen} steps; argmax agreement with enumeration {:.1}% \
             ({agree}/{total}); zero-weight identity {identity}",
            100.0 * agreement
        ),
    )
}

fn small_book_and_records() -> (cause_seg::clusterbook::Clusterbook, Vec<cause_seg::features::FeatureRecord>) {
    let spec = SynthSpec {
        n_train: 12,
        n_val: 0,
        ..SynthSpec::default()
    };
    let world = SyntheticWorld::new(&spec).unwrap();
    let records: Vec<_> = (0..12).map(|i| world.render(i).record).collect();
    let cfg = BookConfig {
        k: 16,
        ..BookConfig::default()
    };
    let (book, _) = fit_clusterbook(records.iter().cloned().map(Ok), &cfg, &mut RngStream::new(0, "book")).unwrap();
    (book, records)
}

fn concept_bank() -> Outcome {
    let mut rng = RngStream::new(21, "bank");
    let (k, dim) = (6, 3);
    let mut bank = ConceptBank::new(k, 100, dim);
    let mut worst = 0;
    for _ in 0..1000 {
        let n = rng.index(500);
        let feats = random_matrix(n, dim, &mut rng);
        let ids: Vec<usize> = (0..n).map(|_| rng.index(k)).collect();
        bank.update(&feats, &ids, &mut rng).map_err(|e| e.to_string())?;
        worst = worst.max((0..k).map(|i| bank.occupancy(i)).max().unwrap());
    }

    // stop-gradient: a student update leaves teacher and bank untouched
    let (book, records) = small_book_and_records();
    let cfg = TrainConfig::default();
    let student = init_head(book.dim(), &cfg).map_err(|e| e.to_string())?;
    let mut trainer = Trainer::new(&book, student, cfg).map_err(|e| e.to_string())?;
    for rec in &records[..4] {
        trainer.step(rec).map_err(|e| e.to_string())?;
    }
    let bits = |m: &[DenseMatrix]| -> Vec<u32> { m.iter().flat_map(|p| p.as_slice().iter().map(|v| v.to_bits())).collect() };
    let bank_bits = |b: &ConceptBank| -> Vec<u32> {
        (0..b.k()).flat_map(|i| b.rows(i).flatten().map(|v| v.to_bits()).collect::<Vec<_>>()).collect()
    };
    let teacher_before = bits(&trainer.teacher.head().params);
    let bank_before = bank_bits(&trainer.bank);
    let student_before = bits(&trainer.student.params);
    trainer.student_update(&records[4]).map_err(|e| e.to_string())?.ok_or("no usable anchors")?;
    let frozen = bits(&trainer.teacher.head().params) == teacher_before && bank_bits(&trainer.bank) == bank_before;
    let moved = bits(&trainer.student.params) != student_before;
    check(
        worst <= 100 && frozen && moved && !bank_before.is_empty(),
        format!(
            "max occupancy {worst} after 1000 rounds; teacher+bank bit-identical across a student step: {frozen} \
             ({} bank rows), student moved: {moved}",
            bank_before.len() / 90
        ),
    )
}

fn anchor_sampling() -> Outcome {
    let mut bad = 0;
    for seed in 0..1000u64 {
        let mut rng = RngStream::new(seed, "anchor-test");
        let h = 4 * (1 + rng.index(8));
        let w = 4 * (1 + rng.index(8));
        let anchors = sample_anchors(h, w, 4, 4, &mut RngStream::new(seed, "anchors")).map_err(|e| e.to_string())?;
        if anchors.len() != h * w / 16 {
            bad += 1;
            continue;
        }
        let per_row = w / 4;
        for (m, &a) in anchors.iter().enumerate() {
            let (y, x) = (a / w, a % w);
            if y / 4 != m / per_row || x / 4 != m % per_row {
                bad += 1;
            }
        }
    }
    check(bad == 0, format!("{bad} violations over 1000 seeds (count = hw/16, anchor inside its window)"))
}

fn acceptance_config(out: &std::path::Path) -> PipelineConfig {
    let mut cfg = PipelineConfig::default().with_seed(0);
    cfg.synth = SynthSpec {
        n_classes: 5,
        subconcepts_per_class: 3,
        c: 64,
        grid: [16, 16],
        n_train: 200,
        n_val: 50,
        noise_sigma: 0.05,
        ..SynthSpec::default()
    };
    cfg.book.k = 64;
    cfg.out_dir = out.to_path_buf();
    cfg
}

fn end_to_end() -> Vec<(&'static str, Outcome)> {
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let cfg = acceptance_config(&dir.path().join("modularity"));
    let run = match run_pipeline(&cfg) {
        Ok(r) => r,
        Err(e) => return vec![("end-to-end synthetic", Err(e.to_string()))],
    };
    let elapsed = start.elapsed();
    let m = &run.metrics;
    let mut out = vec![(
        "end-to-end: trained pipeline mIoU >= 0.90, pAcc >= 0.95, < 5 min",
        check(
            m.miou >= 0.90 && m.pacc >= 0.95 && elapsed < Duration::from_secs(300),
            format!("mIoU {:.4}, pAcc {:.4}, full run {elapsed:.1?}", m.miou, m.pacc),
        ),
    )];

    let untrained = init_head(run.manifest.feature_dim, &cfg.train)
        .and_then(|h| evaluate_head(&run.manifest, &h, &cfg.infer, cfg.seed));
    out.push((
        "end-to-end: untrained head mIoU <= 0.60",
        match untrained {
            Ok(r) => check(r.miou <= 0.60, format!("mIoU {:.4}, pAcc {:.4}", r.miou, r.pacc)),
            Err(e) => Err(e.to_string()),
        },
    ));

    let mut km_cfg = acceptance_config(&dir.path().join("kmeanspp"));
    km_cfg.manifest = Some(dir.path().join("modularity/data/manifest.json"));
    km_cfg.book.builder = BookBuilder::KMeansPlusPlus;
    out.push((
        "end-to-end: mIoU(modularity book) >= mIoU(k-means++ book) - 0.02",
        match run_pipeline(&km_cfg) {
            Ok(km) => check(
                m.miou >= km.metrics.miou - 0.02,
                format!("modularity {:.4} vs k-means++ {:.4}", m.miou, km.metrics.miou),
            ),
            Err(e) => Err(e.to_string()),
        },
    ));

    let again = acceptance_config(&dir.path().join("rerun"));
    out.push((
        "determinism: identical seeds give byte-identical metrics JSON",
        match run_pipeline(&again) {
            Ok(_) => {
                let a = std::fs::read(dir.path().join("modularity/metrics.json")).unwrap();
                let b = std::fs::read(dir.path().join("rerun/metrics.json")).unwrap();
                check(a == b, format!("{} bytes, identical: {}", a.len(), a == b))
            }
            Err(e) => Err(e.to_string()),
        },
    ));
    out
}

fn main() {
    let fast: Vec<Criterion> = vec![
        ("gradient suite (head, infonce, modularity, linear probe) vs finite differences", gradient_suite),
        ("modularity oracles (constant, two cliques, double sum)", modularity_oracles),
        ("Hungarian vs brute force on 200 random 6x6", hungarian),
        ("spherical k-means: monotone objective, 3-blob recovery", spherical_kmeans_checks),
        ("CRF: normalization, exact-enumeration agreement, zero-weight identity", crf_checks),
        ("concept bank: capacity and stop-gradient", concept_bank),
        ("anchor sampling: hw/16 anchors inside their windows", anchor_sampling),
    ];
    let mut results: Vec<(&str, Outcome)> = fast.into_iter().map(|(name, f)| (name, f())).collect();
    results.extend(end_to_end());

    let mut failed = 0;
    for (name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("PASS  {name}  [{detail}]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}  [{detail}]");
            }
        }
    }
    println!("{} of {} acceptance criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
