//! Independent oracles shared by the integration tests and the acceptance
//! suite. Nothing here calls the library routine it is checking.

#![allow(dead_code)]

use cause_seg::head::{MlpHead, Mode};
use cause_seg::{DenseMatrix, RngStream};

pub fn random_matrix(rows: usize, cols: usize, rng: &mut RngStream) -> DenseMatrix {
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.normal()).collect();
    DenseMatrix::from_f64(rows, cols, &data).unwrap()
}

pub fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `‖a - b‖ / max(‖b‖, floor)`.
pub fn rel_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    l2(&d) / l2(b).max(floor)
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = l2(v);
    v.iter().map(|x| x / n).collect()
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    unit(a).iter().zip(unit(b)).map(|(x, y)| x * y).sum()
}

fn rows_f64(m: &DenseMatrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().map(|&v| v as f64).collect()).collect()
}

/// Central difference of `f` along every entry of an `f32` buffer, using the
/// step actually representable after rounding. Entries for which `skip`
/// returns true are reported as `None`.
pub fn central_differences_f32(
    values: &[f32],
    h: f32,
    mut f: impl FnMut(&[f32]) -> f64,
    mut skip: impl FnMut(&[f32], &[f32]) -> bool,
) -> Vec<Option<f64>> {
    let mut buf = values.to_vec();
    (0..values.len())
        .map(|i| {
            let x = values[i];
            buf[i] = x + h;
            let plus = buf.clone();
            let fp = f(&buf);
            buf[i] = x - h;
            let minus = buf.clone();
            let fm = f(&buf);
            buf[i] = x;
            let step = (x + h) as f64 - (x - h) as f64;
            if skip(&plus, &minus) {
                None
            } else {
                Some((fp - fm) / step)
            }
        })
        .collect()
}

/// Central difference of `f` on an `f64` vector.
pub fn central_differences_f64(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut buf = x.to_vec();
    (0..x.len())
        .map(|i| {
            buf[i] = x[i] + h;
            let fp = f(&buf);
            buf[i] = x[i] - h;
            let fm = f(&buf);
            buf[i] = x[i];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// `Σ w ⊙ out` of a head forward pass, recomputed in plain `f64` loops.
pub fn head_functional(head: &MlpHead, t: &DenseMatrix, mode: Mode, weights: &[f64]) -> f64 {
    let p: Vec<Vec<Vec<f64>>> = head.params.iter().map(rows_f64).collect();
    let (c, r) = (head.c, head.r);
    let mut total = 0.0;
    for (i, row) in rows_f64(t).iter().enumerate() {
        let hidden: Vec<f64> = (0..c)
            .map(|k| (p[1][0][k] + (0..c).map(|q| row[q] * p[0][q][k]).sum::<f64>()).max(0.0))
            .collect();
        let y: Vec<f64> = (0..r)
            .map(|k| p[3][0][k] + (0..c).map(|q| hidden[q] * p[2][q][k]).sum::<f64>())
            .collect();
        let out: Vec<f64> = match mode {
            Mode::Infer => y,
            Mode::Train => (0..r)
                .map(|k| p[5][0][k] + (0..r).map(|q| y[q] * p[4][q][k]).sum::<f64>())
                .collect(),
        };
        total += out.iter().zip(&weights[i * r..(i + 1) * r]).map(|(a, b)| a * b).sum::<f64>();
    }
    total
}

/// Signs of the hidden pre-activations; a flip between the two sides of a
/// difference means a ReLU kink was crossed.
pub fn relu_pattern(head: &MlpHead, t: &DenseMatrix) -> Vec<bool> {
    head.forward_cache(t, Mode::Infer).pre_hidden().iter().map(|&v| v > 0.0).collect()
}

/// Clamped-cosine affinity with zero diagonal, degrees and `2e`.
pub fn naive_graph(t: &DenseMatrix) -> (Vec<Vec<f64>>, Vec<f64>, f64) {
    let rows = rows_f64(t);
    let n = rows.len();
    let a: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 0.0 } else { cos(&rows[i], &rows[j]).max(0.0) }).collect())
        .collect();
    let d: Vec<f64> = a.iter().map(|r| r.iter().sum()).collect();
    let two_e = d.iter().sum();
    (a, d, two_e)
}

/// The objective as a plain double sum over patch pairs:
/// `(1/2e) Σ_ij (A_ij - d_i d_j / 2e) · κ(Σ_a C_ia C_ja)` with
/// `C = max(0, cos(T, M))`. `tau = None` is the unscaled relaxation.
pub fn naive_modularity(t: &DenseMatrix, m: &DenseMatrix, tau: Option<f64>) -> f64 {
    let (a, d, two_e) = naive_graph(t);
    let tr = rows_f64(t);
    let mr = rows_f64(m);
    let c: Vec<Vec<f64>> = tr.iter().map(|x| mr.iter().map(|y| cos(x, y).max(0.0)).collect()).collect();
    let n = tr.len();
    let mut h = 0.0;
    for i in 0..n {
        for j in 0..n {
            let g: f64 = c[i].iter().zip(&c[j]).map(|(x, y)| x * y).sum();
            let k = match tau {
                Some(tau) => (g / tau).tanh(),
                None => g,
            };
            h += (a[i][j] - d[i] * d[j] / two_e) * k;
        }
    }
    h / two_e
}

/// Classic modularity of a hard partition: `(1/2e) Σ_ij B_ij δ(c_i, c_j)`.
pub fn delta_modularity(t: &DenseMatrix, labels: &[usize]) -> f64 {
    let (a, d, two_e) = naive_graph(t);
    let n = labels.len();
    let mut h = 0.0;
    for i in 0..n {
        for j in 0..n {
            if labels[i] == labels[j] {
                h += a[i][j] - d[i] * d[j] / two_e;
            }
        }
    }
    h / two_e
}

/// Best assignment value by enumerating all permutations.
pub fn brute_force_assignment(counts: &[u64], n: usize) -> u64 {
    fn go(row: usize, n: usize, used: &mut [bool], counts: &[u64]) -> u64 {
        if row == n {
            return 0;
        }
        let mut best = 0;
        for j in 0..n {
            if !used[j] {
                used[j] = true;
                best = best.max(counts[row * n + j] + go(row + 1, n, used, counts));
                used[j] = false;
            }
        }
        best
    }
    go(0, n, &mut vec![false; n], counts)
}

/// Dense-CRF pairwise kernel recomputed from its definition.
pub fn crf_kernel(
    rgb: &[[u8; 3]],
    w: usize,
    i: usize,
    j: usize,
    p: &cause_seg::eval::CrfParams,
) -> f64 {
    let (yi, xi, yj, xj) = ((i / w) as f64, (i % w) as f64, (j / w) as f64, (j % w) as f64);
    let dp = (yi - yj).powi(2) + (xi - xj).powi(2);
    let dc: f64 = (0..3).map(|c| (rgb[i][c] as f64 - rgb[j][c] as f64).powi(2)).sum();
    p.w_appearance * (-dp / (2.0 * p.theta_alpha.powi(2)) - dc / (2.0 * p.theta_beta.powi(2))).exp()
        + p.w_smooth * (-dp / (2.0 * p.theta_gamma.powi(2))).exp()
}

/// Exact marginals of a binary-label dense CRF by enumerating every state.
/// `unary[i][l]` is the energy of pixel `i` taking label `l`.
pub fn exact_binary_marginals(unary: &[[f64; 2]], kernel: &dyn Fn(usize, usize) -> f64) -> Vec<[f64; 2]> {
    let n = unary.len();
    assert!(n <= 20);
    let mut marg = vec![[0.0; 2]; n];
    let mut energies = Vec::with_capacity(1 << n);
    for state in 0u32..(1 << n) {
        let bit = |i: usize| ((state >> i) & 1) as usize;
        let mut e: f64 = (0..n).map(|i| unary[i][bit(i)]).sum();
        for i in 0..n {
            for j in i + 1..n {
                if bit(i) != bit(j) {
                    e += kernel(i, j);
                }
            }
        }
        energies.push(e);
    }
    let lo = energies.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut z = 0.0;
    for (state, &e) in energies.iter().enumerate() {
        let p = (lo - e).exp();
        z += p;
        for (i, m) in marg.iter_mut().enumerate() {
            m[(state >> i) & 1] += p;
        }
    }
    for m in &mut marg {
        m[0] /= z;
        m[1] /= z;
    }
    marg
}

/// Per-class IoU and pixel accuracy by direct set arithmetic under a
/// given cluster → class map.
pub fn set_metrics(pred: &[u16], truth: &[u16], perm: &[usize], n_classes: usize) -> (Vec<Option<f64>>, f64) {
    let mapped: Vec<usize> = pred.iter().map(|&p| perm[p as usize]).collect();
    let mut ious = Vec::new();
    for c in 0..n_classes {
        let p: std::collections::BTreeSet<usize> = (0..pred.len()).filter(|&i| mapped[i] == c).collect();
        let t: std::collections::BTreeSet<usize> = (0..truth.len()).filter(|&i| truth[i] as usize == c).collect();
        let union = p.union(&t).count();
        let inter = p.intersection(&t).count();
        ious.push((union > 0).then(|| inter as f64 / union as f64));
    }
    let correct = (0..pred.len()).filter(|&i| mapped[i] == truth[i] as usize).count();
    (ious, correct as f64 / pred.len() as f64)
}
