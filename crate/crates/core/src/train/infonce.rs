//! Concept-wise InfoNCE term for one anchor:
//!
//! ```text
//! p = mean_{y⁺} exp(cos(y, y⁺)/τ) / (exp(cos(y, y⁺)/τ) + Σ_{y⁻} exp(cos(y, y⁻)/τ))
//! ```
//!
//! returned as `log p` with its gradient with respect to the anchor. The
//! comparison rows are constants.

/// `log p` and `∂ log p / ∂ anchor`.
#[derive(Debug, Clone, PartialEq)]
pub struct InfoNceTerm {
    pub log_p: f64,
    pub grad: Vec<f64>,
}

fn unit(v: &[f64]) -> Option<(Vec<f64>, f64)> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    (n > 1e-12).then(|| (v.iter().map(|x| x / n).collect(), n))
}

/// Unit-normalized comparison row; zero rows stay zero (cosine 0).
pub fn unit_or_zero(v: &[f64]) -> Vec<f64> {
    unit(v).map_or_else(|| vec![0.0; v.len()], |(u, _)| u)
}

/// Evaluates the term against pre-normalized comparison rows. Returns
/// `None` (skip signal) when either set is empty or the anchor is zero.
pub fn infonce_unit(anchor: &[f64], positives: &[&[f64]], negatives: &[&[f64]], tau: f64) -> Option<InfoNceTerm> {
    if positives.is_empty() || negatives.is_empty() {
        return None;
    }
    let (a_hat, a_norm) = unit(anchor)?;
    let cos = |row: &[f64]| -> f64 { a_hat.iter().zip(row).map(|(x, y)| x * y).sum() };
    let s_pos: Vec<f64> = positives.iter().map(|r| cos(r) / tau).collect();
    let s_neg: Vec<f64> = negatives.iter().map(|r| cos(r) / tau).collect();
    let shift = s_pos.iter().chain(&s_neg).cloned().fold(f64::NEG_INFINITY, f64::max);
    let e_neg: Vec<f64> = s_neg.iter().map(|s| (s - shift).exp()).collect();
    let neg_total: f64 = e_neg.iter().sum();
    let e_pos: Vec<f64> = s_pos.iter().map(|s| (s - shift).exp()).collect();
    let p: Vec<f64> = e_pos.iter().map(|e| e / (e + neg_total)).collect();
    let n_pos = p.len() as f64;
    let mean_p = p.iter().sum::<f64>() / n_pos;
    let log_p = mean_p.ln();

    // d log P / d s_j
    let scale = 1.0 / (mean_p * n_pos);
    let d_pos: Vec<f64> = p.iter().map(|pi| scale * pi * (1.0 - pi)).collect();
    let spread: f64 = p.iter().zip(&e_pos).map(|(pi, ei)| pi / (ei + neg_total)).sum();
    let d_neg: Vec<f64> = e_neg.iter().map(|en| -scale * en * spread).collect();

    // d cos_j / d y = (x̂_j - cos_j ŷ) / |y| ; d s_j = d cos_j / τ
    let dim = anchor.len();
    let mut grad = vec![0.0; dim];
    let mut radial = 0.0;
    for (rows, (d, s)) in [(positives, (&d_pos, &s_pos)), (negatives, (&d_neg, &s_neg))] {
        for ((row, &dj), &sj) in rows.iter().zip(d.iter()).zip(s.iter()) {
            if dj == 0.0 {
                continue;
            }
            for (g, &x) in grad.iter_mut().zip(row.iter()) {
                *g += dj * x;
            }
            radial += dj * sj * tau;
        }
    }
    for (g, &u) in grad.iter_mut().zip(&a_hat) {
        *g = (*g - radial * u) / (a_norm * tau);
    }
    Some(InfoNceTerm { log_p, grad })
}

/// Same as [`infonce_unit`] for raw comparison rows.
pub fn infonce(anchor: &[f64], positives: &[Vec<f64>], negatives: &[Vec<f64>], tau: f64) -> Option<InfoNceTerm> {
    let pu: Vec<Vec<f64>> = positives.iter().map(|r| unit_or_zero(r)).collect();
    let nu: Vec<Vec<f64>> = negatives.iter().map(|r| unit_or_zero(r)).collect();
    let pr: Vec<&[f64]> = pu.iter().map(Vec::as_slice).collect();
    let nr: Vec<&[f64]> = nu.iter().map(Vec::as_slice).collect();
    infonce_unit(anchor, &pr, &nr, tau)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_pair_is_one_half() {
        let t = infonce(&[1.0, 0.0], &[vec![0.0, 1.0]], &[vec![0.0, -1.0]], 0.1).unwrap();
        assert!((t.log_p - 0.5f64.ln()).abs() < 1e-12);
        #[allow(clippy::approx_constant)]
        let quoted = 0.6931;
        assert!((t.log_p + quoted).abs() < 1e-4);
    }

    #[test]
    fn analytic_extreme() {
        let t = infonce(&[1.0, 0.0], &[vec![2.0, 0.0]], &[vec![0.0, 3.0]], 0.1).unwrap();
        let want = (10f64.exp() / (10f64.exp() + 1.0)).ln();
        assert!((t.log_p - want).abs() < 1e-12);
        assert!((t.log_p.exp() - 0.9999546).abs() < 1e-7);
    }

    #[test]
    fn equal_cosines_give_one_over_n_plus_one() {
        let anchor = [0.3, -0.2, 0.9];
        let negs: Vec<Vec<f64>> = (0..7).map(|_| anchor.to_vec()).collect();
        let t = infonce(&anchor, &[anchor.to_vec()], &negs, 0.07).unwrap();
        assert!((t.log_p.exp() - 1.0 / 8.0).abs() < 1e-12);
    }

    #[test]
    fn empty_sets_skip() {
        assert!(infonce(&[1.0], &[], &[vec![1.0]], 0.1).is_none());
        assert!(infonce(&[1.0], &[vec![1.0]], &[], 0.1).is_none());
    }
}
