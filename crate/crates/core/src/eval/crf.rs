//! Fully connected CRF with Potts compatibility, solved by mean-field
//! iteration with dense message passing.
//!
//! Pairwise kernel between pixels `i` and `j`:
//!
//! ```text
//! k(i, j) = w1 · exp(-|p_i - p_j|²/2θα² - |I_i - I_j|²/2θβ²) + w2 · exp(-|p_i - p_j|²/2θγ²)
//! ```
//!
//! and the update is `Q_i(l) ∝ exp(-U_i(l) + Σ_{j≠i} k(i, j) Q_j(l))`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{LabelMap, RgbImage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CrfParams {
    /// Appearance (bilateral) weight `w1`.
    pub w_appearance: f64,
    /// Spatial std of the appearance kernel, pixels.
    pub theta_alpha: f64,
    /// Colour std of the appearance kernel, intensity units.
    pub theta_beta: f64,
    /// Smoothness weight `w2`.
    pub w_smooth: f64,
    /// Spatial std of the smoothness kernel, pixels.
    pub theta_gamma: f64,
    pub steps: usize,
    /// Probability given to the input label in the unary.
    pub confidence: f64,
    /// Largest pixel count refined in one dense pass.
    pub max_pixels: usize,
    /// Square tile side used for images above `max_pixels`.
    pub tile: Option<usize>,
}

impl Default for CrfParams {
    fn default() -> Self {
        Self {
            w_appearance: 10.0,
            theta_alpha: 80.0,
            theta_beta: 13.0,
            w_smooth: 3.0,
            theta_gamma: 3.0,
            steps: 10,
            confidence: 0.9,
            max_pixels: 64 * 64,
            tile: None,
        }
    }
}

impl CrfParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.w_appearance >= 0.0
            && self.w_smooth >= 0.0
            && self.theta_alpha > 0.0
            && self.theta_beta > 0.0
            && self.theta_gamma > 0.0
            && self.steps >= 1
            && self.confidence > 0.0
            && self.confidence < 1.0
            && self.max_pixels > 0
            && self.tile.is_none_or(|t| t > 0 && t * t <= self.max_pixels);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid CRF parameters: {self:?}")))
        }
    }
}

/// Unary energies `-ln P` from a hard label map: the given label gets
/// probability `confidence`, the rest share the remainder.
pub fn unary_from_labels(labels: &LabelMap, n_labels: usize, confidence: f64) -> Result<Vec<f64>> {
    if n_labels < 2 {
        return Err(Error::InvalidArgument("CRF needs at least 2 labels".into()));
    }
    let on = -confidence.ln();
    let off = -((1.0 - confidence) / (n_labels - 1) as f64).ln();
    let mut u = Vec::with_capacity(labels.values.len() * n_labels);
    for &v in &labels.values {
        if v as usize >= n_labels {
            return Err(Error::InvalidArgument(format!("label {v} >= {n_labels}")));
        }
        u.extend((0..n_labels).map(|l| if l == v as usize { on } else { off }));
    }
    Ok(u)
}

fn softmax_neg(energy: &[f64], out: &mut [f64]) {
    let lo = energy.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut z = 0.0;
    for (o, &e) in out.iter_mut().zip(energy) {
        *o = (lo - e).exp();
        z += *o;
    }
    out.iter_mut().for_each(|o| *o /= z);
}

/// Mean-field marginals (`N × L`, row-major) for a dense CRF over `rgb`.
/// `observe` sees the marginals after every step.
pub fn crf_marginals(
    rgb: &RgbImage,
    unary: &[f64],
    n_labels: usize,
    params: &CrfParams,
    mut observe: impl FnMut(usize, &[f64]),
) -> Result<Vec<f64>> {
    params.validate()?;
    let n = rgb.height * rgb.width;
    if unary.len() != n * n_labels {
        return Err(Error::dims("crf_marginals", n * n_labels, unary.len()));
    }
    if n > params.max_pixels {
        return Err(Error::CrfTooLarge {
            pixels: n,
            budget: params.max_pixels,
        });
    }
    let kernel = pairwise_kernel(rgb, params);
    let mut q = vec![0.0; n * n_labels];
    for i in 0..n {
        softmax_neg(&unary[i * n_labels..(i + 1) * n_labels], &mut q[i * n_labels..(i + 1) * n_labels]);
    }
    // label-major copy of Q so each message is a contiguous dot product
    let mut planes = vec![0.0; n * n_labels];
    let mut energy = vec![0.0; n_labels];
    let mut next = vec![0.0; n * n_labels];
    for step in 0..params.steps {
        for (i, row) in q.chunks_exact(n_labels).enumerate() {
            for (l, &v) in row.iter().enumerate() {
                planes[l * n + i] = v;
            }
        }
        for i in 0..n {
            let krow = &kernel[i * n..(i + 1) * n];
            for (l, e) in energy.iter_mut().enumerate() {
                *e = unary[i * n_labels + l] - dot4(krow, &planes[l * n..(l + 1) * n]);
            }
            softmax_neg(&energy, &mut next[i * n_labels..(i + 1) * n_labels]);
        }
        std::mem::swap(&mut q, &mut next);
        observe(step, &q);
    }
    Ok(q)
}

/// Dot product with four independent accumulators.
fn dot4(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    acc[0] + acc[1] + acc[2] + acc[3] + tail
}

/// Symmetric `N × N` kernel with a zero diagonal.
fn pairwise_kernel(rgb: &RgbImage, p: &CrfParams) -> Vec<f64> {
    let (h, w) = (rgb.height, rgb.width);
    let n = h * w;
    // spatial factors depend only on the offset
    let offset = |dy: usize, dx: usize, theta: f64| (-((dy * dy + dx * dx) as f64) / (2.0 * theta * theta)).exp();
    let table = |theta: f64| -> Vec<f64> { (0..h * w).map(|o| offset(o / w, o % w, theta)).collect() };
    let (alpha, gamma) = (table(p.theta_alpha), table(p.theta_gamma));
    let colors: Vec<[f64; 3]> = rgb.data.chunks_exact(3).map(|c| [c[0] as f64, c[1] as f64, c[2] as f64]).collect();
    let b2 = 2.0 * p.theta_beta * p.theta_beta;
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        let (yi, xi) = (i / w, i % w);
        let ci = colors[i];
        for j in i + 1..n {
            let (yj, xj) = (j / w, j % w);
            let o = yj.abs_diff(yi) * w + xj.abs_diff(xi);
            let cj = colors[j];
            let dc = (ci[0] - cj[0]).powi(2) + (ci[1] - cj[1]).powi(2) + (ci[2] - cj[2]).powi(2);
            let v = p.w_appearance * alpha[o] * (-dc / b2).exp() + p.w_smooth * gamma[o];
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    k
}

fn argmax_labels(q: &[f64], n_labels: usize) -> Vec<u16> {
    q.chunks_exact(n_labels)
        .map(|row| {
            let mut best = 0;
            for (l, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = l;
                }
            }
            best as u16
        })
        .collect()
}

/// Refines a hard label map. Images above `max_pixels` are refined tile by
/// tile when `tile` is set and rejected otherwise.
pub fn crf_refine(rgb: &RgbImage, labels: &LabelMap, n_labels: usize, params: &CrfParams) -> Result<LabelMap> {
    params.validate()?;
    if (rgb.height, rgb.width) != (labels.height, labels.width) {
        return Err(Error::dims(
            "crf_refine",
            format!("{}x{}", rgb.height, rgb.width),
            format!("{}x{}", labels.height, labels.width),
        ));
    }
    let n = rgb.height * rgb.width;
    if n <= params.max_pixels {
        let u = unary_from_labels(labels, n_labels, params.confidence)?;
        let q = crf_marginals(rgb, &u, n_labels, params, |_, _| {})?;
        return LabelMap::new(rgb.height, rgb.width, argmax_labels(&q, n_labels));
    }
    let Some(t) = params.tile else {
        return Err(Error::CrfTooLarge {
            pixels: n,
            budget: params.max_pixels,
        });
    };
    let mut out = labels.clone();
    for y0 in (0..rgb.height).step_by(t) {
        for x0 in (0..rgb.width).step_by(t) {
            let (th, tw) = (t.min(rgb.height - y0), t.min(rgb.width - x0));
            let mut px = Vec::with_capacity(th * tw * 3);
            let mut lv = Vec::with_capacity(th * tw);
            for y in y0..y0 + th {
                for x in x0..x0 + tw {
                    px.extend_from_slice(&rgb.pixel(y, x));
                    lv.push(labels.get(y, x));
                }
            }
            let sub = crf_refine(&RgbImage::new(th, tw, px)?, &LabelMap::new(th, tw, lv)?, n_labels, params)?;
            for y in 0..th {
                for x in 0..tw {
                    out.values[(y0 + y) * rgb.width + x0 + x] = sub.get(y, x);
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(h: usize, w: usize, f: impl Fn(usize, usize) -> [u8; 3]) -> RgbImage {
        let data = (0..h * w).flat_map(|i| f(i / w, i % w)).collect();
        RgbImage::new(h, w, data).unwrap()
    }

    #[test]
    fn uniform_image_and_labels_unchanged() {
        let rgb = image(6, 6, |_, _| [90, 90, 90]);
        let lm = LabelMap::filled(6, 6, 2);
        assert_eq!(crf_refine(&rgb, &lm, 3, &CrfParams::default()).unwrap(), lm);
    }

    #[test]
    fn zero_weights_are_identity() {
        let rgb = image(5, 7, |y, x| [(y * 40) as u8, (x * 30) as u8, 7]);
        let lm = LabelMap::new(5, 7, (0..35).map(|i| (i * 7 % 4) as u16).collect()).unwrap();
        let p = CrfParams {
            w_appearance: 0.0,
            w_smooth: 0.0,
            ..CrfParams::default()
        };
        assert_eq!(crf_refine(&rgb, &lm, 4, &p).unwrap(), lm);
    }

    #[test]
    fn marginals_stay_normalized_every_step() {
        let rgb = image(6, 5, |y, x| [(y * 50) as u8, (x * 60) as u8, ((x + y) * 20) as u8]);
        let lm = LabelMap::new(6, 5, (0..30).map(|i| (i % 3) as u16).collect()).unwrap();
        let u = unary_from_labels(&lm, 3, 0.9).unwrap();
        let mut steps = 0;
        crf_marginals(&rgb, &u, 3, &CrfParams::default(), |_, q| {
            steps += 1;
            for row in q.chunks_exact(3) {
                assert!(row.iter().all(|&v| v >= 0.0));
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
        })
        .unwrap();
        assert_eq!(steps, 10);
    }

    #[test]
    fn isolated_pixel_is_smoothed() {
        let rgb = image(5, 5, |_, _| [50, 50, 50]);
        let mut lm = LabelMap::filled(5, 5, 0);
        lm.values[12] = 1;
        let out = crf_refine(&rgb, &lm, 2, &CrfParams::default()).unwrap();
        assert_eq!(out, LabelMap::filled(5, 5, 0));
    }

    #[test]
    fn oversize_needs_tiles() {
        let rgb = image(10, 10, |_, _| [0, 0, 0]);
        let lm = LabelMap::filled(10, 10, 0);
        let mut p = CrfParams {
            max_pixels: 50,
            ..CrfParams::default()
        };
        assert!(matches!(crf_refine(&rgb, &lm, 2, &p), Err(Error::CrfTooLarge { .. })));
        p.tile = Some(4);
        assert_eq!(crf_refine(&rgb, &lm, 2, &p).unwrap(), lm);
    }
}
