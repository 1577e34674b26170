use log::warn;
use serde::{Deserialize, Serialize};

use super::metrics::{score_confusion, ConfusionMatrix, EvalReport};
use crate::error::{Error, Result};
use crate::features::{LabelMap, IGNORE};
use crate::optim::{AdamConfig, AdamState};
use crate::tensor::DenseMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinearProbeConfig {
    pub lr: f64,
    /// Full-batch Adam steps.
    pub steps: usize,
    pub adam: AdamConfig,
}

impl Default for LinearProbeConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            steps: 300,
            adam: AdamConfig::default(),
        }
    }
}

/// Mean cross-entropy over labelled rows and its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct LossAndGradient {
    pub loss: f64,
    /// `d × ℂ`, row-major.
    pub grad_w: Vec<f64>,
    pub grad_b: Vec<f64>,
}

/// Softmax cross-entropy of `logits = x·W + b`. Rows labelled [`IGNORE`]
/// are skipped.
pub fn softmax_cross_entropy(w: &[f64], b: &[f64], x: &DenseMatrix, y: &[u16], n_classes: usize) -> Result<LossAndGradient> {
    let d = x.cols();
    if w.len() != d * n_classes || b.len() != n_classes || y.len() != x.rows() {
        return Err(Error::dims(
            "softmax_cross_entropy",
            format!("W {d}x{n_classes}, b {n_classes}, {} labels", x.rows()),
            format!("W {}, b {}, {} labels", w.len(), b.len(), y.len()),
        ));
    }
    let mut out = LossAndGradient {
        loss: 0.0,
        grad_w: vec![0.0; w.len()],
        grad_b: vec![0.0; n_classes],
    };
    let used = y.iter().filter(|&&l| l != IGNORE).count();
    if used == 0 {
        return Ok(out);
    }
    let mut p = vec![0.0; n_classes];
    for (row, &label) in x.row_iter().zip(y) {
        if label == IGNORE {
            continue;
        }
        let label = label as usize;
        if label >= n_classes {
            return Err(Error::InvalidArgument(format!("label {label} >= {n_classes}")));
        }
        for (c, pc) in p.iter_mut().enumerate() {
            *pc = b[c] + row.iter().enumerate().map(|(k, &v)| v as f64 * w[k * n_classes + c]).sum::<f64>();
        }
        let hi = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = p.iter().map(|v| (v - hi).exp()).sum();
        out.loss += z.ln() + hi - p[label];
        for (c, pc) in p.iter_mut().enumerate() {
            *pc = (*pc - hi).exp() / z - f64::from(c == label);
        }
        for (k, &v) in row.iter().enumerate() {
            for (g, &pc) in out.grad_w[k * n_classes..(k + 1) * n_classes].iter_mut().zip(&p) {
                *g += v as f64 * pc;
            }
        }
        for (g, &pc) in out.grad_b.iter_mut().zip(&p) {
            *g += pc;
        }
    }
    let inv = 1.0 / used as f64;
    out.loss *= inv;
    out.grad_w.iter_mut().chain(out.grad_b.iter_mut()).for_each(|g| *g *= inv);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe {
    pub weights: DenseMatrix,
    pub bias: Vec<f32>,
    /// Classes seen during training.
    pub seen: Vec<bool>,
    pub loss_trace: Vec<f64>,
}

impl LinearProbe {
    /// Zero-initialized softmax regression trained with full-batch Adam.
    pub fn fit(x: &DenseMatrix, y: &[u16], n_classes: usize, cfg: &LinearProbeConfig) -> Result<Self> {
        let d = x.cols();
        let mut seen = vec![false; n_classes];
        for &l in y.iter().filter(|&&l| l != IGNORE) {
            *seen.get_mut(l as usize).ok_or_else(|| Error::InvalidArgument(format!("label {l} >= {n_classes}")))? = true;
        }
        for c in (0..n_classes).filter(|&c| !seen[c]) {
            warn!("class {c} has no training labels; excluded from the linear probe scores");
        }
        let mut w = vec![0.0f32; d * n_classes];
        let mut b = vec![0.0f32; n_classes];
        let mut sw = AdamState::new(w.len(), cfg.adam);
        let mut sb = AdamState::new(b.len(), cfg.adam);
        let mut trace = Vec::with_capacity(cfg.steps);
        for _ in 0..cfg.steps {
            let wf: Vec<f64> = w.iter().map(|&v| v as f64).collect();
            let bf: Vec<f64> = b.iter().map(|&v| v as f64).collect();
            let g = softmax_cross_entropy(&wf, &bf, x, y, n_classes)?;
            trace.push(g.loss);
            sw.step(&mut w, &g.grad_w, cfg.lr)?;
            sb.step(&mut b, &g.grad_b, cfg.lr)?;
        }
        Ok(Self {
            weights: DenseMatrix::new(d, n_classes, w)?,
            bias: b,
            seen,
            loss_trace: trace,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.bias.len()
    }

    /// Highest-scoring class per row; ties go to the lowest index.
    pub fn predict(&self, x: &DenseMatrix) -> Result<Vec<u16>> {
        if x.cols() != self.weights.rows() {
            return Err(Error::dims("LinearProbe::predict", self.weights.rows(), x.cols()));
        }
        let n = self.n_classes();
        Ok(x
            .row_iter()
            .map(|row| {
                let mut best = (0, f64::NEG_INFINITY);
                for c in 0..n {
                    let s = self.bias[c] as f64
                        + row.iter().enumerate().map(|(k, &v)| v as f64 * self.weights.get(k, c) as f64).sum::<f64>();
                    if s > best.1 {
                        best = (c, s);
                    }
                }
                best.0 as u16
            })
            .collect())
    }
}

/// Trains on `(train_x, train_y)` and scores predictions on the validation
/// rows with the identity alignment. Validation rows of classes never seen
/// in training are left out.
pub fn linear_probe(
    train_x: &DenseMatrix,
    train_y: &[u16],
    val_x: &DenseMatrix,
    val_y: &[u16],
    n_classes: usize,
    cfg: &LinearProbeConfig,
) -> Result<(LinearProbe, EvalReport)> {
    let probe = LinearProbe::fit(train_x, train_y, n_classes, cfg)?;
    if val_y.len() != val_x.rows() {
        return Err(Error::dims("linear_probe", val_x.rows(), val_y.len()));
    }
    let pred = probe.predict(val_x)?;
    let truth: Vec<u16> = val_y
        .iter()
        .map(|&l| if l != IGNORE && probe.seen.get(l as usize) == Some(&false) { IGNORE } else { l })
        .collect();
    let mut conf = ConfusionMatrix::new(n_classes);
    conf.accumulate(&LabelMap::new(1, pred.len(), pred)?, &LabelMap::new(1, truth.len(), truth)?)?;
    let identity: Vec<usize> = (0..n_classes).collect();
    let mut report = score_confusion(&conf, &identity)?;
    for (iou, _) in report.per_class_iou.iter_mut().zip(&probe.seen).filter(|(_, &s)| !s) {
        *iou = None;
    }
    let kept: Vec<f64> = report.per_class_iou.iter().flatten().copied().collect();
    report.miou = if kept.is_empty() { 0.0 } else { kept.iter().sum::<f64>() / kept.len() as f64 };
    Ok((probe, report))
}
