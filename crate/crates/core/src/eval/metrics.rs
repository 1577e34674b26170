use serde::{Deserialize, Serialize};

use super::hungarian::hungarian_match;
use crate::error::{Error, Result};
use crate::features::{LabelMap, IGNORE};

/// Pixel counts with rows = predicted cluster, columns = true class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub n: usize,
    pub counts: Vec<u64>,
    pub ignored: u64,
}

impl ConfusionMatrix {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            counts: vec![0; n * n],
            ignored: 0,
        }
    }

    pub fn get(&self, pred: usize, truth: usize) -> u64 {
        self.counts[pred * self.n + truth]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds one image. Pixels whose ground truth is [`IGNORE`] are counted
    /// as ignored.
    pub fn accumulate(&mut self, pred: &LabelMap, truth: &LabelMap) -> Result<()> {
        if (pred.height, pred.width) != (truth.height, truth.width) {
            return Err(Error::dims(
                "ConfusionMatrix::accumulate",
                format!("{}x{}", truth.height, truth.width),
                format!("{}x{}", pred.height, pred.width),
            ));
        }
        for (&p, &t) in pred.values.iter().zip(&truth.values) {
            if t == IGNORE {
                self.ignored += 1;
                continue;
            }
            let (p, t) = (p as usize, t as usize);
            if p >= self.n || t >= self.n {
                return Err(Error::InvalidArgument(format!(
                    "label pair ({p}, {t}) outside {} classes",
                    self.n
                )));
            }
            self.counts[p * self.n + t] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.n != self.n {
            return Err(Error::dims("ConfusionMatrix::merge", self.n, other.n));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.ignored += other.ignored;
        Ok(())
    }
}

/// Scores after alignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(rename = "mIoU")]
    pub miou: f64,
    #[serde(rename = "pAcc")]
    pub pacc: f64,
    /// IoU per true class; `None` where the class is absent from both
    /// prediction and ground truth.
    pub per_class_iou: Vec<Option<f64>>,
    /// Predicted cluster `i` is scored as class `matched_permutation[i]`.
    pub matched_permutation: Vec<usize>,
    pub n_pixels: u64,
    #[serde(skip)]
    pub confusion: Option<ConfusionMatrix>,
}

/// mIoU and pixel accuracy of `conf` under a fixed cluster → class map.
pub fn score_confusion(conf: &ConfusionMatrix, perm: &[usize]) -> Result<EvalReport> {
    let n = conf.n;
    if perm.len() != n {
        return Err(Error::dims("score_confusion", n, perm.len()));
    }
    let mut merged = vec![0u64; n * n];
    for (i, &c) in perm.iter().enumerate() {
        if c >= n {
            return Err(Error::InvalidArgument(format!("permutation entry {c} >= {n}")));
        }
        for t in 0..n {
            merged[c * n + t] += conf.get(i, t);
        }
    }
    let total = conf.total();
    let tp: u64 = (0..n).map(|c| merged[c * n + c]).sum();
    let per_class_iou: Vec<Option<f64>> = (0..n)
        .map(|c| {
            let pred: u64 = merged[c * n..(c + 1) * n].iter().sum();
            let truth: u64 = (0..n).map(|r| merged[r * n + c]).sum();
            let inter = merged[c * n + c];
            let union = pred + truth - inter;
            (union > 0).then(|| inter as f64 / union as f64)
        })
        .collect();
    let present: Vec<f64> = per_class_iou.iter().flatten().copied().collect();
    Ok(EvalReport {
        miou: if present.is_empty() { 0.0 } else { present.iter().sum::<f64>() / present.len() as f64 },
        pacc: if total == 0 { 0.0 } else { tp as f64 / total as f64 },
        per_class_iou,
        matched_permutation: perm.to_vec(),
        n_pixels: total,
        confusion: Some(conf.clone()),
    })
}

/// Accumulates the confusion over all images, aligns clusters to classes by
/// Hungarian matching and scores.
pub fn evaluate(preds: &[LabelMap], truths: &[LabelMap], n_classes: usize) -> Result<EvalReport> {
    if preds.len() != truths.len() {
        return Err(Error::dims("evaluate", truths.len(), preds.len()));
    }
    let mut conf = ConfusionMatrix::new(n_classes);
    for (p, t) in preds.iter().zip(truths) {
        conf.accumulate(p, t)?;
    }
    let perm = hungarian_match(&conf.counts, n_classes)?;
    score_confusion(&conf, &perm)
}
