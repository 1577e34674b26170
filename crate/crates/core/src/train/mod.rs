//! Concept-wise contrastive training of the segmentation head.
//!
//! Per record: quantize patches onto the clusterbook, run student and
//! teacher, draw anchors, pick positives and negatives among the teacher's
//! in-batch outputs and the concept bank through `D_M`, take one Adam step
//! on the mean InfoNCE loss, move the teacher by EMA and refresh the bank.

mod anchors;
mod bank;
mod infonce;
mod selection;

pub use anchors::sample_anchors;
pub use bank::ConceptBank;
pub use infonce::{infonce, infonce_unit, unit_or_zero, InfoNceTerm};
pub use selection::{relation, select_pos_neg, AnchorSelection, Relation, Source};

use std::io::Write;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::clusterbook::{concept_ids, Clusterbook};
use crate::error::{Error, Result};
use crate::features::FeatureRecord;
use crate::head::{ema_update, MlpHead, Mode, TeacherHead};
use crate::optim::{AdamConfig, AdamState};
use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// `D_M` above this marks a positive concept.
    pub phi_pos: f64,
    /// `D_M` below this marks a negative concept.
    pub phi_neg: f64,
    pub tau_nce: f64,
    pub lr: f64,
    /// EMA rate of the teacher.
    pub lambda: f64,
    pub epochs: usize,
    /// Rows kept per concept in the bank.
    pub bank_capacity: usize,
    pub seed: u64,
    /// Head output dimension `r`.
    pub out_dim: usize,
    pub window: usize,
    pub stride: usize,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            phi_pos: 0.3,
            phi_neg: 0.1,
            tau_nce: 0.1,
            lr: 0.001,
            lambda: 0.99,
            epochs: 1,
            bank_capacity: 100,
            seed: 0,
            out_dim: 90,
            window: 4,
            stride: 4,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(-1.0 <= self.phi_neg && self.phi_neg < self.phi_pos && self.phi_pos <= 1.0) {
            return bad(format!(
                "need -1 <= phi_neg < phi_pos <= 1, got phi_neg={}, phi_pos={}",
                self.phi_neg, self.phi_pos
            ));
        }
        if !(self.tau_nce > 0.0) || !(self.lr > 0.0) {
            return bad("tau_nce and lr must be > 0".into());
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda {} outside [0, 1]", self.lambda));
        }
        if self.epochs == 0 || self.out_dim == 0 || self.window == 0 || self.stride == 0 {
            return bad("epochs, out_dim, window and stride must be positive".into());
        }
        Ok(())
    }
}

/// Per-epoch summary; one line of the loss trace.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub usable_anchors: usize,
    pub total_anchors: usize,
    pub records_used: usize,
    pub records_skipped: usize,
}

impl EpochStats {
    pub fn usable_anchor_fraction(&self) -> f64 {
        if self.total_anchors == 0 {
            0.0
        } else {
            self.usable_anchors as f64 / self.total_anchors as f64
        }
    }
}

/// Writes `epoch  mean_loss  usable_anchor_fraction` as TSV.
pub fn write_loss_trace(stats: &[EpochStats], path: &Path) -> Result<()> {
    let mut out = String::from("epoch\tmean_loss\tusable_anchor_fraction\n");
    for s in stats {
        out.push_str(&format!("{}\t{:.6}\t{:.6}\n", s.epoch, s.mean_loss, s.usable_anchor_fraction()));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Loss and student gradients for one record.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    /// Mean `-log p` over usable anchors.
    pub loss: f64,
    pub usable_anchors: usize,
    pub total_anchors: usize,
    pub concept_ids: Vec<usize>,
    /// Projected teacher outputs, `hw × r`, for the bank refresh.
    pub teacher_projected: crate::tensor::DenseMatrix,
}

/// Mutable training state: student, teacher, bank and optimizer moments.
#[derive(Debug, Clone)]
pub struct Trainer<'a> {
    pub book: &'a Clusterbook,
    pub config: TrainConfig,
    pub student: MlpHead,
    pub teacher: TeacherHead,
    pub bank: ConceptBank,
    adam: Vec<AdamState>,
    anchor_rng: RngStream,
    bank_rng: RngStream,
}

/// Final state of [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub student: MlpHead,
    pub teacher: TeacherHead,
    pub bank: ConceptBank,
    pub epochs: Vec<EpochStats>,
}

impl<'a> Trainer<'a> {
    pub fn new(book: &'a Clusterbook, student: MlpHead, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if student.c != book.dim() {
            return Err(Error::dims("Trainer::new", book.dim(), student.c));
        }
        let teacher = TeacherHead::from_student(&student, config.lambda)?;
        let adam = student.params.iter().map(|p| AdamState::new(p.as_slice().len(), config.adam)).collect();
        let root = RngStream::new(config.seed, "train");
        Ok(Self {
            book,
            bank: ConceptBank::new(book.k(), config.bank_capacity, student.r),
            student,
            teacher,
            adam,
            anchor_rng: root.child("anchors"),
            bank_rng: root.child("bank"),
            config,
        })
    }

    /// Forward passes, selection, loss and one Adam step on the student.
    /// The teacher and bank are only read. Returns `None` when the record
    /// has no usable anchor.
    pub fn student_update(&mut self, record: &FeatureRecord) -> Result<Option<StepOutcome>> {
        let cfg = &self.config;
        let ids = concept_ids(&record.features, self.book)?;
        let student_cache = self.student.forward_cache(&record.features, Mode::Train);
        let teacher_cache = self.teacher.head().forward_cache(&record.features, Mode::Train);
        let r = self.student.r;
        let z_student = student_cache.projected.as_ref().expect("train mode projects");
        let z_teacher = teacher_cache.projected.as_ref().expect("train mode projects");
        let teacher_unit: Vec<Vec<f64>> = z_teacher.chunks_exact(r).map(unit_or_zero).collect();
        let bank_unit: Vec<Vec<Vec<f64>>> = (0..self.bank.k())
            .map(|i| {
                self.bank
                    .rows(i)
                    .map(|row| unit_or_zero(&row.iter().map(|&v| v as f64).collect::<Vec<_>>()))
                    .collect()
            })
            .collect();

        let anchors = sample_anchors(record.h, record.w, cfg.window, cfg.stride, &mut self.anchor_rng)?;
        let dm = self.book.distances();
        let mut terms = Vec::new();
        for &a in &anchors {
            let sel = select_pos_neg(a, ids[a], &ids, dm, cfg.phi_pos, cfg.phi_neg);
            let mut pos: Vec<&[f64]> = sel.positives.iter().map(|s| row_of(s, &teacher_unit, &bank_unit)).collect();
            let mut neg: Vec<&[f64]> = sel.negatives.iter().map(|s| row_of(s, &teacher_unit, &bank_unit)).collect();
            let drow = dm.row(ids[a]);
            for (concept, rows) in bank_unit.iter().enumerate() {
                if rows.is_empty() {
                    continue;
                }
                match relation(drow[concept], cfg.phi_pos, cfg.phi_neg) {
                    Relation::Positive => pos.extend(rows.iter().map(Vec::as_slice)),
                    Relation::Negative => neg.extend(rows.iter().map(Vec::as_slice)),
                    Relation::Neither => {}
                }
            }
            let anchor = &z_student[a * r..(a + 1) * r];
            if let Some(term) = infonce_unit(anchor, &pos, &neg, cfg.tau_nce) {
                terms.push((a, term));
            }
        }
        if terms.is_empty() {
            return Ok(None);
        }
        let usable = terms.len();
        let mut grad_out = vec![0.0; record.h * record.w * r];
        let mut loss = 0.0;
        for (a, term) in &terms {
            loss -= term.log_p;
            // descend on -log p, averaged over usable anchors
            for (g, &v) in grad_out[a * r..(a + 1) * r].iter_mut().zip(&term.grad) {
                *g -= v / usable as f64;
            }
        }
        loss /= usable as f64;
        let grads = self.student.backward(&student_cache, &grad_out)?;
        for ((p, g), st) in self.student.params.iter_mut().zip(&grads.params).zip(&mut self.adam) {
            st.step(p.as_mut_slice(), g, self.config.lr)?;
        }
        let teacher_projected = crate::tensor::DenseMatrix::from_f64(record.h * record.w, r, z_teacher)?;
        Ok(Some(StepOutcome {
            loss,
            usable_anchors: usable,
            total_anchors: anchors.len(),
            concept_ids: ids,
            teacher_projected,
        }))
    }

    /// Full iteration: student update, EMA, bank refresh.
    pub fn step(&mut self, record: &FeatureRecord) -> Result<Option<StepOutcome>> {
        let Some(outcome) = self.student_update(record)? else {
            return Ok(None);
        };
        ema_update(&mut self.teacher, &self.student)?;
        self.bank.update(&outcome.teacher_projected, &outcome.concept_ids, &mut self.bank_rng)?;
        debug_assert!((0..self.bank.k()).all(|i| self.bank.occupancy(i) <= self.bank.capacity()));
        Ok(Some(outcome))
    }

    pub fn finish(self, epochs: Vec<EpochStats>) -> TrainOutcome {
        TrainOutcome {
            student: self.student,
            teacher: self.teacher,
            bank: self.bank,
            epochs,
        }
    }
}

fn row_of<'r>(src: &Source, batch: &'r [Vec<f64>], bank: &'r [Vec<Vec<f64>>]) -> &'r [f64] {
    match *src {
        Source::Batch { position, .. } => &batch[position],
        Source::Bank { concept, slot } => &bank[concept][slot],
    }
}

/// Trains `student` for `config.epochs` passes over `records`, in order.
pub fn train<I>(records: I, book: &Clusterbook, student: MlpHead, config: &TrainConfig) -> Result<TrainOutcome>
where
    I: IntoIterator<Item = Result<FeatureRecord>>,
    I::IntoIter: Clone,
{
    let records = records.into_iter();
    let mut trainer = Trainer::new(book, student, config.clone())?;
    let mut epochs = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut stats = EpochStats {
            epoch,
            ..Default::default()
        };
        let mut loss_sum = 0.0;
        for rec in records.clone() {
            let rec = rec?;
            if rec.feature_dim() != book.dim() {
                return Err(Error::dims("train", book.dim(), rec.feature_dim()));
            }
            match trainer.step(&rec) {
                Ok(Some(out)) => {
                    loss_sum += out.loss * out.usable_anchors as f64;
                    stats.usable_anchors += out.usable_anchors;
                    stats.total_anchors += out.total_anchors;
                    stats.records_used += 1;
                }
                Ok(None) => {
                    stats.records_skipped += 1;
                    stats.total_anchors += anchor_count(&rec, config);
                }
                Err(e @ (Error::ZeroNormRow { .. } | Error::InvalidArgument(_))) => {
                    warn!("skipping record {}: {e}", rec.image_id);
                    stats.records_skipped += 1;
                }
                Err(e) => return Err(e),
            }
        }
        if stats.usable_anchors == 0 {
            return Err(Error::NoUsableAnchors(format!("epoch {epoch}")));
        }
        stats.mean_loss = loss_sum / stats.usable_anchors as f64;
        log::info!(
            "epoch {epoch}: loss {:.4}, usable anchors {}/{}",
            stats.mean_loss,
            stats.usable_anchors,
            stats.total_anchors
        );
        epochs.push(stats);
    }
    Ok(trainer.finish(epochs))
}

fn anchor_count(rec: &FeatureRecord, cfg: &TrainConfig) -> usize {
    if rec.h < cfg.window || rec.w < cfg.window {
        return 0;
    }
    ((rec.h - cfg.window) / cfg.stride + 1) * ((rec.w - cfg.window) / cfg.stride + 1)
}
