//! Synthetic multi-granularity dataset.
//!
//! Each class owns several sub-concept prototypes. Sub-concepts of one class
//! share a class direction, so their pairwise cosine equals
//! `subconcept_cosine`; prototypes of different classes are orthogonal when
//! the feature dimension allows it. Images are Voronoi partitions of the
//! patch grid; every region carries one (class, sub-concept) pair and its
//! patches are noisy copies of that prototype. Ground truth marks the class
//! only, so a segmenter has to merge sub-concepts to score well.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::format::{write_feature_file, FeatureRecord, LabelMap, RgbImage};
use super::manifest::{DatasetManifest, ManifestRecord, Split};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::{dot, DenseMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub name: String,
    pub n_classes: usize,
    pub subconcepts_per_class: usize,
    /// Feature dimension.
    pub c: usize,
    pub grid: [usize; 2],
    /// Training images; validation images come on top.
    pub n_train: usize,
    pub n_val: usize,
    pub noise_sigma: f64,
    /// Minimum pairwise angle between any two prototypes, in degrees.
    pub prototype_separation: f64,
    /// Cosine between two sub-concepts of the same class.
    pub subconcept_cosine: f64,
    pub regions_per_image: usize,
    /// Label/RGB pixels per patch side.
    pub pixel_scale: usize,
    pub pixel_noise: u8,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            name: "synthetic".into(),
            n_classes: 5,
            subconcepts_per_class: 3,
            c: 64,
            grid: [16, 16],
            n_train: 200,
            n_val: 50,
            noise_sigma: 0.05,
            prototype_separation: 45.0,
            subconcept_cosine: 0.5,
            regions_per_image: 6,
            pixel_scale: 8,
            pixel_noise: 12,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n_classes == 0 || self.subconcepts_per_class == 0 {
            return bad("n_classes and subconcepts_per_class must be positive".into());
        }
        if self.n_classes > u16::MAX as usize - 1 {
            return bad(format!("too many classes: {}", self.n_classes));
        }
        if self.c < 2 {
            return bad(format!("feature dimension {} too small", self.c));
        }
        if self.grid[0] == 0 || self.grid[1] == 0 || self.pixel_scale == 0 {
            return bad("grid and pixel_scale must be positive".into());
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return bad(format!("noise_sigma {} must be >= 0", self.noise_sigma));
        }
        if !(-1.0..1.0).contains(&self.subconcept_cosine) {
            return bad(format!("subconcept_cosine {} outside [-1, 1)", self.subconcept_cosine));
        }
        if !(0.0..=180.0).contains(&self.prototype_separation) {
            return bad(format!("prototype_separation {} outside [0, 180]", self.prototype_separation));
        }
        if self.regions_per_image == 0 {
            return bad("regions_per_image must be positive".into());
        }
        if self.n_train == 0 {
            return bad("n_train must be positive".into());
        }
        Ok(())
    }
}

/// Generating prototypes and class colours shared by every image.
#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    pub spec: SynthSpec,
    /// `n_classes * subconcepts_per_class` unit rows, class-major.
    pub prototypes: DenseMatrix,
    pub palette: Vec<[u8; 3]>,
}

/// One rendered image plus its generating assignment.
#[derive(Debug, Clone)]
pub struct SyntheticImage {
    pub record: FeatureRecord,
    /// Prototype row behind each patch.
    pub patch_prototype: Vec<usize>,
    /// Class of each patch.
    pub patch_class: Vec<usize>,
}

const MAX_ATTEMPTS: usize = 200;

impl SyntheticWorld {
    pub fn new(spec: &SynthSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = RngStream::new(spec.seed, "synth/prototypes");
        let n = spec.n_classes * spec.subconcepts_per_class;
        let min_cos = spec.prototype_separation.to_radians().cos();
        for _ in 0..MAX_ATTEMPTS {
            let protos = draw_prototypes(spec, &mut rng);
            let ok = (0..n).all(|i| (i + 1..n).all(|j| dot(protos.row(i), protos.row(j)) <= min_cos + 1e-9));
            if ok {
                let palette = (0..spec.n_classes)
                    .map(|_| {
                        [0, 0, 0].map(|_: u8| 24 + rng.index(208) as u8)
                    })
                    .collect();
                return Ok(Self {
                    spec: spec.clone(),
                    prototypes: protos,
                    palette,
                });
            }
        }
        Err(Error::SeparationUnachievable {
            count: n,
            angle_deg: spec.prototype_separation,
            dim: spec.c,
        })
    }

    pub fn class_of_prototype(&self, p: usize) -> usize {
        p / self.spec.subconcepts_per_class
    }

    /// Renders image `index` from its own random stream.
    pub fn render(&self, index: usize) -> SyntheticImage {
        let s = &self.spec;
        let [h, w] = s.grid;
        let mut rng = RngStream::new(s.seed, format!("synth/image/{index}"));
        let seeds: Vec<(f64, f64, usize)> = (0..s.regions_per_image)
            .map(|_| {
                let y = rng.uniform() * h as f64;
                let x = rng.uniform() * w as f64;
                let class = rng.index(s.n_classes);
                let sub = rng.index(s.subconcepts_per_class);
                (y, x, class * s.subconcepts_per_class + sub)
            })
            .collect();
        let mut patch_prototype = Vec::with_capacity(h * w);
        for py in 0..h {
            for px in 0..w {
                let (cy, cx) = (py as f64 + 0.5, px as f64 + 0.5);
                let nearest = seeds
                    .iter()
                    .map(|&(y, x, p)| ((y - cy).powi(2) + (x - cx).powi(2), p))
                    .fold((f64::INFINITY, 0), |best, cur| if cur.0 < best.0 { cur } else { best });
                patch_prototype.push(nearest.1);
            }
        }
        let patch_class: Vec<usize> = patch_prototype.iter().map(|&p| self.class_of_prototype(p)).collect();

        let mut feats = Vec::with_capacity(h * w * s.c);
        let mut row = vec![0f64; s.c];
        for &p in &patch_prototype {
            let proto = self.prototypes.row(p);
            for (r, &v) in row.iter_mut().zip(proto) {
                *r = v as f64 + s.noise_sigma * rng.normal();
            }
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            feats.extend(row.iter().map(|v| (v / n) as f32));
        }
        let features = DenseMatrix::new(h * w, s.c, feats).expect("finite synthetic features");

        let (ih, iw) = (h * s.pixel_scale, w * s.pixel_scale);
        let mut labels = Vec::with_capacity(ih * iw);
        let mut rgb = Vec::with_capacity(ih * iw * 3);
        let noise = s.pixel_noise as i32;
        for y in 0..ih {
            for x in 0..iw {
                let class = patch_class[(y / s.pixel_scale) * w + x / s.pixel_scale];
                labels.push(class as u16);
                for ch in self.palette[class] {
                    let jitter = if noise > 0 { rng.index(2 * noise as usize + 1) as i32 - noise } else { 0 };
                    rgb.push((ch as i32 + jitter).clamp(0, 255) as u8);
                }
            }
        }
        let record = FeatureRecord {
            image_id: format!("{}_{index:05}", s.name),
            h,
            w,
            features,
            rgb: Some(RgbImage::new(ih, iw, rgb).expect("rgb size")),
            labels: Some(LabelMap::new(ih, iw, labels).expect("label size")),
        };
        SyntheticImage {
            record,
            patch_prototype,
            patch_class,
        }
    }
}

fn unit_gaussian(c: usize, rng: &mut RngStream) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..c).map(|_| rng.normal()).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Gram–Schmidt of `v` against `basis`; `None` if nothing is left.
fn orthogonalize(mut v: Vec<f64>, basis: &[Vec<f64>]) -> Option<Vec<f64>> {
    for b in basis {
        let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
        v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
    }
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    (n > 1e-6).then(|| v.into_iter().map(|x| x / n).collect())
}

fn draw_prototypes(spec: &SynthSpec, rng: &mut RngStream) -> DenseMatrix {
    let (k, s, c) = (spec.n_classes, spec.subconcepts_per_class, spec.c);
    let rho = spec.subconcept_cosine.max(0.0);
    let (a, b) = (rho.sqrt(), (1.0 - rho).sqrt());
    // a fully orthonormal frame when the dimension has room for it
    let exact = c >= k * (s + 1);
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let next = |basis: &mut Vec<Vec<f64>>, rng: &mut RngStream, local: &[Vec<f64>]| loop {
        let v = unit_gaussian(c, rng);
        let against: &[Vec<f64>] = if exact { basis } else { local };
        if let Some(u) = orthogonalize(v, against) {
            if exact {
                basis.push(u.clone());
            }
            return u;
        }
    };
    let mut rows = Vec::with_capacity(k * s);
    for _ in 0..k {
        let class_dir = next(&mut basis, rng, &[]);
        for _ in 0..s {
            let offset = next(&mut basis, rng, std::slice::from_ref(&class_dir));
            let p: Vec<f32> = class_dir
                .iter()
                .zip(&offset)
                .map(|(u, v)| (a * u + b * v) as f32)
                .collect();
            rows.push(p);
        }
    }
    let mut m = DenseMatrix::from_rows(&rows).expect("prototype rows");
    m = m.normalized_rows().expect("unit prototypes");
    m
}

/// Writes `n_train + n_val` records plus `manifest.json` into `out_dir`.
pub fn generate_synthetic_dataset(spec: &SynthSpec, out_dir: &Path) -> Result<DatasetManifest> {
    let world = SyntheticWorld::new(spec)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut records = Vec::with_capacity(spec.n_train + spec.n_val);
    for i in 0..spec.n_train + spec.n_val {
        let img = world.render(i);
        let file = format!("{}.causefeat", img.record.image_id);
        write_feature_file(&img.record, &out_dir.join(&file))?;
        records.push(ManifestRecord {
            path: file.into(),
            split: if i < spec.n_train { Split::Train } else { Split::Val },
        });
    }
    let manifest = DatasetManifest {
        name: spec.name.clone(),
        classes: spec.n_classes,
        feature_dim: spec.c,
        patch_grid: spec.grid,
        records,
        base_dir: out_dir.to_path_buf(),
    };
    manifest.save(&out_dir.join("manifest.json"))?;
    Ok(manifest)
}
