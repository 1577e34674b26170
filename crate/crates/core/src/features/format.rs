//! The `.causefeat` record format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "CAUF"  u32 version  u32 h  u32 w  u32 c
//! u32 id_len  id bytes (UTF-8)
//! f32 × h·w·c                      patch features, row-major
//! u8 has_rgb    [u32 H  u32 W  u8 × H·W·3]
//! u8 has_labels [u32 H  u32 W  u16 × H·W]
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::DenseMatrix;

pub const FEATURE_MAGIC: &[u8; 4] = b"CAUF";
pub const FEATURE_VERSION: u32 = 1;

/// Label value excluded from every metric.
pub const IGNORE: u16 = u16::MAX;

/// Per-pixel class indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<u16>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, values: Vec<u16>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::dims("LabelMap::new", height * width, values.len()));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn filled(height: usize, width: usize, value: u16) -> Self {
        Self {
            height,
            width,
            values: vec![value; height * width],
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u16 {
        self.values[y * self.width + x]
    }

    /// Largest non-IGNORE value plus one (0 for an all-IGNORE map).
    pub fn class_bound(&self) -> usize {
        self.values
            .iter()
            .filter(|&&v| v != IGNORE)
            .map(|&v| v as usize + 1)
            .max()
            .unwrap_or(0)
    }

    /// Majority label per cell of an `h × w` grid laid over the map.
    /// IGNORE pixels do not vote; cells with no votes get IGNORE; ties go to
    /// the lower class id.
    pub fn downsample_majority(&self, h: usize, w: usize) -> Vec<u16> {
        let mut votes: Vec<std::collections::BTreeMap<u16, usize>> = vec![Default::default(); h * w];
        for y in 0..self.height {
            let cy = y * h / self.height;
            for x in 0..self.width {
                let v = self.get(y, x);
                if v == IGNORE {
                    continue;
                }
                let cx = x * w / self.width;
                *votes[cy * w + cx].entry(v).or_default() += 1;
            }
        }
        votes
            .into_iter()
            .map(|cell| {
                cell.into_iter()
                    .fold(None, |best: Option<(u16, usize)>, (v, n)| match best {
                        Some((_, bn)) if bn >= n => best,
                        _ => Some((v, n)),
                    })
                    .map_or(IGNORE, |(v, _)| v)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub height: usize,
    pub width: usize,
    /// Interleaved RGB bytes, row-major.
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::dims("RgbImage::new", height * width * 3, data.len()));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> [u8; 3] {
        let o = (y * self.width + x) * 3;
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }
}

/// One image's frozen patch features plus optional thumbnail and ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub image_id: String,
    pub h: usize,
    pub w: usize,
    pub features: DenseMatrix,
    pub rgb: Option<RgbImage>,
    pub labels: Option<LabelMap>,
}

impl FeatureRecord {
    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    /// Output resolution for pixel-level evaluation: the label map's, else
    /// the thumbnail's, else the patch grid itself.
    pub fn image_size(&self) -> (usize, usize) {
        if let Some(l) = &self.labels {
            (l.height, l.width)
        } else if let Some(rgb) = &self.rgb {
            (rgb.height, rgb.width)
        } else {
            (self.h, self.w)
        }
    }

    pub fn check(&self) -> std::result::Result<(), String> {
        if self.features.rows() != self.h * self.w {
            return Err(format!(
                "feature rows {} != h*w = {}",
                self.features.rows(),
                self.h * self.w
            ));
        }
        if let Some(rgb) = &self.rgb {
            if rgb.height < self.h || rgb.width < self.w {
                return Err(format!("rgb {}x{} smaller than patch grid", rgb.height, rgb.width));
            }
        }
        if let Some(l) = &self.labels {
            if l.height < self.h || l.width < self.w {
                return Err(format!("labels {}x{} smaller than patch grid", l.height, l.width));
            }
            if let Some(rgb) = &self.rgb {
                if (rgb.height, rgb.width) != (l.height, l.width) {
                    return Err("rgb and label maps differ in size".into());
                }
            }
        }
        Ok(())
    }
}

pub fn write_feature_file(record: &FeatureRecord, path: &Path) -> Result<()> {
    record.check().map_err(|detail| Error::DimInconsistency {
        path: path.to_path_buf(),
        detail,
    })?;
    fs::write(path, encode(record)).map_err(|e| Error::io(path, e))
}

pub fn read_feature_file(path: &Path) -> Result<FeatureRecord> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

fn encode(r: &FeatureRecord) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + r.features.as_slice().len() * 4);
    out.extend_from_slice(FEATURE_MAGIC);
    for v in [FEATURE_VERSION, r.h as u32, r.w as u32, r.feature_dim() as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(r.image_id.len() as u32).to_le_bytes());
    out.extend_from_slice(r.image_id.as_bytes());
    for v in r.features.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    match &r.rgb {
        Some(rgb) => {
            out.push(1);
            out.extend_from_slice(&(rgb.height as u32).to_le_bytes());
            out.extend_from_slice(&(rgb.width as u32).to_le_bytes());
            out.extend_from_slice(&rgb.data);
        }
        None => out.push(0),
    }
    match &r.labels {
        Some(l) => {
            out.push(1);
            out.extend_from_slice(&(l.height as u32).to_le_bytes());
            out.extend_from_slice(&(l.width as u32).to_le_bytes());
            for v in &l.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        None => out.push(0),
    }
    out
}

/// Little-endian cursor that reports truncation against a file path.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8], path: &'a Path) -> Self {
        Self { buf, pos: 0, path }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Truncated {
                path: self.path.to_path_buf(),
            }),
        }
    }

    pub(crate) fn magic(&mut self, expected: &'static [u8; 4]) -> Result<()> {
        let got = self.take(4).map_err(|_| Error::BadMagic {
            path: self.path.to_path_buf(),
            expected: std::str::from_utf8(expected).unwrap_or("?"),
        })?;
        if got != expected {
            return Err(Error::BadMagic {
                path: self.path.to_path_buf(),
                expected: std::str::from_utf8(expected).unwrap_or("?"),
            });
        }
        Ok(())
    }

    pub(crate) fn version(&mut self, supported: u32) -> Result<()> {
        let found = self.u32()?;
        if found != supported {
            return Err(Error::VersionMismatch {
                path: self.path.to_path_buf(),
                found,
                supported,
            });
        }
        Ok(())
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f32_vec(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| self.inconsistent("size overflow"))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn inconsistent(&self, detail: impl Into<String>) -> Error {
        Error::DimInconsistency {
            path: self.path.to_path_buf(),
            detail: detail.into(),
        }
    }

    pub(crate) fn finish(self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(self.inconsistent(format!(
                "{} trailing bytes",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn decode(bytes: &[u8], path: &Path) -> Result<FeatureRecord> {
    let mut r = Reader::new(bytes, path);
    r.magic(FEATURE_MAGIC)?;
    r.version(FEATURE_VERSION)?;
    let h = r.u32()? as usize;
    let w = r.u32()? as usize;
    let c = r.u32()? as usize;
    let id_len = r.u32()? as usize;
    let image_id = String::from_utf8(r.take(id_len)?.to_vec())
        .map_err(|_| r.inconsistent("image id is not UTF-8"))?;
    let n = h
        .checked_mul(w)
        .and_then(|hw| hw.checked_mul(c))
        .ok_or_else(|| r.inconsistent("h*w*c overflows"))?;
    let payload = r.f32_vec(n)?;
    let features = DenseMatrix::new(h * w, c, payload).map_err(|_| r.inconsistent("non-finite feature values"))?;
    let rgb = if r.u8()? != 0 {
        let (ih, iw) = (r.u32()? as usize, r.u32()? as usize);
        let data = r.take(ih * iw * 3)?.to_vec();
        Some(RgbImage::new(ih, iw, data)?)
    } else {
        None
    };
    let labels = if r.u8()? != 0 {
        let (ih, iw) = (r.u32()? as usize, r.u32()? as usize);
        let values = r
            .take(ih * iw * 2)?
            .chunks_exact(2)
            .map(|b| u16::from_le_bytes([b[0], b[1]]))
            .collect();
        Some(LabelMap::new(ih, iw, values)?)
    } else {
        None
    };
    r.finish()?;
    let record = FeatureRecord {
        image_id,
        h,
        w,
        features,
        rgb,
        labels,
    };
    record.check().map_err(|d| Error::DimInconsistency {
        path: path.to_path_buf(),
        detail: d,
    })?;
    Ok(record)
}
