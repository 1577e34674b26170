use std::fs;
use std::io::BufWriter;
use std::path::Path;

use super::metrics::EvalReport;
use crate::error::{Error, Result};
use crate::features::format::Reader;
use crate::features::{LabelMap, IGNORE};

/// Fixed 16-colour palette cycled by label index; [`IGNORE`] renders black.
pub const PALETTE: [[u8; 3]; 16] = [
    [128, 64, 128],
    [244, 35, 232],
    [70, 70, 70],
    [102, 102, 156],
    [190, 153, 153],
    [153, 153, 153],
    [250, 170, 30],
    [220, 220, 0],
    [107, 142, 35],
    [152, 251, 152],
    [70, 130, 180],
    [220, 20, 60],
    [255, 0, 0],
    [0, 0, 142],
    [0, 60, 100],
    [0, 80, 100],
];

const LABEL_MAGIC: &[u8; 4] = b"CAUL";
const LABEL_VERSION: u32 = 1;

pub fn write_metrics_json(report: &EvalReport, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(report).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Two-column `metric  value` table followed by per-class IoU rows.
pub fn write_metrics_tsv(report: &EvalReport, path: &Path) -> Result<()> {
    let mut out = String::from("metric\tvalue\n");
    out.push_str(&format!("mIoU\t{:.6}\npAcc\t{:.6}\nn_pixels\t{}\n", report.miou, report.pacc, report.n_pixels));
    for (c, iou) in report.per_class_iou.iter().enumerate() {
        let v = iou.map_or_else(|| "NA".to_string(), |v| format!("{v:.6}"));
        out.push_str(&format!("iou_class_{c}\t{v}\n"));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// 8-bit indexed PNG.
pub fn write_label_png(labels: &LabelMap, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), labels.width as u32, labels.height as u32);
    enc.set_color(png::ColorType::Indexed);
    enc.set_depth(png::BitDepth::Eight);
    let mut palette: Vec<u8> = PALETTE.iter().flatten().copied().collect();
    palette.extend_from_slice(&[0, 0, 0]);
    enc.set_palette(palette);
    let data: Vec<u8> = labels
        .values
        .iter()
        .map(|&v| if v == IGNORE { PALETTE.len() as u8 } else { (v as usize % PALETTE.len()) as u8 })
        .collect();
    let png_err = |e: png::EncodingError| Error::io(path, std::io::Error::other(e));
    let mut writer = enc.write_header().map_err(png_err)?;
    writer.write_image_data(&data).map_err(png_err)?;
    writer.finish().map_err(png_err)
}

/// `CAUL | u32 version | u32 H | u32 W | u16 labels`, little-endian; the
/// label block matches the one inside feature files.
pub fn write_label_payload(labels: &LabelMap, path: &Path) -> Result<()> {
    let mut out = Vec::with_capacity(16 + labels.values.len() * 2);
    out.extend_from_slice(LABEL_MAGIC);
    for v in [LABEL_VERSION, labels.height as u32, labels.width as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in &labels.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_label_payload(path: &Path) -> Result<LabelMap> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader::new(&bytes, path);
    r.magic(LABEL_MAGIC)?;
    r.version(LABEL_VERSION)?;
    let (h, w) = (r.u32()? as usize, r.u32()? as usize);
    let n = h.checked_mul(w).ok_or_else(|| r.inconsistent("size overflow"))?;
    let values = r
        .take(n * 2)?
        .chunks_exact(2)
        .map(|b| u16::from_le_bytes([b[0], b[1]]))
        .collect();
    r.finish()?;
    LabelMap::new(h, w, values)
}
