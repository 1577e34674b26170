//! `.causebook` files:
//!
//! ```text
//! "CAUB"  u32 version  u32 k  u32 c  f64 τ_mod  u8 builder  u64 seed
//! f32 × k·c                       prototypes, row-major
//! ```
//!
//! `D_M` is recomputed on load.

use std::fs;
use std::path::Path;

use super::{BookBuilder, Clusterbook, Provenance};
use crate::error::{Error, Result};
use crate::features::format::Reader;
use crate::tensor::DenseMatrix;

pub const BOOK_MAGIC: &[u8; 4] = b"CAUB";
pub const BOOK_VERSION: u32 = 1;

pub fn write_clusterbook(book: &Clusterbook, path: &Path) -> Result<()> {
    let m = book.prototypes();
    let mut out = Vec::with_capacity(33 + m.as_slice().len() * 4);
    out.extend_from_slice(BOOK_MAGIC);
    for v in [BOOK_VERSION, m.rows() as u32, m.cols() as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&book.tau_mod.to_le_bytes());
    out.push(match book.provenance.builder {
        BookBuilder::Modularity => 0,
        BookBuilder::KMeansPlusPlus => 1,
    });
    out.extend_from_slice(&book.provenance.seed.to_le_bytes());
    for v in m.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_clusterbook(path: &Path) -> Result<Clusterbook> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader::new(&bytes, path);
    r.magic(BOOK_MAGIC)?;
    r.version(BOOK_VERSION)?;
    let k = r.u32()? as usize;
    let c = r.u32()? as usize;
    let tau_mod = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
    let builder = match r.u8()? {
        0 => BookBuilder::Modularity,
        1 => BookBuilder::KMeansPlusPlus,
        t => return Err(r.inconsistent(format!("unknown builder tag {t}"))),
    };
    let seed = r.u64()?;
    let data = r.f32_vec(k * c)?;
    r.finish()?;
    let m = DenseMatrix::new(k, c, data).map_err(|_| Error::DimInconsistency {
        path: path.to_path_buf(),
        detail: "non-finite prototype values".into(),
    })?;
    Clusterbook::new(m, tau_mod, Provenance { builder, seed })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_bad_magic() {
        let m = DenseMatrix::from_rows(&[[1.0f32, 0.5, 0.0], [0.0, 1.0, -0.25]]).unwrap();
        let book = Clusterbook::new(
            m,
            0.1,
            Provenance {
                builder: BookBuilder::KMeansPlusPlus,
                seed: 42,
            },
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.causebook");
        write_clusterbook(&book, &p).unwrap();
        assert_eq!(read_clusterbook(&p).unwrap(), book);

        let mut bytes = fs::read(&p).unwrap();
        bytes[3] = b'F';
        fs::write(&p, bytes).unwrap();
        assert!(matches!(read_clusterbook(&p), Err(Error::BadMagic { .. })));
    }
}
