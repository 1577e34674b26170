//! Dense row-major matrices and the handful of kernels the pipeline needs.
//!
//! Storage is `f32`; dot products and reductions accumulate in `f64`.

use crate::error::{Error, Result};

/// Row-major `rows × cols` matrix of finite `f32` values.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dims(
                "DenseMatrix::new",
                format!("{} values ({rows}x{cols})", rows * cols),
                data.len(),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("DenseMatrix::new"));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::dims(
                    "DenseMatrix::from_rows",
                    format!("{cols} columns"),
                    format!("{} in row {i}", r.len()),
                ));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    /// Converts from `f64` values, failing on non-finite entries.
    pub fn from_f64(rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        Self::new(rows, cols, data.iter().map(|&v| v as f32).collect())
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Mutable access to the raw buffer. Callers must keep entries finite.
    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        // chunks_exact on an empty-column matrix would panic on zero size.
        (0..self.rows).map(move |i| self.row(i))
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f32) {
        self.data[r * self.cols + c] = v;
    }

    /// Gathers the listed rows into a new matrix.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    /// Stacks matrices with equal column counts vertically.
    pub fn vstack(parts: &[&DenseMatrix]) -> Result<Self> {
        let cols = parts.first().map_or(0, |m| m.cols);
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            if p.cols != cols {
                return Err(Error::dims("DenseMatrix::vstack", cols, p.cols));
            }
            data.extend_from_slice(&p.data);
            rows += p.rows;
        }
        Ok(Self { rows, cols, data })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Euclidean norms of every row, accumulated in `f64`.
    pub fn row_norms(&self) -> Vec<f64> {
        self.row_iter().map(norm).collect()
    }

    /// Returns a copy with unit-norm rows, rejecting rows with norm ≤ 1e-12.
    pub fn normalized_rows(&self) -> Result<Self> {
        let mut out = self.clone();
        for i in 0..self.rows {
            let n = norm(self.row(i));
            if n <= 1e-12 {
                return Err(Error::ZeroNormRow {
                    op: "normalized_rows",
                    row: i,
                });
            }
            for v in out.row_mut(i) {
                *v = (*v as f64 / n) as f32;
            }
        }
        Ok(out)
    }
}

#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

#[inline]
pub fn norm(a: &[f32]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity of two vectors; zero-norm inputs yield `None`.
pub fn cosine(a: &[f32], b: &[f32]) -> Option<f64> {
    let (na, nb) = (norm(a), norm(b));
    if na <= 1e-12 || nb <= 1e-12 {
        return None;
    }
    Some((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Pairwise cosine similarities `cos(A_i, B_j)`, optionally clamped at zero.
pub fn cosine_matrix(a: &DenseMatrix, b: &DenseMatrix, clamp_nonneg: bool) -> Result<DenseMatrix> {
    let data = cosine_matrix_f64(a, b, clamp_nonneg)?;
    DenseMatrix::from_f64(a.rows(), b.rows(), &data)
}

/// Same as [`cosine_matrix`] but keeps the `f64` values.
pub fn cosine_matrix_f64(a: &DenseMatrix, b: &DenseMatrix, clamp_nonneg: bool) -> Result<Vec<f64>> {
    if a.cols() != b.cols() {
        return Err(Error::dims("cosine_matrix", a.cols(), b.cols()));
    }
    let na = checked_norms(a, "cosine_matrix (A)")?;
    let nb = checked_norms(b, "cosine_matrix (B)")?;
    let mut out = Vec::with_capacity(a.rows() * b.rows());
    for (i, ra) in a.row_iter().enumerate() {
        for (j, rb) in b.row_iter().enumerate() {
            let mut c = (dot(ra, rb) / (na[i] * nb[j])).clamp(-1.0, 1.0);
            if clamp_nonneg && c < 0.0 {
                c = 0.0;
            }
            out.push(c);
        }
    }
    Ok(out)
}

pub(crate) fn checked_norms(m: &DenseMatrix, op: &'static str) -> Result<Vec<f64>> {
    m.row_iter()
        .enumerate()
        .map(|(i, r)| {
            let n = norm(r);
            if n > 1e-12 {
                Ok(n)
            } else {
                Err(Error::ZeroNormRow { op, row: i })
            }
        })
        .collect()
}

/// Channelwise bilinear upsampling with the align-corners convention.
///
/// `grid` holds `h*w` rows of `d` channels in row-major grid order; the result
/// holds `out_h*out_w` rows.
pub fn bilinear_upsample(
    grid: &DenseMatrix,
    h: usize,
    w: usize,
    out_h: usize,
    out_w: usize,
) -> Result<DenseMatrix> {
    if grid.rows() != h * w || h == 0 || w == 0 {
        return Err(Error::dims("bilinear_upsample", h * w, grid.rows()));
    }
    if out_h < h || out_w < w {
        return Err(Error::InvalidArgument(format!(
            "bilinear_upsample cannot downscale {h}x{w} to {out_h}x{out_w}"
        )));
    }
    let d = grid.cols();
    let ys = axis_weights(h, out_h);
    let xs = axis_weights(w, out_w);
    let mut out = Vec::with_capacity(out_h * out_w * d);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let (a, b) = (grid.row(y0 * w + x0), grid.row(y0 * w + x1));
            let (c, e) = (grid.row(y1 * w + x0), grid.row(y1 * w + x1));
            for ch in 0..d {
                let top = a[ch] as f64 * (1.0 - fx) + b[ch] as f64 * fx;
                let bot = c[ch] as f64 * (1.0 - fx) + e[ch] as f64 * fx;
                out.push((top * (1.0 - fy) + bot * fy) as f32);
            }
        }
    }
    DenseMatrix::new(out_h * out_w, d, out)
}

/// Source index pair and fractional weight per output coordinate.
fn axis_weights(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    (0..dst)
        .map(|o| {
            if src == 1 || dst == 1 {
                return (0, 0, 0.0);
            }
            let pos = o as f64 * (src - 1) as f64 / (dst - 1) as f64;
            let i0 = (pos.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, pos - i0 as f64)
        })
        .collect()
}
