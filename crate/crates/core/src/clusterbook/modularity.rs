//! Soft modularity of a prototype assignment over the patch affinity graph,
//! and its gradient with respect to the prototypes.
//!
//! With `C = max(0, cos(T, M))`, `B = A - d dᵀ / 2e` and a kernel `κ`
//! applied entrywise to the co-assignment matrix `G = C Cᵀ`:
//!
//! ```text
//! H = (1 / 2e) · Tr(κ(G) · B) = (1 / 2e) · Σ_ij κ(G_ij) B_ij
//! ```
//!
//! `κ(x) = tanh(x / τ)` is the training objective; `κ(x) = x` recovers the
//! plain relaxed modularity `(1/2e) Tr(Cᵀ B C)`.

use crate::error::{Error, Result};
use crate::tensor::{checked_norms, DenseMatrix};

/// Clamped-cosine affinity graph of one record's patch features.
#[derive(Debug, Clone)]
pub struct AffinityStats {
    pub n: usize,
    /// `n × n`, row-major, zero diagonal.
    pub affinity: Vec<f64>,
    pub degrees: Vec<f64>,
    /// Half the total affinity mass.
    pub edges: f64,
}

impl AffinityStats {
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.affinity[i * self.n + j]
    }

    /// Modularity matrix entry `A_ij - d_i d_j / 2e`.
    #[inline]
    pub fn modularity_entry(&self, i: usize, j: usize) -> f64 {
        self.get(i, j) - self.degrees[i] * self.degrees[j] / (2.0 * self.edges)
    }
}

/// `A_ij = max(0, cos(t_i, t_j))` for `i ≠ j`, `A_ii = 0`.
pub fn affinity(t: &DenseMatrix) -> Result<AffinityStats> {
    let n = t.rows();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("affinity needs at least 2 rows, got {n}")));
    }
    let unit = unit_rows(t, "affinity")?;
    let c = t.cols();
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        let ri = &unit[i * c..(i + 1) * c];
        for j in i + 1..n {
            let rj = &unit[j * c..(j + 1) * c];
            let v = ri.iter().zip(rj).map(|(x, y)| x * y).sum::<f64>().clamp(0.0, 1.0);
            a[i * n + j] = v;
            a[j * n + i] = v;
        }
    }
    let degrees: Vec<f64> = a.chunks_exact(n).map(|r| r.iter().sum()).collect();
    let edges = degrees.iter().sum::<f64>() / 2.0;
    if edges <= 0.0 {
        return Err(Error::DegenerateGraph);
    }
    Ok(AffinityStats {
        n,
        affinity: a,
        degrees,
        edges,
    })
}

/// Unit-normalized rows as a flat `f64` buffer.
pub(crate) fn unit_rows(m: &DenseMatrix, op: &'static str) -> Result<Vec<f64>> {
    let norms = checked_norms(m, op)?;
    let mut out = Vec::with_capacity(m.rows() * m.cols());
    for (r, n) in m.row_iter().zip(&norms) {
        out.extend(r.iter().map(|&v| v as f64 / n));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AssignmentKernel {
    /// `tanh(x / τ)`.
    Tanh { tau: f64 },
    /// Identity; the unscaled relaxation.
    Linear,
}

impl AssignmentKernel {
    #[inline]
    fn value(self, x: f64) -> f64 {
        match self {
            Self::Tanh { tau } => (x / tau).tanh(),
            Self::Linear => x,
        }
    }

    #[inline]
    fn derivative(self, x: f64) -> f64 {
        match self {
            Self::Tanh { tau } => {
                let t = (x / tau).tanh();
                (1.0 - t * t) / tau
            }
            Self::Linear => 1.0,
        }
    }
}

/// Modularity of an explicit `n × k` assignment matrix, via the exchanged
/// `n × n` trace form.
pub fn modularity_of_assignment(
    assignment: &[f64],
    k: usize,
    stats: &AffinityStats,
    kernel: AssignmentKernel,
) -> f64 {
    let n = stats.n;
    debug_assert_eq!(assignment.len(), n * k);
    let mut total = 0.0;
    for i in 0..n {
        let ci = &assignment[i * k..(i + 1) * k];
        for j in 0..n {
            let cj = &assignment[j * k..(j + 1) * k];
            let g: f64 = ci.iter().zip(cj).map(|(a, b)| a * b).sum();
            total += kernel.value(g) * stats.modularity_entry(i, j);
        }
    }
    total / (2.0 * stats.edges)
}

/// Cosine scores `S = cos(T, M)` (unclamped), `n × k`, plus unit prototypes.
struct Scores {
    s: Vec<f64>,
    t_unit: Vec<f64>,
    m_unit: Vec<f64>,
    m_norm: Vec<f64>,
}

fn scores(t: &DenseMatrix, m: &DenseMatrix) -> Result<Scores> {
    if t.cols() != m.cols() {
        return Err(Error::dims("modularity", t.cols(), m.cols()));
    }
    let (n, k, c) = (t.rows(), m.rows(), t.cols());
    let t_unit = unit_rows(t, "modularity (features)")?;
    let m_norm = checked_norms(m, "modularity (prototypes)")?;
    let m_unit: Vec<f64> = m
        .row_iter()
        .zip(&m_norm)
        .flat_map(|(r, &nrm)| r.iter().map(move |&v| v as f64 / nrm))
        .collect();
    let mut s = vec![0.0; n * k];
    for i in 0..n {
        let ti = &t_unit[i * c..(i + 1) * c];
        for a in 0..k {
            let ma = &m_unit[a * c..(a + 1) * c];
            s[i * k + a] = ti.iter().zip(ma).map(|(x, y)| x * y).sum::<f64>().clamp(-1.0, 1.0);
        }
    }
    Ok(Scores {
        s,
        t_unit,
        m_unit,
        m_norm,
    })
}

/// `C = max(0, cos(T, M))` as a flat `n × k` buffer.
pub fn assignment_matrix(t: &DenseMatrix, m: &DenseMatrix) -> Result<Vec<f64>> {
    Ok(scores(t, m)?.s.into_iter().map(|v| v.max(0.0)).collect())
}

/// Tanh-scaled modularity `H(T, M)`.
pub fn modularity(t: &DenseMatrix, m: &DenseMatrix, tau_mod: f64) -> Result<f64> {
    modularity_with_kernel(t, m, AssignmentKernel::Tanh { tau: tau_mod })
}

pub fn modularity_with_kernel(t: &DenseMatrix, m: &DenseMatrix, kernel: AssignmentKernel) -> Result<f64> {
    let stats = affinity(t)?;
    let c = assignment_matrix(t, m)?;
    Ok(modularity_of_assignment(&c, m.rows(), &stats, kernel))
}

/// Modularity value and its gradient with respect to the prototypes.
#[derive(Debug, Clone)]
pub struct ModularityEval {
    pub value: f64,
    /// `∂H/∂M`, `k × c`, ascent direction, in `f64`.
    pub gradient: Vec<f64>,
}

/// Evaluates `H` and `∂H/∂M` against precomputed affinity statistics.
pub fn modularity_and_gradient(
    t: &DenseMatrix,
    m: &DenseMatrix,
    stats: &AffinityStats,
    kernel: AssignmentKernel,
) -> Result<ModularityEval> {
    if stats.n != t.rows() {
        return Err(Error::dims("modularity_and_gradient", stats.n, t.rows()));
    }
    let sc = scores(t, m)?;
    let (n, k, dim) = (t.rows(), m.rows(), t.cols());
    let c: Vec<f64> = sc.s.iter().map(|v| v.max(0.0)).collect();
    let inv2e = 1.0 / (2.0 * stats.edges);

    // W_ij = κ'(G_ij) B_ij / 2e ; dH/dC = (W + Wᵀ) C = 2 W C
    let mut value = 0.0;
    let mut d_c = vec![0.0; n * k];
    let mut w_row = vec![0.0; n];
    for i in 0..n {
        let ci = &c[i * k..(i + 1) * k];
        for (j, w) in w_row.iter_mut().enumerate() {
            let cj = &c[j * k..(j + 1) * k];
            let g: f64 = ci.iter().zip(cj).map(|(a, b)| a * b).sum();
            let b = stats.modularity_entry(i, j);
            value += kernel.value(g) * b;
            *w = kernel.derivative(g) * b * inv2e;
        }
        let out = &mut d_c[i * k..(i + 1) * k];
        for (j, &w) in w_row.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let cj = &c[j * k..(j + 1) * k];
            for (o, &v) in out.iter_mut().zip(cj) {
                *o += 2.0 * w * v;
            }
        }
    }
    value *= inv2e;

    // clamp subgradient: zero where cos <= 0; then back through S = T̂ M̂ᵀ
    let mut d_mhat = vec![0.0; k * dim];
    for i in 0..n {
        let ti = &sc.t_unit[i * dim..(i + 1) * dim];
        for a in 0..k {
            if sc.s[i * k + a] <= 0.0 {
                continue;
            }
            let g = d_c[i * k + a];
            if g == 0.0 {
                continue;
            }
            for (o, &x) in d_mhat[a * dim..(a + 1) * dim].iter_mut().zip(ti) {
                *o += g * x;
            }
        }
    }
    // through the row normalization m̂ = m / |m|
    let mut gradient = vec![0.0; k * dim];
    for a in 0..k {
        let mh = &sc.m_unit[a * dim..(a + 1) * dim];
        let gh = &d_mhat[a * dim..(a + 1) * dim];
        let proj: f64 = mh.iter().zip(gh).map(|(x, y)| x * y).sum();
        for ((o, &g), &u) in gradient[a * dim..(a + 1) * dim].iter_mut().zip(gh).zip(mh) {
            *o = (g - proj * u) / sc.m_norm[a];
        }
    }
    Ok(ModularityEval { value, gradient })
}

/// `∂H/∂M` for the tanh-scaled objective, as a `k × c` ascent direction.
pub fn modularity_gradient(t: &DenseMatrix, m: &DenseMatrix, tau_mod: f64) -> Result<DenseMatrix> {
    let stats = affinity(t)?;
    let eval = modularity_and_gradient(t, m, &stats, AssignmentKernel::Tanh { tau: tau_mod })?;
    DenseMatrix::from_f64(m.rows(), m.cols(), &eval.gradient)
}
