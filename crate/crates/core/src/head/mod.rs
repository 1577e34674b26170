//! MLP segmentation head with hand-written forward and backward passes.
//!
//! `Y = L2(act(L1(T)))` maps `c`-dimensional patch features to `r`
//! dimensions. A linear projection `P(Y)` is applied only in training mode,
//! where it feeds the contrastive loss; inference and clustering use `Y`.

mod ema;
mod io;

pub use ema::{ema_update, TeacherHead};
pub use io::{read_head_checkpoint, write_head_checkpoint, HEAD_MAGIC, HEAD_VERSION};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::DenseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Position of each parameter tensor in [`MlpHead::params`].
pub const W1: usize = 0;
pub const B1: usize = 1;
pub const W2: usize = 2;
pub const B2: usize = 3;
pub const WP: usize = 4;
pub const BP: usize = 5;
pub const PARAM_NAMES: [&str; 6] = ["layer1.weight", "layer1.bias", "layer2.weight", "layer2.bias", "proj.weight", "proj.bias"];

/// Student head parameters. Weights are stored `fan_in × fan_out`; biases as
/// `1 × fan_out` matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpHead {
    pub c: usize,
    pub r: usize,
    pub activation: Activation,
    pub params: [DenseMatrix; 6],
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub mode: Mode,
    pub n: usize,
    input: Vec<f64>,
    pre_hidden: Vec<f64>,
    hidden: Vec<f64>,
    /// `Y`, `n × r`.
    pub output: Vec<f64>,
    /// `P(Y)` in training mode.
    pub projected: Option<Vec<f64>>,
    /// Which parameter tensors the forward pass read.
    pub params_used: [bool; 6],
}

impl ForwardCache {
    /// First-layer pre-activations, `n × c`.
    pub fn pre_hidden(&self) -> &[f64] {
        &self.pre_hidden
    }
}

/// Gradients of every parameter tensor plus the input.
#[derive(Debug, Clone)]
pub struct HeadGradients {
    pub params: [Vec<f64>; 6],
    pub input: Vec<f64>,
}

fn to_f64(m: &DenseMatrix) -> Vec<f64> {
    m.as_slice().iter().map(|&v| v as f64).collect()
}

/// `x (n × din) · w (din × dout) + b`.
fn affine(x: &[f64], n: usize, din: usize, w: &[f64], b: &[f64], dout: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * dout);
    for i in 0..n {
        let mut row = b.to_vec();
        for (k, &xv) in x[i * din..(i + 1) * din].iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            for (o, &wv) in row.iter_mut().zip(&w[k * dout..(k + 1) * dout]) {
                *o += xv * wv;
            }
        }
        out.extend(row);
    }
    out
}

/// Accumulates `dW += xᵀ g`, `db += Σ g` and returns `g wᵀ` for the rows of
/// `g` that are not entirely zero.
fn affine_backward(
    x: &[f64],
    g: &[f64],
    n: usize,
    din: usize,
    dout: usize,
    w: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
) -> Vec<f64> {
    let mut dx = vec![0.0; n * din];
    for i in 0..n {
        let gi = &g[i * dout..(i + 1) * dout];
        if gi.iter().all(|&v| v == 0.0) {
            continue;
        }
        for (d, &v) in db.iter_mut().zip(gi) {
            *d += v;
        }
        let xi = &x[i * din..(i + 1) * din];
        let dxi = &mut dx[i * din..(i + 1) * din];
        for k in 0..din {
            let wk = &w[k * dout..(k + 1) * dout];
            let dwk = &mut dw[k * dout..(k + 1) * dout];
            let xv = xi[k];
            let mut acc = 0.0;
            for ((dwv, &wv), &gv) in dwk.iter_mut().zip(wk).zip(gi) {
                *dwv += xv * gv;
                acc += wv * gv;
            }
            dxi[k] = acc;
        }
    }
    dx
}

impl MlpHead {
    /// Weights uniform in `±1/√fan_in`, biases zero.
    pub fn init(c: usize, r: usize, rng: &mut RngStream) -> Result<Self> {
        if c == 0 || r == 0 {
            return Err(Error::InvalidArgument(format!("head dims must be positive, got c={c}, r={r}")));
        }
        let mut uniform = |fan_in: usize, fan_out: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let data: Vec<f32> = (0..fan_in * fan_out)
                .map(|_| rng.uniform_range(-bound, bound) as f32)
                .collect();
            DenseMatrix::new(fan_in, fan_out, data).expect("finite init")
        };
        let w1 = uniform(c, c);
        let w2 = uniform(c, r);
        let wp = uniform(r, r);
        Ok(Self {
            c,
            r,
            activation: Activation::Relu,
            params: [w1, DenseMatrix::zeros(1, c), w2, DenseMatrix::zeros(1, r), wp, DenseMatrix::zeros(1, r)],
        })
    }

    /// Shapes `(rows, cols)` of the six tensors for the given dims.
    pub fn shapes(c: usize, r: usize) -> [(usize, usize); 6] {
        [(c, c), (1, c), (c, r), (1, r), (r, r), (1, r)]
    }

    pub fn zeros(c: usize, r: usize) -> Self {
        Self {
            c,
            r,
            activation: Activation::Relu,
            params: Self::shapes(c, r).map(|(a, b)| DenseMatrix::zeros(a, b)),
        }
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.as_slice().len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(DenseMatrix::is_finite)
    }

    /// Forward pass. Returns `Y` (`n × r`), `P(Y)` in training mode, and the
    /// cache for [`MlpHead::backward`].
    pub fn forward(&self, t: &DenseMatrix, mode: Mode) -> Result<(DenseMatrix, Option<DenseMatrix>, ForwardCache)> {
        if t.cols() != self.c {
            return Err(Error::dims("head_forward", self.c, t.cols()));
        }
        if !t.is_finite() {
            return Err(Error::NonFinite("head_forward input"));
        }
        let cache = self.forward_cache(t, mode);
        let y = DenseMatrix::from_f64(cache.n, self.r, &cache.output)?;
        let proj = match &cache.projected {
            Some(p) => Some(DenseMatrix::from_f64(cache.n, self.r, p)?),
            None => None,
        };
        Ok((y, proj, cache))
    }

    /// Forward pass keeping everything in `f64`.
    pub fn forward_cache(&self, t: &DenseMatrix, mode: Mode) -> ForwardCache {
        let (n, c, r) = (t.rows(), self.c, self.r);
        let mut used = [false; 6];
        let mut read = |i: usize| {
            used[i] = true;
            to_f64(&self.params[i])
        };
        let input = to_f64(t);
        let pre_hidden = affine(&input, n, c, &read(W1), &read(B1), c);
        let hidden: Vec<f64> = match self.activation {
            Activation::Relu => pre_hidden.iter().map(|&v| v.max(0.0)).collect(),
            Activation::Identity => pre_hidden.clone(),
        };
        let output = affine(&hidden, n, c, &read(W2), &read(B2), r);
        let projected = match mode {
            Mode::Train => Some(affine(&output, n, r, &read(WP), &read(BP), r)),
            Mode::Infer => None,
        };
        ForwardCache {
            mode,
            n,
            input,
            pre_hidden,
            hidden,
            output,
            projected,
            params_used: used,
        }
    }

    /// Reverse-mode gradients given `∂L/∂out`, where `out` is the final
    /// output of the cached forward pass: `P(Y)` in training mode, `Y` in
    /// inference mode.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &[f64]) -> Result<HeadGradients> {
        let (n, c, r) = (cache.n, self.c, self.r);
        if grad_out.len() != n * r {
            return Err(Error::dims("head_backward", n * r, grad_out.len()));
        }
        let mut grads: [Vec<f64>; 6] = Self::shapes(c, r).map(|(a, b)| vec![0.0; a * b]);
        let [g_w1, g_b1, g_w2, g_b2, g_wp, g_bp] = &mut grads;
        let grad_y = match cache.mode {
            Mode::Train => affine_backward(&cache.output, grad_out, n, r, r, &to_f64(&self.params[WP]), g_wp, g_bp),
            Mode::Infer => grad_out.to_vec(),
        };
        let mut grad_h = affine_backward(&cache.hidden, &grad_y, n, c, r, &to_f64(&self.params[W2]), g_w2, g_b2);
        if self.activation == Activation::Relu {
            for (g, &p) in grad_h.iter_mut().zip(&cache.pre_hidden) {
                if p <= 0.0 {
                    *g = 0.0;
                }
            }
        }
        let input = affine_backward(&cache.input, &grad_h, n, c, c, &to_f64(&self.params[W1]), g_w1, g_b1);
        Ok(HeadGradients { params: grads, input })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn features(n: usize, c: usize, seed: u64) -> DenseMatrix {
        let mut rng = RngStream::new(seed, "feat");
        DenseMatrix::from_f64(n, c, &(0..n * c).map(|_| rng.normal()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn init_is_seeded_and_shaped() {
        let a = MlpHead::init(384, 90, &mut RngStream::new(1, "h")).unwrap();
        let b = MlpHead::init(384, 90, &mut RngStream::new(1, "h")).unwrap();
        assert_eq!(a, b);
        let shapes: Vec<_> = a.params.iter().map(|p| p.shape()).collect();
        assert_eq!(shapes[W1], (384, 384));
        assert_eq!(shapes[W2], (384, 90));
        assert_eq!(shapes[WP], (90, 90));
        let bound = 1.0 / (384f32).sqrt();
        assert!(a.params[W1].as_slice().iter().all(|v| v.abs() <= bound));
        assert!(a.params[B1].as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_input_gives_bias_output() {
        let h = MlpHead::init(8, 4, &mut RngStream::new(0, "h")).unwrap();
        let (y, _, _) = h.forward(&DenseMatrix::zeros(3, 8), Mode::Infer).unwrap();
        assert!(y.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_params_give_zero_output() {
        let h = MlpHead::zeros(5, 3);
        let (y, p, _) = h.forward(&features(4, 5, 1), Mode::Train).unwrap();
        assert!(y.as_slice().iter().all(|&v| v == 0.0));
        assert!(p.unwrap().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn output_shape() {
        let h = MlpHead::init(384, 90, &mut RngStream::new(2, "h")).unwrap();
        let (y, p, _) = h.forward(&features(256, 384, 3), Mode::Infer).unwrap();
        assert_eq!(y.shape(), (256, 90));
        assert!(p.is_none());
    }

    #[test]
    fn identity_activation_is_linear_without_bias() {
        let mut h = MlpHead::init(6, 3, &mut RngStream::new(4, "h")).unwrap();
        h.activation = Activation::Identity;
        let t = features(5, 6, 5);
        let mut t2 = t.clone();
        t2.as_mut_slice().iter_mut().for_each(|v| *v *= 2.5);
        let y1 = h.forward_cache(&t, Mode::Infer).output;
        let y2 = h.forward_cache(&t2, Mode::Infer).output;
        for (a, b) in y1.iter().zip(&y2) {
            assert!((2.5 * a - b).abs() < 1e-5 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn infer_mode_never_reads_projection() {
        let h = MlpHead::init(6, 3, &mut RngStream::new(4, "h")).unwrap();
        let c = h.forward_cache(&features(2, 6, 1), Mode::Infer);
        assert!(!c.params_used[WP] && !c.params_used[BP]);
        assert!(c.params_used[W1] && c.params_used[W2]);
        let c = h.forward_cache(&features(2, 6, 1), Mode::Train);
        assert!(c.params_used.iter().all(|&u| u));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let h = MlpHead::init(6, 3, &mut RngStream::new(4, "h")).unwrap();
        let cache = h.forward_cache(&features(5, 6, 1), Mode::Train);
        let g = h.backward(&cache, &[0.0; 15]).unwrap();
        assert!(g.params.iter().flatten().all(|&v| v == 0.0));
        assert!(g.input.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dead_relu_unit_blocks_layer1_gradient() {
        let mut h = MlpHead::init(3, 2, &mut RngStream::new(4, "h")).unwrap();
        // hidden unit 1 has a large negative bias: always dead
        h.params[B1].set(0, 1, -100.0);
        let cache = h.forward_cache(&features(4, 3, 2), Mode::Train);
        let g = h.backward(&cache, &[1.0, -0.5, 0.3, 0.2, -1.0, 0.7, 0.1, 0.9]).unwrap();
        for k in 0..3 {
            assert_eq!(g.params[W1][k * 3 + 1], 0.0);
        }
        assert_eq!(g.params[B1][1], 0.0);
    }
}
