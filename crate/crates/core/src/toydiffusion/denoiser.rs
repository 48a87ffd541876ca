//! Dense conditional noise predictor with hand-written backpropagation.
//!
//! Input is `[time_embedding(t), x_t, e]`, followed by two SiLU hidden
//! layers and a linear read-out of the same dimension as `x_t`. A scalar
//! gate `s = w_s . h2 + b_s` on the last hidden layer adds `s x_t` to the
//! read-out, so noise outside the span of the read-out can still be
//! predicted.

use crate::error::{check_len, Error, Result};
use crate::rng::SeededRng;

use super::ConditioningEmbedding;

pub const DEFAULT_TIME_DIM: usize = 16;
pub const DEFAULT_HIDDEN: [usize; 2] = [128, 128];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    pub x_dim: usize,
    pub embed_dim: usize,
    pub time_dim: usize,
    pub hidden: [usize; 2],
}

/// Start offsets of each parameter block inside the flat weight vector.
#[derive(Debug, Clone, Copy)]
struct Layout {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
    ws: usize,
    bs: usize,
    end: usize,
}

impl Architecture {
    pub fn new(x_dim: usize, embed_dim: usize) -> Self {
        Self {
            x_dim,
            embed_dim,
            time_dim: DEFAULT_TIME_DIM,
            hidden: DEFAULT_HIDDEN,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.x_dim == 0 || self.embed_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "degenerate architecture {self:?}"
            )));
        }
        if !self.time_dim.is_multiple_of(2) {
            return Err(Error::InvalidArgument(
                "time embedding dim must be even".into(),
            ));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.time_dim + self.x_dim + self.embed_dim
    }

    fn layout(&self) -> Layout {
        let [h1, h2] = self.hidden;
        let w1 = 0;
        let b1 = w1 + h1 * self.input_dim();
        let w2 = b1 + h1;
        let b2 = w2 + h2 * h1;
        let w3 = b2 + h2;
        let b3 = w3 + self.x_dim * h2;
        let ws = b3 + self.x_dim;
        let bs = ws + h2;
        Layout {
            w1,
            b1,
            w2,
            b2,
            w3,
            b3,
            ws,
            bs,
            end: bs + 1,
        }
    }

    pub fn weight_count(&self) -> usize {
        self.layout().end
    }
}

/// Weights `theta` of the denoiser, stored flat in the order
/// `W1, b1, W2, b2, W3, b3, w_s, b_s` with row-major matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams {
    arch: Architecture,
    weights: Vec<f64>,
}

/// Activations kept from a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct Tape {
    input: Vec<f64>,
    z1: Vec<f64>,
    a1: Vec<f64>,
    z2: Vec<f64>,
    a2: Vec<f64>,
}

impl DenoiserParams {
    pub fn from_weights(arch: Architecture, weights: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        check_len("denoiser weight count", arch.weight_count(), weights.len())?;
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidArgument(
                "denoiser weights must be finite".into(),
            ));
        }
        Ok(Self { arch, weights })
    }

    pub fn zeros(arch: Architecture) -> Result<Self> {
        Self::from_weights(arch, vec![0.0; arch.weight_count()])
    }

    /// Uniform init in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for weights and biases;
    /// the skip gate starts at zero.
    pub fn init(arch: Architecture, rng: &mut SeededRng) -> Result<Self> {
        arch.validate()?;
        let l = arch.layout();
        let [h1, h2] = arch.hidden;
        let mut weights = vec![0.0; l.end];
        let blocks = [
            (l.w1, l.w2, arch.input_dim()),
            (l.w2, l.w3, h1),
            (l.w3, l.ws, h2),
        ];
        for (start, end, fan_in) in blocks {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for w in &mut weights[start..end] {
                *w = rng.uniform_in(-bound, bound);
            }
        }
        Self::from_weights(arch, weights)
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    fn check_inputs(&self, x_t: &[f64], e: &ConditioningEmbedding) -> Result<()> {
        check_len("x_t length", self.arch.x_dim, x_t.len())?;
        check_len("embedding dimension", self.arch.embed_dim, e.dim())
    }

    fn assemble_input(&self, x_t: &[f64], t: usize, e: &ConditioningEmbedding) -> Vec<f64> {
        let mut input = Vec::with_capacity(self.arch.input_dim());
        input.extend(time_embedding(t, self.arch.time_dim));
        input.extend_from_slice(x_t);
        input.extend_from_slice(e.as_slice());
        input
    }

    /// Predicted noise together with the activation tape.
    pub fn forward(
        &self,
        x_t: &[f64],
        t: usize,
        e: &ConditioningEmbedding,
    ) -> Result<(Vec<f64>, Tape)> {
        self.check_inputs(x_t, e)?;
        let l = self.arch.layout();
        let [h1, h2] = self.arch.hidden;
        let w = &self.weights;
        let input = self.assemble_input(x_t, t, e);
        let z1 = affine(&w[l.w1..l.b1], &w[l.b1..l.w2], &input, h1);
        let a1: Vec<f64> = z1.iter().map(|&z| silu(z)).collect();
        let z2 = affine(&w[l.w2..l.b2], &w[l.b2..l.w3], &a1, h2);
        let a2: Vec<f64> = z2.iter().map(|&z| silu(z)).collect();
        let mut out = affine(&w[l.w3..l.b3], &w[l.b3..l.ws], &a2, self.arch.x_dim);
        let gate = dot(&w[l.ws..l.bs], &a2) + w[l.bs];
        axpy(&mut out, gate, x_t);
        Ok((
            out,
            Tape {
                input,
                z1,
                a1,
                z2,
                a2,
            },
        ))
    }

    pub fn predict(&self, x_t: &[f64], t: usize, e: &ConditioningEmbedding) -> Result<Vec<f64>> {
        self.forward(x_t, t, e).map(|(out, _)| out)
    }

    /// Backpropagates `grad_out = dL/d(eps_hat)` through `tape`.
    ///
    /// Parameter gradients are *added* into `param_grad` when given; the
    /// embedding gradient is returned when `want_embedding` is set.
    pub fn backward(
        &self,
        tape: &Tape,
        grad_out: &[f64],
        mut param_grad: Option<&mut [f64]>,
        want_embedding: bool,
    ) -> Result<Option<Vec<f64>>> {
        check_len("output gradient length", self.arch.x_dim, grad_out.len())?;
        let l = self.arch.layout();
        let [h1, h2] = self.arch.hidden;
        let w = &self.weights;
        if let Some(g) = param_grad.as_deref() {
            check_len("parameter gradient buffer", l.end, g.len())?;
        }

        let td = self.arch.time_dim;
        let g_gate = dot(grad_out, &tape.input[td..td + self.arch.x_dim]);
        if let Some(g) = param_grad.as_deref_mut() {
            outer_acc(&mut g[l.w3..l.b3], grad_out, &tape.a2);
            axpy(&mut g[l.b3..l.ws], 1.0, grad_out);
            axpy(&mut g[l.ws..l.bs], g_gate, &tape.a2);
            g[l.bs] += g_gate;
        }
        let mut g_z2 = transpose_mul(&w[l.w3..l.b3], grad_out, h2);
        axpy(&mut g_z2, g_gate, &w[l.ws..l.bs]);
        for (g, &z) in g_z2.iter_mut().zip(&tape.z2) {
            *g *= silu_grad(z);
        }

        if let Some(g) = param_grad.as_deref_mut() {
            outer_acc(&mut g[l.w2..l.b2], &g_z2, &tape.a1);
            axpy(&mut g[l.b2..l.w3], 1.0, &g_z2);
        }
        let mut g_z1 = transpose_mul(&w[l.w2..l.b2], &g_z2, h1);
        for (g, &z) in g_z1.iter_mut().zip(&tape.z1) {
            *g *= silu_grad(z);
        }

        if let Some(g) = param_grad {
            outer_acc(&mut g[l.w1..l.b1], &g_z1, &tape.input);
            axpy(&mut g[l.b1..l.w2], 1.0, &g_z1);
        }
        if !want_embedding {
            return Ok(None);
        }
        // Only the embedding columns of W1 are needed.
        let n_in = self.arch.input_dim();
        let e_start = self.arch.time_dim + self.arch.x_dim;
        let mut g_e = vec![0.0; self.arch.embed_dim];
        for (i, &gz) in g_z1.iter().enumerate() {
            let row = &w[l.w1 + i * n_in + e_start..l.w1 + (i + 1) * n_in];
            axpy(&mut g_e, gz, row);
        }
        Ok(Some(g_e))
    }
}

/// Sinusoidal embedding: `[sin(t w_k), cos(t w_k)]` with `w_k = 10000^(-k / (dim/2))`.
pub fn time_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for k in 0..half {
        let freq = (-(10_000f64.ln()) * k as f64 / half as f64).exp();
        let arg = t as f64 * freq;
        out.push(arg.sin());
        out.push(arg.cos());
    }
    out
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[inline]
fn silu(z: f64) -> f64 {
    z * sigmoid(z)
}

#[inline]
fn silu_grad(z: f64) -> f64 {
    let s = sigmoid(z);
    s * (1.0 + z * (1.0 - s))
}

/// Dot product with four fixed accumulators (deterministic summation order).
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for k in 0..chunks {
        let i = 4 * k;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub(crate) fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// `W x + b` for a row-major `rows x x.len()` matrix.
fn affine(w: &[f64], b: &[f64], x: &[f64], rows: usize) -> Vec<f64> {
    let cols = x.len();
    (0..rows)
        .map(|i| dot(&w[i * cols..(i + 1) * cols], x) + b[i])
        .collect()
}

/// `W^T g` for a row-major `g.len() x cols` matrix.
fn transpose_mul(w: &[f64], g: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for (i, &gi) in g.iter().enumerate() {
        axpy(&mut out, gi, &w[i * cols..(i + 1) * cols]);
    }
    out
}

/// `acc += g a^T`.
fn outer_acc(acc: &mut [f64], g: &[f64], a: &[f64]) {
    let cols = a.len();
    for (i, &gi) in g.iter().enumerate() {
        if gi != 0.0 {
            axpy(&mut acc[i * cols..(i + 1) * cols], gi, a);
        }
    }
}
