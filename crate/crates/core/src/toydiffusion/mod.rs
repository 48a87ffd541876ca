//! Noise schedules, forward diffusion, the toy conditional denoiser and the
//! simplified epsilon-prediction objective.

pub mod checkpoint;
mod denoiser;
mod schedule;

pub use denoiser::{
    time_embedding, Architecture, DenoiserParams, Tape, DEFAULT_HIDDEN, DEFAULT_TIME_DIM,
};
pub use schedule::{forward_diffuse, make_schedule, NoiseSchedule, ScheduleKind};

use crate::error::{check_len, Error, Result};

/// A conditioning vector (`e_src`, `e_tgt`, `e_opt`, `e1`, `e2`, or the null embedding).
#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningEmbedding(Vec<f64>);

impl ConditioningEmbedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("embedding must be non-empty".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "embedding entries must be finite".into(),
            ));
        }
        Ok(Self(values))
    }

    /// The all-zero embedding reserved for unconditional prediction.
    pub fn null(dim: usize) -> Self {
        Self(vec![0.0; dim.max(1)])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_null(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }
}

/// A flattened image `x` at diffusion timestep `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub x: Vec<f64>,
    pub t: usize,
}

/// Which gradients [`diffusion_loss_and_grads`] should produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradTarget {
    Params,
    Embedding,
    Both,
}

impl GradTarget {
    fn params(self) -> bool {
        matches!(self, GradTarget::Params | GradTarget::Both)
    }

    fn embedding(self) -> bool {
        matches!(self, GradTarget::Embedding | GradTarget::Both)
    }
}

#[derive(Debug, Clone)]
pub struct LossAndGrads {
    pub loss: f64,
    pub grad_params: Option<Vec<f64>>,
    pub grad_embedding: Option<Vec<f64>>,
}

/// Pixel samples in `[0, 1]` are modelled as latents in `[-1, 1]`.
pub fn pixels_to_latent(pixels: &[f64]) -> Vec<f64> {
    pixels.iter().map(|p| 2.0 * p - 1.0).collect()
}

pub fn latent_to_pixels(latent: &[f64]) -> Vec<f64> {
    latent
        .iter()
        .map(|x| ((x + 1.0) * 0.5).clamp(0.0, 1.0))
        .collect()
}

/// Mean squared epsilon-prediction error at `x_t = forward_diffuse(x0, t, noise)`,
/// `||eps_hat - noise||^2 / dim`, with analytic gradients.
pub fn diffusion_loss_and_grads(
    params: &DenoiserParams,
    e: &ConditioningEmbedding,
    x0: &[f64],
    t: usize,
    noise: &[f64],
    sched: &NoiseSchedule,
    wrt: GradTarget,
) -> Result<LossAndGrads> {
    let mut grad_params = wrt.params().then(|| vec![0.0; params.weights().len()]);
    let (loss, grad_embedding) = accumulate_loss_grads(
        params,
        e,
        x0,
        t,
        noise,
        sched,
        1.0,
        grad_params.as_deref_mut(),
        wrt.embedding(),
    )?;
    Ok(LossAndGrads {
        loss,
        grad_params,
        grad_embedding,
    })
}

/// Loss for one sample; parameter gradients scaled by `scale` are added to
/// `param_acc`. The embedding gradient is also scaled.
#[allow(clippy::too_many_arguments)]
pub(crate) fn accumulate_loss_grads(
    params: &DenoiserParams,
    e: &ConditioningEmbedding,
    x0: &[f64],
    t: usize,
    noise: &[f64],
    sched: &NoiseSchedule,
    scale: f64,
    param_acc: Option<&mut [f64]>,
    want_embedding: bool,
) -> Result<(f64, Option<Vec<f64>>)> {
    check_len("x0 length", params.arch().x_dim, x0.len())?;
    let x_t = forward_diffuse(x0, t, noise, sched)?;
    let (eps, tape) = params.forward(&x_t, t, e)?;
    let n = eps.len() as f64;
    let residual: Vec<f64> = eps.iter().zip(noise).map(|(a, b)| a - b).collect();
    let loss = residual.iter().map(|r| r * r).sum::<f64>() / n;
    if param_acc.is_none() && !want_embedding {
        return Ok((loss, None));
    }
    let grad_out: Vec<f64> = residual.iter().map(|r| scale * 2.0 * r / n).collect();
    let g_e = params.backward(&tape, &grad_out, param_acc, want_embedding)?;
    Ok((loss, g_e))
}
