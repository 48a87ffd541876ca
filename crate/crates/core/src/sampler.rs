//! Ancestral backward diffusion driven by a conditioning plan, with
//! classifier-free guidance.

use crate::error::{check_len, Error, Result};
use crate::imageio::ImageBuffer;
use crate::prompting::{build_conditioning_plan, ConditioningPlan, Strategy};
use crate::rng::SeededRng;
use crate::toydiffusion::{
    latent_to_pixels, ConditioningEmbedding, DenoiserParams, LatentState, NoiseSchedule,
};

pub const PAPER_GUIDANCE_SCALE: f64 = 7.5;
pub const DEFAULT_GUIDANCE_SCALE: f64 = 5.0;
pub const DEFAULT_SAMPLING_STEPS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    pub steps: usize,
    pub guidance_scale: f64,
    pub seed: u64,
    /// Scales the posterior standard deviation (1 = ancestral DDPM, 0 = no injected noise).
    pub eta: f64,
    /// `(height, width, channels)` of the produced image.
    pub shape: (usize, usize, usize),
    pub record_trajectory: bool,
}

impl SamplerConfig {
    pub fn new(shape: (usize, usize, usize), seed: u64) -> Self {
        Self {
            steps: DEFAULT_SAMPLING_STEPS,
            guidance_scale: DEFAULT_GUIDANCE_SCALE,
            seed,
            eta: 1.0,
            shape,
            record_trajectory: false,
        }
    }

    pub fn validate(&self, sched: &NoiseSchedule) -> Result<()> {
        if !(self.guidance_scale >= 0.0 && self.guidance_scale.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "guidance scale must be >= 0, got {}",
                self.guidance_scale
            )));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::InvalidArgument(format!(
                "eta {} outside [0, 1]",
                self.eta
            )));
        }
        sched.strided_timesteps(self.steps).map(|_| ())
    }

    fn dim(&self) -> usize {
        self.shape.0 * self.shape.1 * self.shape.2
    }
}

/// `eps(null) + s * (eps(e) - eps(null))`.
pub fn guided_eps(
    params: &DenoiserParams,
    x_t: &[f64],
    t: usize,
    e: &ConditioningEmbedding,
    null_e: &ConditioningEmbedding,
    scale: f64,
) -> Result<Vec<f64>> {
    let cond = params.predict(x_t, t, e)?;
    if scale == 1.0 {
        return Ok(cond);
    }
    let uncond = params.predict(x_t, t, null_e)?;
    if scale == 0.0 {
        return Ok(uncond);
    }
    Ok(uncond
        .iter()
        .zip(&cond)
        .map(|(u, c)| u + scale * (c - u))
        .collect())
}

#[derive(Debug, Clone)]
pub struct SampleOutput {
    pub image: ImageBuffer,
    /// Latents after each step, starting with `x_T`, when requested.
    pub trajectory: Option<Vec<LatentState>>,
}

/// Runs the backward chain from `x_T ~ N(0, I)`.
///
/// Random draws happen in a fixed order independent of the plan content:
/// the initial latent, then one injection vector for every step except the
/// last.
pub fn sample(
    params: &DenoiserParams,
    sched: &NoiseSchedule,
    plan: &ConditioningPlan,
    cfg: &SamplerConfig,
) -> Result<SampleOutput> {
    cfg.validate(sched)?;
    check_len("conditioning plan length", cfg.steps, plan.len())?;
    check_len("sample dimension", params.arch().x_dim, cfg.dim())?;
    let timesteps = sched.strided_timesteps(cfg.steps)?;
    let null = ConditioningEmbedding::null(params.arch().embed_dim);
    let ab = sched.alpha_bar();

    let mut rng = SeededRng::new(cfg.seed);
    let mut x = rng.gaussian_vec(cfg.dim());
    let mut trajectory = cfg.record_trajectory.then(|| {
        vec![LatentState {
            x: x.clone(),
            t: timesteps[0] + 1,
        }]
    });

    for (i, &t) in timesteps.iter().enumerate() {
        let ab_t = ab[t];
        let ab_prev = timesteps.get(i + 1).map_or(1.0, |&p| ab[p]);
        let eps = guided_eps(
            params,
            &x,
            t,
            plan.embedding_at(i),
            &null,
            cfg.guidance_scale,
        )?;
        x = posterior_step(&x, &eps, ab_t, ab_prev, cfg.eta, || {
            if i + 1 < timesteps.len() {
                Some(rng.gaussian_vec(cfg.dim()))
            } else {
                None
            }
        });
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "sampler produced a non-finite latent at step {i}"
            )));
        }
        if let Some(tr) = trajectory.as_mut() {
            tr.push(LatentState { x: x.clone(), t });
        }
    }

    let (h, w, c) = cfg.shape;
    Ok(SampleOutput {
        image: ImageBuffer::from_clamped(h, w, c, latent_to_pixels(&x))?,
        trajectory,
    })
}

/// One ancestral step from `x_t` given predicted noise. The clean estimate
/// is clipped to the latent range `[-1, 1]` before forming the posterior mean.
pub(crate) fn posterior_step(
    x: &[f64],
    eps: &[f64],
    ab_t: f64,
    ab_prev: f64,
    eta: f64,
    mut draw: impl FnMut() -> Option<Vec<f64>>,
) -> Vec<f64> {
    let alpha_t = ab_t / ab_prev;
    let beta_t = 1.0 - alpha_t;
    let c0 = ab_prev.sqrt() * beta_t / (1.0 - ab_t);
    let ct = alpha_t.sqrt() * (1.0 - ab_prev) / (1.0 - ab_t);
    let sigma = eta * ((1.0 - ab_prev) / (1.0 - ab_t) * beta_t).max(0.0).sqrt();
    let (sa, sb) = (ab_t.sqrt(), (1.0 - ab_t).sqrt());
    let z = draw();
    x.iter()
        .zip(eps)
        .enumerate()
        .map(|(k, (&xk, &ek))| {
            let x0 = ((xk - sb * ek) / sa).clamp(-1.0, 1.0);
            let mean = c0 * x0 + ct * xk;
            match &z {
                Some(z) => mean + sigma * z[k],
                None => mean,
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct GridCell {
    pub alpha: f64,
    pub seed: u64,
    pub image: ImageBuffer,
}

/// Samples every `(alpha, seed)` pair, alpha-major.
#[allow(clippy::too_many_arguments)]
pub fn sample_grid(
    params: &DenoiserParams,
    sched: &NoiseSchedule,
    e_opt: &ConditioningEmbedding,
    e_tgt: &ConditioningEmbedding,
    alphas: &[f64],
    strategy: Strategy,
    cfg: &SamplerConfig,
    seeds: &[u64],
) -> Result<Vec<GridCell>> {
    if alphas.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidArgument(
            "alpha and seed lists must be non-empty".into(),
        ));
    }
    let plans = alphas
        .iter()
        .map(|&a| build_conditioning_plan(strategy, cfg.steps, a, e_opt, e_tgt))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, u64)> = (0..alphas.len())
        .flat_map(|ai| seeds.iter().map(move |&s| (ai, s)))
        .collect();
    let run = |&(ai, seed): &(usize, u64)| -> Result<GridCell> {
        let cell_cfg = SamplerConfig {
            seed,
            record_trajectory: false,
            ..*cfg
        };
        let out = sample(params, sched, &plans[ai], &cell_cfg)?;
        Ok(GridCell {
            alpha: alphas[ai],
            seed,
            image: out.image,
        })
    };
    #[cfg(feature = "parallel")]
    let cells: Vec<Result<GridCell>> = {
        use rayon::prelude::*;
        jobs.par_iter().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let cells: Vec<Result<GridCell>> = jobs.iter().map(run).collect();
    cells.into_iter().collect()
}
