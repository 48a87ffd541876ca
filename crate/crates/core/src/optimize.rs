//! Adam, embedding optimization with a frozen denoiser, denoiser finetuning
//! with a frozen embedding, and from-scratch training of the base model.

use std::fmt::Write as _;

use crate::error::{check_len, Error, Result};
use crate::imageio::ImageBuffer;
use crate::rng::SeededRng;
use crate::toydiffusion::{
    accumulate_loss_grads, pixels_to_latent, Architecture, ConditioningEmbedding, DenoiserParams,
    NoiseSchedule,
};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Defaults for the embedding stage: 500 iterations at 1e-3.
pub const EMBEDDING_STEPS: usize = 500;
pub const EMBEDDING_LR: f64 = 1e-3;
/// Defaults for the denoiser finetuning stage: 1000 iterations at 2e-6.
pub const FINETUNE_STEPS: usize = 1000;
pub const FINETUNE_LR: f64 = 2e-6;

/// Samples per fixed-order gradient chunk; chunk partial sums are reduced
/// in index order so results do not depend on the thread count.
const GRAD_CHUNK: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    /// Bias-corrected Adam update of `var` in place.
    pub fn step(&mut self, var: &mut [f64], grad: &[f64]) -> Result<()> {
        check_len("adam variable length", self.m.len(), var.len())?;
        check_len("adam gradient length", self.m.len(), grad.len())?;
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (((x, g), m), v) in var.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *x -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub seed: u64,
    pub losses: Vec<f64>,
    /// Samples whose conditioning was replaced by the null embedding.
    pub null_conditioning: usize,
}

impl TrainReport {
    fn new(seed: u64, steps: usize) -> Self {
        Self {
            seed,
            losses: Vec::with_capacity(steps),
            null_conditioning: 0,
        }
    }

    pub fn steps(&self) -> usize {
        self.losses.len()
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.losses.last().copied()
    }

    /// Mean loss over a window of steps (clamped to the recorded range).
    pub fn window_mean(&self, start: usize, len: usize) -> f64 {
        let end = (start + len).min(self.losses.len());
        let start = start.min(end);
        let w = &self.losses[start..end];
        if w.is_empty() {
            return f64::NAN;
        }
        w.iter().sum::<f64>() / w.len() as f64
    }

    /// Line-oriented text: a `#` header, then `step<TAB>loss` per step.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "# seed={} steps={} null_conditioning={}\n",
            self.seed,
            self.steps(),
            self.null_conditioning
        );
        for (i, l) in self.losses.iter().enumerate() {
            let _ = writeln!(out, "{i}\t{l}");
        }
        out
    }

    fn push(&mut self, stage: &'static str, loss: f64) -> Result<()> {
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                stage,
                step: self.losses.len(),
            });
        }
        self.losses.push(loss);
        Ok(())
    }
}

fn target_latent(params: &DenoiserParams, target: &ImageBuffer) -> Result<Vec<f64>> {
    check_len("target image size", params.arch().x_dim, target.len())?;
    Ok(pixels_to_latent(target.data()))
}

fn check_steps(steps: usize) -> Result<()> {
    if steps == 0 {
        return Err(Error::InvalidArgument(
            "optimization needs at least one step".into(),
        ));
    }
    Ok(())
}

/// Optimizes the conditioning embedding (starting at `e_init`) to reconstruct
/// `target` under the frozen denoiser, drawing a fresh `(t, noise)` per step.
pub fn optimize_embedding(
    params: &DenoiserParams,
    e_init: &ConditioningEmbedding,
    target: &ImageBuffer,
    sched: &NoiseSchedule,
    steps: usize,
    lr: f64,
    seed: u64,
) -> Result<(ConditioningEmbedding, TrainReport)> {
    check_steps(steps)?;
    check_len("embedding dimension", params.arch().embed_dim, e_init.dim())?;
    let x0 = target_latent(params, target)?;
    let mut rng = SeededRng::new(seed);
    let mut e = e_init.clone();
    let mut adam = AdamState::new(e.dim(), lr);
    let mut report = TrainReport::new(seed, steps);
    for _ in 0..steps {
        let t = rng.below(sched.len());
        let noise = rng.gaussian_vec(x0.len());
        let (loss, grad) =
            accumulate_loss_grads(params, &e, &x0, t, &noise, sched, 1.0, None, true)?;
        report.push("embedding optimization", loss)?;
        adam.step(
            e.as_mut_slice(),
            &grad.expect("embedding gradient requested"),
        )?;
    }
    Ok((ConditioningEmbedding::new(e.into_vec())?, report))
}

/// Finetunes the denoiser weights to reconstruct `target` given the frozen
/// embedding `e_opt`.
pub fn finetune_model(
    params: &DenoiserParams,
    e_opt: &ConditioningEmbedding,
    target: &ImageBuffer,
    sched: &NoiseSchedule,
    steps: usize,
    lr: f64,
    seed: u64,
) -> Result<(DenoiserParams, TrainReport)> {
    check_steps(steps)?;
    let x0 = target_latent(params, target)?;
    let mut rng = SeededRng::new(seed);
    let mut tuned = params.clone();
    let mut adam = AdamState::new(tuned.weights().len(), lr);
    let mut report = TrainReport::new(seed, steps);
    let mut grad = vec![0.0; tuned.weights().len()];
    for _ in 0..steps {
        let t = rng.below(sched.len());
        let noise = rng.gaussian_vec(x0.len());
        grad.fill(0.0);
        let (loss, _) = accumulate_loss_grads(
            &tuned,
            e_opt,
            &x0,
            t,
            &noise,
            sched,
            1.0,
            Some(&mut grad),
            false,
        )?;
        report.push("model finetuning", loss)?;
        adam.step(tuned.weights_mut(), &grad)?;
    }
    Ok((tuned, report))
}

/// One conditioned image of the base-model training set.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub image: ImageBuffer,
    pub embedding: ConditioningEmbedding,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaseTrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub batch: usize,
    pub cond_dropout_p: f64,
    pub seed: u64,
    pub time_dim: usize,
    pub hidden: [usize; 2],
}

impl Default for BaseTrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            lr: 2e-3,
            batch: 32,
            cond_dropout_p: 0.1,
            seed: 0,
            time_dim: crate::toydiffusion::DEFAULT_TIME_DIM,
            hidden: crate::toydiffusion::DEFAULT_HIDDEN,
        }
    }
}

struct Draw {
    index: usize,
    t: usize,
    null: bool,
    noise: Vec<f64>,
}

/// Minibatch Adam training of the epsilon-prediction loss from a seeded
/// initialization. Each sample's conditioning is replaced by the null
/// embedding with probability `cond_dropout_p`.
pub fn train_base_model(
    dataset: &[TrainingExample],
    sched: &NoiseSchedule,
    cfg: &BaseTrainConfig,
) -> Result<(DenoiserParams, TrainReport)> {
    let first = dataset.first().ok_or(Error::EmptyDataset)?;
    if cfg.batch == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    if !(0.0..=1.0).contains(&cfg.cond_dropout_p) {
        return Err(Error::InvalidArgument(
            "cond_dropout_p must lie in [0, 1]".into(),
        ));
    }
    let arch = Architecture {
        x_dim: first.image.len(),
        embed_dim: first.embedding.dim(),
        time_dim: cfg.time_dim,
        hidden: cfg.hidden,
    };
    for ex in dataset {
        check_len("training image size", arch.x_dim, ex.image.len())?;
        check_len(
            "training embedding dimension",
            arch.embed_dim,
            ex.embedding.dim(),
        )?;
    }
    let latents: Vec<Vec<f64>> = dataset
        .iter()
        .map(|ex| pixels_to_latent(ex.image.data()))
        .collect();
    let null = ConditioningEmbedding::null(arch.embed_dim);

    let mut rng = SeededRng::new(cfg.seed);
    let mut params = DenoiserParams::init(arch, &mut rng)?;
    let mut adam = AdamState::new(params.weights().len(), cfg.lr);
    let mut report = TrainReport::new(cfg.seed, cfg.steps);
    let n_weights = params.weights().len();
    let scale = 1.0 / cfg.batch as f64;

    for _ in 0..cfg.steps {
        let draws: Vec<Draw> = (0..cfg.batch)
            .map(|_| {
                let index = rng.below(dataset.len());
                let t = rng.below(sched.len());
                let null = rng.uniform() < cfg.cond_dropout_p;
                let noise = rng.gaussian_vec(arch.x_dim);
                Draw {
                    index,
                    t,
                    null,
                    noise,
                }
            })
            .collect();
        report.null_conditioning += draws.iter().filter(|d| d.null).count();

        let chunk_grad = |chunk: &[Draw]| -> Result<(f64, Vec<f64>)> {
            let mut g = vec![0.0; n_weights];
            let mut loss = 0.0;
            for d in chunk {
                let e = if d.null {
                    &null
                } else {
                    &dataset[d.index].embedding
                };
                let (l, _) = accumulate_loss_grads(
                    &params,
                    e,
                    &latents[d.index],
                    d.t,
                    &d.noise,
                    sched,
                    scale,
                    Some(&mut g),
                    false,
                )?;
                loss += l;
            }
            Ok((loss, g))
        };
        #[cfg(feature = "parallel")]
        let partials: Vec<Result<(f64, Vec<f64>)>> = {
            use rayon::prelude::*;
            draws.par_chunks(GRAD_CHUNK).map(chunk_grad).collect()
        };
        #[cfg(not(feature = "parallel"))]
        let partials: Vec<Result<(f64, Vec<f64>)>> =
            draws.chunks(GRAD_CHUNK).map(chunk_grad).collect();

        let mut grad = vec![0.0; n_weights];
        let mut loss = 0.0;
        for part in partials {
            let (l, g) = part?;
            loss += l;
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += b;
            }
        }
        report.push("base training", loss * scale)?;
        adam.step(params.weights_mut(), &grad)?;
    }
    Ok((params, report))
}
