//! Finite-difference gradient oracle shared by the gradient tests and the
//! acceptance suite.

use aerial_core::rng::SeededRng;
use aerial_core::toydiffusion::{
    diffusion_loss_and_grads, make_schedule, Architecture, ConditioningEmbedding, DenoiserParams,
    GradTarget, NoiseSchedule, ScheduleKind,
};

pub const FD_STEP: f64 = 1e-5;
pub const MAX_REL_ERR: f64 = 1e-4;
// Denominator floor so that 0/0 compares as equal.
const REL_FLOOR: f64 = 1e-8;

fn silu(z: f64) -> f64 {
    z / (1.0 + (-z).exp())
}

fn dense(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    b.iter()
        .enumerate()
        .map(|(i, bi)| {
            bi + x
                .iter()
                .enumerate()
                .map(|(j, xj)| w[i * x.len() + j] * xj)
                .sum::<f64>()
        })
        .collect()
}

/// Straight-line re-derivation of the denoiser and loss.
pub struct Oracle {
    arch: Architecture,
    pub x0: Vec<f64>,
    pub noise: Vec<f64>,
    ab: f64,
    pub t: usize,
}

impl Oracle {
    pub fn loss(&self, w: &[f64], e: &[f64]) -> f64 {
        let a = self.arch;
        let [h1, h2] = a.hidden;
        let x_t: Vec<f64> = self
            .x0
            .iter()
            .zip(&self.noise)
            .map(|(x, n)| self.ab.sqrt() * x + (1.0 - self.ab).sqrt() * n)
            .collect();
        let mut input = Vec::new();
        for k in 0..a.time_dim / 2 {
            let f = (-(10_000f64.ln()) * k as f64 / (a.time_dim / 2) as f64).exp();
            input.push((self.t as f64 * f).sin());
            input.push((self.t as f64 * f).cos());
        }
        input.extend(&x_t);
        input.extend(e);
        let n_in = input.len();
        let mut off = 0;
        let mut take = |n: usize| {
            let s = &w[off..off + n];
            off += n;
            s
        };
        let (w1, b1) = (take(h1 * n_in), take(h1));
        let (w2, b2) = (take(h2 * h1), take(h2));
        let (w3, b3) = (take(a.x_dim * h2), take(a.x_dim));
        let (ws, bs) = (take(h2), take(1));
        let a1: Vec<f64> = dense(w1, b1, &input).into_iter().map(silu).collect();
        let a2: Vec<f64> = dense(w2, b2, &a1).into_iter().map(silu).collect();
        let gate = bs[0] + ws.iter().zip(&a2).map(|(p, q)| p * q).sum::<f64>();
        let out = dense(w3, b3, &a2);
        out.iter()
            .zip(&x_t)
            .zip(&self.noise)
            .map(|((o, x), n)| (o + gate * x - n).powi(2))
            .sum::<f64>()
            / a.x_dim as f64
    }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

pub fn instance(seed: u64) -> (DenoiserParams, ConditioningEmbedding, Oracle, NoiseSchedule) {
    let arch = Architecture {
        x_dim: 8,
        embed_dim: 4,
        time_dim: 4,
        hidden: [6, 5],
    };
    let mut rng = SeededRng::new(seed);
    let weights: Vec<f64> = (0..arch.weight_count())
        .map(|_| 0.5 * rng.gaussian())
        .collect();
    let params = DenoiserParams::from_weights(arch, weights).unwrap();
    let e = ConditioningEmbedding::new(rng.gaussian_vec(4)).unwrap();
    let sched = make_schedule(10, 1e-3, 0.2, ScheduleKind::Linear).unwrap();
    let t = rng.below(10);
    let oracle = Oracle {
        arch,
        x0: (0..8).map(|_| rng.uniform_in(-1.0, 1.0)).collect(),
        noise: rng.gaussian_vec(8),
        ab: sched.alpha_bar()[t],
        t,
    };
    (params, e, oracle, sched)
}

/// Largest relative error between analytic and central-difference
/// gradients over every weight and embedding entry of instance `seed`.
pub fn worst_gradient_error(seed: u64) -> f64 {
    let (p, e, o, sched) = instance(seed);
    let g =
        diffusion_loss_and_grads(&p, &e, &o.x0, o.t, &o.noise, &sched, GradTarget::Both).unwrap();
    let gp = g.grad_params.unwrap();
    let ge = g.grad_embedding.unwrap();
    let central =
        |f: &mut dyn FnMut(f64) -> f64, x: f64| (f(x + FD_STEP) - f(x - FD_STEP)) / (2.0 * FD_STEP);
    let mut worst = 0.0f64;
    let mut w = p.weights().to_vec();
    for k in 0..w.len() {
        let w0 = w[k];
        let fd = central(
            &mut |v| {
                w[k] = v;
                o.loss(&w, e.as_slice())
            },
            w0,
        );
        w[k] = w0;
        worst = worst.max(rel_err(gp[k], fd));
    }
    let mut ev = e.as_slice().to_vec();
    for k in 0..ev.len() {
        let e0 = ev[k];
        let fd = central(
            &mut |v| {
                ev[k] = v;
                o.loss(p.weights(), &ev)
            },
            e0,
        );
        ev[k] = e0;
        worst = worst.max(rel_err(ge[k], fd));
    }
    worst
}
