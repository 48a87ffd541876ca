//! Toy prompt embedder, view-prompt composition, embedding interpolation and
//! the per-step conditioning plans used during sampling.

use std::fmt;
use std::str::FromStr;

use crate::error::{check_len, Error, Result};
use crate::rng::SeededRng;
use crate::toydiffusion::ConditioningEmbedding;

pub const SOURCE_PREFIX: &str = "front view of";
pub const TARGET_PREFIX: &str = "aerial view of";

/// Maps prompts to unit vectors: each lowercase whitespace token is hashed
/// (seeded FNV-1a) to a pseudo-random unit vector, and the prompt embedding
/// is the L2-normalized mean of its token vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromptEmbedder {
    dim: usize,
    seed: u64,
}

impl PromptEmbedder {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument(
                "embedding dim must be positive".into(),
            ));
        }
        Ok(Self { dim, seed })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Reserved unconditional embedding; never produced by [`Self::embed`].
    pub fn null_embedding(&self) -> ConditioningEmbedding {
        ConditioningEmbedding::null(self.dim)
    }

    pub fn token_vector(&self, token: &str) -> Vec<f64> {
        let mut rng = SeededRng::new(fnv1a(self.seed, token.as_bytes()));
        loop {
            let v = rng.gaussian_vec(self.dim);
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 1e-12 {
                return v.into_iter().map(|x| x / n).collect();
            }
        }
    }

    pub fn embed(&self, prompt: &str) -> Result<ConditioningEmbedding> {
        let lower = prompt.to_lowercase();
        let tokens: Vec<&str> = lower.split_whitespace().collect();
        if tokens.is_empty() {
            return Err(Error::InvalidArgument("prompt is empty".into()));
        }
        let mut mean = vec![0.0; self.dim];
        for tok in &tokens {
            for (m, v) in mean.iter_mut().zip(self.token_vector(tok)) {
                *m += v;
            }
        }
        let norm = mean.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "prompt {prompt:?} token vectors cancel out"
            )));
        }
        ConditioningEmbedding::new(mean.into_iter().map(|x| x / norm).collect())
    }
}

fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// `("front view of <txt>", "aerial view of <txt>")`.
pub fn compose_view_prompts(txt: &str) -> Result<(String, String)> {
    let txt = txt.trim();
    if txt.is_empty() {
        return Err(Error::InvalidArgument("scene text is empty".into()));
    }
    Ok((
        format!("{SOURCE_PREFIX} {txt}"),
        format!("{TARGET_PREFIX} {txt}"),
    ))
}

/// `alpha * e_tgt + (1 - alpha) * e_opt`, without renormalization.
pub fn interpolate_embedding(
    e_opt: &ConditioningEmbedding,
    e_tgt: &ConditioningEmbedding,
    alpha: f64,
) -> Result<ConditioningEmbedding> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!(
            "alpha {alpha} outside [0, 1]"
        )));
    }
    check_len("embedding dimension", e_opt.dim(), e_tgt.dim())?;
    // Endpoints are returned verbatim so they are exact.
    if alpha == 0.0 {
        return Ok(e_opt.clone());
    }
    if alpha == 1.0 {
        return Ok(e_tgt.clone());
    }
    ConditioningEmbedding::new(
        e_opt
            .as_slice()
            .iter()
            .zip(e_tgt.as_slice())
            .map(|(o, t)| alpha * t + (1.0 - alpha) * o)
            .collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    /// e1 on even step ordinals, e2 on odd ones.
    Alternating,
    /// Parity swapped: e2 first.
    AlternatingStartE2,
    /// e2 at every step (plain linear interpolation).
    LinearOnly,
    /// e1 (the target prompt) at every step.
    E1Only,
    /// e1 for the first ceil(T/2) steps, then e2.
    FirstHalfE1,
    /// e2 for the first ceil(T/2) steps, then e1.
    FirstHalfE2,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::Alternating,
        Strategy::AlternatingStartE2,
        Strategy::LinearOnly,
        Strategy::E1Only,
        Strategy::FirstHalfE1,
        Strategy::FirstHalfE2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Alternating => "alternating",
            Strategy::AlternatingStartE2 => "alternating_start_e2",
            Strategy::LinearOnly => "linear_only",
            Strategy::E1Only => "e1_only",
            Strategy::FirstHalfE1 => "first_half_e1",
            Strategy::FirstHalfE2 => "first_half_e2",
        }
    }

    /// Which embedding conditions step `i` of `steps` (`i = 0` is the noisiest step).
    pub fn slot(self, i: usize, steps: usize) -> Slot {
        let half = steps.div_ceil(2);
        match self {
            Strategy::Alternating => {
                if i.is_multiple_of(2) {
                    Slot::E1
                } else {
                    Slot::E2
                }
            }
            Strategy::AlternatingStartE2 => {
                if i.is_multiple_of(2) {
                    Slot::E2
                } else {
                    Slot::E1
                }
            }
            Strategy::LinearOnly => Slot::E2,
            Strategy::E1Only => Slot::E1,
            Strategy::FirstHalfE1 => {
                if i < half {
                    Slot::E1
                } else {
                    Slot::E2
                }
            }
            Strategy::FirstHalfE2 => {
                if i < half {
                    Slot::E2
                } else {
                    Slot::E1
                }
            }
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown strategy {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Slot {
    E1,
    E2,
}

/// Per-step conditioning for a backward diffusion run, with
/// `e1 = e_tgt` and `e2 = alpha * e_tgt + (1 - alpha) * e_opt`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningPlan {
    strategy: Strategy,
    alpha: f64,
    e1: ConditioningEmbedding,
    e2: ConditioningEmbedding,
    slots: Vec<Slot>,
}

impl ConditioningPlan {
    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn e1(&self) -> &ConditioningEmbedding {
        &self.e1
    }

    pub fn e2(&self) -> &ConditioningEmbedding {
        &self.e2
    }

    pub fn embedding_at(&self, i: usize) -> &ConditioningEmbedding {
        match self.slots[i] {
            Slot::E1 => &self.e1,
            Slot::E2 => &self.e2,
        }
    }

    pub fn embeddings(&self) -> impl Iterator<Item = &ConditioningEmbedding> + '_ {
        (0..self.slots.len()).map(|i| self.embedding_at(i))
    }
}

pub fn build_conditioning_plan(
    strategy: Strategy,
    steps: usize,
    alpha: f64,
    e_opt: &ConditioningEmbedding,
    e_tgt: &ConditioningEmbedding,
) -> Result<ConditioningPlan> {
    if steps == 0 {
        return Err(Error::InvalidArgument(
            "plan needs at least one step".into(),
        ));
    }
    let e2 = interpolate_embedding(e_opt, e_tgt, alpha)?;
    Ok(ConditioningPlan {
        strategy,
        alpha,
        e1: e_tgt.clone(),
        e2,
        slots: (0..steps).map(|i| strategy.slot(i, steps)).collect(),
    })
}
