//! Ground-to-aerial view translation with a text-conditioned toy diffusion model.
//!
//! The pipeline has three stages:
//!
//! 1. [`homography`] projects the ground-view image onto a pseudo-aerial view.
//! 2. [`optimize`] fits a conditioning embedding to that image starting from the
//!    ground-view prompt, then finetunes the denoiser on it.
//! 3. [`sampler`] runs backward diffusion while a [`prompting::ConditioningPlan`]
//!    alternates between the target prompt and an interpolated embedding.
//!
//! [`scenegen`] provides paired synthetic front/aerial scenes and [`eval`]
//! measures viewpoint and fidelity on them. [`pipeline`] wires everything
//! together behind the command-line driver.

pub mod error;
pub mod eval;
pub mod homography;
pub mod imageio;
pub mod optimize;
pub mod pipeline;
pub mod prompting;
pub mod rng;
pub mod sampler;
pub mod scenegen;
pub mod toydiffusion;

pub use error::{Error, Result};
