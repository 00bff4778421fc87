//! A desk-scale laboratory for conditional image leakage in conditional
//! diffusion models, built on an analytically tractable Gaussian "toy video"
//! world.
//!
//! * [`schedule`]: VP and VE noise schedules and the forward kernel.
//! * [`timenoise`]: time-dependent logit-normal corruption of the conditioning frame.
//! * [`analytic_init`]: KL-optimal isotropic initialization at an early start time.
//! * [`world`]: Gaussian random-walk videos with exact and leaky denoisers.
//! * [`train`]: a small epsilon-prediction MLP with hand-written backprop.
//! * [`sampler`]: deterministic DDIM sampling from an arbitrary start time.
//! * [`diagnostics`]: motion scores, leakage curves, sweeps and ablations.
//! * [`config`]: the JSON experiment configuration.

pub mod analytic_init;
pub mod config;
pub mod denoiser;
pub mod diagnostics;
pub mod error;
pub mod nn;
pub mod report;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod timenoise;
pub mod train;
pub mod video;
pub mod world;

pub use analytic_init::{DataMoments, InitDistribution};
pub use config::ExperimentConfig;
pub use denoiser::Denoiser;
pub use error::{Error, Result};
pub use sampler::{InferenceCondition, InitKind, InitMode, SamplerConfig, SamplingPlan};
pub use schedule::NoiseSchedule;
pub use timenoise::{Condition, NoiseVariant, TimeNoiseParams};
pub use train::{Checkpoint, MlpDenoiser, TrainConfig, TrainMode};
pub use video::Video;
pub use world::{ExactDenoiser, GaussianWorld, LeakyDenoiser};
