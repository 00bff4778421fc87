//! Deterministic DDIM sampling from an arbitrary start time `M`.
//!
//! The time grid is uniform on `[0, M]` with `K + 1` points. Each step maps
//! `x_from` to `alpha_to x0_hat + (sigma_to / sigma_from)(x_from - alpha_from x0_hat)`
//! and the last step returns `x0_hat` itself.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic_init::{optimal_init, DataMoments, InitDistribution};
use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::rng::stream;
use crate::schedule::{check_time, NoiseSchedule};
use crate::timenoise::{add_scaled_noise, Condition};
use crate::video::Video;
use crate::world::GaussianWorld;

pub const DEFAULT_STEPS: usize = 50;

/// Distribution of the starting state `X_M`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitMode {
    /// `N(0, I)` for VP, `N(0, sigma_M^2 I)` for VE.
    Standard,
    Analytic { init: InitDistribution },
}

/// How the conditioning frame is presented at inference.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InferenceCondition {
    #[default]
    Clean,
    /// `y0 + beta eps`, one draw per chain.
    FixedNoise { beta: f64 },
}

impl InferenceCondition {
    pub fn validate(&self) -> Result<()> {
        match *self {
            InferenceCondition::Clean => Ok(()),
            InferenceCondition::FixedNoise { beta } if beta.is_finite() && beta >= 0.0 => Ok(()),
            InferenceCondition::FixedNoise { beta } => Err(Error::config(format!("inference noise must be >= 0, got {beta}"))),
        }
    }

    pub fn apply<R: Rng + ?Sized>(&self, y0: &[f64], rng: &mut R) -> Condition {
        match *self {
            InferenceCondition::Clean => Condition::clean(y0),
            InferenceCondition::FixedNoise { beta } => add_scaled_noise(y0, 1.0, beta, rng),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub start_time: f64,
    pub steps: usize,
    pub init: InitMode,
    #[serde(default)]
    pub inference_condition: InferenceCondition,
}

impl SamplerConfig {
    pub fn standard(start_time: f64, steps: usize) -> Self {
        SamplerConfig {
            start_time,
            steps,
            init: InitMode::Standard,
            inference_condition: InferenceCondition::Clean,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.start_time > 0.0 && self.start_time <= 1.0) {
            return Err(Error::config(format!("start time must lie in (0, 1], got {}", self.start_time)));
        }
        if self.steps == 0 {
            return Err(Error::config("sampler needs at least one step"));
        }
        if let InitMode::Analytic { init } = &self.init {
            init.validate()?;
            if (init.start_time - self.start_time).abs() > 1e-12 {
                return Err(Error::config(format!(
                    "analytic init was built for M = {}, sampler starts at {}",
                    init.start_time, self.start_time
                )));
            }
        }
        self.inference_condition.validate()
    }

    /// Time grid from `M` down to 0, `steps + 1` points.
    pub fn time_grid(&self) -> Vec<f64> {
        let k = self.steps;
        (0..=k).rev().map(|i| self.start_time * i as f64 / k as f64).collect()
    }
}

/// Which initial distribution to use, resolved per world by [`InitKind::resolve`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    #[default]
    Standard,
    /// KL-optimal isotropic Gaussian from the world's closed-form moments.
    Analytic,
}

impl InitKind {
    pub fn name(&self) -> &'static str {
        match self {
            InitKind::Standard => "standard",
            InitKind::Analytic => "analytic",
        }
    }

    pub fn resolve(&self, world: &GaussianWorld, schedule: &NoiseSchedule, start_time: f64) -> Result<InitMode> {
        Ok(match self {
            InitKind::Standard => InitMode::Standard,
            InitKind::Analytic => InitMode::Analytic {
                init: optimal_init(&DataMoments::of_world(world), schedule, start_time)?,
            },
        })
    }
}

/// World-independent sampler settings; the init is resolved against a world.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingPlan {
    pub start_time: f64,
    pub steps: usize,
    #[serde(default)]
    pub init: InitKind,
    #[serde(default)]
    pub inference_condition: InferenceCondition,
}

impl Default for SamplingPlan {
    fn default() -> Self {
        SamplingPlan {
            start_time: 1.0,
            steps: DEFAULT_STEPS,
            init: InitKind::Standard,
            inference_condition: InferenceCondition::Clean,
        }
    }
}

impl SamplingPlan {
    pub fn resolve(&self, world: &GaussianWorld, schedule: &NoiseSchedule) -> Result<SamplerConfig> {
        let config = SamplerConfig {
            start_time: self.start_time,
            steps: self.steps,
            init: self.init.resolve(world, schedule, self.start_time)?,
            inference_condition: self.inference_condition,
        };
        config.validate()?;
        Ok(config)
    }
}

/// Draws `X_M`. Both modes consume exactly one standard normal per coordinate,
/// so chains sharing a seed are paired across init modes.
pub fn draw_initial<R: Rng + ?Sized>(
    config: &SamplerConfig,
    schedule: &NoiseSchedule,
    shape: (usize, usize),
    rng: &mut R,
) -> Result<Video> {
    let (frames, dim) = shape;
    let z = Video::standard_normal(frames, dim, rng);
    match &config.init {
        InitMode::Standard => Ok(z.scaled(schedule.standard_init_std(config.start_time))),
        InitMode::Analytic { init } => {
            init.mu_p.check_shape(frames, dim)?;
            Ok(init.mu_p.lin_comb(1.0, &z, init.sigma_p2.sqrt()))
        }
    }
}

/// One deterministic step from `t_from` to `t_to <= t_from`.
pub fn ddim_step<D: Denoiser + ?Sized>(
    denoiser: &D,
    xt: &Video,
    y: &[f64],
    t_from: f64,
    t_to: f64,
    schedule: &NoiseSchedule,
) -> Result<Video> {
    check_time(t_from)?;
    check_time(t_to)?;
    if t_to > t_from {
        return Err(Error::domain(format!("ddim step must go backward in time: {t_from} -> {t_to}")));
    }
    if t_to == t_from {
        return Ok(xt.clone());
    }
    let x0_hat = denoiser.predict_x0(xt, y, t_from, schedule)?;
    Ok(ddim_update(xt, &x0_hat, t_from, t_to, schedule))
}

/// The update given a clean-video estimate.
pub fn ddim_update(xt: &Video, x0_hat: &Video, t_from: f64, t_to: f64, schedule: &NoiseSchedule) -> Video {
    if t_to == 0.0 {
        return x0_hat.clone();
    }
    let (a_from, s_from) = schedule.coefficients(t_from);
    let (a_to, s_to) = schedule.coefficients(t_to);
    let r = s_to / s_from;
    let mut out = x0_hat.scaled(a_to - r * a_from);
    for (o, x) in out.as_mut_slice().iter_mut().zip(xt.as_slice()) {
        *o += r * x;
    }
    out
}

/// Runs one chain conditioned on `y0` and returns the `t = 0` iterate.
pub fn sample<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    denoiser: &D,
    y0: &[f64],
    config: &SamplerConfig,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<Video> {
    config.validate()?;
    let x = draw_initial(config, schedule, denoiser.shape(), rng)?;
    let cond = config.inference_condition.apply(y0, rng);
    run_chain(denoiser, x, &cond.y, config, schedule)
}

/// Iterates the grid from a given starting state.
pub fn run_chain<D: Denoiser + ?Sized>(
    denoiser: &D,
    mut x: Video,
    y: &[f64],
    config: &SamplerConfig,
    schedule: &NoiseSchedule,
) -> Result<Video> {
    let grid = config.time_grid();
    for (step, w) in grid.windows(2).enumerate() {
        x = ddim_step(denoiser, &x, y, w[0], w[1], schedule)?;
        if !x.is_finite() {
            return Err(Error::SamplerDiverged { step, t: w[1] });
        }
    }
    Ok(x)
}

/// Runs one chain per conditioning frame in parallel. Chain `i` draws from
/// its own stream `(seed, i)`, so results do not depend on the thread count.
pub fn sample_chains<D: Denoiser + ?Sized>(
    denoiser: &D,
    y0s: &[Vec<f64>],
    config: &SamplerConfig,
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<Vec<Video>> {
    config.validate()?;
    y0s.par_iter()
        .enumerate()
        .map(|(i, y0)| sample(denoiser, y0, config, schedule, &mut stream(seed, i as u64)))
        .collect()
}

/// Draws `n` conditioning frames (frame `index` of fresh world videos).
pub fn draw_conditions<R: Rng + ?Sized>(world: &GaussianWorld, index: usize, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..n).map(|_| world.sample_video(rng).frame(index).to_vec()).collect()
}

/// Mean and standard deviation of a set of draws (population form).
pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}
