//! Motion scores and the leakage experiments built on them.
//!
//! The motion score of a video is `sum_i mean_k |x_{i+1,k} - x_{i,k}|`: the
//! per-coordinate absolute difference stands in for optical-flow magnitude,
//! since frames here are abstract vectors.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic_init::kl_to_init;
use crate::denoiser::{x0_from_eps, Denoiser};
use crate::error::{Error, Result};
use crate::report::{Cell, Table};
use crate::rng::{stream, LabRng};
use crate::sampler::{draw_conditions, mean_std, sample_chains, InitKind, InitMode, SamplerConfig, SamplingPlan};
use crate::schedule::{check_time, NoiseSchedule};
use crate::train::MlpDenoiser;
use crate::video::Video;
use crate::world::{ExactDenoiser, GaussianWorld, LeakyDenoiser};

/// Minimum evaluation-set size for leakage curves.
pub const MIN_EVAL_ITEMS: usize = 256;

/// Offset separating the stream family for conditioning frames from chain streams.
const CONDITION_STREAM_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

pub fn motion_score(video: &Video) -> Result<f64> {
    if video.frames() < 2 {
        return Err(Error::domain(format!("motion score needs >= 2 frames, got {}", video.frames())));
    }
    let d = video.dim() as f64;
    Ok((1..video.frames())
        .map(|i| {
            video
                .frame(i)
                .iter()
                .zip(video.frame(i - 1))
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
                / d
        })
        .sum())
}

pub fn mean_motion(videos: &[Video]) -> Result<f64> {
    if videos.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let mut total = 0.0;
    for v in videos {
        total += motion_score(v)?;
    }
    Ok(total / videos.len() as f64)
}

/// Clean-video estimate from one noisy draw: `(x_t - sigma_t eps_hat) / alpha_t`.
pub fn one_step_prediction<D: Denoiser + ?Sized>(
    denoiser: &D,
    x0: &Video,
    y0: &[f64],
    schedule: &NoiseSchedule,
    t: f64,
    rng: &mut LabRng,
) -> Result<Video> {
    check_time(t)?;
    if t == 0.0 {
        return Err(Error::domain("one-step prediction needs t > 0"));
    }
    let (xt, _) = schedule.perturb(x0, t, rng)?;
    let eps_hat = denoiser.predict_eps(&xt, y0, t, schedule)?;
    x0_from_eps(&xt, &eps_hat, t, schedule)
}

/// A clean video with the conditioning frame handed to the denoiser.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalItem {
    pub x0: Video,
    pub y0: Vec<f64>,
}

/// `n` world videos conditioned on their first frame.
pub fn eval_set(world: &GaussianWorld, n: usize, seed: u64) -> Vec<EvalItem> {
    let mut rng = stream(seed.wrapping_add(CONDITION_STREAM_SALT), 0);
    (0..n)
        .map(|_| {
            let x0 = world.sample_video(&mut rng);
            EvalItem {
                y0: x0.frame(0).to_vec(),
                x0,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageCurve {
    pub t_grid: Vec<f64>,
    /// Mean over items of `motion(x0_hat) / motion(x0)`.
    pub ratios: Vec<f64>,
    pub gt_motion: f64,
}

impl LeakageCurve {
    pub fn ratio_at(&self, t: f64) -> Option<f64> {
        self.t_grid.iter().position(|&g| g == t).map(|i| self.ratios[i])
    }

    pub fn table(&self) -> Table {
        let mut table = Table::new(["t", "ratio", "gt_motion"]);
        for (t, r) in self.t_grid.iter().zip(&self.ratios) {
            table.push(vec![(*t).into(), (*r).into(), self.gt_motion.into()]);
        }
        table
    }
}

/// Leakage curve of a denoiser.
pub fn leakage_curve<D: Denoiser + ?Sized>(
    denoiser: &D,
    items: &[EvalItem],
    schedule: &NoiseSchedule,
    t_grid: &[f64],
    seed: u64,
) -> Result<LeakageCurve> {
    leakage_curve_with(items, schedule, t_grid, seed, |xt, y, t, _eps| denoiser.predict_eps(xt, y, t, schedule))
}

/// Leakage curve for an arbitrary noise predictor `predict(x_t, y, t, true_eps)`.
///
/// Item `i` at grid point `g` draws its noise from stream `(seed, i * G + g)`,
/// so curves of different predictors on the same seed are paired.
pub fn leakage_curve_with<F>(items: &[EvalItem], schedule: &NoiseSchedule, t_grid: &[f64], seed: u64, predict: F) -> Result<LeakageCurve>
where
    F: Fn(&Video, &[f64], f64, &Video) -> Result<Video> + Sync,
{
    if items.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    for &t in t_grid {
        check_time(t)?;
        if t == 0.0 {
            return Err(Error::domain("leakage grid must exclude t = 0"));
        }
    }
    let g = t_grid.len();
    let per_item: Vec<(f64, Vec<f64>)> = items
        .par_iter()
        .enumerate()
        .map(|(i, item)| {
            let gt = motion_score(&item.x0)?;
            let mut ratios = Vec::with_capacity(g);
            for (j, &t) in t_grid.iter().enumerate() {
                let mut rng = stream(seed, (i * g + j) as u64);
                let (xt, eps) = schedule.perturb(&item.x0, t, &mut rng)?;
                let eps_hat = predict(&xt, &item.y0, t, &eps)?;
                let x0_hat = x0_from_eps(&xt, &eps_hat, t, schedule)?;
                ratios.push(motion_score(&x0_hat)? / gt);
            }
            Ok((gt, ratios))
        })
        .collect::<Result<_>>()?;
    let n = items.len() as f64;
    let ratios = (0..g).map(|j| per_item.iter().map(|(_, r)| r[j]).sum::<f64>() / n).collect();
    let gt_motion = per_item.iter().map(|(m, _)| m).sum::<f64>() / n;
    Ok(LeakageCurve {
        t_grid: t_grid.to_vec(),
        ratios,
        gt_motion,
    })
}

/// Denoiser under test in a motion sweep.
#[derive(Debug, Clone, Copy)]
pub enum SweepModel<'a> {
    /// Exact conditional denoiser of each target's world.
    Exact,
    /// Leaky denoiser of each target's world.
    Leaky { lambda_max: f64, power: f64 },
    /// A network trained with motion conditioning, fed each target.
    Conditioned(&'a MlpDenoiser),
    /// A network without motion input; compared once against the world's own motion.
    Unconditioned(&'a MlpDenoiser),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub input_ms: f64,
    pub output_ms_mean: f64,
    pub output_ms_std: f64,
    /// `(output - input) / input`.
    pub error: f64,
}

pub fn sweep_table(rows: &[SweepRow]) -> Table {
    let mut table = Table::new(["input_ms", "output_ms_mean", "output_ms_std", "error"]);
    for r in rows {
        table.push(vec![r.input_ms.into(), r.output_ms_mean.into(), r.output_ms_std.into(), r.error.into()]);
    }
    table
}

/// Output-vs-input motion for each target level.
///
/// For every target the world's step size is re-solved so that its expected
/// motion equals the target; conditioning frames come from that world. The
/// unconditioned variant ignores `targets` and yields a single row against
/// the base world's expected motion.
pub fn motion_sweep(
    world: &GaussianWorld,
    schedule: &NoiseSchedule,
    model: SweepModel<'_>,
    targets: &[f64],
    plan: &SamplingPlan,
    n: usize,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    if n == 0 {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    if let SweepModel::Unconditioned(den) = model {
        let row = sweep_row(world, schedule, den, world.expected_motion(), plan, n, seed)?;
        return Ok(vec![row]);
    }
    if let SweepModel::Conditioned(den) = model {
        if !den.is_motion_conditioned() {
            return Err(Error::config("conditioned sweep requires a motion-conditioned checkpoint"));
        }
    }
    targets
        .iter()
        .map(|&target| {
            let w = world.with_step_std(world.step_std_for_motion(target)?);
            let input = w.expected_motion();
            match model {
                SweepModel::Exact => sweep_row(&w, schedule, &ExactDenoiser::conditional(&w), input, plan, n, seed),
                SweepModel::Leaky { lambda_max, power } => {
                    sweep_row(&w, schedule, &LeakyDenoiser::new(&w, lambda_max, power)?, input, plan, n, seed)
                }
                SweepModel::Conditioned(den) => {
                    let den = den.clone().with_motion_target(target)?;
                    sweep_row(&w, schedule, &den, input, plan, n, seed)
                }
                SweepModel::Unconditioned(_) => unreachable!(),
            }
        })
        .collect()
}

fn sweep_row<D: Denoiser + ?Sized>(
    world: &GaussianWorld,
    schedule: &NoiseSchedule,
    denoiser: &D,
    input_ms: f64,
    plan: &SamplingPlan,
    n: usize,
    seed: u64,
) -> Result<SweepRow> {
    let config = plan.resolve(world, schedule)?;
    let y0s = draw_conditions(world, 0, n, &mut stream(seed.wrapping_add(CONDITION_STREAM_SALT), 1));
    let samples = sample_chains(denoiser, &y0s, &config, schedule, seed)?;
    let scores = samples.iter().map(motion_score).collect::<Result<Vec<_>>>()?;
    let (mean, std) = mean_std(&scores);
    Ok(SweepRow {
        input_ms,
        output_ms_mean: mean,
        output_ms_std: std,
        error: (mean - input_ms) / input_ms,
    })
}

/// Discrepancy between generated samples and the true conditional law.
///
/// Residuals `x - E[X_0 | frame_1 = y0]` share one covariance whatever `y0` is,
/// so samples conditioned on different frames can be pooled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentError {
    /// Root mean square of the residual mean over coordinates.
    pub mean_rmse: f64,
    /// `||Cov(residual) - Cov_true||_F / ||Cov_true||_F`.
    pub cov_rel_frobenius: f64,
}

pub fn moment_error(world: &GaussianWorld, samples: &[Video], y0s: &[Vec<f64>]) -> Result<MomentError> {
    if samples.len() != y0s.len() {
        return Err(Error::Shape {
            expected: format!("{} conditioning frames", samples.len()),
            got: format!("{}", y0s.len()),
        });
    }
    if samples.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: samples.len(),
        });
    }
    let dim = world.frames * world.dim;
    let residuals = samples
        .iter()
        .zip(y0s)
        .map(|(x, y)| {
            x.check_shape(world.frames, world.dim)?;
            let m = world.conditional_moments(y, 0)?.mean;
            Ok(x.lin_comb(1.0, &m, -1.0).into_vec())
        })
        .collect::<Result<Vec<_>>>()?;
    let n = residuals.len() as f64;
    let mut mean = vec![0.0; dim];
    for r in &residuals {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / n;
        }
    }
    let mut cov = DMatrix::<f64>::zeros(dim, dim);
    for r in &residuals {
        let c: Vec<f64> = r.iter().zip(&mean).map(|(v, m)| v - m).collect();
        for a in 0..dim {
            for b in 0..dim {
                cov[(a, b)] += c[a] * c[b] / n;
            }
        }
    }
    let truth = world.conditional_moments(&y0s[0], 0)?.full_covariance();
    Ok(MomentError {
        mean_rmse: (mean.iter().map(|m| m * m).sum::<f64>() / dim as f64).sqrt(),
        cov_rel_frobenius: (cov - &truth).norm() / truth.norm(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub start_time: f64,
    pub init: InitKind,
    /// KL from the world's marginal at `M` to the initial distribution.
    pub kl: f64,
    pub mean_ms: f64,
    pub moment_error: MomentError,
}

pub fn ablation_table(rows: &[AblationRow]) -> Table {
    let mut table = Table::new(["start_time", "init", "kl", "mean_ms", "mean_rmse", "cov_rel_frobenius"]);
    for r in rows {
        table.push(vec![
            r.start_time.into(),
            Cell::Text(r.init.name().into()),
            r.kl.into(),
            r.mean_ms.into(),
            r.moment_error.mean_rmse.into(),
            r.moment_error.cov_rel_frobenius.into(),
        ]);
    }
    table
}

/// Every `(M, init)` cell shares conditioning frames and chain seeds, so
/// cells differ only through the start time and initial distribution.
pub struct AblationSpec<'a> {
    pub start_times: &'a [f64],
    pub inits: &'a [InitKind],
    pub steps: usize,
    pub inference_condition: crate::sampler::InferenceCondition,
    pub n: usize,
    pub seed: u64,
}

pub fn init_ablation<D: Denoiser + ?Sized>(
    world: &GaussianWorld,
    schedule: &NoiseSchedule,
    denoiser: &D,
    spec: &AblationSpec<'_>,
) -> Result<Vec<AblationRow>> {
    let y0s = draw_conditions(world, 0, spec.n, &mut stream(spec.seed.wrapping_add(CONDITION_STREAM_SALT), 2));
    let mut rows = Vec::new();
    for &m in spec.start_times {
        let q = world.marginal_moments_at(schedule, m)?;
        for &kind in spec.inits {
            let plan = SamplingPlan {
                start_time: m,
                steps: spec.steps,
                init: kind,
                inference_condition: spec.inference_condition,
            };
            let config = plan.resolve(world, schedule)?;
            let init = init_distribution(&config, world, schedule)?;
            let samples = sample_chains(denoiser, &y0s, &config, schedule, spec.seed)?;
            rows.push(AblationRow {
                start_time: m,
                init: kind,
                kl: kl_to_init(&q, &init)?,
                mean_ms: mean_motion(&samples)?,
                moment_error: moment_error(world, &samples, &y0s)?,
            });
        }
    }
    Ok(rows)
}

fn init_distribution(
    config: &SamplerConfig,
    world: &GaussianWorld,
    schedule: &NoiseSchedule,
) -> Result<crate::analytic_init::InitDistribution> {
    match &config.init {
        InitMode::Standard => crate::analytic_init::InitDistribution::standard(schedule, config.start_time, world.frames, world.dim),
        InitMode::Analytic { init } => Ok(init.clone()),
    }
}

/// Paired comparison of two sampler configurations on shared conditioning
/// frames and chain seeds: mean motion and moment error for each.
pub fn paired_motion<D: Denoiser + ?Sized>(
    world: &GaussianWorld,
    schedule: &NoiseSchedule,
    denoiser: &D,
    configs: &[SamplerConfig],
    n: usize,
    seed: u64,
) -> Result<Vec<(f64, MomentError)>> {
    let y0s = draw_conditions(world, 0, n, &mut stream(seed.wrapping_add(CONDITION_STREAM_SALT), 2));
    configs
        .iter()
        .map(|c| {
            let samples = sample_chains(denoiser, &y0s, c, schedule, seed)?;
            Ok((mean_motion(&samples)?, moment_error(world, &samples, &y0s)?))
        })
        .collect()
}
