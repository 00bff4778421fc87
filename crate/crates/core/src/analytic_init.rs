//! KL-optimal isotropic Gaussian initialization at an early start time.
//!
//! For `p_M = N(mu_p, sigma_p^2 I)` and the forward marginal `q_M` of data `X_0`
//! pushed through `x_M = alpha_M x_0 + sigma_M eps`, `KL(q_M || p_M)` is minimized by
//!
//! ```text
//! mu_p*      = alpha_M E[X_0]
//! sigma_p^2* = alpha_M^2 (1/D) sum_j Var(X_0^(j)) + sigma_M^2
//! ```
//!
//! where `D = frames * dim` is the flattened dimension. This module estimates the
//! data moments, builds the optimum, evaluates the exact Gaussian KL and checks
//! the optimum against a perturbation grid.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;
use crate::video::Video;
use crate::world::{FrameMoments, GaussianWorld};

/// Method-of-moments summary of a video distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataMoments {
    pub mean: Video,
    /// Average over flattened coordinates of the per-coordinate variance.
    pub avg_var: f64,
    pub n_samples: usize,
}

impl DataMoments {
    /// Exact moments of a Gaussian world (`n_samples = 0` marks them as analytic).
    pub fn of_world(world: &GaussianWorld) -> Self {
        let prior = world.prior_moments();
        let d_flat = (world.frames * world.dim) as f64;
        DataMoments {
            avg_var: prior.trace() / d_flat,
            mean: prior.mean,
            n_samples: 0,
        }
    }
}

/// Population-variance (divisor `n`) moment estimate over flattened coordinates.
pub fn estimate_moments(samples: &[Video]) -> Result<DataMoments> {
    if samples.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: samples.len(),
        });
    }
    let first = &samples[0];
    if let Some(bad) = samples.iter().find(|v| !v.same_shape(first)) {
        return Err(Error::Shape {
            expected: format!("{}x{} video", first.frames(), first.dim()),
            got: format!("{}x{} video", bad.frames(), bad.dim()),
        });
    }
    let n = samples.len() as f64;
    let len = first.len();
    let mut mean = vec![0.0; len];
    for v in samples {
        for (m, x) in mean.iter_mut().zip(v.as_slice()) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    // second pass keeps the variance free of E[x^2] - E[x]^2 cancellation
    let mut sq = 0.0;
    for v in samples {
        for (m, x) in mean.iter().zip(v.as_slice()) {
            sq += (x - m) * (x - m);
        }
    }
    Ok(DataMoments {
        mean: Video::from_flat(first.frames(), first.dim(), mean)?,
        avg_var: sq / (n * len as f64),
        n_samples: samples.len(),
    })
}

/// Isotropic Gaussian `N(mu_p, sigma_p2 I)` used to seed sampling at `start_time`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitDistribution {
    pub mu_p: Video,
    pub sigma_p2: f64,
    pub start_time: f64,
}

impl InitDistribution {
    pub fn new(mu_p: Video, sigma_p2: f64, start_time: f64) -> Result<Self> {
        let init = InitDistribution {
            mu_p,
            sigma_p2,
            start_time,
        };
        init.validate()?;
        Ok(init)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_p2.is_finite() && self.sigma_p2 > 0.0) {
            return Err(Error::config(format!("sigma_p2 must be > 0, got {}", self.sigma_p2)));
        }
        if !self.mu_p.is_finite() {
            return Err(Error::config("mu_p must be finite"));
        }
        if !(self.start_time > 0.0 && self.start_time <= 1.0) {
            return Err(Error::config(format!("start time {} outside (0, 1]", self.start_time)));
        }
        Ok(())
    }

    /// Reference initialization at `m`: `N(0, I)` for VP, `N(0, sigma_m^2 I)` for VE.
    pub fn standard(schedule: &NoiseSchedule, m: f64, frames: usize, dim: usize) -> Result<Self> {
        let s = schedule.standard_init_std(m);
        InitDistribution::new(Video::zeros(frames, dim), s * s, m)
    }
}

pub fn optimal_init(moments: &DataMoments, schedule: &NoiseSchedule, m: f64) -> Result<InitDistribution> {
    if !(m > 0.0 && m <= 1.0) {
        return Err(Error::domain(format!("start time {m} outside (0, 1]")));
    }
    let (alpha, sigma) = schedule.alpha_sigma(m)?;
    InitDistribution::new(
        moments.mean.scaled(alpha),
        alpha * alpha * moments.avg_var + sigma * sigma,
        m,
    )
}

/// Exact `KL(N(mu_q, sigma_q) || N(mu_p, sigma_p2 I))`:
///
/// `1/2 [ |mu_p - mu_q|^2 / s + D ln s + tr(sigma_q) / s - ln det sigma_q - D ]`, `s = sigma_p2`.
pub fn gaussian_kl(mu_q: &[f64], sigma_q: &DMatrix<f64>, init: &InitDistribution) -> Result<f64> {
    let d = mu_q.len();
    if sigma_q.nrows() != d || sigma_q.ncols() != d || init.mu_p.len() != d {
        return Err(Error::Shape {
            expected: format!("{d}-dim mean with {d}x{d} covariance"),
            got: format!(
                "{}x{} covariance, {}-dim init mean",
                sigma_q.nrows(),
                sigma_q.ncols(),
                init.mu_p.len()
            ),
        });
    }
    let chol = sigma_q
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Decomposition("covariance is not positive definite".into()))?;
    let log_det: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let s = init.sigma_p2;
    let mean_sq: f64 = mu_q
        .iter()
        .zip(init.mu_p.as_slice())
        .map(|(q, p)| (p - q) * (p - q))
        .sum();
    let df = d as f64;
    let kl = 0.5 * (mean_sq / s + df * s.ln() + sigma_q.trace() / s - log_det - df);
    Ok(kl.max(0.0))
}

/// KL from a world's frame-structured marginal to an isotropic init.
pub fn kl_to_init(q: &FrameMoments, init: &InitDistribution) -> Result<f64> {
    gaussian_kl(q.mean.as_slice(), &q.full_covariance(), init)
}

/// Multiplicative variance factors `kappa` and mean offsets `s * direction`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationGrid {
    pub kappas: Vec<f64>,
    pub offsets: Vec<f64>,
}

impl PerturbationGrid {
    /// 9 x 9 grid: `kappa = 2^u`, `u` evenly spaced on `[-1, 1]` (so `kappa in [0.5, 2]`),
    /// and offsets evenly spaced on `[-1, 1]`; both include the identity.
    pub fn standard() -> Self {
        let lin: Vec<f64> = (0..9).map(|i| -1.0 + 0.25 * i as f64).collect();
        PerturbationGrid {
            kappas: lin.iter().map(|u| 2f64.powf(*u)).collect(),
            offsets: lin,
        }
    }

    fn is_identity(kappa: f64, offset: f64) -> bool {
        kappa == 1.0 && offset == 0.0
    }
}

/// Unit direction used for mean offsets: alternating signs, normalized.
pub fn offset_direction(len: usize) -> Vec<f64> {
    let norm = (len as f64).sqrt();
    (0..len).map(|i| if i % 2 == 0 { 1.0 / norm } else { -1.0 / norm }).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalityReport {
    pub start_time: f64,
    pub optimum_mu_p: Vec<f64>,
    pub optimum_sigma_p2: f64,
    pub optimum_kl: f64,
    pub grid: PerturbationGrid,
    /// `kl_values[i][j]` is the KL at `kappas[i]`, `offsets[j]`.
    pub kl_values: Vec<Vec<f64>>,
    /// Smallest `KL(perturbed) - KL(optimum)` over non-identity grid points.
    pub min_margin: f64,
    /// `|sigma_p2* - (tr(sigma_q) + |mu_p* - mu_q|^2) / D|`.
    pub variance_formula_error: f64,
    /// `max_j |mu_p*_j - mu_q_j|`.
    pub mean_error: f64,
    pub passed: bool,
}

/// Required strict-minimum margin on the perturbation grid.
pub const OPTIMALITY_MARGIN: f64 = 1e-9;
/// Tolerance on the trace form of the optimal variance.
pub const VARIANCE_FORMULA_TOL: f64 = 1e-10;

/// Evaluates `candidate` and every grid perturbation of it against `q = N(mu_q, sigma_q)`.
pub fn verify_optimality(
    candidate: &InitDistribution,
    mu_q: &[f64],
    sigma_q: &DMatrix<f64>,
    grid: &PerturbationGrid,
) -> Result<OptimalityReport> {
    let optimum_kl = gaussian_kl(mu_q, sigma_q, candidate)?;
    let dir = offset_direction(mu_q.len());
    let mut kl_values = Vec::with_capacity(grid.kappas.len());
    let mut min_margin = f64::INFINITY;
    for &kappa in &grid.kappas {
        let mut row = Vec::with_capacity(grid.offsets.len());
        for &offset in &grid.offsets {
            let mut mu = candidate.mu_p.clone();
            for (m, u) in mu.as_mut_slice().iter_mut().zip(&dir) {
                *m += offset * u;
            }
            let perturbed = InitDistribution {
                mu_p: mu,
                sigma_p2: candidate.sigma_p2 * kappa,
                start_time: candidate.start_time,
            };
            let kl = gaussian_kl(mu_q, sigma_q, &perturbed)?;
            if !PerturbationGrid::is_identity(kappa, offset) {
                min_margin = min_margin.min(kl - optimum_kl);
            }
            row.push(kl);
        }
        kl_values.push(row);
    }
    let d = mu_q.len() as f64;
    let mean_sq: f64 = mu_q
        .iter()
        .zip(candidate.mu_p.as_slice())
        .map(|(q, p)| (p - q) * (p - q))
        .sum();
    let variance_formula_error = (candidate.sigma_p2 - (sigma_q.trace() + mean_sq) / d).abs();
    let mean_error = mu_q
        .iter()
        .zip(candidate.mu_p.as_slice())
        .map(|(q, p)| (p - q).abs())
        .fold(0.0, f64::max);
    let passed = min_margin > OPTIMALITY_MARGIN && variance_formula_error <= VARIANCE_FORMULA_TOL;
    Ok(OptimalityReport {
        start_time: candidate.start_time,
        optimum_mu_p: candidate.mu_p.as_slice().to_vec(),
        optimum_sigma_p2: candidate.sigma_p2,
        optimum_kl,
        grid: grid.clone(),
        kl_values,
        min_margin,
        variance_formula_error,
        mean_error,
        passed,
    })
}

/// Builds the optimum from a world's exact data moments and verifies it against
/// that world's exact marginal at `m`.
pub fn check_world(
    world: &GaussianWorld,
    schedule: &NoiseSchedule,
    m: f64,
    grid: &PerturbationGrid,
) -> Result<OptimalityReport> {
    let candidate = optimal_init(&DataMoments::of_world(world), schedule, m)?;
    let q = world.marginal_moments_at(schedule, m)?;
    verify_optimality(&candidate, q.mean.as_slice(), &q.full_covariance(), grid)
}

/// One row of the training-inference gap table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub start_time: f64,
    pub kl_standard: f64,
    pub kl_analytic: f64,
}

/// `KL(q_M || standard)` and `KL(q_M || analytic)` for each start time.
pub fn init_gap(world: &GaussianWorld, schedule: &NoiseSchedule, starts: &[f64]) -> Result<Vec<GapRow>> {
    let moments = DataMoments::of_world(world);
    starts
        .iter()
        .map(|&m| {
            let q = world.marginal_moments_at(schedule, m)?;
            let standard = InitDistribution::standard(schedule, m, world.frames, world.dim)?;
            let analytic = optimal_init(&moments, schedule, m)?;
            Ok(GapRow {
                start_time: m,
                kl_standard: kl_to_init(&q, &standard)?,
                kl_analytic: kl_to_init(&q, &analytic)?,
            })
        })
        .collect()
}
