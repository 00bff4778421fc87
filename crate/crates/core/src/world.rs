//! Gaussian random-walk videos.
//!
//! Frame 1 is `N(m0, s0^2 I)` and every later frame adds `drift + N(0, s_w^2 I)`.
//! Coordinates are independent, so the prior covariance of the flattened video
//! is `C kron I_d` with the `N x N` frame factor `C_ij = s0^2 + min(i, j) s_w^2`
//! (zero-based `i, j`). Every posterior, marginal and KL the laboratory needs is
//! an `N x N` computation against this factor.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::denoiser::{check_inputs, eps_from_x0, Denoiser};
use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;
use crate::timenoise::std_normal_cdf;
use crate::video::Video;

/// Diagonal jitter added when a system matrix is only semidefinite.
pub const CHOLESKY_JITTER: f64 = 1e-12;

/// Which frame of a training video serves as the conditioning frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CondFrame {
    #[default]
    First,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaussianWorld {
    pub frames: usize,
    pub dim: usize,
    pub m0: Vec<f64>,
    pub s0: f64,
    pub drift: Vec<f64>,
    pub s_w: f64,
    #[serde(default)]
    pub cond_frame: CondFrame,
}

impl Default for GaussianWorld {
    fn default() -> Self {
        GaussianWorld {
            frames: 8,
            dim: 4,
            m0: vec![0.0; 4],
            s0: 1.0,
            drift: vec![0.2; 4],
            s_w: 0.5,
            cond_frame: CondFrame::First,
        }
    }
}

/// Mean video and `N x N` frame covariance factor of a Gaussian video law.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMoments {
    pub mean: Video,
    pub cov: DMatrix<f64>,
}

impl FrameMoments {
    /// Full `(N d) x (N d)` covariance `cov kron I_d` in flattened frame-major order.
    pub fn full_covariance(&self) -> DMatrix<f64> {
        let n = self.mean.frames();
        let d = self.mean.dim();
        let mut full = DMatrix::zeros(n * d, n * d);
        for i in 0..n {
            for j in 0..n {
                for k in 0..d {
                    full[(i * d + k, j * d + k)] = self.cov[(i, j)];
                }
            }
        }
        full
    }

    /// Sum of per-coordinate variances of the flattened video.
    pub fn trace(&self) -> f64 {
        self.cov.trace() * self.mean.dim() as f64
    }
}

impl GaussianWorld {
    pub fn validate(&self) -> Result<()> {
        if self.frames < 2 || self.dim < 1 {
            return Err(Error::config(format!(
                "world needs at least 2 frames and 1 coordinate, got {}x{}",
                self.frames, self.dim
            )));
        }
        if self.m0.len() != self.dim || self.drift.len() != self.dim {
            return Err(Error::config("m0 and drift must have length dim"));
        }
        if !(self.s0.is_finite() && self.s0 >= 0.0) {
            return Err(Error::config(format!("s0 must be >= 0, got {}", self.s0)));
        }
        if !(self.s_w.is_finite() && self.s_w > 0.0) {
            return Err(Error::config(format!("s_w must be > 0, got {}", self.s_w)));
        }
        if self.m0.iter().chain(&self.drift).any(|v| !v.is_finite()) {
            return Err(Error::config("m0 and drift must be finite"));
        }
        Ok(())
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.frames, self.dim)
    }

    /// Same world with a different per-step standard deviation.
    pub fn with_step_std(&self, s_w: f64) -> Self {
        GaussianWorld { s_w, ..self.clone() }
    }

    pub fn sample_video<R: Rng + ?Sized>(&self, rng: &mut R) -> Video {
        let mut v = Video::zeros(self.frames, self.dim);
        for k in 0..self.dim {
            v[(0, k)] = self.m0[k] + self.s0 * rng.sample::<f64, _>(StandardNormal);
        }
        for i in 1..self.frames {
            for k in 0..self.dim {
                v[(i, k)] = v[(i - 1, k)] + self.drift[k] + self.s_w * rng.sample::<f64, _>(StandardNormal);
            }
        }
        v
    }

    /// Frame index used as the conditioning frame for a freshly drawn video.
    pub fn condition_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match self.cond_frame {
            CondFrame::First => 0,
            CondFrame::Random => rng.random_range(0..self.frames),
        }
    }

    pub fn prior_moments(&self) -> FrameMoments {
        let n = self.frames;
        let mut mean = Video::zeros(n, self.dim);
        for i in 0..n {
            for k in 0..self.dim {
                mean[(i, k)] = self.m0[k] + i as f64 * self.drift[k];
            }
        }
        let s0_sq = self.s0 * self.s0;
        let sw_sq = self.s_w * self.s_w;
        let cov = DMatrix::from_fn(n, n, |i, j| s0_sq + i.min(j) as f64 * sw_sq);
        FrameMoments { mean, cov }
    }

    /// Moments of `X_t = alpha_t X_0 + sigma_t eps`.
    pub fn marginal_moments_at(&self, schedule: &NoiseSchedule, t: f64) -> Result<FrameMoments> {
        let (alpha, sigma) = schedule.alpha_sigma(t)?;
        let prior = self.prior_moments();
        let n = self.frames;
        Ok(FrameMoments {
            mean: prior.mean.scaled(alpha),
            cov: prior.cov * (alpha * alpha) + DMatrix::identity(n, n) * (sigma * sigma),
        })
    }

    /// Prior moments conditioned on frame `index` being equal to `y`.
    pub fn conditional_moments(&self, y: &[f64], index: usize) -> Result<FrameMoments> {
        if index >= self.frames {
            return Err(Error::domain(format!("conditioning frame {index} out of range")));
        }
        if y.len() != self.dim {
            return Err(Error::Shape {
                expected: format!("{}-dim frame", self.dim),
                got: format!("{}-dim frame", y.len()),
            });
        }
        let prior = self.prior_moments();
        let n = self.frames;
        let c = &prior.cov;
        let pivot = c[(index, index)];
        let mut mean = prior.mean.clone();
        if pivot <= 0.0 {
            // frame is deterministic under the prior; nothing to update
            mean.frame_mut(index).copy_from_slice(y);
            return Ok(FrameMoments { mean, cov: prior.cov });
        }
        for i in 0..n {
            let gain = c[(i, index)] / pivot;
            for k in 0..self.dim {
                mean[(i, k)] += gain * (y[k] - prior.mean[(index, k)]);
            }
        }
        let mut cov = DMatrix::from_fn(n, n, |i, j| c[(i, j)] - c[(i, index)] * c[(index, j)] / pivot);
        // exact zeros on the conditioned row and column
        for i in 0..n {
            cov[(i, index)] = 0.0;
            cov[(index, i)] = 0.0;
        }
        mean.frame_mut(index).copy_from_slice(y);
        Ok(FrameMoments { mean, cov })
    }

    /// Closed-form expected motion score of a video drawn from this world:
    /// `(N - 1) / d * sum_k E|N(drift_k, s_w^2)|`.
    pub fn expected_motion(&self) -> f64 {
        let per_step: f64 = self
            .drift
            .iter()
            .map(|&mu| folded_normal_mean(mu, self.s_w))
            .sum::<f64>()
            / self.dim as f64;
        (self.frames - 1) as f64 * per_step
    }

    /// Step std whose expected motion equals `target` (bisection; motion grows with `s_w`).
    pub fn step_std_for_motion(&self, target: f64) -> Result<f64> {
        let floor = self.with_step_std(1e-12).expected_motion();
        if !(target.is_finite() && target > floor) {
            return Err(Error::domain(format!(
                "motion target {target} not reachable (minimum {floor})"
            )));
        }
        let mut lo = 1e-12;
        let mut hi = 1.0;
        while self.with_step_std(hi).expected_motion() < target {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.with_step_std(mid).expected_motion() < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

/// `E|Z|` for `Z ~ N(mu, s^2)`.
pub fn folded_normal_mean(mu: f64, s: f64) -> f64 {
    if s == 0.0 {
        return mu.abs();
    }
    s * (2.0 / std::f64::consts::PI).sqrt() * (-mu * mu / (2.0 * s * s)).exp()
        + mu * (1.0 - 2.0 * std_normal_cdf(-mu / s))
}

/// Posterior mean `E[X_0 | X_t = xt]` for `X_0 ~ N(mean, cov kron I_d)`.
///
/// Per coordinate column: solve `(alpha^2 C + sigma^2 I) w = xt - alpha mean`,
/// then `x0_hat = mean + alpha C w`.
pub fn gaussian_posterior_mean(prior: &FrameMoments, xt: &Video, alpha: f64, sigma: f64) -> Result<Video> {
    let n = prior.mean.frames();
    let d = prior.mean.dim();
    let c = &prior.cov;
    let system = c * (alpha * alpha) + DMatrix::identity(n, n) * (sigma * sigma);
    let chol = system
        .clone()
        .cholesky()
        .or_else(|| (system + DMatrix::identity(n, n) * CHOLESKY_JITTER).cholesky())
        .ok_or_else(|| Error::Decomposition(format!("posterior system singular (alpha={alpha}, sigma={sigma})")))?;
    let mut out = prior.mean.clone();
    let mut rhs = DVector::zeros(n);
    for k in 0..d {
        for i in 0..n {
            rhs[i] = xt[(i, k)] - alpha * prior.mean[(i, k)];
        }
        let w = chol.solve(&rhs);
        let shift = c * w * alpha;
        for i in 0..n {
            out[(i, k)] += shift[i];
        }
    }
    Ok(out)
}

/// Bayes-optimal denoiser for a [`GaussianWorld`].
///
/// The conditional kind returns `E[X_0 | X_t, frame_j = y]` for the fixed
/// conditioning frame index `j` (frame 1 by default); the unconditional kind
/// ignores `y`.
#[derive(Debug, Clone)]
pub struct ExactDenoiser {
    world: GaussianWorld,
    conditional: bool,
    cond_index: usize,
}

impl ExactDenoiser {
    pub fn conditional(world: &GaussianWorld) -> Self {
        ExactDenoiser {
            world: world.clone(),
            conditional: true,
            cond_index: 0,
        }
    }

    pub fn unconditional(world: &GaussianWorld) -> Self {
        ExactDenoiser {
            world: world.clone(),
            conditional: false,
            cond_index: 0,
        }
    }

    pub fn with_condition_index(mut self, index: usize) -> Self {
        self.cond_index = index;
        self
    }

    pub fn is_conditional(&self) -> bool {
        self.conditional
    }

    pub fn world(&self) -> &GaussianWorld {
        &self.world
    }
}

impl Denoiser for ExactDenoiser {
    fn shape(&self) -> (usize, usize) {
        self.world.shape()
    }

    fn predict_x0(&self, xt: &Video, y: &[f64], t: f64, schedule: &NoiseSchedule) -> Result<Video> {
        check_inputs(self.shape(), xt, y)?;
        let (alpha, sigma) = schedule.alpha_sigma(t)?;
        let prior = if self.conditional {
            self.world.conditional_moments(y, self.cond_index)?
        } else {
            self.world.prior_moments()
        };
        gaussian_posterior_mean(&prior, xt, alpha, sigma)
    }

    fn predict_eps(&self, xt: &Video, y: &[f64], t: f64, schedule: &NoiseSchedule) -> Result<Video> {
        let x0 = self.predict_x0(xt, y, t, schedule)?;
        eps_from_x0(xt, &x0, t, schedule)
    }
}

/// Exact conditional denoiser blended toward the static video `broadcast(y)`:
/// `x0_hat = (1 - lambda(t)) exact + lambda(t) broadcast(y)`, `lambda(t) = lambda_max t^p`.
///
/// Reproduces over-reliance on the conditioning frame at large `t` as a dial.
#[derive(Debug, Clone)]
pub struct LeakyDenoiser {
    exact: ExactDenoiser,
    lambda_max: f64,
    power: f64,
}

impl LeakyDenoiser {
    pub fn new(world: &GaussianWorld, lambda_max: f64, power: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda_max) {
            return Err(Error::config(format!("lambda_max must lie in [0, 1], got {lambda_max}")));
        }
        if !(power.is_finite() && power > 0.0) {
            return Err(Error::config(format!("leak power must be > 0, got {power}")));
        }
        Ok(LeakyDenoiser {
            exact: ExactDenoiser::conditional(world),
            lambda_max,
            power,
        })
    }

    pub fn lambda(&self, t: f64) -> f64 {
        self.lambda_max * t.powf(self.power)
    }
}

impl Denoiser for LeakyDenoiser {
    fn shape(&self) -> (usize, usize) {
        self.exact.shape()
    }

    fn predict_x0(&self, xt: &Video, y: &[f64], t: f64, schedule: &NoiseSchedule) -> Result<Video> {
        let exact = self.exact.predict_x0(xt, y, t, schedule)?;
        let lambda = self.lambda(t);
        let stat = Video::broadcast(y, xt.frames());
        Ok(exact.lin_comb(1.0 - lambda, &stat, lambda))
    }

    fn predict_eps(&self, xt: &Video, y: &[f64], t: f64, schedule: &NoiseSchedule) -> Result<Video> {
        let x0 = self.predict_x0(xt, y, t, schedule)?;
        eps_from_x0(xt, &x0, t, schedule)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::x0_from_eps;
    use crate::rng::seeded;
    use approx::assert_abs_diff_eq;

    fn small_world(frames: usize, dim: usize) -> GaussianWorld {
        GaussianWorld {
            frames,
            dim,
            m0: vec![0.5; dim],
            s0: 1.0,
            drift: vec![0.3; dim],
            s_w: 0.7,
            cond_frame: CondFrame::First,
        }
    }

    #[test]
    fn prior_covariance_follows_min_rule() {
        let w = GaussianWorld {
            frames: 2,
            dim: 1,
            m0: vec![0.0],
            s0: 1.0,
            drift: vec![0.0],
            s_w: 1.0,
            cond_frame: CondFrame::First,
        };
        let c = w.prior_moments().cov;
        assert_eq!(c, DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 2.0]));
        assert_abs_diff_eq!(c.determinant(), 1.0, epsilon = 1e-14);

        let w3 = GaussianWorld { frames: 3, s0: 0.0, ..w };
        let c3 = w3.prior_moments().cov;
        for j in 0..3 {
            assert_eq!(c3[(0, j)], 0.0);
            assert_eq!(c3[(j, 0)], 0.0);
        }
    }

    #[test]
    fn deterministic_walk_limit() {
        let w = GaussianWorld {
            frames: 4,
            dim: 2,
            m0: vec![1.0, -1.0],
            s0: 0.0,
            drift: vec![0.5, 0.25],
            s_w: 1e-8,
            cond_frame: CondFrame::First,
        };
        let v = w.sample_video(&mut seeded(0));
        for i in 0..4 {
            assert!((v[(i, 0)] - (1.0 + 0.5 * i as f64)).abs() < 1e-6);
            assert!((v[(i, 1)] - (-1.0 + 0.25 * i as f64)).abs() < 1e-6);
        }
    }

    #[test]
    fn marginal_at_zero_is_prior() {
        let w = small_world(3, 2);
        let m = w.marginal_moments_at(&NoiseSchedule::vp_default(), 0.0).unwrap();
        let p = w.prior_moments();
        assert_eq!(m.mean, p.mean);
        assert_eq!(m.cov, p.cov);
    }

    #[test]
    fn marginal_at_one_is_near_standard() {
        let w = small_world(3, 2);
        let s = NoiseSchedule::vp_default();
        let a1 = s.alpha(1.0);
        let m = w.marginal_moments_at(&s, 1.0).unwrap();
        let bound = a1 * a1 * 10.0;
        assert!(m.mean.as_slice().iter().all(|v| v.abs() < a1 * 10.0));
        for i in 0..3 {
            for j in 0..3 {
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((m.cov[(i, j)] - target).abs() < bound);
            }
        }
    }

    #[test]
    fn conditional_moments_for_first_frame() {
        let w = small_world(4, 1);
        let m = w.conditional_moments(&[2.0], 0).unwrap();
        for i in 0..4 {
            assert_abs_diff_eq!(m.mean[(i, 0)], 2.0 + 0.3 * i as f64, epsilon = 1e-12);
            for j in 0..4 {
                let expected = i.min(j) as f64 * 0.49;
                assert_abs_diff_eq!(m.cov[(i, j)], expected, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn conditional_prediction_reproduces_condition_frame() {
        let w = small_world(5, 3);
        let s = NoiseSchedule::vp_default();
        let den = ExactDenoiser::conditional(&w);
        let mut rng = seeded(4);
        let y = [0.1, -0.7, 1.3];
        for t in [0.1, 0.5, 0.9, 1.0] {
            let xt = Video::standard_normal(5, 3, &mut rng);
            let x0 = den.predict_x0(&xt, &y, t, &s).unwrap();
            assert_eq!(x0.frame(0), &y);
        }
    }

    #[test]
    fn small_noise_prediction_tracks_input() {
        let w = small_world(3, 2);
        let s = NoiseSchedule::vp_default();
        let den = ExactDenoiser::unconditional(&w);
        let xt = w.sample_video(&mut seeded(8));
        let x0 = den.predict_x0(&xt, &[0.0, 0.0], 1e-6, &s).unwrap();
        assert!(x0.max_abs_diff(&xt.scaled(1.0 / s.alpha(1e-6))) < 1e-4);
    }

    #[test]
    fn terminal_prediction_is_conditional_prior_mean() {
        let w = small_world(4, 2);
        let s = NoiseSchedule::vp_default();
        let den = ExactDenoiser::conditional(&w);
        let y = [1.0, -2.0];
        let xt = Video::standard_normal(4, 2, &mut seeded(1));
        let x0 = den.predict_x0(&xt, &y, 1.0, &s).unwrap();
        let a1 = s.alpha(1.0);
        for i in 0..4 {
            for k in 0..2 {
                let target = y[k] + 0.3 * i as f64;
                assert!((x0[(i, k)] - target).abs() < 20.0 * a1);
            }
        }
    }

    #[test]
    fn eps_and_x0_views_round_trip() {
        let w = small_world(3, 2);
        let den = ExactDenoiser::conditional(&w);
        let y = [0.4, 0.2];
        for s in [NoiseSchedule::vp_default(), NoiseSchedule::ve_default()] {
            let xt = Video::standard_normal(3, 2, &mut seeded(6));
            let x0 = den.predict_x0(&xt, &y, 0.4, &s).unwrap();
            let eps = den.predict_eps(&xt, &y, 0.4, &s).unwrap();
            let back = x0_from_eps(&xt, &eps, 0.4, &s).unwrap();
            assert!(back.max_abs_diff(&x0) < 1e-12);
        }
    }

    #[test]
    fn leaky_blend_endpoints() {
        let w = small_world(3, 2);
        let s = NoiseSchedule::vp_default();
        let y = [0.5, 0.5];
        let xt = Video::standard_normal(3, 2, &mut seeded(2));
        let exact = ExactDenoiser::conditional(&w).predict_x0(&xt, &y, 0.7, &s).unwrap();
        let none = LeakyDenoiser::new(&w, 0.0, 4.0).unwrap();
        assert_eq!(none.predict_x0(&xt, &y, 0.7, &s).unwrap(), exact);
        let full = LeakyDenoiser::new(&w, 1.0, 4.0).unwrap();
        assert_eq!(full.predict_x0(&xt, &y, 1.0, &s).unwrap(), Video::broadcast(&y, 3));
        assert!(LeakyDenoiser::new(&w, 1.5, 4.0).is_err());
    }

    #[test]
    fn folded_normal_limits() {
        assert_abs_diff_eq!(folded_normal_mean(0.0, 1.0), (2.0 / std::f64::consts::PI).sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(folded_normal_mean(10.0, 0.1), 10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(folded_normal_mean(-3.0, 0.0), 3.0);
    }

    #[test]
    fn step_std_inverts_expected_motion() {
        let w = GaussianWorld::default();
        let target = 4.0;
        let s_w = w.step_std_for_motion(target).unwrap();
        assert_abs_diff_eq!(w.with_step_std(s_w).expected_motion(), target, epsilon = 1e-9);
        assert!(w.step_std_for_motion(0.1).is_err());
    }

    #[test]
    fn validation_rejects_bad_worlds() {
        let mut w = GaussianWorld::default();
        assert!(w.validate().is_ok());
        w.frames = 1;
        assert!(w.validate().is_err());
        let w = GaussianWorld { drift: vec![0.0; 3], ..GaussianWorld::default() };
        assert!(w.validate().is_err());
        let w = GaussianWorld { s_w: 0.0, ..GaussianWorld::default() };
        assert!(w.validate().is_err());
    }
}
