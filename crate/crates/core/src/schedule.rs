//! Continuous-time noise schedules and the forward perturbation kernel
//! `x_t = alpha_t * x_0 + sigma_t * eps` on normalized time `t in [0, 1]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::video::Video;

/// Forward-process noise schedule.
///
/// * `Vp`: linear-rate variance preserving,
///   `alpha_t = exp(-t^2 (beta_max - beta_min) / 4 - t beta_min / 2)`, `sigma_t^2 = 1 - alpha_t^2`.
/// * `Ve`: variance exploding, `alpha_t = 1`,
///   `sigma_t = sigma_min (sigma_max / sigma_min)^t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum NoiseSchedule {
    Vp { beta_min: f64, beta_max: f64 },
    Ve { sigma_min: f64, sigma_max: f64 },
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        NoiseSchedule::vp_default()
    }
}

impl NoiseSchedule {
    pub const fn vp_default() -> Self {
        NoiseSchedule::Vp {
            beta_min: 0.1,
            beta_max: 20.0,
        }
    }

    pub const fn ve_default() -> Self {
        NoiseSchedule::Ve {
            sigma_min: 0.002,
            sigma_max: 700.0,
        }
    }

    pub fn vp(beta_min: f64, beta_max: f64) -> Result<Self> {
        let s = NoiseSchedule::Vp { beta_min, beta_max };
        s.validate()?;
        Ok(s)
    }

    pub fn ve(sigma_min: f64, sigma_max: f64) -> Result<Self> {
        let s = NoiseSchedule::Ve {
            sigma_min,
            sigma_max,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseSchedule::Vp { beta_min, beta_max } => {
                if !(beta_min.is_finite() && beta_max.is_finite()) || beta_min < 0.0 || beta_max < beta_min {
                    return Err(Error::config(format!(
                        "VP schedule needs 0 <= beta_min <= beta_max, got ({beta_min}, {beta_max})"
                    )));
                }
                // alpha_1 < 1e-2, so the terminal marginal is close to N(0, I)
                if vp_log_alpha(beta_min, beta_max, 1.0) >= (1e-2f64).ln() {
                    return Err(Error::config(format!(
                        "VP schedule ({beta_min}, {beta_max}) leaves alpha_1 >= 1e-2"
                    )));
                }
                Ok(())
            }
            NoiseSchedule::Ve {
                sigma_min,
                sigma_max,
            } => {
                if !(sigma_min.is_finite() && sigma_max.is_finite()) || sigma_min <= 0.0 || sigma_max <= sigma_min {
                    return Err(Error::config(format!(
                        "VE schedule needs 0 < sigma_min < sigma_max, got ({sigma_min}, {sigma_max})"
                    )));
                }
                Ok(())
            }
        }
    }

    pub fn is_vp(&self) -> bool {
        matches!(self, NoiseSchedule::Vp { .. })
    }

    /// `(alpha_t, sigma_t)`; errors when `t` is outside `[0, 1]`.
    pub fn alpha_sigma(&self, t: f64) -> Result<(f64, f64)> {
        check_time(t)?;
        Ok(self.coefficients(t))
    }

    /// Unchecked coefficients; callers guarantee `t in [0, 1]`.
    pub(crate) fn coefficients(&self, t: f64) -> (f64, f64) {
        match *self {
            NoiseSchedule::Vp { beta_min, beta_max } => {
                let log_alpha = vp_log_alpha(beta_min, beta_max, t);
                // 1 - alpha^2 without cancellation near t = 0
                (log_alpha.exp(), (-(2.0 * log_alpha).exp_m1()).sqrt())
            }
            NoiseSchedule::Ve {
                sigma_min,
                sigma_max,
            } => (1.0, sigma_min * (sigma_max / sigma_min).powf(t)),
        }
    }

    pub fn alpha(&self, t: f64) -> f64 {
        self.coefficients(t).0
    }

    pub fn sigma(&self, t: f64) -> f64 {
        self.coefficients(t).1
    }

    /// Noise-to-signal ratio `sigma_t / alpha_t`, the EDM noise level.
    pub fn noise_to_signal(&self, t: f64) -> f64 {
        let (a, s) = self.coefficients(t);
        s / a
    }

    /// Inverse of [`noise_to_signal`](Self::noise_to_signal), clamped to `[0, 1]`.
    pub fn time_for_noise_to_signal(&self, ratio: f64) -> f64 {
        let t = match *self {
            NoiseSchedule::Vp { beta_min, beta_max } => {
                // alpha^2 = 1 / (1 + ratio^2)
                let g = 0.5 * (ratio * ratio).ln_1p();
                let quad = 0.25 * (beta_max - beta_min);
                let lin = 0.5 * beta_min;
                if quad == 0.0 {
                    g / lin
                } else {
                    (-lin + (lin * lin + 4.0 * quad * g).sqrt()) / (2.0 * quad)
                }
            }
            NoiseSchedule::Ve {
                sigma_min,
                sigma_max,
            } => (ratio / sigma_min).ln() / (sigma_max / sigma_min).ln(),
        };
        if t.is_nan() {
            0.0
        } else {
            t.clamp(0.0, 1.0)
        }
    }

    /// Standard deviation of the reference initialization at start time `m`:
    /// `N(0, I)` for VP, `N(0, sigma_m^2 I)` for VE.
    pub fn standard_init_std(&self, m: f64) -> f64 {
        match self {
            NoiseSchedule::Vp { .. } => 1.0,
            NoiseSchedule::Ve { .. } => self.sigma(m),
        }
    }

    /// Draws `eps ~ N(0, I)` and returns `(alpha_t x0 + sigma_t eps, eps)`.
    pub fn perturb<R: Rng + ?Sized>(&self, x0: &Video, t: f64, rng: &mut R) -> Result<(Video, Video)> {
        let (alpha, sigma) = self.alpha_sigma(t)?;
        let eps = Video::standard_normal(x0.frames(), x0.dim(), rng);
        Ok((x0.lin_comb(alpha, &eps, sigma), eps))
    }
}

fn vp_log_alpha(beta_min: f64, beta_max: f64, t: f64) -> f64 {
    -0.25 * t * t * (beta_max - beta_min) - 0.5 * t * beta_min
}

pub(crate) fn check_time(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::domain(format!("time {t} outside [0, 1]")))
    }
}
