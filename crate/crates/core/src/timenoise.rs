//! Time-dependent logit-normal corruption of the conditioning frame.
//!
//! At diffusion time `t` the corruption level `beta_s in (0, beta_m)` satisfies
//! `logit(beta_s / beta_m) ~ N(mu(t), 1)` with center `mu(t) = 2 t^a - 1`, so
//! large `t` favors heavy corruption and small `t` leaves the frame nearly clean.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::schedule::check_time;

/// How the sampled level is applied to the conditioning frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseVariant {
    /// `y_s = y_0 + beta_s * eps`
    #[default]
    Additive,
    /// `y_s = (1 - beta_s) * y_0 + beta_s * eps`; requires `beta_m = 1`.
    Interpolation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeNoiseParams {
    pub beta_m: f64,
    pub a: f64,
    #[serde(default)]
    pub variant: NoiseVariant,
}

/// A (possibly corrupted) conditioning frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub y: Vec<f64>,
    /// The corruption level actually applied; 0 for a clean frame.
    pub noise_level_used: f64,
}

impl Condition {
    pub fn clean(y: &[f64]) -> Self {
        Condition {
            y: y.to_vec(),
            noise_level_used: 0.0,
        }
    }
}

impl TimeNoiseParams {
    pub fn new(beta_m: f64, a: f64, variant: NoiseVariant) -> Result<Self> {
        let p = TimeNoiseParams { beta_m, a, variant };
        p.validate()?;
        Ok(p)
    }

    pub fn additive(beta_m: f64, a: f64) -> Result<Self> {
        Self::new(beta_m, a, NoiseVariant::Additive)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta_m.is_finite() && self.beta_m > 0.0) {
            return Err(Error::config(format!("beta_m must be > 0, got {}", self.beta_m)));
        }
        if !(self.a.is_finite() && self.a > 0.0) {
            return Err(Error::config(format!("a must be > 0, got {}", self.a)));
        }
        if self.variant == NoiseVariant::Interpolation && self.beta_m != 1.0 {
            return Err(Error::config(format!(
                "interpolation variant requires beta_m = 1, got {}",
                self.beta_m
            )));
        }
        Ok(())
    }

    /// Distribution center `2 t^a - 1`.
    pub fn mu_of_t(&self, t: f64) -> f64 {
        2.0 * t.powf(self.a) - 1.0
    }

    /// Density of `beta_s` at time `t`, defined on the open interval `(0, beta_m)`.
    pub fn pdf(&self, t: f64, beta_s: f64) -> Result<f64> {
        check_time(t)?;
        let bm = self.beta_m;
        if !(beta_s > 0.0 && beta_s < bm) {
            return Err(Error::domain(format!("beta_s = {beta_s} outside (0, {bm})")));
        }
        let z = logit(beta_s / bm) - self.mu_of_t(t);
        let density = bm / (2.0 * std::f64::consts::PI).sqrt() / (beta_s * (bm - beta_s)) * (-0.5 * z * z).exp();
        Ok(density)
    }

    /// Closed-form CDF `Phi(logit(beta_s / beta_m) - mu(t))`, clamped outside the support.
    pub fn cdf(&self, t: f64, beta_s: f64) -> f64 {
        if beta_s <= 0.0 {
            return 0.0;
        }
        if beta_s >= self.beta_m {
            return 1.0;
        }
        std_normal_cdf(logit(beta_s / self.beta_m) - self.mu_of_t(t))
    }

    /// Draws `beta_m * sigmoid(z)` with `z ~ N(mu(t), 1)`.
    pub fn sample_beta<R: Rng + ?Sized>(&self, t: f64, rng: &mut R) -> f64 {
        let z: f64 = self.mu_of_t(t) + rng.sample::<f64, _>(StandardNormal);
        let b = self.beta_m * sigmoid(z);
        // keep the draw strictly inside the open support
        b.clamp(f64::MIN_POSITIVE, self.beta_m.next_down())
    }

    /// Deterministic baseline level `beta_m (mu(t) + 1) / 2`.
    pub fn constant_beta(&self, t: f64) -> f64 {
        self.beta_m * (self.mu_of_t(t) + 1.0) / 2.0
    }

    /// Samples `beta_s ~ p_t` and corrupts `y0` with it.
    pub fn corrupt<R: Rng + ?Sized>(&self, y0: &[f64], t: f64, rng: &mut R) -> Result<Condition> {
        check_time(t)?;
        let beta = self.sample_beta(t, rng);
        Ok(self.corrupt_with_level(y0, beta, rng))
    }

    /// Applies a given corruption level with this variant's rule.
    pub fn corrupt_with_level<R: Rng + ?Sized>(&self, y0: &[f64], beta_s: f64, rng: &mut R) -> Condition {
        let keep = match self.variant {
            NoiseVariant::Additive => 1.0,
            NoiseVariant::Interpolation => 1.0 - beta_s,
        };
        add_scaled_noise(y0, keep, beta_s, rng)
    }
}

/// `keep * y0 + beta * eps` with fresh standard normal `eps`.
pub(crate) fn add_scaled_noise<R: Rng + ?Sized>(y0: &[f64], keep: f64, beta: f64, rng: &mut R) -> Condition {
    let y = y0
        .iter()
        .map(|&v| keep * v + beta * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Condition {
        y,
        noise_level_used: beta,
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}
