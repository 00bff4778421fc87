//! The denoiser abstraction shared by exact, leaky and trained models.
//!
//! A denoiser maps a noisy video `x_t`, a conditioning frame `y` and a time
//! `t` to either a clean-video estimate or a noise estimate. The two are
//! related by `x0_hat = (x_t - sigma_t eps_hat) / alpha_t`; implementors supply
//! whichever is native and the other follows from the conversion helpers.

use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;
use crate::video::Video;

pub trait Denoiser: Sync {
    /// `(frames, dim)` of the videos this denoiser accepts.
    fn shape(&self) -> (usize, usize);

    fn predict_x0(&self, xt: &Video, y: &[f64], t: f64, schedule: &NoiseSchedule) -> Result<Video>;

    fn predict_eps(&self, xt: &Video, y: &[f64], t: f64, schedule: &NoiseSchedule) -> Result<Video>;
}

impl<D: Denoiser + ?Sized> Denoiser for &D {
    fn shape(&self) -> (usize, usize) {
        (**self).shape()
    }

    fn predict_x0(&self, xt: &Video, y: &[f64], t: f64, schedule: &NoiseSchedule) -> Result<Video> {
        (**self).predict_x0(xt, y, t, schedule)
    }

    fn predict_eps(&self, xt: &Video, y: &[f64], t: f64, schedule: &NoiseSchedule) -> Result<Video> {
        (**self).predict_eps(xt, y, t, schedule)
    }
}

impl<D: Denoiser + ?Sized> Denoiser for Box<D> {
    fn shape(&self) -> (usize, usize) {
        (**self).shape()
    }

    fn predict_x0(&self, xt: &Video, y: &[f64], t: f64, schedule: &NoiseSchedule) -> Result<Video> {
        (**self).predict_x0(xt, y, t, schedule)
    }

    fn predict_eps(&self, xt: &Video, y: &[f64], t: f64, schedule: &NoiseSchedule) -> Result<Video> {
        (**self).predict_eps(xt, y, t, schedule)
    }
}

/// `eps_hat = (x_t - alpha_t x0_hat) / sigma_t`. Undefined at `t = 0`.
pub fn eps_from_x0(xt: &Video, x0_hat: &Video, t: f64, schedule: &NoiseSchedule) -> Result<Video> {
    let (alpha, sigma) = nonzero_time_coefficients(t, schedule)?;
    Ok(xt.lin_comb(1.0 / sigma, x0_hat, -alpha / sigma))
}

/// One-step clean prediction `x0_hat = (x_t - sigma_t eps_hat) / alpha_t`. Undefined at `t = 0`.
pub fn x0_from_eps(xt: &Video, eps_hat: &Video, t: f64, schedule: &NoiseSchedule) -> Result<Video> {
    let (alpha, sigma) = nonzero_time_coefficients(t, schedule)?;
    Ok(xt.lin_comb(1.0 / alpha, eps_hat, -sigma / alpha))
}

fn nonzero_time_coefficients(t: f64, schedule: &NoiseSchedule) -> Result<(f64, f64)> {
    let (alpha, sigma) = schedule.alpha_sigma(t)?;
    if t <= 0.0 || sigma <= 0.0 {
        return Err(Error::domain("x0/eps conversion is undefined at t = 0"));
    }
    Ok((alpha, sigma))
}

pub(crate) fn check_inputs(shape: (usize, usize), xt: &Video, y: &[f64]) -> Result<()> {
    xt.check_shape(shape.0, shape.1)?;
    if y.len() != shape.1 {
        return Err(Error::Shape {
            expected: format!("{}-dim conditioning frame", shape.1),
            got: format!("{}-dim frame", y.len()),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn conversions_are_inverse() {
        let mut rng = seeded(0);
        for schedule in [NoiseSchedule::vp_default(), NoiseSchedule::ve_default()] {
            let xt = Video::standard_normal(3, 2, &mut rng);
            let x0 = Video::standard_normal(3, 2, &mut rng);
            for t in [0.05, 0.5, 0.95] {
                let eps = eps_from_x0(&xt, &x0, t, &schedule).unwrap();
                let back = x0_from_eps(&xt, &eps, t, &schedule).unwrap();
                let scale = 1.0 + xt.as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs())) / schedule.alpha(t);
                assert!(back.max_abs_diff(&x0) < 1e-12 * scale * 10.0);
            }
        }
    }

    #[test]
    fn exact_noise_recovers_clean_video() {
        let schedule = NoiseSchedule::vp_default();
        let mut rng = seeded(2);
        let x0 = Video::standard_normal(2, 2, &mut rng);
        let (xt, eps) = schedule.perturb(&x0, 0.6, &mut rng).unwrap();
        let x0_hat = x0_from_eps(&xt, &eps, 0.6, &schedule).unwrap();
        assert!(x0_hat.max_abs_diff(&x0) < 1e-12);
    }

    #[test]
    fn ve_conversion_has_unit_alpha() {
        let schedule = NoiseSchedule::ve_default();
        let xt = Video::from_flat(1, 1, vec![5.0]).unwrap();
        let x0 = Video::from_flat(1, 1, vec![1.0]).unwrap();
        let eps = eps_from_x0(&xt, &x0, 0.5, &schedule).unwrap();
        assert!((eps[(0, 0)] - 4.0 / schedule.sigma(0.5)).abs() < 1e-15);
    }

    #[test]
    fn zero_time_is_rejected() {
        let schedule = NoiseSchedule::vp_default();
        let v = Video::zeros(1, 1);
        assert!(matches!(eps_from_x0(&v, &v, 0.0, &schedule), Err(Error::Domain(_))));
        assert!(matches!(x0_from_eps(&v, &v, 0.0, &schedule), Err(Error::Domain(_))));
    }
}
