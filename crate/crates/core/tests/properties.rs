use leaklab::analytic_init::{gaussian_kl, InitDistribution};
use leaklab::diagnostics::motion_score;
use leaklab::rng::seeded;
use leaklab::timenoise::{logit, sigmoid};
use leaklab::{NoiseSchedule, TimeNoiseParams, Video};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn schedule_strategy() -> impl Strategy<Value = NoiseSchedule> {
    prop_oneof![
        (0.01f64..1.0, 20.0f64..30.0).prop_map(|(lo, hi)| NoiseSchedule::vp(lo, hi).unwrap()),
        (1e-3f64..0.1, 50.0f64..1000.0).prop_map(|(lo, hi)| NoiseSchedule::ve(lo, hi).unwrap()),
    ]
}

/// Videos on a dyadic grid, so shifted differences are computed exactly.
fn dyadic_video(frames: usize, dim: usize) -> impl Strategy<Value = Video> {
    prop::collection::vec(-4096i32..4096, frames * dim)
        .prop_map(move |v| Video::from_flat(frames, dim, v.into_iter().map(|x| x as f64 / 64.0).collect()).unwrap())
}

proptest! {
    #[test]
    fn schedules_are_monotone_and_invertible(s in schedule_strategy(), t1 in 0.0f64..1.0, t2 in 0.0f64..1.0) {
        let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
        let (a_lo, s_lo) = s.alpha_sigma(lo).unwrap();
        let (a_hi, s_hi) = s.alpha_sigma(hi).unwrap();
        prop_assert!(a_hi <= a_lo && s_hi >= s_lo);
        prop_assert!(a_hi > 0.0 && a_hi <= 1.0);
        if s.is_vp() {
            prop_assert!((a_hi * a_hi + s_hi * s_hi - 1.0).abs() < 1e-12);
        }
        if hi > 1e-3 {
            let back = s.time_for_noise_to_signal(s.noise_to_signal(hi));
            prop_assert!((back - hi).abs() < 1e-8, "{} -> {}", hi, back);
        }
    }

    #[test]
    fn timenoise_cdf_is_ordered_in_level_and_time(
        beta_m in 0.5f64..200.0,
        a in 0.2f64..6.0,
        t1 in 0.0f64..1.0,
        t2 in 0.0f64..1.0,
        u1 in 0.001f64..0.999,
        u2 in 0.001f64..0.999,
    ) {
        let p = TimeNoiseParams::additive(beta_m, a).unwrap();
        let (b1, b2) = (u1.min(u2) * beta_m, u1.max(u2) * beta_m);
        let (lo, hi) = (t1.min(t2), t1.max(t2));
        prop_assert!(p.cdf(lo, b1) <= p.cdf(lo, b2));
        prop_assert!(p.cdf(hi, b1) <= p.cdf(lo, b1) + 1e-15);
        prop_assert!(p.pdf(lo, b1).unwrap() > 0.0 || p.cdf(lo, b1) < 1e-12 || p.cdf(lo, b1) > 1.0 - 1e-12);
    }

    #[test]
    fn timenoise_draws_stay_in_support(beta_m in 0.5f64..200.0, a in 0.2f64..6.0, t in 0.0f64..1.0, seed in any::<u64>()) {
        let p = TimeNoiseParams::additive(beta_m, a).unwrap();
        let mut rng = seeded(seed);
        for _ in 0..32 {
            let b = p.sample_beta(t, &mut rng);
            prop_assert!(b > 0.0 && b < beta_m);
        }
        prop_assert!(p.constant_beta(t) >= 0.0 && p.constant_beta(t) <= beta_m);
    }

    #[test]
    fn logit_inverts_sigmoid(z in -20.0f64..20.0) {
        prop_assert!((logit(sigmoid(z)) - z).abs() < 1e-6);
    }

    #[test]
    fn motion_is_translation_invariant_and_nonnegative(v in dyadic_video(5, 3), shift in prop::collection::vec(-512i32..512, 3)) {
        let c: Vec<f64> = shift.into_iter().map(|x| x as f64 / 64.0).collect();
        let shifted = v.lin_comb(1.0, &Video::broadcast(&c, 5), 1.0);
        let m = motion_score(&v).unwrap();
        prop_assert!(m >= 0.0);
        prop_assert_eq!(motion_score(&shifted).unwrap(), m);
    }

    #[test]
    fn motion_scales_with_amplitude(v in dyadic_video(4, 2), k in -8i32..8) {
        let lambda = k as f64 / 2.0;
        let m = motion_score(&v).unwrap();
        prop_assert_eq!(motion_score(&v.scaled(lambda)).unwrap(), lambda.abs() * m);
    }

    #[test]
    fn kl_is_nonnegative_and_zero_at_match(
        mean in prop::collection::vec(-3.0f64..3.0, 4),
        diag in prop::collection::vec(0.1f64..4.0, 4),
        s2 in 0.1f64..4.0,
    ) {
        let sigma = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(diag));
        let init = InitDistribution::new(Video::from_flat(2, 2, mean.clone()).unwrap(), s2, 0.9).unwrap();
        prop_assert!(gaussian_kl(&mean, &sigma, &init).unwrap() >= 0.0);
        let iso = DMatrix::from_diagonal_element(4, 4, s2);
        prop_assert!(gaussian_kl(&mean, &iso, &init).unwrap().abs() < 1e-12);
    }

    #[test]
    fn video_json_round_trip_is_exact(v in prop::collection::vec(-1e300f64..1e300, 6)) {
        let video = Video::from_flat(3, 2, v).unwrap();
        let back: Video = serde_json::from_str(&serde_json::to_string(&video).unwrap()).unwrap();
        prop_assert_eq!(back, video);
    }
}
