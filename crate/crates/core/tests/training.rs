//! Regression baseline for the default training configuration.

use leaklab::train::{train, TrainConfig};
use leaklab::{GaussianWorld, NoiseSchedule};

/// Held-out losses of the default naive run (seed 0) when this baseline was recorded.
const BASELINE_INITIAL_LOSS: f64 = 0.4246;
const BASELINE_FINAL_LOSS: f64 = 0.1764;

#[test]
fn default_config_halves_heldout_loss() {
    let ckpt = train(&GaussianWorld::default(), &NoiseSchedule::vp_default(), &TrainConfig::default()).unwrap();
    assert!(ckpt.final_loss < 0.5 * ckpt.initial_loss, "{} -> {}", ckpt.initial_loss, ckpt.final_loss);
    assert!((ckpt.initial_loss - BASELINE_INITIAL_LOSS).abs() < 1e-3, "initial {}", ckpt.initial_loss);
    assert!((ckpt.final_loss / BASELINE_FINAL_LOSS - 1.0).abs() < 0.1, "final {}", ckpt.final_loss);
}
