//! Epsilon-prediction training of a small MLP denoiser on a Gaussian world.
//!
//! Every step draws a fresh batch from the world, a time per item, corrupts
//! the conditioning frame according to the training mode, perturbs the video
//! and takes one adaptive-moment step on the mean squared noise error.
//!
//! Modes:
//! * `Naive`: clean conditioning frame.
//! * `TimeNoise`: level drawn from the time-dependent logit-normal law.
//! * `CdmFixed`: one fixed level at every time.
//! * `ConstantBeta`: deterministic level `beta_m (mu(t) + 1) / 2`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::denoiser::{check_inputs, x0_from_eps, Denoiser};
use crate::error::{Error, Result};
use crate::nn::{Adam, Mlp, Tape};
use crate::rng::{stream, LabRng};
use crate::schedule::NoiseSchedule;
use crate::timenoise::{add_scaled_noise, Condition, TimeNoiseParams};
use crate::video::Video;
use crate::world::GaussianWorld;

/// Training times are drawn from `[MIN_TRAIN_TIME, 1]`.
pub const MIN_TRAIN_TIME: f64 = 1e-4;
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrainMode {
    Naive,
    TimeNoise { params: TimeNoiseParams },
    CdmFixed { beta: f64 },
    ConstantBeta { params: TimeNoiseParams },
}

impl TrainMode {
    pub fn name(&self) -> &'static str {
        match self {
            TrainMode::Naive => "naive",
            TrainMode::TimeNoise { .. } => "timenoise",
            TrainMode::CdmFixed { .. } => "cdm",
            TrainMode::ConstantBeta { .. } => "constant",
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            TrainMode::Naive => Ok(()),
            TrainMode::TimeNoise { params } | TrainMode::ConstantBeta { params } => params.validate(),
            TrainMode::CdmFixed { beta } => {
                if beta.is_finite() && *beta >= 0.0 {
                    Ok(())
                } else {
                    Err(Error::config(format!("fixed conditioning noise must be >= 0, got {beta}")))
                }
            }
        }
    }

    /// Corrupts `y0` at time `t`; `forced` overrides the sampled level.
    fn corrupt(&self, y0: &[f64], t: f64, forced: Option<f64>, rng: &mut LabRng) -> Condition {
        match self {
            TrainMode::Naive => Condition::clean(y0),
            TrainMode::TimeNoise { params } => {
                let beta = forced.unwrap_or_else(|| params.sample_beta(t, rng));
                params.corrupt_with_level(y0, beta, rng)
            }
            TrainMode::CdmFixed { beta } => add_scaled_noise(y0, 1.0, forced.unwrap_or(*beta), rng),
            TrainMode::ConstantBeta { params } => {
                params.corrupt_with_level(y0, forced.unwrap_or_else(|| params.constant_beta(t)), rng)
            }
        }
    }
}

/// Law of training times.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TimeSampler {
    /// `t ~ U(MIN_TRAIN_TIME, 1)`.
    #[default]
    Uniform,
    /// `ln(sigma/alpha) ~ N(p_mean, p_std^2)`, mapped to `t` through the schedule.
    EdmLogNormal { p_mean: f64, p_std: f64 },
}

impl TimeSampler {
    pub fn sample<R: Rng + ?Sized>(&self, schedule: &NoiseSchedule, rng: &mut R) -> f64 {
        match *self {
            TimeSampler::Uniform => MIN_TRAIN_TIME + (1.0 - MIN_TRAIN_TIME) * rng.random::<f64>(),
            TimeSampler::EdmLogNormal { p_mean, p_std } => {
                let z: f64 = rng.sample(StandardNormal);
                let ratio = (p_mean + p_std * z).exp();
                schedule.time_for_noise_to_signal(ratio).clamp(MIN_TRAIN_TIME, 1.0)
            }
        }
    }
}

/// Optional scalar motion target appended to the network input.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MotionConditioning {
    #[default]
    Off,
    /// Every training item carries the same target.
    Fixed { value: f64 },
    /// Each item comes from the world with `s_w ~ U(s_w_min, s_w_max)` and
    /// carries that world's expected motion score.
    Varied { s_w_min: f64, s_w_max: f64 },
}

impl MotionConditioning {
    pub fn enabled(&self) -> bool {
        !matches!(self, MotionConditioning::Off)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    #[serde(default)]
    pub t_sampler: TimeSampler,
    pub hidden: usize,
    pub time_features: usize,
    #[serde(default)]
    pub motion: MotionConditioning,
    pub heldout_size: usize,
    /// Data scale assumed by the output preconditioning.
    #[serde(default = "default_sigma_data")]
    pub sigma_data: f64,
}

fn default_sigma_data() -> f64 {
    1.0
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::Naive,
            steps: 20_000,
            batch_size: 64,
            learning_rate: 1e-3,
            seed: 0,
            t_sampler: TimeSampler::Uniform,
            hidden: 64,
            time_features: 7,
            motion: MotionConditioning::Off,
            heldout_size: 512,
            sigma_data: 1.0,
        }
    }
}

impl TrainConfig {
    /// Checks everything except the step count; `steps = 0` is a valid no-op run.
    pub fn validate(&self) -> Result<()> {
        self.mode.validate()?;
        if self.batch_size == 0 || self.heldout_size == 0 {
            return Err(Error::config("batch_size and heldout_size must be >= 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config(format!("learning rate must be > 0, got {}", self.learning_rate)));
        }
        if !(self.sigma_data.is_finite() && self.sigma_data > 0.0) {
            return Err(Error::config(format!("sigma_data must be > 0, got {}", self.sigma_data)));
        }
        if self.hidden == 0 {
            return Err(Error::config("hidden width must be >= 1"));
        }
        if self.time_features == 0 || self.time_features.is_multiple_of(2) {
            return Err(Error::config(format!(
                "time_features must be odd ([t, sin, cos pairs]), got {}",
                self.time_features
            )));
        }
        if let TimeSampler::EdmLogNormal { p_mean, p_std } = self.t_sampler {
            if !(p_mean.is_finite() && p_std.is_finite() && p_std > 0.0) {
                return Err(Error::config("EDM sampler needs finite p_mean and p_std > 0"));
            }
        }
        match self.motion {
            MotionConditioning::Off => {}
            MotionConditioning::Fixed { value } if value.is_finite() => {}
            MotionConditioning::Varied { s_w_min, s_w_max } if s_w_min > 0.0 && s_w_max >= s_w_min => {}
            _ => return Err(Error::config("invalid motion conditioning")),
        }
        Ok(())
    }
}

/// Layout of the network input and the map from network output to noise.
///
/// Input: `[c_in x_t, y, t, sin(2 pi k t), cos(2 pi k t) (k = 1..), motion?]`.
/// The raw output `F` is read as a preconditioned clean-video estimate
/// `x0_hat = c_skip x_t / alpha + c_out F` with `r = sigma / alpha`,
/// `c_skip = s_d^2 / (s_d^2 + r^2)`, `c_out = r s_d / sqrt(s_d^2 + r^2)`,
/// `c_in = 1 / sqrt(alpha^2 s_d^2 + sigma^2)`, and converted to the noise
/// estimate `eps_hat = a x_t + b F`. Without the skip path, an error in a raw
/// noise output would reach `x0_hat` multiplied by `r`, which is ~100 near
/// `t = 1` under VP.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureMap {
    pub frames: usize,
    pub dim: usize,
    pub time_features: usize,
    pub motion: bool,
    pub sigma_data: f64,
}

/// Per-time scalings of a [`FeatureMap`]: `eps_hat = a x_t + b F`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scalings {
    pub c_in: f64,
    pub a: f64,
    pub b: f64,
}

impl FeatureMap {
    pub fn input_dim(&self) -> usize {
        self.frames * self.dim + self.dim + self.time_features + usize::from(self.motion)
    }

    pub fn output_dim(&self) -> usize {
        self.frames * self.dim
    }

    pub fn scalings(&self, schedule: &NoiseSchedule, t: f64) -> Scalings {
        let (alpha, sigma) = schedule.coefficients(t);
        let sd2 = self.sigma_data * self.sigma_data;
        let c_in = 1.0 / (alpha * alpha * sd2 + sigma * sigma).sqrt();
        if sigma == 0.0 {
            return Scalings { c_in, a: 0.0, b: -1.0 };
        }
        let r = sigma / alpha;
        let denom = sd2 + r * r;
        Scalings {
            c_in,
            a: r * r / (denom * sigma),
            b: -self.sigma_data / denom.sqrt(),
        }
    }

    pub fn fill(&self, xt: &Video, y: &[f64], t: f64, motion: Option<f64>, schedule: &NoiseSchedule, out: &mut Vec<f64>) {
        let c_in = self.scalings(schedule, t).c_in;
        out.clear();
        out.extend(xt.as_slice().iter().map(|v| c_in * v));
        out.extend_from_slice(y);
        out.push(t);
        for k in 1..=(self.time_features - 1) / 2 {
            let arg = 2.0 * std::f64::consts::PI * k as f64 * t;
            out.push(arg.sin());
            out.push(arg.cos());
        }
        if self.motion {
            out.push(motion.unwrap_or(0.0));
        }
    }
}

/// Anything that maps an input feature vector to a raw output `F` (see
/// [`FeatureMap`]) and can backpropagate through that map.
pub trait EpsModel {
    fn num_params(&self) -> usize;
    fn forward_into(&self, input: &[f64], tape: &mut Tape, out: &mut Vec<f64>);
    fn backward_into(&self, tape: &mut Tape, d_out: &[f64], grad: &mut [f64]);
}

impl EpsModel for Mlp {
    fn num_params(&self) -> usize {
        Mlp::num_params(self)
    }

    fn forward_into(&self, input: &[f64], tape: &mut Tape, out: &mut Vec<f64>) {
        let y = self.forward(input, tape);
        out.clear();
        out.extend_from_slice(y);
    }

    fn backward_into(&self, tape: &mut Tape, d_out: &[f64], grad: &mut [f64]) {
        self.backward(tape, d_out, grad);
    }
}

/// One training pair: clean video, its conditioning frame and optional motion target.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainItem {
    pub x0: Video,
    pub y0: Vec<f64>,
    pub motion: Option<f64>,
}

/// Draws `n` training items from `world` under the configured motion conditioning.
pub fn draw_items<R: Rng + ?Sized>(world: &GaussianWorld, motion: &MotionConditioning, n: usize, rng: &mut R) -> Vec<TrainItem> {
    (0..n)
        .map(|_| {
            let (x0, target) = match *motion {
                MotionConditioning::Off => (world.sample_video(rng), None),
                MotionConditioning::Fixed { value } => (world.sample_video(rng), Some(value)),
                MotionConditioning::Varied { s_w_min, s_w_max } => {
                    let s_w = s_w_min + (s_w_max - s_w_min) * rng.random::<f64>();
                    let w = world.with_step_std(s_w);
                    (w.sample_video(rng), Some(w.expected_motion()))
                }
            };
            let j = world.condition_index(rng);
            TrainItem {
                y0: x0.frame(j).to_vec(),
                x0,
                motion: target,
            }
        })
        .collect()
}

/// Network input and regression target for one item.
struct Example {
    input: Vec<f64>,
    xt: Vec<f64>,
    scalings: Scalings,
    eps: Vec<f64>,
}

fn make_example(
    item: &TrainItem,
    features: &FeatureMap,
    schedule: &NoiseSchedule,
    config: &TrainConfig,
    forced_level: Option<f64>,
    main: &mut LabRng,
    cond: &mut LabRng,
) -> Result<Example> {
    let t = config.t_sampler.sample(schedule, main);
    let c = config.mode.corrupt(&item.y0, t, forced_level, cond);
    let (xt, eps) = schedule.perturb(&item.x0, t, main)?;
    let mut input = Vec::with_capacity(features.input_dim());
    features.fill(&xt, &c.y, t, item.motion, schedule, &mut input);
    Ok(Example {
        input,
        xt: xt.into_vec(),
        scalings: features.scalings(schedule, t),
        eps: eps.into_vec(),
    })
}

pub fn feature_map(world: &GaussianWorld, config: &TrainConfig) -> FeatureMap {
    FeatureMap {
        frames: world.frames,
        dim: world.dim,
        time_features: config.time_features,
        motion: config.motion.enabled(),
        sigma_data: config.sigma_data,
    }
}

/// Mean squared noise error over the batch and its gradient.
///
/// Per-item randomness (time, video noise) and conditioning noise come from
/// separate streams derived from one draw of `rng`, so modes that differ only
/// in how they corrupt the frame see identical times and video noise.
pub fn loss_and_gradient<M: EpsModel, R: Rng + ?Sized>(
    model: &M,
    batch: &[TrainItem],
    features: &FeatureMap,
    schedule: &NoiseSchedule,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<(f64, Vec<f64>)> {
    loss_and_gradient_forced(model, batch, features, schedule, config, None, rng)
}

pub(crate) fn loss_and_gradient_forced<M: EpsModel, R: Rng + ?Sized>(
    model: &M,
    batch: &[TrainItem],
    features: &FeatureMap,
    schedule: &NoiseSchedule,
    config: &TrainConfig,
    forced_level: Option<f64>,
    rng: &mut R,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let base: u64 = rng.random();
    let scale = 1.0 / (batch.len() * features.output_dim()) as f64;
    let mut grad = vec![0.0; model.num_params()];
    let mut tape = Tape::default();
    let mut out = Vec::new();
    let mut d_out = Vec::new();
    let mut loss = 0.0;
    for (i, item) in batch.iter().enumerate() {
        let mut main = stream(base, 2 * i as u64);
        let mut cond = stream(base, 2 * i as u64 + 1);
        let ex = make_example(item, features, schedule, config, forced_level, &mut main, &mut cond)?;
        model.forward_into(&ex.input, &mut tape, &mut out);
        let Scalings { a, b, .. } = ex.scalings;
        d_out.clear();
        for ((o, x), e) in out.iter().zip(&ex.xt).zip(&ex.eps) {
            let r = a * x + b * o - e;
            loss += r * r;
            d_out.push(2.0 * r * scale * b);
        }
        model.backward_into(&mut tape, &d_out, &mut grad);
    }
    Ok((loss * scale, grad))
}

/// Separates the held-out example streams from the training streams.
const HELDOUT_SALT: u64 = 0x05ee_d0f0_be1d;

/// Loss-only evaluation on a frozen set of examples.
struct HeldOut {
    examples: Vec<Example>,
}

impl HeldOut {
    fn build(world: &GaussianWorld, schedule: &NoiseSchedule, config: &TrainConfig, features: &FeatureMap, seed: u64) -> Result<Self> {
        let mut rng = stream(seed, 1);
        let items = draw_items(world, &config.motion, config.heldout_size, &mut rng);
        let mut examples = Vec::with_capacity(items.len());
        for (i, item) in items.iter().enumerate() {
            let mut main = stream(seed ^ HELDOUT_SALT, 2 * i as u64);
            let mut cond = stream(seed ^ HELDOUT_SALT, 2 * i as u64 + 1);
            examples.push(make_example(item, features, schedule, config, None, &mut main, &mut cond)?);
        }
        Ok(HeldOut { examples })
    }

    fn loss(&self, mlp: &Mlp) -> f64 {
        let mut tape = Tape::default();
        let mut total = 0.0;
        let mut count = 0usize;
        for ex in &self.examples {
            let out = mlp.forward(&ex.input, &mut tape);
            let Scalings { a, b, .. } = ex.scalings;
            total += out
                .iter()
                .zip(&ex.xt)
                .zip(&ex.eps)
                .map(|((o, x), e)| (a * x + b * o - e).powi(2))
                .sum::<f64>();
            count += ex.eps.len();
        }
        total / count as f64
    }
}

/// Everything needed to rebuild a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointConfig {
    pub world: GaussianWorld,
    pub schedule: NoiseSchedule,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: CheckpointConfig,
    pub seed: u64,
    pub layer_shapes: Vec<[usize; 2]>,
    pub parameters: Vec<f64>,
    pub initial_loss: f64,
    pub final_loss: f64,
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(text).map_err(|e| Error::config(format!("bad checkpoint: {e}")))?;
        if ckpt.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::config(format!(
                "unsupported checkpoint format {}",
                ckpt.format_version
            )));
        }
        ckpt.mlp()?;
        Ok(ckpt)
    }

    pub fn mlp(&self) -> Result<Mlp> {
        let shapes = self.layer_shapes.iter().map(|s| (s[0], s[1])).collect();
        Mlp::from_parts(shapes, self.parameters.clone())
    }

    pub fn denoiser(&self) -> Result<MlpDenoiser> {
        let features = feature_map(&self.config.world, &self.config.train);
        let mlp = self.mlp()?;
        if mlp.input_dim() != features.input_dim() || mlp.output_dim() != features.output_dim() {
            return Err(Error::config("checkpoint layer shapes disagree with its config"));
        }
        Ok(MlpDenoiser {
            features,
            mlp,
            motion_target: None,
        })
    }
}

/// Runs `config.steps` optimizer updates from a seeded initialization.
pub fn train(world: &GaussianWorld, schedule: &NoiseSchedule, config: &TrainConfig) -> Result<Checkpoint> {
    train_with_progress(world, schedule, config, |_, _| {})
}

/// [`train`] with a callback receiving `(step, batch_loss)` after every update.
pub fn train_with_progress<F: FnMut(usize, f64)>(
    world: &GaussianWorld,
    schedule: &NoiseSchedule,
    config: &TrainConfig,
    mut progress: F,
) -> Result<Checkpoint> {
    world.validate()?;
    schedule.validate()?;
    config.validate()?;
    let features = feature_map(world, config);
    let sizes = [features.input_dim(), config.hidden, config.hidden, features.output_dim()];
    let mut mlp = Mlp::init(&sizes, &mut stream(config.seed, 2));
    let heldout = HeldOut::build(world, schedule, config, &features, config.seed)?;
    let initial_loss = heldout.loss(&mlp);
    let mut opt = Adam::new(mlp.num_params(), config.learning_rate);
    let mut rng = stream(config.seed, 0);
    for step in 0..config.steps {
        let batch = draw_items(world, &config.motion, config.batch_size, &mut rng);
        let (loss, grad) = loss_and_gradient(&mlp, &batch, &features, schedule, config, &mut rng)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::TrainingDiverged { step, loss });
        }
        opt.update(mlp.params_mut(), &grad);
        progress(step, loss);
    }
    let final_loss = heldout.loss(&mlp);
    if !final_loss.is_finite() {
        return Err(Error::TrainingDiverged {
            step: config.steps,
            loss: final_loss,
        });
    }
    Ok(Checkpoint {
        format_version: CHECKPOINT_FORMAT_VERSION,
        config: CheckpointConfig {
            world: world.clone(),
            schedule: *schedule,
            train: config.clone(),
        },
        seed: config.seed,
        layer_shapes: mlp.shapes().iter().map(|&(o, i)| [o, i]).collect(),
        parameters: mlp.params().to_vec(),
        initial_loss,
        final_loss,
    })
}

/// A trained network used as a [`Denoiser`].
#[derive(Debug, Clone)]
pub struct MlpDenoiser {
    features: FeatureMap,
    mlp: Mlp,
    motion_target: Option<f64>,
}

impl MlpDenoiser {
    pub fn new(features: FeatureMap, mlp: Mlp) -> Result<Self> {
        if mlp.input_dim() != features.input_dim() || mlp.output_dim() != features.output_dim() {
            return Err(Error::config("network shape does not match feature layout"));
        }
        Ok(MlpDenoiser {
            features,
            mlp,
            motion_target: None,
        })
    }

    pub fn is_motion_conditioned(&self) -> bool {
        self.features.motion
    }

    /// Sets the motion target fed to a motion-conditioned network.
    pub fn with_motion_target(mut self, target: f64) -> Result<Self> {
        if !self.features.motion {
            return Err(Error::config("network was not trained with motion conditioning"));
        }
        self.motion_target = Some(target);
        Ok(self)
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }
}

impl Denoiser for MlpDenoiser {
    fn shape(&self) -> (usize, usize) {
        (self.features.frames, self.features.dim)
    }

    fn predict_eps(&self, xt: &Video, y: &[f64], t: f64, schedule: &NoiseSchedule) -> Result<Video> {
        check_inputs(self.shape(), xt, y)?;
        crate::schedule::check_time(t)?;
        let mut input = Vec::with_capacity(self.features.input_dim());
        self.features.fill(xt, y, t, self.motion_target, schedule, &mut input);
        let mut tape = Tape::default();
        let Scalings { a, b, .. } = self.features.scalings(schedule, t);
        let out = self.mlp.forward(&input, &mut tape);
        let out = out.iter().zip(xt.as_slice()).map(|(f, x)| a * x + b * f).collect();
        Video::from_flat(xt.frames(), xt.dim(), out).map_err(|_| Error::Decomposition("network produced non-finite output".into()))
    }

    fn predict_x0(&self, xt: &Video, y: &[f64], t: f64, schedule: &NoiseSchedule) -> Result<Video> {
        let eps = self.predict_eps(xt, y, t, schedule)?;
        x0_from_eps(xt, &eps, t, schedule)
    }
}

/// Floor on the denominator of the relative gradient error.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// Largest `|g - fd| / max(|g|, |fd|, GRAD_CHECK_FLOOR)` over all parameters,
/// with `fd` the central difference of the batch loss at step `h`. Every loss
/// evaluation replays the same seed, so all share times, noise and corruption.
pub fn gradient_check(
    mlp: &Mlp,
    batch: &[TrainItem],
    features: &FeatureMap,
    schedule: &NoiseSchedule,
    config: &TrainConfig,
    seed: u64,
    h: f64,
) -> Result<f64> {
    let (_, grad) = loss_and_gradient(mlp, batch, features, schedule, config, &mut stream(seed, 0))?;
    let mut probe = mlp.clone();
    let mut worst: f64 = 0.0;
    for (i, &g) in grad.iter().enumerate() {
        let orig = probe.params()[i];
        probe.params_mut()[i] = orig + h;
        let (plus, _) = loss_and_gradient(&probe, batch, features, schedule, config, &mut stream(seed, 0))?;
        probe.params_mut()[i] = orig - h;
        let (minus, _) = loss_and_gradient(&probe, batch, features, schedule, config, &mut stream(seed, 0))?;
        probe.params_mut()[i] = orig;
        let fd = (plus - minus) / (2.0 * h);
        let denom = g.abs().max(fd.abs()).max(GRAD_CHECK_FLOOR);
        worst = worst.max((g - fd).abs() / denom);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use crate::world::CondFrame;

    fn tiny_world() -> GaussianWorld {
        GaussianWorld {
            frames: 3,
            dim: 2,
            m0: vec![0.0, 0.5],
            s0: 1.0,
            drift: vec![0.2, -0.1],
            s_w: 0.5,
            cond_frame: CondFrame::First,
        }
    }

    fn tiny_config(mode: TrainMode) -> TrainConfig {
        TrainConfig {
            mode,
            steps: 50,
            batch_size: 8,
            hidden: 14,
            time_features: 3,
            heldout_size: 16,
            ..TrainConfig::default()
        }
    }

    /// Knows the clean video of a deterministic world and returns the raw
    /// output that reproduces the exact noise.
    struct OracleEps {
        x0: Vec<f64>,
        schedule: NoiseSchedule,
        features: FeatureMap,
    }

    impl EpsModel for OracleEps {
        fn num_params(&self) -> usize {
            0
        }

        fn forward_into(&self, input: &[f64], _tape: &mut Tape, out: &mut Vec<f64>) {
            let n = self.x0.len();
            let t = input[n + 1]; // one conditioning coordinate precedes t
            let (alpha, sigma) = self.schedule.coefficients(t);
            let Scalings { c_in, a, b } = self.features.scalings(&self.schedule, t);
            out.clear();
            out.extend(input[..n].iter().zip(&self.x0).map(|(u, x0)| {
                let xt = u / c_in;
                ((xt - alpha * x0) / sigma - a * xt) / b
            }));
        }

        fn backward_into(&self, _tape: &mut Tape, _d_out: &[f64], _grad: &mut [f64]) {}
    }

    #[test]
    fn feature_layout() {
        let f = FeatureMap {
            frames: 2,
            dim: 1,
            time_features: 5,
            motion: true,
            sigma_data: 1.0,
        };
        let xt = Video::from_flat(2, 1, vec![1.0, 2.0]).unwrap();
        let mut out = Vec::new();
        f.fill(&xt, &[3.0], 0.25, Some(9.0), &NoiseSchedule::vp_default(), &mut out);
        assert_eq!(out.len(), f.input_dim());
        assert_eq!(&out[..4], &[1.0, 2.0, 3.0, 0.25]);
        assert!((out[4] - 1.0).abs() < 1e-15); // sin(pi / 2)
        assert!(out[5].abs() < 1e-15); // cos(pi / 2)
        assert_eq!(out[8], 9.0);
    }

    #[test]
    fn scalings_match_clean_video_parameterization() {
        let f = FeatureMap {
            frames: 1,
            dim: 1,
            time_features: 1,
            motion: false,
            sigma_data: 0.7,
        };
        for schedule in [NoiseSchedule::vp_default(), NoiseSchedule::ve_default()] {
            for t in [1e-3, 0.2, 0.6, 0.95, 1.0] {
                let (alpha, sigma) = schedule.alpha_sigma(t).unwrap();
                let (xt, raw) = (0.8, -0.3);
                let Scalings { a, b, .. } = f.scalings(&schedule, t);
                let x0_hat = (xt - sigma * (a * xt + b * raw)) / alpha;
                let r = sigma / alpha;
                let sd2 = 0.49;
                let expect = sd2 / (sd2 + r * r) * xt / alpha + r * 0.7 / (sd2 + r * r).sqrt() * raw;
                assert!((x0_hat - expect).abs() < 1e-9 * (1.0 + expect.abs()), "t={t}: {x0_hat} vs {expect}");
            }
        }
    }

    #[test]
    fn oracle_noise_model_has_zero_loss() {
        let world = GaussianWorld {
            frames: 3,
            dim: 1,
            m0: vec![0.5],
            s0: 0.0,
            drift: vec![0.25],
            s_w: 1e-300,
            cond_frame: CondFrame::First,
        };
        let schedule = NoiseSchedule::vp_default();
        let config = TrainConfig {
            time_features: 1,
            ..tiny_config(TrainMode::Naive)
        };
        let features = feature_map(&world, &config);
        let items = draw_items(&world, &config.motion, 8, &mut seeded(0));
        let oracle = OracleEps {
            x0: items[0].x0.as_slice().to_vec(),
            schedule,
            features,
        };
        let (loss, grad) = loss_and_gradient(&oracle, &items, &features, &schedule, &config, &mut seeded(1)).unwrap();
        assert!(loss < 1e-18, "loss {loss}");
        assert!(grad.is_empty());
    }

    #[test]
    fn forced_zero_level_matches_naive() {
        let world = tiny_world();
        let schedule = NoiseSchedule::vp_default();
        let naive = tiny_config(TrainMode::Naive);
        let tn = tiny_config(TrainMode::TimeNoise {
            params: TimeNoiseParams::additive(2.0, 5.0).unwrap(),
        });
        let features = feature_map(&world, &naive);
        let mlp = Mlp::init(&[features.input_dim(), 14, 14, features.output_dim()], &mut seeded(3));
        let items = draw_items(&world, &naive.motion, 8, &mut seeded(4));
        let a = loss_and_gradient(&mlp, &items, &features, &schedule, &naive, &mut seeded(5)).unwrap();
        let b = loss_and_gradient_forced(&mlp, &items, &features, &schedule, &tn, Some(0.0), &mut seeded(5)).unwrap();
        assert_eq!(a, b);
        let c = loss_and_gradient(&mlp, &items, &features, &schedule, &tn, &mut seeded(5)).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let world = tiny_world();
        let schedule = NoiseSchedule::vp_default();
        let config = tiny_config(TrainMode::Naive);
        let features = feature_map(&world, &config);
        let mlp = Mlp::init(&[features.input_dim(), 14, 14, features.output_dim()], &mut seeded(7));
        assert!((400..=600).contains(&mlp.num_params()));
        let items = draw_items(&world, &config.motion, 8, &mut seeded(8));
        let err = gradient_check(&mlp, &items, &features, &schedule, &config, 9, 1e-6).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn zero_steps_returns_initialization_and_runs_are_deterministic() {
        let world = tiny_world();
        let schedule = NoiseSchedule::vp_default();
        let config = TrainConfig {
            steps: 0,
            ..tiny_config(TrainMode::Naive)
        };
        let ckpt = train(&world, &schedule, &config).unwrap();
        let features = feature_map(&world, &config);
        let init = Mlp::init(&[features.input_dim(), 14, 14, features.output_dim()], &mut stream(config.seed, 2));
        assert_eq!(ckpt.parameters, init.params());
        assert_eq!(ckpt.initial_loss, ckpt.final_loss);

        let config = tiny_config(TrainMode::TimeNoise {
            params: TimeNoiseParams::additive(2.0, 5.0).unwrap(),
        });
        let a = train(&world, &schedule, &config).unwrap();
        let b = train(&world, &schedule, &config).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn checkpoint_json_round_trip_is_bit_exact() {
        let world = tiny_world();
        let schedule = NoiseSchedule::ve_default();
        let config = tiny_config(TrainMode::CdmFixed { beta: 0.2 });
        let ckpt = train(&world, &schedule, &config).unwrap();
        let back = Checkpoint::from_json(&ckpt.to_json()).unwrap();
        assert_eq!(back, ckpt);
        for (a, b) in back.parameters.iter().zip(&ckpt.parameters) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert!(Checkpoint::from_json("{}").is_err());
    }

    #[test]
    fn larger_p_mean_pushes_training_times_up() {
        let schedule = NoiseSchedule::vp_default();
        let mut medians = Vec::new();
        for p_mean in [-1.2, 0.0, 1.0] {
            let sampler = TimeSampler::EdmLogNormal { p_mean, p_std: 1.2 };
            let mut rng = seeded(10);
            let mut ts: Vec<f64> = (0..20_001).map(|_| sampler.sample(&schedule, &mut rng)).collect();
            assert!(ts.iter().all(|t| (MIN_TRAIN_TIME..=1.0).contains(t)));
            ts.sort_by(f64::total_cmp);
            medians.push(ts[10_000]);
        }
        assert!(medians[0] < medians[1] && medians[1] < medians[2], "{medians:?}");
    }

    #[test]
    fn timenoise_levels_grow_with_time() {
        let params = TimeNoiseParams::additive(2.0, 5.0).unwrap();
        let mode = TrainMode::TimeNoise { params };
        let mut rng = stream(0, 0);
        let mean_level = |t: f64, rng: &mut LabRng| {
            (0..20_000).map(|_| mode.corrupt(&[0.0], t, None, rng).noise_level_used).sum::<f64>() / 20_000.0
        };
        let low = mean_level(0.1, &mut rng);
        let high = mean_level(0.9, &mut rng);
        assert!(high > low, "{high} <= {low}");
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::default();
        assert!(c.validate().is_ok());
        c.time_features = 4;
        assert!(c.validate().is_err());
        let c = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
        let c = TrainConfig {
            mode: TrainMode::CdmFixed { beta: -1.0 },
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn motion_target_requires_conditioned_network() {
        let world = tiny_world();
        let config = tiny_config(TrainMode::Naive);
        let features = feature_map(&world, &config);
        let mlp = Mlp::init(&[features.input_dim(), 4, 4, features.output_dim()], &mut seeded(1));
        let den = MlpDenoiser::new(features, mlp).unwrap();
        assert!(den.with_motion_target(3.0).is_err());
    }
}
