use std::path::{Path, PathBuf};

use leaklab::analytic_init::{check_world, estimate_moments, optimal_init, OptimalityReport, PerturbationGrid};
use leaklab::diagnostics::{
    ablation_table, eval_set, init_ablation, leakage_curve, motion_score, motion_sweep, sweep_table, AblationSpec, SweepModel,
};
use leaklab::report::{read_videos, videos_table};
use leaklab::rng::stream;
use leaklab::sampler::{draw_conditions, sample_chains, InitKind, InitMode, SamplerConfig};
use leaklab::train::train;
use leaklab::{Checkpoint, DataMoments, Denoiser, ExactDenoiser, ExperimentConfig, InitDistribution, LeakyDenoiser, MlpDenoiser};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::args::{Cli, Command, ConfigArg, DiagnoseKind};
use crate::output::{out_path, read, sibling, write, write_json, write_manifest, Failure};

/// Contents of an `estimate-init` output.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InitFile {
    moments: DataMoments,
    init: InitDistribution,
}

#[derive(Debug, Serialize)]
struct OptimalityFile {
    passed: bool,
    reports: Vec<OptimalityReport>,
}

#[derive(Debug, Serialize)]
struct SampleSummary {
    n: usize,
    mean_motion: f64,
    motion_std: f64,
    config: SamplerConfig,
}

pub fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::WorldSample { config, n, out } => world_sample(&load(&config)?, n, out),
        Command::EstimateInit { config, data, m, out } => estimate_init(&load(&config)?, &data, m, out),
        Command::Prop1Check { config, out } => prop1_check(&load(&config)?, out),
        Command::Train { config, mode, out } => train_cmd(&load(&config)?, &mode, out),
        Command::Sample {
            config,
            denoiser,
            init,
            m,
            steps,
            n,
            out,
        } => sample_cmd(&load(&config)?, &denoiser, init.as_deref(), m, steps, n, out),
        Command::Diagnose {
            kind,
            config,
            denoiser,
            out,
        } => diagnose(&load(&config)?, kind, &denoiser, out),
    }
}

fn load(arg: &ConfigArg) -> Result<ExperimentConfig, Failure> {
    match &arg.config {
        Some(path) => Ok(ExperimentConfig::from_json(&read(path)?)?),
        None => Ok(ExperimentConfig::default()),
    }
}

fn world_sample(config: &ExperimentConfig, n: usize, out: Option<PathBuf>) -> Result<(), Failure> {
    if n == 0 {
        return Err(Failure::config("--n must be >= 1"));
    }
    let out = out_path(config, out, "world.csv");
    let mut rng = stream(config.seed, 0);
    let videos: Vec<_> = (0..n).map(|_| config.world.sample_video(&mut rng)).collect();
    write(&out, &videos_table(&videos).to_csv())?;
    write_manifest(&out, "world-sample", config, json!({ "n": n }), &[&out])
}

fn estimate_init(config: &ExperimentConfig, data: &Path, m: f64, out: Option<PathBuf>) -> Result<(), Failure> {
    let out = out_path(config, out, "init.json");
    let videos = read_videos(read(data)?.as_bytes(), config.world.frames, config.world.dim)?;
    let moments = estimate_moments(&videos)?;
    let init = optimal_init(&moments, &config.schedule, m)?;
    write_json(&out, &InitFile { moments, init })?;
    write_manifest(
        &out,
        "estimate-init",
        config,
        json!({ "data": data.display().to_string(), "start_time": m }),
        &[&out],
    )
}

fn prop1_check(config: &ExperimentConfig, out: Option<PathBuf>) -> Result<(), Failure> {
    let out = out_path(config, out, "prop1-report.json");
    let grid = PerturbationGrid::standard();
    let reports = config
        .diagnostics
        .optimality_start_times
        .iter()
        .map(|&m| check_world(&config.world, &config.schedule, m, &grid))
        .collect::<leaklab::Result<Vec<_>>>()?;
    let passed = reports.iter().all(|r| r.passed);
    write_json(&out, &OptimalityFile { passed, reports })?;
    write_manifest(&out, "prop1-check", config, json!({ "passed": passed }), &[&out])?;
    if passed {
        Ok(())
    } else {
        Err(Failure::acceptance(format!("optimality check failed; see {}", out.display())))
    }
}

fn train_cmd(config: &ExperimentConfig, mode: &str, out: Option<PathBuf>) -> Result<(), Failure> {
    let train_config = config.train_config(mode)?;
    let out = out_path(config, out, &format!("checkpoint-{mode}.json"));
    let ckpt = train(&config.world, &config.schedule, &train_config)?;
    write(&out, &(ckpt.to_json() + "\n"))?;
    println!(
        "{}",
        json!({ "mode": mode, "initial_loss": ckpt.initial_loss, "final_loss": ckpt.final_loss })
    );
    write_manifest(
        &out,
        "train",
        config,
        json!({ "mode": mode, "initial_loss": ckpt.initial_loss, "final_loss": ckpt.final_loss }),
        &[&out],
    )
}

fn load_checkpoint(config: &ExperimentConfig, path: &Path) -> Result<MlpDenoiser, Failure> {
    let ckpt = Checkpoint::from_json(&read(path)?)?;
    let den = ckpt.denoiser()?;
    if den.shape() != config.world.shape() {
        return Err(Failure::config(format!(
            "checkpoint video shape {:?} differs from the configured world {:?}",
            den.shape(),
            config.world.shape()
        )));
    }
    if den.is_motion_conditioned() {
        return Ok(den.with_motion_target(config.world.expected_motion())?);
    }
    Ok(den)
}

enum DenoiserChoice {
    Exact,
    Leaky,
    Checkpoint(MlpDenoiser),
}

fn parse_denoiser(config: &ExperimentConfig, spec: &str) -> Result<DenoiserChoice, Failure> {
    match spec {
        "exact" => Ok(DenoiserChoice::Exact),
        "leaky" => Ok(DenoiserChoice::Leaky),
        _ => match spec.strip_prefix("ckpt:") {
            Some(path) => Ok(DenoiserChoice::Checkpoint(load_checkpoint(config, Path::new(path))?)),
            None => Err(Failure::config(format!(
                "unknown denoiser {spec:?}; expected exact, leaky or ckpt:PATH"
            ))),
        },
    }
}

fn build_denoiser(config: &ExperimentConfig, choice: DenoiserChoice) -> Result<Box<dyn Denoiser>, Failure> {
    Ok(match choice {
        DenoiserChoice::Exact => Box::new(ExactDenoiser::conditional(&config.world)),
        DenoiserChoice::Leaky => Box::new(LeakyDenoiser::new(&config.world, config.leaky.lambda_max, config.leaky.power)?),
        DenoiserChoice::Checkpoint(den) => Box::new(den),
    })
}

fn parse_init(config: &ExperimentConfig, spec: Option<&str>, m: f64) -> Result<InitMode, Failure> {
    match spec {
        None => Ok(config.sampler.init.resolve(&config.world, &config.schedule, m)?),
        Some("standard") => Ok(InitMode::Standard),
        Some(other) => match other.strip_prefix("analytic:") {
            Some(path) => {
                let file: InitFile =
                    serde_json::from_str(&read(Path::new(path))?).map_err(|e| Failure::config(format!("{path}: {e}")))?;
                Ok(InitMode::Analytic { init: file.init })
            }
            None => Err(Failure::config(format!(
                "unknown init {other:?}; expected standard or analytic:PATH"
            ))),
        },
    }
}

fn sample_cmd(
    config: &ExperimentConfig,
    denoiser: &str,
    init: Option<&str>,
    m: Option<f64>,
    steps: Option<usize>,
    n: usize,
    out: Option<PathBuf>,
) -> Result<(), Failure> {
    if n == 0 {
        return Err(Failure::config("--n must be >= 1"));
    }
    let start_time = m.unwrap_or(config.sampler.start_time);
    let sampler = SamplerConfig {
        start_time,
        steps: steps.unwrap_or(config.sampler.steps),
        init: parse_init(config, init, start_time)?,
        inference_condition: config.sampler.inference_condition,
    };
    sampler.validate()?;
    let den = build_denoiser(config, parse_denoiser(config, denoiser)?)?;
    let out = out_path(config, out, "samples.csv");
    let y0s = draw_conditions(&config.world, 0, n, &mut stream(config.seed, 1));
    let samples = sample_chains(den.as_ref(), &y0s, &sampler, &config.schedule, config.seed)?;
    let scores = samples.iter().map(motion_score).collect::<leaklab::Result<Vec<_>>>()?;
    let mean = scores.iter().sum::<f64>() / n as f64;
    let var = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n as f64;
    write(&out, &videos_table(&samples).to_csv())?;
    let summary_path = sibling(&out, "summary.json");
    let summary = SampleSummary {
        n,
        mean_motion: mean,
        motion_std: var.sqrt(),
        config: sampler,
    };
    write_json(&summary_path, &summary)?;
    write_manifest(
        &out,
        "sample",
        config,
        json!({ "denoiser": denoiser, "sampler": summary.config }),
        &[&out, &summary_path],
    )
}

fn diagnose(config: &ExperimentConfig, kind: DiagnoseKind, denoiser: &str, out: Option<PathBuf>) -> Result<(), Failure> {
    let out = out_path(config, out, &format!("{}.csv", kind.name()));
    let choice = parse_denoiser(config, denoiser)?;
    let d = &config.diagnostics;
    let table = match kind {
        DiagnoseKind::Leakage => {
            let den = build_denoiser(config, choice)?;
            let items = eval_set(&config.world, d.eval_items, config.seed);
            leakage_curve(den.as_ref(), &items, &config.schedule, &d.t_grid, config.seed)?.table()
        }
        DiagnoseKind::MotionSweep => {
            let model = match &choice {
                DenoiserChoice::Exact => SweepModel::Exact,
                DenoiserChoice::Leaky => SweepModel::Leaky {
                    lambda_max: config.leaky.lambda_max,
                    power: config.leaky.power,
                },
                DenoiserChoice::Checkpoint(den) if den.is_motion_conditioned() => SweepModel::Conditioned(den),
                DenoiserChoice::Checkpoint(den) => SweepModel::Unconditioned(den),
            };
            let rows = motion_sweep(
                &config.world,
                &config.schedule,
                model,
                &d.motion_targets,
                &config.sampler,
                d.sweep_samples,
                config.seed,
            )?;
            sweep_table(&rows)
        }
        DiagnoseKind::InitAblation => {
            let den = build_denoiser(config, choice)?;
            let spec = AblationSpec {
                start_times: &d.ablation_start_times,
                inits: &[InitKind::Standard, InitKind::Analytic],
                steps: config.sampler.steps,
                inference_condition: config.sampler.inference_condition,
                n: d.ablation_samples,
                seed: config.seed,
            };
            ablation_table(&init_ablation(&config.world, &config.schedule, den.as_ref(), &spec)?)
        }
    };
    write(&out, &table.to_csv())?;
    write_manifest(&out, kind.name(), config, json!({ "denoiser": denoiser }), &[&out])
}
