use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "leaklab", version, about = "Conditional image leakage experiments on a Gaussian toy-video world")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    /// Experiment config (JSON); defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample clean videos from the configured world.
    WorldSample {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate data moments from a CSV dataset and the optimal initialization at M.
    EstimateInit {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        data: PathBuf,
        #[arg(long = "M")]
        m: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check that the closed-form initialization is the KL minimizer on a perturbation grid.
    Prop1Check {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train an epsilon-prediction network.
    Train {
        #[command(flatten)]
        config: ConfigArg,
        /// One of naive, timenoise, cdm, constant.
        #[arg(long)]
        mode: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate videos with the DDIM sampler.
    Sample {
        #[command(flatten)]
        config: ConfigArg,
        /// exact, leaky or ckpt:PATH.
        #[arg(long, default_value = "exact")]
        denoiser: String,
        /// standard or analytic:PATH (an estimate-init output); defaults to the config.
        #[arg(long)]
        init: Option<String>,
        #[arg(long = "M")]
        m: Option<f64>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Leakage curves, motion sweeps and initialization ablations.
    Diagnose {
        kind: DiagnoseKind,
        #[command(flatten)]
        config: ConfigArg,
        /// exact, leaky or ckpt:PATH.
        #[arg(long, default_value = "exact")]
        denoiser: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DiagnoseKind {
    Leakage,
    MotionSweep,
    InitAblation,
}

impl DiagnoseKind {
    pub fn name(self) -> &'static str {
        match self {
            DiagnoseKind::Leakage => "leakage",
            DiagnoseKind::MotionSweep => "motion-sweep",
            DiagnoseKind::InitAblation => "init-ablation",
        }
    }
}
