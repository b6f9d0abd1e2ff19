//! `tmerge` command-line front end.

pub mod commands;
pub mod config;
pub mod error;
pub mod run;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "tmerge", version, about = "Train, evaluate and benchmark T-intersection merging policies")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Config file or built-in preset (`synthetic.preset`, `naturalistic.preset`).
    #[arg(long, global = true, default_value = "synthetic.preset")]
    pub config: String,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Output root; falls back to $TMERGE_OUT_ROOT, then ./runs.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Run directory name under the output root (must not exist).
    #[arg(long, global = true)]
    pub run_name: Option<String>,
    /// Config override `dotted.key=value`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one social baseline policy per configured β̄.
    TrainSocial,
    /// Train the meta-policy against baselines from a `train-social` run.
    TrainMeta {
        /// Directory holding `baselines.json` and `baseline_<i>.policy`.
        #[arg(long)]
        baselines: PathBuf,
    },
    /// Train an ego policy against a meta-policy.
    TrainEgo {
        #[arg(long)]
        meta: PathBuf,
        /// Training distribution literal; defaults to `p0`.
        #[arg(long)]
        training: Option<String>,
        /// Train without importance weights.
        #[arg(long)]
        no_is: bool,
        /// Start from this policy instead of zeros.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Iteration index whose seed stream is used.
        #[arg(long, default_value_t = 1)]
        iteration: usize,
    },
    /// Search a Gaussian evaluation proposal with the cross-entropy method.
    CeOptimize {
        #[arg(long)]
        ego: PathBuf,
        #[arg(long)]
        meta: PathBuf,
        /// Initial mean; defaults to `mu0`.
        #[arg(long, allow_hyphen_values = true)]
        mu0: Option<f64>,
    },
    /// Importance-sampled failure-rate estimate of an ego policy.
    Evaluate {
        #[arg(long)]
        ego: PathBuf,
        #[arg(long)]
        meta: PathBuf,
        /// Proposal literal; defaults to `p_naturalistic`.
        #[arg(long)]
        proposal: Option<String>,
        /// Episodes; defaults to `n_samples`.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Social stage followed by K ego/CE/evaluation rounds.
    Pipeline(SocialSource),
    /// Compare GEP, GIS, NEP and CEIS ego training.
    Benchmarks {
        #[command(flatten)]
        social: SocialSource,
        #[arg(long, value_delimiter = ',', default_value = "GEP,GIS,NEP,CEIS")]
        variants: Vec<String>,
    },
    /// IS-weighted training from a grid of Gaussian proposals.
    Ablation {
        #[command(flatten)]
        social: SocialSource,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "-0.5,0.5,1.5,2.5")]
        means: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0.5,0.75,1.0")]
        sigmas: Vec<f64>,
    },
    /// Kernel density estimate over a β column.
    FitKde {
        #[arg(long)]
        betas: PathBuf,
        /// `auto` (Silverman) or a positive number.
        #[arg(long, default_value = "auto")]
        bandwidth: String,
    },
    /// Maximum-likelihood β per recorded vehicle, plus their KDE.
    EstimateBeta {
        #[arg(long)]
        trajectories: PathBuf,
        #[arg(long)]
        meta: PathBuf,
        #[arg(long, default_value = "auto")]
        bandwidth: String,
    },
}

#[derive(Debug, Clone, Args)]
pub struct SocialSource {
    /// Reuse the social stage of an earlier run (`baselines.json`,
    /// `baseline_<i>.policy`, `meta.policy`) instead of training it.
    #[arg(long)]
    pub social: Option<PathBuf>,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::TrainSocial => "train-social",
            Command::TrainMeta { .. } => "train-meta",
            Command::TrainEgo { .. } => "train-ego",
            Command::CeOptimize { .. } => "ce-optimize",
            Command::Evaluate { .. } => "evaluate",
            Command::Pipeline(_) => "pipeline",
            Command::Benchmarks { .. } => "benchmarks",
            Command::Ablation { .. } => "ablation",
            Command::FitKde { .. } => "fit-kde",
            Command::EstimateBeta { .. } => "estimate-beta",
        }
    }
}

/// Runs a parsed command line; returns the run directory.
pub fn run(cli: Cli, argv: Vec<String>) -> Result<PathBuf> {
    if let Some(n) = cli.global.jobs {
        if n == 0 {
            return Err(CliError::Config("--jobs must be >= 1".into()));
        }
        // Fails only if a pool already exists, e.g. in tests.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    commands::execute(&cli.global, &cli.command, argv)
}
