use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::{load_config, Overrides, Settings};
use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "vasst", version, about = "Variational symbolic regression over soft symbolic trees")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a CSV dataset, then sample and rank hard expressions.
    Fit(FitArgs),
    /// Repeat generate, split, fit and rank on a built-in model.
    Bench(BenchArgs),
}

/// Hyperparameter flags. Each one overrides the matching config-file key.
#[derive(Debug, Clone, Default, Args)]
pub struct RunFlags {
    /// Flat key=value config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub trees: Option<usize>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub mc_samples: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub clip: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub a0: Option<f64>,
    #[arg(long)]
    pub b0: Option<f64>,
    #[arg(long)]
    pub sigma0_scale: Option<f64>,
    #[arg(long)]
    pub tau_start: Option<f64>,
    #[arg(long)]
    pub tau_end: Option<f64>,
    #[arg(long)]
    pub tau_steps: Option<usize>,
    #[arg(long)]
    pub hard_samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated operator names, e.g. add,mul,sin.
    #[arg(long)]
    pub operators: Option<String>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
}

impl RunFlags {
    fn overrides(&self) -> Result<Overrides, CliError> {
        let mut o = Overrides {
            trees: self.trees,
            depth: self.depth,
            steps: self.steps,
            mc_samples: self.mc_samples,
            lr: self.lr,
            clip: self.clip,
            alpha: self.alpha,
            delta: self.delta,
            a0: self.a0,
            b0: self.b0,
            sigma0_scale: self.sigma0_scale,
            tau_start: self.tau_start,
            tau_end: self.tau_end,
            tau_steps: self.tau_steps,
            hard_samples: self.hard_samples,
            seed: self.seed,
            operators: None,
            test_fraction: self.test_fraction,
        };
        if let Some(ops) = &self.operators {
            o.set("operators", ops)?;
        }
        Ok(o)
    }

    /// Defaults, then the config file, then flags.
    pub fn settings(&self, base: Settings) -> Result<Settings, CliError> {
        let file = match &self.config {
            Some(p) => load_config(p)?,
            None => Overrides::default(),
        };
        Ok(Settings::resolve(base, &file.merge(self.overrides()?)))
    }
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    pub data: PathBuf,
    /// JSON report path.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional text file with the top expressions, one per line.
    #[arg(long)]
    pub expressions: Option<PathBuf>,
    /// Optional per-step training trace CSV.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub top_k: usize,
    /// Decimal places for coefficients in rendered expressions.
    #[arg(long, default_value_t = 3)]
    pub decimals: usize,
    /// Record wall-clock seconds in the report (makes it run-dependent).
    #[arg(long)]
    pub timing: bool,
    #[command(flatten)]
    pub run: RunFlags,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    /// sim1, sim2, CL, CPE, FCE or FTC.
    #[arg(long)]
    pub model: String,
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    #[arg(long, default_value_t = 10)]
    pub repeats: usize,
    /// Summary CSV path.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-repeat JSON path; defaults to the summary path with a .json extension.
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// Leave runtimes out of the outputs.
    #[arg(long)]
    pub no_timing: bool,
    #[command(flatten)]
    pub run: RunFlags,
}
