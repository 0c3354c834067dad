//! Command-line options. Every flag has a config-file key of the same
//! (kebab-case) name; values given on the command line win.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct Opts {
    /// TOML file with defaults for any of the options below.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; nothing is written outside it.
    #[arg(long)]
    pub out: Option<PathBuf>,

    // Data.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub target: Option<String>,
    /// Comma-separated categorical columns to one-hot encode.
    #[arg(long, value_delimiter = ',')]
    pub categorical: Option<Vec<String>>,
    /// `regression` or `classification`; defaults from the loss.
    #[arg(long)]
    pub task: Option<String>,
    /// Train/validation/test fractions, e.g. `0.64,0.16,0.2`.
    #[arg(long)]
    pub split: Option<String>,
    /// z-normalise continuous CSV columns with training statistics.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub normalize: Option<bool>,
    /// `sigma=..,p=..,n=..,k=..` with optional `noise=..,n_test=..`.
    #[arg(long)]
    pub synthetic: Option<String>,
    /// Model file for `evaluate`.
    #[arg(long)]
    pub model: Option<PathBuf>,

    // Model.
    #[arg(long)]
    pub trees: Option<usize>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub bias: Option<bool>,

    // Optimiser.
    /// `ls` or `xent`.
    #[arg(long)]
    pub loss: Option<String>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lambda2: Option<f64>,
    /// Constant group-ℓ0 strength.
    #[arg(long)]
    pub lambda0: Option<f64>,
    /// Group-lasso strength (with `--penalty group-lasso`).
    #[arg(long)]
    pub lambda1: Option<f64>,
    /// `l0l2` (default), `group-lasso` or `none`.
    #[arg(long)]
    pub penalty: Option<String>,
    /// Scheduler plateau γ; enables the dense-to-sparse scheduler.
    #[arg(long, alias = "lambda0-gamma")]
    pub dsl_gamma: Option<f64>,
    /// Scheduler temperature s.
    #[arg(long)]
    pub dsl_temp: Option<f64>,
    #[arg(long)]
    pub leaf_bound: Option<f64>,

    // certify-descent / gradcheck.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub instances: Option<usize>,

    // simulate.
    /// Cells as `sigma:p:n:k`, comma-separated. Defaults to the full grid.
    #[arg(long)]
    pub cells: Option<String>,
    #[arg(long)]
    pub repetitions: Option<usize>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// `per-repetition` (default) or `per-cell`.
    #[arg(long)]
    pub tuning: Option<String>,
    /// `desk` (default) or `paper` search ranges; `paper` also sets 25 × 500.
    #[arg(long)]
    pub ranges: Option<String>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub n_test: Option<usize>,
    /// Feature budgets for the scheduler ablation on the first cell.
    #[arg(long, value_delimiter = ',')]
    pub budgets: Option<Vec<usize>>,
}

macro_rules! fill {
    ($dst:ident, $src:ident; $($f:ident),* $(,)?) => {
        $( if $dst.$f.is_none() { $dst.$f = $src.$f; } )*
    };
}

impl Opts {
    /// Applies the config file named by `--config` underneath the flags.
    pub fn resolve(mut self) -> Result<Self> {
        let Some(path) = self.config.clone() else { return Ok(self) };
        let file = read_config(&path)?;
        fill!(self, file;
            seed, out, csv, target, categorical, task, split, normalize, synthetic, model,
            trees, depth, theta, bias, loss, lr, batch, epochs, lambda2, lambda0, lambda1,
            penalty, dsl_gamma, dsl_temp, leaf_bound, steps, instances, cells, repetitions,
            trials, tuning, ranges, noise, n_test, budgets,
        );
        Ok(self)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }
}

fn read_config(path: &Path) -> Result<Opts> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}
