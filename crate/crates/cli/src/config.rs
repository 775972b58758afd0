use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use balance_lab::{Denominator, FitOptions, GaugeChoice, KernelKind, KernelPolicy, State, ViolationKernelSpec};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

pub const CONFIG_FILE: &str = "balance-lab.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum KernelArg {
    #[value(name = "exp_half")]
    ExpHalf,
    Softplus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum DenominatorArg {
    Rows,
    All,
}

/// Tunables shared by every subcommand. Each one can come from a flag, from
/// the config file, or from the built-in default, in that order.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    /// Inverse temperature used by the violation kernel
    #[arg(long, global = true)]
    pub beta: Option<f64>,
    /// Kernel estimator: fixed:<N0>, rows[:<min>] or attempts
    #[arg(long = "policy", global = true)]
    pub kernel_policy: Option<String>,
    #[arg(long = "kernel", global = true, value_enum)]
    pub violation_kernel: Option<KernelArg>,
    #[arg(long, global = true, value_enum)]
    pub denominator: Option<DenominatorArg>,
    /// Bound on |βV| during fitting; defaults to ln(total samples)
    #[arg(long, global = true)]
    pub cap: Option<f64>,
    /// Row threshold for a bare `rows` policy
    #[arg(long, global = true)]
    pub min_row_count: Option<u64>,
    #[arg(long, global = true)]
    pub triplet_min_count: Option<u64>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub tolerance: Option<f64>,
    #[arg(long, global = true)]
    pub max_iterations: Option<usize>,
    /// Fix the gauge at this state
    #[arg(long, global = true)]
    pub anchor: Option<String>,
    /// Fix the gauge so finite potentials average to zero
    #[arg(long, global = true, num_args = 0, default_missing_value = "true")]
    pub mean_zero: Option<bool>,
    /// Minimum attempts for a state to enter the density fit
    #[arg(long, global = true)]
    pub min_samples: Option<u64>,
}

impl Settings {
    fn or(self, other: Settings) -> Settings {
        Settings {
            beta: self.beta.or(other.beta),
            kernel_policy: self.kernel_policy.or(other.kernel_policy),
            violation_kernel: self.violation_kernel.or(other.violation_kernel),
            denominator: self.denominator.or(other.denominator),
            cap: self.cap.or(other.cap),
            min_row_count: self.min_row_count.or(other.min_row_count),
            triplet_min_count: self.triplet_min_count.or(other.triplet_min_count),
            seed: self.seed.or(other.seed),
            tolerance: self.tolerance.or(other.tolerance),
            max_iterations: self.max_iterations.or(other.max_iterations),
            anchor: self.anchor.or(other.anchor),
            mean_zero: self.mean_zero.or(other.mean_zero),
            min_samples: self.min_samples.or(other.min_samples),
        }
    }
}

/// The effective configuration of one command, echoed as `config.resolved.json`.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub beta: f64,
    pub kernel_policy: String,
    pub violation_kernel: KernelArg,
    pub denominator: DenominatorArg,
    pub cap: Option<f64>,
    pub min_row_count: u64,
    pub triplet_min_count: u64,
    pub seed: u64,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub anchor: Option<String>,
    pub mean_zero: bool,
    pub min_samples: u64,
    pub config_file: Option<PathBuf>,
    pub command: String,
    pub paths: BTreeMap<String, PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generated_at: Option<String>,
}

impl RunConfig {
    /// Merges flags over the config file (explicit path, or ./balance-lab.json
    /// when present) over defaults.
    pub fn resolve(flags: Settings, config: Option<&Path>, command: &str) -> Result<RunConfig> {
        let (file, config_file) = match config {
            Some(p) => (read_settings(p)?, Some(p.to_path_buf())),
            None if Path::new(CONFIG_FILE).is_file() => {
                (read_settings(Path::new(CONFIG_FILE))?, Some(PathBuf::from(CONFIG_FILE)))
            }
            None => (Settings::default(), None),
        };
        let s = flags.or(file);
        let min_row_count = s.min_row_count.unwrap_or(2);
        let kernel_policy = match s.kernel_policy.as_deref() {
            None | Some("rows") => format!("rows:{min_row_count}"),
            Some(p) => p.to_string(),
        };
        let cfg = RunConfig {
            beta: s.beta.unwrap_or(1.0),
            kernel_policy,
            violation_kernel: s.violation_kernel.unwrap_or(KernelArg::ExpHalf),
            denominator: s.denominator.unwrap_or(DenominatorArg::Rows),
            cap: s.cap,
            min_row_count,
            triplet_min_count: s.triplet_min_count.unwrap_or(2),
            seed: s.seed.unwrap_or(0),
            tolerance: s.tolerance.unwrap_or(1e-8),
            max_iterations: s.max_iterations.unwrap_or(10_000),
            anchor: s.anchor,
            mean_zero: s.mean_zero.unwrap_or(false),
            min_samples: s.min_samples.unwrap_or(2),
            config_file,
            command: command.to_string(),
            paths: BTreeMap::new(),
            generated_at: None,
        };
        // fail on bad values before any work starts
        cfg.policy()?;
        cfg.kernel_spec()?;
        cfg.gauge()?;
        Ok(cfg)
    }

    pub fn policy(&self) -> Result<KernelPolicy> {
        Ok(self.kernel_policy.parse()?)
    }

    pub fn kernel_spec(&self) -> Result<ViolationKernelSpec> {
        let kind = match self.violation_kernel {
            KernelArg::ExpHalf => KernelKind::ExpHalf,
            KernelArg::Softplus => KernelKind::Softplus,
        };
        Ok(ViolationKernelSpec::new(kind, self.beta)?)
    }

    pub fn gauge(&self) -> Result<GaugeChoice> {
        match (&self.anchor, self.mean_zero) {
            (Some(_), true) => Err(crate::coded("BAD_CONFIG", "--anchor and --mean-zero are mutually exclusive")),
            (Some(a), false) => Ok(GaugeChoice::Anchor(State::new(a)?)),
            (None, true) => Ok(GaugeChoice::MeanZero),
            (None, false) => Ok(GaugeChoice::MostMeasured),
        }
    }

    pub fn fit_options(&self) -> Result<FitOptions> {
        Ok(FitOptions {
            tolerance: self.tolerance,
            max_iterations: self.max_iterations,
            cap: self.cap,
            gauge: self.gauge()?,
            denominator: match self.denominator {
                DenominatorArg::Rows => Denominator::RowsWithKernel,
                DenominatorArg::All => Denominator::AllStates,
            },
            record_trace: false,
        })
    }
}

fn read_settings(path: &Path) -> Result<Settings> {
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    serde_json::from_str(&text)
        .map_err(|e| crate::coded("BAD_CONFIG", format!("{}: {e}", path.display())))
}
