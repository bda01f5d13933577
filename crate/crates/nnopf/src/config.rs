//! Run configuration: a TOML file whose keys are mirrored one-to-one by
//! command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, ValueEnum};
use nnopf_core::encode::StabilityMode;
use nnopf_core::metrics::Metric;
use nnopf_core::mlp::{linear_prune_schedule, Optimizer, TrainConfig};
use nnopf_core::verify::{Strategy, VerifyOptions};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum StabilityKind {
    /// Same as `certified`: proven phases are always fixed.
    Off,
    Certified,
    Dataset,
}

impl StabilityKind {
    pub fn mode(self) -> StabilityMode {
        match self {
            StabilityKind::Off | StabilityKind::Certified => StabilityMode::Certified,
            StabilityKind::Dataset => StabilityMode::Dataset,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BoundStage {
    Interval,
    Lp,
    Milp,
}

impl BoundStage {
    pub fn as_str(self) -> &'static str {
        match self {
            BoundStage::Interval => "interval",
            BoundStage::Lp => "lp",
            BoundStage::Milp => "milp",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    PerTerm,
    Disjunctive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum MetricKind {
    NuG,
    NuLine,
    NuDist,
    NuOpt,
}

impl MetricKind {
    pub fn metric(self) -> Metric {
        match self {
            MetricKind::NuG => Metric::NuG,
            MetricKind::NuLine => Metric::NuLine,
            MetricKind::NuDist => Metric::NuDist,
            MetricKind::NuOpt => Metric::NuOpt,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub case: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Defaults to `<out_dir>/data`.
    pub data_dir: Option<PathBuf>,
    pub lower: f64,
    pub upper: f64,
    pub n_samples: usize,
    pub data_seed: u64,
    pub seeds: Vec<u64>,
    pub layers: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub prune_target: f64,
    pub prune_start: usize,
    pub prune_end: usize,
    pub prune_steps: usize,
    pub metrics: Vec<MetricKind>,
    pub stability: StabilityKind,
    pub bound_stage: BoundStage,
    pub bound_max_nodes: usize,
    pub gap_tol: f64,
    pub time_limit: Option<f64>,
    pub max_nodes: Option<usize>,
    pub big_m: f64,
    pub strategy: StrategyKind,
    pub deltas: Vec<f64>,
    /// Exit with code 1 when a guarantee exceeds this value.
    pub threshold: Option<f64>,
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            case: None,
            out_dir: PathBuf::from("runs/out"),
            data_dir: None,
            lower: 0.6,
            upper: 1.0,
            n_samples: 10_000,
            data_seed: 1,
            seeds: vec![1],
            layers: vec![50, 50, 50],
            epochs: 250,
            batch_size: 40,
            learning_rate: 0.1,
            optimizer: OptimizerKind::Sgd,
            prune_target: 0.8,
            prune_start: 50,
            prune_end: 200,
            prune_steps: 10,
            metrics: vec![
                MetricKind::NuG,
                MetricKind::NuLine,
                MetricKind::NuDist,
                MetricKind::NuOpt,
            ],
            stability: StabilityKind::Certified,
            bound_stage: BoundStage::Milp,
            bound_max_nodes: 1000,
            gap_tol: 0.0,
            time_limit: None,
            max_nodes: None,
            big_m: 1e5,
            strategy: StrategyKind::PerTerm,
            deltas: vec![0.0, 0.04, 0.08, 0.12],
            threshold: None,
            threads: None,
        }
    }
}

/// Flags overriding [`RunConfig`] fields of the same name.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Grid case (.json or MATPOWER .m).
    #[arg(long, global = true)]
    pub case: Option<PathBuf>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub data_dir: Option<PathBuf>,
    /// Lower load bound as a fraction of nominal.
    #[arg(long, global = true)]
    pub lower: Option<f64>,
    /// Upper load bound as a fraction of nominal.
    #[arg(long, global = true)]
    pub upper: Option<f64>,
    #[arg(long = "n-samples", alias = "n", global = true)]
    pub n_samples: Option<usize>,
    #[arg(long, global = true)]
    pub data_seed: Option<u64>,
    /// Training seeds, comma separated.
    #[arg(long, value_delimiter = ',', global = true)]
    pub seeds: Option<Vec<u64>>,
    /// Hidden layer sizes, comma separated.
    #[arg(long, value_delimiter = ',', global = true)]
    pub layers: Option<Vec<usize>>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long, global = true)]
    pub batch_size: Option<usize>,
    #[arg(long, global = true)]
    pub learning_rate: Option<f64>,
    #[arg(long, global = true)]
    pub optimizer: Option<OptimizerKind>,
    #[arg(long, global = true)]
    pub prune_target: Option<f64>,
    #[arg(long, global = true)]
    pub prune_start: Option<usize>,
    #[arg(long, global = true)]
    pub prune_end: Option<usize>,
    #[arg(long, global = true)]
    pub prune_steps: Option<usize>,
    /// Metrics to verify, comma separated.
    #[arg(long = "metric", alias = "metrics", value_delimiter = ',', global = true)]
    pub metrics: Option<Vec<MetricKind>>,
    #[arg(long, global = true)]
    pub stability: Option<StabilityKind>,
    #[arg(long, global = true)]
    pub bound_stage: Option<BoundStage>,
    #[arg(long, global = true)]
    pub bound_max_nodes: Option<usize>,
    #[arg(long, global = true)]
    pub gap_tol: Option<f64>,
    /// Seconds per MILP solve.
    #[arg(long, global = true)]
    pub time_limit: Option<f64>,
    #[arg(long, global = true)]
    pub max_nodes: Option<usize>,
    #[arg(long, global = true)]
    pub big_m: Option<f64>,
    #[arg(long, global = true)]
    pub strategy: Option<StrategyKind>,
    /// Domain reductions, comma separated.
    #[arg(long, value_delimiter = ',', global = true, num_args = 0..)]
    pub deltas: Option<Vec<f64>>,
    #[arg(long, global = true)]
    pub threshold: Option<f64>,
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

macro_rules! override_fields {
    ($cfg:ident, $args:ident; $($f:ident),* ; $($o:ident),*) => {
        $(if let Some(v) = $args.$f.clone() { $cfg.$f = v; })*
        $(if $args.$o.is_some() { $cfg.$o = $args.$o.clone(); })*
    };
}

impl RunConfig {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Reads the config file (if any) and applies flag overrides.
    pub fn resolve(args: &ConfigArgs) -> anyhow::Result<Self> {
        let mut cfg = match &args.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                Self::from_toml(&text).with_context(|| format!("parsing {}", p.display()))?
            }
            None => Self::default(),
        };
        override_fields!(cfg, args;
            out_dir, lower, upper, n_samples, data_seed, seeds, layers, epochs, batch_size,
            learning_rate, optimizer, prune_target, prune_start, prune_end, prune_steps, metrics,
            stability, bound_stage, bound_max_nodes, gap_tol, big_m, strategy, deltas;
            case, data_dir, time_limit, max_nodes, threshold, threads);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if !(0.0 <= self.lower && self.lower <= self.upper && self.upper.is_finite()) {
            bail!("need 0 <= lower <= upper, got {} and {}", self.lower, self.upper);
        }
        if self.n_samples == 0 {
            bail!("n_samples must be positive");
        }
        if self.seeds.is_empty() {
            bail!("at least one seed is required");
        }
        if self.layers.is_empty() || self.layers.contains(&0) {
            bail!("layers must list positive hidden sizes");
        }
        if self.metrics.is_empty() {
            bail!("at least one metric is required");
        }
        if !(self.gap_tol >= 0.0) {
            bail!("gap_tol must be non-negative");
        }
        if !(self.big_m > 0.0) {
            bail!("big_m must be positive");
        }
        if self.deltas.iter().any(|d| !(0.0..=0.2).contains(d)) {
            bail!("deltas must lie in [0, 0.2]");
        }
        if self.prune_end < self.prune_start || !(0.0..1.0).contains(&self.prune_target) {
            bail!("prune schedule needs prune_start <= prune_end and prune_target in [0, 1)");
        }
        self.train_config(0).validate()?;
        Ok(())
    }

    pub fn case_path(&self) -> anyhow::Result<&Path> {
        match &self.case {
            Some(p) => Ok(p),
            None => bail!("no case given (use --case or `case` in the config)"),
        }
    }

    pub fn data_dir(&self) -> PathBuf {
        self.data_dir.clone().unwrap_or_else(|| self.out_dir.join("data"))
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            optimizer: match self.optimizer {
                OptimizerKind::Sgd => Optimizer::Sgd,
                OptimizerKind::Adam => Optimizer::Adam,
            },
            prune_schedule: if self.prune_target > 0.0 && self.prune_steps > 0 {
                linear_prune_schedule(
                    self.prune_start,
                    self.prune_end,
                    self.prune_steps,
                    self.prune_target,
                )
            } else {
                Vec::new()
            },
            seed,
        }
    }

    pub fn verify_options(&self) -> VerifyOptions {
        VerifyOptions {
            gap_tol: self.gap_tol,
            time_limit: self.time_limit,
            max_nodes: self.max_nodes,
            big_m: self.big_m,
            strategy: match self.strategy {
                StrategyKind::PerTerm => Strategy::PerTerm,
                StrategyKind::Disjunctive => Strategy::Disjunctive,
            },
            ..VerifyOptions::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("epocs = 3").is_err());
    }

    #[test]
    fn flags_override_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "epochs = 7\nlayers = [10, 10]\nprune_target = 0.0\n").unwrap();
        let args = ConfigArgs {
            config: Some(path),
            epochs: Some(9),
            ..ConfigArgs::default()
        };
        let c = RunConfig::resolve(&args).unwrap();
        assert_eq!((c.epochs, c.layers.clone()), (9, vec![10, 10]));
    }

    #[test]
    fn invalid_values_fail_validation() {
        let c = RunConfig {
            lower: 1.2,
            ..RunConfig::default()
        };
        assert!(c.validate().is_err());
        let c = RunConfig {
            deltas: vec![0.3],
            ..RunConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
