use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use fecnn_core::drl::DrlConfig;
use fecnn_core::EccSpec;

use crate::bitstats::{bitstats_to, BitstatsConfig};
use crate::evalplan::{eval_plan_to, EvalPlanConfig};
use crate::setup::{Positions, ReprChoice, DATA_DIR_ENV};
use crate::sweep::{sweep_to, Method, SweepConfig};
use crate::train::{run_train, TrainConfig};
use crate::twophase::{twophase_to, Scenario, TwophaseConfig};

/// Fault-tolerant neural network weights: protection plans against bit
/// errors in stored weights.
#[derive(Debug, Parser)]
#[command(name = "fecnn", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Accuracy against redundancy for baseline and learned plans.
    Sweep(SweepArgs),
    /// Train one plan from a TOML config.
    Train(TrainArgs),
    /// Evaluate a saved plan under random bit errors.
    EvalPlan(EvalPlanArgs),
    /// Per-position bit frequencies of the encoded weights.
    Bitstats(BitstatsArgs),
    /// Ramp one kind of error, freeze it, then ramp a second kind.
    Twophase(TwophaseArgs),
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long, default_value = "assets/reference-model.bin")]
    pub model: PathBuf,
    #[arg(long, env = DATA_DIR_ENV, default_value = "data/mnist-5k")]
    pub dataset: PathBuf,
    /// Test images used per evaluation.
    #[arg(long, default_value_t = 1000)]
    pub limit: usize,
    /// `float32` or `fixed:<width>:<clamp|auto>`.
    #[arg(long, default_value = "float32")]
    pub repr: ReprChoice,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// `ideal` or `bch:<n>:<k>:<t>`.
    #[arg(long, default_value = "ideal")]
    pub ecc: EccSpec,
    #[arg(long, value_delimiter = ',', default_value = "0.01")]
    pub ber: Vec<f64>,
    #[arg(long = "target-r", value_delimiter = ',', default_value = "0.008")]
    pub target_r: Vec<f64>,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "baseline,topbits,bitmask"
    )]
    pub mode: Vec<Method>,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long = "train-seeds", value_delimiter = ',', default_value = "0")]
    pub train_seeds: Vec<u64>,
    /// TOML file with optimizer settings.
    #[arg(long = "drl-config")]
    pub drl_config: Option<PathBuf>,
    /// Overrides the optimizer's iteration budget.
    #[arg(long)]
    pub iterations: Option<usize>,
    /// CSV output; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalPlanArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub plan: PathBuf,
    /// Defaults to the BER recorded in the plan.
    #[arg(long)]
    pub ber: Option<f64>,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BitstatsArgs {
    #[arg(long, default_value = "assets/reference-model.bin")]
    pub model: PathBuf,
    #[arg(long, default_value = "float32")]
    pub repr: ReprChoice,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TwophaseArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub scenario: Scenario,
    #[arg(long = "p-max", default_value_t = 0.01)]
    pub p_max: f64,
    #[arg(long, default_value_t = 10)]
    pub steps: usize,
    #[arg(long, default_value_t = 30)]
    pub trials: usize,
    /// Bit positions exposed to errors, e.g. `all` or `1-8`.
    #[arg(long, default_value = "all")]
    pub positions: Positions,
    #[arg(long = "plan-topbits")]
    pub plan_topbits: Option<PathBuf>,
    #[arg(long = "plan-bitmask")]
    pub plan_bitmask: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn load_drl(path: Option<&Path>, iterations: Option<usize>) -> Result<DrlConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text =
                std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => DrlConfig::default(),
    };
    if let Some(n) = iterations {
        cfg.iterations = n;
    }
    Ok(cfg)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Sweep(a) => {
            let cfg = SweepConfig {
                model: a.model.model,
                dataset: a.model.dataset,
                limit: a.model.limit,
                repr: a.model.repr,
                ecc: a.ecc,
                bers: a.ber,
                targets: a.target_r,
                methods: a.mode,
                trials: a.trials,
                seed: a.seed,
                train_seeds: a.train_seeds,
                drl: load_drl(a.drl_config.as_deref(), a.iterations)?,
            };
            sweep_to(&cfg, a.out.as_deref())?;
        }
        Command::Train(a) => {
            let mut cfg = TrainConfig::load(&a.config)?;
            if let Some(s) = a.seed {
                cfg.seed = s;
            }
            if let Some(o) = a.out {
                cfg.out_dir = o;
            }
            let summary = run_train(&cfg)?;
            eprintln!(
                "mean accuracy {:.4} at r = {:.6}; outputs in {}",
                summary.mean,
                summary.achieved_r,
                cfg.out_dir.display()
            );
        }
        Command::EvalPlan(a) => {
            let cfg = EvalPlanConfig {
                model: a.model.model,
                dataset: a.model.dataset,
                limit: a.model.limit,
                repr: a.model.repr,
                plan: a.plan,
                ber: a.ber,
                trials: a.trials,
                seed: a.seed,
            };
            eval_plan_to(&cfg, a.out.as_deref())?;
        }
        Command::Bitstats(a) => {
            let cfg = BitstatsConfig {
                model: a.model,
                repr: a.repr,
                seed: a.seed,
            };
            bitstats_to(&cfg, a.out.as_deref())?;
        }
        Command::Twophase(a) => {
            let cfg = TwophaseConfig {
                model: a.model.model,
                dataset: a.model.dataset,
                limit: a.model.limit,
                repr: a.model.repr,
                scenario: a.scenario,
                p_max: a.p_max,
                steps: a.steps,
                trials: a.trials,
                positions: a.positions,
                plan_topbits: a.plan_topbits,
                plan_bitmask: a.plan_bitmask,
                seed: a.seed,
            };
            twophase_to(&cfg, a.out.as_deref())?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn lists_parse() {
        let cli = Cli::try_parse_from([
            "fecnn",
            "sweep",
            "--ber",
            "0.01,0.02",
            "--mode",
            "baseline,topbits",
            "--ecc",
            "bch:255:239:2",
        ])
        .unwrap();
        let Command::Sweep(a) = cli.command else {
            panic!()
        };
        assert_eq!(a.ber, vec![0.01, 0.02]);
        assert_eq!(a.mode, vec![Method::Baseline, Method::TopBits]);
        assert_eq!(a.ecc, EccSpec::block(255, 239, 2).unwrap());
        assert!(Cli::try_parse_from(["fecnn", "sweep", "--mode", "random"]).is_err());
        assert!(Cli::try_parse_from(["fecnn", "twophase", "--scenario", "nope"]).is_err());
    }
}
