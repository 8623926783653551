//! Redundancy/accuracy tradeoff: baseline, TopBits and BitMask plans over a
//! grid of budgets, all evaluated on the same channel seeds.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use anyhow::{bail, Result};
use fecnn_core::drl::{run_optimization, AccuracyReward, ActionMode, DrlConfig, Problem};
use fecnn_core::scheme::PlanEvaluator;
use fecnn_core::{ChannelSpec, EccSpec, EvaluationResult, ProtectionPlan};
use serde::{Deserialize, Serialize};

use crate::audit::{config_hash, write_rows};
use crate::setup::{load_evaluator, ReprChoice};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Every layer protects the same leading positions, as many as fit.
    Baseline,
    TopBits,
    BitMask,
}

impl Method {
    pub fn action_mode(self) -> Option<ActionMode> {
        match self {
            Method::Baseline => None,
            Method::TopBits => Some(ActionMode::TopBits),
            Method::BitMask => Some(ActionMode::BitMask),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Baseline => "baseline",
            Method::TopBits => "topbits",
            Method::BitMask => "bitmask",
        })
    }
}

impl FromStr for Method {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "baseline" => Ok(Method::Baseline),
            "topbits" | "top_bits" => Ok(Method::TopBits),
            "bitmask" | "bit_mask" => Ok(Method::BitMask),
            other => bail!("unknown method {other:?}; expected baseline, topbits or bitmask"),
        }
    }
}

/// Everything that determines a sweep's output.
#[derive(Clone, Debug, Serialize)]
pub struct SweepConfig {
    pub model: PathBuf,
    pub dataset: PathBuf,
    pub limit: usize,
    pub repr: ReprChoice,
    pub ecc: EccSpec,
    pub bers: Vec<f64>,
    pub targets: Vec<f64>,
    pub methods: Vec<Method>,
    pub trials: usize,
    /// Channel seed shared by every evaluation.
    pub seed: u64,
    /// One training run per seed for the learned methods.
    pub train_seeds: Vec<u64>,
    pub drl: DrlConfig,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bers.is_empty() || self.targets.is_empty() || self.methods.is_empty() {
            bail!("sweep needs at least one BER, target and method");
        }
        if self.trials == 0 {
            bail!("trials must be positive");
        }
        if let Some(p) = self.bers.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            bail!("BER {p} outside [0, 1]");
        }
        if let Some(t) = self.targets.iter().find(|t| !(**t >= 0.0)) {
            bail!("target redundancy {t} must be nonnegative");
        }
        if self.train_seeds.is_empty() && self.methods.iter().any(|m| m.action_mode().is_some()) {
            bail!("learned methods need at least one training seed");
        }
        self.drl.validate()?;
        for &p in &self.bers {
            self.ecc.overhead(p)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: Method,
    pub ber: f64,
    pub target_r: f64,
    pub achieved_r: f64,
    pub mean: f64,
    pub std: f64,
    pub stderr: f64,
    pub trials: usize,
    /// Empty for the baseline.
    pub train_seed: Option<u64>,
    /// Whether training produced no feasible plan and the baseline was used.
    pub fallback: bool,
    /// Per-layer masks, `/`-separated.
    pub plan: String,
    pub seed: u64,
    pub config_hash: String,
}

/// Outcome of one method at one budget.
#[derive(Clone, Debug)]
pub struct MethodOutcome {
    pub plan: ProtectionPlan,
    pub evaluation: EvaluationResult,
    pub fallback: bool,
}

/// Plans and evaluates one method. The evaluation channel uses
/// `channel_seed`; training rewards draw from a stream of `train_seed`.
#[allow(clippy::too_many_arguments)]
pub fn run_method(
    evaluator: &PlanEvaluator,
    method: Method,
    ecc: EccSpec,
    ber: f64,
    target_r: f64,
    drl: &DrlConfig,
    channel_seed: u64,
    train_seed: u64,
    trials: usize,
) -> Result<MethodOutcome> {
    let chan = ChannelSpec::symmetric(ber, channel_seed)?;
    match method.action_mode() {
        None => {
            let problem =
                Problem::for_evaluator(evaluator, ecc, ber, target_r, ActionMode::TopBits);
            let plan = problem.baseline_fallback()?;
            let evaluation = evaluator.evaluate(&plan, &chan, trials)?;
            Ok(MethodOutcome {
                plan,
                evaluation,
                fallback: false,
            })
        }
        Some(mode) => {
            let problem = Problem::for_evaluator(evaluator, ecc, ber, target_r, mode);
            let mut source =
                AccuracyReward::new(evaluator, chan, train_seed, &problem, drl.reward, trials);
            let res = run_optimization(&problem, drl, &mut source, train_seed)?;
            Ok(MethodOutcome {
                plan: res.plan,
                evaluation: res.evaluation,
                fallback: res.used_fallback,
            })
        }
    }
}

pub fn plan_text(plan: &ProtectionPlan) -> String {
    let masks: Vec<String> = plan.masks().iter().map(ToString::to_string).collect();
    masks.join("/")
}

pub fn run_sweep(cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let hash = config_hash(cfg)?;
    let evaluator = load_evaluator(&cfg.model, &cfg.dataset, cfg.repr, cfg.limit)?;
    let mut rows = Vec::new();
    for &ber in &cfg.bers {
        for &target_r in &cfg.targets {
            for &method in &cfg.methods {
                let seeds: Vec<Option<u64>> = match method {
                    Method::Baseline => vec![None],
                    _ => cfg.train_seeds.iter().copied().map(Some).collect(),
                };
                for train_seed in seeds {
                    let out = run_method(
                        &evaluator,
                        method,
                        cfg.ecc,
                        ber,
                        target_r,
                        &cfg.drl,
                        cfg.seed,
                        train_seed.unwrap_or(cfg.seed),
                        cfg.trials,
                    )?;
                    rows.push(SweepRow {
                        method,
                        ber,
                        target_r,
                        achieved_r: out.evaluation.r,
                        mean: out.evaluation.mean,
                        std: out.evaluation.std,
                        stderr: out.evaluation.std_err(),
                        trials: cfg.trials,
                        train_seed,
                        fallback: out.fallback,
                        plan: plan_text(&out.plan),
                        seed: cfg.seed,
                        config_hash: hash.clone(),
                    });
                }
            }
        }
    }
    Ok(rows)
}

pub fn sweep_to(cfg: &SweepConfig, out: Option<&std::path::Path>) -> Result<Vec<SweepRow>> {
    let rows = run_sweep(cfg)?;
    write_rows(out, &rows)?;
    Ok(rows)
}
