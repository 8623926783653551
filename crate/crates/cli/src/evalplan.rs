//! Monte-Carlo evaluation of a saved plan.

use std::path::{Path, PathBuf};

use anyhow::{ensure, Context, Result};
use fecnn_core::scheme::PlanFile;
use fecnn_core::ChannelSpec;
use serde::{Deserialize, Serialize};

use crate::audit::{config_hash, write_rows};
use crate::setup::{load_evaluator, ReprChoice};
use crate::sweep::plan_text;

#[derive(Clone, Debug, Serialize)]
pub struct EvalPlanConfig {
    pub model: PathBuf,
    pub dataset: PathBuf,
    pub limit: usize,
    pub repr: ReprChoice,
    pub plan: PathBuf,
    /// Defaults to the BER recorded in the plan.
    pub ber: Option<f64>,
    pub trials: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalPlanRow {
    pub ber: f64,
    pub target_r: Option<f64>,
    pub achieved_r: f64,
    pub mean: f64,
    pub std: f64,
    pub stderr: f64,
    pub trials: usize,
    pub plan: String,
    pub seed: u64,
    pub config_hash: String,
}

pub fn read_plan_file(path: &Path) -> Result<PlanFile> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading plan {}", path.display()))?;
    text.parse()
        .with_context(|| format!("parsing plan {}", path.display()))
}

pub fn run_eval_plan(cfg: &EvalPlanConfig) -> Result<EvalPlanRow> {
    ensure!(cfg.trials > 0, "trials must be positive");
    let hash = config_hash(cfg)?;
    let file = read_plan_file(&cfg.plan)?;
    let ber = cfg.ber.unwrap_or(file.ber);
    ensure!((0.0..=1.0).contains(&ber), "BER {ber} outside [0, 1]");
    let evaluator = load_evaluator(&cfg.model, &cfg.dataset, cfg.repr, cfg.limit)?;
    ensure!(
        file.plan.width() == evaluator.width()
            && file.plan.layers() == evaluator.layer_sizes().len(),
        "plan has {} layers of {} bits, model has {} of {}",
        file.plan.layers(),
        file.plan.width(),
        evaluator.layer_sizes().len(),
        evaluator.width()
    );
    let ev = evaluator.evaluate(
        &file.plan,
        &ChannelSpec::symmetric(ber, cfg.seed)?,
        cfg.trials,
    )?;
    Ok(EvalPlanRow {
        ber,
        target_r: file.plan.target_r(),
        achieved_r: ev.r,
        mean: ev.mean,
        std: ev.std,
        stderr: ev.std_err(),
        trials: cfg.trials,
        plan: plan_text(&file.plan),
        seed: cfg.seed,
        config_hash: hash,
    })
}

pub fn eval_plan_to(cfg: &EvalPlanConfig, out: Option<&Path>) -> Result<EvalPlanRow> {
    let row = run_eval_plan(cfg)?;
    write_rows(out, std::slice::from_ref(&row))?;
    Ok(row)
}
