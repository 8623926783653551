//! Two-phase error experiments: errors of one kind are ramped up to `p_max`,
//! frozen, and then errors of a second kind are ramped up on top.
//!
//! Phase-2 errors are drawn independently on the clean bits and their flips
//! are unioned with the frozen phase-1 flips. Because the channel compares
//! one fixed variate per bit against `p`, the flips at a smaller `p` are a
//! subset of those at a larger `p` within a trial.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use fecnn_core::channel::{inject_masked, mix64, trial_seed};
use fecnn_core::codec::width_mask;
use fecnn_core::scheme::PlanEvaluator;
use fecnn_core::stats::{mean, std_dev, std_err};
use fecnn_core::{ChannelSpec, Direction, LayerBits, ProtectionPlan};
use serde::{Deserialize, Serialize, Serializer};

use crate::audit::{config_hash, write_rows};
use crate::evalplan::read_plan_file;
use crate::setup::{load_evaluator, Positions, ReprChoice};

const PHASE_TWO_SALT: u64 = 0x7A0_9A5E_0000_0002;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Scenario {
    OneToZeroThenZeroToOne,
    ZeroToOneThenOneToZero,
    SetdiffTopBitsFirst,
    SetdiffBitMaskFirst,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [
        Scenario::OneToZeroThenZeroToOne,
        Scenario::ZeroToOneThenOneToZero,
        Scenario::SetdiffTopBitsFirst,
        Scenario::SetdiffBitMaskFirst,
    ];

    pub fn needs_plans(self) -> bool {
        matches!(
            self,
            Scenario::SetdiffTopBitsFirst | Scenario::SetdiffBitMaskFirst
        )
    }

    fn name(self) -> &'static str {
        match self {
            Scenario::OneToZeroThenZeroToOne => "oneToZero_then_zeroToOne",
            Scenario::ZeroToOneThenOneToZero => "zeroToOne_then_oneToZero",
            Scenario::SetdiffTopBitsFirst => "setdiff_TopBits_first",
            Scenario::SetdiffBitMaskFirst => "setdiff_BitMask_first",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name().eq_ignore_ascii_case(s.trim()))
            .with_context(|| {
                let names: Vec<&str> = Scenario::ALL.iter().map(|s| s.name()).collect();
                format!(
                    "unknown scenario {s:?}; expected one of {}",
                    names.join(", ")
                )
            })
    }
}

impl Serialize for Scenario {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// Error kind and exposed bit positions (per layer) of one phase.
#[derive(Clone, Debug, PartialEq)]
pub struct Phase {
    pub direction: Direction,
    pub exposed: Vec<u32>,
}

/// Phases of `scenario`. `positions` restricts every phase to the given
/// bit positions; the set-difference scenarios take the TopBits and
/// BitMask plans.
pub fn phases(
    scenario: Scenario,
    layers: usize,
    width: u32,
    positions: &Positions,
    plans: Option<(&ProtectionPlan, &ProtectionPlan)>,
) -> Result<[Phase; 2]> {
    let allowed = positions.word(width)?;
    let uniform = |direction| Phase {
        direction,
        exposed: vec![allowed; layers],
    };
    let diff = |a: &ProtectionPlan, b: &ProtectionPlan| Phase {
        direction: Direction::Symmetric,
        exposed: a
            .mask_words()
            .iter()
            .zip(b.mask_words())
            .map(|(x, y)| x & !y & allowed)
            .collect(),
    };
    let need = || -> Result<(&ProtectionPlan, &ProtectionPlan)> {
        let (t, b) = plans
            .with_context(|| format!("scenario {scenario} needs a TopBits and a BitMask plan"))?;
        for p in [t, b] {
            if p.layers() != layers || p.width() != width {
                bail!(
                    "plan has {} layers of {} bits, model has {layers} of {width}",
                    p.layers(),
                    p.width()
                );
            }
        }
        Ok((t, b))
    };
    Ok(match scenario {
        Scenario::OneToZeroThenZeroToOne => {
            [uniform(Direction::OneToZero), uniform(Direction::ZeroToOne)]
        }
        Scenario::ZeroToOneThenOneToZero => {
            [uniform(Direction::ZeroToOne), uniform(Direction::OneToZero)]
        }
        Scenario::SetdiffTopBitsFirst => {
            let (t, b) = need()?;
            [diff(t, b), diff(b, t)]
        }
        Scenario::SetdiffBitMaskFirst => {
            let (t, b) = need()?;
            [diff(b, t), diff(t, b)]
        }
    })
}

fn corrupt(clean: &[LayerBits], phase: &Phase, p: f64, seed: u64) -> Result<Vec<LayerBits>> {
    let protect: Vec<u32> = clean
        .iter()
        .zip(&phase.exposed)
        .map(|(l, e)| !e & width_mask(l.width()))
        .collect();
    Ok(inject_masked(
        clean,
        &protect,
        &ChannelSpec::new(p, phase.direction, seed)?,
    )?)
}

/// `clean` with the flips of both `a` and `b` applied.
fn union_flips(clean: &[LayerBits], a: &[LayerBits], b: &[LayerBits]) -> Vec<LayerBits> {
    clean
        .iter()
        .zip(a)
        .zip(b)
        .map(|((c, x), y)| {
            let mut out = c.clone();
            for ((o, &xa), &yb) in out.words_mut().iter_mut().zip(x.words()).zip(y.words()) {
                let flips = (*o ^ xa) | (*o ^ yb);
                *o ^= flips;
            }
            out
        })
        .collect()
}

/// Accuracy per trial at every step of both phases: `out[phase][step]`
/// holds `trials` accuracies at `p = p_max * step / steps`.
pub fn run_phases(
    evaluator: &PlanEvaluator,
    phases: &[Phase; 2],
    p_max: f64,
    steps: usize,
    trials: usize,
    seed: u64,
) -> Result<[Vec<Vec<f64>>; 2]> {
    let clean = evaluator.bits();
    let grid: Vec<f64> = (0..=steps)
        .map(|k| p_max * k as f64 / steps as f64)
        .collect();
    let mut one = vec![Vec::with_capacity(trials); steps + 1];
    let mut two = vec![Vec::with_capacity(trials); steps + 1];
    let seed_two = mix64(seed ^ PHASE_TWO_SALT);
    for t in 0..trials as u64 {
        let s1 = trial_seed(seed, t);
        let s2 = trial_seed(seed_two, t);
        let mut frozen = None;
        for (k, &p) in grid.iter().enumerate() {
            let bits = corrupt(clean, &phases[0], p, s1)?;
            one[k].push(evaluator.accuracy_of_bits(&bits)?);
            if k == steps {
                frozen = Some(bits);
            }
        }
        let frozen = frozen.expect("grid ends at p_max");
        two[0].push(*one[steps].last().expect("pushed above"));
        for (k, &p) in grid.iter().enumerate().skip(1) {
            let extra = corrupt(clean, &phases[1], p, s2)?;
            two[k].push(evaluator.accuracy_of_bits(&union_flips(clean, &frozen, &extra))?);
        }
    }
    Ok([one, two])
}

#[derive(Clone, Debug, Serialize)]
pub struct TwophaseConfig {
    pub model: PathBuf,
    pub dataset: PathBuf,
    pub limit: usize,
    pub repr: ReprChoice,
    pub scenario: Scenario,
    pub p_max: f64,
    pub steps: usize,
    pub trials: usize,
    pub positions: Positions,
    pub plan_topbits: Option<PathBuf>,
    pub plan_bitmask: Option<PathBuf>,
    pub seed: u64,
}

impl TwophaseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_max) {
            bail!("p_max {} outside [0, 1]", self.p_max);
        }
        if self.steps == 0 || self.trials == 0 {
            bail!("steps and trials must be positive");
        }
        if self.scenario.needs_plans()
            && (self.plan_topbits.is_none() || self.plan_bitmask.is_none())
        {
            bail!(
                "scenario {} needs --plan-topbits and --plan-bitmask",
                self.scenario
            );
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwophaseRow {
    pub scenario: String,
    pub phase: u8,
    pub step: usize,
    pub p: f64,
    pub direction: Direction,
    pub mean: f64,
    pub std: f64,
    pub stderr: f64,
    pub trials: usize,
    pub seed: u64,
    pub config_hash: String,
}

pub fn run_twophase(cfg: &TwophaseConfig) -> Result<Vec<TwophaseRow>> {
    cfg.validate()?;
    let hash = config_hash(cfg)?;
    let plans = match (&cfg.plan_topbits, &cfg.plan_bitmask) {
        (Some(t), Some(b)) if cfg.scenario.needs_plans() => {
            Some((read_plan_file(t)?.plan, read_plan_file(b)?.plan))
        }
        _ => None,
    };
    let evaluator = load_evaluator(&cfg.model, &cfg.dataset, cfg.repr, cfg.limit)?;
    let ph = phases(
        cfg.scenario,
        evaluator.layer_sizes().len(),
        evaluator.width(),
        &cfg.positions,
        plans.as_ref().map(|(t, b)| (t, b)),
    )?;
    let curves = run_phases(&evaluator, &ph, cfg.p_max, cfg.steps, cfg.trials, cfg.seed)?;
    let mut rows = Vec::new();
    for (i, curve) in curves.iter().enumerate() {
        for (step, accs) in curve.iter().enumerate() {
            rows.push(TwophaseRow {
                scenario: cfg.scenario.to_string(),
                phase: i as u8 + 1,
                step,
                p: cfg.p_max * step as f64 / cfg.steps as f64,
                direction: ph[i].direction,
                mean: mean(accs),
                std: std_dev(accs),
                stderr: std_err(accs),
                trials: accs.len(),
                seed: cfg.seed,
                config_hash: hash.clone(),
            });
        }
    }
    Ok(rows)
}

pub fn twophase_to(cfg: &TwophaseConfig, out: Option<&Path>) -> Result<Vec<TwophaseRow>> {
    let rows = run_twophase(cfg)?;
    write_rows(out, &rows)?;
    Ok(rows)
}
