//! Selective protection: per-layer bit masks, the uniform baseline, the
//! TopBits budget adjustment, rewards and Monte-Carlo plan evaluation.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelSpec;
use crate::codec::{format_bits, model_to_bits, position_mask, width_mask, LayerBits, WeightRepr};
use crate::ecc::{redundancy, simulate_protection, EccSpec, RedundancyReport};
use crate::nn::{EvalSet, NetworkModel};
use crate::stats;
use crate::{Error, Result};

/// Which bit positions of every weight in one layer are ECC-protected.
///
/// Position `j` (0 = sign) is stored at integer bit `width - 1 - j`, the same
/// packing the codecs use, so the word can be applied to weight words
/// directly.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct BitMaskVector {
    word: u32,
    width: u32,
}

impl BitMaskVector {
    pub fn new(word: u32, width: u32) -> Result<Self> {
        if !(1..=32).contains(&width) {
            return Err(Error::param(format!("mask width {width} not in 1..=32")));
        }
        if word & !width_mask(width) != 0 {
            return Err(Error::shape(format!(
                "mask {word:#x} wider than {width} bits"
            )));
        }
        Ok(Self { word, width })
    }

    pub fn empty(width: u32) -> Result<Self> {
        Self::new(0, width)
    }

    /// Protects positions `0..count`.
    pub fn top(count: u32, width: u32) -> Result<Self> {
        if count > width {
            return Err(Error::param(format!(
                "cannot protect {count} of {width} bits"
            )));
        }
        let word = (((1u64 << count) - 1) << (width - count)) as u32;
        Self::new(word, width)
    }

    pub fn from_flags(flags: &[bool]) -> Result<Self> {
        let width = flags.len() as u32;
        let mut word = 0u32;
        for &f in flags {
            word = (word << 1) | u32::from(f);
        }
        Self::new(word, width)
    }

    pub fn from_positions(positions: &[u32], width: u32) -> Result<Self> {
        let mut word = 0u32;
        for &p in positions {
            if p >= width {
                return Err(Error::param(format!(
                    "bit position {p} outside width {width}"
                )));
            }
            word |= position_mask(width, p);
        }
        Self::new(word, width)
    }

    pub fn word(self) -> u32 {
        self.word
    }

    pub fn width(self) -> u32 {
        self.width
    }

    pub fn get(self, pos: u32) -> bool {
        self.word & position_mask(self.width, pos) != 0
    }

    pub fn flags(self) -> Vec<bool> {
        (0..self.width).map(|j| self.get(j)).collect()
    }

    pub fn positions(self) -> Vec<u32> {
        (0..self.width).filter(|&j| self.get(j)).collect()
    }

    pub fn count(self) -> u32 {
        self.word.count_ones()
    }

    pub fn is_superset_of(self, other: BitMaskVector) -> bool {
        self.width == other.width && other.word & !self.word == 0
    }
}

impl fmt::Display for BitMaskVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        format_bits(self.word, self.width, f)
    }
}

impl fmt::Debug for BitMaskVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitMaskVector({self})")
    }
}

impl FromStr for BitMaskVector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let flags = s
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::format(
                    "bit mask",
                    format!("unexpected character {other:?}"),
                )),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_flags(&flags)
    }
}

/// One mask per edge layer plus the code protecting the masked bits.
#[derive(Clone, Debug, PartialEq)]
pub struct ProtectionPlan {
    masks: Vec<BitMaskVector>,
    ecc: EccSpec,
    target_r: Option<f64>,
}

impl ProtectionPlan {
    pub fn new(masks: Vec<BitMaskVector>, ecc: EccSpec, target_r: Option<f64>) -> Result<Self> {
        let Some(first) = masks.first() else {
            return Err(Error::param("a plan needs at least one layer"));
        };
        if masks.iter().any(|m| m.width != first.width) {
            return Err(Error::shape("all masks of a plan must have the same width"));
        }
        if let Some(t) = target_r {
            if !(t >= 0.0) {
                return Err(Error::param(format!(
                    "target redundancy {t} must be nonnegative"
                )));
            }
        }
        Ok(Self {
            masks,
            ecc,
            target_r,
        })
    }

    /// Every layer protects its first `count` bit positions.
    pub fn baseline(count: u32, layers: usize, width: u32, ecc: EccSpec) -> Result<Self> {
        Self::new(vec![BitMaskVector::top(count, width)?; layers], ecc, None)
    }

    /// Layer `i` protects its first `counts[i]` bit positions.
    pub fn from_top_counts(counts: &[u32], width: u32, ecc: EccSpec) -> Result<Self> {
        let masks = counts
            .iter()
            .map(|&c| BitMaskVector::top(c, width))
            .collect::<Result<Vec<_>>>()?;
        Self::new(masks, ecc, None)
    }

    pub fn with_target(mut self, target_r: Option<f64>) -> Self {
        self.target_r = target_r;
        self
    }

    pub fn masks(&self) -> &[BitMaskVector] {
        &self.masks
    }

    pub fn mask_words(&self) -> Vec<u32> {
        self.masks.iter().map(|m| m.word).collect()
    }

    pub fn ecc(&self) -> EccSpec {
        self.ecc
    }

    pub fn target_r(&self) -> Option<f64> {
        self.target_r
    }

    pub fn width(&self) -> u32 {
        self.masks[0].width
    }

    pub fn layers(&self) -> usize {
        self.masks.len()
    }

    pub fn redundancy(&self, layer_sizes: &[usize], p: f64) -> Result<RedundancyReport> {
        redundancy(&self.mask_words(), layer_sizes, self.width(), &self.ecc, p)
    }

    /// Per-layer protection as full-size bit matrices (1 = protected).
    pub fn protected_bits(&self, layer_sizes: &[usize]) -> Result<Vec<LayerBits>> {
        if layer_sizes.len() != self.masks.len() {
            return Err(Error::shape(format!(
                "{} masks for {} layers",
                self.masks.len(),
                layer_sizes.len()
            )));
        }
        Ok(self
            .masks
            .iter()
            .zip(layer_sizes)
            .map(|(m, &n)| LayerBits::filled(m.width, n, m.word))
            .collect())
    }

    pub fn is_superset_of(&self, other: &ProtectionPlan) -> bool {
        self.masks.len() == other.masks.len()
            && self
                .masks
                .iter()
                .zip(&other.masks)
                .all(|(a, b)| a.is_superset_of(*b))
    }
}

/// TopBits second round: while the protected prefixes `actions` exceed the
/// redundancy budget, walk the layers in order decrementing one count at a
/// time, stopping as soon as the budget is met. The walk restarts at layer 0
/// until it succeeds or every count is zero.
pub fn topbits_adjust(
    actions: &[u32],
    layer_sizes: &[usize],
    width: u32,
    ecc: &EccSpec,
    p: f64,
    target_r: f64,
) -> Result<Vec<u32>> {
    if let Some(&a) = actions.iter().find(|&&a| a > width) {
        return Err(Error::param(format!("action {a} exceeds width {width}")));
    }
    let r_of = |counts: &[u32]| -> Result<f64> {
        let masks: Vec<u32> = counts
            .iter()
            .map(|&c| BitMaskVector::top(c, width).map(|m| m.word))
            .collect::<Result<_>>()?;
        Ok(redundancy(&masks, layer_sizes, width, ecc, p)?.r)
    };
    let mut out = actions.to_vec();
    if r_of(&out)? <= target_r {
        return Ok(out);
    }
    while out.iter().any(|&a| a > 0) {
        for i in 0..out.len() {
            if out[i] == 0 {
                continue;
            }
            out[i] -= 1;
            if r_of(&out)? <= target_r {
                return Ok(out);
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardParams {
    /// Weight of the penalty for exceeding the budget.
    pub beta_plus: f64,
    /// Weight of the penalty for leaving budget unused.
    pub beta_minus: f64,
    /// Discount across layers within one iteration.
    pub gamma: f64,
    /// Decay of the reward moving average used as the critic baseline.
    pub baseline_decay: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self {
            beta_plus: 1.0,
            beta_minus: 0.05,
            gamma: 1.0,
            baseline_decay: 0.95,
        }
    }
}

impl RewardParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta_plus > 0.0 && self.beta_minus > 0.0) {
            return Err(Error::param("reward weights must be positive"));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::param(format!(
                "discount {} outside [0, 1]",
                self.gamma
            )));
        }
        if !(0.0..=1.0).contains(&self.baseline_decay) {
            return Err(Error::param(format!(
                "baseline decay {} outside [0, 1]",
                self.baseline_decay
            )));
        }
        Ok(())
    }
}

/// Budget penalty: `beta_plus (target - r)` above the budget,
/// `beta_minus (r - target)` below it. Never positive.
pub fn redundancy_penalty(r: f64, target_r: f64, params: &RewardParams) -> f64 {
    if r >= target_r {
        params.beta_plus * (target_r - r)
    } else {
        params.beta_minus * (r - target_r)
    }
}

pub fn reward_topbits(accuracy: f64, clean_accuracy: f64) -> f64 {
    accuracy - clean_accuracy
}

pub fn reward_bitmask(
    accuracy: f64,
    clean_accuracy: f64,
    r: f64,
    target_r: f64,
    params: &RewardParams,
) -> f64 {
    accuracy - clean_accuracy + redundancy_penalty(r, target_r, params)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationResult {
    pub mean: f64,
    /// Sample standard deviation over trials.
    pub std: f64,
    /// Achieved redundancy of the evaluated plan.
    pub r: f64,
    /// Accuracy of each trial, in trial order.
    pub accuracies: Vec<f64>,
}

impl EvaluationResult {
    pub fn from_accuracies(accuracies: Vec<f64>, r: f64) -> Self {
        Self {
            mean: stats::mean(&accuracies),
            std: stats::std_dev(&accuracies),
            r,
            accuracies,
        }
    }

    pub fn std_err(&self) -> f64 {
        stats::std_err(&self.accuracies)
    }
}

/// A model, its weight encoding and an evaluation subset, prepared once for
/// repeated noisy evaluations of protection plans.
#[derive(Clone, Debug)]
pub struct PlanEvaluator {
    model: NetworkModel,
    repr: WeightRepr,
    bits: Vec<LayerBits>,
    layer_sizes: Vec<usize>,
    eval: EvalSet,
    clean_accuracy: f64,
}

impl PlanEvaluator {
    /// The clean accuracy is measured on the decoded clean bits, so it
    /// includes any quantization effect of `repr`.
    pub fn new(model: NetworkModel, repr: WeightRepr, eval: EvalSet) -> Result<Self> {
        let bits = model_to_bits(&model, &repr)?;
        let decoded = crate::codec::bits_to_model(&model, &bits, &repr)?;
        let clean_accuracy = eval.accuracy(&decoded)?;
        let layer_sizes = model.layer_sizes();
        Ok(Self {
            model: decoded,
            repr,
            bits,
            layer_sizes,
            eval,
            clean_accuracy,
        })
    }

    pub fn model(&self) -> &NetworkModel {
        &self.model
    }

    pub fn repr(&self) -> &WeightRepr {
        &self.repr
    }

    pub fn bits(&self) -> &[LayerBits] {
        &self.bits
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn width(&self) -> u32 {
        self.repr.width()
    }

    pub fn eval_set(&self) -> &EvalSet {
        &self.eval
    }

    pub fn clean_accuracy(&self) -> f64 {
        self.clean_accuracy
    }

    fn check(&self, plan: &ProtectionPlan) -> Result<()> {
        if plan.layers() != self.layer_sizes.len() || plan.width() != self.width() {
            return Err(Error::shape(format!(
                "plan has {} masks of {} bits, model has {} layers of {}-bit weights",
                plan.layers(),
                plan.width(),
                self.layer_sizes.len(),
                self.width()
            )));
        }
        Ok(())
    }

    /// Accuracy after one pass of `bits` through the protected channel.
    fn accuracy_with(&self, plan: &ProtectionPlan, chan: &ChannelSpec) -> Result<f64> {
        let outcome = simulate_protection(&self.bits, &plan.mask_words(), &plan.ecc(), chan)?;
        self.accuracy_of_bits(&outcome.bits)
    }

    /// Accuracy of the model whose weights decode from `bits`.
    pub fn accuracy_of_bits(&self, bits: &[LayerBits]) -> Result<f64> {
        let noisy = crate::codec::bits_to_model(&self.model, bits, &self.repr)?;
        self.eval.accuracy(&noisy)
    }

    /// One noise draw using the channel's own seed.
    pub fn single_trial(&self, plan: &ProtectionPlan, chan: &ChannelSpec) -> Result<f64> {
        self.check(plan)?;
        self.accuracy_with(plan, chan)
    }

    /// Mean and spread of accuracy over `trials` draws; trial `t` uses
    /// `chan.for_trial(t)`, so equal seeds give matched noise across plans.
    pub fn evaluate(
        &self,
        plan: &ProtectionPlan,
        chan: &ChannelSpec,
        trials: usize,
    ) -> Result<EvaluationResult> {
        if trials == 0 {
            return Err(Error::param("at least one trial is required"));
        }
        self.check(plan)?;
        let r = plan.redundancy(&self.layer_sizes, chan.p())?.r;
        let accuracies = (0..trials as u64)
            .into_par_iter()
            .map(|t| self.accuracy_with(plan, &chan.for_trial(t)))
            .collect::<Result<Vec<_>>>()?;
        Ok(EvaluationResult::from_accuracies(accuracies, r))
    }
}

/// Evaluates `plan` on the first `limit` samples of `dataset`.
pub fn evaluate_plan(
    model: &NetworkModel,
    repr: WeightRepr,
    plan: &ProtectionPlan,
    chan: &ChannelSpec,
    dataset: &crate::Dataset,
    trials: usize,
    limit: usize,
) -> Result<EvaluationResult> {
    let evaluator = PlanEvaluator::new(model.clone(), repr, EvalSet::new(dataset, limit)?)?;
    evaluator.evaluate(plan, chan, trials)
}

pub const PLAN_HEADER: &str = "# fecnn protection plan v1";

/// Text form of a plan together with the channel it was built for.
///
/// ```text
/// # fecnn protection plan v1
/// ecc = bch:8191:6722:115
/// ber = 0.01
/// width = 8
/// target_r = 0.05
/// achieved_r = 0.04
/// layer 0 = 11000000
/// layer 1 = 10100000
/// ```
///
/// `target_r` may be `none`. Lines starting with `#` after the header and
/// blank lines are ignored. Floats use the shortest text that reads back to
/// the same value.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanFile {
    pub plan: ProtectionPlan,
    pub ber: f64,
    pub achieved_r: f64,
}

impl PlanFile {
    /// Records `plan` with its redundancy on a channel of BER `ber`.
    pub fn new(plan: ProtectionPlan, layer_sizes: &[usize], ber: f64) -> Result<Self> {
        let achieved_r = plan.redundancy(layer_sizes, ber)?.r;
        Ok(Self {
            plan,
            ber,
            achieved_r,
        })
    }
}

impl fmt::Display for PlanFile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{PLAN_HEADER}")?;
        writeln!(f, "ecc = {}", self.plan.ecc)?;
        writeln!(f, "ber = {:?}", self.ber)?;
        writeln!(f, "width = {}", self.plan.width())?;
        match self.plan.target_r {
            Some(t) => writeln!(f, "target_r = {t:?}")?,
            None => writeln!(f, "target_r = none")?,
        }
        writeln!(f, "achieved_r = {:?}", self.achieved_r)?;
        for (i, m) in self.plan.masks.iter().enumerate() {
            writeln!(f, "layer {i} = {m}")?;
        }
        Ok(())
    }
}

impl FromStr for PlanFile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |detail: String| Error::format("plan file", detail);
        let mut lines = s.lines().map(str::trim);
        if lines.next() != Some(PLAN_HEADER) {
            return Err(bad(format!("missing header {PLAN_HEADER:?}")));
        }
        let mut ecc = None;
        let mut ber = None;
        let mut width = None;
        let mut target_r = None;
        let mut achieved_r = None;
        let mut masks = Vec::new();
        for line in lines {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("no `=` in {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            let float = |v: &str| v.parse::<f64>().map_err(|e| bad(format!("{key}: {e}")));
            match key {
                "ecc" => ecc = Some(value.parse::<EccSpec>()?),
                "ber" => ber = Some(float(value)?),
                "width" => {
                    width = Some(
                        value
                            .parse::<u32>()
                            .map_err(|e| bad(format!("width: {e}")))?,
                    )
                }
                "target_r" => {
                    target_r = Some(if value == "none" {
                        None
                    } else {
                        Some(float(value)?)
                    })
                }
                "achieved_r" => achieved_r = Some(float(value)?),
                _ => {
                    let index = key
                        .strip_prefix("layer ")
                        .and_then(|i| i.trim().parse::<usize>().ok())
                        .ok_or_else(|| bad(format!("unknown key {key:?}")))?;
                    if index != masks.len() {
                        return Err(bad(format!("layer {index} out of order")));
                    }
                    masks.push(value.parse::<BitMaskVector>()?);
                }
            }
        }
        let missing = |k: &str| bad(format!("missing `{k}`"));
        let width = width.ok_or_else(|| missing("width"))?;
        if let Some(m) = masks.iter().find(|m| m.width != width) {
            return Err(bad(format!("mask {m} is not {width} bits wide")));
        }
        let plan = ProtectionPlan::new(
            masks,
            ecc.ok_or_else(|| missing("ecc"))?,
            target_r.ok_or_else(|| missing("target_r"))?,
        )?;
        Ok(Self {
            plan,
            ber: ber.ok_or_else(|| missing("ber"))?,
            achieved_r: achieved_r.ok_or_else(|| missing("achieved_r"))?,
        })
    }
}
