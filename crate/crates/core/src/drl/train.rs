use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::agent::{Agent, AgentConfig};
use super::replay::{ReplayBuffer, Transition};
use super::state::{Action, ActionMode, StateEncoder};
use crate::channel::{derive_seed, trial_seed, ChannelSpec};
use crate::ecc::EccSpec;
use crate::nn::LayerMeta;
use crate::scheme::{
    reward_bitmask, reward_topbits, topbits_adjust, BitMaskVector, EvaluationResult, PlanEvaluator,
    ProtectionPlan, RewardParams,
};
use crate::{Error, Result};

const REWARD_SALT: u64 = 0x5EED_0F2E_3A2D_0001;

/// Training budget and hyperparameters of the optimizer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DrlConfig {
    /// Number of iterations; each proposes one plan for the whole model.
    pub iterations: usize,
    /// Minibatch updates after each iteration; `None` means one per layer.
    pub updates_per_iteration: Option<usize>,
    pub batch_size: usize,
    pub replay_capacity: usize,
    /// Exploration noise standard deviation at the first iteration.
    pub noise_start: f64,
    pub noise_end: f64,
    /// Fraction of the budget over which the noise decays linearly.
    pub noise_decay_fraction: f64,
    /// Feasible plans with the best training rewards kept for re-evaluation.
    pub top_plans: usize,
    pub reward: RewardParams,
    pub agent: AgentConfig,
}

impl Default for DrlConfig {
    fn default() -> Self {
        Self {
            iterations: 300,
            updates_per_iteration: None,
            batch_size: 64,
            replay_capacity: 2000,
            noise_start: 0.5,
            noise_end: 0.05,
            noise_decay_fraction: 0.5,
            top_plans: 5,
            reward: RewardParams::default(),
            agent: AgentConfig::default(),
        }
    }
}

impl DrlConfig {
    pub fn validate(&self) -> Result<()> {
        self.reward.validate()?;
        if self.batch_size == 0 || self.replay_capacity == 0 || self.top_plans == 0 {
            return Err(Error::param(
                "batch size, replay capacity and plan count must be positive",
            ));
        }
        if self.updates_per_iteration == Some(0) {
            return Err(Error::param("updates per iteration must be positive"));
        }
        if !(self.noise_start >= 0.0 && self.noise_end >= 0.0) {
            return Err(Error::param("noise scales must be nonnegative"));
        }
        if !(0.0..=1.0).contains(&self.noise_decay_fraction) {
            return Err(Error::param("noise decay fraction must be in [0, 1]"));
        }
        if self.agent.hidden.is_empty() || self.agent.hidden.contains(&0) {
            return Err(Error::param("agent hidden layers must be nonempty"));
        }
        Ok(())
    }

    /// Exploration noise at iteration `it`.
    pub fn noise_at(&self, it: usize) -> f64 {
        let span = self.noise_decay_fraction * self.iterations as f64;
        let frac = if span <= 0.0 {
            1.0
        } else {
            (it as f64 / span).min(1.0)
        };
        self.noise_start + (self.noise_end - self.noise_start) * frac
    }
}

/// What is being protected and under which budget.
#[derive(Clone, Debug, PartialEq)]
pub struct Problem {
    pub metas: Vec<LayerMeta>,
    pub layer_sizes: Vec<usize>,
    pub width: u32,
    pub ecc: EccSpec,
    pub p: f64,
    pub target_r: f64,
    pub mode: ActionMode,
}

impl Problem {
    pub fn for_evaluator(
        evaluator: &PlanEvaluator,
        ecc: EccSpec,
        p: f64,
        target_r: f64,
        mode: ActionMode,
    ) -> Self {
        Self {
            metas: evaluator.model().layer_metadata(),
            layer_sizes: evaluator.layer_sizes().to_vec(),
            width: evaluator.width(),
            ecc,
            p,
            target_r,
            mode,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.metas.is_empty() || self.metas.len() != self.layer_sizes.len() {
            return Err(Error::shape("layer metadata and sizes disagree"));
        }
        if !(self.target_r >= 0.0) {
            return Err(Error::param(format!(
                "target redundancy {} must be nonnegative",
                self.target_r
            )));
        }
        // fails early for degenerate ideal-code channels
        self.ecc.overhead(self.p)?;
        Ok(())
    }

    fn redundancy(&self, plan: &ProtectionPlan) -> Result<f64> {
        Ok(plan.redundancy(&self.layer_sizes, self.p)?.r)
    }

    /// The most protective uniform baseline within budget.
    pub fn baseline_fallback(&self) -> Result<ProtectionPlan> {
        let mut best = ProtectionPlan::baseline(0, self.layer_sizes.len(), self.width, self.ecc)?;
        for t in 1..=self.width {
            let plan = ProtectionPlan::baseline(t, self.layer_sizes.len(), self.width, self.ecc)?;
            if self.redundancy(&plan)? <= self.target_r {
                best = plan;
            } else {
                break;
            }
        }
        Ok(best.with_target(Some(self.target_r)))
    }

    /// Plan for raw layer actions, after the TopBits budget adjustment.
    pub fn plan_for(&self, actions: &[Action]) -> Result<(ProtectionPlan, Vec<Action>)> {
        let final_actions = match self.mode {
            ActionMode::BitMask => actions.to_vec(),
            ActionMode::TopBits => {
                let counts: Vec<u32> = actions
                    .iter()
                    .map(|a| match a {
                        Action::Top(c) => Ok(*c),
                        Action::Mask(_) => Err(Error::param("mask action in TopBits mode")),
                    })
                    .collect::<Result<_>>()?;
                topbits_adjust(
                    &counts,
                    &self.layer_sizes,
                    self.width,
                    &self.ecc,
                    self.p,
                    self.target_r,
                )?
                .into_iter()
                .map(Action::Top)
                .collect()
            }
        };
        let masks = final_actions
            .iter()
            .map(|a| match a {
                Action::Mask(flags) => BitMaskVector::from_flags(flags),
                Action::Top(c) => BitMaskVector::top(*c, self.width),
            })
            .collect::<Result<Vec<_>>>()?;
        let plan = ProtectionPlan::new(masks, self.ecc, Some(self.target_r))?;
        Ok((plan, final_actions))
    }
}

/// Outcome of one training evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Feedback {
    pub accuracy: f64,
    pub reward: f64,
}

/// Supplies rewards during training and the final evaluation of candidates.
pub trait RewardSource {
    fn reward(&mut self, plan: &ProtectionPlan, r: f64, iteration: u64) -> Result<Feedback>;
    fn final_evaluation(&mut self, plan: &ProtectionPlan) -> Result<EvaluationResult>;
}

/// Rewards from noisy classification accuracy: one noise draw per training
/// iteration, `final_trials` matched draws for the final evaluation.
pub struct AccuracyReward<'a> {
    evaluator: &'a PlanEvaluator,
    channel: ChannelSpec,
    reward_seed: u64,
    mode: ActionMode,
    params: RewardParams,
    target_r: f64,
    final_trials: usize,
}

impl<'a> AccuracyReward<'a> {
    /// `channel` carries the evaluation seed; training draws use an
    /// independent stream derived from `training_seed`.
    pub fn new(
        evaluator: &'a PlanEvaluator,
        channel: ChannelSpec,
        training_seed: u64,
        problem: &Problem,
        params: RewardParams,
        final_trials: usize,
    ) -> Self {
        Self {
            evaluator,
            channel,
            reward_seed: derive_seed(training_seed, REWARD_SALT),
            mode: problem.mode,
            params,
            target_r: problem.target_r,
            final_trials,
        }
    }
}

impl RewardSource for AccuracyReward<'_> {
    fn reward(&mut self, plan: &ProtectionPlan, r: f64, iteration: u64) -> Result<Feedback> {
        let chan = self
            .channel
            .with_seed(trial_seed(self.reward_seed, iteration));
        let accuracy = self.evaluator.single_trial(plan, &chan)?;
        let clean = self.evaluator.clean_accuracy();
        let reward = match self.mode {
            ActionMode::TopBits => reward_topbits(accuracy, clean),
            ActionMode::BitMask => reward_bitmask(accuracy, clean, r, self.target_r, &self.params),
        };
        Ok(Feedback { accuracy, reward })
    }

    fn final_evaluation(&mut self, plan: &ProtectionPlan) -> Result<EvaluationResult> {
        self.evaluator
            .evaluate(plan, &self.channel, self.final_trials)
    }
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub iteration: usize,
    pub r: f64,
    #[serde(rename = "P")]
    pub accuracy: f64,
    #[serde(rename = "R")]
    pub reward: f64,
    /// Mean over this iteration's updates; absent before training starts.
    pub loss_actor: Option<f64>,
    pub loss_critic: Option<f64>,
}

/// A feasible plan kept for final re-evaluation.
#[derive(Clone, Debug)]
pub struct Candidate {
    pub plan: ProtectionPlan,
    pub training_reward: f64,
    pub iteration: usize,
    pub evaluation: Option<EvaluationResult>,
}

#[derive(Clone, Debug)]
pub struct OptimizationResult {
    /// Best re-evaluated feasible plan, or the baseline fallback.
    pub plan: ProtectionPlan,
    pub evaluation: EvaluationResult,
    /// Plan of the final policy without exploration noise.
    pub greedy_plan: Option<ProtectionPlan>,
    pub candidates: Vec<Candidate>,
    pub log: Vec<LogRow>,
    pub agent: Option<Agent>,
    pub used_fallback: bool,
}

fn mean_of(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

fn propose(
    agent: &Agent,
    encoder: &StateEncoder,
    problem: &Problem,
    noise: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Action>> {
    let mut prev = Action::initial_encoding(problem.mode, problem.width);
    let mut actions = Vec::with_capacity(encoder.layers());
    for i in 0..encoder.layers() {
        let a = agent.act(
            &encoder.state(i, &prev),
            noise,
            problem.mode,
            problem.width,
            rng,
        )?;
        prev = a.encode(problem.width);
        actions.push(a);
    }
    Ok(actions)
}

fn remember(
    candidates: &mut Vec<Candidate>,
    plan: &ProtectionPlan,
    reward: f64,
    iteration: usize,
    keep: usize,
) {
    if let Some(c) = candidates
        .iter_mut()
        .find(|c| c.plan.masks() == plan.masks())
    {
        if reward > c.training_reward {
            c.training_reward = reward;
            c.iteration = iteration;
        }
    } else {
        candidates.push(Candidate {
            plan: plan.clone(),
            training_reward: reward,
            iteration,
            evaluation: None,
        });
    }
    // stable: earlier plans win ties
    candidates.sort_by(|a, b| b.training_reward.total_cmp(&a.training_reward));
    candidates.truncate(keep);
}

/// Layer-sequential actor-critic search for a protection plan.
///
/// Each iteration the actor picks an action per layer in order, each state
/// seeing the previous layer's action; TopBits actions are then cut down to
/// the budget and the states rebuilt from the final actions. The plan's
/// reward is shared by all of the iteration's transitions. After the budget
/// is spent, the best feasible plans by training reward are re-evaluated and
/// the best of those is returned.
pub fn run_optimization(
    problem: &Problem,
    config: &DrlConfig,
    source: &mut dyn RewardSource,
    seed: u64,
) -> Result<OptimizationResult> {
    problem.validate()?;
    config.validate()?;
    if config.iterations == 0 {
        let plan = problem.baseline_fallback()?;
        let evaluation = source.final_evaluation(&plan)?;
        return Ok(OptimizationResult {
            plan,
            evaluation,
            greedy_plan: None,
            candidates: Vec::new(),
            log: Vec::new(),
            agent: None,
            used_fallback: true,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let encoder = StateEncoder::new(&problem.metas, problem.mode, problem.width)?;
    let mut agent = Agent::new(
        encoder.state_dim(),
        encoder.action_dim(),
        &config.agent,
        &mut rng,
    )?;
    let mut buffer = ReplayBuffer::new(config.replay_capacity)?;
    let layers = encoder.layers();
    let updates = config.updates_per_iteration.unwrap_or(layers);
    let mut baseline: Option<f64> = None;
    let mut candidates: Vec<Candidate> = Vec::new();
    let mut log = Vec::with_capacity(config.iterations);

    for it in 0..config.iterations {
        let raw = propose(&agent, &encoder, problem, config.noise_at(it), &mut rng)?;
        let (plan, actions) = problem.plan_for(&raw)?;
        let r = problem.redundancy(&plan)?;
        let fb = source.reward(&plan, r, it as u64)?;

        let states = encoder.states(&actions);
        for i in 0..layers {
            let terminal = i + 1 == layers;
            buffer.push(Transition {
                state: states[i].clone(),
                action: actions[i].encode(problem.width),
                next_state: if terminal {
                    vec![0.0; encoder.state_dim()]
                } else {
                    states[i + 1].clone()
                },
                reward: fb.reward,
                terminal,
            });
        }
        let decay = config.reward.baseline_decay;
        let b = match baseline {
            None => fb.reward,
            Some(b) => decay * b + (1.0 - decay) * fb.reward,
        };
        baseline = Some(b);

        let mut actor_losses = Vec::new();
        let mut critic_losses = Vec::new();
        if buffer.len() >= config.batch_size {
            for _ in 0..updates {
                let batch = buffer.sample(config.batch_size, &mut rng);
                let (la, lc) = agent.train_step(&batch, config.reward.gamma, b)?;
                actor_losses.push(la);
                critic_losses.push(lc);
            }
        }

        if r <= problem.target_r {
            remember(&mut candidates, &plan, fb.reward, it, config.top_plans);
        }
        log.push(LogRow {
            iteration: it,
            r,
            accuracy: fb.accuracy,
            reward: fb.reward,
            loss_actor: mean_of(&actor_losses),
            loss_critic: mean_of(&critic_losses),
        });
    }

    let greedy_raw = propose(&agent, &encoder, problem, 0.0, &mut rng)?;
    let greedy_plan = problem.plan_for(&greedy_raw)?.0;

    let mut best: Option<(usize, f64)> = None;
    for (i, c) in candidates.iter_mut().enumerate() {
        let ev = source.final_evaluation(&c.plan)?;
        if best.map_or(true, |(_, m)| ev.mean > m) {
            best = Some((i, ev.mean));
        }
        c.evaluation = Some(ev);
    }
    let (plan, evaluation, used_fallback) = match best {
        Some((i, _)) => (
            candidates[i].plan.clone(),
            candidates[i].evaluation.clone().expect("evaluated above"),
            false,
        ),
        None => {
            let plan = problem.baseline_fallback()?;
            let ev = source.final_evaluation(&plan)?;
            (plan, ev, true)
        }
    };
    Ok(OptimizationResult {
        plan,
        evaluation,
        greedy_plan: Some(greedy_plan),
        candidates,
        log,
        agent: Some(agent),
        used_fallback,
    })
}
