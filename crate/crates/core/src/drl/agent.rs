use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::replay::Transition;
use super::state::{quantize_bitmask, quantize_topbits, Action, ActionMode};
use crate::gradnet::{soft_update, Adam, GradNet, OutputActivation};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"FECNNCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Network and optimizer settings of the actor-critic agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub hidden: Vec<usize>,
    pub actor_lr: f64,
    pub critic_lr: f64,
    /// Soft target update step.
    pub tau: f64,
    /// Scale applied to the actor's initial output layer.
    pub actor_output_scale: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            hidden: vec![400, 300],
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            tau: 0.01,
            actor_output_scale: 1e-3,
        }
    }
}

/// Actor output plus exploration noise, rounded to a discrete action.
///
/// `output` is the actor's sigmoid output; `noise_scale` is the standard
/// deviation of the Gaussian noise in the same normalized units. TopBits
/// outputs are scaled by `width` before rounding.
pub fn act<R: Rng + ?Sized>(
    output: &[f64],
    noise_scale: f64,
    mode: ActionMode,
    width: u32,
    rng: &mut R,
) -> Action {
    let noisy: Vec<f64> = output
        .iter()
        .map(|&o| {
            let n = if noise_scale > 0.0 {
                noise_scale * rng.sample::<f64, _>(StandardNormal)
            } else {
                0.0
            };
            (o + n).clamp(0.0, 1.0)
        })
        .collect();
    match mode {
        ActionMode::BitMask => Action::Mask(quantize_bitmask(&noisy)),
        ActionMode::TopBits => Action::Top(quantize_topbits(noisy[0] * f64::from(width), width)),
    }
}

fn critic_inputs<'a>(pairs: impl Iterator<Item = (&'a [f64], &'a [f64])>) -> (Vec<f64>, usize) {
    let mut x = Vec::new();
    let mut n = 0;
    for (s, a) in pairs {
        x.extend_from_slice(s);
        x.extend_from_slice(a);
        n += 1;
    }
    (x, n)
}

/// Critic estimate for one state and encoded action.
pub fn q_value(critic: &GradNet, state: &[f64], action: &[f64]) -> Result<f64> {
    let mut x = state.to_vec();
    x.extend_from_slice(action);
    Ok(critic.forward(&x)?[0])
}

/// One optimizer step on the mean squared temporal-difference error
/// `(Q(s, a) - gamma Q'(s', mu'(s')) - (R - baseline))^2`. Terminal samples
/// drop the bootstrap term. Returns the loss before the step.
pub fn critic_update(
    critic: &mut GradNet,
    optimizer: &mut Adam,
    target_actor: &GradNet,
    target_critic: &GradNet,
    batch: &[&Transition],
    gamma: f64,
    baseline: f64,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::param("empty minibatch"));
    }
    let mut targets: Vec<f64> = batch.iter().map(|t| t.reward - baseline).collect();
    let boot: Vec<usize> = (0..batch.len()).filter(|&i| !batch[i].terminal).collect();
    if gamma != 0.0 && !boot.is_empty() {
        let next: Vec<f64> = boot
            .iter()
            .flat_map(|&i| batch[i].next_state.iter().copied())
            .collect();
        let next_actions = target_actor.forward_batch(&next, boot.len())?;
        let adim = target_actor.output_size();
        let (x, n) = critic_inputs(boot.iter().enumerate().map(|(j, &i)| {
            (
                batch[i].next_state.as_slice(),
                &next_actions[j * adim..(j + 1) * adim],
            )
        }));
        let q_next = target_critic.forward_batch(&x, n)?;
        for (j, &i) in boot.iter().enumerate() {
            targets[i] += gamma * q_next[j];
        }
    }
    let (x, n) = critic_inputs(
        batch
            .iter()
            .map(|t| (t.state.as_slice(), t.action.as_slice())),
    );
    let cache = critic.forward_cached(&x, n)?;
    let q = cache.output();
    let scale = 2.0 / n as f64;
    let mut loss = 0.0;
    let grad: Vec<f64> = q
        .iter()
        .zip(&targets)
        .map(|(q, y)| {
            loss += (q - y) * (q - y);
            scale * (q - y)
        })
        .collect();
    let (grads, _) = critic.backward(&cache, &grad)?;
    optimizer.step(critic, &grads)?;
    Ok(loss / n as f64)
}

/// One ascent step of the actor on the mean of `Q(s, mu(s))` with the critic
/// frozen. Returns the actor loss `-mean Q` before the step.
pub fn actor_update(
    actor: &mut GradNet,
    optimizer: &mut Adam,
    critic: &GradNet,
    batch: &[&Transition],
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::param("empty minibatch"));
    }
    let n = batch.len();
    let sdim = actor.input_size();
    let adim = actor.output_size();
    let states: Vec<f64> = batch.iter().flat_map(|t| t.state.iter().copied()).collect();
    let actor_cache = actor.forward_cached(&states, n)?;
    let actions = actor_cache.output();
    let (x, _) = critic_inputs((0..n).map(|i| {
        (
            &states[i * sdim..(i + 1) * sdim],
            &actions[i * adim..(i + 1) * adim],
        )
    }));
    let critic_cache = critic.forward_cached(&x, n)?;
    let loss = -critic_cache.output().iter().sum::<f64>() / n as f64;
    let (_, dx) = critic.backward(&critic_cache, &vec![-1.0 / n as f64; n])?;
    let width = sdim + adim;
    let da: Vec<f64> = (0..n)
        .flat_map(|i| dx[i * width + sdim..(i + 1) * width].iter().copied())
        .collect();
    let (grads, _) = actor.backward(&actor_cache, &da)?;
    optimizer.step(actor, &grads)?;
    Ok(loss)
}

/// Actor, critic, their target copies and the two optimizers.
#[derive(Clone, Debug)]
pub struct Agent {
    pub actor: GradNet,
    pub critic: GradNet,
    pub target_actor: GradNet,
    pub target_critic: GradNet,
    actor_opt: Adam,
    critic_opt: Adam,
    tau: f64,
}

impl Agent {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        config: &AgentConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let mut sizes = vec![state_dim];
        sizes.extend(&config.hidden);
        sizes.push(action_dim);
        let mut actor = GradNet::new(&sizes, OutputActivation::Sigmoid, rng)?;
        actor.scale_output_layer(config.actor_output_scale);
        sizes[0] = state_dim + action_dim;
        *sizes.last_mut().expect("nonempty") = 1;
        let critic = GradNet::new(&sizes, OutputActivation::Identity, rng)?;
        Ok(Self {
            actor_opt: Adam::new(&actor, config.actor_lr)?,
            critic_opt: Adam::new(&critic, config.critic_lr)?,
            target_actor: actor.clone(),
            target_critic: critic.clone(),
            actor,
            critic,
            tau: config.tau,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.actor.input_size()
    }

    pub fn action_dim(&self) -> usize {
        self.actor.output_size()
    }

    pub fn policy(&self, state: &[f64]) -> Result<Vec<f64>> {
        self.actor.forward(state)
    }

    pub fn act<R: Rng + ?Sized>(
        &self,
        state: &[f64],
        noise_scale: f64,
        mode: ActionMode,
        width: u32,
        rng: &mut R,
    ) -> Result<Action> {
        Ok(act(&self.policy(state)?, noise_scale, mode, width, rng))
    }

    /// Critic step, actor step, then soft updates of both targets. Returns
    /// `(actor loss, critic loss)`.
    pub fn train_step(
        &mut self,
        batch: &[&Transition],
        gamma: f64,
        baseline: f64,
    ) -> Result<(f64, f64)> {
        let critic_loss = critic_update(
            &mut self.critic,
            &mut self.critic_opt,
            &self.target_actor,
            &self.target_critic,
            batch,
            gamma,
            baseline,
        )?;
        let actor_loss = actor_update(&mut self.actor, &mut self.actor_opt, &self.critic, batch)?;
        soft_update(&mut self.target_actor, &self.actor, self.tau)?;
        soft_update(&mut self.target_critic, &self.critic, self.tau)?;
        Ok((actor_loss, critic_loss))
    }

    /// Writes the four networks: magic, `u32` version, then actor, critic,
    /// target actor and target critic in the network format.
    pub fn write_checkpoint(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        for net in [
            &self.actor,
            &self.critic,
            &self.target_actor,
            &self.target_critic,
        ] {
            net.write_to(w)?;
        }
        Ok(())
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_checkpoint(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

/// The four networks stored in a checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub actor: GradNet,
    pub critic: GradNet,
    pub target_actor: GradNet,
    pub target_critic: GradNet,
}

impl Checkpoint {
    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::format("checkpoint", "bad magic"));
        }
        let mut v = [0u8; 4];
        r.read_exact(&mut v)?;
        let version = u32::from_le_bytes(v);
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(
                "checkpoint",
                format!("unsupported version {version}"),
            ));
        }
        let ckp = Self {
            actor: GradNet::read_from(r)?,
            critic: GradNet::read_from(r)?,
            target_actor: GradNet::read_from(r)?,
            target_critic: GradNet::read_from(r)?,
        };
        if !ckp.actor.same_architecture(&ckp.target_actor)
            || !ckp.critic.same_architecture(&ckp.target_critic)
        {
            return Err(Error::format(
                "checkpoint",
                "target networks differ from online networks",
            ));
        }
        Ok(ckp)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn transition(state: Vec<f64>, action: Vec<f64>, reward: f64) -> Transition {
        Transition {
            next_state: state.clone(),
            state,
            action,
            reward,
            terminal: false,
        }
    }

    #[test]
    fn noiseless_act_rounds_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = act(&[0.9, 0.2, 0.7, 0.4], 0.0, ActionMode::BitMask, 4, &mut rng);
        assert_eq!(a, Action::Mask(vec![true, false, true, false]));
        assert_eq!(
            act(&[0.95], 0.0, ActionMode::TopBits, 8, &mut rng),
            Action::Top(8)
        );
        assert_eq!(
            act(&[0.3], 0.0, ActionMode::TopBits, 8, &mut rng),
            Action::Top(2)
        );
    }

    #[test]
    fn zero_final_layer_critic_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut critic = GradNet::new(&[5, 16, 1], OutputActivation::Identity, &mut rng).unwrap();
        critic.scale_output_layer(0.0);
        assert_eq!(
            q_value(&critic, &[0.1, 0.2, 0.3], &[1.0, 0.0]).unwrap(),
            0.0
        );
    }

    #[test]
    fn actor_update_leaves_critic_alone() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut agent = Agent::new(
            3,
            2,
            &AgentConfig {
                hidden: vec![16, 8],
                ..Default::default()
            },
            &mut rng,
        )
        .unwrap();
        let batch_owned: Vec<Transition> = (0..8)
            .map(|i| transition(vec![0.1 * f64::from(i), 0.5, 0.2], vec![1.0, 0.0], -0.3))
            .collect();
        let batch: Vec<&Transition> = batch_owned.iter().collect();
        let critic = agent.critic.clone();
        let mut opt = Adam::new(&agent.actor, 1e-3).unwrap();
        actor_update(&mut agent.actor, &mut opt, &agent.critic, &batch).unwrap();
        assert_eq!(agent.critic, critic);
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let agent = Agent::new(
            4,
            2,
            &AgentConfig {
                hidden: vec![6],
                ..Default::default()
            },
            &mut rng,
        )
        .unwrap();
        let mut buf = Vec::new();
        agent.write_checkpoint(&mut buf).unwrap();
        let ckp = Checkpoint::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(ckp.actor, agent.actor);
        assert_eq!(ckp.target_critic, agent.target_critic);
        assert!(Checkpoint::read_from(&mut &buf[..20]).is_err());
    }
}
