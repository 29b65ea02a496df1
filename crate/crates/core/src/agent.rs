//! Deterministic actor-critic learner over encoder latents, with uniform
//! replay and decaying Gaussian exploration.

use std::collections::VecDeque;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::env::Observation;
use crate::error::{Error, Result};
use crate::models::{Actor, Critic, ModelConfig, ACTION_DIM};
use crate::nn::{soft_update, Optimizer, OptimizerKind, Parameters, Scalar};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub discount: f64,
    /// Polyak rate for the target networks.
    pub target_rate: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub noise_start: f64,
    pub noise_end: f64,
    /// Steps over which the noise decays linearly; `None` means the
    /// length of the phase being run.
    pub noise_decay_steps: Option<usize>,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    /// Environment steps between updates.
    pub update_every: usize,
    pub warmup_steps: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            discount: 0.99,
            target_rate: 0.01,
            batch_size: 256,
            buffer_capacity: 100_000,
            noise_start: 0.2,
            noise_end: 0.05,
            noise_decay_steps: None,
            learning_rate: 0.001,
            optimizer: OptimizerKind::Radam,
            update_every: 2,
            warmup_steps: 1000,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return Err(Error::Config(format!("agent.discount must be in (0, 1), got {}", self.discount)));
        }
        if !(self.target_rate > 0.0 && self.target_rate <= 1.0) {
            return Err(Error::Config(format!("agent.target_rate must be in (0, 1], got {}", self.target_rate)));
        }
        if self.batch_size == 0 || self.buffer_capacity == 0 || self.update_every == 0 {
            return Err(Error::Config("agent batch_size, buffer_capacity and update_every must be positive".into()));
        }
        if !(self.noise_start >= 0.0) || !(self.noise_end >= 0.0) {
            return Err(Error::Config("agent noise levels must be non-negative".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("agent.learning_rate must be positive".into()));
        }
        Ok(())
    }

    pub fn noise(&self, phase_steps: usize) -> NoiseSchedule {
        NoiseSchedule {
            start: self.noise_start,
            end: self.noise_end,
            decay_steps: self.noise_decay_steps.unwrap_or(phase_steps),
        }
    }
}

/// Linear decay from `start` to `end` over `decay_steps`, constant after.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_steps: usize,
}

impl NoiseSchedule {
    pub fn stddev(&self, step: usize) -> f64 {
        if self.decay_steps == 0 || step >= self.decay_steps {
            return self.end;
        }
        let frac = step as f64 / self.decay_steps as f64;
        self.start + (self.end - self.start) * frac
    }
}

/// Adds Gaussian noise to an action and clips it back into `[-1, 1]`.
pub fn perturb<R: Rng + ?Sized>(action: [f32; 2], stddev: f64, rng: &mut R) -> [f32; 2] {
    if stddev <= 0.0 {
        return action.map(|v| v.clamp(-1.0, 1.0));
    }
    let normal = Normal::new(0.0, stddev).expect("finite stddev");
    action.map(|v| (v as f64 + normal.sample(rng)).clamp(-1.0, 1.0) as f32)
}

pub fn random_action<R: Rng + ?Sized>(rng: &mut R) -> [f32; 2] {
    [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)]
}

/// One environment step as stored for pretraining.
#[derive(Clone, Debug)]
pub struct Transition {
    pub obs: Observation,
    pub action: [f32; 2],
    /// Task reward; never stored during reward-free exploration.
    pub reward: Option<f64>,
    pub next_obs: Observation,
    /// Observation `horizon` steps after `obs`, or the last one of the
    /// episode if it ended sooner.
    pub horizon_obs: Observation,
    /// Whether bootstrapping stops after this step.
    pub terminal: bool,
}

/// A step already passed through a frozen encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentTransition {
    pub latent: Vec<f32>,
    pub action: [f32; 2],
    pub reward: f64,
    pub next_latent: Vec<f32>,
    pub terminal: bool,
}

/// Bounded FIFO with uniform sampling with replacement.
#[derive(Clone, Debug)]
pub struct ReplayBuffer<T> {
    items: VecDeque<T>,
    capacity: usize,
    rng: ChaCha8Rng,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize, seed: u64) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
            capacity,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Appends, evicting the oldest item when full. Returns the evicted item.
    pub fn push(&mut self, item: T) -> Option<T> {
        let evicted = (self.items.len() == self.capacity).then(|| self.items.pop_front()).flatten();
        self.items.push_back(item);
        evicted
    }

    pub fn get(&self, index: usize) -> Option<&T> {
        self.items.get(index)
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.items.iter()
    }

    pub fn sample_indices(&mut self, batch_size: usize) -> Result<Vec<usize>> {
        if self.items.is_empty() {
            return Err(Error::Domain("cannot sample from an empty replay buffer".into()));
        }
        let n = self.items.len();
        Ok((0..batch_size).map(|_| self.rng.random_range(0..n)).collect())
    }

    pub fn sample(&mut self, batch_size: usize) -> Result<Vec<&T>> {
        let idx = self.sample_indices(batch_size)?;
        Ok(idx.into_iter().map(|i| &self.items[i]).collect())
    }
}

/// Inputs to one actor-critic update.
#[derive(Clone, Debug)]
pub struct DdpgBatch<T> {
    pub latents: Array2<T>,
    pub actions: Array2<T>,
    pub rewards: Array1<T>,
    pub next_latents: Array2<T>,
    /// 1 where bootstrapping stops.
    pub terminal: Array1<T>,
}

impl<T: Scalar> DdpgBatch<T> {
    pub fn from_latent_transitions(batch: &[&LatentTransition]) -> Self {
        let n = batch.len();
        let dim = batch.first().map_or(0, |t| t.latent.len());
        let f = |v: f32| T::from_f32(v).expect("finite");
        let mut latents = Array2::zeros((n, dim));
        let mut next_latents = Array2::zeros((n, dim));
        let mut actions = Array2::zeros((n, ACTION_DIM));
        let mut rewards = Array1::zeros(n);
        let mut terminal = Array1::zeros(n);
        for (i, t) in batch.iter().enumerate() {
            for j in 0..dim {
                latents[[i, j]] = f(t.latent[j]);
                next_latents[[i, j]] = f(t.next_latent[j]);
            }
            actions[[i, 0]] = f(t.action[0]);
            actions[[i, 1]] = f(t.action[1]);
            rewards[i] = T::from_f64_lossy(t.reward);
            terminal[i] = if t.terminal { T::one() } else { T::zero() };
        }
        Self {
            latents,
            actions,
            rewards,
            next_latents,
            terminal,
        }
    }

    fn validate(&self) -> Result<usize> {
        let n = self.latents.nrows();
        if n == 0 {
            return Err(Error::Domain("empty batch".into()));
        }
        let rows = [self.actions.nrows(), self.rewards.len(), self.next_latents.nrows(), self.terminal.len()];
        if let Some(&bad) = rows.iter().find(|&&r| r != n) {
            return Err(Error::shape("ddpg batch", n, bad));
        }
        Ok(n)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct UpdateMetrics {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub mean_reward: f64,
    pub mean_q: f64,
}

/// Actor, critic and their slowly tracking targets.
#[derive(Clone, Debug)]
pub struct Ddpg<T> {
    pub actor: Actor<T>,
    pub critic: Critic<T>,
    pub actor_target: Actor<T>,
    pub critic_target: Critic<T>,
    actor_opt: Optimizer<T>,
    critic_opt: Optimizer<T>,
    discount: f64,
    target_rate: f64,
}

impl<T: Scalar> Ddpg<T> {
    pub fn new<R: Rng + ?Sized>(model: &ModelConfig, agent: &AgentConfig, rng: &mut R) -> Self {
        let actor = Actor::new(model, rng);
        let critic = Critic::new(model, rng);
        Self::from_networks(actor, critic, agent)
    }

    /// Wraps existing networks; targets start as exact copies.
    pub fn from_networks(actor: Actor<T>, critic: Critic<T>, agent: &AgentConfig) -> Self {
        Self {
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor,
            critic,
            actor_opt: Optimizer::new(agent.optimizer, agent.learning_rate),
            critic_opt: Optimizer::new(agent.optimizer, agent.learning_rate),
            discount: agent.discount,
            target_rate: agent.target_rate,
        }
    }

    /// Greedy action for a single latent.
    pub fn act(&self, latent: ArrayView1<T>) -> Result<[f32; 2]> {
        let a = self.actor.act(latent.insert_axis(Axis(0)))?;
        let to = |v: T| v.to_f32().expect("finite");
        Ok([to(a[[0, 0]]), to(a[[0, 1]])])
    }

    pub fn update(&mut self, batch: &DdpgBatch<T>) -> Result<UpdateMetrics> {
        let n = self.validate_batch(batch)?;
        let inv_n = T::from_f64_lossy(1.0 / n as f64);
        let gamma = T::from_f64_lossy(self.discount);

        let next_actions = self.actor_target.act(batch.next_latents.view())?;
        let next_q = self.critic_target.value(batch.next_latents.view(), next_actions.view())?;
        let mut targets = batch.rewards.clone();
        for i in 0..n {
            targets[i] += gamma * (T::one() - batch.terminal[i]) * next_q[[i, 0]];
        }

        self.critic.zero_grad();
        let tape = self.critic.forward_tape(batch.latents.view(), batch.actions.view())?;
        let mut dq = Array2::zeros((n, 1));
        let mut critic_loss = 0.0;
        let mut mean_q = 0.0;
        for i in 0..n {
            let err = tape.output[[i, 0]] - targets[i];
            critic_loss += err.to_f64().unwrap().powi(2);
            mean_q += tape.output[[i, 0]].to_f64().unwrap();
            dq[[i, 0]] = T::from_f64_lossy(2.0) * err * inv_n;
        }
        self.critic.backward(&tape, dq);
        self.critic_opt.step(self.critic.params_mut());

        self.actor.zero_grad();
        let a_tape = self.actor.forward_tape(batch.latents.view())?;
        let q_tape = self.critic.forward_tape(batch.latents.view(), a_tape.output.view())?;
        let actor_loss = -q_tape.output.iter().map(|v| v.to_f64().unwrap()).sum::<f64>() / n as f64;
        let dq = Array2::from_elem((n, 1), -inv_n);
        let (_, da) = self.critic.backward(&q_tape, dq);
        // The critic only routes the policy gradient; its own step is done.
        self.critic.zero_grad();
        self.actor.backward(&a_tape, da);
        self.actor_opt.step(self.actor.params_mut());

        let tau = T::from_f64_lossy(self.target_rate);
        soft_update(&mut self.actor_target, &self.actor, tau);
        soft_update(&mut self.critic_target, &self.critic, tau);

        Ok(UpdateMetrics {
            critic_loss: critic_loss / n as f64,
            actor_loss,
            mean_reward: batch.rewards.iter().map(|v| v.to_f64().unwrap()).sum::<f64>() / n as f64,
            mean_q: mean_q / n as f64,
        })
    }

    fn validate_batch(&self, batch: &DdpgBatch<T>) -> Result<usize> {
        let n = batch.validate()?;
        if batch.rewards.iter().any(|r| !r.is_finite()) {
            return Err(Error::Domain("non-finite reward in update batch".into()));
        }
        Ok(n)
    }

    pub fn optimizer_kind(&self) -> OptimizerKind {
        self.actor_opt.kind()
    }

    pub fn updates_done(&self) -> u64 {
        self.actor_opt.steps_taken()
    }
}

impl<T: Scalar> Parameters<T> for Ddpg<T> {
    fn params(&self) -> Vec<&crate::nn::Param<T>> {
        let mut v = self.actor.params();
        v.extend(self.critic.params());
        v.extend(self.actor_target.params());
        v.extend(self.critic_target.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut crate::nn::Param<T>> {
        let mut v = self.actor.params_mut();
        v.extend(self.critic.params_mut());
        v.extend(self.actor_target.params_mut());
        v.extend(self.critic_target.params_mut());
        v
    }
}

/// Packs `f32` rows into a matrix.
pub fn stack_rows<T: Scalar>(rows: &[&[f32]]) -> Array2<T> {
    let dim = rows.first().map_or(0, |r| r.len());
    Array2::from_shape_fn((rows.len(), dim), |(i, j)| T::from_f32(rows[i][j]).expect("finite"))
}

pub fn row_to_f32<T: Scalar>(row: ArrayView1<T>) -> Vec<f32> {
    row.iter().map(|v| v.to_f32().expect("finite")).collect()
}

pub fn actions_array<T: Scalar>(actions: &[[f32; 2]]) -> Array2<T> {
    Array2::from_shape_fn((actions.len(), ACTION_DIM), |(i, j)| T::from_f32(actions[i][j]).expect("finite"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_model() -> ModelConfig {
        ModelConfig {
            latent_dim: 4,
            hidden_width: 16,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn fifo_eviction() {
        let mut buf = ReplayBuffer::new(3, 0);
        for i in 0..3 {
            assert_eq!(buf.push(i), None);
        }
        assert_eq!(buf.push(3), Some(0));
        assert_eq!(buf.iter().copied().collect::<Vec<_>>(), vec![1, 2, 3]);
    }

    #[test]
    fn empty_sample_is_error() {
        let mut buf: ReplayBuffer<u8> = ReplayBuffer::new(2, 0);
        assert!(buf.sample(1).is_err());
    }

    #[test]
    fn noise_schedule_endpoints() {
        let s = NoiseSchedule {
            start: 0.2,
            end: 0.05,
            decay_steps: 100,
        };
        assert_eq!(s.stddev(0), 0.2);
        assert!((s.stddev(50) - 0.125).abs() < 1e-12);
        assert_eq!(s.stddev(100), 0.05);
        assert_eq!(s.stddev(10_000), 0.05);
    }

    #[test]
    fn perturbed_actions_stay_in_box() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            let a = perturb([0.99, -0.99], 2.0, &mut rng);
            assert!(a.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn terminal_target_is_reward() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = AgentConfig {
            target_rate: 1.0,
            ..AgentConfig::default()
        };
        let mut agent = Ddpg::<f64>::new(&small_model(), &cfg, &mut rng);
        let batch = DdpgBatch {
            latents: Array2::ones((1, 4)),
            actions: Array2::zeros((1, 2)),
            rewards: Array1::from_elem(1, 0.7),
            next_latents: Array2::from_elem((1, 4), 1e6),
            terminal: Array1::ones(1),
        };
        let q = agent.critic.value(batch.latents.view(), batch.actions.view()).unwrap()[[0, 0]];
        let m = agent.update(&batch).unwrap();
        assert!((m.critic_loss - (q - 0.7).powi(2)).abs() < 1e-12);
        // With tau = 1 the targets equal the online networks.
        assert_eq!(agent.actor_target.param_hash(), agent.actor.param_hash());
        assert_eq!(agent.critic_target.param_hash(), agent.critic.param_hash());
    }

    #[test]
    fn target_update_is_exact_convex_combination() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = AgentConfig {
            target_rate: 0.1,
            ..AgentConfig::default()
        };
        let mut agent = Ddpg::<f64>::new(&small_model(), &cfg, &mut rng);
        // Make online and target differ first.
        let batch = DdpgBatch {
            latents: Array2::from_shape_fn((8, 4), |(i, j)| (i * 4 + j) as f64 / 32.0),
            actions: Array2::from_elem((8, 2), 0.3),
            rewards: Array1::from_elem(8, 1.0),
            next_latents: Array2::from_elem((8, 4), 0.5),
            terminal: Array1::zeros(8),
        };
        agent.update(&batch).unwrap();
        let before: Vec<f64> = agent.critic_target.params().iter().flat_map(|p| p.value.iter().copied()).collect();
        agent.update(&batch).unwrap();
        let online: Vec<f64> = agent.critic.params().iter().flat_map(|p| p.value.iter().copied()).collect();
        let after: Vec<f64> = agent.critic_target.params().iter().flat_map(|p| p.value.iter().copied()).collect();
        for ((a, b), o) in after.iter().zip(&before).zip(&online) {
            assert_eq!(*a, 0.1 * o + 0.9 * b);
        }
    }

    #[test]
    fn non_finite_reward_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut agent = Ddpg::<f32>::new(&small_model(), &AgentConfig::default(), &mut rng);
        let batch = DdpgBatch {
            latents: Array2::zeros((2, 4)),
            actions: Array2::zeros((2, 2)),
            rewards: Array1::from_vec(vec![0.0, f32::NAN]),
            next_latents: Array2::zeros((2, 4)),
            terminal: Array1::zeros(2),
        };
        assert!(matches!(agent.update(&batch), Err(Error::Domain(_))));
    }

    #[test]
    fn greedy_action_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let agent = Ddpg::<f32>::new(&small_model(), &AgentConfig::default(), &mut rng);
        let s = Array1::from_vec(vec![0.1, -0.3, 0.7, 0.0]);
        assert_eq!(agent.act(s.view()).unwrap(), agent.act(s.view()).unwrap());
    }
}
