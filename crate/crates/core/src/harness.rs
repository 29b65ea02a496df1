//! Training workflows: reward-free exploration, finetuning with a frozen
//! encoder, greedy evaluation, and multi-seed comparison matrices.

use std::collections::{BTreeMap, VecDeque};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use ndarray::{Array1, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::agent::{
    actions_array, perturb, random_action, row_to_f32, Ddpg, DdpgBatch, LatentTransition, ReplayBuffer, Transition,
    UpdateMetrics,
};
use crate::checkpoint::{Checkpoint, CheckpointManifest, FORMAT_VERSION};
use crate::config::{Config, Method, PolicyInit};
use crate::curiosity::{
    batch_rewards, mean_reward, objective, sample_losses, CrossmodalTargets, CuriosityBatch, CuriosityModels, Objective,
};
use crate::env::{Action, Environment, Observation, PushWorld, Task};
use crate::error::{Error, Result};
use crate::models::{
    observation_batch, Actor, Critic, CrossmodalHead, CrossmodalMode, ForwardModel, InverseModel, VisualEncoder,
};
use crate::nn::{Optimizer, Parameters};
use crate::report::{
    self, aggregate, curve_auc, mean_stderr, smoothed_curve, EpisodeRow, SummaryRow, UpdateRow, CHECKPOINT_FILE,
    EPISODES_FILE, MANIFEST_FILE, UPDATES_FILE,
};
use crate::sound::{discriminate, resolve_threshold, AudioPipeline, RandomAudioEncoder, SpectrogramStack};

pub const PRETRAIN: &str = "pretrain";
pub const FINETUNE: &str = "finetune";

/// Module names inside checkpoints.
pub mod modules {
    pub const ENCODER: &str = "encoder";
    pub const FORWARD: &str = "forward";
    pub const INVERSE: &str = "inverse";
    pub const CROSSMODAL: &str = "crossmodal";
    pub const ACTOR: &str = "actor";
    pub const CRITIC: &str = "critic";
    pub const ACTOR_TARGET: &str = "actor_target";
    pub const CRITIC_TARGET: &str = "critic_target";
}

/// SplitMix64 finalizer.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent random streams of one run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunSeeds {
    pub env: u64,
    pub model: u64,
    pub policy: u64,
    pub buffer: u64,
    pub noise: u64,
    pub sound: u64,
    pub eval: u64,
}

impl RunSeeds {
    pub fn derive(seed: u64) -> Self {
        let child = |k: u64| splitmix64(splitmix64(seed) ^ splitmix64(k.wrapping_mul(0x2545_f491_4f6c_dd1d)));
        Self {
            env: child(1),
            model: child(2),
            policy: child(3),
            buffer: child(4),
            noise: child(5),
            sound: child(6),
            eval: child(7),
        }
    }

    pub fn episode(base: u64, index: u64) -> u64 {
        splitmix64(base.wrapping_add(index))
    }
}

/// Test hooks that corrupt one input stream of a phase. A correct run never
/// reads the poisoned stream, so its updates stay finite.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Sentinels {
    /// Pretraining: every extrinsic reward becomes NaN.
    pub poison_extrinsic: bool,
    /// Finetuning: an audio pipeline emitting NaN spectrograms is attached.
    pub poison_audio: bool,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    pub sentinels: Sentinels,
    /// Print episode progress to stderr.
    pub progress: bool,
}

/// Everything a pretraining or finetuning run produced.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub episodes: Vec<EpisodeRow>,
    pub updates: Vec<UpdateRow>,
    pub checkpoint: Checkpoint,
    /// Module hashes right before the first environment step.
    pub initial_hashes: BTreeMap<String, String>,
    pub final_hashes: BTreeMap<String, String>,
}

impl RunOutcome {
    pub fn checkpoint_path(&self) -> PathBuf {
        self.out_dir.join(CHECKPOINT_FILE)
    }

    pub fn returns(&self) -> Vec<(u64, f64)> {
        self.episodes.iter().map(|e| (e.step, e.episode_return)).collect()
    }
}

/// Display name of a training regime.
pub fn regime_label(method: Method, mode: CrossmodalMode, policy_init: PolicyInit) -> String {
    let mut s = match method {
        Method::Ddpg => return "DDPG".into(),
        Method::Icm => "ICM".to_string(),
        Method::Iscm => "ISCM".to_string(),
    };
    if method == Method::Iscm && mode == CrossmodalMode::Regressor {
        s.push_str("/Reg");
    }
    if policy_init == PolicyInit::Reinit {
        s.push_str("-PR");
    }
    s
}

fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn manifest_entries(config: &Config, seed: u64, phase: &str, regime: &str, inputs: &[(&str, String)]) -> Result<BTreeMap<String, String>> {
    let mut m: BTreeMap<String, String> = config.flatten()?.into_iter().collect();
    let config_hash = config.hash()?;
    let mut h = Sha256::new();
    h.update(config_hash.as_bytes());
    h.update(seed.to_le_bytes());
    h.update(phase.as_bytes());
    h.update(regime.as_bytes());
    for (k, v) in inputs {
        h.update(k.as_bytes());
        h.update(v.as_bytes());
        m.insert((*k).to_string(), v.clone());
    }
    m.insert("seed".into(), seed.to_string());
    m.insert("phase".into(), phase.into());
    m.insert("regime".into(), regime.into());
    m.insert("config_hash".into(), config_hash);
    m.insert("content_hash".into(), hex::encode(h.finalize()));
    m.insert("crate_version".into(), env!("CARGO_PKG_VERSION").into());
    m.insert("started_unix".into(), now_unix().to_string());
    Ok(m)
}

fn new_checkpoint(config: &Config, phase: &str, step: u64) -> Result<Checkpoint> {
    Ok(Checkpoint::new(CheckpointManifest {
        format_version: FORMAT_VERSION,
        crate_version: env!("CARGO_PKG_VERSION").into(),
        config_toml: config.to_toml()?,
        config_hash: config.hash()?,
        step,
        phase: phase.into(),
        method: config.run.method.as_str().into(),
        optimizer: config.agent.optimizer.as_str().into(),
        module_hashes: BTreeMap::new(),
    }))
}

fn agent_modules(ck: &mut Checkpoint, ddpg: &Ddpg<f32>) {
    ck.insert_module(modules::ACTOR, &ddpg.actor);
    ck.insert_module(modules::CRITIC, &ddpg.critic);
    ck.insert_module(modules::ACTOR_TARGET, &ddpg.actor_target);
    ck.insert_module(modules::CRITIC_TARGET, &ddpg.critic_target);
}

fn hashes(encoder: &VisualEncoder<f32>, ddpg: &Ddpg<f32>) -> BTreeMap<String, String> {
    BTreeMap::from([
        (modules::ENCODER.to_string(), encoder.param_hash()),
        (modules::ACTOR.to_string(), ddpg.actor.param_hash()),
        (modules::CRITIC.to_string(), ddpg.critic.param_hash()),
    ])
}

fn check_finite(step: u64, values: &[(&str, Option<f64>)]) -> Result<()> {
    for (name, v) in values {
        if let Some(v) = v {
            if !v.is_finite() {
                return Err(Error::Runtime(format!("non-finite {name} ({v}) at step {step}")));
            }
        }
    }
    Ok(())
}

fn metrics_finite(step: u64, m: &UpdateMetrics) -> Result<()> {
    check_finite(
        step,
        &[
            ("critic loss", Some(m.critic_loss)),
            ("actor loss", Some(m.actor_loss)),
            ("mean reward", Some(m.mean_reward)),
            ("mean Q", Some(m.mean_q)),
        ],
    )
}

fn encode_one(encoder: &VisualEncoder<f32>, obs: &Observation) -> Result<Array1<f32>> {
    let x = observation_batch::<f32>(&[obs]);
    Ok(encoder.encode(x.view())?.index_axis_move(Axis(0), 0))
}

/// Pairs each step with the observation `horizon` steps later, never
/// across an episode boundary.
pub struct HorizonWindow {
    horizon: usize,
    pending: VecDeque<(Observation, [f32; 2], Observation)>,
}

impl HorizonWindow {
    pub fn new(horizon: usize) -> Self {
        assert!(horizon >= 1, "horizon must be at least one step");
        Self {
            horizon,
            pending: VecDeque::new(),
        }
    }

    /// Records one step. Returns transitions whose horizon is now known;
    /// at episode end all pending steps resolve to the last observation.
    pub fn push(&mut self, obs: Observation, action: [f32; 2], next: Observation, episode_over: bool) -> Vec<Transition> {
        self.pending.push_back((obs, action, next.clone()));
        let mut out = Vec::new();
        if self.pending.len() == self.horizon || episode_over {
            while let Some((o, a, n)) = self.pending.pop_front() {
                out.push(Transition {
                    obs: o,
                    action: a,
                    reward: None,
                    next_obs: n,
                    horizon_obs: next.clone(),
                    terminal: false,
                });
                if !episode_over {
                    break;
                }
            }
        }
        out
    }
}

/// Auditory supervision for the crossmodal head.
enum AudioTargets {
    Labels { threshold: f64 },
    Features(RandomAudioEncoder<f32>),
}

impl AudioTargets {
    fn build(&self, obs: &[&Observation]) -> Result<CrossmodalTargets<f32>> {
        let stacks: Vec<&SpectrogramStack> = obs
            .iter()
            .map(|o| o.audio.as_ref().ok_or_else(|| Error::Runtime("observation carries no audio".into())))
            .collect::<Result<_>>()?;
        Ok(match self {
            AudioTargets::Labels { threshold } => {
                CrossmodalTargets::Labels(stacks.iter().map(|s| f32::from(discriminate(s, *threshold))).collect())
            }
            AudioTargets::Features(enc) => {
                let owned: Vec<SpectrogramStack> = stacks.into_iter().cloned().collect();
                let x = crate::sound::stack_to_array::<f32>(&owned);
                CrossmodalTargets::Features(enc.encode_batch(x.view())?)
            }
        })
    }
}

fn progress(opts: &RunOptions, phase: &str, row: &EpisodeRow) {
    if opts.progress && (row.episode % 20 == 0) {
        eprintln!(
            "[{phase}] step {} episode {} return {:.3} success {}",
            row.step, row.episode, row.episode_return, row.success
        );
    }
}

/// Reward-free exploration driven by curiosity. The task reward is logged
/// per episode and never enters an update.
pub fn pretrain(config: &Config, seed: u64, out_dir: &Path, opts: &RunOptions) -> Result<RunOutcome> {
    config.validate()?;
    let method = config.run.method;
    if method == Method::Ddpg {
        return Err(Error::Usage("ddpg has no pretraining phase".into()));
    }
    if method == Method::Iscm && !config.sound.enabled {
        return Err(Error::Config("iscm pretraining needs sound.enabled = true".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let seeds = RunSeeds::derive(seed);
    let cur = &config.curiosity;
    let regime = regime_label(method, cur.mode, PolicyInit::Reuse);
    report::write_manifest(&out_dir.join(MANIFEST_FILE), &manifest_entries(config, seed, PRETRAIN, &regime, &[])?)?;

    let mut env = PushWorld::new(config.env_for(config.run.pretrain_task))?;
    let audio_targets = if method == Method::Iscm {
        env = env.with_audio(AudioPipeline::new(config.sound.clone(), seeds.sound)?)?;
        Some(match cur.mode {
            CrossmodalMode::Discriminator => AudioTargets::Labels {
                threshold: resolve_threshold(&config.sound)?,
            },
            CrossmodalMode::Regressor => AudioTargets::Features(RandomAudioEncoder::new(config.sound.encoder_seed)),
        })
    } else {
        None
    };
    env.poison_extrinsic_rewards(opts.sentinels.poison_extrinsic);

    let mut rng = ChaCha8Rng::seed_from_u64(seeds.model);
    let mut models = CuriosityModels {
        encoder: VisualEncoder::<f32>::new(&config.model, &mut rng),
        forward: ForwardModel::new(&config.model, &mut rng),
        inverse: InverseModel::new(&config.model, &mut rng),
        crossmodal: audio_targets.as_ref().map(|_| CrossmodalHead::new(&config.model, cur.mode, &mut rng)),
    };
    let mut ddpg = Ddpg::<f32>::new(&config.model, &config.agent, &mut rng);
    let mut curiosity_opt = Optimizer::<f32>::new(config.agent.optimizer, config.agent.learning_rate);
    let obj = Objective::from_config(cur, audio_targets.is_some());
    let initial_hashes = hashes(&models.encoder, &ddpg);

    let agent = &config.agent;
    let total = config.run.pretrain_steps;
    let noise = agent.noise(total);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(seeds.noise);
    let mut buffer: ReplayBuffer<Transition> = ReplayBuffer::new(agent.buffer_capacity, seeds.buffer);
    let mut window = HorizonWindow::new(cur.horizon);
    let mut episodes = Vec::new();
    let mut updates = Vec::new();

    let mut step = 0usize;
    let mut episode = 0u64;
    while step < total {
        let mut obs = env.reset(RunSeeds::episode(seeds.env, episode));
        let (mut ret, mut len) = (0.0, 0u64);
        let success = loop {
            let action = if step < agent.warmup_steps {
                random_action(&mut noise_rng)
            } else {
                let latent = encode_one(&models.encoder, &obs)?;
                perturb(ddpg.act(latent.view())?, noise.stddev(step), &mut noise_rng)
            };
            let res = env.step(Action::from(action))?;
            step += 1;
            len += 1;
            ret += res.extrinsic_reward;
            let succeeded = res.success;
            let over = res.done || step >= total;
            for t in window.push(obs, action, res.observation.clone(), over) {
                buffer.push(t);
            }
            obs = res.observation;

            if step > agent.warmup_steps && step % agent.update_every == 0 {
                updates.push(pretrain_update(config, &mut models, &mut curiosity_opt, &mut ddpg, &mut buffer, obj, audio_targets.as_ref(), step as u64)?);
            }
            if over {
                break succeeded;
            }
        };
        let row = EpisodeRow {
            step: step as u64,
            episode,
            phase: PRETRAIN.into(),
            episode_return: ret,
            length: len,
            success,
        };
        progress(opts, PRETRAIN, &row);
        episodes.push(row);
        episode += 1;
    }

    let mut ck = new_checkpoint(config, PRETRAIN, step as u64)?;
    ck.insert_module(modules::ENCODER, &models.encoder);
    ck.insert_module(modules::FORWARD, &models.forward);
    ck.insert_module(modules::INVERSE, &models.inverse);
    if let Some(head) = &models.crossmodal {
        ck.insert_module(modules::CROSSMODAL, head);
    }
    agent_modules(&mut ck, &ddpg);
    finish(out_dir, episodes, updates, ck, initial_hashes, hashes(&models.encoder, &ddpg))
}

#[allow(clippy::too_many_arguments)]
fn pretrain_update(
    config: &Config,
    models: &mut CuriosityModels<f32>,
    curiosity_opt: &mut Optimizer<f32>,
    ddpg: &mut Ddpg<f32>,
    buffer: &mut ReplayBuffer<Transition>,
    obj: Objective,
    audio: Option<&AudioTargets>,
    step: u64,
) -> Result<UpdateRow> {
    let cur = &config.curiosity;
    let batch = buffer.sample(config.agent.batch_size)?;
    let obs: Vec<&Observation> = batch.iter().map(|t| &t.obs).collect();
    let next: Vec<&Observation> = batch.iter().map(|t| &t.next_obs).collect();
    let frames = observation_batch::<f32>(&obs);
    let next_frames = observation_batch::<f32>(&next);
    let horizon_frames = (cur.horizon > 1).then(|| {
        let h: Vec<&Observation> = batch.iter().map(|t| &t.horizon_obs).collect();
        observation_batch::<f32>(&h)
    });
    let actions: Vec<[f32; 2]> = batch.iter().map(|t| t.action).collect();
    let actions = actions_array::<f32>(&actions);
    let crossmodal = audio.map(|a| a.build(&obs)).transpose()?;

    let target_latents = models.encoder.encode(horizon_frames.as_ref().unwrap_or(&next_frames).view())?;
    let cbatch = CuriosityBatch {
        frames,
        actions,
        target_latents,
        crossmodal,
    };
    models.zero_grad();
    let out = objective(models, &cbatch, obj)?;
    check_finite(step, &[("curiosity objective", Some(out.value))])?;
    curiosity_opt.step(models.params_mut());

    // Rewards come from the networks as they are after this step.
    let latents = models.encoder.encode(cbatch.frames.view())?;
    let next_latents = models.encoder.encode(next_frames.view())?;
    let targets = match &horizon_frames {
        Some(h) => models.encoder.encode(h.view())?,
        None => next_latents.clone(),
    };
    let losses = sample_losses(models, latents.view(), cbatch.actions.view(), targets.view(), cbatch.crossmodal.as_ref(), cur)?;
    let rewards = batch_rewards(&losses, cur)?;
    let n = rewards.len();
    let dbatch = DdpgBatch {
        latents,
        actions: cbatch.actions,
        rewards: Array1::from_iter(rewards.iter().map(|r| r.total as f32)),
        next_latents,
        terminal: Array1::zeros(n),
    };
    let m = ddpg.update(&dbatch)?;
    metrics_finite(step, &m)?;
    let r = mean_reward(&rewards);
    let has_cross = out.mean.crossmodal.is_some();
    Ok(UpdateRow {
        step,
        phase: PRETRAIN.into(),
        forward_loss: Some(out.mean.forward),
        inverse_loss: Some(out.mean.inverse),
        dynamics_loss: Some(out.mean.dynamics),
        crossmodal_loss: out.mean.crossmodal,
        objective: Some(out.value),
        reward_crossmodal: has_cross.then_some(r.crossmodal),
        reward_dynamics: Some(r.dynamics),
        reward_total: Some(r.total),
        critic_loss: m.critic_loss,
        actor_loss: m.actor_loss,
        mean_reward: m.mean_reward,
        mean_q: m.mean_q,
    })
}

fn finish(
    out_dir: &Path,
    episodes: Vec<EpisodeRow>,
    updates: Vec<UpdateRow>,
    checkpoint: Checkpoint,
    initial_hashes: BTreeMap<String, String>,
    final_hashes: BTreeMap<String, String>,
) -> Result<RunOutcome> {
    report::write_episodes(&out_dir.join(EPISODES_FILE), &episodes)?;
    report::write_updates(&out_dir.join(UPDATES_FILE), &updates)?;
    checkpoint.save(&out_dir.join(CHECKPOINT_FILE))?;
    Ok(RunOutcome {
        out_dir: out_dir.to_path_buf(),
        episodes,
        updates,
        checkpoint,
        initial_hashes,
        final_hashes,
    })
}

/// Task adaptation on extrinsic reward with the encoder frozen. Scratch
/// DDPG takes no checkpoint and uses a randomly initialized frozen encoder.
pub fn finetune(config: &Config, seed: u64, checkpoint: Option<&Path>, out_dir: &Path, opts: &RunOptions) -> Result<RunOutcome> {
    config.validate()?;
    let method = config.run.method;
    let policy_init = config.run.policy_init;
    match (method, checkpoint) {
        (_, None) if policy_init == PolicyInit::Reinit => {
            return Err(Error::Usage("policy_init = reinit needs a checkpoint to take the encoder from".into()))
        }
        (Method::Ddpg, Some(_)) => return Err(Error::Usage("ddpg trains from scratch; pass no checkpoint".into())),
        (Method::Iscm | Method::Icm, None) => {
            return Err(Error::Usage(format!("{} finetuning needs a pretrained checkpoint", method.as_str())))
        }
        _ => {}
    }
    std::fs::create_dir_all(out_dir)?;
    let seeds = RunSeeds::derive(seed);
    let regime = regime_label(method, config.curiosity.mode, policy_init);

    let mut rng = ChaCha8Rng::seed_from_u64(seeds.model);
    let mut encoder = VisualEncoder::<f32>::new(&config.model, &mut rng);
    let mut ddpg = Ddpg::<f32>::new(&config.model, &config.agent, &mut rng);
    let mut inputs = Vec::new();
    if let Some(path) = checkpoint {
        let ck = Checkpoint::load(path)?;
        ck.restore_module(modules::ENCODER, &mut encoder)?;
        let mut policy_rng = ChaCha8Rng::seed_from_u64(seeds.policy);
        let (mut actor, mut critic) = (Actor::new(&config.model, &mut policy_rng), Critic::new(&config.model, &mut policy_rng));
        if policy_init == PolicyInit::Reuse {
            ck.restore_module(modules::ACTOR, &mut actor)?;
            ck.restore_module(modules::CRITIC, &mut critic)?;
        }
        ddpg = Ddpg::from_networks(actor, critic, &config.agent);
        if policy_init == PolicyInit::Reuse {
            ck.restore_module(modules::ACTOR_TARGET, &mut ddpg.actor_target)?;
            ck.restore_module(modules::CRITIC_TARGET, &mut ddpg.critic_target)?;
        }
        inputs.push(("checkpoint_config_hash", ck.manifest.config_hash.clone()));
        inputs.push((
            "checkpoint_encoder_hash",
            ck.manifest.module_hashes.get(modules::ENCODER).cloned().unwrap_or_default(),
        ));
    }
    report::write_manifest(&out_dir.join(MANIFEST_FILE), &manifest_entries(config, seed, FINETUNE, &regime, &inputs)?)?;

    let mut env = PushWorld::new(config.env_for(config.run.task))?;
    if opts.sentinels.poison_audio {
        env = env.with_audio(AudioPipeline::poisoned(config.sound.clone(), seeds.sound)?)?;
    }
    let initial_hashes = hashes(&encoder, &ddpg);
    let frozen = encoder.param_hash();

    let agent = &config.agent;
    let total = config.run.finetune_steps;
    let noise = agent.noise(total);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(seeds.noise);
    let mut buffer: ReplayBuffer<LatentTransition> = ReplayBuffer::new(agent.buffer_capacity, seeds.buffer);
    let mut episodes = Vec::new();
    let mut updates = Vec::new();

    let mut step = 0usize;
    let mut episode = 0u64;
    while step < total {
        let obs = env.reset(RunSeeds::episode(seeds.env, episode));
        let mut latent = encode_one(&encoder, &obs)?;
        let (mut ret, mut len) = (0.0, 0u64);
        let success = loop {
            let action = perturb(ddpg.act(latent.view())?, noise.stddev(step), &mut noise_rng);
            let res = env.step(Action::from(action))?;
            step += 1;
            len += 1;
            ret += res.extrinsic_reward;
            let succeeded = res.success;
            let next_latent = encode_one(&encoder, &res.observation)?;
            buffer.push(LatentTransition {
                latent: row_to_f32(latent.view()),
                action,
                reward: res.extrinsic_reward,
                next_latent: row_to_f32(next_latent.view()),
                terminal: res.success,
            });
            latent = next_latent;

            if step > agent.warmup_steps && step % agent.update_every == 0 {
                let batch = buffer.sample(agent.batch_size)?;
                let m = ddpg.update(&DdpgBatch::from_latent_transitions(&batch))?;
                metrics_finite(step as u64, &m)?;
                updates.push(UpdateRow {
                    step: step as u64,
                    phase: FINETUNE.into(),
                    critic_loss: m.critic_loss,
                    actor_loss: m.actor_loss,
                    mean_reward: m.mean_reward,
                    mean_q: m.mean_q,
                    ..UpdateRow::default()
                });
            }
            if res.done || step >= total {
                break succeeded;
            }
        };
        let row = EpisodeRow {
            step: step as u64,
            episode,
            phase: FINETUNE.into(),
            episode_return: ret,
            length: len,
            success,
        };
        progress(opts, FINETUNE, &row);
        episodes.push(row);
        episode += 1;
    }

    if encoder.param_hash() != frozen {
        return Err(Error::Runtime("encoder parameters changed during finetuning".into()));
    }
    let mut ck = new_checkpoint(config, FINETUNE, step as u64)?;
    ck.insert_module(modules::ENCODER, &encoder);
    agent_modules(&mut ck, &ddpg);
    finish(out_dir, episodes, updates, ck, initial_hashes, hashes(&encoder, &ddpg))
}

/// Maps observations to actions.
pub trait Policy {
    fn act(&mut self, obs: &Observation) -> Result<[f32; 2]>;
}

/// Noise-free actor on top of a frozen encoder.
pub struct GreedyPolicy {
    pub encoder: VisualEncoder<f32>,
    pub actor: Actor<f32>,
}

impl GreedyPolicy {
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let config = Config::from_toml_str(&ck.manifest.config_toml)?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut encoder = VisualEncoder::new(&config.model, &mut rng);
        let mut actor = Actor::new(&config.model, &mut rng);
        ck.restore_module(modules::ENCODER, &mut encoder)?;
        ck.restore_module(modules::ACTOR, &mut actor)?;
        Ok(Self { encoder, actor })
    }
}

impl Policy for GreedyPolicy {
    fn act(&mut self, obs: &Observation) -> Result<[f32; 2]> {
        let latent = encode_one(&self.encoder, obs)?;
        let a = self.actor.act(latent.view().insert_axis(Axis(0)))?;
        Ok([a[[0, 0]], a[[0, 1]]])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub returns: Vec<f64>,
    pub mean: f64,
    pub stderr: f64,
}

/// Hard cap on episode length, against environments that never finish.
const EVAL_STEP_LIMIT: usize = 100_000;

pub fn evaluate<E: Environment, P: Policy>(env: &mut E, policy: &mut P, episodes: usize, seed: u64) -> Result<EvalResult> {
    if episodes == 0 {
        return Err(Error::Usage("evaluation needs at least one episode".into()));
    }
    let mut returns = Vec::with_capacity(episodes);
    for i in 0..episodes {
        let mut obs = env.reset(RunSeeds::episode(seed, i as u64));
        let mut ret = 0.0;
        let mut steps = 0;
        loop {
            let res = env.step(Action::from(policy.act(&obs)?))?;
            ret += res.extrinsic_reward;
            steps += 1;
            if res.done {
                break;
            }
            if steps >= EVAL_STEP_LIMIT {
                return Err(Error::Runtime(format!("episode {i} did not finish in {EVAL_STEP_LIMIT} steps")));
            }
            obs = res.observation;
        }
        returns.push(ret);
    }
    let (mean, stderr) = mean_stderr(&returns);
    Ok(EvalResult { returns, mean, stderr })
}

/// Greedy evaluation of a saved agent on `task`, without audio, under the
/// configuration stored in the checkpoint.
pub fn evaluate_checkpoint(path: &Path, task: Task, episodes: usize, seed: u64) -> Result<EvalResult> {
    if episodes == 0 {
        return Err(Error::Usage("evaluation needs at least one episode".into()));
    }
    let ck = Checkpoint::load(path)?;
    let config = Config::from_toml_str(&ck.manifest.config_toml)?;
    let mut policy = GreedyPolicy::from_checkpoint(&ck)?;
    let mut env = PushWorld::new(config.env_for(task))?;
    evaluate(&mut env, &mut policy, episodes, RunSeeds::derive(seed).eval)
}

/// Which set of regimes a matrix compares.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Comparison {
    /// Curiosity methods against scratch DDPG, with and without policy reuse.
    Methods,
    /// Discriminator against regressor auditory targets.
    AudioTargets,
}

impl std::str::FromStr for Comparison {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "methods" => Ok(Comparison::Methods),
            "audio-targets" => Ok(Comparison::AudioTargets),
            other => Err(Error::Usage(format!("unknown comparison `{other}` (expected methods or audio-targets)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Regime {
    pub method: Method,
    pub mode: CrossmodalMode,
    pub policy_init: PolicyInit,
}

impl Regime {
    pub fn label(&self) -> String {
        regime_label(self.method, self.mode, self.policy_init)
    }

    /// Directory-safe name.
    pub fn slug(&self) -> String {
        self.label().to_ascii_lowercase().replace('/', "-")
    }

    fn pretrain_slug(&self) -> Option<String> {
        match self.method {
            Method::Ddpg => None,
            Method::Icm => Some("icm".into()),
            Method::Iscm => Some(format!("iscm-{}", self.mode.as_str())),
        }
    }

    pub fn apply(&self, base: &Config) -> Config {
        let mut c = base.clone();
        c.run.method = self.method;
        c.curiosity.mode = self.mode;
        c.run.policy_init = self.policy_init;
        c
    }
}

impl Comparison {
    pub fn regimes(self) -> Vec<Regime> {
        use CrossmodalMode::{Discriminator as D, Regressor as R};
        use PolicyInit::{Reinit, Reuse};
        let r = |method, mode, policy_init| Regime { method, mode, policy_init };
        match self {
            Comparison::Methods => vec![
                r(Method::Icm, D, Reuse),
                r(Method::Icm, D, Reinit),
                r(Method::Iscm, D, Reuse),
                r(Method::Iscm, D, Reinit),
                r(Method::Ddpg, D, Reuse),
            ],
            Comparison::AudioTargets => vec![
                r(Method::Iscm, D, Reuse),
                r(Method::Iscm, D, Reinit),
                r(Method::Iscm, R, Reuse),
                r(Method::Iscm, R, Reinit),
            ],
        }
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CellRow {
    pub regime: String,
    pub phase: String,
    pub seed: u64,
    pub status: String,
    pub error: String,
    /// Finetuning: mean height of the smoothed return curve.
    /// Pretraining: sum of monitored episode returns.
    pub score: Option<f64>,
    pub episodes: usize,
    pub dir: String,
}

#[derive(Clone, Debug)]
pub struct MatrixResult {
    pub cells: Vec<CellRow>,
    pub summary: Vec<SummaryRow>,
    pub pretrain_summary: Vec<SummaryRow>,
}

impl MatrixResult {
    /// Seed-mean score of one regime in one phase, over successful cells.
    pub fn mean_score(&self, regime: &str, phase: &str) -> Option<f64> {
        let v: Vec<f64> = self
            .cells
            .iter()
            .filter(|c| c.regime == regime && c.phase == phase)
            .filter_map(|c| c.score)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

pub const CELLS_FILE: &str = "cells.csv";
pub const PRETRAIN_SUMMARY_FILE: &str = "pretrain_summary.csv";
pub const PRETRAIN_PLOT_FILE: &str = "pretrain.png";

/// Runs every regime for every seed. Pretraining runs are shared between
/// regimes that differ only in policy initialization. A failing cell is
/// recorded and the matrix moves on.
pub fn run_matrix(base: &Config, comparison: Comparison, out_dir: &Path, opts: &RunOptions) -> Result<MatrixResult> {
    base.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let run = &base.run;
    let regimes = comparison.regimes();
    let mut cells = Vec::new();
    let mut pretrained: BTreeMap<(String, u64), std::result::Result<PathBuf, String>> = BTreeMap::new();
    let mut curves: BTreeMap<String, Vec<Vec<(u64, f64)>>> = BTreeMap::new();
    let mut pretrain_curves: BTreeMap<String, Vec<Vec<(u64, f64)>>> = BTreeMap::new();

    for &seed in &run.seeds {
        for regime in &regimes {
            let config = regime.apply(base);
            let mut ckpt = None;
            if let Some(pslug) = regime.pretrain_slug() {
                let key = (pslug.clone(), seed);
                if !pretrained.contains_key(&key) {
                    let dir = out_dir.join(PRETRAIN).join(&pslug).join(format!("seed{seed}"));
                    let label = regime_label(regime.method, regime.mode, PolicyInit::Reuse);
                    if opts.progress {
                        eprintln!("pretraining {label} seed {seed}");
                    }
                    let res = pretrain(&config, seed, &dir, opts);
                    let (status, error, score, n) = match &res {
                        Ok(o) => {
                            pretrain_curves.entry(label.clone()).or_default().push(smoothed_curve(
                                &o.returns(),
                                run.curve_grid as u64,
                                run.pretrain_steps as u64,
                                run.smoothing_window,
                            ));
                            ("ok", String::new(), Some(o.episodes.iter().map(|e| e.episode_return).sum()), o.episodes.len())
                        }
                        Err(e) => ("failed", e.to_string(), None, 0),
                    };
                    cells.push(CellRow {
                        regime: label,
                        phase: PRETRAIN.into(),
                        seed,
                        status: status.into(),
                        error,
                        score,
                        episodes: n,
                        dir: dir.display().to_string(),
                    });
                    pretrained.insert(key.clone(), res.map(|o| o.checkpoint_path()).map_err(|e| e.to_string()));
                }
                match &pretrained[&key] {
                    Ok(p) => ckpt = Some(p.clone()),
                    Err(e) => {
                        cells.push(CellRow {
                            regime: regime.label(),
                            phase: FINETUNE.into(),
                            seed,
                            status: "skipped".into(),
                            error: format!("pretraining failed: {e}"),
                            score: None,
                            episodes: 0,
                            dir: String::new(),
                        });
                        continue;
                    }
                }
            }
            let dir = out_dir.join(regime.slug()).join(format!("seed{seed}"));
            if opts.progress {
                eprintln!("finetuning {} seed {seed}", regime.label());
            }
            let res = finetune(&config, seed, ckpt.as_deref(), &dir, opts);
            let row = match res {
                Ok(o) => {
                    let curve = smoothed_curve(&o.returns(), run.curve_grid as u64, run.finetune_steps as u64, run.smoothing_window);
                    let score = curve_auc(&curve);
                    curves.entry(regime.label()).or_default().push(curve);
                    CellRow {
                        regime: regime.label(),
                        phase: FINETUNE.into(),
                        seed,
                        status: "ok".into(),
                        error: String::new(),
                        score: score.is_finite().then_some(score),
                        episodes: o.episodes.len(),
                        dir: dir.display().to_string(),
                    }
                }
                Err(e) => CellRow {
                    regime: regime.label(),
                    phase: FINETUNE.into(),
                    seed,
                    status: "failed".into(),
                    error: e.to_string(),
                    score: None,
                    episodes: 0,
                    dir: dir.display().to_string(),
                },
            };
            cells.push(row);
        }
    }

    report::write_csv(&out_dir.join(CELLS_FILE), &cells)?;
    let order: Vec<String> = regimes.iter().map(Regime::label).collect();
    let (summary, series) = summarize(&order, &curves);
    write_summary(&out_dir.join(report::SUMMARY_FILE), &summary)?;
    if !summary.is_empty() {
        report::plot_summary(&series, "Finetuning return", "episode return", &out_dir.join(report::PLOT_FILE))?;
    }
    let p_order: Vec<String> = pretrain_curves.keys().cloned().collect();
    let (pretrain_summary, p_series) = summarize(&p_order, &pretrain_curves);
    write_summary(&out_dir.join(PRETRAIN_SUMMARY_FILE), &pretrain_summary)?;
    if !pretrain_summary.is_empty() {
        report::plot_summary(&p_series, "Monitored task return during exploration", "episode return", &out_dir.join(PRETRAIN_PLOT_FILE))?;
    }
    Ok(MatrixResult {
        cells,
        summary,
        pretrain_summary,
    })
}

type Series = Vec<(String, Vec<SummaryRow>)>;

fn summarize(order: &[String], curves: &BTreeMap<String, Vec<Vec<(u64, f64)>>>) -> (Vec<SummaryRow>, Series) {
    let mut all = Vec::new();
    let mut series = Vec::new();
    for label in order {
        if let Some(c) = curves.get(label) {
            let rows = aggregate(label, c);
            all.extend(rows.iter().cloned());
            series.push((label.clone(), rows));
        }
    }
    (all, series)
}

fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    if rows.is_empty() {
        return report::write_header(path, &["regime", "step", "mean", "stderr", "seeds"]);
    }
    report::write_csv(path, rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_streams_are_distinct_and_stable() {
        let a = RunSeeds::derive(3);
        assert_eq!(a, RunSeeds::derive(3));
        let all = [a.env, a.model, a.policy, a.buffer, a.noise, a.sound, a.eval];
        let set: std::collections::BTreeSet<_> = all.iter().collect();
        assert_eq!(set.len(), all.len());
        assert_ne!(RunSeeds::derive(4).env, a.env);
    }

    #[test]
    fn regime_labels() {
        let slugs: Vec<String> = Comparison::Methods.regimes().iter().map(Regime::slug).collect();
        assert_eq!(slugs, ["icm", "icm-pr", "iscm", "iscm-pr", "ddpg"]);
        let labels: Vec<String> = Comparison::AudioTargets.regimes().iter().map(Regime::label).collect();
        assert_eq!(labels, ["ISCM", "ISCM-PR", "ISCM/Reg", "ISCM/Reg-PR"]);
    }
}
