//! Top-down tabletop pushing world.
//!
//! A velocity-controlled disc effector pushes axis-aligned cubes on a
//! 1 m x 1 m table; the task is to get every cube center out of a red circle
//! within a fixed step budget. Each control step runs `substeps` semi-implicit
//! Euler substeps with impulse-based contact resolution and Coulomb friction,
//! and reports every contact impulse loud enough to be heard.

pub mod materials;
mod render;

use std::collections::VecDeque;
use std::sync::Arc;

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sound::{AudioPipeline, SoundEvent, Spectrogram, SpectrogramStack, SPEC_STACK};

pub use materials::{CubeSpec, MaterialPreset, Task};
pub use render::{Frame, FRAME_CHANNELS, FRAME_SIZE};

type Vec2 = Vector2<f64>;

/// Number of RGB frames stacked into one visual observation.
pub const FRAME_STACK: usize = 3;

const RESOLVE_ITERATIONS: usize = 4;
const PLACEMENT_ATTEMPTS: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    /// m.
    pub circle_radius: f64,
    pub circle_center: [f64; 2],
    /// Half the table side, m.
    pub table_half_extent: f64,
    pub max_steps: usize,
    pub step_penalty: f64,
    pub success_reward: f64,
    /// Substep length, s. A control step lasts `physics_dt * substeps`.
    pub physics_dt: f64,
    pub substeps: usize,
    /// Coulomb coefficient for table and contact friction.
    pub friction: f64,
    pub gravity: f64,
    /// m/s at full action.
    pub max_effector_speed: f64,
    pub effector_radius: f64,
    pub cube_side: f64,
    /// Normal impulses at or below this (N·s) are silent.
    pub impulse_threshold: f64,
    /// Whether cube-wall contacts make sound.
    pub wall_sound: bool,
    #[serde(skip)]
    pub cube_specs: Vec<CubeSpec>,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            circle_radius: 0.3,
            circle_center: [0.0, 0.0],
            table_half_extent: 0.5,
            max_steps: 50,
            step_penalty: 1.0 / 50.0,
            success_reward: 1.0,
            physics_dt: 0.025,
            substeps: 4,
            friction: 0.5,
            gravity: 9.81,
            max_effector_speed: 1.0,
            effector_radius: 0.04,
            cube_side: 0.08,
            impulse_threshold: 1e-3,
            wall_sound: true,
            cube_specs: Task::ThreeCubes.cube_specs(0.08),
        }
    }
}

impl EnvConfig {
    pub fn for_task(mut self, task: Task) -> Self {
        self.cube_specs = task.cube_specs(self.cube_side);
        self
    }

    pub fn control_dt(&self) -> f64 {
        self.physics_dt * self.substeps as f64
    }

    fn center(&self) -> Vec2 {
        Vec2::new(self.circle_center[0], self.circle_center[1])
    }

    pub fn home_pose(&self) -> Vec2 {
        let c = self.center();
        let gap = (self.table_half_extent - self.circle_radius).max(0.0);
        let y = (c.y - self.circle_radius - gap / 2.0).max(-self.table_half_extent + self.effector_radius);
        Vec2::new(c.x, y)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.table_half_extent > 0.0) {
            return bad("env.table_half_extent must be positive");
        }
        if !(self.circle_radius > 0.0) {
            return bad("env.circle_radius must be positive");
        }
        if self.max_steps == 0 {
            return bad("env.max_steps must be positive");
        }
        if !(self.physics_dt > 0.0) || self.substeps == 0 {
            return bad("env.physics_dt and env.substeps must be positive");
        }
        if !(self.friction >= 0.0) || !(self.gravity >= 0.0) {
            return bad("env.friction and env.gravity must be non-negative");
        }
        if !(self.max_effector_speed > 0.0) || !(self.effector_radius > 0.0) {
            return bad("env effector speed and radius must be positive");
        }
        if !(self.impulse_threshold >= 0.0) {
            return bad("env.impulse_threshold must be non-negative");
        }
        for spec in &self.cube_specs {
            spec.validate()?;
            if !(0.0..=1.0).contains(&spec.material.restitution) {
                return bad("cube restitution must be in [0, 1]");
            }
            if self.circle_radius < spec.side {
                return Err(Error::Config(format!(
                    "circle radius {} is smaller than cube side {}; cubes cannot be placed inside",
                    self.circle_radius, spec.side
                )));
            }
        }
        let c = self.center();
        let reach = c.x.abs().max(c.y.abs()) + self.circle_radius;
        if reach > self.table_half_extent {
            return bad("circle must lie on the table");
        }
        let home = self.home_pose();
        if (home - c).norm() <= self.circle_radius {
            return bad("no room for the effector home pose outside the circle");
        }
        Ok(())
    }
}

/// Planar velocity command; each component is clipped to `[-1, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Action {
    command: [f64; 2],
}

impl Action {
    pub fn new(x: f64, y: f64) -> Self {
        let c = |v: f64| if v.is_nan() { 0.0 } else { v.clamp(-1.0, 1.0) };
        Self { command: [c(x), c(y)] }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn command(&self) -> [f64; 2] {
        self.command
    }
}

impl From<[f32; 2]> for Action {
    fn from(a: [f32; 2]) -> Self {
        Self::new(a[0] as f64, a[1] as f64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CubeState {
    pub position: Vec2,
    pub velocity: Vec2,
}

/// What the sounding contact was between.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ContactKind {
    Effector,
    Cube,
    Wall,
}

/// Contact impulse above the sound threshold.
#[derive(Clone, Debug)]
pub struct ImpactEvent {
    /// Normal impulse, N·s; always strictly positive.
    pub impulse: f64,
    pub material: Arc<MaterialPreset>,
    /// Seconds since the start of the control step.
    pub onset: f64,
    pub kind: ContactKind,
}

impl ImpactEvent {
    pub fn to_sound(&self) -> SoundEvent {
        SoundEvent {
            impulse: self.impulse,
            preset: self.material.clone(),
            onset: self.onset,
        }
    }
}

/// The three most recent frames, oldest first.
pub type VisualStack = [Arc<Frame>; FRAME_STACK];

/// Everything the agent perceives at one time step.
#[derive(Clone, Debug)]
pub struct Observation {
    pub visual: VisualStack,
    /// Present only while the environment renders audio.
    pub audio: Option<SpectrogramStack>,
}

#[derive(Clone, Debug)]
pub struct StepResult {
    pub observation: Observation,
    pub extrinsic_reward: f64,
    /// Episode over: success or step budget exhausted.
    pub done: bool,
    /// All cubes out of the circle (the terminal case of `done`).
    pub success: bool,
    pub impulses: Vec<ImpactEvent>,
    pub cubes_inside: usize,
}

/// Sparse extrinsic reward rule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardRule {
    pub success_reward: f64,
    pub step_penalty: f64,
}

impl RewardRule {
    pub fn reward(&self, completed: bool) -> f64 {
        if completed {
            self.success_reward - self.step_penalty
        } else {
            -self.step_penalty
        }
    }
}

/// Reset/step interface shared by the pushing world and test doubles.
pub trait Environment {
    fn reset(&mut self, seed: u64) -> Observation;
    fn step(&mut self, action: Action) -> Result<StepResult>;
}

#[derive(Clone, Debug)]
struct Cube {
    spec: CubeSpec,
    state: CubeState,
}

impl Cube {
    fn half(&self) -> f64 {
        self.spec.side / 2.0
    }

    fn inv_mass(&self) -> f64 {
        1.0 / self.spec.mass
    }
}

pub struct PushWorld {
    config: EnvConfig,
    cubes: Vec<Cube>,
    effector: Vec2,
    steps: usize,
    done: bool,
    started: bool,
    frames: VecDeque<Arc<Frame>>,
    spectrograms: VecDeque<Arc<Spectrogram>>,
    audio: Option<AudioPipeline>,
    poison_extrinsic: bool,
}

impl PushWorld {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        let effector = config.home_pose();
        Ok(Self {
            config,
            cubes: Vec::new(),
            effector,
            steps: 0,
            done: false,
            started: false,
            frames: VecDeque::with_capacity(FRAME_STACK),
            spectrograms: VecDeque::with_capacity(SPEC_STACK),
            audio: None,
            poison_extrinsic: false,
        })
    }

    /// Enables spectrogram observations rendered by `pipeline`.
    pub fn with_audio(mut self, pipeline: AudioPipeline) -> Result<Self> {
        let sound_dt = pipeline.config().step_duration;
        if (sound_dt - self.config.control_dt()).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "sound.step_duration ({sound_dt}) must equal env.physics_dt * env.substeps ({})",
                self.config.control_dt()
            )));
        }
        self.audio = Some(pipeline);
        Ok(self)
    }

    /// Replaces every extrinsic reward with NaN. A phase that must never
    /// consume task reward can be run against this to prove it.
    pub fn poison_extrinsic_rewards(&mut self, on: bool) {
        self.poison_extrinsic = on;
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn has_audio(&self) -> bool {
        self.audio.is_some()
    }

    pub fn steps_taken(&self) -> usize {
        self.steps
    }

    pub fn cube_states(&self) -> Vec<CubeState> {
        self.cubes.iter().map(|c| c.state).collect()
    }

    pub fn effector_position(&self) -> Vec2 {
        self.effector
    }

    /// Overrides cube states; meant for scripted tests and debugging.
    pub fn set_cube_states(&mut self, states: &[CubeState]) -> Result<()> {
        if states.len() != self.cubes.len() {
            return Err(Error::shape("set_cube_states", self.cubes.len(), states.len()));
        }
        for (c, s) in self.cubes.iter_mut().zip(states) {
            c.state = *s;
        }
        Ok(())
    }

    pub fn set_effector_position(&mut self, p: Vec2) {
        self.effector = p;
    }

    pub fn kinetic_energy(&self) -> f64 {
        self.cubes
            .iter()
            .map(|c| 0.5 * c.spec.mass * c.state.velocity.norm_squared())
            .sum()
    }

    fn reward_rule(&self) -> RewardRule {
        RewardRule {
            success_reward: self.config.success_reward,
            step_penalty: self.config.step_penalty,
        }
    }

    /// Number of cube centers within (or on) the circle.
    pub fn cubes_inside(&self) -> usize {
        let c = self.config.center();
        self.cubes
            .iter()
            .filter(|cube| (cube.state.position - c).norm() <= self.config.circle_radius)
            .count()
    }

    /// Every cube center strictly farther than the radius from the circle center.
    pub fn is_success(&self) -> bool {
        self.cubes_inside() == 0
    }

    pub fn render(&self) -> Frame {
        render::render(&self.config, self.effector, self.cubes.iter().map(|c| (&c.spec, &c.state)))
    }

    fn place_cubes(&mut self, rng: &mut ChaCha8Rng) -> Result<()> {
        let center = self.config.center();
        let home = self.config.home_pose();
        let mut placed: Vec<Cube> = Vec::with_capacity(self.config.cube_specs.len());
        for spec in &self.config.cube_specs {
            let half = spec.side / 2.0;
            let radius = self.config.circle_radius - half;
            let mut ok = None;
            for _ in 0..PLACEMENT_ATTEMPTS {
                let r = radius * rng.random::<f64>().sqrt();
                let theta = rng.random::<f64>() * std::f64::consts::TAU;
                let p = center + Vec2::new(r * theta.cos(), r * theta.sin());
                if (p - center).norm() >= self.config.circle_radius {
                    continue;
                }
                let clear_of_cubes = placed.iter().all(|o| {
                    let d = p - o.state.position;
                    d.x.abs() > half + o.half() || d.y.abs() > half + o.half()
                });
                let clear_of_effector = box_circle_gap(p, half, home) > self.config.effector_radius;
                if clear_of_cubes && clear_of_effector {
                    ok = Some(p);
                    break;
                }
            }
            let position = ok.ok_or_else(|| Error::Config("could not place all cubes inside the circle".into()))?;
            placed.push(Cube {
                spec: spec.clone(),
                state: CubeState {
                    position,
                    velocity: Vec2::zeros(),
                },
            });
        }
        self.cubes = placed;
        Ok(())
    }

    fn observation(&self) -> Observation {
        let visual = [self.frames[0].clone(), self.frames[1].clone(), self.frames[2].clone()];
        let audio = self.audio.as_ref().map(|_| {
            [
                self.spectrograms[0].clone(),
                self.spectrograms[1].clone(),
                self.spectrograms[2].clone(),
            ]
        });
        Observation { visual, audio }
    }

    fn push_frame(&mut self, frame: Arc<Frame>) {
        if self.frames.len() == FRAME_STACK {
            self.frames.pop_front();
        }
        self.frames.push_back(frame);
    }

    fn push_spectrogram(&mut self, s: Arc<Spectrogram>) {
        if self.spectrograms.len() == SPEC_STACK {
            self.spectrograms.pop_front();
        }
        self.spectrograms.push_back(s);
    }

    fn try_reset(&mut self, seed: u64) -> Result<Observation> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.place_cubes(&mut rng)?;
        self.effector = self.config.home_pose();
        self.steps = 0;
        self.done = false;
        self.started = true;
        let frame = Arc::new(self.render());
        self.frames.clear();
        for _ in 0..FRAME_STACK {
            self.push_frame(frame.clone());
        }
        self.spectrograms.clear();
        if let Some(audio) = self.audio.as_mut() {
            audio.reseed(seed ^ 0xa0d1_0a0d_1a0d_10ad);
            let s = Arc::new(audio.render(&[])?);
            for _ in 0..SPEC_STACK {
                self.push_spectrogram(s.clone());
            }
        }
        Ok(self.observation())
    }

    /// Resets with the given seed; fails only if the cubes cannot be placed.
    pub fn reset_checked(&mut self, seed: u64) -> Result<Observation> {
        self.try_reset(seed)
    }

    pub fn step_checked(&mut self, action: Action) -> Result<StepResult> {
        if !self.started {
            return Err(Error::Usage("step called before reset".into()));
        }
        if self.done {
            return Err(Error::Usage("step called after the episode ended; reset first".into()));
        }
        let mut impulses = Vec::new();
        for sub in 0..self.config.substeps {
            self.substep(action, sub, &mut impulses);
        }
        self.steps += 1;

        let frame = Arc::new(self.render());
        self.push_frame(frame);
        if let Some(audio) = self.audio.as_mut() {
            let events: Vec<SoundEvent> = impulses.iter().map(ImpactEvent::to_sound).collect();
            let s = Arc::new(audio.render(&events)?);
            self.push_spectrogram(s);
        }

        let cubes_inside = self.cubes_inside();
        let success = cubes_inside == 0;
        let done = success || self.steps >= self.config.max_steps;
        self.done = done;
        let mut extrinsic_reward = self.reward_rule().reward(success);
        if self.poison_extrinsic {
            extrinsic_reward = f64::NAN;
        }
        Ok(StepResult {
            observation: self.observation(),
            extrinsic_reward,
            done,
            success,
            impulses,
            cubes_inside,
        })
    }

    fn substep(&mut self, action: Action, index: usize, events: &mut Vec<ImpactEvent>) {
        let cfg = &self.config;
        let dt = cfg.physics_dt;
        let onset = index as f64 * dt;
        let half_table = cfg.table_half_extent;

        let cmd = action.command();
        let target = Vec2::new(cmd[0], cmd[1]) * cfg.max_effector_speed;
        let limit = half_table - cfg.effector_radius;
        let old = self.effector;
        let new = Vec2::new(
            (old.x + target.x * dt).clamp(-limit, limit),
            (old.y + target.y * dt).clamp(-limit, limit),
        );
        let effector_velocity = (new - old) / dt;
        self.effector = new;

        let decel = cfg.friction * cfg.gravity * dt;
        for cube in &mut self.cubes {
            let v = cube.state.velocity;
            let speed = v.norm();
            cube.state.velocity = if speed <= decel { Vec2::zeros() } else { v * ((speed - decel) / speed) };
            cube.state.position += cube.state.velocity * dt;
        }

        let n = self.cubes.len();
        let mut effector_j = vec![0.0; n];
        let mut wall_j = vec![0.0; n];
        let mut pair_j = vec![0.0; n * n];
        let mu = cfg.friction;
        let radius = cfg.effector_radius;
        for _ in 0..RESOLVE_ITERATIONS {
            for (i, cube) in self.cubes.iter_mut().enumerate() {
                effector_j[i] += resolve_effector(cube, self.effector, effector_velocity, radius, mu);
            }
            for i in 0..n {
                for j in (i + 1)..n {
                    let (a, b) = split_pair(&mut self.cubes, i, j);
                    pair_j[i * n + j] += resolve_pair(a, b, mu);
                }
            }
            for (i, cube) in self.cubes.iter_mut().enumerate() {
                wall_j[i] += resolve_walls(cube, half_table);
            }
        }
        for cube in &mut self.cubes {
            clamp_to_table(cube, half_table);
        }

        let threshold = cfg.impulse_threshold;
        let mut emit = |impulse: f64, material: &Arc<MaterialPreset>, kind: ContactKind| {
            if impulse > threshold && impulse > 0.0 {
                events.push(ImpactEvent {
                    impulse,
                    material: material.clone(),
                    onset,
                    kind,
                });
            }
        };
        for (i, cube) in self.cubes.iter().enumerate() {
            emit(effector_j[i], &cube.spec.material, ContactKind::Effector);
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let jn = pair_j[i * n + j];
                emit(jn, &self.cubes[i].spec.material, ContactKind::Cube);
                emit(jn, &self.cubes[j].spec.material, ContactKind::Cube);
            }
        }
        if cfg.wall_sound {
            for (i, cube) in self.cubes.iter().enumerate() {
                emit(wall_j[i], &cube.spec.material, ContactKind::Wall);
            }
        }
    }
}

impl Environment for PushWorld {
    fn reset(&mut self, seed: u64) -> Observation {
        self.try_reset(seed).expect("validated configuration admits a placement")
    }

    fn step(&mut self, action: Action) -> Result<StepResult> {
        self.step_checked(action)
    }
}

fn split_pair(cubes: &mut [Cube], i: usize, j: usize) -> (&mut Cube, &mut Cube) {
    debug_assert!(i < j);
    let (left, right) = cubes.split_at_mut(j);
    (&mut left[i], &mut right[0])
}

/// Distance from a circle center to the nearest point of an axis-aligned box.
fn box_circle_gap(center: Vec2, half: f64, p: Vec2) -> f64 {
    let q = Vec2::new(
        p.x.clamp(center.x - half, center.x + half),
        p.y.clamp(center.y - half, center.y + half),
    );
    (p - q).norm()
}

/// Kinematic (infinite-mass) disc against a cube. Returns the normal impulse.
fn resolve_effector(cube: &mut Cube, p: Vec2, v_eff: Vec2, radius: f64, mu: f64) -> f64 {
    let c = cube.state.position;
    let h = cube.half();
    let q = Vec2::new(p.x.clamp(c.x - h, c.x + h), p.y.clamp(c.y - h, c.y + h));
    let d = q - p;
    let dist = d.norm();
    let (normal, depth) = if dist > 1e-12 {
        if dist >= radius {
            return 0.0;
        }
        (d / dist, radius - dist)
    } else {
        // Effector center inside the box: push out through the nearest face.
        let dx = h - (p.x - c.x).abs();
        let dy = h - (p.y - c.y).abs();
        if dx < dy {
            (Vec2::new((c.x - p.x).signum(), 0.0), radius + dx)
        } else {
            (Vec2::new(0.0, (c.y - p.y).signum()), radius + dy)
        }
    };
    cube.state.position += normal * depth;

    let rel = cube.state.velocity - v_eff;
    let vn = rel.dot(&normal);
    if vn >= 0.0 {
        return 0.0;
    }
    let m = cube.spec.mass;
    let e = cube.spec.material.restitution;
    let jn = -(1.0 + e) * vn * m;
    cube.state.velocity += normal * (jn / m);
    let tangent = rel - normal * vn;
    let vt = tangent.norm();
    if vt > 1e-12 {
        let jt = (mu * jn).min(m * vt);
        cube.state.velocity -= tangent * (jt / (m * vt));
    }
    jn
}

/// Cube against cube along the axis of least overlap. Returns the normal impulse.
fn resolve_pair(a: &mut Cube, b: &mut Cube, mu: f64) -> f64 {
    let d = b.state.position - a.state.position;
    let reach = a.half() + b.half();
    let ox = reach - d.x.abs();
    let oy = reach - d.y.abs();
    if ox <= 0.0 || oy <= 0.0 {
        return 0.0;
    }
    let (normal, depth) = if ox < oy {
        (Vec2::new(if d.x >= 0.0 { 1.0 } else { -1.0 }, 0.0), ox)
    } else {
        (Vec2::new(0.0, if d.y >= 0.0 { 1.0 } else { -1.0 }), oy)
    };
    let (ia, ib) = (a.inv_mass(), b.inv_mass());
    let share = depth / (ia + ib);
    a.state.position -= normal * (share * ia);
    b.state.position += normal * (share * ib);

    let rel = b.state.velocity - a.state.velocity;
    let vn = rel.dot(&normal);
    if vn >= 0.0 {
        return 0.0;
    }
    let e = (a.spec.material.restitution * b.spec.material.restitution).sqrt();
    let jn = -(1.0 + e) * vn / (ia + ib);
    a.state.velocity -= normal * (jn * ia);
    b.state.velocity += normal * (jn * ib);
    let tangent = rel - normal * vn;
    let vt = tangent.norm();
    if vt > 1e-12 {
        let jt = (mu * jn).min(vt / (ia + ib));
        let dir = tangent / vt;
        a.state.velocity += dir * (jt * ia);
        b.state.velocity -= dir * (jt * ib);
    }
    jn
}

/// Reflects a cube off the table edges. Returns the total wall impulse.
fn resolve_walls(cube: &mut Cube, half_table: f64) -> f64 {
    let h = cube.half();
    let limit = half_table - h;
    let m = cube.spec.mass;
    let e = cube.spec.material.restitution;
    let mut total = 0.0;
    for axis in 0..2 {
        let p = cube.state.position[axis];
        let v = cube.state.velocity[axis];
        if p < -limit {
            cube.state.position[axis] = -limit;
            if v < 0.0 {
                total += m * (1.0 + e) * -v;
                cube.state.velocity[axis] = -e * v;
            }
        } else if p > limit {
            cube.state.position[axis] = limit;
            if v > 0.0 {
                total += m * (1.0 + e) * v;
                cube.state.velocity[axis] = -e * v;
            }
        }
    }
    total
}

fn clamp_to_table(cube: &mut Cube, half_table: f64) {
    let limit = half_table - cube.half();
    for axis in 0..2 {
        cube.state.position[axis] = cube.state.position[axis].clamp(-limit, limit);
    }
}
