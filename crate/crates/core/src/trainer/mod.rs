//! Reinforcement-learning trainer with MRBT reward shaping and action masking.
//!
//! Two learners are provided: tabular Q-learning over a hash of the dynamic
//! state, task and agent memory, and a small softmax MLP trained with
//! REINFORCE. Both pick actions only inside the current mask, so masked
//! actions have zero probability. Training reports success rates over
//! tumbling windows of `eval_interval` environment steps.

mod pg;
mod shaping;
mod tabular;


pub use pg::{FeatureSpec, MlpPolicy};
pub use shaping::{AblationMode, RewardShaper, Shaped};
pub use tabular::{QTable, Traces};

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, RngCore};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::formula::EvalError;
use crate::gridworld::{Action, DynState, DynamicsConfig, Env, EnvState, Expert, ExpertOptions, Layout, SpaceConfig, SpaceName, Task, TaskSpace};
use crate::mbrm::RewardConfig;
use crate::pipeline::{MrbtSpecFile, SpecFileError};
use crate::schema::ActionMask;
use crate::template::{SubtaskSpec, TemplateError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    TabularQ,
    PolicyGradientSmall,
}

impl std::str::FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tabular_q" => Ok(Algorithm::TabularQ),
            "policy_gradient_small" => Ok(Algorithm::PolicyGradientSmall),
            _ => Err(format!("unknown algorithm `{s}` (expected tabular_q or policy_gradient_small)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub total_steps: u64,
    /// Width of the tumbling success-rate windows, in environment steps.
    /// Also the batch size of the policy-gradient learner.
    pub eval_interval: u64,
    pub gamma: f64,
    /// Adam step size of the policy-gradient learner.
    pub learning_rate: f64,
    /// Step size of tabular Q-learning.
    pub q_alpha: f64,
    /// Trace decay of tabular Q(lambda); 0 gives one-step Q-learning.
    pub q_lambda: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of `total_steps` over which epsilon decays linearly.
    pub epsilon_decay_frac: f64,
    pub hidden: usize,
    pub seeds: Vec<u64>,
    /// `rng_seed` is mixed with each run seed.
    pub dynamics: DynamicsConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::TabularQ,
            total_steps: 200_000,
            eval_interval: 2048,
            gamma: 0.99,
            learning_rate: 3e-4,
            q_alpha: 0.2,
            q_lambda: 0.0,
            epsilon_start: 1.0,
            epsilon_end: 0.02,
            epsilon_decay_frac: 0.5,
            hidden: 64,
            seeds: vec![0, 1, 2, 3],
            dynamics: DynamicsConfig::deterministic(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.total_steps == 0 {
            return bad("total_steps must be positive");
        }
        if self.eval_interval == 0 {
            return bad("eval_interval must be positive");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if !(self.learning_rate > 0.0) || !(self.q_alpha > 0.0 && self.q_alpha <= 1.0) {
            return bad("learning_rate must be positive and q_alpha in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.q_lambda) {
            return bad("q_lambda must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.epsilon_start) || !(0.0..=1.0).contains(&self.epsilon_end) {
            return bad("epsilon values must lie in [0, 1]");
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required");
        }
        if self.hidden == 0 {
            return bad("hidden must be positive");
        }
        if !(0.0..=1.0).contains(&self.dynamics.flip_prob) {
            return bad("flip probability must lie in [0, 1]");
        }
        Ok(())
    }

    fn epsilon(&self, step: u64) -> f64 {
        let horizon = (self.total_steps as f64 * self.epsilon_decay_frac).max(1.0);
        let frac = (step as f64 / horizon).min(1.0);
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Spec(#[from] SpecFileError),
    #[error("formula evaluation failed: {0}")]
    Eval(#[from] EvalError),
    #[error("policy chose `{action}` outside the active mask {mask:?}")]
    MaskViolation { action: Action, mask: Vec<String> },
    #[error("policy file {path}: {message}")]
    PolicyFile { path: PathBuf, message: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Subtask formulas and reward magnitudes used for shaping.
#[derive(Clone, Debug)]
pub struct TrainSpec {
    pub subtasks: Arc<Vec<SubtaskSpec>>,
    pub rewards: RewardConfig,
}

impl TrainSpec {
    pub fn new(subtasks: Vec<SubtaskSpec>, rewards: RewardConfig) -> Self {
        Self {
            subtasks: Arc::new(subtasks),
            rewards,
        }
    }

    pub fn from_spec_file(file: &MrbtSpecFile, space: &TaskSpace) -> Result<Self, SpecFileError> {
        Ok(Self::new(file.to_subtasks(space)?, file.rewards))
    }

    pub fn reference(space: &TaskSpace) -> Result<Self, SpecFileError> {
        Self::from_spec_file(&MrbtSpecFile::reference(space.name()), space)
    }

    fn shaper(&self, mode: AblationMode, space: &TaskSpace) -> Result<RewardShaper, TemplateError> {
        RewardShaper::new(mode, self.subtasks.clone(), space.schema().clone(), self.rewards)
    }
}

/// What a policy sees at each step.
#[derive(Clone, Debug)]
pub struct Observation {
    pub state: EnvState,
    pub task_index: usize,
    /// Fingerprint of the static layout.
    pub layout_key: u64,
    /// Tree assignment or procedure progress; empty in `Task` mode.
    pub memory: Vec<u8>,
    pub mask: ActionMask,
}

impl Observation {
    /// Observation of `state` under `task` with the shaper's current signals.
    pub fn new(space: &TaskSpace, state: EnvState, task: &Task, shaped: Shaped) -> Self {
        Self {
            task_index: task_index(space, task),
            layout_key: layout_key(&state.layout),
            state,
            memory: shaped.memory,
            mask: shaped.mask,
        }
    }

    /// Stable 64-bit key of the dynamic state, task and memory.
    pub fn key(&self) -> u64 {
        let mut h = Fnv::new();
        hash_dyn(&mut h, &self.state.dynamic);
        h.write(&self.layout_key.to_le_bytes());
        h.write_u32(self.task_index as u32);
        h.write(&self.memory);
        h.0
    }
}

/// FNV-1a; persisted Q-tables rely on keys staying identical across builds.
struct Fnv(u64);

impl Fnv {
    fn new() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }

    fn write_u32(&mut self, v: u32) {
        self.write(&v.to_le_bytes());
    }
}

fn layout_key(l: &Layout) -> u64 {
    let mut h = Fnv::new();
    h.write_u32(l.size as u32);
    for p in l.open_cells() {
        h.write(&[p.x, p.y]);
    }
    for (c, d) in l.doors.iter().enumerate() {
        if let Some(p) = d {
            h.write(&[c as u8, p.x, p.y]);
        }
    }
    for (c, b) in l.boxes.iter().enumerate() {
        if let Some((p, k)) = b {
            h.write(&[c as u8, p.x, p.y, k.map_or(255, |k| k.index() as u8)]);
        }
    }
    if let Some(g) = l.goal {
        h.write(&[g.x, g.y]);
    }
    h.0
}

fn hash_dyn(h: &mut Fnv, d: &DynState) {
    h.write(&[d.agent.x, d.agent.y, d.dir, d.carried.map_or(255, |c| c.index() as u8), d.boxes]);
    for k in &d.keys {
        match k {
            Some(p) => h.write(&[p.x, p.y]),
            None => h.write(&[255, 255]),
        }
    }
    for door in &d.doors {
        h.write(&[door.code() as u8]);
    }
}

/// A policy acting greedily (or by its own rule) inside `obs.mask`.
pub trait Policy: Send {
    fn act(&mut self, obs: &Observation, rng: &mut dyn RngCore) -> Action;

    /// Called at the start of each episode.
    fn begin_episode(&mut self, _task: &Task) {}
}

/// Uniform choice among the allowed actions.
#[derive(Clone, Copy, Debug, Default)]
pub struct RandomPolicy;

impl Policy for RandomPolicy {
    fn act(&mut self, obs: &Observation, rng: &mut dyn RngCore) -> Action {
        let allowed: Vec<usize> = obs.mask.iter().collect();
        Action::from_index(allowed[rng.gen_range(0..allowed.len())]).expect("mask is within the action set")
    }
}

/// The scripted planner, ignoring masks.
#[derive(Clone, Debug)]
pub struct ExpertPolicy {
    expert: Expert,
    task: Option<Task>,
}

impl ExpertPolicy {
    pub fn new(opts: ExpertOptions) -> Self {
        Self {
            expert: Expert::new(opts),
            task: None,
        }
    }
}

impl Policy for ExpertPolicy {
    fn act(&mut self, obs: &Observation, _rng: &mut dyn RngCore) -> Action {
        let task = self.task.as_ref().expect("begin_episode precedes act");
        self.expert.act(&obs.state, task)
    }

    fn begin_episode(&mut self, task: &Task) {
        self.expert.reset();
        self.task = Some(task.clone());
    }
}

/// A learned policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrainedPolicy {
    Tabular { q: QTable },
    Mlp { net: MlpPolicy },
}

impl Policy for TrainedPolicy {
    fn act(&mut self, obs: &Observation, rng: &mut dyn RngCore) -> Action {
        match self {
            TrainedPolicy::Tabular { q } => q.act(obs, rng),
            TrainedPolicy::Mlp { net } => net.act(obs, rng),
        }
    }
}

/// A policy with the context needed to evaluate it again.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyFile {
    pub space: SpaceConfig,
    pub mode: AblationMode,
    pub seed: u64,
    pub policy: TrainedPolicy,
}

impl PolicyFile {
    pub fn write(&self, path: &Path) -> Result<(), TrainError> {
        let text = serde_json::to_string(self)?;
        fs::write(path, text).map_err(|source| TrainError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn read(path: &Path) -> Result<Self, TrainError> {
        let text = fs::read_to_string(path).map_err(|e| TrainError::PolicyFile {
            path: path.to_path_buf(),
            message: if e.kind() == std::io::ErrorKind::NotFound {
                "no such file".to_string()
            } else {
                e.to_string()
            },
        })?;
        serde_json::from_str(&text).map_err(|e| TrainError::PolicyFile {
            path: path.to_path_buf(),
            message: format!("not a policy file: {e}"),
        })
    }
}

/// Success statistics of one tumbling window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowStat {
    /// Environment steps completed at the end of the window.
    pub global_step: u64,
    /// Fraction of episodes ending in the window that reached the goal.
    pub success_rate: f64,
    pub mean_episode_reward: f64,
    pub episodes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub windows: Vec<WindowStat>,
    pub episodes: u64,
    pub successes: u64,
    /// Executed actions outside the active mask.
    pub mask_violations: u64,
    /// Extremes of the per-episode cumulative reward of any single subtask.
    pub min_subtask_reward: f64,
    pub max_subtask_reward: f64,
    /// Steps on which a dropped key slipped out of the agent's hands.
    pub key_slips: u64,
    pub policy: TrainedPolicy,
}

impl SeedRun {
    /// Success rate of the last window, or 0 without windows.
    pub fn final_success(&self) -> f64 {
        self.windows.last().map_or(0.0, |w| w.success_rate)
    }

    /// First window end at which the success rate reached `threshold`.
    pub fn steps_to_reach(&self, threshold: f64) -> Option<u64> {
        self.windows.iter().find(|w| w.success_rate >= threshold).map(|w| w.global_step)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub space: SpaceName,
    pub mode: AblationMode,
    pub config: TrainConfig,
    pub runs: Vec<SeedRun>,
}

impl TrainReport {
    pub fn mean_final_success(&self) -> f64 {
        self.runs.iter().map(SeedRun::final_success).sum::<f64>() / self.runs.len().max(1) as f64
    }

    pub fn mask_violations(&self) -> u64 {
        self.runs.iter().map(|r| r.mask_violations).sum()
    }

    pub fn run(&self, seed: u64) -> Option<&SeedRun> {
        self.runs.iter().find(|r| r.seed == seed)
    }
}

#[derive(Serialize)]
struct MetricsRow<'a> {
    global_step: u64,
    seed: u64,
    mode: &'a str,
    success_rate: f64,
    mean_episode_reward: f64,
}

/// Writes `global_step,seed,mode,success_rate,mean_episode_reward` rows.
pub fn write_metrics_csv<W: std::io::Write>(reports: &[&TrainReport], out: W) -> Result<(), TrainError> {
    let mut w = csv::Writer::from_writer(out);
    for report in reports {
        for run in &report.runs {
            for win in &run.windows {
                w.serialize(MetricsRow {
                    global_step: win.global_step,
                    seed: run.seed,
                    mode: report.mode.as_str(),
                    success_rate: win.success_rate,
                    mean_episode_reward: win.mean_episode_reward,
                })?;
            }
        }
    }
    w.flush().map_err(|source| TrainError::Io {
        path: PathBuf::from("<metrics>"),
        source,
    })?;
    Ok(())
}

/// Provenance of a training run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub space: SpaceConfig,
    pub mode: AblationMode,
    pub spec: Option<String>,
    pub config: TrainConfig,
    pub wall_time_secs: f64,
    pub final_success: Vec<(u64, f64)>,
    pub mask_violations: u64,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(space: &SpaceConfig, spec: Option<&Path>, report: &TrainReport, wall_time_secs: f64) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            space: space.clone(),
            mode: report.mode,
            spec: spec.map(|p| p.display().to_string()),
            config: report.config.clone(),
            wall_time_secs,
            final_success: report.runs.iter().map(|r| (r.seed, r.final_success())).collect(),
            mask_violations: report.mask_violations(),
            outputs: Vec::new(),
        }
    }
}

fn task_index(space: &TaskSpace, task: &Task) -> usize {
    space
        .tasks()
        .iter()
        .position(|t| t.bindings == task.bindings)
        .expect("episodes draw tasks from the space")
}

fn mix(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn observe(space: &TaskSpace, env: &Env, shaped: Shaped, prev: Option<&Observation>) -> Observation {
    match prev {
        Some(p) => Observation {
            state: env.state().clone(),
            task_index: p.task_index,
            layout_key: p.layout_key,
            memory: shaped.memory,
            mask: shaped.mask,
        },
        None => Observation::new(space, env.state().clone(), env.task(), shaped),
    }
}

fn memory_len(mode: AblationMode, k: usize) -> usize {
    match mode {
        AblationMode::Task => 0,
        AblationMode::Procedure => k + 1,
        AblationMode::Rbt | AblationMode::Mrbt => 3 * k,
    }
}

struct Transition {
    x: Vec<f32>,
    mask: ActionMask,
    action: usize,
    reward: f32,
    episode_end: bool,
}

enum Learner {
    Tabular(QTable, Traces),
    Pg { net: MlpPolicy, batch: Vec<Transition> },
}

impl Learner {
    fn into_policy(self) -> TrainedPolicy {
        match self {
            Learner::Tabular(q, _) => TrainedPolicy::Tabular { q },
            Learner::Pg { net, .. } => TrainedPolicy::Mlp { net },
        }
    }
}

fn pg_update(net: &mut MlpPolicy, batch: &mut Vec<Transition>, gamma: f32, lr: f32) {
    if batch.is_empty() {
        return;
    }
    let mut returns = vec![0.0f32; batch.len()];
    let mut g = 0.0f32;
    for (i, t) in batch.iter().enumerate().rev() {
        if t.episode_end {
            g = 0.0;
        }
        g = t.reward + gamma * g;
        returns[i] = g;
    }
    let n = returns.len() as f32;
    let mean = returns.iter().sum::<f32>() / n;
    let std = (returns.iter().map(|r| (r - mean).powi(2)).sum::<f32>() / n).sqrt().max(1e-6);
    for (t, r) in batch.iter().zip(&returns) {
        net.accumulate(&t.x, t.mask, t.action, (r - mean) / std / n);
    }
    net.apply(lr);
    batch.clear();
}

/// Trains one policy per seed; seeds run in parallel.
pub fn train(space: &Arc<TaskSpace>, spec: &TrainSpec, mode: AblationMode, cfg: &TrainConfig) -> Result<TrainReport, TrainError> {
    cfg.validate()?;
    spec.shaper(mode, space)?;
    let runs = cfg
        .seeds
        .par_iter()
        .map(|&seed| train_seed(space, spec, mode, cfg, seed))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(TrainReport {
        space: space.name(),
        mode,
        config: cfg.clone(),
        runs,
    })
}

fn train_seed(space: &Arc<TaskSpace>, spec: &TrainSpec, mode: AblationMode, cfg: &TrainConfig, seed: u64) -> Result<SeedRun, TrainError> {
    let dynamics = DynamicsConfig {
        rng_seed: mix(seed, cfg.dynamics.rng_seed.wrapping_add(1)),
        ..cfg.dynamics
    };
    let mut env = Env::new(space.clone(), dynamics);
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 0x5eed));
    let mut shaper = spec.shaper(mode, space)?;
    let k = shaper.num_subtasks();
    let features = FeatureSpec {
        grid: space.size(),
        num_tasks: space.tasks().len(),
        memory_len: memory_len(mode, k),
    };
    let mut learner = match cfg.algorithm {
        Algorithm::TabularQ => Learner::Tabular(QTable::new(), Traces::default()),
        Algorithm::PolicyGradientSmall => Learner::Pg {
            net: MlpPolicy::new(features, cfg.hidden, mix(seed, 0x11)),
            batch: Vec::with_capacity(cfg.eval_interval as usize),
        },
    };
    let gamma = cfg.gamma as f32;
    let alpha = cfg.q_alpha as f32;
    let lambda = cfg.q_lambda as f32;

    let mut run = SeedRun {
        seed,
        windows: Vec::new(),
        episodes: 0,
        successes: 0,
        mask_violations: 0,
        min_subtask_reward: 0.0,
        max_subtask_reward: 0.0,
        key_slips: 0,
        policy: TrainedPolicy::Tabular { q: QTable::new() },
    };
    let (mut win_eps, mut win_succ, mut win_reward) = (0u64, 0u64, 0.0f64);
    let mut ep_reward = 0.0f64;
    let mut ep_subtask = vec![0.0f64; k];

    let shaped = shaper.reset(env.state(), env.task())?;
    let mut obs = observe(space, &env, shaped, None);
    for step in 0..cfg.total_steps {
        let a = match &mut learner {
            Learner::Tabular(q, traces) => {
                let key = obs.key();
                if rng.gen_bool(cfg.epsilon(step)) {
                    let allowed: Vec<usize> = obs.mask.iter().collect();
                    let a = allowed[rng.gen_range(0..allowed.len())];
                    if q.value(key, a) < q.max_over(key, obs.mask) {
                        traces.clear();
                    }
                    a
                } else {
                    q.greedy(key, obs.mask, &mut rng)
                }
            }
            Learner::Pg { net, .. } => net.sample(&obs, &mut rng),
        };
        if !obs.mask.contains(a) {
            run.mask_violations += 1;
        }
        assert!(
            !mode.masked() || obs.mask.contains(a),
            "executed action {a} outside the active mask"
        );
        let action = Action::from_index(a).expect("mask is within the action set");
        let outcome = env.step(action);
        run.key_slips += outcome.key_slipped as u64;
        let shaped = shaper.step(env.state(), env.task(), outcome.goal_reached)?;
        let r = shaped.reward;
        for (acc, x) in ep_subtask.iter_mut().zip(&shaped.subtask_rewards) {
            *acc += x;
        }
        ep_reward += r;
        let done = outcome.goal_reached || outcome.truncated;
        let next = observe(space, &env, shaped, Some(&obs));

        match &mut learner {
            Learner::Tabular(q, traces) => {
                let key = obs.key();
                let future = if outcome.goal_reached { 0.0 } else { q.max_over(next.key(), next.mask) };
                let delta = r as f32 + gamma * future - q.value(key, a);
                traces.backup(q, key, a, alpha * delta, gamma * lambda);
                if done {
                    traces.clear();
                }
            }
            Learner::Pg { net, batch } => {
                let x = net.features.encode(&obs);
                batch.push(Transition {
                    x,
                    mask: obs.mask,
                    action: a,
                    reward: r as f32,
                    episode_end: false,
                });
                if done {
                    batch.last_mut().unwrap().episode_end = true;
                }
            }
        }

        if done {
            run.episodes += 1;
            win_eps += 1;
            if outcome.goal_reached {
                run.successes += 1;
                win_succ += 1;
            }
            win_reward += ep_reward;
            ep_reward = 0.0;
            for v in ep_subtask.iter_mut() {
                run.min_subtask_reward = run.min_subtask_reward.min(*v);
                run.max_subtask_reward = run.max_subtask_reward.max(*v);
                *v = 0.0;
            }
            env.reset();
            let shaped = shaper.reset(env.state(), env.task())?;
            obs = observe(space, &env, shaped, None);
        } else {
            obs = next;
        }

        let at = step + 1;
        if at % cfg.eval_interval == 0 || at == cfg.total_steps {
            if let Learner::Pg { net, batch } = &mut learner {
                // Returns after the batch boundary are unknown; mark the cut.
                if let Some(last) = batch.last_mut() {
                    last.episode_end = true;
                }
                pg_update(net, batch, gamma, cfg.learning_rate as f32);
            }
            run.windows.push(WindowStat {
                global_step: at,
                success_rate: if win_eps == 0 { 0.0 } else { win_succ as f64 / win_eps as f64 },
                mean_episode_reward: if win_eps == 0 { 0.0 } else { win_reward / win_eps as f64 },
                episodes: win_eps,
            });
            (win_eps, win_succ, win_reward) = (0, 0, 0.0);
        }
    }
    run.policy = learner.into_policy();
    Ok(run)
}

/// Greedy success rate of `policy` over `episodes` episodes.
///
/// Under `Mrbt` the policy sees the tree mask and an action outside it is an
/// error. Episode draws and key slips follow `dynamics.rng_seed`.
pub fn evaluate(
    policy: &mut dyn Policy,
    space: &Arc<TaskSpace>,
    spec: &TrainSpec,
    mode: AblationMode,
    episodes: usize,
    dynamics: DynamicsConfig,
) -> Result<f64, TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(dynamics.rng_seed, 0xe7a1));
    let mut env = Env::new(space.clone(), dynamics);
    let mut shaper = spec.shaper(mode, space)?;
    let mut wins = 0usize;
    for ep in 0..episodes {
        if ep > 0 {
            env.reset();
        }
        policy.begin_episode(env.task());
        if run_episode(policy, &mut env, &mut shaper, space, mode, &mut rng)? {
            wins += 1;
        }
    }
    Ok(wins as f64 / episodes.max(1) as f64)
}

fn run_episode(
    policy: &mut dyn Policy,
    env: &mut Env,
    shaper: &mut RewardShaper,
    space: &TaskSpace,
    mode: AblationMode,
    rng: &mut ChaCha8Rng,
) -> Result<bool, TrainError> {
    let shaped = shaper.reset(env.state(), env.task())?;
    let mut obs = observe(space, env, shaped, None);
    loop {
        let action = policy.act(&obs, rng);
        if mode.masked() && !obs.mask.contains(action.index()) {
            return Err(TrainError::MaskViolation {
                action,
                mask: space.schema().mask_names(obs.mask),
            });
        }
        let outcome = env.step(action);
        if outcome.goal_reached {
            return Ok(true);
        }
        if outcome.truncated {
            return Ok(false);
        }
        let shaped = shaper.step(env.state(), env.task(), false)?;
        obs = observe(space, env, shaped, Some(&obs));
    }
}
