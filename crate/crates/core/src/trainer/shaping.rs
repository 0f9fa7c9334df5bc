//! Per-episode reward and mask signals for each ablation mode.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bt::Mrbt;
use crate::formula::EvalError;
use crate::gridworld::{EnvState, Task};
use crate::mbrm::{LabelSet, MbrmState, RewardConfig};
use crate::schema::{ActionMask, EnvSchema};
use crate::template::{build_template, phi_id, psi_id, SubtaskSpec, TemplateError};

/// Which reward and mask signals the agent trains with.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AblationMode {
    /// Goal bonus only.
    Task,
    /// Each subtask reward is paid once, in order, with no backtracking and no mask.
    Procedure,
    /// Tree rewards with the full action set.
    Rbt,
    /// Tree rewards and tree masks.
    Mrbt,
}

impl AblationMode {
    pub const ALL: [AblationMode; 4] = [AblationMode::Task, AblationMode::Procedure, AblationMode::Rbt, AblationMode::Mrbt];

    pub fn as_str(self) -> &'static str {
        match self {
            AblationMode::Task => "task",
            AblationMode::Procedure => "procedure",
            AblationMode::Rbt => "rbt",
            AblationMode::Mrbt => "mrbt",
        }
    }

    pub fn masked(self) -> bool {
        self == AblationMode::Mrbt
    }
}

impl std::fmt::Display for AblationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for AblationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown mode `{s}` (expected task, procedure, rbt or mrbt)"))
    }
}

/// Signals after one environment step (or at episode start).
#[derive(Clone, Debug, PartialEq)]
pub struct Shaped {
    /// Total reward including the goal bonus.
    pub reward: f64,
    /// Reward attributed to each subtask on this step.
    pub subtask_rewards: Vec<f64>,
    /// Actions the agent may take next.
    pub mask: ActionMask,
    /// Compact agent-visible memory: the tree assignment or the procedure progress.
    pub memory: Vec<u8>,
}

#[derive(Clone, Debug)]
struct Procedure {
    current: usize,
    nav_paid: Vec<bool>,
}

/// Computes rewards and masks for one mode from the subtask formulas.
#[derive(Clone, Debug)]
pub struct RewardShaper {
    mode: AblationMode,
    subtasks: Arc<Vec<SubtaskSpec>>,
    rewards: RewardConfig,
    tree: Mrbt,
    full: ActionMask,
    procedure: Procedure,
}

impl RewardShaper {
    pub fn new(
        mode: AblationMode,
        subtasks: Arc<Vec<SubtaskSpec>>,
        schema: Arc<EnvSchema>,
        rewards: RewardConfig,
    ) -> Result<Self, TemplateError> {
        let full = schema.full_mask();
        let tree = build_template(&subtasks, schema, &rewards)?;
        let k = subtasks.len();
        Ok(Self {
            mode,
            subtasks,
            rewards,
            tree,
            full,
            procedure: Procedure {
                current: 0,
                nav_paid: vec![false; k],
            },
        })
    }

    pub fn mode(&self) -> AblationMode {
        self.mode
    }

    pub fn rewards(&self) -> &RewardConfig {
        &self.rewards
    }

    pub fn num_subtasks(&self) -> usize {
        self.subtasks.len()
    }

    pub fn tree(&self) -> &Mrbt {
        &self.tree
    }

    /// Starts an episode. Rewards of the initial tick are discarded.
    pub fn reset(&mut self, state: &EnvState, task: &Task) -> Result<Shaped, EvalError> {
        self.tree.reset();
        self.procedure.current = 0;
        self.procedure.nav_paid.iter_mut().for_each(|p| *p = false);
        let mut out = self.advance(state, task, false)?;
        out.reward = 0.0;
        out.subtask_rewards.iter_mut().for_each(|r| *r = 0.0);
        Ok(out)
    }

    /// Signals for the state reached by the last action.
    pub fn step(&mut self, state: &EnvState, task: &Task, goal_reached: bool) -> Result<Shaped, EvalError> {
        self.advance(state, task, goal_reached)
    }

    fn advance(&mut self, state: &EnvState, task: &Task, goal_reached: bool) -> Result<Shaped, EvalError> {
        let k = self.subtasks.len();
        let mut subtask_rewards = vec![0.0; k];
        let bonus = if goal_reached { self.rewards.task_bonus } else { 0.0 };
        let (mask, memory) = match self.mode {
            AblationMode::Task => (self.full, Vec::new()),
            AblationMode::Rbt | AblationMode::Mrbt => {
                let sigma = self.tree.label(state, task)?;
                let before = self.tree.assignment().to_vec();
                let tick = self.tree.tick(sigma);
                for &leaf in &tick.ticked {
                    let (_, r) = self.tree.leaves()[leaf].step(before[leaf], sigma);
                    subtask_rewards[crate::template::subtask_of_leaf(leaf)] += r;
                }
                let mask = if self.mode.masked() { tick.mask } else { self.full };
                (mask, encode_assignment(self.tree.assignment()))
            }
            AblationMode::Procedure => {
                let sigma = self.tree.label(state, task)?;
                self.procedure_rewards(sigma, &mut subtask_rewards);
                let mut memory = Vec::with_capacity(k + 1);
                memory.push(self.procedure.current as u8);
                memory.extend(self.procedure.nav_paid.iter().map(|&p| p as u8));
                (self.full, memory)
            }
        };
        let reward = subtask_rewards.iter().sum::<f64>() + bonus;
        Ok(Shaped {
            reward,
            subtask_rewards,
            mask,
            memory,
        })
    }

    fn procedure_rewards(&mut self, sigma: LabelSet, out: &mut [f64]) {
        let p = &mut self.procedure;
        while p.current < out.len() {
            let i = p.current;
            if !p.nav_paid[i] && sigma.contains(phi_id(i)) {
                p.nav_paid[i] = true;
                out[i] += self.rewards.navigation_true;
            }
            if !sigma.contains(psi_id(i)) {
                break;
            }
            out[i] += self.rewards.condition_true;
            p.current += 1;
        }
    }

    /// Largest per-episode cumulative reward a subtask can collect under `Procedure`.
    pub fn procedure_cap(&self) -> f64 {
        self.rewards.condition_true + self.rewards.navigation_true
    }
}

fn encode_assignment(a: &[MbrmState]) -> Vec<u8> {
    a.iter()
        .map(|u| match u {
            MbrmState::Success => 0,
            MbrmState::Running => 1,
            MbrmState::Failure => 2,
        })
        .collect()
}
