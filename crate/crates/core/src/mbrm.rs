//! Masking behavior reward machines: the three-state leaves of an MRBT.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::schema::ActionMask;

/// Machine state of a leaf, which doubles as its behavior-tree return status.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MbrmState {
    Success,
    Running,
    Failure,
}

impl MbrmState {
    pub const ALL: [MbrmState; 3] = [MbrmState::Success, MbrmState::Running, MbrmState::Failure];
}

impl fmt::Display for MbrmState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MbrmState::Success => "Success",
            MbrmState::Running => "Running",
            MbrmState::Failure => "Failure",
        })
    }
}

/// Index of a formula in the tree's formula set `L`.
pub type FormulaId = usize;

/// Set of satisfied formulas (a label assignment), as a bitset over `L`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct LabelSet(u64);

impl LabelSet {
    pub const EMPTY: LabelSet = LabelSet(0);

    /// Largest supported `|L|`.
    pub const CAPACITY: usize = 64;

    pub fn from_bits(bits: u64) -> Self {
        LabelSet(bits)
    }

    pub fn bits(self) -> u64 {
        self.0
    }

    pub fn from_ids(ids: &[FormulaId]) -> Self {
        let mut s = Self::EMPTY;
        for &i in ids {
            s.insert(i);
        }
        s
    }

    pub fn insert(&mut self, id: FormulaId) {
        self.0 |= 1 << id;
    }

    pub fn remove(&mut self, id: FormulaId) {
        self.0 &= !(1 << id);
    }

    pub fn contains(self, id: FormulaId) -> bool {
        id < 64 && self.0 & (1 << id) != 0
    }

    pub fn is_subset(self, other: LabelSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = FormulaId> {
        (0..64).filter(move |&i| self.0 & (1 << i) != 0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MbrmKind {
    /// Success while its formula holds, Failure otherwise.
    Condition,
    /// Success while its formula holds, Running otherwise.
    Navigation,
    /// Always Running; it yields only when an earlier sibling preempts it.
    Interaction,
}

/// Reward magnitudes emitted on formula flips, plus the task-completion bonus
/// added by the trainer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub condition_true: f64,
    pub condition_false: f64,
    pub navigation_true: f64,
    pub navigation_false: f64,
    pub task_bonus: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            condition_true: 1.0,
            condition_false: -1.0,
            navigation_true: 0.1,
            navigation_false: -0.1,
            task_bonus: 10.0,
        }
    }
}

/// A masking behavior reward machine `<U, u0, delta_u, delta_r, eta>` with
/// `U = {Success, Running, Failure}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mbrm {
    kind: MbrmKind,
    rho: Option<FormulaId>,
    mask: ActionMask,
    reward_on_true: f64,
    penalty_on_false: f64,
}

impl Mbrm {
    pub fn condition(rho: FormulaId, mask: ActionMask, rewards: &RewardConfig) -> Self {
        Self {
            kind: MbrmKind::Condition,
            rho: Some(rho),
            mask,
            reward_on_true: rewards.condition_true,
            penalty_on_false: rewards.condition_false,
        }
    }

    pub fn navigation(rho: FormulaId, mask: ActionMask, rewards: &RewardConfig) -> Self {
        Self {
            kind: MbrmKind::Navigation,
            rho: Some(rho),
            mask,
            reward_on_true: rewards.navigation_true,
            penalty_on_false: rewards.navigation_false,
        }
    }

    /// The `MB(⊥)` leaf: no formula, no reward.
    pub fn interaction(mask: ActionMask) -> Self {
        Self {
            kind: MbrmKind::Interaction,
            rho: None,
            mask,
            reward_on_true: 0.0,
            penalty_on_false: 0.0,
        }
    }

    pub fn kind(&self) -> MbrmKind {
        self.kind
    }

    pub fn rho(&self) -> Option<FormulaId> {
        self.rho
    }

    pub fn mask(&self) -> ActionMask {
        self.mask
    }

    pub fn reward_on_true(&self) -> f64 {
        self.reward_on_true
    }

    pub fn penalty_on_false(&self) -> f64 {
        self.penalty_on_false
    }

    pub fn initial_state(&self) -> MbrmState {
        match self.kind {
            MbrmKind::Condition => MbrmState::Failure,
            MbrmKind::Navigation | MbrmKind::Interaction => MbrmState::Running,
        }
    }

    /// States the machine can occupy.
    pub fn reachable_states(&self) -> &'static [MbrmState] {
        match self.kind {
            MbrmKind::Condition => &[MbrmState::Failure, MbrmState::Success],
            MbrmKind::Navigation => &[MbrmState::Running, MbrmState::Success],
            MbrmKind::Interaction => &[MbrmState::Running],
        }
    }

    /// One transition: `(delta_u(u, sigma), delta_r(u, sigma))`.
    pub fn step(&self, u: MbrmState, sigma: LabelSet) -> (MbrmState, f64) {
        let Some(rho) = self.rho else {
            return (MbrmState::Running, 0.0);
        };
        let holds = sigma.contains(rho);
        let next = match (self.kind, holds) {
            (_, true) => MbrmState::Success,
            (MbrmKind::Condition, false) => MbrmState::Failure,
            (_, false) => MbrmState::Running,
        };
        let was = u == MbrmState::Success;
        let reward = match (was, holds) {
            (false, true) => self.reward_on_true,
            (true, false) => self.penalty_on_false,
            _ => 0.0,
        };
        (next, reward)
    }
}
