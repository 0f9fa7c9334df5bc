//! MiniGrid-style gridworlds: state, dynamics and task spaces.
//!
//! A state splits into a static [`Layout`] (walls, door and box placement,
//! goal) shared behind an `Arc`, and a small `Copy` [`DynState`] holding
//! everything actions can change. The verifier hashes `DynState` directly.

mod expert;
mod spaces;

pub use expert::{plan, Expert, ExpertOptions};
pub use spaces::InitSet;
pub use spaces::{LayoutMode, SpaceConfig, SpaceError, SpaceName, TaskSpace, DRONE_MAP};

use std::fmt;
use std::hash::{DefaultHasher, Hash, Hasher};
use std::io::{self, Write};
use std::sync::Arc;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::formula::{
    Formula, TaskBinding, Valuation, Value, ABSENT, DOOR_CLOSED, DOOR_LOCKED, DOOR_OPEN,
};
use crate::schema::{Color, EnvSchema, PredicateDecl, PredicateKind};

pub const ACTION_NAMES: [&str; 7] = ["left", "right", "forward", "pickup", "drop", "toggle", "done"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Action {
    Left = 0,
    Right = 1,
    Forward = 2,
    Pickup = 3,
    Drop = 4,
    Toggle = 5,
    Done = 6,
}

impl Action {
    pub const ALL: [Action; 7] = [
        Action::Left,
        Action::Right,
        Action::Forward,
        Action::Pickup,
        Action::Drop,
        Action::Toggle,
        Action::Done,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        ACTION_NAMES[self as usize]
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Predicate ids of [`minigrid_schema`].
pub mod pred {
    pub const AGENT_POS: usize = 0;
    pub const AGENT_DIR: usize = 1;
    pub const KEY_POS: usize = 2;
    pub const DOOR_POS: usize = 3;
    pub const DOOR_STATE: usize = 4;
    pub const BOX_POS: usize = 5;
    pub const GOAL_POS: usize = 6;
}

/// The schema shared by all MiniGrid task spaces.
pub fn minigrid_schema(grid_size: usize) -> EnvSchema {
    use PredicateKind::*;
    EnvSchema::new(
        vec![
            PredicateDecl::new("agent_pos", Coord2, false),
            PredicateDecl::new("agent_dir", Scalar, false),
            PredicateDecl::new("key_pos", Coord2, true),
            PredicateDecl::new("door_pos", Coord2, true),
            PredicateDecl::new("door_state", Scalar, true),
            PredicateDecl::new("box_pos", Coord2, true),
            PredicateDecl::new("goal_pos", Coord2, false),
        ],
        ACTION_NAMES.iter().map(|s| s.to_string()).collect(),
        grid_size,
    )
    .expect("static schema is valid")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pos {
    pub x: u8,
    pub y: u8,
}

impl Pos {
    pub fn new(x: usize, y: usize) -> Self {
        Pos {
            x: x as u8,
            y: y as u8,
        }
    }

    /// Neighbor in direction `dir` (0 east, 1 south, 2 west, 3 north). The
    /// outer wall keeps results in bounds for valid agent positions.
    pub fn step(self, dir: u8) -> Pos {
        let (x, y) = (self.x, self.y);
        match dir & 3 {
            0 => Pos { x: x + 1, y },
            1 => Pos { x, y: y + 1 },
            2 => Pos { x: x.wrapping_sub(1), y },
            _ => Pos { x, y: y.wrapping_sub(1) },
        }
    }

    pub fn manhattan(self, other: Pos) -> u32 {
        (self.x as i32 - other.x as i32).unsigned_abs() + (self.y as i32 - other.y as i32).unsigned_abs()
    }

    fn value(self) -> Value {
        Value::Coord(self.x as i64, self.y as i64)
    }
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DoorState {
    Open,
    Closed,
    Locked,
}

impl DoorState {
    pub fn code(self) -> i64 {
        match self {
            DoorState::Open => DOOR_OPEN,
            DoorState::Closed => DOOR_CLOSED,
            DoorState::Locked => DOOR_LOCKED,
        }
    }
}

/// Object ids of the `(object, color, state)` cell encoding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ObjectId {
    Empty = 1,
    Wall = 2,
    Door = 4,
    Key = 5,
    Box = 7,
    Goal = 8,
    Agent = 10,
}

/// One grid cell as an `(object id, color, state)` triple. `state` holds the
/// door state code for doors and the direction for the agent, else 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Cell {
    pub object: ObjectId,
    pub color: Option<Color>,
    pub state: i64,
}

/// Static part of a state.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Layout {
    pub size: usize,
    walls: Vec<bool>,
    /// Door position per color.
    pub doors: [Option<Pos>; 6],
    /// Box position and contained key color per box color.
    pub boxes: [Option<(Pos, Option<Color>)>; 6],
    pub goal: Option<Pos>,
}

impl Layout {
    /// An empty room of side `size` surrounded by walls.
    pub fn empty(size: usize) -> Self {
        let mut walls = vec![false; size * size];
        for i in 0..size {
            walls[i] = true;
            walls[(size - 1) * size + i] = true;
            walls[i * size] = true;
            walls[i * size + size - 1] = true;
        }
        Layout {
            size,
            walls,
            doors: [None; 6],
            boxes: [None; 6],
            goal: None,
        }
    }

    pub fn is_wall(&self, p: Pos) -> bool {
        let (x, y) = (p.x as usize, p.y as usize);
        x >= self.size || y >= self.size || self.walls[y * self.size + x]
    }

    pub fn set_wall(&mut self, p: Pos, wall: bool) {
        self.walls[p.y as usize * self.size + p.x as usize] = wall;
    }

    pub fn door_at(&self, p: Pos) -> Option<Color> {
        Color::ALL.into_iter().find(|c| self.doors[c.index()] == Some(p))
    }

    /// Free cells: not a wall and not a door.
    pub fn open_cells(&self) -> impl Iterator<Item = Pos> + '_ {
        (0..self.size)
            .flat_map(move |y| (0..self.size).map(move |x| Pos::new(x, y)))
            .filter(move |&p| !self.is_wall(p) && self.door_at(p).is_none())
    }
}

/// Dynamic part of a state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct DynState {
    pub agent: Pos,
    pub dir: u8,
    pub carried: Option<Color>,
    /// On-grid key position per color.
    pub keys: [Option<Pos>; 6],
    pub doors: [DoorState; 6],
    /// Bit `c` set while the box of color `c` is still closed on the grid.
    pub boxes: u8,
}

impl DynState {
    pub fn box_present(&self, c: Color) -> bool {
        self.boxes & (1 << c.index()) != 0
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct EnvState {
    pub layout: Arc<Layout>,
    pub dynamic: DynState,
}

/// Borrowed view of a state: a layout plus a dynamic part.
#[derive(Clone, Copy, Debug)]
pub struct StateRef<'a> {
    pub layout: &'a Layout,
    pub dynamic: DynState,
}

impl<'a> StateRef<'a> {
    pub fn new(layout: &'a Layout, dynamic: DynState) -> Self {
        Self { layout, dynamic }
    }
}

impl EnvState {
    pub fn new(layout: Arc<Layout>, dynamic: DynState) -> Self {
        Self { layout, dynamic }
    }

    pub fn view(&self) -> StateRef<'_> {
        StateRef::new(&self.layout, self.dynamic)
    }

    pub fn agent(&self) -> Pos {
        self.dynamic.agent
    }

    pub fn front(&self) -> Pos {
        self.view().front()
    }

    pub fn key_at(&self, p: Pos) -> Option<Color> {
        self.view().key_at(p)
    }

    pub fn box_at(&self, p: Pos) -> Option<Color> {
        self.view().box_at(p)
    }

    pub fn passable(&self, p: Pos) -> bool {
        self.view().passable(p)
    }

    pub fn key_exists(&self, c: Color) -> bool {
        self.view().key_exists(c)
    }

    pub fn cell(&self, p: Pos) -> Cell {
        self.view().cell(p)
    }

    pub fn grid(&self) -> Vec<Cell> {
        self.view().grid()
    }

    pub fn drop_targets(&self) -> Vec<Pos> {
        self.view().drop_targets()
    }

    /// Deterministic transition.
    pub fn step(&self, action: Action) -> EnvState {
        EnvState::new(self.layout.clone(), self.view().step(action))
    }

    /// Stable hash of the dynamic state, used in episode traces.
    pub fn state_hash(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.dynamic.hash(&mut h);
        h.finish()
    }
}

impl Valuation for EnvState {
    fn predicate(&self, id: usize, index: Option<i64>) -> Value {
        self.view().predicate(id, index)
    }
}

impl StateRef<'_> {
    pub fn agent(&self) -> Pos {
        self.dynamic.agent
    }

    pub fn front(&self) -> Pos {
        self.dynamic.agent.step(self.dynamic.dir)
    }

    pub fn key_at(&self, p: Pos) -> Option<Color> {
        Color::ALL.into_iter().find(|c| self.dynamic.keys[c.index()] == Some(p))
    }

    pub fn box_at(&self, p: Pos) -> Option<Color> {
        Color::ALL.into_iter().find(|c| {
            self.dynamic.box_present(*c) && self.layout.boxes[c.index()].map(|(bp, _)| bp) == Some(p)
        })
    }

    /// Whether the agent could occupy `p`.
    pub fn passable(&self, p: Pos) -> bool {
        if self.layout.is_wall(p) || self.key_at(p).is_some() || self.box_at(p).is_some() {
            return false;
        }
        match self.layout.door_at(p) {
            Some(c) => self.dynamic.doors[c.index()] == DoorState::Open,
            None => true,
        }
    }

    /// Whether a key could be dropped on `p`.
    pub fn droppable(&self, p: Pos) -> bool {
        !self.layout.is_wall(p)
            && self.layout.door_at(p).is_none()
            && self.layout.goal != Some(p)
            && self.key_at(p).is_none()
            && self.box_at(p).is_none()
            && p != self.dynamic.agent
    }

    /// Whether the key of color `c` exists somewhere: on the grid, carried or
    /// inside a closed box.
    pub fn key_exists(&self, c: Color) -> bool {
        self.dynamic.keys[c.index()].is_some()
            || self.dynamic.carried == Some(c)
            || Color::ALL.into_iter().any(|b| {
                self.dynamic.box_present(b) && self.layout.boxes[b.index()].and_then(|(_, k)| k) == Some(c)
            })
    }

    /// The `(object, color, state)` encoding of cell `p`.
    pub fn cell(&self, p: Pos) -> Cell {
        let plain = |object| Cell {
            object,
            color: None,
            state: 0,
        };
        if p == self.dynamic.agent {
            return Cell {
                object: ObjectId::Agent,
                color: None,
                state: self.dynamic.dir as i64,
            };
        }
        if self.layout.is_wall(p) {
            return plain(ObjectId::Wall);
        }
        if let Some(c) = self.layout.door_at(p) {
            return Cell {
                object: ObjectId::Door,
                color: Some(c),
                state: self.dynamic.doors[c.index()].code(),
            };
        }
        if let Some(c) = self.key_at(p) {
            return Cell {
                object: ObjectId::Key,
                color: Some(c),
                state: 0,
            };
        }
        if let Some(c) = self.box_at(p) {
            return Cell {
                object: ObjectId::Box,
                color: Some(c),
                state: 0,
            };
        }
        if self.layout.goal == Some(p) {
            return plain(ObjectId::Goal);
        }
        plain(ObjectId::Empty)
    }

    /// Row-major grid of cells.
    pub fn grid(&self) -> Vec<Cell> {
        let n = self.layout.size;
        (0..n)
            .flat_map(|y| (0..n).map(move |x| Pos::new(x, y)))
            .map(|p| self.cell(p))
            .collect()
    }

    /// Deterministic transition. Inapplicable actions leave the state
    /// unchanged.
    pub fn step(&self, action: Action) -> DynState {
        let mut next = self.dynamic;
        let d = &mut next;
        let front = self.front();
        match action {
            Action::Left => d.dir = (d.dir + 3) % 4,
            Action::Right => d.dir = (d.dir + 1) % 4,
            Action::Forward => {
                if self.passable(front) {
                    d.agent = front;
                }
            }
            Action::Pickup => {
                if d.carried.is_none() {
                    if let Some(c) = self.key_at(front) {
                        d.keys[c.index()] = None;
                        d.carried = Some(c);
                    }
                }
            }
            Action::Drop => {
                if let Some(c) = d.carried {
                    if self.droppable(front) {
                        d.keys[c.index()] = Some(front);
                        d.carried = None;
                    }
                }
            }
            Action::Toggle => {
                if let Some(c) = self.layout.door_at(front) {
                    let s = &mut d.doors[c.index()];
                    *s = match *s {
                        DoorState::Open => DoorState::Closed,
                        DoorState::Closed => DoorState::Open,
                        DoorState::Locked if self.dynamic.carried == Some(c) => DoorState::Open,
                        DoorState::Locked => DoorState::Locked,
                    };
                } else if let Some(b) = self.box_at(front) {
                    d.boxes &= !(1 << b.index());
                    if let Some((_, Some(k))) = self.layout.boxes[b.index()] {
                        d.keys[k.index()] = Some(front);
                    }
                }
            }
            Action::Done => {}
        }
        next
    }

    /// Free orthogonal neighbors of the agent where a dropped key may land.
    pub fn drop_targets(&self) -> Vec<Pos> {
        (0..4)
            .map(|dir| self.dynamic.agent.step(dir))
            .filter(|&p| self.droppable(p))
            .collect()
    }

}

impl Valuation for StateRef<'_> {
    fn predicate(&self, id: usize, index: Option<i64>) -> Value {
        let color = index.and_then(Color::from_index);
        let d = &self.dynamic;
        let door_visible = |c: Color| self.layout.doors[c.index()].filter(|&p| p != d.agent);
        match id {
            pred::AGENT_POS => d.agent.value(),
            pred::AGENT_DIR => Value::Int(d.dir as i64),
            pred::KEY_POS => color
                .and_then(|c| d.keys[c.index()])
                .map_or(Value::ABSENT_COORD, Pos::value),
            pred::DOOR_POS => color
                .and_then(door_visible)
                .map_or(Value::ABSENT_COORD, Pos::value),
            pred::DOOR_STATE => color
                .filter(|&c| door_visible(c).is_some())
                .map_or(Value::Int(ABSENT), |c| Value::Int(d.doors[c.index()].code())),
            pred::BOX_POS => color
                .filter(|&c| d.box_present(c))
                .and_then(|c| self.layout.boxes[c.index()])
                .map_or(Value::ABSENT_COORD, |(p, _)| p.value()),
            pred::GOAL_POS => self.layout.goal.map_or(Value::ABSENT_COORD, Pos::value),
            _ => Value::Int(ABSENT),
        }
    }
}

/// A task `<template, bindings, goal>` with its word encoding.
#[derive(Clone, Debug, PartialEq)]
pub struct Task {
    pub template: String,
    pub bindings: Vec<(String, i64)>,
    pub goal: Vec<Formula>,
    pub encoding: Vec<u32>,
}

impl Task {
    /// The template with every `{var}` replaced by its bound color name.
    pub fn text(&self) -> String {
        let mut s = self.template.clone();
        for (name, v) in &self.bindings {
            let value = Color::from_index(*v).map_or_else(|| v.to_string(), |c| c.name().to_string());
            s = s.replace(&format!("{{{name}}}"), &value);
        }
        s
    }

    pub fn goal_holds<V: Valuation + ?Sized>(&self, state: &V) -> bool {
        self.goal.iter().all(|g| g.eval(state, self).unwrap_or(false))
    }

    pub fn binding(&self, name: &str) -> Option<i64> {
        self.task_var(name)
    }

    pub fn color(&self, name: &str) -> Option<Color> {
        self.task_var(name).and_then(Color::from_index)
    }
}

impl TaskBinding for Task {
    fn task_var(&self, name: &str) -> Option<i64> {
        self.bindings.task_var(name)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DynamicsConfig {
    pub stochastic: bool,
    pub flip_prob: f64,
    pub rng_seed: u64,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self {
            stochastic: false,
            flip_prob: 0.05,
            rng_seed: 0,
        }
    }
}

impl DynamicsConfig {
    pub fn deterministic() -> Self {
        Self {
            stochastic: false,
            flip_prob: 0.0,
            rng_seed: 0,
        }
    }

    pub fn stochastic(flip_prob: f64, rng_seed: u64) -> Self {
        Self {
            stochastic: true,
            flip_prob,
            rng_seed,
        }
    }

    /// Drop probability actually applied per carry-step.
    pub fn effective_flip_prob(&self) -> f64 {
        if self.stochastic {
            self.flip_prob.clamp(0.0, 1.0)
        } else {
            0.0
        }
    }
}

/// Applies `action`, then under stochastic dynamics lets a carried key slip
/// onto a uniformly chosen free orthogonal neighbor. Returns the next state
/// and whether the key slipped.
pub fn step_env<R: Rng + ?Sized>(
    s: &EnvState,
    action: Action,
    dynamics: &DynamicsConfig,
    rng: &mut R,
) -> (EnvState, bool) {
    let mut next = s.step(action);
    let p = dynamics.effective_flip_prob();
    if p > 0.0 {
        if let Some(c) = next.dynamic.carried {
            if rng.gen_bool(p) {
                let targets = next.drop_targets();
                if !targets.is_empty() {
                    let at = targets[rng.gen_range(0..targets.len())];
                    next.dynamic.keys[c.index()] = Some(at);
                    next.dynamic.carried = None;
                    return (next, true);
                }
            }
        }
    }
    (next, false)
}

/// Outcome of one [`Env::step`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub goal_reached: bool,
    /// Step limit hit without reaching the goal.
    pub truncated: bool,
    /// The carried key slipped this step.
    pub key_slipped: bool,
}

impl StepOutcome {
    pub fn done(&self) -> bool {
        self.goal_reached || self.truncated
    }
}

/// A seeded episode runner over one task space.
#[derive(Clone, Debug)]
pub struct Env {
    space: Arc<TaskSpace>,
    dynamics: DynamicsConfig,
    rng: ChaCha8Rng,
    state: EnvState,
    task: Task,
    t: usize,
}

impl Env {
    pub fn new(space: Arc<TaskSpace>, dynamics: DynamicsConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(dynamics.rng_seed);
        let (state, task) = space.sample_episode(&mut rng);
        Self {
            space,
            dynamics,
            rng,
            state,
            task,
            t: 0,
        }
    }

    pub fn reset(&mut self) -> (&EnvState, &Task) {
        let (state, task) = self.space.sample_episode(&mut self.rng);
        self.state = state;
        self.task = task;
        self.t = 0;
        (&self.state, &self.task)
    }

    /// Starts an episode from a given state and task.
    pub fn reset_to(&mut self, state: EnvState, task: Task) {
        self.state = state;
        self.task = task;
        self.t = 0;
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn task(&self) -> &Task {
        &self.task
    }

    pub fn space(&self) -> &Arc<TaskSpace> {
        &self.space
    }

    pub fn elapsed(&self) -> usize {
        self.t
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn step(&mut self, action: Action) -> StepOutcome {
        let (next, key_slipped) = step_env(&self.state, action, &self.dynamics, &mut self.rng);
        self.state = next;
        self.t += 1;
        let goal_reached = self.task.goal_holds(&self.state);
        StepOutcome {
            goal_reached,
            truncated: !goal_reached && self.t >= self.space.max_steps(),
            key_slipped,
        }
    }
}

/// Writes per-step episode records `t,state_hash,action,reward,done` as CSV.
pub struct EpisodeTraceWriter<W: Write> {
    out: W,
}

impl<W: Write> EpisodeTraceWriter<W> {
    pub fn new(mut out: W) -> io::Result<Self> {
        writeln!(out, "t,state_hash,action,reward,done")?;
        Ok(Self { out })
    }

    pub fn record(&mut self, t: usize, state: &EnvState, action: Action, reward: f64, done: bool) -> io::Result<()> {
        writeln!(self.out, "{t},{:016x},{action},{reward},{done}", state.state_hash())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

#[cfg(test)]
mod tests;
