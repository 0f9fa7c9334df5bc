use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{minigrid_schema, DoorState, DynState, EnvState, Layout, Pos, Task};
use crate::formula::Formula;
use crate::schema::{Color, EnvSchema, COLOR_NAMES};

/// Default DroneSupplier neighborhood map (`#` wall, `.` free).
pub const DRONE_MAP: &str = include_str!("../../assets/maps/drone_supplier.map");

const DRONE_BOXES: [(usize, usize); 6] = [(2, 2), (8, 3), (15, 2), (1, 15), (15, 16), (8, 22)];
const DRONE_DOORS: [(usize, usize); 6] = [(7, 4), (14, 7), (22, 8), (6, 13), (10, 17), (22, 21)];

const VOCAB: [&str; 30] = [
    "<unk>", "use", "the", "key", "to", "open", "door", "and", "then", "get", "goal", "from", "room",
    "unlock", "go", "box", "pick", "up", "lockedroom", "keyroom", "colour", "color", "red", "green",
    "blue", "purple", "yellow", "grey", "a", "of",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpaceName {
    DoorKey,
    LockedRoom,
    DroneSupplier,
}

impl SpaceName {
    pub const ALL: [SpaceName; 3] = [SpaceName::DoorKey, SpaceName::LockedRoom, SpaceName::DroneSupplier];

    pub fn as_str(self) -> &'static str {
        match self {
            SpaceName::DoorKey => "doorkey",
            SpaceName::LockedRoom => "lockedroom",
            SpaceName::DroneSupplier => "dronesupplier",
        }
    }

    pub fn full_size(self) -> usize {
        match self {
            SpaceName::DoorKey => 16,
            SpaceName::LockedRoom => 19,
            SpaceName::DroneSupplier => 25,
        }
    }

    /// Reduced size used for desk-scale training and verification.
    pub fn desk_size(self) -> usize {
        match self {
            SpaceName::DoorKey => 8,
            SpaceName::LockedRoom => 13,
            SpaceName::DroneSupplier => 25,
        }
    }

    fn full_max_steps(self) -> usize {
        match self {
            SpaceName::DoorKey => 500,
            SpaceName::LockedRoom => 190,
            SpaceName::DroneSupplier => 500,
        }
    }
}

impl fmt::Display for SpaceName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SpaceName {
    type Err = SpaceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_lowercase();
        Self::ALL
            .into_iter()
            .find(|n| n.as_str() == norm)
            .ok_or_else(|| SpaceError::UnknownSpace(s.to_string()))
    }
}

/// How episode layouts are drawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayoutMode {
    /// Object placement and room colors are resampled every episode.
    Random,
    /// Placement is a function of the task; only the agent start varies.
    Fixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpaceConfig {
    pub name: SpaceName,
    /// Grid side; `None` selects the full size.
    pub size: Option<usize>,
    /// Defaults to `Random` at full size and `Fixed` otherwise.
    pub layout: Option<LayoutMode>,
    /// Replacement DroneSupplier map text.
    pub map: Option<String>,
}

impl SpaceConfig {
    pub fn full(name: SpaceName) -> Self {
        Self {
            name,
            size: None,
            layout: None,
            map: None,
        }
    }

    pub fn desk(name: SpaceName) -> Self {
        Self::sized(name, name.desk_size())
    }

    pub fn sized(name: SpaceName, size: usize) -> Self {
        Self {
            name,
            size: Some(size),
            layout: None,
            map: None,
        }
    }

    pub fn with_layout(mut self, layout: LayoutMode) -> Self {
        self.layout = Some(layout);
        self
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SpaceError {
    #[error("unknown task space `{0}` (expected doorkey, lockedroom or dronesupplier)")]
    UnknownSpace(String),
    #[error("{space} does not support grid size {size}: {reason}")]
    BadSize {
        space: SpaceName,
        size: usize,
        reason: &'static str,
    },
    #[error("invalid map: {0}")]
    Map(String),
}

/// A task space `<template, variables, goal>` together with its schema and
/// episode generator.
#[derive(Debug)]
pub struct TaskSpace {
    name: SpaceName,
    size: usize,
    layout_mode: LayoutMode,
    schema: Arc<EnvSchema>,
    template: String,
    vars: Vec<String>,
    goal_text: Vec<String>,
    max_steps: usize,
    tasks: Vec<Task>,
    base: Arc<Layout>,
}

impl TaskSpace {
    pub fn new(cfg: &SpaceConfig) -> Result<Self, SpaceError> {
        let name = cfg.name;
        let size = cfg.size.unwrap_or(name.full_size());
        let layout_mode = cfg.layout.unwrap_or(if size == name.full_size() && cfg.size.is_none() {
            LayoutMode::Random
        } else {
            LayoutMode::Fixed
        });
        let bad = |reason| SpaceError::BadSize { space: name, size, reason };
        let (template, vars, goal_text, base): (&str, &[&str], &str, Layout) = match name {
            SpaceName::DoorKey => {
                if !(5..=64).contains(&size) {
                    return Err(bad("DoorKey needs 5 <= size <= 64"));
                }
                (
                    "use the key to open the door and then get to the goal",
                    &[],
                    "agent_pos == goal_pos",
                    Layout::empty(size),
                )
            }
            SpaceName::LockedRoom => {
                if size < 13 || !(size - 1).is_multiple_of(3) || size > 64 {
                    return Err(bad("LockedRoom needs size >= 13 with size - 1 divisible by 3"));
                }
                (
                    "get the {key_color} key from the {room_color} room, unlock the {door_color} door and go to the goal",
                    &["key_color", "room_color", "door_color"],
                    "agent_pos == goal_pos",
                    locked_room_walls(size),
                )
            }
            SpaceName::DroneSupplier => {
                let layout = parse_map(cfg.map.as_deref().unwrap_or(DRONE_MAP))?;
                if cfg.size.is_some_and(|s| s != layout.size) {
                    return Err(bad("DroneSupplier size is fixed by its map"));
                }
                (
                    "open the {box_color} box, pick up the key, then open the {door_color} door",
                    &["box_color", "door_color"],
                    "door_state[door_color] == OPEN",
                    layout,
                )
            }
        };
        let size = base.size;
        let schema = Arc::new(minigrid_schema(size));
        let full = name.full_size();
        let max_steps = ((name.full_max_steps() * size * size) as f64 / (full * full) as f64).round() as usize;
        let mut space = TaskSpace {
            name,
            size,
            layout_mode,
            schema,
            template: template.to_string(),
            vars: vars.iter().map(|s| s.to_string()).collect(),
            goal_text: vec![goal_text.to_string()],
            max_steps,
            tasks: Vec::new(),
            base: Arc::new(base),
        };
        space.tasks = space.enumerate_tasks();
        Ok(space)
    }

    pub fn name(&self) -> SpaceName {
        self.name
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn layout_mode(&self) -> LayoutMode {
        self.layout_mode
    }

    pub fn schema(&self) -> &Arc<EnvSchema> {
        &self.schema
    }

    pub fn template(&self) -> &str {
        &self.template
    }

    pub fn task_vars(&self) -> Vec<&str> {
        self.vars.iter().map(String::as_str).collect()
    }

    pub fn goal_text(&self) -> &[String] {
        &self.goal_text
    }

    pub fn max_steps(&self) -> usize {
        self.max_steps
    }

    /// Number of task variants: bindings over the six colors, with the key
    /// color tied to the door color where the task requires it.
    pub fn num_variants(&self) -> usize {
        self.bindings().filter(|b| self.consistent(b)).count()
    }

    fn bindings(&self) -> impl Iterator<Item = Vec<i64>> {
        let k = self.vars.len();
        (0..6usize.pow(k as u32)).map(move |code| {
            (0..k)
                .map(|i| ((code / 6usize.pow((k - 1 - i) as u32)) % 6) as i64)
                .collect()
        })
    }

    fn consistent(&self, b: &[i64]) -> bool {
        match self.name {
            SpaceName::LockedRoom => b[0] == b[2],
            _ => true,
        }
    }

    /// Feasible tasks, in binding order.
    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    /// Words of the task-encoding vocabulary; ids index this list.
    pub fn vocabulary() -> &'static [&'static str] {
        &VOCAB
    }

    /// Variants that admit a layout: the key room differs from the locked room.
    fn feasible(&self, b: &[i64]) -> bool {
        self.consistent(b)
            && match self.name {
                SpaceName::LockedRoom => b[1] != b[2],
                _ => true,
            }
    }

    fn enumerate_tasks(&self) -> Vec<Task> {
        let goal: Vec<Formula> = self
            .goal_text
            .iter()
            .map(|g| Formula::parse(g, &self.schema, &self.task_vars()).expect("static goal parses"))
            .collect();
        let mut out = Vec::new();
        for b in self.bindings() {
            if !self.feasible(&b) {
                continue;
            }
            let mut task = Task {
                template: self.template.clone(),
                bindings: self.vars.iter().cloned().zip(b).collect(),
                goal: goal.clone(),
                encoding: Vec::new(),
            };
            task.encoding = encode(&task.text());
            out.push(task);
        }
        out
    }

    /// Text description of the task space for generator prompts.
    pub fn describe(&self) -> String {
        let mut s = format!("Task space: {}\nGrid: {}x{}\n", self.name, self.size, self.size);
        s += &format!("Task template: \"{}\"\n", self.template);
        if self.vars.is_empty() {
            s += "Task variables: none\n";
        } else {
            s += &format!(
                "Task variables: {} (each one of {})\n",
                self.vars.join(", "),
                COLOR_NAMES.join(", ")
            );
        }
        s += &format!("Goal: {}\n", self.goal_text.join(" && "));
        s += "Predicates:\n";
        for p in self.schema.predicates() {
            let idx = if p.color_indexed { "[color]" } else { "" };
            let kind = match p.kind {
                crate::schema::PredicateKind::Coord2 => "(x, y) position, (-1, -1) when absent or occluded",
                crate::schema::PredicateKind::Scalar => "integer, -1 when absent or occluded",
            };
            s += &format!("  {}{idx}: {kind}\n", p.name);
        }
        s += "Door states: OPEN, CLOSED, LOCKED. Directions: 0 east, 1 south, 2 west, 3 north.\n";
        s += &format!("Actions: {}\n", self.schema.actions().join(", "));
        s
    }

    /// Draws a random task and an initial state for it.
    pub fn sample_episode<R: Rng + ?Sized>(&self, rng: &mut R) -> (EnvState, Task) {
        let task = self.tasks.choose(rng).expect("task spaces have tasks").clone();
        let state = self.initial_state(&task, rng);
        (state, task)
    }

    pub fn initial_state<R: Rng + ?Sized>(&self, task: &Task, rng: &mut R) -> EnvState {
        let (layout, dynamic) = self.layout_for(task, rng);
        let starts = self.start_cells(&layout, &dynamic);
        let mut d = dynamic;
        d.agent = *starts.choose(rng).expect("layouts leave a start cell");
        d.dir = rng.gen_range(0..4);
        EnvState::new(layout, d)
    }

    /// Every initial state of `task`, when the layout is fixed.
    pub fn initial_states(&self, task: &Task) -> Option<Vec<EnvState>> {
        if self.layout_mode != LayoutMode::Fixed {
            return None;
        }
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let (layout, dynamic) = self.layout_for(task, &mut rng);
        let mut out = Vec::new();
        for p in self.start_cells(&layout, &dynamic) {
            for dir in 0..4 {
                let mut d = dynamic;
                d.agent = p;
                d.dir = dir;
                out.push(EnvState::new(layout.clone(), d));
            }
        }
        Some(out)
    }

    /// Initial states of `task`: every one under a fixed layout, otherwise up
    /// to `samples` distinct draws from a generator seeded by `seed`.
    pub fn init_set(&self, task: &Task, samples: usize, seed: u64) -> InitSet {
        if let Some(states) = self.initial_states(task) {
            return InitSet {
                states,
                exhaustive: true,
            };
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut states: Vec<EnvState> = Vec::with_capacity(samples);
        for _ in 0..samples * 4 {
            if states.len() == samples {
                break;
            }
            let s = self.initial_state(task, &mut rng);
            if !states.contains(&s) {
                states.push(s);
            }
        }
        InitSet {
            states,
            exhaustive: false,
        }
    }

    fn start_cells(&self, layout: &Layout, d: &DynState) -> Vec<Pos> {
        let probe = EnvState::new(Arc::new(layout.clone()), *d);
        let free = |p: &Pos| probe.passable(*p) && layout.goal != Some(*p) && layout.door_at(*p).is_none();
        match self.name {
            SpaceName::DoorKey => {
                let split = layout.doors[Color::Yellow.index()].map_or(self.size, |p| p.x as usize);
                layout.open_cells().filter(|p| (p.x as usize) < split && free(p)).collect()
            }
            SpaceName::LockedRoom => {
                let (lw, rw) = locked_room_walls_x(self.size);
                layout
                    .open_cells()
                    .filter(|p| (p.x as usize) > lw && (p.x as usize) < rw && free(p))
                    .collect()
            }
            SpaceName::DroneSupplier => layout.open_cells().filter(free).collect(),
        }
    }

    /// Layout and object state for `task` with the agent unplaced.
    fn layout_for<R: Rng + ?Sized>(&self, task: &Task, rng: &mut R) -> (Arc<Layout>, DynState) {
        let random = self.layout_mode == LayoutMode::Random;
        let mut layout = (*self.base).clone();
        let mut d = DynState {
            agent: Pos::new(1, 1),
            dir: 0,
            carried: None,
            keys: [None; 6],
            doors: [DoorState::Open; 6],
            boxes: 0,
        };
        let n = self.size;
        match self.name {
            SpaceName::DoorKey => {
                let (split, door_y) = if random {
                    (rng.gen_range(2..=n - 3), rng.gen_range(1..=n - 2))
                } else {
                    (n / 2, n / 2)
                };
                for y in 0..n {
                    layout.set_wall(Pos::new(split, y), true);
                }
                let door = Pos::new(split, door_y);
                layout.set_wall(door, false);
                layout.doors[Color::Yellow.index()] = Some(door);
                d.doors[Color::Yellow.index()] = DoorState::Locked;
                layout.goal = Some(Pos::new(n - 2, n - 2));
                let key = if random {
                    let cells: Vec<Pos> = (1..n - 1)
                        .flat_map(|y| (1..split).map(move |x| Pos::new(x, y)))
                        .collect();
                    *cells.choose(rng).expect("left room is non-empty")
                } else {
                    Pos::new(split - 1, (door_y - 1).max(1))
                };
                d.keys[Color::Yellow.index()] = Some(key);
            }
            SpaceName::LockedRoom => {
                let mut colors = Color::ALL;
                if random {
                    colors.shuffle(rng);
                }
                let rooms = locked_rooms(n);
                let key_color = task.color("key_color").expect("bound");
                let room_color = task.color("room_color").expect("bound");
                let door_color = task.color("door_color").expect("bound");
                for (room, &c) in rooms.iter().zip(&colors) {
                    layout.set_wall(room.door, false);
                    layout.doors[c.index()] = Some(room.door);
                    d.doors[c.index()] = if c == door_color {
                        DoorState::Locked
                    } else {
                        DoorState::Closed
                    };
                }
                let room_of = |c: Color| &rooms[colors.iter().position(|&x| x == c).expect("all colors placed")];
                let place = |room: &Room, rng: &mut R| {
                    if random {
                        *room.cells.choose(rng).expect("rooms are non-empty")
                    } else {
                        room.center
                    }
                };
                layout.goal = Some(place(room_of(door_color), rng));
                d.keys[key_color.index()] = Some(place(room_of(room_color), rng));
            }
            SpaceName::DroneSupplier => {
                let box_color = task.color("box_color").expect("bound");
                let door_color = task.color("door_color").expect("bound");
                let mut box_slots = DRONE_BOXES;
                let mut door_slots = DRONE_DOORS;
                if random {
                    box_slots.shuffle(rng);
                    door_slots.shuffle(rng);
                }
                for c in Color::ALL {
                    let (bx, by) = box_slots[c.index()];
                    let content = (c == box_color).then_some(door_color);
                    layout.boxes[c.index()] = Some((Pos::new(bx, by), content));
                    d.boxes |= 1 << c.index();
                    let (dx, dy) = door_slots[c.index()];
                    layout.doors[c.index()] = Some(Pos::new(dx, dy));
                    d.doors[c.index()] = DoorState::Locked;
                }
            }
        }
        (Arc::new(layout), d)
    }
}

/// Initial states handed to the verifier.
#[derive(Clone, Debug)]
pub struct InitSet {
    pub states: Vec<EnvState>,
    /// False when `states` is a sample of a larger set.
    pub exhaustive: bool,
}

struct Room {
    door: Pos,
    center: Pos,
    cells: Vec<Pos>,
}

fn locked_room_walls_x(n: usize) -> (usize, usize) {
    (n / 2 - 2, n / 2 + 2)
}

/// The six side rooms: left column top to bottom, then right column.
fn locked_rooms(n: usize) -> Vec<Room> {
    let (lw, rw) = locked_room_walls_x(n);
    let h = n / 3;
    let mut rooms = Vec::new();
    for (x0, x1, door_x) in [(1, lw - 1, lw), (rw + 1, n - 2, rw)] {
        for j in 0..3 {
            let top = j * h;
            let cy = top + h / 2;
            rooms.push(Room {
                door: Pos::new(door_x, cy),
                center: Pos::new((x0 + x1) / 2, cy),
                cells: (top + 1..top + h)
                    .flat_map(|y| (x0..=x1).map(move |x| Pos::new(x, y)))
                    .collect(),
            });
        }
    }
    rooms
}

fn locked_room_walls(n: usize) -> Layout {
    let mut l = Layout::empty(n);
    let (lw, rw) = locked_room_walls_x(n);
    let h = n / 3;
    for y in 0..n {
        l.set_wall(Pos::new(lw, y), true);
        l.set_wall(Pos::new(rw, y), true);
    }
    for j in 0..=3 {
        let y = j * h;
        for x in (0..=lw).chain(rw..n) {
            l.set_wall(Pos::new(x, y), true);
        }
    }
    l
}

fn parse_map(text: &str) -> Result<Layout, SpaceError> {
    let rows: Vec<&str> = text.lines().map(str::trim_end).filter(|l| !l.is_empty()).collect();
    let n = rows.len();
    if !(5..=64).contains(&n) {
        return Err(SpaceError::Map(format!("expected between 5 and 64 rows, got {n}")));
    }
    let mut layout = Layout::empty(n);
    for (y, row) in rows.iter().enumerate() {
        if row.chars().count() != n {
            return Err(SpaceError::Map(format!("row {} has {} cells, expected {n}", y + 1, row.chars().count())));
        }
        for (x, ch) in row.chars().enumerate() {
            let wall = match ch {
                '#' => true,
                '.' => false,
                other => return Err(SpaceError::Map(format!("unexpected character `{other}` at row {}", y + 1))),
            };
            let border = x == 0 || y == 0 || x == n - 1 || y == n - 1;
            layout.set_wall(Pos::new(x, y), wall || border);
        }
    }
    for (x, y) in DRONE_BOXES.iter().chain(&DRONE_DOORS) {
        if *x >= n || *y >= n || layout.is_wall(Pos::new(*x, *y)) {
            return Err(SpaceError::Map(format!("box/door slot ({x}, {y}) is not a free cell")));
        }
    }
    Ok(layout)
}

fn encode(text: &str) -> Vec<u32> {
    text.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|w| !w.is_empty())
        .map(|w| {
            let w = w.to_lowercase();
            VOCAB.iter().position(|v| *v == w).unwrap_or(0) as u32
        })
        .collect()
}
