//! Breadth-first planning over deterministic dynamics, and a scripted expert
//! built on it.

use std::collections::{HashMap, VecDeque};

use super::{Action, DoorState, DynState, EnvState, Task};

/// Shortest action sequence from `start` to a state satisfying `target`,
/// searching at most `max_depth` steps. `done` is never used.
pub fn plan<F>(start: &EnvState, target: F, max_depth: usize) -> Option<Vec<Action>>
where
    F: Fn(&EnvState) -> bool,
{
    if target(start) {
        return Some(Vec::new());
    }
    let mut parent: HashMap<DynState, (DynState, Action)> = HashMap::new();
    let mut frontier = vec![start.dynamic];
    parent.insert(start.dynamic, (start.dynamic, Action::Done));
    for _ in 0..max_depth {
        let mut next = Vec::new();
        for d in frontier {
            let s = EnvState::new(start.layout.clone(), d);
            for a in &Action::ALL[..6] {
                let n = s.step(*a);
                if parent.contains_key(&n.dynamic) {
                    continue;
                }
                parent.insert(n.dynamic, (d, *a));
                if target(&n) {
                    let mut actions = vec![*a];
                    let mut cur = d;
                    while cur != start.dynamic {
                        let (p, a) = parent[&cur];
                        actions.push(a);
                        cur = p;
                    }
                    actions.reverse();
                    return Some(actions);
                }
                next.push(n.dynamic);
            }
        }
        if next.is_empty() {
            break;
        }
        frontier = next;
    }
    None
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExpertOptions {
    /// Drop the carried key right after the door it opens is open.
    pub drop_key_after_door: bool,
    pub max_depth: usize,
}

impl Default for ExpertOptions {
    fn default() -> Self {
        Self {
            drop_key_after_door: false,
            max_depth: 200,
        }
    }
}

/// Goal-directed scripted policy. Replans whenever the observed state
/// deviates from the one its plan predicted.
#[derive(Clone, Debug)]
pub struct Expert {
    opts: ExpertOptions,
    queue: VecDeque<Action>,
    expected: Option<DynState>,
    dropped: bool,
    drop_turns: u8,
}

impl Expert {
    pub fn new(opts: ExpertOptions) -> Self {
        Self {
            opts,
            queue: VecDeque::new(),
            expected: None,
            dropped: false,
            drop_turns: 0,
        }
    }

    /// Clears per-episode memory.
    pub fn reset(&mut self) {
        self.queue.clear();
        self.expected = None;
        self.dropped = false;
        self.drop_turns = 0;
    }

    pub fn act(&mut self, state: &EnvState, task: &Task) -> Action {
        if self.opts.drop_key_after_door && !self.dropped {
            if let Some(c) = state.dynamic.carried {
                let opened = state.layout.doors[c.index()].is_some() && state.dynamic.doors[c.index()] == DoorState::Open;
                if opened {
                    self.queue.clear();
                    self.expected = None;
                    if state.step(Action::Drop).dynamic.carried.is_none() {
                        self.dropped = true;
                        return Action::Drop;
                    }
                    if self.drop_turns < 4 {
                        self.drop_turns += 1;
                        return Action::Left;
                    }
                    // Boxed in on all sides: keep the key.
                    self.dropped = true;
                }
            }
        }
        if self.expected != Some(state.dynamic) || self.queue.is_empty() {
            self.queue = plan(state, |s| task.goal_holds(s), self.opts.max_depth)
                .unwrap_or_default()
                .into();
        }
        let a = self.queue.pop_front().unwrap_or(Action::Done);
        self.expected = Some(state.step(a).dynamic);
        a
    }
}
