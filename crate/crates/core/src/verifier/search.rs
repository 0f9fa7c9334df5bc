//! Bounded breadth-first search over deterministic gridworld dynamics.

use std::collections::{HashMap, HashSet};
use std::time::Instant;

use crate::gridworld::{Action, DynState, Layout, StateRef};

/// Result of one bounded search.
pub(crate) enum Outcome {
    /// States `s_0..s_n` and the `n` actions between them.
    Found(Vec<DynState>, Vec<Action>),
    Exhausted,
    TimedOut,
}

/// Actions explored by the search. `done` is excluded because it never
/// changes the state; padding with it is handled by the callers.
const MOVES: [Action; 6] = [
    Action::Left,
    Action::Right,
    Action::Forward,
    Action::Pickup,
    Action::Drop,
    Action::Toggle,
];

pub(crate) struct Search<'a> {
    pub layout: &'a Layout,
    /// Largest number of transitions in a path.
    pub max_steps: usize,
    /// With a no-op action a state reached early can wait, so the first
    /// visit dominates later ones. Without it, states are deduplicated per
    /// layer only.
    pub has_noop: bool,
    pub deadline: Instant,
}

impl Search<'_> {
    /// Breadth-first search from `starts`. A state is expanded only if
    /// `allowed` holds for it, and an edge is followed only if `edge_ok`
    /// holds. `target(prev, cur, depth)` is tested on every start (with
    /// `prev = None`) and on every generated edge before deduplication.
    pub fn run<A, E, T>(&self, starts: &[DynState], allowed: A, edge_ok: E, target: T) -> Outcome
    where
        A: Fn(StateRef<'_>) -> bool,
        E: Fn(StateRef<'_>, StateRef<'_>) -> bool,
        T: Fn(Option<StateRef<'_>>, StateRef<'_>, usize) -> bool,
    {
        let view = |d: DynState| StateRef::new(self.layout, d);
        let mut layers: Vec<HashMap<DynState, (DynState, Action)>> = Vec::new();
        let mut seen: HashSet<DynState> = HashSet::new();
        let mut frontier = Vec::new();
        for &s in starts {
            if target(None, view(s), 0) {
                return Outcome::Found(vec![s], Vec::new());
            }
            if allowed(view(s)) && seen.insert(s) {
                frontier.push(s);
            }
        }
        let mut work = 0usize;
        for depth in 1..=self.max_steps {
            if !self.has_noop {
                seen.clear();
            }
            let mut parents = HashMap::new();
            let mut next = Vec::new();
            for &d in &frontier {
                work += 1;
                if work % 4096 == 1 && Instant::now() >= self.deadline {
                    return Outcome::TimedOut;
                }
                let prev = view(d);
                for a in MOVES {
                    let n = prev.step(a);
                    if n == d {
                        continue;
                    }
                    let cur = view(n);
                    if !edge_ok(prev, cur) {
                        continue;
                    }
                    if target(Some(prev), cur, depth) {
                        layers.push(parents);
                        let (states, actions) = reconstruct(&layers, n, d, a);
                        return Outcome::Found(states, actions);
                    }
                    if allowed(cur) && seen.insert(n) {
                        parents.insert(n, (d, a));
                        next.push(n);
                    }
                }
            }
            layers.push(parents);
            if next.is_empty() {
                break;
            }
            frontier = next;
        }
        Outcome::Exhausted
    }
}

/// Walks parent links back from the final edge `prev --a--> last`.
fn reconstruct(
    layers: &[HashMap<DynState, (DynState, Action)>],
    last: DynState,
    prev: DynState,
    a: Action,
) -> (Vec<DynState>, Vec<Action>) {
    let mut states = vec![last, prev];
    let mut actions = vec![a];
    let mut cur = prev;
    // The final layer holds `last`'s siblings; `prev` lives one layer down.
    for layer in layers[..layers.len() - 1].iter().rev() {
        match layer.get(&cur) {
            Some(&(p, a)) => {
                actions.push(a);
                states.push(p);
                cur = p;
            }
            None => break,
        }
    }
    states.reverse();
    actions.reverse();
    (states, actions)
}
