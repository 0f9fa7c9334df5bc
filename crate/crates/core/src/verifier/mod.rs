//! Bounded verification of subtask formulas.
//!
//! Five specifications are checked over horizon-`H` trajectories of the
//! deterministic environment, for every task of a task space:
//!
//! | spec | property |
//! |------|----------|
//! | completion correctness | `g` at `H-1` implies `psi` held at some step |
//! | completion non-triviality | `N` distinct-start traces where `psi` never holds |
//! | proximity correctness | `!psi_t && psi_{t+1}` implies `phi_t` |
//! | proximity non-triviality | `N` distinct-start traces where `phi` never holds |
//! | composition persistence | `N` distinct-start goal-reaching traces on which no `psi` reverts |
//!
//! The engine is explicit-state breadth-first search. Because the action set
//! has a no-op (`done`), a state reached in fewer than `H-1` steps can be
//! padded to full length, so each state only needs its first visit.

mod demo;
mod search;

pub use demo::{collect_demos, test_with_demonstrations, DemoConfig, DemoError, DemoPolicy, DemoReport};

use std::fmt::{self, Write as _};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::formula::{Formula, Valuation};
use crate::gridworld::{pred, Action, DynState, EnvState, InitSet, Layout, StateRef, Task, TaskSpace};
use crate::mbrm::LabelSet;
use crate::schema::{Color, EnvSchema};
use crate::template::SubtaskSpec;
use search::{Outcome, Search};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Spec {
    CompletionCorrectness,
    CompletionNonTriviality,
    ObjectProximityCorrectness,
    ObjectProximityNonTriviality,
    CompositionPersistence,
}

impl Spec {
    pub const ALL: [Spec; 5] = [
        Spec::CompletionCorrectness,
        Spec::CompletionNonTriviality,
        Spec::ObjectProximityCorrectness,
        Spec::ObjectProximityNonTriviality,
        Spec::CompositionPersistence,
    ];

    pub fn title(self) -> &'static str {
        match self {
            Spec::CompletionCorrectness => "Completion correctness",
            Spec::CompletionNonTriviality => "Completion non-triviality",
            Spec::ObjectProximityCorrectness => "Object proximity correctness",
            Spec::ObjectProximityNonTriviality => "Object proximity non-triviality",
            Spec::CompositionPersistence => "Composition persistence",
        }
    }

    /// One-line statement used in debug prompts.
    pub fn statement(self) -> &'static str {
        match self {
            Spec::CompletionCorrectness => {
                "whenever the task goal holds at the final step, the completion formula psi must have held at some step"
            }
            Spec::CompletionNonTriviality => {
                "there must exist N trajectories with distinct initial states on which psi never holds"
            }
            Spec::ObjectProximityCorrectness => {
                "at the step immediately before psi becomes true, the proximity formula phi must hold"
            }
            Spec::ObjectProximityNonTriviality => {
                "there must exist N trajectories with distinct initial states on which phi never holds"
            }
            Spec::CompositionPersistence => {
                "there must exist N goal-reaching trajectories with distinct initial states on which every psi, once true, stays true"
            }
        }
    }
}

impl fmt::Display for Spec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.title())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum InconclusiveReason {
    Timeout,
    /// Only a sample of the initial states was searched.
    Sampled,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum VerdictResult {
    Holds,
    CounterexampleFound,
    WitnessesFound,
    /// Fewer than `N` witnesses exist.
    InsufficientWitnesses { found: usize },
    Inconclusive(InconclusiveReason),
}

impl VerdictResult {
    pub fn passed(self) -> bool {
        matches!(self, VerdictResult::Holds | VerdictResult::WitnessesFound)
    }

    pub fn failed(self) -> bool {
        matches!(
            self,
            VerdictResult::CounterexampleFound | VerdictResult::InsufficientWitnesses { .. }
        )
    }

    pub fn label(self) -> String {
        match self {
            VerdictResult::Holds => "holds".into(),
            VerdictResult::CounterexampleFound => "counterexample".into(),
            VerdictResult::WitnessesFound => "witnesses".into(),
            VerdictResult::InsufficientWitnesses { found } => format!("{found} witnesses"),
            VerdictResult::Inconclusive(InconclusiveReason::Timeout) => "timeout".into(),
            VerdictResult::Inconclusive(InconclusiveReason::Sampled) => "sampled".into(),
        }
    }
}

/// A finite trajectory of one task with its label assignments.
#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub task: Task,
    pub states: Vec<EnvState>,
    /// `actions[t]` leads from `states[t]` to `states[t + 1]`.
    pub actions: Vec<Action>,
    pub labels: Vec<LabelSet>,
    /// Names of the formulas behind `labels` bits.
    pub label_names: Vec<String>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Re-executes the actions from the first state through the concrete
    /// deterministic dynamics and reports whether every state matches.
    pub fn replays(&self) -> bool {
        let Some(first) = self.states.first() else {
            return true;
        };
        let mut s = first.clone();
        for (a, expected) in self.actions.iter().zip(&self.states[1..]) {
            s = s.step(*a);
            if &s != expected {
                return false;
            }
        }
        self.actions.len() + 1 == self.states.len()
    }

    /// Structured text: a header line followed by one record per step.
    pub fn render(&self, schema: &EnvSchema) -> String {
        let mut out = String::new();
        let bindings: Vec<String> = self
            .task
            .bindings
            .iter()
            .map(|(n, v)| format!("{n}={}", Color::from_index(*v).map_or(v.to_string(), |c| c.to_string())))
            .collect();
        let _ = writeln!(out, "task: \"{}\" [{}]", self.task.text(), bindings.join(", "));
        for (t, s) in self.states.iter().enumerate() {
            let action = self.actions.get(t).map_or("-", |a| a.name());
            let labels: Vec<&str> = self
                .labels
                .get(t)
                .map(|l| l.iter().filter_map(|i| self.label_names.get(i).map(String::as_str)).collect())
                .unwrap_or_default();
            let _ = writeln!(
                out,
                "t={t} {} labels={{{}}} action={action}",
                render_predicates(s, schema),
                labels.join(",")
            );
        }
        out
    }
}

fn show(v: crate::formula::Value) -> String {
    use crate::formula::Value;
    match v {
        Value::Bool(b) => b.to_string(),
        Value::Int(i) => i.to_string(),
        Value::Coord(x, _) if x < 0 => "-1".to_string(),
        Value::Coord(x, y) => format!("({x},{y})"),
    }
}

fn render_predicates(s: &EnvState, schema: &EnvSchema) -> String {
    let mut parts = vec![
        format!("agent_pos={}", show(s.predicate(pred::AGENT_POS, None))),
        format!("agent_dir={}", show(s.predicate(pred::AGENT_DIR, None))),
        format!("carrying={}", s.dynamic.carried.map_or("none".to_string(), |c| format!("{c} key"))),
    ];
    let preds = schema.predicates();
    for c in Color::ALL {
        let idx = Some(c.index() as i64);
        let has_key = s.key_exists(c);
        let has_door = s.layout.doors[c.index()].is_some();
        let has_box = s.layout.boxes[c.index()].is_some();
        for (id, present) in [
            (pred::KEY_POS, has_key),
            (pred::DOOR_POS, has_door),
            (pred::DOOR_STATE, has_door),
            (pred::BOX_POS, has_box),
        ] {
            if present {
                parts.push(format!("{}[{c}]={}", preds[id].name, show(s.predicate(id, idx))));
            }
        }
    }
    if s.layout.goal.is_some() {
        parts.push(format!("goal_pos={}", show(s.predicate(pred::GOAL_POS, None))));
    }
    parts.join(" ")
}

/// Verdict of one (spec, subtask) check.
#[derive(Clone, Debug)]
pub struct VerifyVerdict {
    pub spec: Spec,
    /// The checked subtask; for persistence, the first violating subtask.
    pub subtask_index: Option<usize>,
    pub result: VerdictResult,
    /// Counterexample, or for a persistence failure a goal-reaching trace on
    /// which the violating subtask's formula reverts.
    pub trace: Option<Trace>,
    pub witnesses: Vec<Trace>,
    pub wall_time_secs: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifyConfig {
    pub horizon: usize,
    pub n_distinct: usize,
    pub timeout_secs: f64,
    /// Initial states drawn per task when the space cannot be enumerated.
    pub samples_per_task: usize,
    pub seed: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            horizon: 25,
            n_distinct: 3,
            timeout_secs: 900.0,
            samples_per_task: 16,
            seed: 0,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("horizon must be at least 2, got {0}")]
    Horizon(usize),
    #[error("n_distinct must be positive")]
    NDistinct,
    #[error("timeout must be positive")]
    Timeout,
}

impl VerifyConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.horizon < 2 {
            return Err(ConfigError::Horizon(self.horizon));
        }
        if self.n_distinct == 0 {
            return Err(ConfigError::NDistinct);
        }
        if !(self.timeout_secs > 0.0) {
            return Err(ConfigError::Timeout);
        }
        Ok(())
    }
}

/// The symbolic environment model: initial states per task and the
/// transition relation. For the gridworlds it is the concrete deterministic
/// dynamics, so `exact` is true.
#[derive(Clone, Debug)]
pub struct SymbolicModel {
    pub schema: Arc<EnvSchema>,
    pub exact: bool,
    /// Whether the action set contains an action that never changes state.
    pub has_noop: bool,
    inits: Vec<(Task, InitSet)>,
}

impl SymbolicModel {
    pub fn new(space: &TaskSpace, cfg: &VerifyConfig) -> Self {
        let inits = space
            .tasks()
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), space.init_set(t, cfg.samples_per_task, cfg.seed.wrapping_add(i as u64))))
            .collect();
        Self {
            schema: space.schema().clone(),
            exact: true,
            has_noop: space.schema().action_id("done").is_some(),
            inits,
        }
    }

    pub fn tasks(&self) -> impl Iterator<Item = &(Task, InitSet)> {
        self.inits.iter()
    }

    pub fn exhaustive(&self) -> bool {
        self.inits.iter().all(|(_, i)| i.exhaustive)
    }

    pub fn init_constraint(&self, s: &EnvState, task: &Task) -> bool {
        self.inits
            .iter()
            .any(|(t, i)| t == task && i.states.contains(s))
    }

    pub fn transition_relation(&self, s: &EnvState, a: Action, next: &EnvState) -> bool {
        &s.step(a) == next
    }
}

fn holds(f: &Formula, s: StateRef<'_>, task: &Task) -> bool {
    f.eval(&s, task).unwrap_or(false)
}

/// Initial states of one task that share a layout.
struct StartGroup {
    layout: Arc<Layout>,
    starts: Vec<DynState>,
}

fn group_starts(states: &[EnvState]) -> Vec<StartGroup> {
    let mut groups: Vec<StartGroup> = Vec::new();
    for s in states {
        match groups
            .iter_mut()
            .find(|g| Arc::ptr_eq(&g.layout, &s.layout) || *g.layout == *s.layout)
        {
            Some(g) => g.starts.push(s.dynamic),
            None => groups.push(StartGroup {
                layout: s.layout.clone(),
                starts: vec![s.dynamic],
            }),
        }
    }
    groups
}

/// A path found in one (task, layout) group.
struct Hit {
    task: usize,
    group: usize,
    states: Vec<DynState>,
    actions: Vec<Action>,
}

/// Starts searched per parallel batch when collecting witnesses.
const BATCH: usize = 32;

/// Runs the five checks over one task space.
pub struct Verifier {
    model: SymbolicModel,
    cfg: VerifyConfig,
    label_formulas: Vec<(String, Formula)>,
    groups: Vec<(Task, Vec<StartGroup>)>,
}

impl Verifier {
    pub fn new(space: &TaskSpace, cfg: VerifyConfig) -> Self {
        Self::from_model(SymbolicModel::new(space, &cfg), cfg)
    }

    pub fn from_model(model: SymbolicModel, cfg: VerifyConfig) -> Self {
        let groups = model
            .tasks()
            .map(|(t, i)| (t.clone(), group_starts(&i.states)))
            .collect();
        Self {
            model,
            cfg,
            label_formulas: Vec::new(),
            groups,
        }
    }

    pub fn model(&self) -> &SymbolicModel {
        &self.model
    }

    pub fn config(&self) -> &VerifyConfig {
        &self.cfg
    }

    /// Formulas recorded in trace label assignments. Without them each
    /// trace is labeled with the formulas of its own check.
    pub fn with_labels(mut self, formulas: Vec<(String, Formula)>) -> Self {
        self.label_formulas = formulas;
        self
    }

    pub fn with_subtask_labels(mut self, subtasks: &[SubtaskSpec]) -> Self {
        self.set_subtask_labels(subtasks);
        self
    }

    /// Labels traces with `psi1, phi1, psi2, ...` of `subtasks`.
    pub fn set_subtask_labels(&mut self, subtasks: &[SubtaskSpec]) {
        self.label_formulas = subtasks
            .iter()
            .enumerate()
            .flat_map(|(i, s)| {
                [
                    (format!("psi{}", i + 1), s.psi.clone()),
                    (format!("phi{}", i + 1), s.phi.clone()),
                ]
            })
            .collect();
    }

    fn deadline(&self) -> Instant {
        Instant::now() + Duration::from_secs_f64(self.cfg.timeout_secs)
    }

    fn search<'a>(&self, layout: &'a Layout, deadline: Instant) -> Search<'a> {
        Search {
            layout,
            max_steps: self.cfg.horizon - 1,
            has_noop: self.model.has_noop,
            deadline,
        }
    }

    /// Whether a path ending at `depth` spans the whole horizon, possibly
    /// after padding with the no-op.
    fn final_depth(&self, depth: usize) -> bool {
        self.model.has_noop || depth + 1 == self.cfg.horizon
    }

    /// Runs `run` on every (task, group) in parallel and returns the first
    /// hit in task order, plus whether any search timed out.
    fn scan<F>(&self, deadline: Instant, run: F) -> (Option<Hit>, bool)
    where
        F: Fn(&Search<'_>, &Task, &[DynState]) -> Outcome + Sync,
    {
        let jobs: Vec<(usize, usize)> = self
            .groups
            .iter()
            .enumerate()
            .flat_map(|(t, (_, gs))| (0..gs.len()).map(move |g| (t, g)))
            .collect();
        let outcomes: Vec<Outcome> = jobs
            .par_iter()
            .map(|&(t, g)| {
                let (task, groups) = &self.groups[t];
                let group = &groups[g];
                run(&self.search(&group.layout, deadline), task, &group.starts)
            })
            .collect();
        let mut timed_out = false;
        for (&(task, group), o) in jobs.iter().zip(outcomes) {
            match o {
                Outcome::Found(states, actions) => {
                    return (
                        Some(Hit {
                            task,
                            group,
                            states,
                            actions,
                        }),
                        timed_out,
                    )
                }
                Outcome::TimedOut => timed_out = true,
                Outcome::Exhausted => {}
            }
        }
        (None, timed_out)
    }

    /// Collects up to `limit` hits from distinct initial states, in task and
    /// start order. With `precheck`, a group is skipped when a search from
    /// all of its starts at once finds nothing.
    fn witness_scan<F>(&self, deadline: Instant, limit: usize, precheck: bool, run: F) -> (Vec<Hit>, bool)
    where
        F: Fn(&Search<'_>, &Task, &[DynState]) -> Outcome + Sync,
    {
        let mut hits = Vec::new();
        let mut timed_out = false;
        for (t, (task, groups)) in self.groups.iter().enumerate() {
            for (g, group) in groups.iter().enumerate() {
                let search = self.search(&group.layout, deadline);
                if precheck {
                    match run(&search, task, &group.starts) {
                        Outcome::Exhausted => continue,
                        Outcome::TimedOut => return (hits, true),
                        Outcome::Found(..) => {}
                    }
                }
                for chunk in group.starts.chunks(BATCH) {
                    if Instant::now() >= deadline {
                        return (hits, true);
                    }
                    let outcomes: Vec<Outcome> = chunk
                        .par_iter()
                        .map(|d| run(&search, task, std::slice::from_ref(d)))
                        .collect();
                    for o in outcomes {
                        match o {
                            Outcome::Found(states, actions) => {
                                hits.push(Hit {
                                    task: t,
                                    group: g,
                                    states,
                                    actions,
                                });
                                if hits.len() == limit {
                                    return (hits, timed_out);
                                }
                            }
                            Outcome::TimedOut => timed_out = true,
                            Outcome::Exhausted => {}
                        }
                    }
                }
            }
        }
        (hits, timed_out)
    }

    fn trace(&self, hit: Hit, labels: &[(String, Formula)]) -> Trace {
        let (task, groups) = &self.groups[hit.task];
        let layout = &groups[hit.group].layout;
        let labels = if self.label_formulas.is_empty() {
            labels
        } else {
            &self.label_formulas
        };
        build_trace(task, layout, hit.states, hit.actions, self.model.has_noop.then_some(self.cfg.horizon), labels)
    }

    fn definite_or(&self, timed_out: bool, ok: VerdictResult) -> VerdictResult {
        if timed_out {
            VerdictResult::Inconclusive(InconclusiveReason::Timeout)
        } else if !self.model.exhaustive() {
            VerdictResult::Inconclusive(InconclusiveReason::Sampled)
        } else {
            ok
        }
    }

    /// A task whose goal holds at the last step while `psi` never held.
    pub fn completion_correctness(&self, psi: &Formula, subtask: Option<usize>) -> VerifyVerdict {
        let started = Instant::now();
        let (hit, timed_out) = self.scan(self.deadline(), |search, task, starts| {
            let open: Vec<DynState> = starts
                .iter()
                .copied()
                .filter(|&d| !holds(psi, StateRef::new(search.layout, d), task))
                .collect();
            search.run(
                &open,
                |s| !holds(psi, s, task),
                |_, _| true,
                |_, cur, depth| self.final_depth(depth) && task.goal_holds(&cur) && !holds(psi, cur, task),
            )
        });
        let labels = [("psi".to_string(), psi.clone())];
        let (result, trace) = match hit {
            Some(h) => (VerdictResult::CounterexampleFound, Some(self.trace(h, &labels))),
            None => (self.definite_or(timed_out, VerdictResult::Holds), None),
        };
        VerifyVerdict {
            spec: Spec::CompletionCorrectness,
            subtask_index: subtask,
            result,
            trace,
            witnesses: Vec::new(),
            wall_time_secs: started.elapsed().as_secs_f64(),
        }
    }

    /// `N` traces with distinct initial states on which `f` never holds.
    /// `spec` selects which non-triviality row the verdict reports.
    pub fn non_triviality(&self, f: &Formula, spec: Spec, subtask: Option<usize>) -> VerifyVerdict {
        let started = Instant::now();
        let n = self.cfg.n_distinct;
        let (hits, timed_out) = self.witness_scan(self.deadline(), n, false, |search, task, starts| {
            if self.model.has_noop {
                // Waiting in place keeps `f` false for the whole horizon.
                return match starts.iter().find(|&&d| !holds(f, StateRef::new(search.layout, d), task)) {
                    Some(&d) => Outcome::Found(vec![d], Vec::new()),
                    None => Outcome::Exhausted,
                };
            }
            search.run(
                starts,
                |s| !holds(f, s, task),
                |_, _| true,
                |_, cur, depth| self.final_depth(depth) && !holds(f, cur, task),
            )
        });
        let labels = [("f".to_string(), f.clone())];
        let found = hits.len();
        let result = if found >= n {
            VerdictResult::WitnessesFound
        } else {
            self.definite_or(timed_out, VerdictResult::InsufficientWitnesses { found })
        };
        VerifyVerdict {
            spec,
            subtask_index: subtask,
            result,
            trace: None,
            witnesses: hits.into_iter().map(|h| self.trace(h, &labels)).collect(),
            wall_time_secs: started.elapsed().as_secs_f64(),
        }
    }

    /// A step where `psi` becomes true while `phi` did not hold just before.
    pub fn proximity_correctness(&self, psi: &Formula, phi: &Formula, subtask: Option<usize>) -> VerifyVerdict {
        let started = Instant::now();
        let (hit, timed_out) = self.scan(self.deadline(), |search, task, starts| {
            search.run(
                starts,
                |_| true,
                |_, _| true,
                |prev, cur, _| {
                    prev.is_some_and(|p| !holds(psi, p, task) && !holds(phi, p, task)) && holds(psi, cur, task)
                },
            )
        });
        let labels = [("psi".to_string(), psi.clone()), ("phi".to_string(), phi.clone())];
        let (result, trace) = match hit {
            Some(h) => (VerdictResult::CounterexampleFound, Some(self.trace(h, &labels))),
            None => (self.definite_or(timed_out, VerdictResult::Holds), None),
        };
        VerifyVerdict {
            spec: Spec::ObjectProximityCorrectness,
            subtask_index: subtask,
            result,
            trace,
            witnesses: Vec::new(),
            wall_time_secs: started.elapsed().as_secs_f64(),
        }
    }

    /// Goal-reaching searches on which the first `upto` formulas never revert.
    fn monotone_run<'f>(
        &'f self,
        psis: &'f [Formula],
        upto: usize,
    ) -> impl Fn(&Search<'_>, &Task, &[DynState]) -> Outcome + Sync + 'f {
        move |search, task, starts| {
            let bits = |s: StateRef<'_>| -> u64 {
                psis[..upto]
                    .iter()
                    .enumerate()
                    .filter(|(_, f)| holds(f, s, task))
                    .fold(0, |acc, (i, _)| acc | 1 << i)
            };
            search.run(
                starts,
                |_| true,
                |prev, cur| bits(prev) & !bits(cur) == 0,
                |_, cur, depth| self.final_depth(depth) && task.goal_holds(&cur),
            )
        }
    }

    /// `N` goal-reaching traces with distinct initial states on which no
    /// formula of `psis` reverts from true to false. On failure the verdict
    /// names the first subtask whose formula breaks persistence and carries
    /// a goal-reaching trace on which it reverts.
    pub fn composition_persistence(&self, psis: &[Formula]) -> VerifyVerdict {
        let started = Instant::now();
        let deadline = self.deadline();
        let n = self.cfg.n_distinct;
        let k = psis.len();
        let labels: Vec<(String, Formula)> = psis
            .iter()
            .enumerate()
            .map(|(i, f)| (format!("psi{}", i + 1), f.clone()))
            .collect();
        let (hits, timed_out) = self.witness_scan(deadline, n, true, self.monotone_run(psis, k));
        let found = hits.len();
        let mut verdict = VerifyVerdict {
            spec: Spec::CompositionPersistence,
            subtask_index: None,
            result: VerdictResult::WitnessesFound,
            trace: None,
            witnesses: hits.into_iter().map(|h| self.trace(h, &labels)).collect(),
            wall_time_secs: 0.0,
        };
        if found < n {
            verdict.result = self.definite_or(timed_out, VerdictResult::InsufficientWitnesses { found });
            if !timed_out {
                if let Some((j, trace)) = self.persistence_culprit(psis, deadline, &labels) {
                    verdict.subtask_index = Some(j);
                    verdict.trace = trace;
                }
            }
        }
        verdict.wall_time_secs = started.elapsed().as_secs_f64();
        verdict
    }

    /// The first prefix `psis[..=j]` with fewer than `N` witnesses, and a
    /// goal-reaching trace that keeps `psis[..j]` but reverts `psis[j]`.
    fn persistence_culprit(
        &self,
        psis: &[Formula],
        deadline: Instant,
        labels: &[(String, Formula)],
    ) -> Option<(usize, Option<Trace>)> {
        let n = self.cfg.n_distinct;
        for j in 0..psis.len() {
            let (hits, timed_out) = self.witness_scan(deadline, n, true, self.monotone_run(psis, j + 1));
            if timed_out {
                return None;
            }
            if hits.len() >= n {
                continue;
            }
            let keep = self.monotone_run(psis, j + 1);
            let weaker = self.monotone_run(psis, j);
            let (example, _) = self.witness_scan(deadline, 1, false, |search, task, starts| {
                match keep(search, task, starts) {
                    Outcome::Exhausted => weaker(search, task, starts),
                    Outcome::Found(..) => Outcome::Exhausted,
                    Outcome::TimedOut => Outcome::TimedOut,
                }
            });
            return Some((j, example.into_iter().next().map(|h| self.trace(h, labels))));
        }
        None
    }

    /// All checks for a template: four per subtask and one persistence
    /// check, run in parallel and ordered by (spec, subtask).
    pub fn verify_all(&self, subtasks: &[SubtaskSpec]) -> Vec<VerifyVerdict> {
        #[derive(Clone, Copy)]
        enum Job {
            Completion(usize),
            CompletionNt(usize),
            Proximity(usize),
            ProximityNt(usize),
            Persistence,
        }
        let mut jobs = vec![Job::Persistence];
        for i in 0..subtasks.len() {
            jobs.extend([
                Job::Completion(i),
                Job::CompletionNt(i),
                Job::Proximity(i),
                Job::ProximityNt(i),
            ]);
        }
        let psis: Vec<Formula> = subtasks.iter().map(|s| s.psi.clone()).collect();
        let mut verdicts: Vec<VerifyVerdict> = jobs
            .par_iter()
            .map(|job| match *job {
                Job::Completion(i) => self.completion_correctness(&subtasks[i].psi, Some(i)),
                Job::CompletionNt(i) => self.non_triviality(&subtasks[i].psi, Spec::CompletionNonTriviality, Some(i)),
                Job::Proximity(i) => self.proximity_correctness(&subtasks[i].psi, &subtasks[i].phi, Some(i)),
                Job::ProximityNt(i) => {
                    self.non_triviality(&subtasks[i].phi, Spec::ObjectProximityNonTriviality, Some(i))
                }
                Job::Persistence => self.composition_persistence(&psis),
            })
            .collect();
        verdicts.sort_by_key(|v| (v.spec, v.subtask_index));
        verdicts
    }
}

/// Builds a trace from raw states, optionally padding with the no-op up to
/// `pad_to` states.
fn build_trace(
    task: &Task,
    layout: &Arc<Layout>,
    states: Vec<DynState>,
    mut actions: Vec<Action>,
    pad_to: Option<usize>,
    labels: &[(String, Formula)],
) -> Trace {
    let mut states: Vec<EnvState> = states.into_iter().map(|d| EnvState::new(layout.clone(), d)).collect();
    if let Some(h) = pad_to {
        while states.len() < h {
            let last = states.last().expect("paths are non-empty").clone();
            states.push(last);
            actions.push(Action::Done);
        }
    }
    Trace::labeled(task.clone(), states, actions, labels)
}

impl Trace {
    /// A trace whose label bits follow the order of `formulas`.
    pub fn labeled(task: Task, states: Vec<EnvState>, actions: Vec<Action>, formulas: &[(String, Formula)]) -> Trace {
        let labels = states
            .iter()
            .map(|s| {
                let mut l = LabelSet::EMPTY;
                for (i, (_, f)) in formulas.iter().enumerate() {
                    if f.eval(s, &task).unwrap_or(false) {
                        l.insert(i);
                    }
                }
                l
            })
            .collect();
        Trace {
            task,
            states,
            actions,
            labels,
            label_names: formulas.iter().map(|(n, _)| n.clone()).collect(),
        }
    }
}

pub fn check_completion_correctness(psi: &Formula, model: &SymbolicModel, cfg: &VerifyConfig) -> VerifyVerdict {
    Verifier::from_model(model.clone(), *cfg).completion_correctness(psi, None)
}

pub fn check_non_triviality(f: &Formula, model: &SymbolicModel, cfg: &VerifyConfig) -> VerifyVerdict {
    Verifier::from_model(model.clone(), *cfg).non_triviality(f, Spec::CompletionNonTriviality, None)
}

pub fn check_object_proximity_correctness(
    psi: &Formula,
    phi: &Formula,
    model: &SymbolicModel,
    cfg: &VerifyConfig,
) -> VerifyVerdict {
    Verifier::from_model(model.clone(), *cfg).proximity_correctness(psi, phi, None)
}

pub fn check_composition_persistence(psis: &[Formula], model: &SymbolicModel, cfg: &VerifyConfig) -> VerifyVerdict {
    Verifier::from_model(model.clone(), *cfg).composition_persistence(psis)
}

/// Summary table: one row per spec, one column per subtask, each cell the
/// verdict and its wall time. The persistence row fills the violating
/// subtask's column, or every column when it passes.
pub fn verdict_table(verdicts: &[VerifyVerdict], num_subtasks: usize) -> String {
    let mut rows: Vec<Vec<String>> = vec![std::iter::once("spec".to_string())
        .chain((1..=num_subtasks).map(|i| format!("subtask {i}")))
        .collect()];
    for spec in Spec::ALL {
        let mut row = vec![spec.title().to_string()];
        for i in 0..num_subtasks {
            let cell = verdicts
                .iter()
                .find(|v| {
                    v.spec == spec
                        && match v.subtask_index {
                            Some(j) => j == i,
                            None => spec == Spec::CompositionPersistence,
                        }
                })
                .map_or("-".to_string(), |v| format!("{} ({:.2}s)", v.result.label(), v.wall_time_secs));
            row.push(cell);
        }
        rows.push(row);
    }
    let widths: Vec<usize> = (0..=num_subtasks)
        .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (ri, row) in rows.iter().enumerate() {
        let cells: Vec<String> = row.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        let _ = writeln!(out, "| {} |", cells.join(" | "));
        if ri == 0 {
            let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
            let _ = writeln!(out, "|-{}-|", rule.join("-|-"));
        }
    }
    out
}

#[cfg(test)]
mod tests;
