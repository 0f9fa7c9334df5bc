//! Checking formulas against recorded demonstrations instead of a model.

use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Spec, Trace, VerdictResult, VerifyVerdict};
use crate::formula::Formula;
use crate::gridworld::{Action, Expert, ExpertOptions, TaskSpace};
use crate::mbrm::{MbrmState, RewardConfig};
use crate::schema::{ActionMask, EnvSchema};
use crate::template::{build_template, SubtaskSpec, TemplateError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DemoConfig {
    /// Demonstrations required of each kind.
    pub n: usize,
    /// Witnesses required by the non-triviality checks.
    pub n_distinct: usize,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self { n: 10, n_distinct: 3 }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DemoError {
    #[error("need at least {needed} {kind} demonstrations, got {got}")]
    TooFewDemos {
        kind: &'static str,
        needed: usize,
        got: usize,
    },
    #[error(transparent)]
    Template(#[from] TemplateError),
}

#[derive(Clone, Debug)]
pub struct DemoReport {
    pub verdicts: Vec<VerifyVerdict>,
    /// Demonstrations violating each verdict's spec, parallel to `verdicts`.
    /// Zero for non-triviality rows.
    pub violations: Vec<usize>,
    /// Per leaf, the actions taken while that leaf was ticked last and running.
    pub mask_priors: Vec<ActionMask>,
}

impl DemoReport {
    /// Union of the priors of subtask `i`'s three leaves.
    pub fn subtask_prior(&self, i: usize) -> ActionMask {
        self.mask_priors[3 * i..3 * i + 3]
            .iter()
            .fold(ActionMask::EMPTY, |acc, m| acc.union(*m))
    }

    pub fn verdict(&self, spec: Spec, subtask: Option<usize>) -> Option<(&VerifyVerdict, usize)> {
        self.verdicts
            .iter()
            .zip(&self.violations)
            .find(|(v, _)| v.spec == spec && v.subtask_index == subtask)
            .map(|(v, n)| (v, *n))
    }
}

/// Which policy records demonstrations.
#[derive(Clone, Copy, Debug)]
pub enum DemoPolicy {
    /// The scripted expert, run until the goal holds or the step limit.
    Expert(ExpertOptions),
    /// Uniformly random actions for `horizon - 1` steps.
    Random { horizon: usize },
}

/// Records `count` demonstrations from distinct initial states where the
/// space allows it.
pub fn collect_demos(space: &TaskSpace, policy: DemoPolicy, count: usize, seed: u64) -> Vec<Trace> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut demos: Vec<Trace> = Vec::with_capacity(count);
    let mut attempts = 0;
    while demos.len() < count {
        attempts += 1;
        let (s0, task) = space.sample_episode(&mut rng);
        let fresh = !demos.iter().any(|d| d.task == task && d.states[0] == s0);
        if !fresh && attempts < 20 * count {
            continue;
        }
        let mut states = vec![s0];
        let mut actions = Vec::new();
        match policy {
            DemoPolicy::Expert(opts) => {
                let mut expert = Expert::new(opts);
                let mut s = states[0].clone();
                for _ in 0..space.max_steps() {
                    if task.goal_holds(&s) {
                        break;
                    }
                    let a = expert.act(&s, &task);
                    s = s.step(a);
                    actions.push(a);
                    states.push(s.clone());
                }
            }
            DemoPolicy::Random { horizon } => {
                let mut s = states[0].clone();
                for _ in 1..horizon {
                    let a = Action::ALL[rng.gen_range(0..Action::ALL.len())];
                    s = s.step(a);
                    actions.push(a);
                    states.push(s.clone());
                }
            }
        }
        demos.push(Trace::labeled(task, states, actions, &[]));
    }
    demos
}

fn holds_at(f: &Formula, demo: &Trace, t: usize) -> bool {
    f.eval(&demo.states[t], &demo.task).unwrap_or(false)
}

fn completion_violated(psi: &Formula, demo: &Trace) -> bool {
    let last = demo.states.len() - 1;
    demo.task.goal_holds(&demo.states[last]) && (0..=last).all(|t| !holds_at(psi, demo, t))
}

fn proximity_violated(psi: &Formula, phi: &Formula, demo: &Trace) -> bool {
    (0..demo.states.len().saturating_sub(1))
        .any(|t| !holds_at(psi, demo, t) && holds_at(psi, demo, t + 1) && !holds_at(phi, demo, t))
}

/// First subtask whose formula reverts on the demo, or `k` when the demo
/// does not reach the goal.
fn persistence_violation(subtasks: &[SubtaskSpec], demo: &Trace) -> Option<usize> {
    let n = demo.states.len();
    for t in 0..n.saturating_sub(1) {
        if let Some(i) = subtasks
            .iter()
            .position(|s| holds_at(&s.psi, demo, t) && !holds_at(&s.psi, demo, t + 1))
        {
            return Some(i);
        }
    }
    (!demo.task.goal_holds(&demo.states[n - 1])).then_some(subtasks.len())
}

fn labeled(demo: &Trace, subtasks: &[SubtaskSpec]) -> Trace {
    let formulas: Vec<(String, Formula)> = subtasks
        .iter()
        .enumerate()
        .flat_map(|(i, s)| [(format!("psi{}", i + 1), s.psi.clone()), (format!("phi{}", i + 1), s.phi.clone())])
        .collect();
    Trace::labeled(demo.task.clone(), demo.states.clone(), demo.actions.clone(), &formulas)
}

/// Checks correctness and persistence over every expert demonstration and
/// non-triviality over the first `n` random ones, and mines action-mask
/// priors from the expert demonstrations.
pub fn test_with_demonstrations(
    subtasks: &[SubtaskSpec],
    schema: &Arc<EnvSchema>,
    expert_demos: &[Trace],
    random_demos: &[Trace],
    cfg: &DemoConfig,
) -> Result<DemoReport, DemoError> {
    for (kind, got) in [("expert", expert_demos.len()), ("random", random_demos.len())] {
        if got < cfg.n {
            return Err(DemoError::TooFewDemos {
                kind,
                needed: cfg.n,
                got,
            });
        }
    }
    let mut tree = build_template(subtasks, schema.clone(), &RewardConfig::default())?;
    let random = &random_demos[..cfg.n];
    let mut verdicts = Vec::new();
    let mut violations = Vec::new();

    let universal = |spec: Spec, i: Option<usize>, bad: &dyn Fn(&Trace) -> bool| {
        let started = Instant::now();
        let failing: Vec<&Trace> = expert_demos.iter().filter(|d| bad(d)).collect();
        let verdict = VerifyVerdict {
            spec,
            subtask_index: i,
            result: if failing.is_empty() {
                VerdictResult::Holds
            } else {
                VerdictResult::CounterexampleFound
            },
            trace: failing.first().map(|d| labeled(d, subtasks)),
            witnesses: Vec::new(),
            wall_time_secs: started.elapsed().as_secs_f64(),
        };
        (verdict, failing.len())
    };
    let non_trivial = |spec: Spec, i: usize, f: &Formula| {
        let started = Instant::now();
        let mut witnesses: Vec<&Trace> = Vec::new();
        for d in random {
            let distinct = !witnesses.iter().any(|w| w.task == d.task && w.states[0] == d.states[0]);
            if distinct && (0..d.states.len()).all(|t| !holds_at(f, d, t)) {
                witnesses.push(d);
            }
        }
        let found = witnesses.len();
        VerifyVerdict {
            spec,
            subtask_index: Some(i),
            result: if found >= cfg.n_distinct {
                VerdictResult::WitnessesFound
            } else {
                VerdictResult::InsufficientWitnesses { found }
            },
            trace: None,
            witnesses: witnesses.into_iter().take(cfg.n_distinct).map(|d| labeled(d, subtasks)).collect(),
            wall_time_secs: started.elapsed().as_secs_f64(),
        }
    };

    for (i, s) in subtasks.iter().enumerate() {
        let (v, n) = universal(Spec::CompletionCorrectness, Some(i), &|d| completion_violated(&s.psi, d));
        verdicts.push(v);
        violations.push(n);
        verdicts.push(non_trivial(Spec::CompletionNonTriviality, i, &s.psi));
        violations.push(0);
        let (v, n) = universal(Spec::ObjectProximityCorrectness, Some(i), &|d| {
            proximity_violated(&s.psi, &s.phi, d)
        });
        verdicts.push(v);
        violations.push(n);
        verdicts.push(non_trivial(Spec::ObjectProximityNonTriviality, i, &s.phi));
        violations.push(0);
    }
    let first_bad = expert_demos.iter().find_map(|d| persistence_violation(subtasks, d));
    let (mut v, n) = universal(Spec::CompositionPersistence, None, &|d| {
        persistence_violation(subtasks, d).is_some()
    });
    if v.result == VerdictResult::CounterexampleFound {
        v.subtask_index = first_bad.filter(|&i| i < subtasks.len());
    } else {
        v.result = VerdictResult::WitnessesFound;
        v.witnesses = expert_demos.iter().map(|d| labeled(d, subtasks)).collect();
    }
    verdicts.push(v);
    violations.push(n);

    let mut mask_priors = vec![ActionMask::EMPTY; tree.leaves().len()];
    for d in expert_demos {
        tree.reset();
        for (t, a) in d.actions.iter().enumerate() {
            let sigma = tree.label(&d.states[t], &d.task).unwrap_or_default();
            let tick = tree.tick(sigma);
            let last = *tick.ticked.last().expect("ticks visit a leaf");
            if tree.assignment()[last] == MbrmState::Running {
                if let Some(id) = schema.action_id(a.name()) {
                    mask_priors[last].insert(id);
                }
            }
        }
    }
    Ok(DemoReport {
        verdicts,
        violations,
        mask_priors,
    })
}
