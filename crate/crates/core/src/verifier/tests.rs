use super::*;
use crate::gridworld::{SpaceConfig, SpaceName};

fn f(space: &TaskSpace, text: &str) -> Formula {
    Formula::parse(text, space.schema(), &space.task_vars()).unwrap()
}

fn subtask(space: &TaskSpace, name: &str, psi: &str, phi: &str, interact: &[&str]) -> SubtaskSpec {
    let schema = space.schema();
    SubtaskSpec {
        name: name.into(),
        psi: f(space, psi),
        phi: f(space, phi),
        mask_nav: schema.mask_from_names(&["left", "right", "forward"]).unwrap(),
        mask_interact: schema.mask_from_names(interact).unwrap(),
    }
}

fn doorkey_subtasks(space: &TaskSpace) -> Vec<SubtaskSpec> {
    vec![
        subtask(
            space,
            "pick up key",
            "key_pos[yellow] == -1",
            "manhattan(agent_pos, key_pos[yellow]) <= 1 || key_pos[yellow] == -1",
            &["left", "right", "pickup"],
        ),
        subtask(
            space,
            "open door",
            "door_state[yellow] == OPEN || door_state[yellow] == -1",
            "manhattan(agent_pos, door_pos[yellow]) <= 1 || door_state[yellow] == -1",
            &["left", "right", "toggle"],
        ),
        subtask(
            space,
            "reach goal",
            "agent_pos == goal_pos",
            "manhattan(agent_pos, goal_pos) <= 1",
            &["left", "right", "forward"],
        ),
    ]
}

fn doorkey6() -> TaskSpace {
    TaskSpace::new(&SpaceConfig::sized(SpaceName::DoorKey, 6)).unwrap()
}

fn cfg(horizon: usize) -> VerifyConfig {
    VerifyConfig {
        horizon,
        timeout_secs: 120.0,
        ..VerifyConfig::default()
    }
}

#[test]
fn doorkey6_reference_formulas_pass_every_spec() {
    let space = doorkey6();
    let subtasks = doorkey_subtasks(&space);
    let v = Verifier::new(&space, cfg(10)).with_subtask_labels(&subtasks);
    let verdicts = v.verify_all(&subtasks);
    assert_eq!(verdicts.len(), 13);
    for verdict in &verdicts {
        assert!(verdict.result.passed(), "{:?} {:?} {:?}", verdict.spec, verdict.subtask_index, verdict.result);
    }
    for w in &verdicts.iter().find(|v| v.spec == Spec::CompositionPersistence).unwrap().witnesses {
        assert!(w.replays());
        assert_eq!(w.len(), 10);
        assert!(w.task.goal_holds(w.states.last().unwrap()));
    }
}

#[test]
fn constant_formulas_flip_the_expected_specs() {
    let space = doorkey6();
    let v = Verifier::new(&space, cfg(10));
    assert_eq!(
        v.non_triviality(&Formula::TRUE, Spec::CompletionNonTriviality, None).result,
        VerdictResult::InsufficientWitnesses { found: 0 }
    );
    assert_eq!(
        v.non_triviality(&Formula::FALSE, Spec::CompletionNonTriviality, None).result,
        VerdictResult::WitnessesFound
    );
    let cc = v.completion_correctness(&Formula::FALSE, None);
    assert_eq!(cc.result, VerdictResult::CounterexampleFound);
    let trace = cc.trace.unwrap();
    assert!(trace.replays());
    assert!(trace.task.goal_holds(trace.states.last().unwrap()));
    assert_eq!(v.completion_correctness(&Formula::TRUE, None).result, VerdictResult::Holds);
    let psi = f(&space, "agent_pos == goal_pos");
    assert_eq!(v.proximity_correctness(&psi, &Formula::TRUE, None).result, VerdictResult::Holds);
    let pc = v.proximity_correctness(&psi, &Formula::FALSE, None);
    assert_eq!(pc.result, VerdictResult::CounterexampleFound);
}

#[test]
fn tight_proximity_threshold_yields_replayable_counterexample() {
    let space = doorkey6();
    let v = Verifier::new(&space, cfg(10));
    let psi = f(&space, "agent_pos == goal_pos");
    let phi = f(&space, "manhattan(agent_pos, goal_pos) <= 0");
    let verdict = v.proximity_correctness(&psi, &phi, Some(2));
    assert_eq!(verdict.result, VerdictResult::CounterexampleFound);
    let trace = verdict.trace.unwrap();
    assert!(trace.replays());
    let flip = (0..trace.len() - 1)
        .find(|&t| !psi.eval(&trace.states[t], &trace.task).unwrap() && psi.eval(&trace.states[t + 1], &trace.task).unwrap())
        .unwrap();
    assert!(!phi.eval(&trace.states[flip], &trace.task).unwrap());
}

#[test]
fn witnesses_have_distinct_initial_states() {
    let space = doorkey6();
    let v = Verifier::new(&space, VerifyConfig { n_distinct: 5, ..cfg(10) });
    let phi = f(&space, "manhattan(agent_pos, goal_pos) <= 1");
    let verdict = v.non_triviality(&phi, Spec::ObjectProximityNonTriviality, Some(2));
    assert_eq!(verdict.result, VerdictResult::WitnessesFound);
    assert_eq!(verdict.witnesses.len(), 5);
    for (i, a) in verdict.witnesses.iter().enumerate() {
        assert!(a.replays());
        assert!(a.states.iter().all(|s| !phi.eval(s, &a.task).unwrap()));
        for b in &verdict.witnesses[i + 1..] {
            assert!(a.task != b.task || a.states[0] != b.states[0]);
        }
    }
}

#[test]
fn goal_as_single_subtask_persists() {
    let space = doorkey6();
    let v = Verifier::new(&space, cfg(10));
    let goal = f(&space, "agent_pos == goal_pos");
    // Oracle: the goal state is a fixpoint of the no-op.
    for (task, init) in v.model().tasks() {
        for s in &init.states {
            assert_eq!(s.step(Action::Done), *s);
            let _ = task;
        }
    }
    assert_eq!(v.composition_persistence(&[goal]).result, VerdictResult::WitnessesFound);
}

#[test]
fn dropping_requirement_breaks_persistence_of_first_subtask() {
    let space = doorkey6();
    let mut subtasks = doorkey_subtasks(&space);
    // Holding the key is not needed after the door opens, but a formula that
    // requires the agent to stand next to the key can only revert.
    subtasks[0].psi = f(&space, "manhattan(agent_pos, key_pos[yellow]) <= 1");
    let psis: Vec<Formula> = subtasks.iter().map(|s| s.psi.clone()).collect();
    let v = Verifier::new(&space, cfg(10));
    let verdict = v.composition_persistence(&psis);
    assert!(verdict.result.failed(), "{:?}", verdict.result);
    assert_eq!(verdict.subtask_index, Some(0));
    let trace = verdict.trace.unwrap();
    assert!(trace.replays());
    assert!(trace.task.goal_holds(trace.states.last().unwrap()));
    let held: Vec<bool> = trace.states.iter().map(|s| psis[0].eval(s, &trace.task).unwrap()).collect();
    assert!(held.windows(2).any(|w| w[0] && !w[1]));
}

#[test]
fn timeout_yields_inconclusive() {
    let space = doorkey6();
    let v = Verifier::new(
        &space,
        VerifyConfig {
            timeout_secs: 1e-9,
            ..cfg(10)
        },
    );
    let verdict = v.completion_correctness(&Formula::FALSE, None);
    assert_eq!(verdict.result, VerdictResult::Inconclusive(InconclusiveReason::Timeout));
}

#[test]
fn sampled_spaces_never_claim_holds() {
    let space = TaskSpace::new(&SpaceConfig::full(SpaceName::DoorKey)).unwrap();
    let v = Verifier::new(
        &space,
        VerifyConfig {
            samples_per_task: 2,
            ..cfg(4)
        },
    );
    assert!(!v.model().exhaustive());
    assert_eq!(
        v.completion_correctness(&Formula::TRUE, None).result,
        VerdictResult::Inconclusive(InconclusiveReason::Sampled)
    );
}

#[test]
fn config_validation() {
    assert!(VerifyConfig::default().validate().is_ok());
    assert_eq!(cfg(1).validate(), Err(ConfigError::Horizon(1)));
    assert_eq!(VerifyConfig { n_distinct: 0, ..cfg(5) }.validate(), Err(ConfigError::NDistinct));
}

#[test]
fn model_transition_relation_matches_dynamics() {
    let space = doorkey6();
    let v = Verifier::new(&space, cfg(10));
    let (task, init) = v.model().tasks().next().unwrap();
    let s = &init.states[0];
    assert!(v.model().init_constraint(s, task));
    for a in Action::ALL {
        assert!(v.model().transition_relation(s, a, &s.step(a)));
    }
}

#[test]
fn trace_render_has_one_record_per_step() {
    let space = doorkey6();
    let v = Verifier::new(&space, cfg(10));
    let t = v.completion_correctness(&Formula::FALSE, None).trace.unwrap();
    let text = t.render(space.schema());
    assert_eq!(text.lines().count(), t.len() + 1);
    assert!(text.lines().nth(1).unwrap().starts_with("t=0 agent_pos="));
    assert!(text.contains("door_state[yellow]="));
}

#[test]
fn table_lists_each_spec_once() {
    let space = doorkey6();
    let subtasks = doorkey_subtasks(&space);
    let verdicts = Verifier::new(&space, cfg(10)).verify_all(&subtasks);
    let table = verdict_table(&verdicts, 3);
    assert_eq!(table.lines().count(), 7);
    for spec in Spec::ALL {
        assert_eq!(table.matches(spec.title()).count(), 1);
    }
}

fn lockedroom_subtasks(space: &TaskSpace, psi1: &str) -> Vec<SubtaskSpec> {
    let toggle = ["left", "right", "toggle"];
    vec![
        subtask(
            space,
            "open room door",
            psi1,
            "manhattan(agent_pos, door_pos[room_color]) <= 1 || door_state[room_color] == -1",
            &toggle,
        ),
        subtask(
            space,
            "pick up key",
            "key_pos[key_color] == -1 || door_state[door_color] != LOCKED",
            "manhattan(agent_pos, key_pos[key_color]) <= 1 || key_pos[key_color] == -1",
            &["left", "right", "pickup"],
        ),
        subtask(
            space,
            "open locked door",
            "door_state[door_color] == OPEN || door_state[door_color] == -1",
            "manhattan(agent_pos, door_pos[door_color]) <= 1 || door_state[door_color] == -1",
            &toggle,
        ),
        subtask(
            space,
            "reach goal",
            "agent_pos == goal_pos",
            "manhattan(agent_pos, goal_pos) <= 1",
            &["left", "right", "forward"],
        ),
    ]
}

#[test]
fn lockedroom_mini_reference_formulas_pass() {
    let space = TaskSpace::new(&SpaceConfig::desk(SpaceName::LockedRoom)).unwrap();
    let subtasks = lockedroom_subtasks(&space, "door_state[room_color] == OPEN || door_state[room_color] == -1");
    let verdicts = Verifier::new(&space, VerifyConfig::default()).verify_all(&subtasks);
    for v in &verdicts {
        assert!(v.result.passed(), "{:?} {:?} {:?}", v.spec, v.subtask_index, v.result);
    }
}

#[test]
fn lockedroom_mini_unguarded_door_formula_breaks_persistence() {
    let space = TaskSpace::new(&SpaceConfig::desk(SpaceName::LockedRoom)).unwrap();
    let subtasks = lockedroom_subtasks(&space, "door_state[room_color] == OPEN");
    let psis: Vec<Formula> = subtasks.iter().map(|s| s.psi.clone()).collect();
    let verdict = Verifier::new(&space, VerifyConfig::default()).composition_persistence(&psis);
    assert_eq!(verdict.result, VerdictResult::InsufficientWitnesses { found: 0 });
    assert_eq!(verdict.subtask_index, Some(0));
    let trace = verdict.trace.unwrap();
    assert!(trace.replays());
    assert!(trace.task.goal_holds(trace.states.last().unwrap()));
    let held: Vec<bool> = trace.states.iter().map(|s| psis[0].eval(s, &trace.task).unwrap()).collect();
    assert!(held.windows(2).any(|w| w[0] && !w[1]));
}

mod demos {
    use super::*;
    use crate::gridworld::ExpertOptions;
    use crate::verifier::demo::DemoConfig;
    use crate::verifier::{collect_demos, test_with_demonstrations, DemoError, DemoPolicy};

    fn doorkey() -> TaskSpace {
        TaskSpace::new(&SpaceConfig::full(SpaceName::DoorKey)).unwrap()
    }

    fn expert(drop: bool) -> DemoPolicy {
        DemoPolicy::Expert(ExpertOptions {
            drop_key_after_door: drop,
            ..ExpertOptions::default()
        })
    }

    #[test]
    fn clean_expert_passes_and_mines_navigation_prior() {
        let space = doorkey();
        let subtasks = doorkey_subtasks(&space);
        let experts = collect_demos(&space, expert(false), 10, 1);
        let random = collect_demos(&space, DemoPolicy::Random { horizon: 25 }, 10, 2);
        assert!(experts.iter().all(|d| d.replays() && d.task.goal_holds(d.states.last().unwrap())));
        let report = test_with_demonstrations(&subtasks, space.schema(), &experts, &random, &DemoConfig::default()).unwrap();
        for (v, n) in report.verdicts.iter().zip(&report.violations) {
            assert!(v.result.passed(), "{:?} {:?} {:?}", v.spec, v.subtask_index, v.result);
            assert_eq!(*n, 0);
        }
        let nav = space.schema().mask_from_names(&["left", "right", "forward"]).unwrap();
        assert!(nav.is_subset(report.subtask_prior(0)));
    }

    #[test]
    fn key_dropping_expert_violates_persistence_on_every_demo() {
        let space = doorkey();
        let subtasks = doorkey_subtasks(&space);
        let experts = collect_demos(&space, expert(true), 10, 3);
        let random = collect_demos(&space, DemoPolicy::Random { horizon: 25 }, 10, 4);
        let report = test_with_demonstrations(&subtasks, space.schema(), &experts, &random, &DemoConfig::default()).unwrap();
        let (v, n) = report.verdict(Spec::CompositionPersistence, Some(0)).unwrap();
        assert_eq!(v.result, VerdictResult::CounterexampleFound);
        assert_eq!(n, 10);
    }

    #[test]
    fn always_true_formula_fails_non_triviality_on_random_demos() {
        let space = doorkey();
        let mut subtasks = doorkey_subtasks(&space);
        subtasks[0].psi = Formula::TRUE;
        let experts = collect_demos(&space, expert(false), 10, 5);
        let random = collect_demos(&space, DemoPolicy::Random { horizon: 25 }, 10, 6);
        let report = test_with_demonstrations(&subtasks, space.schema(), &experts, &random, &DemoConfig::default()).unwrap();
        let (v, _) = report.verdict(Spec::CompletionNonTriviality, Some(0)).unwrap();
        assert_eq!(v.result, VerdictResult::InsufficientWitnesses { found: 0 });
    }

    #[test]
    fn too_few_demos_is_an_error() {
        let space = doorkey();
        let subtasks = doorkey_subtasks(&space);
        let experts = collect_demos(&space, expert(false), 3, 7);
        let err = test_with_demonstrations(&subtasks, space.schema(), &experts, &experts, &DemoConfig::default()).unwrap_err();
        assert!(matches!(err, DemoError::TooFewDemos { kind: "expert", needed: 10, got: 3 }));
    }
}
