use super::*;
use crate::gridworld::{SpaceConfig, SpaceName};

fn lockedroom() -> TaskSpace {
    TaskSpace::new(&SpaceConfig::desk(SpaceName::LockedRoom)).unwrap()
}

fn doorkey6() -> TaskSpace {
    TaskSpace::new(&SpaceConfig::sized(SpaceName::DoorKey, 6)).unwrap()
}

fn h10() -> VerifyConfig {
    VerifyConfig {
        horizon: 10,
        ..VerifyConfig::default()
    }
}

const BUGGY_PSI1: &str = "```\ndoor_state[room_color] == OPEN\n```";

#[test]
fn block_extraction() {
    assert_eq!(extract_block("text\n```dsl\na == b\n```\nmore").unwrap(), "a == b\n");
    assert_eq!(extract_block("no fence"), Err(ResponseError::NoBlock));
    assert_eq!(extract_block("```\nunterminated"), Err(ResponseError::NoBlock));
}

#[test]
fn subtask_list_strips_enumeration() {
    let names = parse_subtask_list("```\n1. open door\n- pick up key\n3) go\n\n```").unwrap();
    assert_eq!(names, ["open door", "pick up key", "go"]);
    assert_eq!(parse_subtask_list("```\n\n```"), Err(ResponseError::EmptyList));
}

#[test]
fn mask_response_parsing() {
    let space = doorkey6();
    let (nav, interact) =
        parse_masks_response("```\nnav: forward, left, right\ninteract: [\"toggle\", \"left\"]\n```", space.schema()).unwrap();
    assert_eq!(nav, ["left", "right", "forward"]);
    assert_eq!(interact, ["left", "toggle"]);
    assert_eq!(
        parse_masks_response("```\nnav: left\n```", space.schema()),
        Err(ResponseError::MaskLine("interact"))
    );
    assert!(matches!(
        parse_masks_response("```\nnav: jump\ninteract: left\n```", space.schema()),
        Err(ResponseError::Mask { line: "nav", .. })
    ));
}

#[test]
fn reference_spec_files_round_trip() {
    for name in SpaceName::ALL {
        let space = TaskSpace::new(&SpaceConfig::desk(name)).unwrap();
        let spec = MrbtSpecFile::reference(name);
        let subtasks = spec.to_subtasks(&space).unwrap();
        let text = MrbtSpecFile::from_subtasks(&space, &subtasks).to_toml_string().unwrap();
        let again = MrbtSpecFile::from_toml_str(&text).unwrap().to_subtasks(&space).unwrap();
        assert_eq!(subtasks, again);
    }
}

#[test]
fn spec_file_write_read() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("spec.toml");
    let mut spec = MrbtSpecFile::reference(SpaceName::DoorKey);
    spec.provenance.generator = Some("mock".into());
    spec.provenance.iterations = 3;
    spec.write(&path).unwrap();
    assert_eq!(MrbtSpecFile::read(&path).unwrap(), spec);
}

#[test]
fn spec_file_errors_name_the_subtask() {
    let space = doorkey6();
    let mut spec = MrbtSpecFile::reference(SpaceName::DoorKey);
    spec.subtasks[1].phi = "manhattan(agent_pos) <= 1".into();
    assert!(matches!(
        spec.to_subtasks(&space),
        Err(SpecFileError::Formula { index: 1, field: "phi", .. })
    ));
    let mut spec = MrbtSpecFile::reference(SpaceName::DoorKey);
    spec.subtasks[2].mask_nav = vec!["fly".into()];
    assert!(matches!(
        spec.to_subtasks(&space),
        Err(SpecFileError::Mask { index: 2, field: "mask_nav", .. })
    ));
    assert!(matches!(
        MrbtSpecFile::reference(SpaceName::LockedRoom).to_subtasks(&space),
        Err(SpecFileError::WrongSpace { .. })
    ));
}

#[test]
fn reference_formulas_verify_in_one_iteration() {
    let space = lockedroom();
    let mut generator = MockGenerator::from_spec(&MrbtSpecFile::reference(SpaceName::LockedRoom));
    let out = run_pipeline(&space, &mut generator, &VerifyConfig::default(), DEFAULT_MAX_ITERS).unwrap();
    assert!(out.verified);
    assert_eq!(out.iterations, 1);
    assert_eq!(out.spec.provenance.iterations, 1);
    assert_eq!(out.verdicts.len(), 17);
    assert_eq!(generator.log.len(), 1 + 3 * 4);
    assert!(generator.log[0].system_prompt.contains("door_state[color]"));
}

#[test]
fn unguarded_door_formula_is_refined_in_two_iterations() {
    let space = lockedroom();
    let reference = MrbtSpecFile::reference(SpaceName::LockedRoom);
    let fixed = format!("```\n{}\n```", reference.subtasks[0].psi);
    let mut generator =
        MockGenerator::from_spec(&reference).script(Expected::FormulaPsi(0), [BUGGY_PSI1.to_string(), fixed]);
    let out = run_pipeline(&space, &mut generator, &VerifyConfig::default(), DEFAULT_MAX_ITERS).unwrap();
    assert!(out.verified);
    assert_eq!(out.iterations, 2);
    assert!(out.verdicts.iter().all(|v| v.result.passed()));
    // Only the failing formula is requested again.
    assert_eq!(generator.requests_for(Expected::FormulaPsi(0)), 2);
    assert_eq!(generator.requests_for(Expected::FormulaPhi(0)), 1);
    assert_eq!(generator.requests_for(Expected::FormulaPsi(1)), 1);
    let retry = generator.log.iter().filter(|r| r.expected == Expected::FormulaPsi(0)).nth(1).unwrap();
    let debug = &retry.messages.last().unwrap().content;
    assert!(debug.contains("Composition persistence"), "{debug}");
    assert!(debug.contains("subtask 1"));
    assert!(debug.contains("door_state[room_color] == OPEN"));
    assert_eq!(retry.messages[1].content, BUGGY_PSI1);
}

#[test]
fn malformed_response_is_reprompted_and_counts_as_iteration() {
    let space = doorkey6();
    let reference = MrbtSpecFile::reference(SpaceName::DoorKey);
    let good = format!("```\n{}\n```", reference.subtasks[0].psi);
    let mut generator = MockGenerator::from_spec(&reference)
        .script(Expected::FormulaPsi(0), ["```\nkey_pos[yellow == -1\n```".to_string(), good]);
    let out = run_pipeline(&space, &mut generator, &h10(), 3).unwrap();
    assert!(out.verified);
    assert_eq!(out.iterations, 2);
    let retry = generator.log.iter().filter(|r| r.expected == Expected::FormulaPsi(0)).nth(1).unwrap();
    assert!(retry.messages.last().unwrap().content.contains("could not be used"));
}

#[test]
fn exhaustion_returns_best_spec_unverified() {
    let space = doorkey6();
    let reference = MrbtSpecFile::reference(SpaceName::DoorKey);
    let mut generator = MockGenerator::from_spec(&reference).script(Expected::FormulaPhi(2), ["```\nfalse\n```"]);
    let out = run_pipeline(&space, &mut generator, &h10(), 2).unwrap();
    assert!(!out.verified);
    assert_eq!(out.iterations, 2);
    assert!(!out.spec.provenance.verified);
    assert!(out
        .verdicts
        .iter()
        .any(|v| v.spec == Spec::ObjectProximityCorrectness && v.result == VerdictResult::CounterexampleFound));
    assert!(matches!(
        run_pipeline(&space, &mut MockGenerator::new(), &h10(), 0),
        Err(PipelineError::NoIterations)
    ));
}

#[test]
fn pipeline_is_deterministic_under_the_mock() {
    let space = doorkey6();
    let reference = MrbtSpecFile::reference(SpaceName::DoorKey);
    let run = || {
        let mut g = MockGenerator::from_spec(&reference).script(Expected::FormulaPsi(2), ["```\ntrue\n```".to_string(), "```\nagent_pos == goal_pos\n```".to_string()]);
        let out = run_pipeline(&space, &mut g, &h10(), 3).unwrap();
        (out.spec, out.transcript.into_iter().map(|(r, s)| (r.messages, s)).collect::<Vec<_>>())
    };
    assert_eq!(run(), run());
}

#[test]
fn accepted_spec_reverifies_clean() {
    let space = doorkey6();
    let mut g = MockGenerator::from_spec(&MrbtSpecFile::reference(SpaceName::DoorKey));
    let out = run_pipeline(&space, &mut g, &h10(), 1).unwrap();
    let subtasks = out.spec.to_subtasks(&space).unwrap();
    assert!(Verifier::new(&space, h10()).verify_all(&subtasks).iter().all(|v| v.result.passed()));
}

#[test]
fn debug_prompts_carry_trace_and_flip_step() {
    let space = doorkey6();
    let spec = MrbtSpecFile::reference(SpaceName::DoorKey);

    let mut bad = spec.clone();
    bad.subtasks[2].psi = "false".into();
    let subtasks = bad.to_subtasks(&space).unwrap();
    let verifier = Verifier::new(&space, h10()).with_subtask_labels(&subtasks);
    let cc = verifier.completion_correctness(&subtasks[2].psi, Some(2));
    let prompt = build_debug_prompt(&cc, &bad, space.schema());
    assert!(prompt.contains("psi3 of subtask 3"));
    assert!(prompt.contains("Completion correctness"));
    let trace = cc.trace.as_ref().unwrap();
    for t in 0..trace.len() {
        assert!(prompt.contains(&format!("\nt={t} ")), "missing step {t}");
    }

    let mut tight = spec.clone();
    tight.subtasks[2].phi = "manhattan(agent_pos, goal_pos) <= 0".into();
    let subtasks = tight.to_subtasks(&space).unwrap();
    let verifier = Verifier::new(&space, h10()).with_subtask_labels(&subtasks);
    let pc = verifier.proximity_correctness(&subtasks[2].psi, &subtasks[2].phi, Some(2));
    let labels = &pc.trace.as_ref().unwrap().labels;
    let flip = labels.windows(2).position(|w| !w[0].contains(4) && w[1].contains(4)).unwrap();
    let prompt = build_debug_prompt(&pc, &tight, space.schema());
    assert!(prompt.contains("phi3 of subtask 3"));
    assert!(prompt.contains("manhattan(agent_pos, goal_pos) <= 0"));
    assert!(prompt.contains(&format!("between t={flip} and t={}", flip + 1)), "{prompt}");
}

#[test]
fn drone_supplier_reference_formulas_pass() {
    let space = TaskSpace::new(&SpaceConfig::desk(SpaceName::DroneSupplier)).unwrap();
    let subtasks = MrbtSpecFile::reference(SpaceName::DroneSupplier).to_subtasks(&space).unwrap();
    let verdicts = Verifier::new(&space, VerifyConfig::default()).verify_all(&subtasks);
    for v in &verdicts {
        assert!(v.result.passed(), "{:?} {:?} {:?}", v.spec, v.subtask_index, v.result);
    }
}
