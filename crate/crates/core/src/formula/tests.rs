use proptest::prelude::*;

use super::*;
use crate::schema::{PredicateDecl, PredicateKind};

const VARS: &[&str] = &["room_color", "key_color"];

fn schema() -> EnvSchema {
    EnvSchema::new(
        vec![
            PredicateDecl::new("agent_pos", PredicateKind::Coord2, false),
            PredicateDecl::new("agent_dir", PredicateKind::Scalar, false),
            PredicateDecl::new("door_pos", PredicateKind::Coord2, true),
            PredicateDecl::new("door_state", PredicateKind::Scalar, true),
        ],
        ["left", "right", "forward", "pickup", "drop", "toggle", "done"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        8,
    )
    .unwrap()
}

/// Hand-written valuation: one agent, one door per color.
#[derive(Clone, Debug)]
struct Snapshot {
    agent: (i64, i64),
    dir: i64,
    doors: [Option<((i64, i64), i64)>; 6],
}

impl Valuation for Snapshot {
    fn predicate(&self, id: usize, index: Option<i64>) -> Value {
        let door = index
            .and_then(Color::from_index)
            .and_then(|c| self.doors[c.index()]);
        match id {
            0 => Value::Coord(self.agent.0, self.agent.1),
            1 => Value::Int(self.dir),
            2 => door.map_or(Value::ABSENT_COORD, |(p, _)| Value::Coord(p.0, p.1)),
            3 => Value::Int(door.map_or(ABSENT, |(_, s)| s)),
            _ => unreachable!(),
        }
    }
}

fn red_task() -> Vec<(String, i64)> {
    vec![("room_color".into(), 0), ("key_color".into(), 2)]
}

fn snapshot(agent: (i64, i64), door: Option<((i64, i64), i64)>) -> Snapshot {
    let mut doors = [None; 6];
    doors[0] = door;
    Snapshot {
        agent,
        dir: 0,
        doors,
    }
}

fn parse(text: &str) -> Formula {
    parse_formula(text, &schema(), VARS).unwrap_or_else(|e| panic!("{text}: {e}"))
}

const PSI1: &str = "door_state[room_color] == OPEN || door_state[room_color] == -1";
const PHI1: &str = "manhattan(agent_pos, door_pos[room_color]) <= 1 || door_state[room_color] == -1";

#[test]
fn parses_example_completion_formula_as_disjunction_of_comparisons() {
    let f = parse(PSI1);
    match f.expr() {
        Expr::Or(a, b) => {
            assert!(matches!(**a, Expr::Cmp(CmpOp::Eq, ..)));
            assert!(matches!(**b, Expr::Cmp(CmpOp::Eq, ..)));
        }
        other => panic!("expected Or, got {other:?}"),
    }
}

#[test]
fn parses_example_proximity_formula() {
    let f = parse(PHI1);
    match f.expr() {
        Expr::Or(a, b) => {
            assert!(matches!(**a, Expr::Cmp(CmpOp::Le, ..)));
            assert!(matches!(**b, Expr::Cmp(CmpOp::Eq, ..)));
        }
        other => panic!("expected Or, got {other:?}"),
    }
}

#[test]
fn true_is_a_constant() {
    assert_eq!(parse("true"), Formula::TRUE);
    assert_eq!(parse("true").is_const(), Some(true));
}

#[test]
fn evaluates_example_formulas() {
    let psi = parse(PSI1);
    let phi = parse(PHI1);
    let m = red_task();
    let open = snapshot((1, 1), Some(((2, 4), DOOR_OPEN)));
    assert!(psi.eval(&open, &m).unwrap());
    let locked = snapshot((1, 1), Some(((2, 4), DOOR_LOCKED)));
    assert!(!psi.eval(&locked, &m).unwrap());
    let near = snapshot((2, 3), Some(((2, 4), DOOR_CLOSED)));
    assert!(phi.eval(&near, &m).unwrap());
    let far = snapshot((5, 5), Some(((2, 4), DOOR_CLOSED)));
    assert!(!phi.eval(&far, &m).unwrap());
    // Occluded door: both formulas hold through the sentinel disjunct.
    let occluded = snapshot((2, 4), None);
    assert!(psi.eval(&occluded, &m).unwrap());
    assert!(phi.eval(&occluded, &m).unwrap());
}

#[test]
fn position_sentinel_comparison() {
    let f = parse("door_pos[green] == -1");
    assert!(f.eval(&snapshot((1, 1), None), &red_task()).unwrap());
    let f = parse("door_pos[red] != -1 && agent_pos == (1, 1)");
    assert!(f.eval(&snapshot((1, 1), Some(((3, 3), 1))), &red_task()).unwrap());
}

#[test]
fn unbound_task_variable_is_an_eval_error() {
    let f = parse("door_state[key_color] == LOCKED");
    let m = vec![("room_color".to_string(), 0)];
    assert_eq!(
        f.eval(&snapshot((1, 1), None), &m),
        Err(EvalError::UnboundTaskVar("key_color".into()))
    );
}

fn kind_of(text: &str) -> ParseErrorKind {
    parse_formula(text, &schema(), VARS).unwrap_err().kind
}

#[test]
fn reports_unknown_names() {
    assert_eq!(
        kind_of("box_pos[red] == -1"),
        ParseErrorKind::UnknownPredicate("box_pos".into())
    );
    assert_eq!(
        kind_of("door_state[lockedroom_color] == OPEN"),
        ParseErrorKind::UnknownTaskVariable("lockedroom_color".into())
    );
}

#[test]
fn reports_type_mismatches() {
    assert!(matches!(kind_of("agent_pos == 3"), ParseErrorKind::TypeMismatch(_)));
    assert!(matches!(kind_of("agent_pos <= door_pos[red]"), ParseErrorKind::TypeMismatch(_)));
    assert!(matches!(kind_of("agent_dir"), ParseErrorKind::TypeMismatch(_)));
    assert!(matches!(kind_of("door_state == 1"), ParseErrorKind::TypeMismatch(_)));
    assert!(matches!(kind_of("manhattan(agent_pos, 1) < 2"), ParseErrorKind::TypeMismatch(_)));
    assert!(matches!(kind_of("!agent_dir"), ParseErrorKind::TypeMismatch(_)));
}

#[test]
fn syntax_errors_carry_line_and_column() {
    let e = parse_formula("agent_dir == 1 &&\n  agent_dir = 2", &schema(), VARS).unwrap_err();
    assert!(matches!(e.kind, ParseErrorKind::Syntax(_)));
    assert_eq!((e.line, e.column), (2, 13));
    let e = parse_formula("", &schema(), VARS).unwrap_err();
    assert!(matches!(e.kind, ParseErrorKind::Syntax(_)));
    let e = parse_formula("(agent_dir == 1", &schema(), VARS).unwrap_err();
    assert!(e.to_string().starts_with("1:16: syntax error"), "{e}");
}

#[test]
fn printer_parenthesizes_where_needed() {
    for text in [
        "!(agent_dir == 1)",
        "(true || false) && false",
        "true && (false && true)",
        "(true => false) => true",
        "true => false => true",
        "(agent_dir == 1) == false",
        "!(!true)",
    ] {
        let f = parse(text);
        assert_eq!(f.to_string(), text);
        assert_eq!(parse(&f.to_string()), f);
    }
}

// ---- generators for property tests ----

fn int_term() -> impl Strategy<Value = Expr> {
    let index = prop_oneof![
        (0i64..6).prop_map(Expr::Int),
        prop::sample::select(VARS.to_vec()).prop_map(|v| Expr::TaskVar(v.to_string())),
        prop::sample::select(Color::ALL.to_vec()).prop_map(|c| Expr::Named(NamedConst::Color(c))),
    ];
    prop_oneof![
        (-3i64..10).prop_map(Expr::Int),
        Just(Expr::Named(NamedConst::Open)),
        Just(Expr::Named(NamedConst::Locked)),
        prop::sample::select(VARS.to_vec()).prop_map(|v| Expr::TaskVar(v.to_string())),
        Just(Expr::Pred {
            name: "agent_dir".into(),
            id: 1,
            index: None
        }),
        index.clone().prop_map(|i| Expr::Pred {
            name: "door_state".into(),
            id: 3,
            index: Some(Box::new(i))
        }),
        (coord_term(), coord_term()).prop_map(|(a, b)| Expr::Call(Builtin::Manhattan, vec![a, b])),
    ]
}

fn coord_term() -> impl Strategy<Value = Expr> {
    prop_oneof![
        (-1i64..6, -1i64..6).prop_map(|(x, y)| Expr::Coord(x, y)),
        Just(Expr::Pred {
            name: "agent_pos".into(),
            id: 0,
            index: None
        }),
        (0i64..6).prop_map(|i| Expr::Pred {
            name: "door_pos".into(),
            id: 2,
            index: Some(Box::new(Expr::Named(NamedConst::Color(Color::ALL[i as usize]))))
        }),
    ]
}

fn cmp_op() -> impl Strategy<Value = CmpOp> {
    prop::sample::select(vec![CmpOp::Eq, CmpOp::Ne, CmpOp::Lt, CmpOp::Le, CmpOp::Gt, CmpOp::Ge])
}

fn atom() -> impl Strategy<Value = Expr> {
    prop_oneof![
        any::<bool>().prop_map(Expr::Bool),
        (cmp_op(), int_term(), int_term()).prop_map(|(op, a, b)| Expr::Cmp(op, Box::new(a), Box::new(b))),
        (any::<bool>(), coord_term(), coord_term()).prop_map(|(eq, a, b)| {
            Expr::Cmp(if eq { CmpOp::Eq } else { CmpOp::Ne }, Box::new(a), Box::new(b))
        }),
        coord_term().prop_map(|a| Expr::Cmp(CmpOp::Eq, Box::new(a), Box::new(Expr::Int(-1)))),
    ]
}

fn bool_expr() -> impl Strategy<Value = Expr> {
    atom().prop_recursive(4, 32, 2, |inner| {
        prop_oneof![
            inner.clone().prop_map(|a| Expr::Not(Box::new(a))),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::And(Box::new(a), Box::new(b))),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Or(Box::new(a), Box::new(b))),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Implies(Box::new(a), Box::new(b))),
            (any::<bool>(), inner.clone(), inner).prop_map(|(eq, a, b)| {
                Expr::Cmp(if eq { CmpOp::Eq } else { CmpOp::Ne }, Box::new(a), Box::new(b))
            }),
        ]
    })
}

fn snapshot_strategy() -> impl Strategy<Value = Snapshot> {
    let door = prop::option::of(((0i64..6, 0i64..6), 0i64..3));
    ((0i64..6, 0i64..6), 0i64..4, prop::array::uniform6(door)).prop_map(|(agent, dir, doors)| Snapshot {
        agent,
        dir,
        doors,
    })
}

fn task_strategy() -> impl Strategy<Value = Vec<(String, i64)>> {
    (0i64..6, 0i64..6).prop_map(|(a, b)| vec![("room_color".into(), a), ("key_color".into(), b)])
}

proptest! {
    #[test]
    fn print_then_parse_is_identity(e in bool_expr()) {
        let text = e.to_string();
        let f = parse_formula(&text, &schema(), VARS).map_err(|err| TestCaseError::fail(format!("{text}: {err}")))?;
        prop_assert_eq!(f.expr(), &e);
    }

    #[test]
    fn de_morgan_holds(a in bool_expr(), b in bool_expr(), s in snapshot_strategy(), m in task_strategy()) {
        let lhs = Formula { expr: Expr::Not(Box::new(Expr::And(Box::new(a.clone()), Box::new(b.clone())))) };
        let rhs = Formula { expr: Expr::Or(Box::new(Expr::Not(Box::new(a))), Box::new(Expr::Not(Box::new(b)))) };
        prop_assert_eq!(lhs.eval(&s, &m).unwrap(), rhs.eval(&s, &m).unwrap());
    }

    #[test]
    fn absent_door_equals_explicit_sentinel(color in 0usize..6, e in bool_expr(), s in snapshot_strategy(), m in task_strategy()) {
        // A door that is missing must evaluate exactly like a door whose
        // predicates are explicitly the sentinel.
        struct Explicit(Snapshot, usize);
        impl Valuation for Explicit {
            fn predicate(&self, id: usize, index: Option<i64>) -> Value {
                if index == Some(self.1 as i64) && (id == 2 || id == 3) {
                    return if id == 2 { Value::Coord(-1, -1) } else { Value::Int(-1) };
                }
                self.0.predicate(id, index)
            }
        }
        let mut absent = s.clone();
        absent.doors[color] = None;
        let text = format!("door_state[{}] == -1 || door_pos[{}] == -1", COLOR_NAMES[color], COLOR_NAMES[color]);
        let sentinel = parse(&text);
        prop_assert!(sentinel.eval(&absent, &m).unwrap());
        let f = Formula { expr: Expr::Implies(Box::new(sentinel.expr().clone()), Box::new(e)) };
        let mut explicit = s;
        explicit.doors[color] = Some(((5, 5), 1));
        prop_assert_eq!(f.eval(&absent, &m).unwrap(), f.eval(&Explicit(explicit, color), &m).unwrap());
    }
}

use crate::schema::COLOR_NAMES;
