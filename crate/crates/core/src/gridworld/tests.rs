use super::*;
use proptest::prelude::*;
use rand::SeedableRng;

fn doorkey(size: usize) -> TaskSpace {
    TaskSpace::new(&SpaceConfig::sized(SpaceName::DoorKey, size)).unwrap()
}

fn first_state(space: &TaskSpace) -> (EnvState, Task) {
    let task = space.tasks()[0].clone();
    let s = space.initial_states(&task).unwrap()[0].clone();
    (s, task)
}

fn with_agent(s: &EnvState, x: usize, y: usize, dir: u8) -> EnvState {
    let mut s = s.clone();
    s.dynamic.agent = Pos::new(x, y);
    s.dynamic.dir = dir;
    s
}

/// Reference transition over the cell encoding, written independently of
/// `EnvState::step`: returns the grid after `action` plus the carried color.
fn oracle_step(
    grid: &[Cell],
    n: usize,
    agent: (usize, usize),
    dir: u8,
    carried: Option<Color>,
    action: Action,
) -> (Vec<Cell>, (usize, usize), u8, Option<Color>) {
    let mut g = grid.to_vec();
    let empty = Cell {
        object: ObjectId::Empty,
        color: None,
        state: 0,
    };
    let (dx, dy) = [(1i32, 0i32), (0, 1), (-1, 0), (0, -1)][dir as usize];
    let f = ((agent.0 as i32 + dx) as usize, (agent.1 as i32 + dy) as usize);
    let fi = f.1 * n + f.0;
    let mut agent = agent;
    let mut dir = dir;
    let mut carried = carried;
    match action {
        Action::Left => dir = (dir + 3) % 4,
        Action::Right => dir = (dir + 1) % 4,
        Action::Forward => {
            let c = g[fi];
            let ok = matches!(c.object, ObjectId::Empty | ObjectId::Goal)
                || (c.object == ObjectId::Door && c.state == DOOR_OPEN);
            if ok {
                agent = f;
            }
        }
        Action::Pickup => {
            if carried.is_none() && g[fi].object == ObjectId::Key {
                carried = g[fi].color;
                g[fi] = empty;
            }
        }
        Action::Drop => {
            if carried.is_some() && g[fi].object == ObjectId::Empty {
                g[fi] = Cell {
                    object: ObjectId::Key,
                    color: carried,
                    state: 0,
                };
                carried = None;
            }
        }
        Action::Toggle => {
            if g[fi].object == ObjectId::Door {
                let st = g[fi].state;
                g[fi].state = if st == DOOR_OPEN {
                    DOOR_CLOSED
                } else if st == DOOR_CLOSED || (st == DOOR_LOCKED && carried == g[fi].color) {
                    DOOR_OPEN
                } else {
                    st
                };
            }
        }
        Action::Done => {}
    }
    (g, agent, dir, carried)
}

/// Grid with the agent cell replaced by what it stands on.
fn grid_without_agent(s: &EnvState) -> Vec<Cell> {
    let mut g = s.grid();
    let a = s.agent();
    let i = a.y as usize * s.layout.size + a.x as usize;
    let mut probe = s.clone();
    probe.dynamic.agent = Pos::new(0, 0);
    g[i] = probe.cell(a);
    g
}

#[test]
fn exhaustive_small_grid_matches_cell_oracle() {
    let space = doorkey(5);
    let (s0, _) = first_state(&space);
    let n = s0.layout.size;
    let mut checked = 0;
    for door in [DoorState::Open, DoorState::Closed, DoorState::Locked] {
        for key in std::iter::once(None).chain(s0.layout.open_cells().filter(|&p| s0.layout.goal != Some(p)).map(Some)) {
            for agent in s0.layout.open_cells().chain(s0.layout.doors[4]) {
                if key == Some(agent) {
                    continue;
                }
                for dir in 0..4 {
                    let mut s = with_agent(&s0, agent.x as usize, agent.y as usize, dir);
                    s.dynamic.doors[4] = door;
                    s.dynamic.keys[4] = key;
                    s.dynamic.carried = if key.is_none() { Some(Color::Yellow) } else { None };
                    if s.layout.door_at(agent).is_some() && door != DoorState::Open {
                        continue;
                    }
                    for a in Action::ALL {
                        let next = s.step(a);
                        let (g, pos, d, c) = oracle_step(
                            &grid_without_agent(&s),
                            n,
                            (agent.x as usize, agent.y as usize),
                            dir,
                            s.dynamic.carried,
                            a,
                        );
                        assert_eq!(grid_without_agent(&next), g, "{a} from {:?}", s.dynamic);
                        assert_eq!((next.agent().x as usize, next.agent().y as usize), pos);
                        assert_eq!(next.dynamic.dir, d);
                        assert_eq!(next.dynamic.carried, c);
                        checked += 1;
                    }
                }
            }
        }
    }
    assert!(checked > 1000);
}

#[test]
fn locked_door_opens_only_with_matching_key() {
    let space = TaskSpace::new(&SpaceConfig::desk(SpaceName::LockedRoom)).unwrap();
    let task = space
        .tasks()
        .iter()
        .find(|t| t.color("door_color") == Some(Color::Red))
        .unwrap()
        .clone();
    let s0 = space.initial_states(&task).unwrap()[0].clone();
    let door = s0.layout.doors[Color::Red.index()].unwrap();
    assert_eq!(s0.dynamic.doors[Color::Red.index()], DoorState::Locked);
    // Facing west toward the red door from the hallway.
    let mut s = with_agent(&s0, door.x as usize + 1, door.y as usize, 2);
    s.dynamic.keys[Color::Red.index()] = None;
    s.dynamic.carried = Some(Color::Red);
    let opened = s.step(Action::Toggle);
    assert_eq!(opened.predicate(pred::DOOR_STATE, Some(0)), Value::Int(DOOR_OPEN));

    s.dynamic.carried = Some(Color::Blue);
    assert_eq!(s.step(Action::Toggle).dynamic.doors[0], DoorState::Locked);
    s.dynamic.carried = None;
    assert_eq!(s.step(Action::Toggle).dynamic.doors[0], DoorState::Locked);
}

#[test]
fn forward_into_wall_is_a_no_op() {
    let (s0, _) = first_state(&doorkey(8));
    let s = with_agent(&s0, 1, 1, 3);
    assert_eq!(s.step(Action::Forward), s);
    let s = with_agent(&s0, 1, 1, 2);
    assert_eq!(s.step(Action::Forward), s);
}

#[test]
fn occluded_door_reports_absent() {
    let (s0, _) = first_state(&doorkey(8));
    let door = s0.layout.doors[Color::Yellow.index()].unwrap();
    let mut s = with_agent(&s0, door.x as usize, door.y as usize, 0);
    s.dynamic.doors[4] = DoorState::Open;
    let y = Some(Color::Yellow.index() as i64);
    assert_eq!(s.predicate(pred::DOOR_STATE, y), Value::Int(ABSENT));
    assert_eq!(s.predicate(pred::DOOR_POS, y), Value::ABSENT_COORD);
    assert_eq!(s.predicate(pred::GOAL_POS, None), Value::Coord(6, 6));
    assert_eq!(s.predicate(pred::DOOR_STATE, Some(0)), Value::Int(ABSENT));
    assert_eq!(s.predicate(pred::KEY_POS, Some(9)), Value::ABSENT_COORD);
}

#[test]
fn doors_can_be_closed_again() {
    let space = doorkey(6);
    let (s0, task) = first_state(&space);
    let psi = Formula::parse("door_state[yellow] == OPEN", space.schema(), &[]).unwrap();
    let key = s0.dynamic.keys[4].unwrap();
    let door = s0.layout.doors[4].unwrap();
    // Agent just below the key, facing it; the door lies east of the agent.
    let s = with_agent(&s0, key.x as usize, key.y as usize + 1, 3);
    assert_eq!(s.agent().step(0), door);
    let s = s.step(Action::Pickup).step(Action::Right).step(Action::Toggle);
    assert!(psi.eval(&s, &task).unwrap());
    let s = s.step(Action::Toggle);
    assert!(!psi.eval(&s, &task).unwrap());
    assert_eq!(s.dynamic.doors[4], DoorState::Closed);
}

#[test]
fn box_toggle_reveals_its_key() {
    let space = TaskSpace::new(&SpaceConfig::desk(SpaceName::DroneSupplier)).unwrap();
    let task = space
        .tasks()
        .iter()
        .find(|t| t.color("box_color") == Some(Color::Green) && t.color("door_color") == Some(Color::Blue))
        .unwrap()
        .clone();
    let s0 = space.initial_states(&task).unwrap()[0].clone();
    let (bp, content) = s0.layout.boxes[Color::Green.index()].unwrap();
    assert_eq!(content, Some(Color::Blue));
    assert!(s0.key_exists(Color::Blue));
    assert_eq!(s0.predicate(pred::KEY_POS, Some(2)), Value::ABSENT_COORD);
    let s = with_agent(&s0, bp.x as usize, bp.y as usize + 1, 3).step(Action::Toggle);
    assert_eq!(s.predicate(pred::BOX_POS, Some(1)), Value::ABSENT_COORD);
    assert_eq!(s.predicate(pred::KEY_POS, Some(2)), bp.value());
    // Empty boxes vanish without a key.
    let (rp, none) = s0.layout.boxes[Color::Red.index()].unwrap();
    assert_eq!(none, None);
    let s = with_agent(&s0, rp.x as usize + 1, rp.y as usize, 2).step(Action::Toggle);
    assert!(!s.dynamic.box_present(Color::Red));
    assert!(s.dynamic.keys.iter().all(Option::is_none));
}

#[test]
fn task_space_shapes() {
    let lr = TaskSpace::new(&SpaceConfig::full(SpaceName::LockedRoom)).unwrap();
    assert_eq!(lr.num_variants(), 36);
    assert_eq!(lr.tasks().len(), 30);
    assert_eq!(lr.max_steps(), 190);
    assert_eq!(lr.size(), 19);
    assert_eq!(lr.layout_mode(), LayoutMode::Random);

    let dk = TaskSpace::new(&SpaceConfig::full(SpaceName::DoorKey)).unwrap();
    assert!(dk.task_vars().is_empty());
    assert_eq!(dk.tasks().len(), 1);
    assert_eq!((dk.size(), dk.max_steps()), (16, 500));

    let ds = TaskSpace::new(&SpaceConfig::full(SpaceName::DroneSupplier)).unwrap();
    assert_eq!(ds.size(), 25);
    assert_eq!(ds.tasks().len(), 36);
    assert_eq!(ds.goal_text(), ["door_state[door_color] == OPEN"]);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (s, _) = ds.sample_episode(&mut rng);
    for (y, row) in DRONE_MAP.lines().enumerate() {
        for (x, ch) in row.chars().enumerate() {
            assert_eq!(s.layout.is_wall(Pos::new(x, y)), ch == '#');
        }
    }

    assert!(matches!(
        TaskSpace::new(&SpaceConfig::sized(SpaceName::LockedRoom, 14)),
        Err(SpaceError::BadSize { .. })
    ));
    assert!("pickandplace".parse::<SpaceName>().is_err());
    assert_eq!("LockedRoom".parse::<SpaceName>().unwrap(), SpaceName::LockedRoom);
}

#[test]
fn task_text_and_encoding() {
    let lr = TaskSpace::new(&SpaceConfig::desk(SpaceName::LockedRoom)).unwrap();
    let t = &lr.tasks()[0];
    assert_eq!(t.text(), "get the red key from the green room, unlock the red door and go to the goal");
    let vocab = TaskSpace::vocabulary();
    let words: Vec<&str> = t.encoding.iter().map(|&i| vocab[i as usize]).collect();
    assert_eq!(words.join(" "), t.text().replace(',', ""));
}

#[test]
fn fixed_initial_states_are_distinct_and_valid() {
    for cfg in [
        SpaceConfig::desk(SpaceName::DoorKey),
        SpaceConfig::desk(SpaceName::LockedRoom),
        SpaceConfig::desk(SpaceName::DroneSupplier),
    ] {
        let space = TaskSpace::new(&cfg).unwrap();
        for task in space.tasks().iter().take(3) {
            let inits = space.initial_states(task).unwrap();
            let set: std::collections::HashSet<_> = inits.iter().map(|s| s.dynamic).collect();
            assert_eq!(set.len(), inits.len());
            for s in &inits {
                assert!(s.passable(s.agent()));
                assert!(!task.goal_holds(s));
            }
        }
    }
}

#[test]
fn expert_solves_every_desk_space() {
    for cfg in [
        SpaceConfig::desk(SpaceName::DoorKey),
        SpaceConfig::desk(SpaceName::LockedRoom),
        SpaceConfig::desk(SpaceName::DroneSupplier),
        SpaceConfig::full(SpaceName::DoorKey),
    ] {
        let space = Arc::new(TaskSpace::new(&cfg).unwrap());
        let mut env = Env::new(space.clone(), DynamicsConfig::deterministic());
        let mut expert = Expert::new(ExpertOptions::default());
        for _ in 0..3 {
            env.reset();
            expert.reset();
            let mut out = env.step(expert.act(&env.state().clone(), &env.task().clone()));
            while !out.done() {
                out = env.step(expert.act(&env.state().clone(), &env.task().clone()));
            }
            assert!(out.goal_reached, "{}", space.name());
        }
    }
}

#[test]
fn key_dropping_expert_still_reaches_goal() {
    let space = Arc::new(doorkey(8));
    let mut env = Env::new(space, DynamicsConfig::deterministic());
    let mut expert = Expert::new(ExpertOptions {
        drop_key_after_door: true,
        ..Default::default()
    });
    let mut dropped = false;
    let mut out = env.step(expert.act(&env.state().clone(), &env.task().clone()));
    while !out.done() {
        let a = expert.act(&env.state().clone(), &env.task().clone());
        dropped |= a == Action::Drop;
        out = env.step(a);
    }
    assert!(out.goal_reached && dropped);
    assert_eq!(env.state().dynamic.carried, None);
}

#[test]
fn trace_writer_format() {
    let (s, _) = first_state(&doorkey(6));
    let mut w = EpisodeTraceWriter::new(Vec::new()).unwrap();
    w.record(0, &s, Action::Forward, -0.1, false).unwrap();
    let text = String::from_utf8(w.into_inner()).unwrap();
    let line = text.lines().nth(1).unwrap();
    let fields: Vec<&str> = line.split(',').collect();
    assert_eq!(fields.len(), 5);
    assert_eq!(fields[2], "forward");
    assert_eq!(fields[1].len(), 16);
}

fn action_strategy() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(0usize..7, 1..120)
}

proptest! {
    #[test]
    fn deterministic_step_is_pure(actions in action_strategy(), seed in 0u64..1000) {
        let space = TaskSpace::new(&SpaceConfig::desk(SpaceName::LockedRoom)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut s, _) = space.sample_episode(&mut rng);
        for a in actions {
            let a = Action::from_index(a).unwrap();
            let n1 = s.step(a);
            let n2 = s.step(a);
            prop_assert_eq!(&n1, &n2);
            let (n3, slipped) = step_env(&s, a, &DynamicsConfig::deterministic(), &mut rng);
            prop_assert!(!slipped);
            prop_assert_eq!(&n1, &n3);
            s = n1;
        }
    }

    #[test]
    fn keys_are_conserved(actions in action_strategy(), seed in 0u64..1000, p in 0.0f64..1.0) {
        for name in [SpaceName::DoorKey, SpaceName::LockedRoom, SpaceName::DroneSupplier] {
            let space = TaskSpace::new(&SpaceConfig::desk(name)).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (mut s, _) = space.sample_episode(&mut rng);
            let keys: Vec<Color> = Color::ALL.into_iter().filter(|&c| s.key_exists(c)).collect();
            prop_assert_eq!(keys.len(), 1);
            let dynamics = DynamicsConfig::stochastic(p, seed);
            for &a in &actions {
                let a = Action::from_index(a).unwrap();
                s = step_env(&s, a, &dynamics, &mut rng).0;
                for c in Color::ALL {
                    let places = s.dynamic.keys[c.index()].is_some() as u8
                        + (s.dynamic.carried == Some(c)) as u8;
                    prop_assert!(places <= 1);
                    prop_assert_eq!(s.key_exists(c), keys.contains(&c));
                }
                prop_assert!(s.passable(s.agent()));
            }
        }
    }
}
