//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap, VecDeque};
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sandbox_core::annotation::{AnnotationInterval, Child, Construct};
use sandbox_core::bus::message::*;
use sandbox_core::bus::{Bag, BagHeader, Event, Payload, Schema, TopicInfo};
use sandbox_core::demo::golden_script;
use sandbox_core::engine::{GameMode, GameState, Item, ItemKind, Scene, Tool, ToolSelect, TouchEvent, TouchPhase, TouchSource, DEFAULT_SCENE};
use sandbox_core::frames::{Point2, Transform2D};
use sandbox_core::planner::{build_occupancy, plan, Cell, OccupancyGrid, DEFAULT_RESOLUTION};
use sandbox_core::robot::{ActionSource, Correspondence, RobotAction, RobotCommand};
use sandbox_core::runtime::Sandbox;
use sandbox_core::script::{run_script_to_memory, RunOutcome, ScriptedSession};
use sandbox_core::time::Timestamp;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn default_scene() -> Scene {
    Scene::parse(DEFAULT_SCENE).unwrap()
}

// ---------------------------------------------------------------- planner

pub fn random_grid(rng: &mut ChaCha8Rng, w: usize, h: usize, density: f64) -> OccupancyGrid {
    let mut g = OccupancyGrid::free(w, h, 0.01);
    for row in 0..h {
        for col in 0..w {
            if rng.gen_bool(density) {
                g.set((col, row), true);
            }
        }
    }
    g
}

/// Dijkstra over the 8-connected grid. A diagonal step needs both cells it
/// squeezes between to be free. Returns the (orthogonal, diagonal) step
/// counts of a cheapest path; a + b√2 is unique per pair, so comparing
/// counts compares costs exactly.
pub fn dijkstra(g: &OccupancyGrid, start: Cell, goal: Cell) -> Option<(u32, u32)> {
    let free = |c: (i64, i64)| {
        c.0 >= 0 && c.1 >= 0 && (c.0 as usize) < g.width && (c.1 as usize) < g.height
            && !g.occupied[c.1 as usize * g.width + c.0 as usize]
    };
    let cost = |s: u32, d: u32| s as f64 + d as f64 * std::f64::consts::SQRT_2;
    if !free((start.0 as i64, start.1 as i64)) || !free((goal.0 as i64, goal.1 as i64)) {
        return None;
    }
    let mut best: HashMap<Cell, (u32, u32)> = HashMap::new();
    let mut heap = BinaryHeap::new();
    best.insert(start, (0, 0));
    heap.push(Reverse((OrdF(0.0), start, 0u32, 0u32)));
    while let Some(Reverse((OrdF(c), cell, s, d))) = heap.pop() {
        if best.get(&cell).is_some_and(|&(bs, bd)| cost(bs, bd) < c - 1e-9) {
            continue;
        }
        if cell == goal {
            return Some((s, d));
        }
        for dx in -1i64..=1 {
            for dy in -1i64..=1 {
                if dx == 0 && dy == 0 {
                    continue;
                }
                let (x, y) = (cell.0 as i64 + dx, cell.1 as i64 + dy);
                if !free((x, y)) {
                    continue;
                }
                let diag = dx != 0 && dy != 0;
                if diag && !(free((x, cell.1 as i64)) && free((cell.0 as i64, y))) {
                    continue;
                }
                let (ns, nd) = if diag { (s, d + 1) } else { (s + 1, d) };
                let n = (x as usize, y as usize);
                let nc = cost(ns, nd);
                if best.get(&n).is_none_or(|&(bs, bd)| nc < cost(bs, bd) - 1e-9) {
                    best.insert(n, (ns, nd));
                    heap.push(Reverse((OrdF(nc), n, ns, nd)));
                }
            }
        }
    }
    None
}

#[derive(Clone, Copy, PartialEq, Debug)]
pub struct OrdF(pub f64);
impl Eq for OrdF {}
impl PartialOrd for OrdF {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for OrdF {
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&o.0)
    }
}

// ----------------------------------------------------------- segmentation

/// BFS flood fill with 4-connectivity; labels in order of discovery.
pub fn flood_fill(w: usize, h: usize, cells: &[u8]) -> Vec<u32> {
    let mut label = vec![u32::MAX; w * h];
    let mut next = 0;
    for i in 0..w * h {
        if label[i] != u32::MAX {
            continue;
        }
        let mut q = VecDeque::from([i]);
        label[i] = next;
        while let Some(j) = q.pop_front() {
            let (x, y) = (j % w, j / w);
            let mut nb = Vec::with_capacity(4);
            if x > 0 {
                nb.push(j - 1);
            }
            if x + 1 < w {
                nb.push(j + 1);
            }
            if y > 0 {
                nb.push(j - w);
            }
            if y + 1 < h {
                nb.push(j + w);
            }
            for k in nb {
                if label[k] == u32::MAX && cells[k] == cells[i] {
                    label[k] = next;
                    q.push_back(k);
                }
            }
        }
        next += 1;
    }
    label
}

/// Whether two labelings describe the same partition (a bijection between
/// label sets maps one onto the other cell by cell).
pub fn same_partition(a: &[u32], b: &[u32]) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let mut ab = HashMap::new();
    let mut ba = HashMap::new();
    a.iter().zip(b).all(|(x, y)| *ab.entry(x).or_insert(y) == y && *ba.entry(y).or_insert(x) == x)
}

// -------------------------------------------------------------------- bags

const BAG_TOPICS: [(&str, Schema); 6] = [
    (GAME_TOUCHES, Schema::Touch),
    (GAME_TOOLS, Schema::ToolSelect),
    (GAME_MODE, Schema::Mode),
    (ROBOT_PLAN_REQUEST, Schema::PlanRequest),
    (ANNOT_ADD, Schema::Annotation),
    (BLOB_AUDIO, Schema::Blob),
];

fn random_payload(rng: &mut ChaCha8Rng, schema: Schema, stamp: Timestamp) -> Payload {
    let source = [TouchSource::ChildPurple, TouchSource::ChildYellow, TouchSource::Wizard][rng.gen_range(0..3)];
    match schema {
        Schema::Touch => Payload::Touch(TouchEvent::new(
            rng.gen_range(0..8),
            [TouchPhase::Down, TouchPhase::Move, TouchPhase::Up][rng.gen_range(0..3)],
            rng.gen_range(0.0..0.6),
            rng.gen_range(0.0..0.33),
            source,
            stamp,
        )),
        Schema::ToolSelect => Payload::ToolSelect(ToolSelect { source, tool: Tool::Drag }),
        Schema::Mode => Payload::Mode(if rng.gen_bool(0.5) { GameMode::Freeplay } else { GameMode::Tutorial }),
        Schema::PlanRequest => Payload::PlanRequest(PlanRequest {
            item_id: format!("item{}", rng.gen_range(0..5)),
            goal: sandbox_core::frames::Point2::new(rng.gen(), rng.gen()),
        }),
        Schema::Annotation => {
            let s = rng.gen_range(0..1_000_000u64);
            Payload::Annotation(AnnotationInterval::new(
                ["ann", "ben"][rng.gen_range(0..2)],
                if rng.gen_bool(0.5) { Child::Purple } else { Child::Yellow },
                [Construct::Solitary, Construct::Prosocial, Construct::Aimless][rng.gen_range(0..3)],
                Timestamp(s),
                Timestamp(s + rng.gen_range(1..1_000_000)),
            ))
        }
        Schema::Blob => Payload::Blob((0..rng.gen_range(0..64)).map(|_| rng.gen()).collect()),
        other => unreachable!("no generator for {other}"),
    }
}

/// A bag with random topics, stamps (with ties) and payloads.
pub fn random_bag(rng: &mut ChaCha8Rng) -> Bag {
    let topics: Vec<TopicInfo> = BAG_TOPICS
        .iter()
        .filter(|_| rng.gen_bool(0.8))
        .map(|(n, s)| TopicInfo { name: n.to_string(), schema: *s })
        .collect();
    let header = BagHeader {
        session_id: format!("20260101-{:03}", rng.gen_range(1..999)),
        epoch_us: rng.gen_range(0..2_000_000_000_000_000i64),
        topics,
    };
    let mut events = Vec::new();
    if !header.topics.is_empty() {
        let n = rng.gen_range(0..200);
        let mut stamps: Vec<u64> = (0..n).map(|_| rng.gen_range(0..50) * 1000).collect();
        stamps.sort();
        let mut seq: BTreeMap<String, u32> = BTreeMap::new();
        for s in stamps {
            let t = &header.topics[rng.gen_range(0..header.topics.len())];
            let k = seq.entry(t.name.clone()).or_default();
            events.push(Event {
                topic: t.name.clone(),
                stamp: Timestamp(s),
                seq: *k,
                payload: random_payload(rng, t.schema, Timestamp(s)),
            });
            *k += 1;
        }
    }
    Bag::from_events(header, &events).unwrap()
}

// ------------------------------------------------------------------ golden

pub fn golden_run() -> (RunOutcome, Vec<u8>) {
    let s = ScriptedSession::parse(&golden_script()).unwrap();
    run_script_to_memory(&s, default_scene()).unwrap()
}

// ------------------------------------------------------------------ robot

pub fn item(id: &str, x: f64, y: f64, w: f64, h: f64) -> Item {
    Item {
        id: id.into(),
        kind: ItemKind::Object,
        pose: Transform2D::from_translation(x, y),
        footprint: (w, h),
        z_order: 0,
    }
}

pub fn random_rigid(rng: &mut rand_chacha::ChaCha8Rng) -> Transform2D {
    Transform2D::new(rng.gen_range(-PI..PI), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
}

pub fn screen_markers(rng: &mut rand_chacha::ChaCha8Rng) -> Vec<Point2> {
    loop {
        let m: Vec<Point2> = (0..3).map(|_| Point2::new(rng.gen_range(0.0..0.6), rng.gen_range(0.0..0.33))).collect();
        let area = (m[1].x - m[0].x) * (m[2].y - m[0].y) - (m[2].x - m[0].x) * (m[1].y - m[0].y);
        if area.abs() > 0.01 {
            return m;
        }
    }
}

pub struct MoveCheck {
    pub reached: bool,
    pub on_path: bool,
    pub pointers_match: bool,
    pub fake_source: bool,
}

/// Runs one robot move around five obstacles through the sandbox and checks
/// it against an independently planned path.
pub fn robot_move(seed: u64) -> MoveCheck {
    let mut rng = rng(seed);
    let mut scene = Scene::empty();
    scene.items.push(item("box", 0.05, 0.05, 0.03, 0.03));
    for i in 0..5 {
        scene.items.push(item(&format!("rock{i}"), 0.10 + 0.09 * i as f64, rng.gen_range(0.08..0.25), 0.04, 0.12));
    }
    let goal = Point2::new(0.56, 0.29);
    let cal = random_rigid(&mut rng);
    let state = GameState::new(scene.clone());
    let grid = build_occupancy(state.items(), "box", DEFAULT_RESOLUTION).unwrap();
    let start = grid.cell_of(state.item("box").unwrap().centre());
    let path = plan(&grid, start, grid.cell_of(goal)).unwrap();
    let mut expect: Vec<Point2> = vec![state.item("box").unwrap().centre()];
    expect.extend(path.centres().into_iter().skip(1));

    let mut sb = Sandbox::new(scene);
    let sub = sb.bus().subscribe(&[GAME_TOUCHES, ROBOT_POINTER]);
    let pairs = screen_markers(&mut rng).into_iter().map(|s| Correspondence { screen: s, robot: cal.apply(s) }).collect();
    sb.calibrate(pairs, Timestamp::ZERO).unwrap();
    let cal = sb.robot().calibration().unwrap().screen_to_robot;
    let action = RobotAction {
        command: RobotCommand::MoveItem { item_id: "box".into(), goal },
        stamp: Timestamp::ZERO,
        source: ActionSource::Wizard,
    };
    sb.robot_action(action, Timestamp::ZERO).unwrap();
    sb.advance_to(Timestamp::from_secs(60)).unwrap();
    assert!(!sb.robot().has_pending());

    let events = sub.drain();
    let touches: Vec<_> = events.iter().filter_map(|e| match &e.payload { Payload::Touch(t) => Some(*t), _ => None }).collect();
    let pointers: Vec<_> = events.iter().filter_map(|e| match &e.payload { Payload::Pointer(p) => Some(p.clone()), _ => None }).collect();
    let c = sb.game().item("box").unwrap().centre();
    let want = grid.cell_centre(*path.cells.last().unwrap());
    MoveCheck {
        reached: (c.x - want.x).abs() < 1e-9 && (c.y - want.y).abs() < 1e-9,
        on_path: touches.len() == expect.len()
            && touches.iter().zip(&expect).all(|(t, p)| t.position() == *p)
            && touches.first().map(|t| t.phase) == Some(TouchPhase::Down)
            && touches.last().map(|t| t.phase) == Some(TouchPhase::Up),
        pointers_match: pointers.len() == touches.len()
            && pointers.iter().zip(&touches).all(|(p, t)| {
                let q = cal.apply(t.position());
                (p.target.x - q.x).abs() <= 1e-9 && (p.target.y - q.y).abs() <= 1e-9 && p.stamp == t.stamp
            }),
        fake_source: touches.iter().all(|t| t.source == TouchSource::RobotFake),
    }
}

