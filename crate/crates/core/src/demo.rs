//! Generator for the ten-minute demo session used as a golden fixture.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bus::message::{ROBOT_ACTIONS, ROBOT_POINTER, ROBOT_SCHEDULE, ROBOT_SOCIAL};
use crate::bus::Event;
use crate::engine::{Colour, Scene, DEFAULT_SCENE};
use crate::frames::{Point2, Transform2D};
use crate::robot::{AsocialPolicy, Correspondence};
use crate::runtime::{RuntimeError, Sandbox, POLICY_PERIOD};
use crate::session::{Condition, ProtocolStage};
use crate::time::Timestamp;

pub const DEMO_SEED: u64 = 20_170_301;
pub const DEMO_LENGTH_S: f64 = 600.0;

const CHILD_ITEMS: [&str; 6] = ["boy", "crocodile", "elephant", "giraffe", "girl", "hippo"];
const ROBOT_ITEMS: [&str; 4] = ["lion", "rock", "tree", "zebra"];
const CODERS: [&str; 2] = ["ann", "ben"];
const CONSTRUCTS: [&str; 5] = ["solitary", "parallel", "associative", "cooperative", "prosocial"];

fn spot(rng: &mut ChaCha8Rng) -> Point2 {
    Point2::new(rng.gen_range(0.03..0.57), rng.gen_range(0.03..0.30))
}

/// Screen→robot transform used by the demo's calibration markers.
pub fn demo_calibration() -> Transform2D {
    Transform2D::new(0.35, -0.12, 0.41)
}

fn demo_markers() -> [Point2; 3] {
    [Point2::new(0.05, 0.05), Point2::new(0.55, 0.05), Point2::new(0.30, 0.28)]
}

/// Robot-side topics a policy run reports.
pub const POLICY_TOPICS: [&str; 4] = [ROBOT_ACTIONS, ROBOT_SCHEDULE, ROBOT_POINTER, ROBOT_SOCIAL];

/// Runs the bundled scene in free play for `steps` policy periods with the
/// asocial policy (or none) and returns everything published on the robot
/// topics, in order.
pub fn policy_run(seed: Option<u64>, steps: u32) -> Result<Vec<Event>, RuntimeError> {
    let scene = Scene::parse(DEFAULT_SCENE).expect("bundled scene is valid");
    let mut sb = Sandbox::new(scene);
    let wall = chrono::NaiveDate::from_ymd_opt(2026, 1, 1)
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .expect("valid date")
        .and_utc();
    let zero = Timestamp::ZERO;
    sb.start_session(Condition::ChildRobot, wall, zero)?;
    let cal = demo_calibration();
    let pairs = demo_markers()
        .into_iter()
        .map(|m| Correspondence { screen: m, robot: cal.apply(m) })
        .collect();
    sb.calibrate(pairs, zero)?;
    let sub = sb.bus().subscribe(&POLICY_TOPICS);
    sb.set_policy(seed.map(|s| Box::new(AsocialPolicy::new(s)) as _));
    sb.advance_stage(ProtocolStage::Tutorial, zero)?;
    sb.advance_stage(ProtocolStage::Freeplay, zero)?;
    let last = Timestamp::from_micros(POLICY_PERIOD.as_micros() as u64 * steps.saturating_sub(1) as u64);
    sb.advance_to(last)?;
    Ok(sub.drain())
}

/// The demo script text. Children drag their items and draw; the wizard
/// moves the remaining items and makes the robot talk; two coders annotate.
pub fn golden_script() -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(DEMO_SEED);
    let scene = Scene::parse(DEFAULT_SCENE).expect("bundled scene is valid");
    let mut pos: BTreeMap<&str, Point2> = scene
        .items
        .iter()
        .filter_map(|it| CHILD_ITEMS.iter().find(|c| **c == it.id).map(|c| (*c, it.centre())))
        .collect();

    let mut s = String::new();
    s.push_str("# Ten-minute demo session (generated; see demo::golden_script).\n");
    s.push_str("condition child_robot\ndate 2026-03-02\nchild purple 6\nchild yellow 5\n\n");

    let cal = demo_calibration();
    s.push_str("0.000 calibrate");
    for m in demo_markers() {
        let r = cal.apply(m);
        let _ = write!(s, " {:.6} {:.6} {:.6} {:.6}", m.x, m.y, r.x, r.y);
    }
    s.push('\n');

    let mut t = 2.0f64;
    let mut touch_id = 1u32;
    let mut next_blob = 30.0;
    let mut next_annotation = 60.0;
    while t < DEMO_LENGTH_S - 20.0 {
        if t >= next_blob {
            let _ = writeln!(s, "{t:.3} blob audio {}", rng.gen_range(64..512));
            next_blob += 30.0;
        }
        if t >= next_annotation {
            let start = next_annotation - 60.0;
            for coder in CODERS {
                for child in ["purple", "yellow"] {
                    let c = CONSTRUCTS.choose(&mut rng).expect("non-empty");
                    let a = start + rng.gen_range(0.0..20.0);
                    let b = a + rng.gen_range(10.0..40.0);
                    let _ = writeln!(s, "{t:.3} annotate {coder} {child} {c} {a:.3} {b:.3}");
                }
            }
            next_annotation += 60.0;
        }
        let child = if rng.gen_bool(0.5) { "purple" } else { "yellow" };
        match rng.gen_range(0..100) {
            0..=59 => {
                let item = *CHILD_ITEMS.choose(&mut rng).expect("non-empty");
                let from = pos[item];
                let to = spot(&mut rng);
                let steps = rng.gen_range(3..7);
                let _ = writeln!(s, "{t:.3} touch {touch_id} down {:.4} {:.4} {child}", from.x, from.y);
                for k in 1..=steps {
                    let f = k as f64 / steps as f64;
                    let p = Point2::new(from.x + (to.x - from.x) * f, from.y + (to.y - from.y) * f);
                    t += 0.2;
                    let phase = if k == steps { "up" } else { "move" };
                    let _ = writeln!(s, "{t:.3} touch {touch_id} {phase} {:.4} {:.4} {child}", p.x, p.y);
                }
                pos.insert(item, Point2::new((to.x * 1e4).round() / 1e4, (to.y * 1e4).round() / 1e4));
                touch_id += 1;
            }
            60..=74 => {
                let colour = *Colour::ALL.choose(&mut rng).expect("non-empty");
                let width = [0.005, 0.01, 0.02][rng.gen_range(0..3)];
                let _ = writeln!(s, "{t:.3} tool {child} draw {} {width}", colour.name());
                let mut p = spot(&mut rng);
                let _ = writeln!(s, "{t:.3} touch {touch_id} down {:.4} {:.4} {child}", p.x, p.y);
                let steps = rng.gen_range(4..10);
                for k in 1..=steps {
                    p = Point2::new(
                        (p.x + rng.gen_range(-0.04..0.04)).clamp(0.0, 0.60),
                        (p.y + rng.gen_range(-0.04..0.04)).clamp(0.0, 0.33),
                    );
                    t += 0.1;
                    let phase = if k == steps { "up" } else { "move" };
                    let _ = writeln!(s, "{t:.3} touch {touch_id} {phase} {:.4} {:.4} {child}", p.x, p.y);
                }
                let _ = writeln!(s, "{t:.3} tool {child} drag");
                touch_id += 1;
            }
            75..=89 => {
                let item = ROBOT_ITEMS.choose(&mut rng).expect("non-empty");
                let goal = spot(&mut rng);
                let _ = writeln!(s, "{t:.3} robot move {item} {:.4} {:.4}", goal.x, goal.y);
            }
            _ => match rng.gen_range(0..3) {
                0 => {
                    let line = ["well done", "shall we build a house", "look at the lion", "your turn"]
                        .choose(&mut rng)
                        .expect("non-empty");
                    let _ = writeln!(s, "{t:.3} robot say {line}");
                }
                1 => {
                    let _ = writeln!(s, "{t:.3} robot gaze child {child}");
                }
                _ => {
                    let p = spot(&mut rng);
                    let _ = writeln!(s, "{t:.3} robot point {:.4} {:.4}", p.x, p.y);
                }
            },
        }
        t += rng.gen_range(4.0..12.0);
        t = (t * 1000.0).round() / 1000.0;
    }
    let _ = writeln!(s, "{DEMO_LENGTH_S:.3} end");
    s
}
