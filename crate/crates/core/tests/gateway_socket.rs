mod common;

use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde_json::{json, Value};

use sandbox_core::bus::Bag;
use sandbox_core::frames::Point2;
use sandbox_core::gateway::*;
use sandbox_core::planner::{build_occupancy, DEFAULT_RESOLUTION};
use sandbox_core::runtime::Sandbox;
use sandbox_core::time::{Timestamp, VirtualClock};

use common::*;

struct Client {
    out: TcpStream,
    lines: BufReader<TcpStream>,
}

impl Client {
    fn connect(server: &Server) -> Client {
        let s = TcpStream::connect(server.local_addr()).unwrap();
        s.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
        Client { out: s.try_clone().unwrap(), lines: BufReader::new(s) }
    }

    fn send(&mut self, v: Value) {
        writeln!(self.out, "{v}").unwrap();
    }

    fn send_raw(&mut self, line: &str) {
        writeln!(self.out, "{line}").unwrap();
    }

    /// Reads envelopes until one satisfies `pred`.
    fn until(&mut self, what: &str, pred: impl Fn(&Value) -> bool) -> Value {
        let deadline = Instant::now() + Duration::from_secs(10);
        let mut line = String::new();
        while Instant::now() < deadline {
            line.clear();
            match self.lines.read_line(&mut line) {
                Ok(0) => panic!("server closed while waiting for {what}"),
                Ok(_) => {
                    let v: Value = serde_json::from_str(&line).unwrap();
                    assert!(v["topic"].is_string() && v["stamp"].is_u64(), "bad envelope {v}");
                    if pred(&v) {
                        return v;
                    }
                }
                Err(e) => panic!("waiting for {what}: {e}"),
            }
        }
        panic!("timed out waiting for {what}");
    }

    fn reply(&mut self, id: u64) -> Value {
        self.until(&format!("reply {id}"), |v| v["id"] == id)
    }
}

fn start(bags: Option<std::path::PathBuf>) -> (Server, Arc<VirtualClock>) {
    let clock = Arc::new(VirtualClock::new(Timestamp::ZERO));
    let server = Server::start_with_clock("127.0.0.1:0", Sandbox::new(default_scene()), bags, clock.clone()).unwrap();
    (server, clock)
}

fn markers() -> Value {
    let pts = [(0.05, 0.05), (0.55, 0.05), (0.30, 0.28)];
    Value::Array(pts.iter().map(|(x, y)| json!({"screen": {"x": x, "y": y}, "robot": {"x": x, "y": y}})).collect())
}

#[test]
fn woz_drag_moves_the_item_to_the_goal() {
    let (server, clock) = start(None);
    let mut c = Client::connect(&server);
    let hello = c.until("hello", |v| v["topic"] == GAME_SNAPSHOT);
    let zebra = hello["payload"]["items"].as_array().unwrap().iter().find(|i| i["id"] == "zebra").unwrap().clone();
    assert!(zebra["pose"].is_object());

    let scene = default_scene();
    let grid = build_occupancy(&scene.items, "zebra", DEFAULT_RESOLUTION).unwrap();
    let goal_cell = grid
        .free_cells()
        .into_iter()
        .min_by(|a, b| {
            let d = |c: (usize, usize)| grid.cell_centre(c).distance(Point2::new(0.5, 0.2));
            d(*a).total_cmp(&d(*b))
        })
        .unwrap();
    let goal = grid.cell_centre(goal_cell);

    c.send(json!({"topic": "robot/fiducials", "stamp": 0, "payload": markers(), "id": 1}));
    assert_eq!(c.reply(1)["topic"], GATEWAY_ACK);
    c.send(json!({"topic": "woz/command", "stamp": 0, "payload": {"drag": {"item_id": "zebra", "goal": {"x": goal.x, "y": goal.y}}}, "id": 2}));
    assert_eq!(c.reply(2)["topic"], GATEWAY_ACK);
    // The move runs on the server's clock.
    clock.advance_to(Timestamp::from_secs(60));
    c.until("release", |v| v["topic"] == "game/items" && v["payload"].get("release").is_some());
    c.send(json!({"topic": "game/snapshot", "id": 3}));
    let snap = c.reply(3);
    let z = snap["payload"]["items"].as_array().unwrap().iter().find(|i| i["id"] == "zebra").unwrap().clone();
    let (x, y) = (z["pose"]["translation"]["x"].as_f64().unwrap(), z["pose"]["translation"]["y"].as_f64().unwrap());
    assert!((x - goal.x).abs() < 1e-9 && (y - goal.y).abs() < 1e-9, "zebra at ({x}, {y}), goal {goal:?}");
    drop(c);
    server.shutdown();
}

#[test]
fn errors_come_back_to_the_sender() {
    let (server, _clock) = start(None);
    let mut c = Client::connect(&server);
    c.until("hello", |v| v["topic"] == GAME_SNAPSHOT);
    c.send_raw("this is not json");
    let e = c.until("error", |v| v["topic"] == GATEWAY_ERROR);
    assert_eq!(e["payload"]["kind"], "malformed");
    c.send(json!({"topic": "game/touches", "payload": {"nope": 1}, "id": 7}));
    let e = c.reply(7);
    assert_eq!((e["topic"].as_str(), e["payload"]["kind"].as_str()), (Some(GATEWAY_ERROR), Some("bad_payload")));
    c.send(json!({"topic": "woz/command", "payload": {"say": {"text": "hi"}}, "id": 8}));
    // Social actions don't need a calibration.
    assert_eq!(c.reply(8)["topic"], GATEWAY_ACK);
    c.send(json!({"topic": "woz/command", "payload": {"drag": {"item_id": "zebra", "goal": {"x": 0.5, "y": 0.2}}}, "id": 9}));
    assert_eq!(c.reply(9)["payload"]["kind"], "robot");
    c.send(json!({"topic": "session/stage", "payload": {"to": "freeplay"}, "id": 10}));
    assert_eq!(c.reply(10)["payload"]["kind"], "session");
    c.send(json!({"topic": "replay/list", "id": 11}));
    assert_eq!(c.reply(11)["payload"]["kind"], "bad_request");
    drop(c);
    server.shutdown();
}

#[test]
fn session_stages_and_broadcasts() {
    let (server, clock) = start(None);
    let mut a = Client::connect(&server);
    let mut b = Client::connect(&server);
    a.until("hello", |v| v["topic"] == GAME_SNAPSHOT);
    b.until("hello", |v| v["topic"] == GAME_SNAPSHOT);
    a.send(json!({"topic": "session/stage", "payload": {"to": "greetings", "condition": "child_robot"}, "id": 1}));
    let sid = a.reply(1)["payload"]["session_id"].as_str().unwrap().to_string();
    assert!(sid.ends_with("-001"), "{sid}");
    a.send(json!({"topic": "session/demographics", "payload": {"child": "purple", "age": 6}, "id": 2}));
    assert_eq!(a.reply(2)["topic"], GATEWAY_ACK);
    clock.advance_to(Timestamp::from_secs(5));
    a.send(json!({"topic": "session/stage", "payload": {"to": "tutorial"}, "id": 3}));
    a.reply(3);
    // The other client hears about it on the bus.
    let st = b.until("stage", |v| v["topic"] == "session/stage" && v["payload"]["to"] == "tutorial");
    assert_eq!(st["payload"]["session_id"], sid.as_str());
    a.send(json!({"topic": "session/health", "id": 4}));
    assert!(a.reply(4)["payload"]["modules"].is_array());
    drop((a, b));
    server.shutdown();
}

#[test]
fn replay_list_and_open() {
    let dir = tempfile::tempdir().unwrap();
    let (outcome, bytes) = golden_run();
    std::fs::write(dir.path().join("golden.fpbag"), &bytes).unwrap();
    std::fs::write(dir.path().join("notes.txt"), "x").unwrap();
    let bag = Bag::parse(&bytes).unwrap();
    let (first, last) = bag.time_bounds().unwrap();

    let (server, _clock) = start(Some(dir.path().to_path_buf()));
    let mut c = Client::connect(&server);
    c.until("hello", |v| v["topic"] == GAME_SNAPSHOT);
    c.send(json!({"topic": "replay/list", "id": 1}));
    assert_eq!(c.reply(1)["payload"]["bags"], json!(["golden.fpbag"]));

    c.send(json!({"topic": "replay/open", "payload": {"bag": "golden.fpbag"}, "id": 2}));
    let r = c.reply(2);
    assert_eq!(r["topic"], REPLAY_OPEN);
    assert_eq!(r["payload"]["session_id"], bag.header.session_id.as_str());
    assert_eq!(r["payload"]["start_us"], first.micros());
    assert_eq!(r["payload"]["end_us"], last.micros());
    assert_eq!(r["payload"]["seek_us"], first.micros());
    assert_eq!(r["payload"]["snapshot"]["hash"], state_at(&bag, None).unwrap().hash());

    let seek = Timestamp::from_secs(300);
    c.send(json!({"topic": "replay/open", "payload": {"bag": "golden.fpbag", "seek_us": seek.micros()}, "id": 3}));
    let r = c.reply(3);
    assert_eq!(r["payload"]["snapshot"]["hash"], state_at(&bag, Some(seek)).unwrap().hash());

    c.send(json!({"topic": "replay/open", "payload": {"bag": "golden.fpbag", "seek_us": last.micros()}, "id": 6}));
    assert_eq!(c.reply(6)["payload"]["snapshot"]["hash"], outcome.final_hash);

    c.send(json!({"topic": "replay/open", "payload": {"bag": "golden.fpbag", "seek_us": last.micros() + 1}, "id": 4}));
    assert_eq!(c.reply(4)["payload"]["kind"], "seek_past_end");
    c.send(json!({"topic": "replay/open", "payload": {"bag": "../etc/passwd"}, "id": 5}));
    assert_eq!(c.reply(5)["payload"]["kind"], "bad_request");
    drop(c);
    server.shutdown();
}
