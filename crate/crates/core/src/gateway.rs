//! Newline-delimited JSON socket used by the browser UIs.
//!
//! Every line is an envelope `{topic, stamp, payload}` (plus an optional
//! `id` echoed on replies). Outbound, the gateway forwards every bus event
//! with the payload rendered as its inner type. Inbound lines on command
//! topics are turned into sandbox calls; failures come back on
//! `gateway/error`.

use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::annotation::AnnotationInterval;
use crate::bus::message::*;
use crate::bus::replay::{replay, NoSleep, ReplayError, ReplayOptions};
use crate::bus::{Bag, BagError, Event, GameMirror, Payload, Schema};
use crate::engine::{GameState, ToolSelect, TouchEvent};
use crate::robot::{Correspondence, WozCommand};
use crate::runtime::{RuntimeError, Sandbox};
use crate::session::{ChildDemographics, Condition, ProtocolStage};
use crate::time::{Clock, MonotonicClock, Timestamp};

pub const GATEWAY_ERROR: &str = "gateway/error";
pub const GATEWAY_ACK: &str = "gateway/ack";
/// Request (empty payload) and reply carrying the full game state.
pub const GAME_SNAPSHOT: &str = "game/snapshot";
pub const REPLAY_LIST: &str = "replay/list";
pub const REPLAY_OPEN: &str = "replay/open";

/// How often the server advances the sandbox clock on its own.
pub const TICK: Duration = Duration::from_millis(20);

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("malformed envelope: {0}")]
    Malformed(String),
    #[error("topic `{0}` does not accept commands")]
    NotACommand(String),
    #[error("bad payload for `{topic}`: {reason}")]
    BadPayload { topic: String, reason: String },
    #[error("no bag directory is being served")]
    NoBagDir,
    #[error("bag name `{0}` is not a plain file name")]
    BadBagName(String),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Bag(#[from] BagError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl GatewayError {
    /// Short machine-readable tag sent alongside the message.
    pub fn kind(&self) -> &'static str {
        use crate::robot::RobotError;
        match self {
            GatewayError::Malformed(_) => "malformed",
            GatewayError::NotACommand(_) => "not_a_command",
            GatewayError::BadPayload { .. } => "bad_payload",
            GatewayError::NoBagDir | GatewayError::BadBagName(_) => "bad_request",
            GatewayError::Runtime(RuntimeError::Robot(RobotError::BusyItem(_))) => "busy_item",
            GatewayError::Runtime(RuntimeError::Robot(_)) => "robot",
            GatewayError::Runtime(RuntimeError::Session(_)) => "session",
            GatewayError::Runtime(_) => "runtime",
            GatewayError::Replay(ReplayError::SeekPastEnd { .. }) => "seek_past_end",
            GatewayError::Replay(_) | GatewayError::Bag(_) => "bag",
            GatewayError::Io(_) => "io",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub topic: String,
    #[serde(default)]
    pub stamp: u64,
    #[serde(default)]
    pub payload: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<u64>,
}

impl Envelope {
    pub fn new(topic: &str, stamp: Timestamp, payload: Value) -> Self {
        Envelope {
            topic: topic.to_string(),
            stamp: stamp.micros(),
            payload,
            id: None,
        }
    }

    pub fn from_event(e: &Event) -> Self {
        Envelope::new(&e.topic, e.stamp, payload_to_json(&e.payload))
    }

    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("envelopes always serialize");
        s.push('\n');
        s
    }

    fn with_id(mut self, id: Option<u64>) -> Self {
        self.id = id;
        self
    }
}

/// JSON of the payload's inner value (no enum tag; the topic implies it).
pub fn payload_to_json(p: &Payload) -> Value {
    match serde_json::to_value(p).expect("payloads always serialize") {
        Value::Object(m) if m.len() == 1 => m.into_iter().next().expect("one entry").1,
        other => other,
    }
}

/// Inverse of [`payload_to_json`] for a known schema.
pub fn payload_from_json(schema: Schema, v: Value) -> Result<Payload, serde_json::Error> {
    // Payload variants are tagged with their schema name.
    serde_json::from_value(json!({ schema.name(): v }))
}

/// Everything a client needs to draw the game.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub hash: u64,
    pub mode: crate::engine::GameMode,
    pub items: Vec<crate::engine::Item>,
    pub strokes: Vec<crate::engine::Stroke>,
    pub background: crate::engine::ColourRaster,
}

impl Snapshot {
    pub fn of(g: &GameState) -> Self {
        Snapshot {
            hash: g.snapshot_hash(),
            mode: g.mode(),
            items: g.items().to_vec(),
            strokes: g.strokes().to_vec(),
            background: g.background().clone(),
        }
    }
}

#[derive(Debug, Deserialize)]
struct StageRequest {
    to: ProtocolStage,
    #[serde(default)]
    condition: Option<Condition>,
}

#[derive(Debug, Deserialize)]
struct OpenRequest {
    bag: String,
    #[serde(default)]
    seek_us: Option<u64>,
}

fn parse<T: serde::de::DeserializeOwned>(topic: &str, v: Value) -> Result<T, GatewayError> {
    serde_json::from_value(v).map_err(|e| GatewayError::BadPayload {
        topic: topic.to_string(),
        reason: e.to_string(),
    })
}

/// `.fpbag` files directly inside `dir`, sorted by name.
pub fn list_bags(dir: &Path) -> Result<Vec<String>, std::io::Error> {
    let mut names = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let p = entry?.path();
        if p.extension().is_some_and(|e| e == crate::bus::bag::BAG_EXTENSION) {
            if let Some(n) = p.file_name().and_then(|n| n.to_str()) {
                names.push(n.to_string());
            }
        }
    }
    names.sort();
    Ok(names)
}

/// Game state of a recorded bag as of `seek` (the start when `None`).
pub fn state_at(bag: &Bag, seek: Option<Timestamp>) -> Result<GameMirror, ReplayError> {
    let mut mirror = GameMirror::new();
    let seek = seek.or_else(|| bag.time_bounds().map(|b| b.0));
    let opts = ReplayOptions { speed: 0.0, seek_to: seek };
    replay(bag, opts, &mut NoSleep::default(), |e, ff| {
        if ff {
            mirror.apply(e);
        }
        Ok(())
    })?;
    Ok(mirror)
}

/// Request handler shared by the server and tests.
pub struct Gateway {
    bags: Option<PathBuf>,
    wall: fn() -> chrono::DateTime<chrono::Utc>,
}

impl Gateway {
    pub fn new(bags: Option<PathBuf>) -> Self {
        Gateway {
            bags,
            wall: chrono::Utc::now,
        }
    }

    /// Handles one inbound line at sandbox time `now`; returns the replies
    /// for the sender (events published on the bus reach every client via
    /// their subscriptions instead).
    pub fn handle_line(&self, sandbox: &mut Sandbox, line: &str, now: Timestamp) -> Vec<Envelope> {
        let env: Envelope = match serde_json::from_str(line) {
            Ok(e) => e,
            Err(e) => return vec![error_envelope(&GatewayError::Malformed(e.to_string()), now, None)],
        };
        let id = env.id;
        let topic = env.topic.clone();
        match self.dispatch(sandbox, env, now) {
            Ok(Some(reply)) => vec![reply.with_id(id)],
            Ok(None) => match id {
                Some(_) => vec![Envelope::new(GATEWAY_ACK, now, json!({ "topic": topic })).with_id(id)],
                None => Vec::new(),
            },
            Err(e) => vec![error_envelope(&e, now, id)],
        }
    }

    fn dispatch(&self, sb: &mut Sandbox, env: Envelope, now: Timestamp) -> Result<Option<Envelope>, GatewayError> {
        let now = now.max(sb.now());
        let t = env.topic.as_str();
        match t {
            GAME_TOUCHES => {
                let mut ev: TouchEvent = parse(t, env.payload)?;
                ev.stamp = now;
                sb.touch(ev)?;
            }
            GAME_TOOLS => sb.select_tool(parse::<ToolSelect>(t, env.payload)?, now)?,
            WOZ_COMMAND => sb.woz(parse::<WozCommand>(t, env.payload)?, now)?,
            ROBOT_FIDUCIALS => sb.calibrate(parse::<Vec<Correspondence>>(t, env.payload)?, now)?,
            ROBOT_PLAN_REQUEST => sb.plan_request(parse::<PlanRequest>(t, env.payload)?, now)?,
            SESSION_STAGE => {
                let req: StageRequest = parse(t, env.payload)?;
                if req.to == ProtocolStage::Greetings {
                    let cond = req.condition.unwrap_or(Condition::ChildChild);
                    let id = sb.start_session(cond, (self.wall)(), now)?;
                    return Ok(Some(Envelope::new(SESSION_STAGE, now, json!({ "session_id": id }))));
                }
                sb.advance_stage(req.to, now)?;
            }
            SESSION_DEMOGRAPHICS => {
                let v = match env.payload {
                    Value::Array(_) => env.payload,
                    single => Value::Array(vec![single]),
                };
                sb.register_demographics(parse::<Vec<ChildDemographics>>(t, v)?, now)?;
            }
            SESSION_HEALTH => {
                let r = sb.health(now)?;
                return Ok(Some(Envelope::new(SESSION_HEALTH, now, serde_json::to_value(r).expect("serializable"))));
            }
            ANNOT_ADD => sb.annotate(parse::<AnnotationInterval>(t, env.payload)?, now)?,
            GAME_SNAPSHOT => {
                sb.advance_to(now)?;
                return Ok(Some(snapshot_envelope(sb.game(), now)));
            }
            REPLAY_LIST => {
                let dir = self.bags.as_ref().ok_or(GatewayError::NoBagDir)?;
                return Ok(Some(Envelope::new(REPLAY_LIST, now, json!({ "bags": list_bags(dir)? }))));
            }
            REPLAY_OPEN => {
                let dir = self.bags.as_ref().ok_or(GatewayError::NoBagDir)?;
                let req: OpenRequest = parse(t, env.payload)?;
                let name = Path::new(&req.bag);
                if name.components().count() != 1 || name.file_name().is_none() {
                    return Err(GatewayError::BadBagName(req.bag));
                }
                let bag = Bag::load(dir.join(name))?;
                let seek = req.seek_us.map(Timestamp::from_micros);
                let mirror = state_at(&bag, seek)?;
                let (first, last) = bag.time_bounds().unwrap_or((Timestamp::ZERO, Timestamp::ZERO));
                let body = json!({
                    "bag": req.bag,
                    "session_id": bag.header.session_id,
                    "start_us": first.micros(),
                    "end_us": last.micros(),
                    "seek_us": seek.unwrap_or(first).micros(),
                    "snapshot": Snapshot::of(mirror.state()),
                });
                return Ok(Some(Envelope::new(REPLAY_OPEN, now, body)));
            }
            other => return Err(GatewayError::NotACommand(other.to_string())),
        }
        Ok(None)
    }
}

pub fn snapshot_envelope(g: &GameState, now: Timestamp) -> Envelope {
    Envelope::new(GAME_SNAPSHOT, now, serde_json::to_value(Snapshot::of(g)).expect("serializable"))
}

fn error_envelope(e: &GatewayError, now: Timestamp, id: Option<u64>) -> Envelope {
    Envelope::new(GATEWAY_ERROR, now, json!({ "kind": e.kind(), "message": e.to_string() })).with_id(id)
}

/// A running gateway. Dropping it does not stop it; call [`Server::shutdown`].
pub struct Server {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
    sandbox: Arc<Mutex<Sandbox>>,
}

impl Server {
    /// Binds and starts the accept loop and the clock ticker.
    pub fn start(
        addr: impl ToSocketAddrs,
        sandbox: Sandbox,
        bags: Option<PathBuf>,
    ) -> Result<Server, std::io::Error> {
        Self::start_with_clock(addr, sandbox, bags, Arc::new(MonotonicClock::start()))
    }

    pub fn start_with_clock(
        addr: impl ToSocketAddrs,
        sandbox: Sandbox,
        bags: Option<PathBuf>,
        clock: Arc<dyn Clock>,
    ) -> Result<Server, std::io::Error> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let sandbox = Arc::new(Mutex::new(sandbox));
        let gateway = Arc::new(Gateway::new(bags));

        let ticker = {
            let (stop, sandbox, clock) = (stop.clone(), sandbox.clone(), clock.clone());
            thread::spawn(move || {
                while !stop.load(Ordering::Relaxed) {
                    {
                        let mut sb = lock(&sandbox);
                        let now = clock.now().max(sb.now());
                        if let Err(e) = sb.advance_to(now) {
                            eprintln!("gateway: tick failed: {e}");
                        }
                    }
                    thread::sleep(TICK);
                }
            })
        };

        let acceptor = {
            let (stop, sandbox) = (stop.clone(), sandbox.clone());
            thread::spawn(move || {
                while !stop.load(Ordering::Relaxed) {
                    match listener.accept() {
                        Ok((stream, _)) => {
                            let (stop, sandbox, gateway, clock) =
                                (stop.clone(), sandbox.clone(), gateway.clone(), clock.clone());
                            thread::spawn(move || {
                                if let Err(e) = serve_client(stream, &sandbox, &gateway, clock.as_ref(), &stop) {
                                    eprintln!("gateway: client dropped: {e}");
                                }
                            });
                        }
                        Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => thread::sleep(TICK),
                        Err(e) => eprintln!("gateway: accept failed: {e}"),
                    }
                }
            })
        };

        Ok(Server {
            addr,
            stop,
            threads: vec![ticker, acceptor],
            sandbox,
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn sandbox(&self) -> Arc<Mutex<Sandbox>> {
        self.sandbox.clone()
    }

    /// Blocks until another thread calls [`Server::shutdown`] (or forever).
    pub fn wait(mut self) {
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop.store(true, Ordering::Relaxed);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

fn lock(m: &Mutex<Sandbox>) -> std::sync::MutexGuard<'_, Sandbox> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

fn serve_client(
    stream: TcpStream,
    sandbox: &Mutex<Sandbox>,
    gateway: &Gateway,
    clock: &dyn Clock,
    stop: &AtomicBool,
) -> Result<(), std::io::Error> {
    stream.set_nonblocking(false)?;
    stream.set_read_timeout(Some(Duration::from_millis(50)))?;
    let writer = Arc::new(Mutex::new(stream.try_clone()?));
    let (sub, hello) = {
        let sb = lock(sandbox);
        (sb.bus().subscribe(&[]), snapshot_envelope(sb.game(), sb.now()))
    };
    write_line(&writer, &hello)?;

    let done = Arc::new(AtomicBool::new(false));
    let forwarder = {
        let (writer, done) = (writer.clone(), done.clone());
        thread::spawn(move || {
            while !done.load(Ordering::Relaxed) {
                if let Some(e) = sub.recv_timeout(Duration::from_millis(50)) {
                    if write_line(&writer, &Envelope::from_event(&e)).is_err() {
                        break;
                    }
                }
            }
        })
    };

    let mut reader = BufReader::new(stream);
    let mut line = String::new();
    let result = loop {
        if stop.load(Ordering::Relaxed) {
            break Ok(());
        }
        match reader.read_line(&mut line) {
            Ok(0) => break Ok(()),
            Ok(_) => {
                if !line.trim().is_empty() {
                    let replies = {
                        let mut sb = lock(sandbox);
                        let now = clock.now();
                        gateway.handle_line(&mut sb, line.trim(), now)
                    };
                    for r in replies {
                        if let Err(e) = write_line(&writer, &r) {
                            done.store(true, Ordering::Relaxed);
                            let _ = forwarder.join();
                            return Err(e);
                        }
                    }
                }
                line.clear();
            }
            Err(e) if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {}
            Err(e) => break Err(e),
        }
    };
    done.store(true, Ordering::Relaxed);
    let _ = forwarder.join();
    result
}

fn write_line(w: &Mutex<TcpStream>, env: &Envelope) -> Result<(), std::io::Error> {
    let mut s = w.lock().unwrap_or_else(|e| e.into_inner());
    s.write_all(env.to_line().as_bytes())?;
    s.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{Scene, DEFAULT_SCENE};

    fn sandbox() -> Sandbox {
        Sandbox::new(Scene::parse(DEFAULT_SCENE).unwrap())
    }

    #[test]
    fn payload_json_round_trips_for_every_schema() {
        let p = Payload::Mode(crate::engine::GameMode::Freeplay);
        let v = payload_to_json(&p);
        assert_eq!(v, json!("freeplay"));
        assert_eq!(payload_from_json(Schema::Mode, v).unwrap(), p);
        let p = Payload::Blob(vec![1, 2, 3]);
        assert_eq!(payload_from_json(Schema::Blob, payload_to_json(&p)).unwrap(), p);
    }

    #[test]
    fn unknown_topic_and_garbage_are_errors() {
        let gw = Gateway::new(None);
        let mut sb = sandbox();
        let r = gw.handle_line(&mut sb, "{not json", Timestamp::ZERO);
        assert_eq!(r[0].topic, GATEWAY_ERROR);
        assert_eq!(r[0].payload["kind"], "malformed");
        let r = gw.handle_line(&mut sb, r#"{"topic":"analysis/zones","stamp":0,"payload":null,"id":4}"#, Timestamp::ZERO);
        assert_eq!(r[0].payload["kind"], "not_a_command");
        assert_eq!(r[0].id, Some(4));
    }

    #[test]
    fn replay_requests_need_a_bag_dir() {
        let gw = Gateway::new(None);
        let r = gw.handle_line(&mut sandbox(), r#"{"topic":"replay/list"}"#, Timestamp::ZERO);
        assert_eq!(r[0].payload["kind"], "bad_request");
    }

    #[test]
    fn ack_only_when_an_id_is_given() {
        let gw = Gateway::new(None);
        let mut sb = sandbox();
        let line = r#"{"topic":"game/tools","payload":{"source":"child_purple","tool":"drag"}}"#;
        assert!(gw.handle_line(&mut sb, line, Timestamp::ZERO).is_empty());
        let line = r#"{"topic":"game/tools","payload":{"source":"child_purple","tool":"drag"},"id":1}"#;
        assert_eq!(gw.handle_line(&mut sb, line, Timestamp::ZERO)[0].topic, GATEWAY_ACK);
    }
}
