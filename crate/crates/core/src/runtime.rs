//! Headless orchestrator: one game, one bus, one robot, one session.
//!
//! The sandbox is driven by stamped inputs in non-decreasing time order.
//! Before each input, everything scheduled for earlier (robot motion steps,
//! policy ticks, the free-play cap) is carried out at its own stamp, so a
//! run is a pure function of its inputs.

use std::io::Write;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use chrono::{DateTime, Utc};
use thiserror::Error;

use crate::analysis::{Analytics, Finding};
use crate::annotation::{AnnotationError, AnnotationInterval, AnnotationTrack};
use crate::bus::message::*;
use crate::bus::{BagIndex, Bus, BusError, Payload};
use crate::engine::{GameDelta, GameMode, GameState, Scene, ToolSelect, TouchEvent};
use crate::robot::{
    CalibrationError, Correspondence, Outcome, Policy, PointerPose, RobotAction, RobotController,
    RobotError, WozCommand,
};
use crate::session::{
    ChildDemographics, Condition, HealthMonitor, HealthReport, ProtocolStage, SessionEffect,
    SessionError, SessionManager, SessionRecord, FREEPLAY_CAP,
};
use crate::time::Timestamp;
use crate::zones::ZoneError;

/// How often an autonomous policy is stepped.
pub const POLICY_PERIOD: Duration = Duration::from_secs(1);

const MODULES: [&str; 5] = ["engine", "bus", "analysis", "robot", "session"];

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("input at {stamp} is older than the sandbox clock ({now})")]
    TimeWentBackwards { stamp: Timestamp, now: Timestamp },
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error(transparent)]
    Robot(#[from] RobotError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Zone(#[from] ZoneError),
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
}

/// Where bags go when a session enters free play.
#[derive(Clone, Debug)]
pub enum RecordTarget {
    None,
    File(PathBuf),
    Memory(SharedBuffer),
}

/// A byte buffer that can be handed to the recorder and read back later.
#[derive(Clone, Debug, Default)]
pub struct SharedBuffer(pub Arc<Mutex<Vec<u8>>>);

impl SharedBuffer {
    pub fn bytes(&self) -> Vec<u8> {
        self.0.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }
}

impl Write for SharedBuffer {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.lock().unwrap_or_else(|e| e.into_inner()).extend_from_slice(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

/// What happened when recording stopped.
#[derive(Clone, Debug, PartialEq)]
pub struct RecordingSummary {
    pub index: BagIndex,
    /// Game state hash at the moment recording stopped.
    pub live_hash: u64,
    pub start: Timestamp,
    pub stop: Timestamp,
}

pub struct Sandbox {
    bus: Bus,
    now: Timestamp,
    game: GameState,
    analytics: Analytics,
    robot: RobotController,
    policy: Option<Box<dyn Policy>>,
    policy_next: Option<Timestamp>,
    session: SessionManager,
    health: HealthMonitor,
    annotations: AnnotationTrack,
    target: RecordTarget,
    recording_since: Option<Timestamp>,
    recordings: Vec<RecordingSummary>,
    robot_errors: Vec<(Timestamp, RobotError)>,
}

impl Sandbox {
    pub fn new(scene: Scene) -> Self {
        let game = GameState::new(scene);
        let mut analytics = Analytics::new();
        analytics
            .resegment(&game)
            .expect("scene rasters use the palette");
        Sandbox {
            bus: Bus::with_standard_topics(),
            now: Timestamp::ZERO,
            game,
            analytics,
            robot: RobotController::new(),
            policy: None,
            policy_next: None,
            session: SessionManager::new(),
            health: HealthMonitor::new(),
            annotations: AnnotationTrack::new(),
            target: RecordTarget::None,
            recording_since: None,
            recordings: Vec::new(),
            robot_errors: Vec::new(),
        }
    }

    pub fn bus(&self) -> &Bus {
        &self.bus
    }

    pub fn now(&self) -> Timestamp {
        self.now
    }

    pub fn game(&self) -> &GameState {
        &self.game
    }

    pub fn analytics(&self) -> &Analytics {
        &self.analytics
    }

    pub fn robot(&self) -> &RobotController {
        &self.robot
    }

    pub fn robot_mut(&mut self) -> &mut RobotController {
        &mut self.robot
    }

    pub fn session(&self) -> &SessionManager {
        &self.session
    }

    pub fn annotations(&self) -> &AnnotationTrack {
        &self.annotations
    }

    pub fn recordings(&self) -> &[RecordingSummary] {
        &self.recordings
    }

    /// Policy actions that could not be carried out (no path, busy item...).
    pub fn robot_errors(&self) -> &[(Timestamp, RobotError)] {
        &self.robot_errors
    }

    pub fn set_record_target(&mut self, target: RecordTarget) {
        self.target = target;
    }

    pub fn set_policy(&mut self, policy: Option<Box<dyn Policy>>) {
        self.policy = policy;
        self.policy_next = None;
    }

    fn publish(&self, topic: &str, payload: Payload, stamp: Timestamp) -> Result<(), RuntimeError> {
        self.bus.publish(topic, payload, stamp)?;
        Ok(())
    }

    fn emit(&mut self, deltas: Vec<GameDelta>, stamp: Timestamp) -> Result<(), RuntimeError> {
        for d in deltas {
            let findings = self.analytics.observe(&self.game, &d, stamp)?;
            let (topic, payload) = Payload::from_delta(d);
            self.publish(topic, payload, stamp)?;
            for f in findings {
                let (topic, payload) = match f {
                    Finding::Zones(z) => (ANALYSIS_ZONES, Payload::Zones(z)),
                    Finding::Transition(t) => (ANALYSIS_TRANSITIONS, Payload::Transition(t)),
                    Finding::Proximity(p) => (ANALYSIS_PROXIMITY, Payload::Proximity(p)),
                };
                self.publish(topic, payload, stamp)?;
            }
        }
        Ok(())
    }

    fn check_time(&self, stamp: Timestamp) -> Result<(), RuntimeError> {
        if stamp < self.now {
            return Err(RuntimeError::TimeWentBackwards { stamp, now: self.now });
        }
        Ok(())
    }

    fn freeplay_deadline(&self) -> Option<Timestamp> {
        let s = self.session.current()?;
        let e = s.stages.last()?;
        (e.stage == ProtocolStage::Freeplay).then(|| e.enter + FREEPLAY_CAP)
    }

    fn policy_due(&self) -> Option<Timestamp> {
        if self.policy.is_none() || self.game.mode() != GameMode::Freeplay {
            return None;
        }
        Some(self.policy_next.unwrap_or(self.now))
    }

    /// Runs everything scheduled up to and including `t`, then sets the
    /// clock to `t`.
    pub fn advance_to(&mut self, t: Timestamp) -> Result<(), RuntimeError> {
        self.check_time(t)?;
        loop {
            let robot = self.robot.next_due().filter(|&x| x <= t);
            let policy = self.policy_due().filter(|&x| x <= t);
            let cap = self.freeplay_deadline().filter(|&x| x <= t);
            // Earliest first; on ties motion, then the cap, then the policy.
            let next = [robot.map(|x| (x, 0)), cap.map(|x| (x, 1)), policy.map(|x| (x, 2))]
                .into_iter()
                .flatten()
                .min();
            let Some((at, kind)) = next else { break };
            self.now = self.now.max(at);
            match kind {
                0 => {
                    for (item, step) in self.robot.pump(at) {
                        self.publish(
                            ROBOT_POINTER,
                            Payload::Pointer(PointerPose {
                                item_id: item.clone(),
                                target: step.pointer,
                                stamp: step.stamp,
                            }),
                            step.stamp,
                        )?;
                        self.publish(GAME_TOUCHES, Payload::Touch(step.touch), step.stamp)?;
                        let deltas = self.game.apply_touch_on(&step.touch, Some(&item));
                        self.emit(deltas, step.stamp)?;
                    }
                }
                1 => {
                    if let Some(effects) = self.session.tick(at) {
                        self.apply_effects(effects, at)?;
                    }
                }
                _ => {
                    self.policy_next = Some(at + POLICY_PERIOD);
                    let policy = self.policy.as_mut().expect("due implies a policy");
                    if let Some(action) = policy.step(&self.game, None, at) {
                        if let Err(e) = self.robot_action(action, at) {
                            match e {
                                RuntimeError::Robot(e) => self.robot_errors.push((at, e)),
                                other => return Err(other),
                            }
                        }
                    }
                }
            }
        }
        self.now = t;
        Ok(())
    }

    /// A touch from a child or the wizard.
    pub fn touch(&mut self, ev: TouchEvent) -> Result<(), RuntimeError> {
        self.advance_to(ev.stamp)?;
        self.publish(GAME_TOUCHES, Payload::Touch(ev), ev.stamp)?;
        let deltas = self.game.apply_touch(&ev);
        self.emit(deltas, ev.stamp)
    }

    pub fn select_tool(&mut self, sel: ToolSelect, stamp: Timestamp) -> Result<(), RuntimeError> {
        self.advance_to(stamp)?;
        self.game.set_tool(sel.source, sel.tool);
        self.publish(GAME_TOOLS, Payload::ToolSelect(sel), stamp)
    }

    /// Publishes and carries out a robot action.
    pub fn robot_action(&mut self, action: RobotAction, stamp: Timestamp) -> Result<(), RuntimeError> {
        self.advance_to(stamp)?;
        self.publish(ROBOT_ACTIONS, Payload::Action(action.clone()), stamp)?;
        match self.robot.execute(&self.game, &action, stamp)? {
            Outcome::Scheduled(s) => self.publish(ROBOT_SCHEDULE, Payload::Schedule(s), stamp),
            Outcome::Social(a) => self.publish(ROBOT_SOCIAL, Payload::Action(a), stamp),
        }
    }

    pub fn woz(&mut self, cmd: WozCommand, stamp: Timestamp) -> Result<(), RuntimeError> {
        self.advance_to(stamp)?;
        self.publish(WOZ_COMMAND, Payload::Woz(cmd.clone()), stamp)?;
        let action = self.robot.woz_apply(&self.game, cmd, stamp)?;
        self.robot_action(action, stamp)
    }

    pub fn plan_request(&mut self, req: PlanRequest, stamp: Timestamp) -> Result<(), RuntimeError> {
        self.advance_to(stamp)?;
        self.publish(ROBOT_PLAN_REQUEST, Payload::PlanRequest(req.clone()), stamp)?;
        let action = self.robot.woz_apply(
            &self.game,
            WozCommand::Drag {
                item_id: req.item_id,
                goal: req.goal,
            },
            stamp,
        )?;
        self.robot_action(action, stamp)
    }

    pub fn calibrate(&mut self, pairs: Vec<Correspondence>, stamp: Timestamp) -> Result<(), RuntimeError> {
        self.advance_to(stamp)?;
        self.publish(ROBOT_FIDUCIALS, Payload::Fiducials(pairs.clone()), stamp)?;
        let c = self.robot.calibrate_from(&pairs)?;
        self.publish(ROBOT_CALIBRATION, Payload::Calibration(c), stamp)
    }

    pub fn blob(&mut self, topic: &str, bytes: Vec<u8>, stamp: Timestamp) -> Result<(), RuntimeError> {
        self.advance_to(stamp)?;
        self.publish(topic, Payload::Blob(bytes), stamp)
    }

    /// Adds a coded interval (last coder wins) and publishes it along with
    /// the resulting track.
    pub fn annotate(&mut self, iv: AnnotationInterval, stamp: Timestamp) -> Result<(), RuntimeError> {
        self.advance_to(stamp)?;
        self.annotations.add_interval(iv.clone())?;
        self.publish(ANNOT_ADD, Payload::Annotation(iv), stamp)?;
        let track = self.annotations.intervals().cloned().collect();
        self.publish(ANNOT_TRACK, Payload::Track(track), stamp)
    }

    pub fn start_session(
        &mut self,
        condition: Condition,
        wall: DateTime<Utc>,
        stamp: Timestamp,
    ) -> Result<String, RuntimeError> {
        self.advance_to(stamp)?;
        let effects = self.session.start(condition, wall, stamp)?;
        self.apply_effects(effects, stamp)?;
        Ok(self.session.current().expect("just started").id.clone())
    }

    pub fn advance_stage(&mut self, to: ProtocolStage, stamp: Timestamp) -> Result<(), RuntimeError> {
        self.advance_to(stamp)?;
        let effects = self.session.advance(to, stamp)?;
        self.apply_effects(effects, stamp)
    }

    pub fn register_demographics(
        &mut self,
        entries: Vec<ChildDemographics>,
        stamp: Timestamp,
    ) -> Result<(), RuntimeError> {
        self.advance_to(stamp)?;
        for d in self.session.register_demographics(entries)? {
            self.publish(SESSION_DEMOGRAPHICS, Payload::Demographics(d), stamp)?;
        }
        Ok(())
    }

    /// Walks the active session through its remaining stages to `done`.
    pub fn finish_session(&mut self, stamp: Timestamp) -> Result<Option<SessionRecord>, RuntimeError> {
        self.advance_to(stamp)?;
        while let Some(s) = self.session.current() {
            let next = s.current_stage().successor().expect("active sessions are not done");
            self.advance_stage(next, stamp)?;
        }
        Ok(self.session.finished().last().cloned())
    }

    pub fn health(&mut self, stamp: Timestamp) -> Result<HealthReport, RuntimeError> {
        self.advance_to(stamp)?;
        for m in MODULES {
            self.health.heartbeat(m, stamp);
        }
        let report = self.health.report(stamp);
        self.publish(SESSION_HEALTH, Payload::Health(report.clone()), stamp)?;
        Ok(report)
    }

    fn apply_effects(&mut self, effects: Vec<SessionEffect>, stamp: Timestamp) -> Result<(), RuntimeError> {
        for e in effects {
            match e {
                SessionEffect::ResetGame => {
                    self.robot.cancel_all();
                    let deltas = self.game.reset();
                    self.emit(deltas, stamp)?;
                }
                SessionEffect::SetMode(m) => {
                    if m == GameMode::Freeplay {
                        self.policy_next = Some(stamp);
                    }
                    if let Some(d) = self.game.set_mode(m) {
                        self.emit(vec![d], stamp)?;
                    }
                }
                SessionEffect::StartRecording => self.start_recording(stamp)?,
                SessionEffect::StopRecording => self.stop_recording(stamp)?,
                SessionEffect::Announce(change) => {
                    self.publish(SESSION_STAGE, Payload::Stage(change), stamp)?;
                }
            }
        }
        Ok(())
    }

    fn start_recording(&mut self, stamp: Timestamp) -> Result<(), RuntimeError> {
        let session = self.session.current().expect("recording starts inside a session");
        let (id, epoch) = (session.id.clone(), self.epoch_us(session));
        let sink: Box<dyn Write + Send> = match &self.target {
            RecordTarget::None => return Ok(()),
            RecordTarget::Memory(buf) => Box::new(buf.clone()),
            RecordTarget::File(path) => {
                let f = std::fs::File::create(path).map_err(|e| BusError::Bag(e.into()))?;
                self.session.set_bag_path(path.clone());
                Box::new(std::io::BufWriter::new(f))
            }
        };
        self.bus.start_recording(sink, &id, epoch)?;
        self.recording_since = Some(stamp);
        // The bag starts from a full picture of the game.
        let snapshot = self.game.snapshot_deltas();
        for d in snapshot {
            let (topic, payload) = Payload::from_delta(d);
            self.publish(topic, payload, stamp)?;
        }
        if let Some(z) = self.analytics.zones().cloned() {
            self.publish(ANALYSIS_ZONES, Payload::Zones(z), stamp)?;
        }
        Ok(())
    }

    fn stop_recording(&mut self, stamp: Timestamp) -> Result<(), RuntimeError> {
        let Some(start) = self.recording_since.take() else {
            return Ok(());
        };
        let index = self.bus.stop_recording()?;
        self.recordings.push(RecordingSummary {
            index,
            live_hash: self.game.snapshot_hash(),
            start,
            stop: stamp,
        });
        Ok(())
    }

    /// Stamp zero on the wall clock: the session's date at midnight UTC.
    fn epoch_us(&self, session: &SessionRecord) -> i64 {
        chrono::NaiveDate::parse_from_str(&session.id[..8], "%Y%m%d")
            .ok()
            .and_then(|d| d.and_hms_opt(0, 0, 0))
            .map(|d| d.and_utc().timestamp_micros())
            .unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bus::Bag;
    use crate::engine::{TouchPhase, TouchSource};
    use crate::frames::Point2;
    use crate::robot::{AsocialPolicy, Calibration};
    use chrono::TimeZone;

    fn wall() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2026, 3, 2, 10, 0, 0).unwrap()
    }

    fn start(sb: &mut Sandbox) {
        sb.start_session(Condition::ChildRobot, wall(), Timestamp::ZERO).unwrap();
        sb.advance_stage(ProtocolStage::Tutorial, Timestamp::ZERO).unwrap();
        sb.advance_stage(ProtocolStage::Freeplay, Timestamp::ZERO).unwrap();
    }

    #[test]
    fn records_only_during_freeplay() {
        let mut sb = Sandbox::new(Scene::parse(crate::engine::DEFAULT_SCENE).unwrap());
        let buf = SharedBuffer::default();
        sb.set_record_target(RecordTarget::Memory(buf.clone()));
        start(&mut sb);
        let giraffe = sb.game().item("giraffe").unwrap().centre();
        let t = |s| Timestamp::from_secs(s);
        sb.touch(TouchEvent::new(1, TouchPhase::Down, giraffe.x, giraffe.y, TouchSource::ChildYellow, t(1))).unwrap();
        sb.touch(TouchEvent::new(1, TouchPhase::Up, 0.3, 0.2, TouchSource::ChildYellow, t(2))).unwrap();
        sb.finish_session(t(3)).unwrap();
        let bag = Bag::parse(&buf.bytes()).unwrap();
        let (lo, hi) = bag.time_bounds().unwrap();
        assert_eq!((lo, hi), (t(0), t(3)));
        assert_eq!(bag.count(GAME_TOUCHES), 2);
        assert_eq!(bag.count(SESSION_STAGE), 2, "freeplay and debriefing announcements");
        assert_eq!(sb.recordings().len(), 1);
        assert_eq!(sb.session().finished()[0].id, "20260302-001");
    }

    #[test]
    fn freeplay_ends_at_the_cap() {
        let mut sb = Sandbox::new(Scene::empty());
        start(&mut sb);
        sb.advance_to(Timestamp::from_secs(2399)).unwrap();
        assert_eq!(sb.session().current().unwrap().current_stage(), ProtocolStage::Freeplay);
        sb.advance_to(Timestamp::from_secs(2401)).unwrap();
        let s = sb.session().current().unwrap();
        assert_eq!(s.current_stage(), ProtocolStage::Debriefing);
        assert_eq!(s.stages.last().unwrap().enter, Timestamp::from_secs(2400));
    }

    #[test]
    fn wizard_drag_moves_the_item() {
        let mut sb = Sandbox::new(Scene::parse(crate::engine::DEFAULT_SCENE).unwrap());
        sb.robot_mut().set_calibration(Calibration::identity()).unwrap();
        start(&mut sb);
        let pointer = sb.bus().subscribe(&[ROBOT_POINTER]);
        sb.woz(WozCommand::Drag { item_id: "zebra".into(), goal: Point2::new(0.555, 0.175) }, Timestamp::from_secs(1)).unwrap();
        sb.advance_to(Timestamp::from_secs(60)).unwrap();
        let c = sb.game().item("zebra").unwrap().centre();
        assert!(c.distance(Point2::new(0.555, 0.175)) < 1e-12, "{c:?}");
        assert!(!pointer.drain().is_empty());
    }

    #[test]
    fn asocial_robot_stays_silent() {
        let mut sb = Sandbox::new(Scene::parse(crate::engine::DEFAULT_SCENE).unwrap());
        sb.robot_mut().set_calibration(Calibration::identity()).unwrap();
        sb.set_policy(Some(Box::new(AsocialPolicy::new(5))));
        let social = sb.bus().subscribe(&[ROBOT_SOCIAL]);
        let actions = sb.bus().subscribe(&[ROBOT_ACTIONS]);
        start(&mut sb);
        sb.advance_to(Timestamp::from_secs(120)).unwrap();
        assert!(social.drain().is_empty());
        assert_eq!(actions.drain().len(), 9, "one move per 15 s pause, from t = 0");
    }

    #[test]
    fn inputs_cannot_go_back_in_time() {
        let mut sb = Sandbox::new(Scene::empty());
        sb.advance_to(Timestamp::from_secs(5)).unwrap();
        assert!(matches!(sb.advance_to(Timestamp::from_secs(4)), Err(RuntimeError::TimeWentBackwards { .. })));
    }
}
