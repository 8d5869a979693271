//! Acquisition protocol state machine, demographics and module health.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::Child;
use crate::engine::GameMode;
use crate::time::Timestamp;

/// Free-play sessions are capped at 40 minutes.
pub const FREEPLAY_CAP: Duration = Duration::from_secs(40 * 60);
pub const HEARTBEAT_STALE_AFTER: Duration = Duration::from_secs(2);
pub const EXPECTED_AGES: std::ops::RangeInclusive<u8> = 4..=8;

#[derive(Debug, Error, PartialEq)]
pub enum SessionError {
    #[error("illegal transition {from} -> {to}")]
    IllegalTransition {
        from: ProtocolStage,
        to: ProtocolStage,
    },
    #[error("operation needs stage {expected}, session is in {actual}")]
    WrongStage {
        expected: ProtocolStage,
        actual: ProtocolStage,
    },
    #[error("no active session")]
    NoActiveSession,
    #[error("session {0} is still active")]
    SessionActive(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    ChildChild,
    ChildRobot,
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Condition::ChildChild => "child_child",
            Condition::ChildRobot => "child_robot",
        })
    }
}

impl FromStr for Condition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "child_child" => Ok(Condition::ChildChild),
            "child_robot" => Ok(Condition::ChildRobot),
            other => Err(format!("unknown condition `{other}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolStage {
    Greetings,
    Tutorial,
    Freeplay,
    Debriefing,
    Done,
}

impl ProtocolStage {
    pub const ALL: [ProtocolStage; 5] = [
        ProtocolStage::Greetings,
        ProtocolStage::Tutorial,
        ProtocolStage::Freeplay,
        ProtocolStage::Debriefing,
        ProtocolStage::Done,
    ];

    pub fn successor(self) -> Option<ProtocolStage> {
        use ProtocolStage::*;
        match self {
            Greetings => Some(Tutorial),
            Tutorial => Some(Freeplay),
            Freeplay => Some(Debriefing),
            Debriefing => Some(Done),
            Done => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ProtocolStage::Greetings => "greetings",
            ProtocolStage::Tutorial => "tutorial",
            ProtocolStage::Freeplay => "freeplay",
            ProtocolStage::Debriefing => "debriefing",
            ProtocolStage::Done => "done",
        }
    }
}

impl fmt::Display for ProtocolStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProtocolStage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ProtocolStage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| format!("unknown stage `{s}`"))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChildDemographics {
    pub child: Child,
    pub age: u8,
    /// Free-form optional fields, in entry order.
    #[serde(default)]
    pub extra: Vec<(String, String)>,
    /// Set when the age falls outside the expected 4–8 range.
    #[serde(default)]
    pub age_out_of_range: bool,
}

impl ChildDemographics {
    pub fn new(child: Child, age: u8) -> Self {
        ChildDemographics {
            child,
            age,
            extra: Vec::new(),
            age_out_of_range: !EXPECTED_AGES.contains(&age),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageEntry {
    pub stage: ProtocolStage,
    pub enter: Timestamp,
    pub exit: Option<Timestamp>,
}

/// Stage change as published on `session/stage`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageChange {
    pub session_id: String,
    pub condition: Condition,
    pub from: Option<ProtocolStage>,
    pub to: ProtocolStage,
    pub stamp: Timestamp,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub id: String,
    pub condition: Condition,
    pub demographics: Vec<ChildDemographics>,
    pub stages: Vec<StageEntry>,
    pub bag_path: Option<PathBuf>,
}

impl SessionRecord {
    pub fn current_stage(&self) -> ProtocolStage {
        self.stages.last().map(|s| s.stage).unwrap_or(ProtocolStage::Greetings)
    }

    pub fn stage_entry(&self, stage: ProtocolStage) -> Option<&StageEntry> {
        self.stages.iter().find(|s| s.stage == stage)
    }

    pub fn freeplay_duration(&self) -> Option<Duration> {
        let e = self.stage_entry(ProtocolStage::Freeplay)?;
        Some(e.exit? - e.enter)
    }

    /// Plain-text record: one `key value...` line per fact.
    pub fn to_text(&self) -> String {
        let mut out = format!("session {}\ncondition {}\n", self.id, self.condition);
        if let Some(p) = &self.bag_path {
            out.push_str(&format!("bag {}\n", p.display()));
        }
        for d in &self.demographics {
            out.push_str(&format!("child {} {}", d.child, d.age));
            for (k, v) in &d.extra {
                out.push_str(&format!(" {k}={v}"));
            }
            if d.age_out_of_range {
                out.push_str(" !age_out_of_range");
            }
            out.push('\n');
        }
        for s in &self.stages {
            let exit = s.exit.map(|t| t.micros().to_string()).unwrap_or_else(|| "-".into());
            out.push_str(&format!("stage {} {} {}\n", s.stage, s.enter.micros(), exit));
        }
        out
    }

    pub fn parse(text: &str) -> Result<SessionRecord, SessionError> {
        let mut id = None;
        let mut condition = None;
        let mut rec_bag = None;
        let mut demographics = Vec::new();
        let mut stages = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let err = |message: String| SessionError::Parse { line: n + 1, message };
            let mut f = line.split_whitespace();
            let Some(key) = f.next() else { continue };
            match key {
                "session" => id = f.next().map(str::to_string),
                "condition" => {
                    condition = Some(f.next().unwrap_or("").parse::<Condition>().map_err(err)?)
                }
                "bag" => rec_bag = Some(PathBuf::from(line["bag".len()..].trim())),
                "child" => {
                    let child: Child = f.next().unwrap_or("").parse().map_err(err)?;
                    let age: u8 = f
                        .next()
                        .unwrap_or("")
                        .parse()
                        .map_err(|e| err(format!("age: {e}")))?;
                    let mut d = ChildDemographics::new(child, age);
                    for extra in f {
                        if extra == "!age_out_of_range" {
                            continue;
                        }
                        let (k, v) = extra
                            .split_once('=')
                            .ok_or_else(|| err(format!("expected key=value, got `{extra}`")))?;
                        d.extra.push((k.to_string(), v.to_string()));
                    }
                    demographics.push(d);
                }
                "stage" => {
                    let stage: ProtocolStage = f.next().unwrap_or("").parse().map_err(err)?;
                    let enter = f
                        .next()
                        .and_then(|s| s.parse().ok())
                        .map(Timestamp)
                        .ok_or_else(|| err("bad stage enter stamp".into()))?;
                    let exit = match f.next() {
                        Some("-") => None,
                        Some(s) => Some(Timestamp(
                            s.parse().map_err(|e| err(format!("stage exit: {e}")))?,
                        )),
                        None => return Err(err("missing stage exit".into())),
                    };
                    stages.push(StageEntry { stage, enter, exit });
                }
                other => return Err(err(format!("unknown key `{other}`"))),
            }
        }
        let missing = |what: &str| SessionError::Parse {
            line: 0,
            message: format!("missing `{what}`"),
        };
        Ok(SessionRecord {
            id: id.ok_or_else(|| missing("session"))?,
            condition: condition.ok_or_else(|| missing("condition"))?,
            demographics,
            stages,
            bag_path: rec_bag,
        })
    }
}

/// Side effects the host must carry out, in order, after a stage change.
#[derive(Clone, Debug, PartialEq)]
pub enum SessionEffect {
    ResetGame,
    SetMode(GameMode),
    StartRecording,
    StopRecording,
    Announce(StageChange),
}

/// Single-writer protocol state machine. `advance` is the only way the
/// stage changes; the free-play cap is enforced by `tick`.
#[derive(Debug, Default)]
pub struct SessionManager {
    active: Option<SessionRecord>,
    finished: Vec<SessionRecord>,
    counters: BTreeMap<String, u32>,
}

impl SessionManager {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn current(&self) -> Option<&SessionRecord> {
        self.active.as_ref()
    }

    pub fn finished(&self) -> &[SessionRecord] {
        &self.finished
    }

    pub fn set_bag_path(&mut self, path: PathBuf) {
        if let Some(s) = self.active.as_mut() {
            s.bag_path = Some(path);
        }
    }

    /// Opens a session in `greetings`. Ids are the UTC date plus a per-day
    /// counter.
    pub fn start(
        &mut self,
        condition: Condition,
        wall: DateTime<Utc>,
        now: Timestamp,
    ) -> Result<Vec<SessionEffect>, SessionError> {
        if let Some(s) = &self.active {
            return Err(SessionError::SessionActive(s.id.clone()));
        }
        let day = wall.format("%Y%m%d").to_string();
        let counter = self.counters.entry(day.clone()).or_insert(0);
        *counter += 1;
        let id = format!("{day}-{counter:03}");
        self.active = Some(SessionRecord {
            id: id.clone(),
            condition,
            demographics: Vec::new(),
            stages: vec![StageEntry {
                stage: ProtocolStage::Greetings,
                enter: now,
                exit: None,
            }],
            bag_path: None,
        });
        Ok(vec![
            SessionEffect::ResetGame,
            SessionEffect::Announce(StageChange {
                session_id: id,
                condition,
                from: None,
                to: ProtocolStage::Greetings,
                stamp: now,
            }),
        ])
    }

    pub fn advance(
        &mut self,
        to: ProtocolStage,
        now: Timestamp,
    ) -> Result<Vec<SessionEffect>, SessionError> {
        let session = self.active.as_mut().ok_or(SessionError::NoActiveSession)?;
        let from = session.current_stage();
        if from.successor() != Some(to) {
            return Err(SessionError::IllegalTransition { from, to });
        }
        let last = session.stages.last_mut().expect("sessions start with a stage");
        let now = now.max(last.enter);
        last.exit = Some(now);
        session.stages.push(StageEntry {
            stage: to,
            enter: now,
            exit: None,
        });
        let announce = SessionEffect::Announce(StageChange {
            session_id: session.id.clone(),
            condition: session.condition,
            from: Some(from),
            to,
            stamp: now,
        });
        let effects = match to {
            ProtocolStage::Greetings => vec![announce],
            ProtocolStage::Tutorial => vec![SessionEffect::SetMode(GameMode::Tutorial), announce],
            ProtocolStage::Freeplay => vec![
                SessionEffect::SetMode(GameMode::Freeplay),
                SessionEffect::StartRecording,
                announce,
            ],
            ProtocolStage::Debriefing => vec![announce, SessionEffect::StopRecording],
            ProtocolStage::Done => {
                let mut s = self.active.take().expect("checked above");
                if let Some(last) = s.stages.last_mut() {
                    last.exit = Some(now);
                }
                self.finished.push(s);
                vec![announce, SessionEffect::ResetGame]
            }
        };
        Ok(effects)
    }

    /// Timer hook: ends free play once the cap has elapsed.
    pub fn tick(&mut self, now: Timestamp) -> Option<Vec<SessionEffect>> {
        let s = self.active.as_ref()?;
        let entry = s.stages.last()?;
        if entry.stage == ProtocolStage::Freeplay && now.saturating_sub(entry.enter) >= FREEPLAY_CAP {
            return self.advance(ProtocolStage::Debriefing, now).ok();
        }
        None
    }

    /// Stores demographics; only allowed while greeting the children.
    pub fn register_demographics(
        &mut self,
        entries: Vec<ChildDemographics>,
    ) -> Result<Vec<ChildDemographics>, SessionError> {
        let session = self.active.as_mut().ok_or(SessionError::NoActiveSession)?;
        let actual = session.current_stage();
        if actual != ProtocolStage::Greetings {
            return Err(SessionError::WrongStage {
                expected: ProtocolStage::Greetings,
                actual,
            });
        }
        let entries: Vec<ChildDemographics> = entries
            .into_iter()
            .map(|mut d| {
                d.age_out_of_range = !EXPECTED_AGES.contains(&d.age);
                d
            })
            .collect();
        session.demographics.extend(entries.iter().cloned());
        Ok(entries)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModuleStatus {
    pub name: String,
    pub running: bool,
    pub heartbeat_age_us: u64,
    pub epoch: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HealthReport {
    pub stamp: Timestamp,
    pub modules: Vec<ModuleStatus>,
}

impl HealthReport {
    pub fn all_running(&self) -> bool {
        self.modules.iter().all(|m| m.running)
    }
}

#[derive(Debug, Clone, Copy)]
struct ModuleHealth {
    last_heartbeat: Timestamp,
    epoch: u32,
}

/// Tracks heartbeats of the software modules a session depends on.
#[derive(Debug, Default)]
pub struct HealthMonitor {
    modules: BTreeMap<String, ModuleHealth>,
}

impl HealthMonitor {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn heartbeat(&mut self, module: &str, now: Timestamp) {
        self.modules
            .entry(module.to_string())
            .and_modify(|m| m.last_heartbeat = m.last_heartbeat.max(now))
            .or_insert(ModuleHealth {
                last_heartbeat: now,
                epoch: 0,
            });
    }

    /// Records a restart of `module` and returns its new epoch.
    pub fn restart(&mut self, module: &str, now: Timestamp) -> u32 {
        let m = self.modules.entry(module.to_string()).or_insert(ModuleHealth {
            last_heartbeat: now,
            epoch: 0,
        });
        m.epoch += 1;
        m.last_heartbeat = now;
        m.epoch
    }

    pub fn report(&self, now: Timestamp) -> HealthReport {
        HealthReport {
            stamp: now,
            modules: self
                .modules
                .iter()
                .map(|(name, m)| {
                    let age = now.saturating_sub(m.last_heartbeat);
                    ModuleStatus {
                        name: name.clone(),
                        running: age <= HEARTBEAT_STALE_AFTER,
                        heartbeat_age_us: age.as_micros() as u64,
                        epoch: m.epoch,
                    }
                })
                .collect(),
        }
    }
}
