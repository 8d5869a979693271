//! Scripted sessions: a plain-text stand-in for live children and wizard.
//!
//! ```text
//! # comment
//! condition child_robot          directives (no time) come first
//! date 2026-03-02
//! child purple 6 school=A        demographics, registered while greeting
//! policy asocial 7               or `policy none`
//!
//! 0.0   calibrate 0 0 0 0  0.1 0 0.1 0  0 0.1 0 0.1
//! 1.5   touch 1 down 0.10 0.05 purple
//! 2.0   touch 1 move 0.12 0.06 purple
//! 2.5   touch 1 up 0.15 0.08 purple
//! 3.0   tool yellow draw black 0.01   or `tool yellow drag`
//! 4.0   robot move zebra 0.50 0.20
//! 5.0   robot say hello there
//! 5.5   robot gaze child purple       also `item ID` or `screen X Y`
//! 6.0   robot point 0.3 0.2
//! 7.0   annotate alice purple solitary 2.0 7.0
//! 8.0   blob audio 256
//! 9.0   stage debriefing
//! 600   end
//! ```
//!
//! Times are seconds and must not decrease. Without any `stage` lines the
//! session goes straight to free play at time 0.

use std::path::Path;

use chrono::{DateTime, NaiveDate, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::annotation::{AnnotationInterval, Child, Construct};
use crate::bus::message::PlanRequest;
use crate::engine::{Colour, Scene, Tool, ToolSelect, TouchEvent, TouchPhase, TouchSource};
use crate::frames::Point2;
use crate::robot::{AsocialPolicy, RobotError, Correspondence, GazeTarget, WozCommand};
use crate::runtime::{RecordTarget, RecordingSummary, RuntimeError, Sandbox, SharedBuffer};
use crate::session::{ChildDemographics, Condition, ProtocolStage, SessionRecord};
use crate::time::Timestamp;

#[derive(Debug, Error, PartialEq)]
#[error("script line {line}: {message}")]
pub struct ScriptParseError {
    pub line: usize,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq)]
pub enum PolicyChoice {
    None,
    Asocial { seed: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub enum Command {
    Touch(TouchEvent),
    Tool(ToolSelect),
    Woz(WozCommand),
    Plan(PlanRequest),
    Calibrate(Vec<Correspondence>),
    Annotate(AnnotationInterval),
    Blob { topic: String, len: usize },
    Stage(ProtocolStage),
    End,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimedCommand {
    pub stamp: Timestamp,
    pub command: Command,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScriptedSession {
    pub condition: Condition,
    pub date: NaiveDate,
    pub children: Vec<ChildDemographics>,
    pub policy: PolicyChoice,
    pub commands: Vec<TimedCommand>,
}

impl Default for ScriptedSession {
    fn default() -> Self {
        ScriptedSession {
            condition: Condition::ChildChild,
            date: NaiveDate::from_ymd_opt(2026, 1, 1).expect("valid date"),
            children: Vec::new(),
            policy: PolicyChoice::None,
            commands: Vec::new(),
        }
    }
}

fn parse_num<T: std::str::FromStr>(tok: Option<&str>, what: &str) -> Result<T, String> {
    let tok = tok.ok_or_else(|| format!("missing {what}"))?;
    tok.parse().map_err(|_| format!("bad {what} `{tok}`"))
}

fn parse_word<T: std::str::FromStr>(tok: Option<&str>, what: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    let tok = tok.ok_or_else(|| format!("missing {what}"))?;
    tok.parse().map_err(|e| format!("bad {what} `{tok}`: {e}"))
}

fn point(toks: &mut std::str::SplitWhitespace<'_>) -> Result<Point2, String> {
    let x: f64 = parse_num(toks.next(), "x")?;
    let y: f64 = parse_num(toks.next(), "y")?;
    if !x.is_finite() || !y.is_finite() {
        return Err("coordinates must be finite".into());
    }
    Ok(Point2::new(x, y))
}

fn child(tok: Option<&str>) -> Result<Child, String> {
    match tok {
        Some("purple") => Ok(Child::Purple),
        Some("yellow") => Ok(Child::Yellow),
        Some(o) => Err(format!("bad child `{o}`")),
        None => Err("missing child".into()),
    }
}

fn construct(tok: Option<&str>) -> Result<Construct, String> {
    parse_word(tok, "construct")
}

impl ScriptedSession {
    pub fn parse(text: &str) -> Result<Self, ScriptParseError> {
        let mut s = ScriptedSession::default();
        let mut last = Timestamp::ZERO;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| ScriptParseError { line: i + 1, message };
            let mut toks = line.split_whitespace();
            let head = toks.next().expect("non-empty line");
            match head.parse::<f64>() {
                Ok(t) => {
                    if !t.is_finite() || t < 0.0 {
                        return Err(err(format!("bad time `{head}`")));
                    }
                    let stamp = Timestamp::from_secs_f64(t);
                    if stamp < last {
                        return Err(err(format!("time {head} is before the previous command")));
                    }
                    last = stamp;
                    let command = Self::command(stamp, &mut toks).map_err(err)?;
                    if let Some(extra) = toks.next() {
                        if !matches!(command, Command::Woz(WozCommand::Say { .. })) {
                            return Err(err(format!("unexpected `{extra}`")));
                        }
                    }
                    s.commands.push(TimedCommand { stamp, command });
                }
                Err(_) => {
                    if !s.commands.is_empty() {
                        return Err(err(format!("directive `{head}` after timed commands")));
                    }
                    s.directive(head, &mut toks).map_err(err)?;
                }
            }
        }
        Ok(s)
    }

    fn directive(&mut self, head: &str, toks: &mut std::str::SplitWhitespace<'_>) -> Result<(), String> {
        match head {
            "condition" => self.condition = parse_word(toks.next(), "condition")?,
            "date" => {
                let d = toks.next().ok_or("missing date")?;
                self.date = NaiveDate::parse_from_str(d, "%Y-%m-%d").map_err(|e| format!("bad date `{d}`: {e}"))?;
            }
            "child" => {
                let c = child(toks.next())?;
                let age: u8 = parse_num(toks.next(), "age")?;
                let mut d = ChildDemographics::new(c, age);
                for kv in toks.by_ref() {
                    let (k, v) = kv.split_once('=').ok_or_else(|| format!("expected key=value, got `{kv}`"))?;
                    d.extra.push((k.to_string(), v.to_string()));
                }
                self.children.push(d);
            }
            "policy" => {
                self.policy = match toks.next() {
                    Some("none") => PolicyChoice::None,
                    Some("asocial") => PolicyChoice::Asocial {
                        seed: parse_num(toks.next(), "seed")?,
                    },
                    other => return Err(format!("unknown policy {other:?}")),
                }
            }
            other => return Err(format!("unknown directive `{other}`")),
        }
        if let Some(extra) = toks.next() {
            return Err(format!("unexpected `{extra}`"));
        }
        Ok(())
    }

    fn command(stamp: Timestamp, toks: &mut std::str::SplitWhitespace<'_>) -> Result<Command, String> {
        let verb = toks.next().ok_or("missing command")?;
        Ok(match verb {
            "touch" => {
                let id: u32 = parse_num(toks.next(), "touch id")?;
                let phase = match toks.next() {
                    Some("down") => TouchPhase::Down,
                    Some("move") => TouchPhase::Move,
                    Some("up") => TouchPhase::Up,
                    other => return Err(format!("bad phase {other:?}")),
                };
                let p = point(toks)?;
                let source: TouchSource = parse_word(toks.next(), "source")?;
                Command::Touch(TouchEvent::new(id, phase, p.x, p.y, source, stamp))
            }
            "tool" => {
                let source: TouchSource = parse_word(toks.next(), "source")?;
                let tool = match toks.next() {
                    Some("drag") => Tool::Drag,
                    Some("draw") => {
                        let colour: Colour = parse_word(toks.next(), "colour")?;
                        let width: f64 = parse_num(toks.next(), "width")?;
                        if !(width > 0.0 && width.is_finite()) {
                            return Err("stroke width must be positive".into());
                        }
                        Tool::Draw { colour, width }
                    }
                    other => return Err(format!("bad tool {other:?}")),
                };
                Command::Tool(ToolSelect { source, tool })
            }
            "robot" => match toks.next() {
                Some("move") => {
                    let item_id = toks.next().ok_or("missing item")?.to_string();
                    Command::Woz(WozCommand::Drag { item_id, goal: point(toks)? })
                }
                Some("say") => {
                    let text: Vec<&str> = toks.by_ref().collect();
                    if text.is_empty() {
                        return Err("nothing to say".into());
                    }
                    Command::Woz(WozCommand::Say { text: text.join(" ") })
                }
                Some("gaze") => {
                    let target = match toks.next() {
                        Some("child") => GazeTarget::Child(child(toks.next())?),
                        Some("item") => GazeTarget::Item(toks.next().ok_or("missing item")?.to_string()),
                        Some("screen") => GazeTarget::Screen(point(toks)?),
                        other => return Err(format!("bad gaze target {other:?}")),
                    };
                    Command::Woz(WozCommand::GazeAt { target })
                }
                Some("point") => Command::Woz(WozCommand::PointAt { target: point(toks)? }),
                other => return Err(format!("bad robot command {other:?}")),
            },
            "plan" => {
                let item_id = toks.next().ok_or("missing item")?.to_string();
                Command::Plan(PlanRequest { item_id, goal: point(toks)? })
            }
            "calibrate" => {
                let nums: Vec<f64> = toks
                    .by_ref()
                    .map(|t| t.parse().map_err(|_| format!("bad number `{t}`")))
                    .collect::<Result<_, _>>()?;
                if nums.is_empty() || !nums.len().is_multiple_of(4) {
                    return Err("calibrate takes groups of: screen-x screen-y robot-x robot-y".into());
                }
                Command::Calibrate(
                    nums.chunks(4)
                        .map(|c| Correspondence {
                            screen: Point2::new(c[0], c[1]),
                            robot: Point2::new(c[2], c[3]),
                        })
                        .collect(),
                )
            }
            "annotate" => {
                let coder = toks.next().ok_or("missing coder")?.to_string();
                let ch = child(toks.next())?;
                let c = construct(toks.next())?;
                let start: f64 = parse_num(toks.next(), "start")?;
                let end: f64 = parse_num(toks.next(), "end")?;
                Command::Annotate(AnnotationInterval::new(
                    &coder,
                    ch,
                    c,
                    Timestamp::from_secs_f64(start),
                    Timestamp::from_secs_f64(end),
                ))
            }
            "blob" => {
                let stream = toks.next().ok_or("missing stream")?;
                let topic = format!("blob/{stream}");
                if !crate::bus::STANDARD_TOPICS.iter().any(|(t, _)| *t == topic) {
                    return Err(format!("unknown blob stream `{stream}`"));
                }
                Command::Blob { topic, len: parse_num(toks.next(), "length")? }
            }
            "stage" => Command::Stage(parse_word(toks.next(), "stage")?),
            "end" => Command::End,
            other => return Err(format!("unknown command `{other}`")),
        })
    }

    pub fn end_time(&self) -> Timestamp {
        self.commands.last().map(|c| c.stamp).unwrap_or_default()
    }

    fn wall(&self) -> DateTime<Utc> {
        self.date.and_hms_opt(0, 0, 0).expect("midnight exists").and_utc()
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Parse(#[from] ScriptParseError),
    #[error("cannot write {0}: {1}")]
    Io(std::path::PathBuf, #[source] std::io::Error),
    #[error("at {stamp}: {source}")]
    Runtime {
        stamp: Timestamp,
        #[source]
        source: RuntimeError,
    },
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub session: SessionRecord,
    pub recording: Option<RecordingSummary>,
    /// Game state hash after the last command, before the session closed.
    pub final_hash: u64,
    /// Robot commands that failed (unreachable goal, busy item...).
    pub robot_errors: Vec<(Timestamp, RobotError)>,
}

/// Runs a script against a fresh headless sandbox, recording free play to
/// `target`. Moves still in progress at the last command are allowed to
/// finish before the session is closed.
pub fn run_script(
    script: &ScriptedSession,
    scene: Scene,
    target: RecordTarget,
) -> Result<RunOutcome, RunError> {
    let mut sb = Sandbox::new(scene);
    sb.set_record_target(target);
    if let PolicyChoice::Asocial { seed } = script.policy {
        sb.set_policy(Some(Box::new(AsocialPolicy::new(seed))));
    }
    let at = |stamp| move |source| RunError::Runtime { stamp, source };
    let zero = Timestamp::ZERO;
    sb.start_session(script.condition, script.wall(), zero).map_err(at(zero))?;
    if !script.children.is_empty() {
        sb.register_demographics(script.children.clone(), zero).map_err(at(zero))?;
    }
    let staged = script.commands.iter().any(|c| matches!(c.command, Command::Stage(_)));
    if !staged {
        sb.advance_stage(ProtocolStage::Tutorial, zero).map_err(at(zero))?;
        sb.advance_stage(ProtocolStage::Freeplay, zero).map_err(at(zero))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut robot_errors = Vec::new();
    for c in &script.commands {
        let t = c.stamp;
        let r = match &c.command {
            Command::Touch(ev) => sb.touch(*ev),
            Command::Tool(sel) => sb.select_tool(*sel, t),
            Command::Woz(cmd) => sb.woz(cmd.clone(), t),
            Command::Plan(req) => sb.plan_request(req.clone(), t),
            Command::Calibrate(pairs) => sb.calibrate(pairs.clone(), t),
            Command::Annotate(iv) => sb.annotate(iv.clone(), t),
            Command::Blob { topic, len } => {
                let bytes = (0..*len).map(|_| rng.gen()).collect();
                sb.blob(topic, bytes, t)
            }
            Command::Stage(s) => sb.advance_stage(*s, t),
            Command::End => sb.advance_to(t),
        };
        match r {
            // A command the robot cannot carry out is logged, as it would be
            // live, and the session goes on.
            Err(RuntimeError::Robot(e)) => robot_errors.push((t, e)),
            other => other.map_err(at(t))?,
        }
    }
    robot_errors.extend(sb.robot_errors().iter().cloned());
    robot_errors.sort_by_key(|(t, _)| *t);
    let mut end = script.end_time().max(sb.now());
    while let Some(due) = sb.robot().next_due() {
        end = end.max(due);
        sb.advance_to(due).map_err(at(due))?;
    }
    sb.advance_to(end).map_err(at(end))?;
    let final_hash = sb.game().snapshot_hash();
    let session = sb.finish_session(end).map_err(at(end))?.expect("a session was started");
    Ok(RunOutcome {
        session,
        recording: sb.recordings().last().cloned(),
        final_hash,
        robot_errors,
    })
}

/// Runs a script and returns the recorded bag bytes alongside the outcome.
pub fn run_script_to_memory(
    script: &ScriptedSession,
    scene: Scene,
) -> Result<(RunOutcome, Vec<u8>), RunError> {
    let buf = SharedBuffer::default();
    let out = run_script(script, scene, RecordTarget::Memory(buf.clone()))?;
    Ok((out, buf.bytes()))
}

/// Session record files sit next to their bag with this extension.
pub const SESSION_EXTENSION: &str = "session";

/// Runs a script and writes the bag plus a session record file next to it.
pub fn run_script_to_file(
    script: &ScriptedSession,
    scene: Scene,
    bag: &Path,
) -> Result<RunOutcome, RunError> {
    let out = run_script(script, scene, RecordTarget::File(bag.to_path_buf()))?;
    let record = bag.with_extension(SESSION_EXTENSION);
    std::fs::write(&record, out.session.to_text()).map_err(|e| RunError::Io(record, e))?;
    Ok(out)
}
