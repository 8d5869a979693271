use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::annotation::AnnotationInterval;
use crate::engine::{
    BackgroundDelta, EngineWarning, GameDelta, GameMode, ItemDelta, StrokeDelta, ToolSelect,
    TouchEvent,
};
use crate::frames::Point2;
use crate::planner::MotionSchedule;
use crate::robot::{Calibration, Correspondence, PointerPose, RobotAction, SocialFeatures, WozCommand};
use crate::session::{ChildDemographics, HealthReport, StageChange};
use crate::time::Timestamp;
use crate::zones::{ProximityEvent, ZoneMap, ZoneTransition};

pub const GAME_TOUCHES: &str = "game/touches";
pub const GAME_TOOLS: &str = "game/tools";
pub const GAME_ITEMS: &str = "game/items";
pub const GAME_STROKES: &str = "game/strokes";
pub const GAME_BACKGROUND: &str = "game/background";
pub const GAME_MODE: &str = "game/mode";
pub const GAME_WARNINGS: &str = "game/warnings";
pub const ANALYSIS_ZONES: &str = "analysis/zones";
pub const ANALYSIS_TRANSITIONS: &str = "analysis/transitions";
pub const ANALYSIS_PROXIMITY: &str = "analysis/proximity";
pub const ROBOT_PLAN_REQUEST: &str = "robot/plan_request";
pub const ROBOT_SCHEDULE: &str = "robot/schedule";
pub const ROBOT_POINTER: &str = "robot/pointer";
pub const ROBOT_SOCIAL: &str = "robot/social";
pub const ROBOT_ACTIONS: &str = "robot/actions";
pub const ROBOT_FIDUCIALS: &str = "robot/fiducials";
pub const ROBOT_CALIBRATION: &str = "robot/calibration";
pub const WOZ_COMMAND: &str = "woz/command";
pub const SESSION_STAGE: &str = "session/stage";
pub const SESSION_DEMOGRAPHICS: &str = "session/demographics";
pub const SESSION_HEALTH: &str = "session/health";
pub const ANNOT_ADD: &str = "annot/add";
pub const ANNOT_TRACK: &str = "annot/track";
pub const PERCEPTION_SOCIAL: &str = "perception/social";
pub const BLOB_CAMERA_ENV: &str = "blob/camera_env";
pub const BLOB_CAMERA_PURPLE: &str = "blob/camera_purple";
pub const BLOB_CAMERA_YELLOW: &str = "blob/camera_yellow";
pub const BLOB_AUDIO: &str = "blob/audio";

/// Every standard topic with its schema, in declaration order.
pub const STANDARD_TOPICS: &[(&str, Schema)] = &[
    (GAME_TOUCHES, Schema::Touch),
    (GAME_TOOLS, Schema::ToolSelect),
    (GAME_ITEMS, Schema::Item),
    (GAME_STROKES, Schema::Stroke),
    (GAME_BACKGROUND, Schema::Background),
    (GAME_MODE, Schema::Mode),
    (GAME_WARNINGS, Schema::Warning),
    (ANALYSIS_ZONES, Schema::Zones),
    (ANALYSIS_TRANSITIONS, Schema::Transition),
    (ANALYSIS_PROXIMITY, Schema::Proximity),
    (ROBOT_PLAN_REQUEST, Schema::PlanRequest),
    (ROBOT_SCHEDULE, Schema::Schedule),
    (ROBOT_POINTER, Schema::Pointer),
    (ROBOT_SOCIAL, Schema::Action),
    (ROBOT_ACTIONS, Schema::Action),
    (ROBOT_FIDUCIALS, Schema::Fiducials),
    (ROBOT_CALIBRATION, Schema::Calibration),
    (WOZ_COMMAND, Schema::Woz),
    (SESSION_STAGE, Schema::Stage),
    (SESSION_DEMOGRAPHICS, Schema::Demographics),
    (SESSION_HEALTH, Schema::Health),
    (ANNOT_ADD, Schema::Annotation),
    (ANNOT_TRACK, Schema::Track),
    (PERCEPTION_SOCIAL, Schema::Social),
    (BLOB_CAMERA_ENV, Schema::Blob),
    (BLOB_CAMERA_PURPLE, Schema::Blob),
    (BLOB_CAMERA_YELLOW, Schema::Blob),
    (BLOB_AUDIO, Schema::Blob),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanRequest {
    pub item_id: String,
    pub goal: Point2,
}

/// The union of everything that travels on the bus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Payload {
    Touch(TouchEvent),
    ToolSelect(ToolSelect),
    Item(ItemDelta),
    Stroke(StrokeDelta),
    Background(BackgroundDelta),
    Mode(GameMode),
    Warning(EngineWarning),
    Zones(ZoneMap),
    Transition(ZoneTransition),
    Proximity(ProximityEvent),
    PlanRequest(PlanRequest),
    Schedule(MotionSchedule),
    Pointer(PointerPose),
    Action(RobotAction),
    Fiducials(Vec<Correspondence>),
    Calibration(Calibration),
    Woz(WozCommand),
    Stage(StageChange),
    Demographics(ChildDemographics),
    Health(HealthReport),
    Annotation(AnnotationInterval),
    Track(Vec<AnnotationInterval>),
    Social(SocialFeatures),
    Blob(Vec<u8>),
}

/// Payload type a topic is declared with.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schema {
    Touch,
    ToolSelect,
    Item,
    Stroke,
    Background,
    Mode,
    Warning,
    Zones,
    Transition,
    Proximity,
    PlanRequest,
    Schedule,
    Pointer,
    Action,
    Fiducials,
    Calibration,
    Woz,
    Stage,
    Demographics,
    Health,
    Annotation,
    Track,
    Social,
    Blob,
}

impl Schema {
    pub const ALL: [Schema; 24] = [
        Schema::Touch,
        Schema::ToolSelect,
        Schema::Item,
        Schema::Stroke,
        Schema::Background,
        Schema::Mode,
        Schema::Warning,
        Schema::Zones,
        Schema::Transition,
        Schema::Proximity,
        Schema::PlanRequest,
        Schema::Schedule,
        Schema::Pointer,
        Schema::Action,
        Schema::Fiducials,
        Schema::Calibration,
        Schema::Woz,
        Schema::Stage,
        Schema::Demographics,
        Schema::Health,
        Schema::Annotation,
        Schema::Track,
        Schema::Social,
        Schema::Blob,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Schema::Touch => "touch",
            Schema::ToolSelect => "tool_select",
            Schema::Item => "item",
            Schema::Stroke => "stroke",
            Schema::Background => "background",
            Schema::Mode => "mode",
            Schema::Warning => "warning",
            Schema::Zones => "zones",
            Schema::Transition => "transition",
            Schema::Proximity => "proximity",
            Schema::PlanRequest => "plan_request",
            Schema::Schedule => "schedule",
            Schema::Pointer => "pointer",
            Schema::Action => "action",
            Schema::Fiducials => "fiducials",
            Schema::Calibration => "calibration",
            Schema::Woz => "woz",
            Schema::Stage => "stage",
            Schema::Demographics => "demographics",
            Schema::Health => "health",
            Schema::Annotation => "annotation",
            Schema::Track => "track",
            Schema::Social => "social",
            Schema::Blob => "blob",
        }
    }

    /// Topics whose events shape replayed state. A seek applies all of
    /// their events up to the seek point; the rest are skipped.
    pub fn is_state_bearing(self) -> bool {
        matches!(
            self,
            Schema::ToolSelect
                | Schema::Item
                | Schema::Stroke
                | Schema::Background
                | Schema::Mode
                | Schema::Zones
                | Schema::Calibration
                | Schema::Stage
                | Schema::Demographics
                | Schema::Annotation
                | Schema::Track
        )
    }
}

impl fmt::Display for Schema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Schema {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Schema::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown schema `{s}`"))
    }
}

impl Payload {
    pub fn schema(&self) -> Schema {
        match self {
            Payload::Touch(_) => Schema::Touch,
            Payload::ToolSelect(_) => Schema::ToolSelect,
            Payload::Item(_) => Schema::Item,
            Payload::Stroke(_) => Schema::Stroke,
            Payload::Background(_) => Schema::Background,
            Payload::Mode(_) => Schema::Mode,
            Payload::Warning(_) => Schema::Warning,
            Payload::Zones(_) => Schema::Zones,
            Payload::Transition(_) => Schema::Transition,
            Payload::Proximity(_) => Schema::Proximity,
            Payload::PlanRequest(_) => Schema::PlanRequest,
            Payload::Schedule(_) => Schema::Schedule,
            Payload::Pointer(_) => Schema::Pointer,
            Payload::Action(_) => Schema::Action,
            Payload::Fiducials(_) => Schema::Fiducials,
            Payload::Calibration(_) => Schema::Calibration,
            Payload::Woz(_) => Schema::Woz,
            Payload::Stage(_) => Schema::Stage,
            Payload::Demographics(_) => Schema::Demographics,
            Payload::Health(_) => Schema::Health,
            Payload::Annotation(_) => Schema::Annotation,
            Payload::Track(_) => Schema::Track,
            Payload::Social(_) => Schema::Social,
            Payload::Blob(_) => Schema::Blob,
        }
    }

    /// Game deltas travel on their own topic each.
    pub fn from_delta(delta: GameDelta) -> (&'static str, Payload) {
        match delta {
            GameDelta::Item(d) => (GAME_ITEMS, Payload::Item(d)),
            GameDelta::Stroke(d) => (GAME_STROKES, Payload::Stroke(d)),
            GameDelta::Background(d) => (GAME_BACKGROUND, Payload::Background(d)),
            GameDelta::Mode(m) => (GAME_MODE, Payload::Mode(m)),
            GameDelta::Warning(w) => (GAME_WARNINGS, Payload::Warning(w)),
        }
    }

    pub fn as_delta(&self) -> Option<GameDelta> {
        Some(match self {
            Payload::Item(d) => GameDelta::Item(d.clone()),
            Payload::Stroke(d) => GameDelta::Stroke(d.clone()),
            Payload::Background(d) => GameDelta::Background(d.clone()),
            Payload::Mode(m) => GameDelta::Mode(*m),
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub topic: String,
    pub stamp: Timestamp,
    pub seq: u32,
    pub payload: Payload,
}
