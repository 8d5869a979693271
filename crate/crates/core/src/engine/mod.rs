//! Authoritative game state: items, drawing layer and background.

mod hash;
pub mod raster;
pub mod scene;
mod state;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::frames::{Point2, Transform2D};
use crate::time::Timestamp;

pub use hash::{canonical_bytes, snapshot_hash};
pub use raster::{Colour, ColourRaster};
pub use scene::{Scene, SceneError, DEFAULT_SCENE};
pub use state::GameState;

/// Play area in metres; origin at the bottom-left corner of the screen.
pub const PLAY_WIDTH: f64 = 0.60;
pub const PLAY_HEIGHT: f64 = 0.33;
/// Inflation of an item footprint when testing whether a touch grabs it.
pub const CAPTURE_MARGIN: f64 = 0.005;

pub fn in_play_area(p: Point2) -> bool {
    (0.0..=PLAY_WIDTH).contains(&p.x) && (0.0..=PLAY_HEIGHT).contains(&p.y)
}

pub fn clamp_to_play_area(p: Point2) -> Point2 {
    Point2::new(p.x.clamp(0.0, PLAY_WIDTH), p.y.clamp(0.0, PLAY_HEIGHT))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemKind {
    Animal,
    Character,
    Object,
}

impl fmt::Display for ItemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ItemKind::Animal => "animal",
            ItemKind::Character => "character",
            ItemKind::Object => "object",
        })
    }
}

impl FromStr for ItemKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "animal" => Ok(ItemKind::Animal),
            "character" => Ok(ItemKind::Character),
            "object" => Ok(ItemKind::Object),
            other => Err(format!("unknown item kind `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub id: String,
    pub kind: ItemKind,
    /// Pose in the sandtray frame. Items are only ever translated.
    pub pose: Transform2D,
    /// Axis-aligned footprint (w, h) in metres, centred on the pose.
    pub footprint: (f64, f64),
    pub z_order: i32,
}

impl Item {
    pub fn centre(&self) -> Point2 {
        self.pose.translation
    }

    /// Whether `p` falls inside the footprint inflated by the capture margin.
    pub fn captures(&self, p: Point2) -> bool {
        let c = self.centre();
        (p.x - c.x).abs() <= self.footprint.0 / 2.0 + CAPTURE_MARGIN
            && (p.y - c.y).abs() <= self.footprint.1 / 2.0 + CAPTURE_MARGIN
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrokePoint {
    pub x: f64,
    pub y: f64,
    pub stamp: Timestamp,
}

impl StrokePoint {
    pub fn position(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stroke {
    pub colour: Colour,
    pub width: f64,
    pub points: Vec<StrokePoint>,
}

impl Stroke {
    pub fn polyline(&self) -> Vec<Point2> {
        self.points.iter().map(StrokePoint::position).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TouchPhase {
    Down,
    Move,
    Up,
}

impl FromStr for TouchPhase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "down" => Ok(TouchPhase::Down),
            "move" => Ok(TouchPhase::Move),
            "up" => Ok(TouchPhase::Up),
            other => Err(format!("unknown touch phase `{other}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TouchSource {
    ChildPurple,
    ChildYellow,
    Wizard,
    RobotFake,
}

impl fmt::Display for TouchSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TouchSource::ChildPurple => "child_purple",
            TouchSource::ChildYellow => "child_yellow",
            TouchSource::Wizard => "wizard",
            TouchSource::RobotFake => "robot_fake",
        })
    }
}

impl FromStr for TouchSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "child_purple" | "purple" => Ok(TouchSource::ChildPurple),
            "child_yellow" | "yellow" => Ok(TouchSource::ChildYellow),
            "wizard" => Ok(TouchSource::Wizard),
            "robot_fake" | "robot" => Ok(TouchSource::RobotFake),
            other => Err(format!("unknown touch source `{other}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TouchEvent {
    pub touch_id: u32,
    pub phase: TouchPhase,
    pub x: f64,
    pub y: f64,
    pub source: TouchSource,
    pub stamp: Timestamp,
}

impl TouchEvent {
    pub fn new(
        touch_id: u32,
        phase: TouchPhase,
        x: f64,
        y: f64,
        source: TouchSource,
        stamp: Timestamp,
    ) -> Self {
        TouchEvent {
            touch_id,
            phase,
            x,
            y,
            source,
            stamp,
        }
    }

    pub fn position(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }
}

/// What a touch from a given source does.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tool {
    Drag,
    Draw { colour: Colour, width: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToolSelect {
    pub source: TouchSource,
    pub tool: Tool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GameMode {
    #[default]
    Tutorial,
    Freeplay,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemDelta {
    /// Full item list; published on start of recording and on reset.
    Snapshot(Vec<Item>),
    Grab {
        item_id: String,
        touch_id: u32,
        source: TouchSource,
    },
    Pose {
        item_id: String,
        pose: Transform2D,
    },
    Release {
        item_id: String,
        touch_id: u32,
        source: TouchSource,
        from: Point2,
        to: Point2,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrokeDelta {
    Snapshot(Vec<Stroke>),
    Begin {
        touch_id: u32,
        colour: Colour,
        width: f64,
        point: StrokePoint,
    },
    Append {
        touch_id: u32,
        point: StrokePoint,
    },
    End {
        touch_id: u32,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackgroundDelta {
    Snapshot(ColourRaster),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EngineWarning {
    /// The touch was clamped into the play area.
    OutOfBounds { touch_id: u32, x: f64, y: f64 },
    /// The touch was ignored.
    PhaseViolation { touch_id: u32, phase: TouchPhase },
}

/// One state change produced by the engine.
#[derive(Clone, Debug, PartialEq)]
pub enum GameDelta {
    Item(ItemDelta),
    Stroke(StrokeDelta),
    Background(BackgroundDelta),
    Mode(GameMode),
    Warning(EngineWarning),
}
