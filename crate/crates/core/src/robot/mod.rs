//! Robot action layer: calibration of the screen↔robot transform, action
//! primitives, Wizard-of-Oz command intake and autonomous policies.
//!
//! Physical actuation is out of reach here: moves become a motion schedule
//! whose fake touches drive the game and whose pointer targets go out on
//! `robot/pointer`; social actions go out on `robot/social`.

mod calibration;
mod policy;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::Child;
use crate::engine::{in_play_area, GameState};
use crate::frames::Point2;
use crate::planner::{
    build_occupancy, plan, schedule_through, MotionSchedule, PlanError, ScheduleStep,
    DEFAULT_RESOLUTION, DEFAULT_SPEED, ROBOT_TOUCH_BASE,
};
use crate::time::Timestamp;

pub use calibration::{
    calibrate, fit_rigid_2d, Calibration, CalibrationError, Correspondence, MAX_RMS_RESIDUAL,
};
pub use policy::{AsocialPolicy, Policy, SocialFeatures, DEFAULT_PAUSE};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RobotError {
    #[error("robot is not calibrated")]
    NotCalibrated,
    #[error("item `{0}` already has an active schedule")]
    BusyItem(String),
    #[error("unknown item `{0}`")]
    UnknownItem(String),
    #[error("goal ({0}, {1}) is outside the play area")]
    GoalOutsidePlayArea(f64, f64),
    #[error(transparent)]
    Plan(#[from] PlanError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    MoveItem,
    PointAt,
    GazeAt,
    Say,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GazeTarget {
    Child(Child),
    Item(String),
    Screen(Point2),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RobotCommand {
    MoveItem { item_id: String, goal: Point2 },
    PointAt { target: Point2 },
    GazeAt { target: GazeTarget },
    Say { text: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionSource {
    Policy,
    Wizard,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotAction {
    pub command: RobotCommand,
    pub stamp: Timestamp,
    pub source: ActionSource,
}

impl RobotAction {
    pub fn kind(&self) -> ActionKind {
        match self.command {
            RobotCommand::MoveItem { .. } => ActionKind::MoveItem,
            RobotCommand::PointAt { .. } => ActionKind::PointAt,
            RobotCommand::GazeAt { .. } => ActionKind::GazeAt,
            RobotCommand::Say { .. } => ActionKind::Say,
        }
    }

    pub fn is_social(&self) -> bool {
        self.kind() != ActionKind::MoveItem
    }
}

/// Commands from the wizard's console. A drag is sent once, on release.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WozCommand {
    Drag { item_id: String, goal: Point2 },
    Say { text: String },
    GazeAt { target: GazeTarget },
    PointAt { target: Point2 },
}

/// Pointer target in the robot frame, as published on `robot/pointer`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointerPose {
    pub item_id: String,
    pub target: Point2,
    pub stamp: Timestamp,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Outcome {
    /// A move was planned; its steps are released by [`RobotController::pump`].
    Scheduled(MotionSchedule),
    /// A social action to publish on `robot/social`.
    Social(RobotAction),
}

#[derive(Debug, Clone)]
struct Running {
    schedule: MotionSchedule,
    next: usize,
}

/// Turns robot actions into motion schedules and releases their steps as
/// time passes. At most one schedule runs per item.
#[derive(Debug, Clone)]
pub struct RobotController {
    calibration: Option<Calibration>,
    resolution: f64,
    speed: f64,
    running: BTreeMap<String, Running>,
    next_touch: u32,
}

impl Default for RobotController {
    fn default() -> Self {
        Self::new()
    }
}

impl RobotController {
    pub fn new() -> Self {
        RobotController {
            calibration: None,
            resolution: DEFAULT_RESOLUTION,
            speed: DEFAULT_SPEED,
            running: BTreeMap::new(),
            next_touch: ROBOT_TOUCH_BASE,
        }
    }

    pub fn with_speed(mut self, speed: f64) -> Self {
        assert!(speed > 0.0, "speed must be positive");
        self.speed = speed;
        self
    }

    pub fn with_resolution(mut self, resolution: f64) -> Self {
        self.resolution = resolution;
        self
    }

    pub fn calibration(&self) -> Option<&Calibration> {
        self.calibration.as_ref()
    }

    /// Installs a calibration; invalid ones leave the robot uncalibrated.
    pub fn set_calibration(&mut self, c: Calibration) -> Result<(), CalibrationError> {
        if !c.is_valid() {
            return Err(CalibrationError::CalibrationRejected { rms: c.rms_residual });
        }
        self.calibration = Some(c);
        Ok(())
    }

    pub fn calibrate_from(&mut self, pairs: &[Correspondence]) -> Result<Calibration, CalibrationError> {
        let c = calibrate(pairs)?;
        self.calibration = Some(c);
        Ok(c)
    }

    pub fn is_busy(&self, item_id: &str) -> bool {
        self.running.contains_key(item_id)
    }

    pub fn has_pending(&self) -> bool {
        !self.running.is_empty()
    }

    /// Stamp of the next step due, if any.
    pub fn next_due(&self) -> Option<Timestamp> {
        self.running
            .values()
            .map(|r| r.schedule.steps[r.next].stamp)
            .min()
    }

    /// Wraps a wizard command as an action.
    pub fn woz_apply(
        &self,
        state: &GameState,
        cmd: WozCommand,
        now: Timestamp,
    ) -> Result<RobotAction, RobotError> {
        let command = match cmd {
            WozCommand::Drag { item_id, goal } => {
                if state.item(&item_id).is_none() {
                    return Err(RobotError::UnknownItem(item_id));
                }
                RobotCommand::MoveItem { item_id, goal }
            }
            WozCommand::Say { text } => RobotCommand::Say { text },
            WozCommand::GazeAt { target } => {
                if let GazeTarget::Item(id) = &target {
                    if state.item(id).is_none() {
                        return Err(RobotError::UnknownItem(id.clone()));
                    }
                }
                RobotCommand::GazeAt { target }
            }
            WozCommand::PointAt { target } => RobotCommand::PointAt { target },
        };
        Ok(RobotAction {
            command,
            stamp: now,
            source: ActionSource::Wizard,
        })
    }

    /// Plans a move or passes a social action through.
    pub fn execute(
        &mut self,
        state: &GameState,
        action: &RobotAction,
        now: Timestamp,
    ) -> Result<Outcome, RobotError> {
        match &action.command {
            RobotCommand::MoveItem { item_id, goal } => {
                let calibration = self.calibration.ok_or(RobotError::NotCalibrated)?;
                let schedule = self.plan_move(state, item_id, *goal, &calibration, now)?;
                self.running.insert(
                    item_id.clone(),
                    Running {
                        schedule: schedule.clone(),
                        next: 0,
                    },
                );
                Ok(Outcome::Scheduled(schedule))
            }
            RobotCommand::PointAt { .. } => {
                if self.calibration.is_none() {
                    return Err(RobotError::NotCalibrated);
                }
                Ok(Outcome::Social(action.clone()))
            }
            _ => Ok(Outcome::Social(action.clone())),
        }
    }

    fn plan_move(
        &mut self,
        state: &GameState,
        item_id: &str,
        goal: Point2,
        calibration: &Calibration,
        now: Timestamp,
    ) -> Result<MotionSchedule, RobotError> {
        if !in_play_area(goal) {
            return Err(RobotError::GoalOutsidePlayArea(goal.x, goal.y));
        }
        let item = state
            .item(item_id)
            .ok_or_else(|| RobotError::UnknownItem(item_id.to_string()))?;
        if self.is_busy(item_id) {
            return Err(RobotError::BusyItem(item_id.to_string()));
        }
        let mut grid = build_occupancy(state.items(), item_id, self.resolution)?;
        let start_cell = grid.cell_of(item.centre());
        if grid.is_occupied(start_cell) {
            grid.force_clear_around(start_cell);
        }
        let goal_cell = grid.cell_of(goal);
        let path = plan(&grid, start_cell, goal_cell)?;
        let mut waypoints = vec![item.centre()];
        waypoints.extend(path.centres().into_iter().skip(1));
        if path.cells.len() == 1 {
            waypoints.push(grid.cell_centre(goal_cell));
        }
        let touch_id = self.next_touch;
        self.next_touch = self.next_touch.wrapping_add(1).max(ROBOT_TOUCH_BASE);
        Ok(schedule_through(
            item_id,
            &waypoints,
            self.speed,
            &calibration.screen_to_robot,
            now,
            touch_id,
        ))
    }

    /// Releases every step due at or before `now`, in stamp order, and
    /// retires finished schedules.
    pub fn pump(&mut self, now: Timestamp) -> Vec<(String, ScheduleStep)> {
        let mut due = Vec::new();
        for (item, r) in self.running.iter_mut() {
            while r.next < r.schedule.steps.len() && r.schedule.steps[r.next].stamp <= now {
                due.push((item.clone(), r.schedule.steps[r.next].clone()));
                r.next += 1;
            }
        }
        self.running.retain(|_, r| r.next < r.schedule.steps.len());
        due.sort_by(|a, b| a.1.stamp.cmp(&b.1.stamp).then_with(|| a.0.cmp(&b.0)));
        due
    }

    /// Drops every running schedule, e.g. when the game is reset.
    pub fn cancel_all(&mut self) {
        self.running.clear();
    }
}
