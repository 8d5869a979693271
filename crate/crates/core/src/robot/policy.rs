use std::collections::BTreeSet;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ActionKind, ActionSource, GazeTarget, RobotAction, RobotCommand};
use crate::annotation::Child;
use crate::engine::GameState;
use crate::frames::Point2;
use crate::planner::{build_occupancy, DEFAULT_RESOLUTION};
use crate::time::Timestamp;

pub const DEFAULT_PAUSE: Duration = Duration::from_secs(15);

/// Perception-derived cues about a child. Nothing in this crate produces
/// them; policies that want them can take them from `perception/social`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SocialFeatures {
    pub child: Child,
    pub gaze: Option<GazeTarget>,
    pub pointing: Option<Point2>,
    pub stamp: Timestamp,
}

/// An autonomous controller, stepped periodically.
pub trait Policy: Send {
    fn step(
        &mut self,
        state: &GameState,
        features: Option<&SocialFeatures>,
        now: Timestamp,
    ) -> Option<RobotAction>;
}

/// Robot that plays with the items on its own and never engages socially:
/// after each pause it drags a random item to a random free spot.
#[derive(Debug, Clone)]
pub struct AsocialPolicy {
    rng: ChaCha8Rng,
    seed: u64,
    cooldown_until: Timestamp,
    pause: Duration,
    resolution: f64,
    forbidden: BTreeSet<ActionKind>,
}

impl AsocialPolicy {
    pub fn new(seed: u64) -> Self {
        AsocialPolicy {
            rng: ChaCha8Rng::seed_from_u64(seed),
            seed,
            cooldown_until: Timestamp::ZERO,
            pause: DEFAULT_PAUSE,
            resolution: DEFAULT_RESOLUTION,
            forbidden: [ActionKind::GazeAt, ActionKind::Say, ActionKind::PointAt]
                .into_iter()
                .collect(),
        }
    }

    pub fn with_pause(mut self, pause: Duration) -> Self {
        self.pause = pause;
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn cooldown_until(&self) -> Timestamp {
        self.cooldown_until
    }

    pub fn forbidden(&self) -> &BTreeSet<ActionKind> {
        &self.forbidden
    }

    /// Picks the next move, or nothing while cooling down or when the
    /// chosen item has no free cell to go to.
    pub fn next_action(&mut self, state: &GameState, now: Timestamp) -> Option<RobotAction> {
        if now < self.cooldown_until || state.items().is_empty() {
            return None;
        }
        let items = state.items();
        let item = &items[self.rng.gen_range(0..items.len())];
        let grid = build_occupancy(items, &item.id, self.resolution).ok()?;
        let free = grid.free_cells();
        if free.is_empty() {
            return None;
        }
        let goal = grid.cell_centre(free[self.rng.gen_range(0..free.len())]);
        self.cooldown_until = now + self.pause;
        let action = RobotAction {
            command: RobotCommand::MoveItem {
                item_id: item.id.clone(),
                goal,
            },
            stamp: now,
            source: ActionSource::Policy,
        };
        debug_assert!(!self.forbidden.contains(&action.kind()));
        Some(action)
    }
}

impl Policy for AsocialPolicy {
    fn step(
        &mut self,
        state: &GameState,
        _features: Option<&SocialFeatures>,
        now: Timestamp,
    ) -> Option<RobotAction> {
        self.next_action(state, now)
    }
}
