//! Occupancy-grid A* planning for robot-driven item moves, and the motion
//! schedule that keeps the robot's pointing gesture in step with the fake
//! touches that actually drag the item.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::SQRT_2;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{Item, TouchEvent, TouchPhase, TouchSource, PLAY_HEIGHT, PLAY_WIDTH};
use crate::frames::{Point2, Transform2D};
use crate::time::Timestamp;

pub const DEFAULT_RESOLUTION: f64 = 0.01;
/// Drag speed of robot moves, m/s.
pub const DEFAULT_SPEED: f64 = 0.05;
/// Touch ids at and above this value belong to robot fake touches.
pub const ROBOT_TOUCH_BASE: u32 = 0x4000_0000;

/// Overlap below this is treated as touching, not intersecting.
const GEOM_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("unknown item `{0}`")]
    UnknownItem(String),
    #[error("no path from {start:?} to {goal:?}")]
    NoPath { start: Cell, goal: Cell },
    #[error("start cell {0:?} is occupied")]
    StartOccupied(Cell),
    #[error("goal cell {0:?} is occupied")]
    GoalOccupied(Cell),
    #[error("cell {0:?} is outside the grid")]
    OutsideGrid(Cell),
    #[error("resolution must be positive, got {0}")]
    BadResolution(f64),
}

/// Grid cell as (column, row); row 0 is the bottom edge.
pub type Cell = (usize, usize);

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OccupancyGrid {
    /// Cell edge in 0.1 mm units.
    pub resolution_tenth_mm: u32,
    pub width: usize,
    pub height: usize,
    pub occupied: Vec<bool>,
}

impl OccupancyGrid {
    /// Free grid covering the play area at `resolution` metres per cell.
    pub fn empty(resolution: f64) -> Result<Self, PlanError> {
        if !(resolution > 0.0) {
            return Err(PlanError::BadResolution(resolution));
        }
        let width = (PLAY_WIDTH / resolution - GEOM_EPS).ceil() as usize;
        let height = (PLAY_HEIGHT / resolution - GEOM_EPS).ceil() as usize;
        Ok(Self::free(width, height, resolution))
    }

    pub fn free(width: usize, height: usize, resolution: f64) -> Self {
        OccupancyGrid {
            resolution_tenth_mm: (resolution * 1e4).round() as u32,
            width,
            height,
            occupied: vec![false; width * height],
        }
    }

    pub fn resolution(&self) -> f64 {
        self.resolution_tenth_mm as f64 / 1e4
    }

    pub fn contains(&self, c: Cell) -> bool {
        c.0 < self.width && c.1 < self.height
    }

    pub fn is_occupied(&self, c: Cell) -> bool {
        self.occupied[c.1 * self.width + c.0]
    }

    pub fn set(&mut self, c: Cell, occupied: bool) {
        self.occupied[c.1 * self.width + c.0] = occupied;
    }

    pub fn occupied_count(&self) -> usize {
        self.occupied.iter().filter(|o| **o).count()
    }

    pub fn free_cells(&self) -> Vec<Cell> {
        (0..self.height)
            .flat_map(|r| (0..self.width).map(move |c| (c, r)))
            .filter(|c| !self.is_occupied(*c))
            .collect()
    }

    /// Cell containing `p`, clamped onto the grid.
    pub fn cell_of(&self, p: Point2) -> Cell {
        let r = self.resolution();
        let col = ((p.x / r).floor().max(0.0) as usize).min(self.width - 1);
        let row = ((p.y / r).floor().max(0.0) as usize).min(self.height - 1);
        (col, row)
    }

    pub fn cell_centre(&self, c: Cell) -> Point2 {
        let r = self.resolution();
        Point2::new((c.0 as f64 + 0.5) * r, (c.1 as f64 + 0.5) * r)
    }

    /// Marks every cell overlapping the axis-aligned box with positive area.
    pub fn fill_box(&mut self, centre: Point2, half_w: f64, half_h: f64) {
        let r = self.resolution();
        let (x0, x1) = (centre.x - half_w, centre.x + half_w);
        let (y0, y1) = (centre.y - half_h, centre.y + half_h);
        let c0 = ((x0 / r).floor().max(0.0)) as usize;
        let r0 = ((y0 / r).floor().max(0.0)) as usize;
        let c1 = (((x1 / r).floor().max(0.0)) as usize).min(self.width.saturating_sub(1));
        let r1 = (((y1 / r).floor().max(0.0)) as usize).min(self.height.saturating_sub(1));
        for row in r0..=r1 {
            for col in c0..=c1 {
                let (cx0, cy0) = (col as f64 * r, row as f64 * r);
                let overlap_x = x1.min(cx0 + r) - x0.max(cx0);
                let overlap_y = y1.min(cy0 + r) - y0.max(cy0);
                if overlap_x > GEOM_EPS && overlap_y > GEOM_EPS {
                    self.set((col, row), true);
                }
            }
        }
    }

    /// Frees `c` and its 8 neighbours so a planner can leave a contact state.
    pub fn force_clear_around(&mut self, c: Cell) {
        for dr in -1i64..=1 {
            for dc in -1i64..=1 {
                let (col, row) = (c.0 as i64 + dc, c.1 as i64 + dr);
                if col >= 0 && row >= 0 && (col as usize) < self.width && (row as usize) < self.height {
                    self.set((col as usize, row as usize), false);
                }
            }
        }
    }

    /// Portable graymap (plain `P2`), top row first; free = 1, occupied = 0.
    pub fn to_pgm(&self) -> String {
        let mut out = format!("P2\n{} {}\n1\n", self.width, self.height);
        for row in (0..self.height).rev() {
            let line: Vec<&str> = (0..self.width)
                .map(|col| if self.is_occupied((col, row)) { "0" } else { "1" })
                .collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }
}

/// Occupancy of every item except `exclude`, each footprint inflated by half
/// of the excluded item's footprint (configuration space of the moved item).
pub fn build_occupancy(
    items: &[Item],
    exclude: &str,
    resolution: f64,
) -> Result<OccupancyGrid, PlanError> {
    let moved = items
        .iter()
        .find(|it| it.id == exclude)
        .ok_or_else(|| PlanError::UnknownItem(exclude.to_string()))?;
    let mut grid = OccupancyGrid::empty(resolution)?;
    let (mw, mh) = moved.footprint;
    for it in items.iter().filter(|it| it.id != exclude) {
        grid.fill_box(
            it.centre(),
            (it.footprint.0 + mw) / 2.0,
            (it.footprint.1 + mh) / 2.0,
        );
    }
    Ok(grid)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub cells: Vec<Cell>,
    pub straight_steps: u32,
    pub diagonal_steps: u32,
    pub resolution_tenth_mm: u32,
}

impl Path {
    /// Cost in cells: 1 per orthogonal step, √2 per diagonal step.
    pub fn cost(&self) -> f64 {
        step_cost(self.straight_steps, self.diagonal_steps)
    }

    pub fn resolution(&self) -> f64 {
        self.resolution_tenth_mm as f64 / 1e4
    }

    pub fn centres(&self) -> Vec<Point2> {
        let r = self.resolution();
        self.cells
            .iter()
            .map(|c| Point2::new((c.0 as f64 + 0.5) * r, (c.1 as f64 + 0.5) * r))
            .collect()
    }
}

/// Path costs are built from integer step counts so that two routes with
/// the same counts compare exactly equal regardless of summation order.
fn step_cost(straight: u32, diagonal: u32) -> f64 {
    straight as f64 + diagonal as f64 * SQRT_2
}

fn octile(a: Cell, b: Cell) -> f64 {
    let dx = a.0.abs_diff(b.0);
    let dy = a.1.abs_diff(b.1);
    let (lo, hi) = if dx < dy { (dx, dy) } else { (dy, dx) };
    step_cost((hi - lo) as u32, lo as u32)
}

#[derive(Clone, Copy, Debug)]
struct Open {
    f: f64,
    h: f64,
    idx: usize,
    straight: u32,
    diagonal: u32,
}

impl PartialEq for Open {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Open {}

impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Open {
    /// Reversed so the max-heap pops the lowest (f, h, index).
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .total_cmp(&self.f)
            .then_with(|| other.h.total_cmp(&self.h))
            .then_with(|| other.idx.cmp(&self.idx))
    }
}

/// Neighbour offsets: orthogonal first, then diagonals.
const STEPS: [(i64, i64); 8] = [
    (1, 0),
    (-1, 0),
    (0, 1),
    (0, -1),
    (1, 1),
    (-1, 1),
    (1, -1),
    (-1, -1),
];

/// Free 8-neighbours of `c`. A diagonal step is only allowed when both
/// orthogonal cells it passes between are free (no corner cutting).
pub fn neighbours(grid: &OccupancyGrid, c: Cell) -> impl Iterator<Item = (Cell, bool)> + '_ {
    STEPS.iter().filter_map(move |&(dc, dr)| {
        let col = c.0 as i64 + dc;
        let row = c.1 as i64 + dr;
        if col < 0 || row < 0 || col as usize >= grid.width || row as usize >= grid.height {
            return None;
        }
        let n = (col as usize, row as usize);
        if grid.is_occupied(n) {
            return None;
        }
        let diagonal = dc != 0 && dr != 0;
        if diagonal
            && (grid.is_occupied((col as usize, c.1)) || grid.is_occupied((c.0, row as usize)))
        {
            return None;
        }
        Some((n, diagonal))
    })
}

/// Minimal-cost 8-connected path from `start` to `goal` using A* with the
/// octile heuristic. Ties on f go to the lower h, then the lower row-major
/// cell index, so results are reproducible cell for cell.
pub fn plan(grid: &OccupancyGrid, start: Cell, goal: Cell) -> Result<Path, PlanError> {
    for c in [start, goal] {
        if !grid.contains(c) {
            return Err(PlanError::OutsideGrid(c));
        }
    }
    if grid.is_occupied(start) {
        return Err(PlanError::StartOccupied(start));
    }
    if grid.is_occupied(goal) {
        return Err(PlanError::GoalOccupied(goal));
    }
    let w = grid.width;
    let idx = |c: Cell| c.1 * w + c.0;
    let n = grid.width * grid.height;
    let mut best: Vec<Option<(u32, u32)>> = vec![None; n];
    let mut came_from = vec![usize::MAX; n];
    let mut heap = BinaryHeap::new();

    best[idx(start)] = Some((0, 0));
    let h0 = octile(start, goal);
    heap.push(Open {
        f: h0,
        h: h0,
        idx: idx(start),
        straight: 0,
        diagonal: 0,
    });

    while let Some(cur) = heap.pop() {
        let (s, d) = best[cur.idx].expect("pushed cells have a cost");
        if (s, d) != (cur.straight, cur.diagonal) {
            continue; // stale entry
        }
        let c = (cur.idx % w, cur.idx / w);
        if c == goal {
            let mut cells = vec![c];
            let mut at = cur.idx;
            while came_from[at] != usize::MAX {
                at = came_from[at];
                cells.push((at % w, at / w));
            }
            cells.reverse();
            return Ok(Path {
                cells,
                straight_steps: s,
                diagonal_steps: d,
                resolution_tenth_mm: grid.resolution_tenth_mm,
            });
        }
        let g = step_cost(s, d);
        for (nb, diagonal) in neighbours(grid, c) {
            let (ns, nd) = if diagonal { (s, d + 1) } else { (s + 1, d) };
            let ng = step_cost(ns, nd);
            let ni = idx(nb);
            let better = match best[ni] {
                None => true,
                Some((bs, bd)) => ng < step_cost(bs, bd),
            };
            if better {
                debug_assert!(ng > g);
                best[ni] = Some((ns, nd));
                came_from[ni] = cur.idx;
                let h = octile(nb, goal);
                heap.push(Open {
                    f: ng + h,
                    h,
                    idx: ni,
                    straight: ns,
                    diagonal: nd,
                });
            }
        }
    }
    Err(PlanError::NoPath { start, goal })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleStep {
    pub stamp: Timestamp,
    /// Pointer target in the robot frame.
    pub pointer: Point2,
    /// Fake touch in the sandtray frame.
    pub touch: TouchEvent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionSchedule {
    pub item_id: String,
    pub speed: f64,
    pub steps: Vec<ScheduleStep>,
}

impl MotionSchedule {
    pub fn start_time(&self) -> Timestamp {
        self.steps.first().map(|s| s.stamp).unwrap_or_default()
    }

    pub fn end_time(&self) -> Timestamp {
        self.steps.last().map(|s| s.stamp).unwrap_or_default()
    }

    pub fn touches(&self) -> impl Iterator<Item = &TouchEvent> {
        self.steps.iter().map(|s| &s.touch)
    }
}

/// Timed fake-touch sequence through `waypoints` at constant `speed`,
/// with the robot's pointer target at `calibration` applied to each touch.
/// The first touch is `down`, the last `up`, everything between `move`.
pub fn schedule_through(
    item_id: &str,
    waypoints: &[Point2],
    speed: f64,
    calibration: &Transform2D,
    start_time: Timestamp,
    touch_id: u32,
) -> MotionSchedule {
    assert!(speed > 0.0, "speed must be positive");
    assert!(!waypoints.is_empty(), "schedule needs at least one waypoint");
    // A lone waypoint still needs a press and a release.
    let points: Vec<Point2> = if waypoints.len() == 1 {
        vec![waypoints[0], waypoints[0]]
    } else {
        waypoints.to_vec()
    };
    let mut steps = Vec::with_capacity(points.len());
    let mut travelled = 0.0;
    let mut last = None::<Timestamp>;
    for (i, p) in points.iter().enumerate() {
        if i > 0 {
            travelled += points[i - 1].distance(*p);
        }
        let mut stamp = start_time + std::time::Duration::from_secs_f64(travelled / speed);
        if let Some(prev) = last {
            if stamp <= prev {
                stamp = Timestamp(prev.micros() + 1);
            }
        }
        last = Some(stamp);
        let phase = if i == 0 {
            TouchPhase::Down
        } else if i + 1 == points.len() {
            TouchPhase::Up
        } else {
            TouchPhase::Move
        };
        steps.push(ScheduleStep {
            stamp,
            pointer: calibration.apply(*p),
            touch: TouchEvent::new(touch_id, phase, p.x, p.y, TouchSource::RobotFake, stamp),
        });
    }
    MotionSchedule {
        item_id: item_id.to_string(),
        speed,
        steps,
    }
}

/// Schedule along the centres of `path`'s cells.
pub fn make_schedule(
    path: &Path,
    speed: f64,
    calibration: &Transform2D,
    start_time: Timestamp,
) -> MotionSchedule {
    schedule_through("", &path.centres(), speed, calibration, start_time, ROBOT_TOUCH_BASE)
}
