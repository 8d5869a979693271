mod common;

use std::f64::consts::{FRAC_PI_2, SQRT_2};

use proptest::prelude::*;
use rand::Rng;

use sandbox_core::engine::{GameState, Item, ItemKind, Scene, TouchPhase};
use sandbox_core::frames::{Point2, Transform2D};
use sandbox_core::planner::*;
use sandbox_core::time::Timestamp;

use common::*;

fn item(id: &str, x: f64, y: f64, w: f64, h: f64) -> Item {
    Item {
        id: id.into(),
        kind: ItemKind::Animal,
        pose: Transform2D::from_translation(x, y),
        footprint: (w, h),
        z_order: 0,
    }
}

fn random_free_cell(rng: &mut rand_chacha::ChaCha8Rng, g: &OccupancyGrid) -> Cell {
    (rng.gen_range(0..g.width), rng.gen_range(0..g.height))
}

#[test]
fn astar_matches_dijkstra_on_random_grids() {
    let mut rng = rng(0xA5);
    let (mut found, mut none) = (0, 0);
    for _ in 0..300 {
        let mut g = random_grid(&mut rng, 20, 20, 0.2);
        let s = random_free_cell(&mut rng, &g);
        let t = random_free_cell(&mut rng, &g);
        g.set(s, false);
        g.set(t, false);
        match (plan(&g, s, t), dijkstra(&g, s, t)) {
            (Ok(p), Some((st, di))) => {
                assert_eq!((p.straight_steps, p.diagonal_steps), (st, di));
                assert_eq!(p.cost(), st as f64 + di as f64 * SQRT_2);
                found += 1;
            }
            (Err(PlanError::NoPath { .. }), None) => none += 1,
            (got, want) => panic!("planner {got:?} vs oracle {want:?}"),
        }
    }
    assert!(found > 200 && none > 0, "found {found}, none {none}");
}

#[test]
fn empty_five_by_five_diagonal() {
    let g = OccupancyGrid::free(5, 5, 0.01);
    let p = plan(&g, (0, 0), (4, 4)).unwrap();
    assert_eq!(dijkstra(&g, (0, 0), (4, 4)), Some((0, 4)));
    assert!((p.cost() - 4.0 * SQRT_2).abs() < 1e-12);
    assert!((p.cost() - 5.6569).abs() < 1e-4);
}

#[test]
fn walled_goal_has_no_path() {
    let mut g = OccupancyGrid::free(7, 7, 0.01);
    for c in 2..=4 {
        for r in 2..=4 {
            if (c, r) != (3, 3) {
                g.set((c, r), true);
            }
        }
    }
    assert!(matches!(plan(&g, (0, 0), (3, 3)), Err(PlanError::NoPath { .. })));
    g.set((3, 3), true);
    assert!(matches!(plan(&g, (0, 0), (3, 3)), Err(PlanError::GoalOccupied(_))));
    assert!(matches!(plan(&g, (3, 3), (0, 0)), Err(PlanError::StartOccupied(_))));
}

fn check_path(g: &OccupancyGrid, p: &Path) {
    for c in &p.cells {
        assert!(!g.is_occupied(*c), "path crosses {c:?}");
    }
    for w in p.cells.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (dx, dy) = (a.0.abs_diff(b.0), a.1.abs_diff(b.1));
        assert!(dx <= 1 && dy <= 1 && dx + dy > 0, "{a:?}->{b:?} not adjacent");
        if dx == 1 && dy == 1 {
            assert!(!g.is_occupied((b.0, a.1)) && !g.is_occupied((a.0, b.1)), "corner cut at {a:?}->{b:?}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn paths_are_legal_and_deterministic(seed in any::<u64>(), density in 0.0f64..0.4) {
        let mut rng = rng(seed);
        let mut g = random_grid(&mut rng, 24, 16, density);
        let s = random_free_cell(&mut rng, &g);
        let t = random_free_cell(&mut rng, &g);
        g.set(s, false);
        g.set(t, false);
        if let Ok(p) = plan(&g, s, t) {
            check_path(&g, &p);
            prop_assert_eq!(p.cells.first(), Some(&s));
            prop_assert_eq!(p.cells.last(), Some(&t));
            let steps = p.cells.len() as u32 - 1;
            prop_assert_eq!(p.straight_steps + p.diagonal_steps, steps);
            prop_assert_eq!(plan(&g, s, t).unwrap(), p);
        }
    }

    #[test]
    fn occupancy_matches_box_intersection(
        others in prop::collection::vec((0.0f64..0.6, 0.0f64..0.33, 0.01f64..0.08, 0.01f64..0.08), 0..6),
        moved in (0.01f64..0.06, 0.01f64..0.06),
        res in prop::sample::select(vec![0.01, 0.02, 0.005]),
    ) {
        let mut items = vec![item("moved", 0.3, 0.16, moved.0, moved.1)];
        for (i, (x, y, w, h)) in others.iter().enumerate() {
            items.push(item(&format!("o{i}"), *x, *y, *w, *h));
        }
        let g = build_occupancy(&items, "moved", res).unwrap();
        for row in 0..g.height {
            for col in 0..g.width {
                let (cx0, cy0) = (col as f64 * res, row as f64 * res);
                let want = items[1..].iter().any(|it| {
                    let hw = (it.footprint.0 + moved.0) / 2.0;
                    let hh = (it.footprint.1 + moved.1) / 2.0;
                    let c = it.centre();
                    let ox = (c.x + hw).min(cx0 + res) - (c.x - hw).max(cx0);
                    let oy = (c.y + hh).min(cy0 + res) - (c.y - hh).max(cy0);
                    ox > 1e-9 && oy > 1e-9
                });
                prop_assert_eq!(g.is_occupied((col, row)), want, "cell ({}, {})", col, row);
            }
        }
    }
}

#[test]
fn occupancy_example_is_six_by_six() {
    let items = vec![item("moved", 0.1, 0.1, 0.02, 0.02), item("other", 0.30, 0.16, 0.04, 0.04)];
    let g = build_occupancy(&items, "moved", 0.01).unwrap();
    assert_eq!((g.width, g.height), (60, 33));
    assert_eq!(g.occupied_count(), 36);
    for col in 27..33 {
        for row in 13..19 {
            assert!(g.is_occupied((col, row)));
        }
    }
    assert_eq!(build_occupancy(&items[..1], "moved", 0.01).unwrap().occupied_count(), 0);
    assert!(matches!(build_occupancy(&items, "ghost", 0.01), Err(PlanError::UnknownItem(_))));
}

#[test]
fn schedule_timing_and_calibration() {
    let path = Path {
        cells: vec![(0, 0), (1, 0), (2, 0)],
        straight_steps: 2,
        diagonal_steps: 0,
        resolution_tenth_mm: 100,
    };
    let s = make_schedule(&path, 0.01, &Transform2D::IDENTITY, Timestamp::ZERO);
    let stamps: Vec<u64> = s.steps.iter().map(|x| x.stamp.micros()).collect();
    assert_eq!(stamps, vec![0, 1_000_000, 2_000_000]);
    let phases: Vec<TouchPhase> = s.touches().map(|t| t.phase).collect();
    assert_eq!(phases, vec![TouchPhase::Down, TouchPhase::Move, TouchPhase::Up]);
    for st in &s.steps {
        assert_eq!(st.pointer, st.touch.position());
    }

    let cal = Transform2D::new(FRAC_PI_2, 0.05, 0.05);
    let s = make_schedule(&path, 0.05, &cal, Timestamp::from_secs(3));
    for st in &s.steps {
        // Homogeneous matrix applied by hand.
        let (c, sn) = (FRAC_PI_2.cos(), FRAC_PI_2.sin());
        let p = st.touch.position();
        let want = Point2::new(c * p.x - sn * p.y + 0.05, sn * p.x + c * p.y + 0.05);
        assert!((st.pointer.x - want.x).abs() < 1e-9 && (st.pointer.y - want.y).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// Playing a schedule's fake touches through the engine leaves the item
    /// on the goal cell centre.
    #[test]
    fn schedules_deliver_items_to_the_goal(seed in any::<u64>()) {
        let mut rng = rng(seed);
        let mut scene = Scene::empty();
        scene.items.push(item("box", rng.gen_range(0.05..0.55), rng.gen_range(0.05..0.28), 0.03, 0.03));
        let mut g = GameState::new(scene);
        let grid = build_occupancy(g.items(), "box", DEFAULT_RESOLUTION).unwrap();
        let start = grid.cell_of(g.item("box").unwrap().centre());
        let goal = (rng.gen_range(0..grid.width), rng.gen_range(0..grid.height));
        let path = plan(&grid, start, goal).unwrap();
        let mut waypoints = vec![g.item("box").unwrap().centre()];
        waypoints.extend(path.centres().into_iter().skip(1));
        if path.cells.len() == 1 {
            waypoints.push(grid.cell_centre(goal));
        }
        let s = schedule_through("box", &waypoints, DEFAULT_SPEED, &Transform2D::IDENTITY, Timestamp::ZERO, ROBOT_TOUCH_BASE);
        prop_assert!(s.steps.windows(2).all(|w| w[0].stamp < w[1].stamp));
        for t in s.touches() {
            g.apply_touch_on(t, Some("box"));
        }
        let c = g.item("box").unwrap().centre();
        let want = grid.cell_centre(goal);
        prop_assert!((c.x - want.x).abs() < 1e-9 && (c.y - want.y).abs() < 1e-9, "{:?} vs {:?}", c, want);
    }
}
