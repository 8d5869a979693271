mod common;

use std::f64::consts::PI;

use proptest::prelude::*;
use rand::Rng;

use sandbox_core::frames::*;
use sandbox_core::time::Timestamp;

type M3 = [[f64; 3]; 3];

fn mat(t: &Transform2D) -> M3 {
    let (s, c) = t.rotation.sin_cos();
    [[c, -s, t.translation.x], [s, c, t.translation.y], [0.0, 0.0, 1.0]]
}

fn mul(a: M3, b: M3) -> M3 {
    let mut o = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            o[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    o
}

fn close(a: M3, b: M3, tol: f64) -> bool {
    a.iter().flatten().zip(b.iter().flatten()).all(|(x, y)| (x - y).abs() <= tol)
}

fn t2() -> impl Strategy<Value = Transform2D> {
    (-PI..PI, -2.0f64..2.0, -2.0f64..2.0).prop_map(|(r, x, y)| Transform2D::new(r, x, y))
}

fn t3() -> impl Strategy<Value = Transform3D> {
    ((-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0), -PI..PI, (-2.0f64..2.0, -2.0f64..2.0, -2.0f64..2.0))
        .prop_filter("axis", |((x, y, z), _, _)| x * x + y * y + z * z > 1e-3)
        .prop_map(|((x, y, z), a, (tx, ty, tz))| Transform3D::new(Quaternion::from_axis_angle([x, y, z], a), [tx, ty, tz]))
}

proptest! {
    #[test]
    fn compose_matches_matrix_product(a in t2(), b in t2()) {
        prop_assert!(close(mat(&a.compose(&b)), mul(mat(&a), mat(&b)), 1e-9));
    }

    #[test]
    fn inverse_gives_identity(a in t2(), b in t3(), px in -1.0f64..1.0, py in -1.0f64..1.0) {
        prop_assert!(a.compose(&a.inverse()).approx_eq(&Transform2D::IDENTITY, 1e-9));
        prop_assert!(a.inverse().compose(&a).approx_eq(&Transform2D::IDENTITY, 1e-9));
        prop_assert!(b.compose(&b.inverse()).approx_eq(&Transform3D::IDENTITY, 1e-9));
        let p = Point2::new(px, py);
        let back = a.inverse().apply(a.apply(p));
        prop_assert!((back.x - p.x).abs() < 1e-9 && (back.y - p.y).abs() < 1e-9);
    }

    #[test]
    fn compose_is_associative(a in t3(), b in t3(), c in t3()) {
        prop_assert!(a.compose(&b).compose(&c).approx_eq(&a.compose(&b.compose(&c)), 1e-9));
    }

    #[test]
    fn planar_embedding_commutes(a in t2(), b in t2()) {
        prop_assert!(a.compose(&b).to_3d().approx_eq(&a.to_3d().compose(&b.to_3d()), 1e-9));
    }

    /// Random trees: resolving one way is the inverse of the other, and
    /// chaining through a third frame agrees with the direct lookup.
    #[test]
    fn resolve_is_consistent(seed in any::<u64>(), edges in prop::collection::vec(t3(), 2..8)) {
        let mut rng = common::rng(seed);
        let mut tree = FrameTree::new();
        tree.add_root(ROOT_FRAME);
        let mut names = vec![ROOT_FRAME.to_string()];
        for (i, e) in edges.iter().enumerate() {
            let parent = names[rng.gen_range(0..names.len())].clone();
            let child = format!("f{i}");
            if rng.gen_bool(0.5) {
                tree.set_static(&parent, &child, *e).unwrap();
            } else {
                tree.set_dynamic(&parent, &child, Timestamp::ZERO, *e).unwrap();
            }
            names.push(child);
        }
        let at = Timestamp::from_secs(1);
        let pick = |rng: &mut rand_chacha::ChaCha8Rng| names[rng.gen_range(0..names.len())].clone();
        for _ in 0..10 {
            let (a, b, c) = (pick(&mut rng), pick(&mut rng), pick(&mut rng));
            let ab = tree.resolve(&a, &b, at).unwrap();
            let ba = tree.resolve(&b, &a, at).unwrap();
            prop_assert!(ab.approx_eq(&ba.inverse(), 1e-9));
            let bc = tree.resolve(&b, &c, at).unwrap();
            prop_assert!(bc.compose(&ab).approx_eq(&tree.resolve(&a, &c, at).unwrap(), 1e-9));
        }
        prop_assert!(tree.resolve(&names[1], &names[1], at).unwrap().approx_eq(&Transform3D::IDENTITY, 1e-12));
    }
}

#[test]
fn resolve_maps_child_points_into_parent() {
    let mut tree = FrameTree::new();
    tree.set_static(ROOT_FRAME, ROBOT_FRAME, Transform2D::new(PI / 2.0, 1.0, 0.0).to_3d()).unwrap();
    let t = tree.resolve(ROBOT_FRAME, ROOT_FRAME, Timestamp::ZERO).unwrap();
    let p = t.apply([1.0, 0.0, 0.0]);
    assert!((p[0] - 1.0).abs() < 1e-12 && (p[1] - 1.0).abs() < 1e-12);
}

#[test]
fn dynamic_edges_hold_the_last_sample() {
    let mut tree = FrameTree::new();
    let s = |x| Transform3D::from_translation(x, 0.0, 0.0);
    tree.set_dynamic(ROOT_FRAME, CAMERA_ENV_FRAME, Timestamp::from_secs(1), s(1.0)).unwrap();
    tree.set_dynamic(ROOT_FRAME, CAMERA_ENV_FRAME, Timestamp::from_secs(2), s(2.0)).unwrap();
    let at = |t: f64| tree.resolve(CAMERA_ENV_FRAME, ROOT_FRAME, Timestamp::from_secs_f64(t));
    assert!(matches!(at(0.5), Err(FrameError::NoSampleBefore { .. })));
    assert_eq!(at(1.0).unwrap().translation[0], 1.0);
    assert_eq!(at(1.9).unwrap().translation[0], 1.0);
    assert_eq!(at(7.0).unwrap().translation[0], 2.0);
}

#[test]
fn tree_errors() {
    let mut tree = FrameTree::new();
    tree.set_static("a", "b", Transform3D::IDENTITY).unwrap();
    assert!(matches!(tree.set_static("b", "a", Transform3D::IDENTITY), Err(FrameError::Cycle { .. })));
    tree.add_root("z");
    assert!(matches!(tree.resolve("b", "z", Timestamp::ZERO), Err(FrameError::DisconnectedFrames(..))));
    assert!(matches!(tree.resolve("b", "nope", Timestamp::ZERO), Err(FrameError::UnknownFrame(_))));
    assert!(matches!(
        tree.set_dynamic("a", "b", Timestamp::ZERO, Transform3D::IDENTITY),
        Err(FrameError::EdgeKindMismatch { .. })
    ));
}

#[test]
fn quaternion_norm_after_a_million_compositions() {
    let step = Transform3D::new(Quaternion::from_axis_angle([0.3, -0.5, 0.8], 0.0123), [1e-3, 0.0, -2e-3]);
    let mut acc = Transform3D::IDENTITY;
    for _ in 0..1_000_000 {
        acc = acc.compose(&step);
    }
    assert!((acc.rotation.norm() - 1.0).abs() < 1e-12, "norm {}", acc.rotation.norm());
}
