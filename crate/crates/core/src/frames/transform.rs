use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

/// Wraps an angle into (-π, π].
pub fn normalize_angle(a: f64) -> f64 {
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// Point or vector in a plane frame, metres.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    pub fn distance(self, other: Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Rigid motion in the plane: rotate by `rotation`, then translate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transform2D {
    /// Radians in (-π, π].
    pub rotation: f64,
    pub translation: Point2,
}

impl Default for Transform2D {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Transform2D {
    pub const IDENTITY: Transform2D = Transform2D {
        rotation: 0.0,
        translation: Point2 { x: 0.0, y: 0.0 },
    };

    pub fn new(rotation: f64, x: f64, y: f64) -> Self {
        Transform2D {
            rotation: normalize_angle(rotation),
            translation: Point2::new(x, y),
        }
    }

    pub fn from_translation(x: f64, y: f64) -> Self {
        Self::new(0.0, x, y)
    }

    pub fn from_rotation(rotation: f64) -> Self {
        Self::new(rotation, 0.0, 0.0)
    }

    pub fn apply(&self, p: Point2) -> Point2 {
        let (s, c) = self.rotation.sin_cos();
        Point2::new(
            c * p.x - s * p.y + self.translation.x,
            s * p.x + c * p.y + self.translation.y,
        )
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Transform2D) -> Transform2D {
        let t = self.apply(other.translation);
        Transform2D::new(self.rotation + other.rotation, t.x, t.y)
    }

    pub fn inverse(&self) -> Transform2D {
        let (s, c) = self.rotation.sin_cos();
        let Point2 { x, y } = self.translation;
        Transform2D::new(-self.rotation, -(c * x + s * y), s * x - c * y)
    }

    /// Same transform embedded in 3D as a rotation about z.
    pub fn to_3d(&self) -> Transform3D {
        Transform3D::new(
            Quaternion::from_axis_angle([0.0, 0.0, 1.0], self.rotation),
            [self.translation.x, self.translation.y, 0.0],
        )
    }

    pub fn approx_eq(&self, other: &Transform2D, tol: f64) -> bool {
        normalize_angle(self.rotation - other.rotation).abs() <= tol
            && (self.translation.x - other.translation.x).abs() <= tol
            && (self.translation.y - other.translation.y).abs() <= tol
    }
}

/// Unit quaternion (w, x, y, z).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    /// Normalizes the input; a zero quaternion becomes the identity.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quaternion { w, x, y, z }.normalized()
    }

    pub fn from_axis_angle(axis: [f64; 3], angle: f64) -> Self {
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        if n == 0.0 {
            return Self::IDENTITY;
        }
        let (s, c) = (angle / 2.0).sin_cos();
        Quaternion::new(c, s * axis[0] / n, s * axis[1] / n, s * axis[2] / n)
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn normalized(self) -> Self {
        let n = self.norm();
        if n == 0.0 || !n.is_finite() {
            return Self::IDENTITY;
        }
        Quaternion {
            w: self.w / n,
            x: self.x / n,
            y: self.y / n,
            z: self.z / n,
        }
    }

    pub fn conjugate(&self) -> Self {
        Quaternion {
            w: self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    /// Hamilton product, not renormalized.
    pub fn mul(&self, o: &Quaternion) -> Quaternion {
        Quaternion {
            w: self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            x: self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            y: self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            z: self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        }
    }

    pub fn rotate(&self, v: [f64; 3]) -> [f64; 3] {
        // v' = v + 2w(u×v) + 2u×(u×v)
        let u = [self.x, self.y, self.z];
        let t = scale(cross(u, v), 2.0);
        let ut = cross(u, t);
        [
            v[0] + self.w * t[0] + ut[0],
            v[1] + self.w * t[1] + ut[1],
            v[2] + self.w * t[2] + ut[2],
        ]
    }

    /// Row-major 3×3 rotation matrix.
    pub fn to_matrix(&self) -> [[f64; 3]; 3] {
        let Quaternion { w, x, y, z } = *self;
        [
            [
                1.0 - 2.0 * (y * y + z * z),
                2.0 * (x * y - w * z),
                2.0 * (x * z + w * y),
            ],
            [
                2.0 * (x * y + w * z),
                1.0 - 2.0 * (x * x + z * z),
                2.0 * (y * z - w * x),
            ],
            [
                2.0 * (x * z - w * y),
                2.0 * (y * z + w * x),
                1.0 - 2.0 * (x * x + y * y),
            ],
        ]
    }

    /// Equality up to the double cover (q and -q are the same rotation).
    pub fn approx_eq(&self, o: &Quaternion, tol: f64) -> bool {
        let d = self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z;
        let sign = if d < 0.0 { -1.0 } else { 1.0 };
        (self.w - sign * o.w).abs() <= tol
            && (self.x - sign * o.x).abs() <= tol
            && (self.y - sign * o.y).abs() <= tol
            && (self.z - sign * o.z).abs() <= tol
    }
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn scale(a: [f64; 3], k: f64) -> [f64; 3] {
    [a[0] * k, a[1] * k, a[2] * k]
}

/// Rigid motion in space: rotate by `rotation`, then translate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transform3D {
    pub rotation: Quaternion,
    pub translation: [f64; 3],
}

impl Default for Transform3D {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Transform3D {
    pub const IDENTITY: Transform3D = Transform3D {
        rotation: Quaternion::IDENTITY,
        translation: [0.0; 3],
    };

    pub fn new(rotation: Quaternion, translation: [f64; 3]) -> Self {
        Transform3D {
            rotation: rotation.normalized(),
            translation,
        }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Transform3D::new(Quaternion::IDENTITY, [x, y, z])
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let r = self.rotation.rotate(p);
        [
            r[0] + self.translation[0],
            r[1] + self.translation[1],
            r[2] + self.translation[2],
        ]
    }

    /// `self ∘ other`: applies `other` first. The rotation is renormalized
    /// so long composition chains do not drift off the unit sphere.
    pub fn compose(&self, other: &Transform3D) -> Transform3D {
        Transform3D {
            rotation: self.rotation.mul(&other.rotation).normalized(),
            translation: self.apply(other.translation),
        }
    }

    pub fn inverse(&self) -> Transform3D {
        let q = self.rotation.conjugate();
        let t = q.rotate(self.translation);
        Transform3D {
            rotation: q,
            translation: [-t[0], -t[1], -t[2]],
        }
    }

    pub fn approx_eq(&self, o: &Transform3D, tol: f64) -> bool {
        self.rotation.approx_eq(&o.rotation, tol)
            && self
                .translation
                .iter()
                .zip(o.translation.iter())
                .all(|(a, b)| (a - b).abs() <= tol)
    }
}
