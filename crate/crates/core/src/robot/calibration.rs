use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frames::{Point2, Transform2D};

/// Calibrations with a larger RMS residual are rejected.
pub const MAX_RMS_RESIDUAL: f64 = 0.005;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error("need at least two distinct screen markers")]
    DegenerateInput,
    #[error("calibration rejected: rms residual {rms:.4} m exceeds {MAX_RMS_RESIDUAL} m")]
    CalibrationRejected { rms: f64 },
}

/// A fiducial marker seen both on the screen and by the robot.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub screen: Point2,
    pub robot: Point2,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub screen_to_robot: Transform2D,
    pub rms_residual: f64,
    pub marker_count: usize,
}

impl Calibration {
    /// Robot frame coincides with the sandtray frame.
    pub fn identity() -> Self {
        Calibration {
            screen_to_robot: Transform2D::IDENTITY,
            rms_residual: 0.0,
            marker_count: 0,
        }
    }

    pub fn from_transform(t: Transform2D) -> Self {
        Calibration {
            screen_to_robot: t,
            rms_residual: 0.0,
            marker_count: 0,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.rms_residual <= MAX_RMS_RESIDUAL
    }
}

/// Least-squares rigid fit (rotation + translation, no scale) mapping screen
/// points onto robot points, with its RMS residual. Uses the closed form:
/// subtract centroids, take the angle of the 2×2 cross-covariance.
pub fn fit_rigid_2d(pairs: &[Correspondence]) -> Result<(Transform2D, f64), CalibrationError> {
    if pairs.len() < 2 {
        return Err(CalibrationError::DegenerateInput);
    }
    let n = pairs.len() as f64;
    let mean = |f: fn(&Correspondence) -> Point2| {
        let (sx, sy) = pairs
            .iter()
            .map(f)
            .fold((0.0, 0.0), |(ax, ay), p| (ax + p.x, ay + p.y));
        Point2::new(sx / n, sy / n)
    };
    let sc = mean(|c| c.screen);
    let rc = mean(|c| c.robot);

    let (mut dot, mut cross, mut spread) = (0.0, 0.0, 0.0);
    for c in pairs {
        let (sx, sy) = (c.screen.x - sc.x, c.screen.y - sc.y);
        let (rx, ry) = (c.robot.x - rc.x, c.robot.y - rc.y);
        dot += sx * rx + sy * ry;
        cross += sx * ry - sy * rx;
        spread += sx * sx + sy * sy;
    }
    if spread <= 1e-18 {
        return Err(CalibrationError::DegenerateInput);
    }
    let angle = cross.atan2(dot);
    let rot = Transform2D::from_rotation(angle);
    let rs = rot.apply(sc);
    let t = Transform2D::new(angle, rc.x - rs.x, rc.y - rs.y);

    let sq: f64 = pairs
        .iter()
        .map(|c| {
            let p = t.apply(c.screen);
            (p.x - c.robot.x).powi(2) + (p.y - c.robot.y).powi(2)
        })
        .sum();
    Ok((t, (sq / n).sqrt()))
}

/// Fits the screen→robot transform and rejects poor fits.
pub fn calibrate(pairs: &[Correspondence]) -> Result<Calibration, CalibrationError> {
    let (t, rms) = fit_rigid_2d(pairs)?;
    if rms > MAX_RMS_RESIDUAL {
        return Err(CalibrationError::CalibrationRejected { rms });
    }
    Ok(Calibration {
        screen_to_robot: t,
        rms_residual: rms,
        marker_count: pairs.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn markers() -> Vec<Point2> {
        vec![Point2::new(0.0, 0.0), Point2::new(0.1, 0.0), Point2::new(0.0, 0.1)]
    }

    fn through(t: &Transform2D) -> Vec<Correspondence> {
        markers()
            .into_iter()
            .map(|s| Correspondence { screen: s, robot: t.apply(s) })
            .collect()
    }

    #[test]
    fn identity_mapping() {
        let c = calibrate(&through(&Transform2D::IDENTITY)).unwrap();
        assert!(c.screen_to_robot.approx_eq(&Transform2D::IDENTITY, 1e-12));
        assert!(c.rms_residual < 1e-12);
        assert_eq!(c.marker_count, 3);
    }

    #[test]
    fn recovers_known_transform() {
        let truth = Transform2D::new(FRAC_PI_2, 0.05, 0.05);
        let c = calibrate(&through(&truth)).unwrap();
        assert!(c.screen_to_robot.approx_eq(&truth, 1e-9));
        assert!(c.rms_residual <= 1e-9);
    }

    #[test]
    fn coincident_markers_are_degenerate() {
        let p = Point2::new(0.2, 0.2);
        let pairs = vec![Correspondence { screen: p, robot: p }; 4];
        assert_eq!(calibrate(&pairs), Err(CalibrationError::DegenerateInput));
        assert_eq!(calibrate(&pairs[..1]), Err(CalibrationError::DegenerateInput));
    }

    #[test]
    fn two_markers_suffice() {
        let truth = Transform2D::new(-2.0, 0.3, -0.1);
        let c = calibrate(&through(&truth)[..2]).unwrap();
        assert!(c.screen_to_robot.approx_eq(&truth, 1e-9));
    }

    #[test]
    fn bad_fit_is_rejected() {
        let mut pairs = through(&Transform2D::IDENTITY);
        pairs[1].robot.x += 0.05;
        assert!(matches!(calibrate(&pairs), Err(CalibrationError::CalibrationRejected { .. })));
    }
}
