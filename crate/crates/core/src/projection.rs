//! Dual-fisheye projection of 3D points with a fourth-order polynomial lens model.
//!
//! The optical axis of the front lens is +X, the back lens looks along -X.
//! A point is converted to an azimuth `theta = atan2(Y, Z)` and a polar angle
//! `phi = atan2(sqrt(Y^2 + Z^2), X + eps)`; the lens polynomial maps the angle
//! off the lens' own axis to a radius on the unit fisheye disc. Front points
//! fill the right half of the image, back points the left half.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default denominator guard, meters.
pub const DEFAULT_EPSILON: f64 = 1e-9;

/// A point in the sensor frame, meters.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

/// Continuous pixel coordinates; consumers decide on rounding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelCoord {
    pub u: f64,
    pub v: f64,
}

/// Polynomial fisheye calibration of a dual-fisheye image.
///
/// `coeffs[i]` multiplies `phi^i`. The image is `width x height` pixels with
/// the two fisheye discs side by side, so `width` must be even.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraCalibration {
    coeffs: [f64; 5],
    width: u32,
    height: u32,
    #[serde(default = "default_epsilon")]
    epsilon: f64,
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

impl CameraCalibration {
    pub fn new(coeffs: [f64; 5], width: u32, height: u32, epsilon: f64) -> Result<Self> {
        let cal = Self {
            coeffs,
            width,
            height,
            epsilon,
        };
        cal.validate()?;
        Ok(cal)
    }

    /// Linear lens `r(phi) = 2 phi / pi`: the 90 degree rim lands on the disc edge.
    pub fn equidistant(width: u32, height: u32) -> Result<Self> {
        Self::new([0.0, 2.0 / PI, 0.0, 0.0, 0.0], width, height, DEFAULT_EPSILON)
    }

    /// Checks the invariants; deserialized values must be validated with this.
    pub fn validate(&self) -> Result<()> {
        if self.width < 2 || !self.width.is_multiple_of(2) {
            return Err(Error::InvalidCalibration(format!(
                "width {} must be even and at least 2",
                self.width
            )));
        }
        if self.height < 1 {
            return Err(Error::InvalidCalibration("height must be at least 1".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidCalibration(format!(
                "epsilon {} must be positive",
                self.epsilon
            )));
        }
        if let Some(c) = self.coeffs.iter().find(|c| !c.is_finite()) {
            return Err(Error::InvalidCalibration(format!("non-finite coefficient {c}")));
        }
        Ok(())
    }

    pub fn coeffs(&self) -> &[f64; 5] {
        &self.coeffs
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
}

impl Default for CameraCalibration {
    fn default() -> Self {
        Self::equidistant(1280, 640).expect("default calibration is valid")
    }
}

/// Azimuth `theta` in `(-pi, pi]` and polar angle `phi` in `[0, pi]`.
///
/// `theta` is 0 when `Y = Z = 0`.
pub fn to_spherical(p: Point3, cal: &CameraCalibration) -> (f64, f64) {
    let rho = p.y.hypot(p.z);
    let theta = if p.y == 0.0 && p.z == 0.0 {
        0.0
    } else {
        let t = p.y.atan2(p.z);
        if t == -PI {
            PI
        } else {
            t
        }
    };
    let phi = rho.atan2(p.x + cal.epsilon);
    (theta, phi)
}

/// Lens polynomial `a4 phi^4 + a3 phi^3 + a2 phi^2 + a1 phi + a0` (Horner form).
pub fn radius(phi: f64, cal: &CameraCalibration) -> f64 {
    cal.coeffs.iter().rev().fold(0.0, |acc, &a| acc * phi + a)
}

/// Position on the lens plane before the two discs are placed side by side.
///
/// Front-hemisphere points (`X > 0`) use `phi`; back points use the signed
/// angle `phi - pi` off the back lens' axis, which mirrors them horizontally
/// as seen through the back lens.
pub fn lens_plane(p: Point3, cal: &CameraCalibration) -> (f64, f64) {
    let (theta, phi) = to_spherical(p, cal);
    let angle = if p.x > 0.0 { phi } else { phi - PI };
    let r = radius(angle, cal);
    (r * theta.cos(), r * theta.sin())
}

/// Pixel coordinates before clipping to the image.
pub fn project_unclipped(p: Point3, cal: &CameraCalibration) -> PixelCoord {
    let (x, y) = lens_plane(p, cal);
    let x = if p.x > 0.0 { (x + 1.0) / 2.0 } else { (x - 1.0) / 2.0 };
    PixelCoord {
        u: (x + 1.0) / 2.0 * f64::from(cal.width),
        v: (-y + 1.0) / 2.0 * f64::from(cal.height),
    }
}

/// Projects a point to pixel coordinates clipped to `[0, W-1] x [0, H-1]`.
pub fn project(p: Point3, cal: &CameraCalibration) -> PixelCoord {
    let raw = project_unclipped(p, cal);
    PixelCoord {
        u: raw.u.clamp(0.0, f64::from(cal.width - 1)),
        v: raw.v.clamp(0.0, f64::from(cal.height - 1)),
    }
}

/// Elementwise [`project`], order preserved.
pub fn project_batch(points: &[Point3], cal: &CameraCalibration) -> Vec<PixelCoord> {
    points.par_iter().map(|&p| project(p, cal)).collect()
}
