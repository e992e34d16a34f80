//! Directions on the unit sphere.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

/// A direction given by inclination `theta` in `[0, pi]` and azimuth `phi` in `[0, 2pi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Direction {
    pub theta: f64,
    pub phi: f64,
}

impl Direction {
    pub fn new(theta: f64, phi: f64) -> Self {
        Self { theta, phi: wrap_azimuth(phi) }
    }

    pub fn from_degrees(theta_deg: f64, phi_deg: f64) -> Self {
        Self::new(theta_deg.to_radians(), phi_deg.to_radians())
    }

    pub fn to_unit(self) -> [f64; 3] {
        let (st, ct) = self.theta.sin_cos();
        let (sp, cp) = self.phi.sin_cos();
        [st * cp, st * sp, ct]
    }

    /// Direction of a (not necessarily normalised) nonzero vector.
    pub fn from_vector(v: [f64; 3]) -> Self {
        let r = norm(v);
        let z = (v[2] / r).clamp(-1.0, 1.0);
        Self::new(z.acos(), v[1].atan2(v[0]))
    }

    /// Great-circle angle to another direction, radians.
    pub fn angle_to(self, other: Direction) -> f64 {
        angle_between(self.to_unit(), other.to_unit())
    }
}

/// Map any azimuth into `[0, 2pi)`.
pub fn wrap_azimuth(phi: f64) -> f64 {
    let p = phi.rem_euclid(2.0 * PI);
    if p >= 2.0 * PI {
        0.0
    } else {
        p
    }
}

pub fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

pub fn normalize(a: [f64; 3]) -> [f64; 3] {
    let r = norm(a);
    [a[0] / r, a[1] / r, a[2] / r]
}

/// Great-circle angle between two unit vectors; atan2 form stays accurate near 0 and pi.
pub fn angle_between(a: [f64; 3], b: [f64; 3]) -> f64 {
    norm(cross(a, b)).atan2(dot(a, b))
}
