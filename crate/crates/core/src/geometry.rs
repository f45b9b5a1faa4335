//! States and measurement axes on the unit sphere.
//!
//! A state is a point on the sphere; a dichotomic measurement is the diameter
//! between its "yes" anchor and the antipodal "no" anchor. The state lands on
//! the measurement's elastic at the orthogonal projection, i.e. at the cosine
//! of the angle to the yes anchor.

use serde::{Deserialize, Serialize};

use crate::error::{GtrError, Result};

#[cfg(test)]
const UNIT_TOLERANCE: f64 = 1e-9;
const GRAM_TOLERANCE: f64 = 1e-10;

/// A point on the unit 2-sphere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(into = "[f64; 3]")]
pub struct UnitVector3 {
    x: f64,
    y: f64,
    z: f64,
}

impl From<UnitVector3> for [f64; 3] {
    fn from(v: UnitVector3) -> Self {
        [v.x, v.y, v.z]
    }
}

impl<'de> Deserialize<'de> for UnitVector3 {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let [x, y, z] = <[f64; 3]>::deserialize(deserializer)?;
        UnitVector3::normalize(x, y, z).map_err(serde::de::Error::custom)
    }
}

impl UnitVector3 {
    /// Scales `(x, y, z)` to unit length.
    ///
    /// Inputs that are already unit length to within a few ulps are kept
    /// bit-for-bit, which makes normalization idempotent on serialized output.
    pub fn normalize(x: f64, y: f64, z: f64) -> Result<Self> {
        if !(x.is_finite() && y.is_finite() && z.is_finite()) {
            return Err(GtrError::construction("vector components must be finite"));
        }
        let norm = (x * x + y * y + z * z).sqrt();
        if norm == 0.0 {
            return Err(GtrError::construction("cannot normalize a zero vector"));
        }
        if (norm - 1.0).abs() <= 4.0 * f64::EPSILON {
            return Ok(UnitVector3 { x, y, z });
        }
        Ok(UnitVector3 {
            x: x / norm,
            y: y / norm,
            z: z / norm,
        })
    }

    /// `(sin polar cos azimuth, sin polar sin azimuth, cos polar)`.
    pub fn from_spherical(polar: f64, azimuth: f64) -> Self {
        let (sp, cp) = polar.sin_cos();
        let (sa, ca) = azimuth.sin_cos();
        UnitVector3 {
            x: sp * ca,
            y: sp * sa,
            z: cp,
        }
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn components(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn norm(&self) -> f64 {
        self.dot_raw(self).sqrt()
    }

    fn dot_raw(&self, other: &UnitVector3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    /// Dot product clamped into [-1, 1].
    pub fn cosine_to(&self, other: &UnitVector3) -> f64 {
        if self == other {
            return 1.0;
        }
        if *self == -*other {
            return -1.0;
        }
        self.dot_raw(other).clamp(-1.0, 1.0)
    }
}

impl std::ops::Neg for UnitVector3 {
    type Output = UnitVector3;

    fn neg(self) -> UnitVector3 {
        UnitVector3 {
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }
}

/// The diameter a dichotomic measurement is stretched along.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MeasurementAxis {
    yes_anchor: UnitVector3,
}

impl MeasurementAxis {
    pub fn new(yes_anchor: UnitVector3) -> Self {
        MeasurementAxis { yes_anchor }
    }

    pub fn yes_anchor(&self) -> UnitVector3 {
        self.yes_anchor
    }

    pub fn no_anchor(&self) -> UnitVector3 {
        -self.yes_anchor
    }

    /// The same diameter with the outcome labels exchanged.
    pub fn swapped(&self) -> Self {
        MeasurementAxis {
            yes_anchor: self.no_anchor(),
        }
    }
}

/// Position of `state` on the elastic of `axis`: +1 at the yes anchor, -1 at
/// the no anchor.
///
/// A state sitting exactly on an anchor lands exactly on the endpoint, so a
/// repeated measurement is certain to reproduce its outcome.
pub fn landing_coordinate(state: &UnitVector3, axis: &MeasurementAxis) -> f64 {
    state.cosine_to(&axis.yes_anchor)
}

/// Checks that the cosines `x·a`, `x·b`, `a·b` belong to three actual unit
/// vectors, i.e. their Gram matrix is positive semidefinite.
pub fn gram_realizable(cos_theta_a: f64, cos_theta_b: f64, cos_theta: f64) -> Result<bool> {
    for (name, value) in [
        ("cos_theta_A", cos_theta_a),
        ("cos_theta_B", cos_theta_b),
        ("cos_theta", cos_theta),
    ] {
        if !(-1.0..=1.0).contains(&value) {
            return Err(GtrError::domain(format!("{name} = {value} is outside [-1, 1]")));
        }
    }
    Ok(gram_violation(cos_theta_a, cos_theta_b, cos_theta) <= GRAM_TOLERANCE)
}

/// Amount by which the Gram matrix fails to be PSD (0 when realizable).
///
/// All principal minors are checked; for a unit-diagonal 3x3 matrix the 1x1
/// minors are 1 and the 2x2 minors are `1 - c^2`.
pub fn gram_violation(ca: f64, cb: f64, c: f64) -> f64 {
    let det = 1.0 + 2.0 * ca * cb * c - ca * ca - cb * cb - c * c;
    let minors = [det, 1.0 - ca * ca, 1.0 - cb * cb, 1.0 - c * c];
    minors.iter().fold(0.0_f64, |worst, m| worst.max(-m))
}

/// Cosines of the angles between the initial state and two measurement axes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioGeometry {
    #[serde(rename = "cos_theta_A")]
    pub cos_theta_a: f64,
    #[serde(rename = "cos_theta_B")]
    pub cos_theta_b: f64,
    pub cos_theta: f64,
}

impl ScenarioGeometry {
    pub fn new(cos_theta_a: f64, cos_theta_b: f64, cos_theta: f64) -> Result<Self> {
        if !gram_realizable(cos_theta_a, cos_theta_b, cos_theta)? {
            return Err(GtrError::construction(format!(
                "cosines ({cos_theta_a}, {cos_theta_b}, {cos_theta}) are not realizable by unit vectors"
            )));
        }
        Ok(ScenarioGeometry {
            cos_theta_a,
            cos_theta_b,
            cos_theta,
        })
    }

    /// Reads the cosines off explicit vectors.
    pub fn from_vectors(state: &UnitVector3, a: &MeasurementAxis, b: &MeasurementAxis) -> Self {
        ScenarioGeometry {
            cos_theta_a: landing_coordinate(state, a),
            cos_theta_b: landing_coordinate(state, b),
            cos_theta: landing_coordinate(&b.yes_anchor(), a),
        }
    }

    /// Builds a canonical realization: `a_y` on the z axis, `b_y` in the
    /// x-z plane, and the state on the `y >= 0` side.
    pub fn realize(&self) -> (UnitVector3, MeasurementAxis, MeasurementAxis) {
        let ScenarioGeometry {
            cos_theta_a: ca,
            cos_theta_b: cb,
            cos_theta: c,
        } = *self;
        let sin_theta = (1.0 - c * c).max(0.0).sqrt();
        let a = UnitVector3 { x: 0.0, y: 0.0, z: 1.0 };
        let b = if sin_theta == 0.0 {
            UnitVector3 {
                x: 0.0,
                y: 0.0,
                z: c.signum(),
            }
        } else {
            UnitVector3 {
                x: sin_theta,
                y: 0.0,
                z: c,
            }
        };
        let sin_a = (1.0 - ca * ca).max(0.0).sqrt();
        let x1 = if sin_theta > 1e-12 {
            ((cb - ca * c) / sin_theta).clamp(-sin_a, sin_a)
        } else {
            sin_a
        };
        let x2 = (1.0 - ca * ca - x1 * x1).max(0.0).sqrt();
        let state = UnitVector3::normalize(x1, x2, ca).expect("z component keeps the vector nonzero");
        (state, MeasurementAxis::new(a), MeasurementAxis::new(b))
    }
}
