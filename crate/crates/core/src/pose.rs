//! 6-DoF poses: a position in meters and a unit-quaternion orientation.

use std::fmt;

use nalgebra::{Quaternion, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose6D {
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
}

impl Pose6D {
    pub fn new(position: Vector3<f64>, orientation: UnitQuaternion<f64>) -> Self {
        Self {
            position,
            orientation,
        }
    }

    pub fn from_xyz(x: f64, y: f64, z: f64) -> Self {
        Self::new(Vector3::new(x, y, z), UnitQuaternion::identity())
    }

    /// Tool z-axis pointing straight down (half turn about world x).
    pub fn gripper_down_orientation() -> UnitQuaternion<f64> {
        UnitQuaternion::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI)
    }

    /// Tool z-axis pointing along world +x, toward the workspace.
    pub fn gripper_forward_orientation() -> UnitQuaternion<f64> {
        UnitQuaternion::from_axis_angle(&Vector3::y_axis(), std::f64::consts::FRAC_PI_2)
    }

    pub fn with_position(mut self, position: Vector3<f64>) -> Self {
        self.position = position;
        self
    }

    pub fn with_orientation(mut self, orientation: UnitQuaternion<f64>) -> Self {
        self.orientation = orientation;
        self
    }

    /// `self ∘ other`: `other` expressed in the frame of `self`.
    pub fn compose(&self, other: &Pose6D) -> Pose6D {
        let mut orientation = self.orientation * other.orientation;
        orientation.renormalize();
        Pose6D {
            position: self.position + self.orientation * other.position,
            orientation,
        }
    }

    pub fn inverse(&self) -> Pose6D {
        let inv = self.orientation.inverse();
        Pose6D {
            position: -(inv * self.position),
            orientation: inv,
        }
    }

    /// Candidate offset: translation added in the world frame, rotation
    /// applied in the tool frame (`orientation * rotation`).
    pub fn offset(&self, translation: &Vector3<f64>, rotation: &UnitQuaternion<f64>) -> Pose6D {
        let mut orientation = self.orientation * rotation;
        orientation.renormalize();
        Pose6D {
            position: self.position + translation,
            orientation,
        }
    }

    /// Rotation angle (radians, in `[0, π]`) between the two orientations.
    pub fn angle_to(&self, other: &Pose6D) -> f64 {
        self.orientation.angle_to(&other.orientation)
    }

    pub fn distance_to(&self, other: &Pose6D) -> f64 {
        (self.position - other.position).norm()
    }

    /// Roll/pitch/yaw in degrees.
    pub fn rpy_degrees(&self) -> [f64; 3] {
        let (r, p, y) = self.orientation.euler_angles();
        [r.to_degrees(), p.to_degrees(), y.to_degrees()]
    }
}

impl Default for Pose6D {
    fn default() -> Self {
        Self::from_xyz(0.0, 0.0, 0.0)
    }
}

impl fmt::Display for Pose6D {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = self.position;
        let [r, pi, y] = self.rpy_degrees();
        write!(
            f,
            "pos=({:.3}, {:.3}, {:.3}) m rpy=({:.1}, {:.1}, {:.1}) deg",
            p.x, p.y, p.z, r, pi, y
        )
    }
}

#[derive(Serialize, Deserialize)]
struct PoseRepr {
    position: [f64; 3],
    /// `[w, x, y, z]`
    orientation: [f64; 4],
}

impl Serialize for Pose6D {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let q = self.orientation.quaternion();
        PoseRepr {
            position: [self.position.x, self.position.y, self.position.z],
            orientation: [q.w, q.i, q.j, q.k],
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Pose6D {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = PoseRepr::deserialize(d)?;
        let [w, i, j, k] = r.orientation;
        let q = Quaternion::new(w, i, j, k);
        if !(q.norm() > 0.0) {
            return Err(serde::de::Error::custom("orientation quaternion has zero norm"));
        }
        // Keep already-unit quaternions bit-exact so encode/decode round-trips.
        let orientation = if (q.norm() - 1.0).abs() < 1e-12 {
            Unit::new_unchecked(q)
        } else {
            Unit::new_normalize(q)
        };
        Ok(Pose6D {
            position: Vector3::from(r.position),
            orientation,
        })
    }
}
