//! Parametric right-arm model: joint angles, forward kinematics onto two
//! capsules, capsule distance queries, and the 3x3x3 pose-range partition.
//!
//! Shoulder frame: +x along the rest-pose arm, +z up. `phi1` lifts the whole
//! arm about the shoulder's y axis, `phi2` bends the forearm inward about the
//! elbow's z axis (toward +y), `phi3` lifts the forearm about the elbow's y
//! axis. Rotations compose in the order phi1, phi2, phi3. Positive `phi1` and
//! `phi3` raise the distal point (+z).

use nalgebra::{Rotation3, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub type Vec3 = Vector3<f64>;

/// Training distribution bounds in degrees, per joint.
pub const PHI1_RANGE: [f64; 2] = [-20.0, 30.0];
pub const PHI2_RANGE: [f64; 2] = [-20.0, 20.0];
pub const PHI3_RANGE: [f64; 2] = [-20.0, 30.0];

const PHI1_CUTS: [[f64; 2]; 3] = [[-20.0, -8.0], [-8.0, 18.0], [18.0, 30.0]];
const PHI2_CUTS: [[f64; 2]; 3] = [[-20.0, -8.0], [-8.0, 8.0], [8.0, 20.0]];
const PHI3_CUTS: [[f64; 2]; 3] = [[-20.0, -3.0], [-3.0, 14.0], [14.0, 30.0]];

pub const NUM_SUBRANGES: usize = 27;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ArmError {
    #[error("invalid body parameters: {0}")]
    InvalidBody(String),
    #[error("sub-range index {0} is outside 0..27")]
    BadSubRange(usize),
}

/// Joint angles in degrees.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmPose {
    pub phi1: f64,
    pub phi2: f64,
    pub phi3: f64,
}

impl ArmPose {
    pub fn new(phi1: f64, phi2: f64, phi3: f64) -> Self {
        Self { phi1, phi2, phi3 }
    }

    /// False for poses outside the training box (used by perturbation runs).
    pub fn in_training_range(&self) -> bool {
        let inside = |v: f64, r: [f64; 2]| v >= r[0] && v <= r[1];
        inside(self.phi1, PHI1_RANGE) && inside(self.phi2, PHI2_RANGE) && inside(self.phi3, PHI3_RANGE)
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.phi1, self.phi2, self.phi3]
    }
}

/// Capsule dimensions of the arm, meters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BodyParams {
    pub upper_arm_length: f64,
    pub forearm_length: f64,
    pub upper_arm_radius: f64,
    pub forearm_radius: f64,
    pub shoulder_position: Vec3,
}

impl Default for BodyParams {
    fn default() -> Self {
        Self {
            upper_arm_length: 0.30,
            forearm_length: 0.25,
            upper_arm_radius: 0.045,
            forearm_radius: 0.035,
            shoulder_position: Vec3::zeros(),
        }
    }
}

impl BodyParams {
    pub fn validate(&self) -> Result<(), ArmError> {
        let vals = [self.upper_arm_length, self.forearm_length, self.upper_arm_radius, self.forearm_radius];
        if vals.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(ArmError::InvalidBody("lengths and radii must be positive".into()));
        }
        if self.upper_arm_radius >= self.upper_arm_length || self.forearm_radius >= self.forearm_length {
            return Err(ArmError::InvalidBody("radius must be smaller than its segment length".into()));
        }
        if !self.shoulder_position.iter().all(|v| v.is_finite()) {
            return Err(ArmError::InvalidBody("shoulder position must be finite".into()));
        }
        Ok(())
    }

    pub fn total_length(&self) -> f64 {
        self.upper_arm_length + self.forearm_length
    }

    pub fn max_radius(&self) -> f64 {
        self.upper_arm_radius.max(self.forearm_radius)
    }
}

/// Key points of a posed arm.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmGeometry {
    pub shoulder: Vec3,
    pub elbow: Vec3,
    pub finger: Vec3,
    /// Unit vector elbow -> finger.
    pub forearm_axis: Vec3,
    /// Unit vector shoulder -> elbow.
    pub upper_arm_axis: Vec3,
}

impl ArmGeometry {
    /// Applies a rigid transform `p -> rotation * (p - pivot) + pivot + translation`.
    pub fn transformed(&self, rotation: &Rotation3<f64>, pivot: &Vec3, translation: &Vec3) -> Self {
        let tf = |p: &Vec3| rotation * (p - pivot) + pivot + translation;
        Self {
            shoulder: tf(&self.shoulder),
            elbow: tf(&self.elbow),
            finger: tf(&self.finger),
            forearm_axis: rotation * self.forearm_axis,
            upper_arm_axis: rotation * self.upper_arm_axis,
        }
    }

    /// Unit normal of the finger-elbow-shoulder plane, or `None` for a straight arm.
    pub fn arm_plane_normal(&self) -> Option<Vec3> {
        let n = (self.finger - self.elbow).cross(&(self.shoulder - self.elbow));
        let len = n.norm();
        (len > 1e-9).then(|| n / len)
    }
}

fn rot_y(deg: f64) -> Rotation3<f64> {
    Rotation3::from_axis_angle(&Vec3::y_axis(), deg.to_radians())
}

fn rot_z(deg: f64) -> Rotation3<f64> {
    Rotation3::from_axis_angle(&Vec3::z_axis(), deg.to_radians())
}

pub fn forward_kinematics(pose: &ArmPose, body: &BodyParams) -> ArmGeometry {
    // A right-handed rotation about +y by a positive angle tips +x toward -z,
    // so lifting uses the negated angle.
    let upper = rot_y(-pose.phi1);
    let fore = upper * rot_z(pose.phi2) * rot_y(-pose.phi3);
    let upper_arm_axis = upper * Vec3::x();
    let forearm_axis = fore * Vec3::x();
    let shoulder = body.shoulder_position;
    let elbow = shoulder + upper_arm_axis * body.upper_arm_length;
    let finger = elbow + forearm_axis * body.forearm_length;
    ArmGeometry { shoulder, elbow, finger, forearm_axis, upper_arm_axis }
}

/// One cell of the pose-range partition. Intervals are `[min, max]` degrees.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseSubRange {
    pub index: usize,
    pub phi1: [f64; 2],
    pub phi2: [f64; 2],
    pub phi3: [f64; 2],
}

impl PoseSubRange {
    /// Index order: `phi1` slowest, `phi3` fastest (`index = 9*i1 + 3*i2 + i3`).
    pub fn from_index(index: usize) -> Result<Self, ArmError> {
        if index >= NUM_SUBRANGES {
            return Err(ArmError::BadSubRange(index));
        }
        Ok(Self {
            index,
            phi1: PHI1_CUTS[index / 9],
            phi2: PHI2_CUTS[(index / 3) % 3],
            phi3: PHI3_CUTS[index % 3],
        })
    }

    /// Closed-interval membership.
    pub fn contains(&self, pose: &ArmPose) -> bool {
        let inside = |v: f64, r: [f64; 2]| v >= r[0] && v <= r[1];
        inside(pose.phi1, self.phi1) && inside(pose.phi2, self.phi2) && inside(pose.phi3, self.phi3)
    }

    pub fn center(&self) -> ArmPose {
        let mid = |r: [f64; 2]| 0.5 * (r[0] + r[1]);
        ArmPose::new(mid(self.phi1), mid(self.phi2), mid(self.phi3))
    }
}

pub fn decompose_pose_range() -> Vec<PoseSubRange> {
    (0..NUM_SUBRANGES).map(|i| PoseSubRange::from_index(i).expect("index in range")).collect()
}

/// Sub-range containing `pose`; shared boundaries resolve to the lowest index.
pub fn subrange_of(pose: &ArmPose) -> Option<usize> {
    decompose_pose_range().iter().find(|s| s.contains(pose)).map(|s| s.index)
}

pub fn sample_pose<R: Rng + ?Sized>(subrange: &PoseSubRange, rng: &mut R) -> ArmPose {
    let mut draw = |r: [f64; 2]| if r[0] == r[1] { r[0] } else { rng.random_range(r[0]..=r[1]) };
    let phi1 = draw(subrange.phi1);
    let phi2 = draw(subrange.phi2);
    let phi3 = draw(subrange.phi3);
    ArmPose { phi1, phi2, phi3 }
}

/// Closest point on segment `a`-`b` to `p`.
pub fn closest_point_on_segment(p: &Vec3, a: &Vec3, b: &Vec3) -> Vec3 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 <= f64::EPSILON {
        return *a;
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    a + ab * t
}

pub fn point_segment_distance(p: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
    (p - closest_point_on_segment(p, a, b)).norm()
}

/// Which capsule a distance query resolved to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ArmPart {
    Forearm,
    UpperArm,
}

/// Signed distance result with the nearest axis point for collision response.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ArmDistance {
    pub distance: f64,
    pub part: ArmPart,
    pub axis_point: Vec3,
}

pub fn arm_distance_detail(point: &Vec3, geom: &ArmGeometry, body: &BodyParams) -> ArmDistance {
    let fa = closest_point_on_segment(point, &geom.elbow, &geom.finger);
    let ua = closest_point_on_segment(point, &geom.shoulder, &geom.elbow);
    let df = (point - fa).norm() - body.forearm_radius;
    let du = (point - ua).norm() - body.upper_arm_radius;
    if df <= du {
        ArmDistance { distance: df, part: ArmPart::Forearm, axis_point: fa }
    } else {
        ArmDistance { distance: du, part: ArmPart::UpperArm, axis_point: ua }
    }
}

/// Signed distance to the union of the two capsules; negative inside.
pub fn arm_distance(point: &Vec3, geom: &ArmGeometry, body: &BodyParams) -> f64 {
    arm_distance_detail(point, geom, body).distance
}
