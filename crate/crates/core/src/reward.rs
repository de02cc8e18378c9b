//! Dressing progress along the two arm segments, the shaped reward, and the
//! dressed-ratio metrics.

use serde::{Deserialize, Serialize};

use crate::arm_model::{ArmGeometry, Vec3};
use crate::cloth_sim::StepOutcome;
use crate::garment::OpeningGeometry;

pub const SUCCESS_THRESHOLD: f64 = 0.8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardParams {
    pub w: f64,
    /// Force threshold in simulator units.
    pub f_max: f64,
    pub force_coeff: f64,
    pub contact_coeff: f64,
    pub d_min: f64,
    pub deviation_near: f64,
    pub deviation_far: f64,
    pub deviation_bonus: f64,
    pub deviation_penalty: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self {
            w: 5.0,
            f_max: DEFAULT_F_MAX,
            force_coeff: 0.001,
            contact_coeff: 0.01,
            d_min: 0.01,
            deviation_near: 0.03,
            deviation_far: 0.075,
            deviation_bonus: 0.02,
            deviation_penalty: 0.05,
        }
    }
}

/// Calibrated against the scripted fixture in `env` tests, where the opening
/// is hung over the forearm and dragged sideways off it; the peak force of
/// that drag just crosses this value.
pub const DEFAULT_F_MAX: f64 = 4.0;

impl RewardParams {
    pub fn is_valid(&self) -> bool {
        let all = [
            self.w,
            self.f_max,
            self.force_coeff,
            self.contact_coeff,
            self.d_min,
            self.deviation_near,
            self.deviation_far,
            self.deviation_bonus,
            self.deviation_penalty,
        ];
        all.iter().all(|v| *v >= 0.0) && self.deviation_near < self.deviation_far
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Approach,
    Forearm,
    UpperArm,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DressProgress {
    pub phase: Phase,
    pub p_int: Option<Vec3>,
    pub forearm_dressed: f64,
    pub upper_dressed: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_m: f64,
    pub r_f: f64,
    pub r_c: f64,
    pub r_d: f64,
    pub r_total: f64,
}

/// The simulator quantities the penalties read.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContactMeasurements {
    pub force: f64,
    pub d_e: f64,
    pub d_g: f64,
}

impl From<&StepOutcome> for ContactMeasurements {
    fn from(o: &StepOutcome) -> Self {
        Self { force: o.total_arm_force, d_e: o.min_gripper_arm_distance, d_g: o.center_arm_distance }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub upper_ratio: f64,
    pub whole_ratio: f64,
    pub success: bool,
}

const EDGE_TOL: f64 = 1e-9;

fn cross2(a: (f64, f64), b: (f64, f64)) -> f64 {
    a.0 * b.1 - a.1 * b.0
}

/// Point-in-triangle in 2D with an absolute edge tolerance.
fn in_triangle(p: (f64, f64), a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> bool {
    let sub = |x: (f64, f64), y: (f64, f64)| (x.0 - y.0, x.1 - y.1);
    let area = cross2(sub(b, a), sub(c, a));
    if area.abs() < 1e-300 {
        return false;
    }
    let sign = area.signum();
    let edge = |u: (f64, f64), v: (f64, f64)| {
        let e = sub(v, u);
        let len = (e.0 * e.0 + e.1 * e.1).sqrt().max(1e-300);
        sign * cross2(e, sub(p, u)) / len >= -EDGE_TOL
    };
    edge(a, b) && edge(b, c) && edge(c, a)
}

/// Crossing of a segment with the opening hexagon. The hexagon is projected
/// into its plane and treated as the fan of triangles around the opening
/// center, which coincides with the polygon itself whenever it is convex.
pub fn hexagon_segment_intersection(hex: &OpeningGeometry, a: &Vec3, b: &Vec3) -> Option<Vec3> {
    if hex.degenerate {
        return None;
    }
    let n = hex.plane_normal;
    let d = b - a;
    let len = d.norm();
    if len == 0.0 {
        return None;
    }
    let denom = n.dot(&d);
    if (denom / len).abs() < 1e-9 {
        return None;
    }
    let t = n.dot(&(hex.p_center - a)) / denom;
    if !(-1e-12..=1.0 + 1e-12).contains(&t) {
        return None;
    }
    let hit = a + d * t.clamp(0.0, 1.0);
    let u_axis = (hex.hexagon[0] - hex.p_center - n * n.dot(&(hex.hexagon[0] - hex.p_center)))
        .try_normalize(1e-15)
        .unwrap_or_else(|| n.cross(&Vec3::x()).try_normalize(1e-9).unwrap_or_else(|| n.cross(&Vec3::y()).normalize()));
    let v_axis = n.cross(&u_axis);
    let to2 = |p: &Vec3| {
        let r = p - hex.p_center;
        (r.dot(&u_axis), r.dot(&v_axis))
    };
    let p = to2(&hit);
    let c = (0.0, 0.0);
    let inside = (0..6).any(|i| in_triangle(p, c, to2(&hex.hexagon[i]), to2(&hex.hexagon[(i + 1) % 6])));
    inside.then_some(hit)
}

pub fn compute_progress(opening: &OpeningGeometry, geom: &ArmGeometry) -> DressProgress {
    let fore = hexagon_segment_intersection(opening, &geom.finger, &geom.elbow);
    let upper = hexagon_segment_intersection(opening, &geom.elbow, &geom.shoulder);
    let forearm_len = (geom.elbow - geom.finger).norm();
    match (fore, upper) {
        (_, Some(p)) => DressProgress {
            phase: Phase::UpperArm,
            p_int: Some(p),
            forearm_dressed: forearm_len,
            upper_dressed: (p - geom.elbow).norm(),
        },
        (Some(p), None) => DressProgress {
            phase: Phase::Forearm,
            p_int: Some(p),
            forearm_dressed: (p - geom.finger).norm(),
            upper_dressed: 0.0,
        },
        (None, None) => DressProgress { phase: Phase::Approach, p_int: None, forearm_dressed: 0.0, upper_dressed: 0.0 },
    }
}

pub fn main_reward(progress: &DressProgress, p_center: &Vec3, geom: &ArmGeometry, w: f64) -> f64 {
    match (progress.phase, progress.p_int) {
        (Phase::Forearm, Some(p)) => (p - geom.finger).norm(),
        (Phase::UpperArm, Some(p)) => (geom.elbow - geom.finger).norm() + w * (p - geom.elbow).norm(),
        _ => -(p_center - geom.finger).norm(),
    }
}

pub fn compute_reward(
    progress: &DressProgress,
    p_center: &Vec3,
    contact: &ContactMeasurements,
    geom: &ArmGeometry,
    params: &RewardParams,
) -> RewardBreakdown {
    let r_m = main_reward(progress, p_center, geom, params.w);
    let r_f = -params.force_coeff * (contact.force - params.f_max).max(0.0);
    let r_c = if contact.d_e < params.d_min { -params.contact_coeff } else { 0.0 };
    let r_d = if contact.d_g < params.deviation_near {
        params.deviation_bonus
    } else if contact.d_g > params.deviation_far {
        -params.deviation_penalty
    } else {
        0.0
    };
    RewardBreakdown { r_m, r_f, r_c, r_d, r_total: r_m + r_f + r_c + r_d }
}

pub fn compute_metrics(progress: &DressProgress, geom: &ArmGeometry) -> Metrics {
    let fore_len = (geom.elbow - geom.finger).norm();
    let upper_len = (geom.shoulder - geom.elbow).norm();
    let upper_ratio = (progress.upper_dressed / upper_len).clamp(0.0, 1.0);
    let whole_ratio = ((progress.forearm_dressed + progress.upper_dressed) / (fore_len + upper_len)).clamp(0.0, 1.0);
    Metrics { upper_ratio, whole_ratio, success: upper_ratio >= SUCCESS_THRESHOLD }
}
