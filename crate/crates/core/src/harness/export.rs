//! Episode logs and their export as ASCII PLY frames plus a JSONL step log.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{io_err, Result};
use crate::arm_model::{ArmPose, Vec3};
use crate::cloth_sim::ArmBody;
use crate::env::{RawAction, StepInfo};

/// Per-step log line. `r_total` is the sum of the four components.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub action: RawAction,
    pub r_total: f64,
    pub r_m: f64,
    pub r_f: f64,
    pub r_c: f64,
    pub r_d: f64,
    pub upper_ratio: f64,
    pub whole_ratio: f64,
    pub success: bool,
    pub force: f64,
}

impl StepRecord {
    pub fn new(step: usize, action: RawAction, reward: f64, info: &StepInfo) -> Self {
        Self {
            step,
            action,
            r_total: reward,
            r_m: info.r_m,
            r_f: info.r_f,
            r_c: info.r_c,
            r_d: info.r_d,
            upper_ratio: info.upper_ratio,
            whole_ratio: info.whole_ratio,
            success: info.success,
            force: info.force,
        }
    }
}

/// Scene geometry after one step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub cloth: Vec<Vec3>,
    pub arm: Vec<Vec3>,
    pub gripper: Vec3,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub garment: usize,
    pub garment_name: String,
    pub subrange: usize,
    pub pose: ArmPose,
    /// Joint change applied after the arm capture.
    pub delta: ArmPose,
    pub steps: Vec<StepRecord>,
    /// Empty unless the episode was recorded.
    pub frames: Vec<Frame>,
    pub final_info: StepInfo,
}

/// Deterministic samples on both capsule surfaces: `rings` cross-sections
/// per segment with `per_ring` points each.
pub fn capsule_surface_points(arm: &ArmBody, rings: usize, per_ring: usize) -> Vec<Vec3> {
    let g = &arm.geom;
    let segs = [
        (g.shoulder, g.elbow, g.upper_arm_axis, arm.body.upper_arm_radius),
        (g.elbow, g.finger, g.forearm_axis, arm.body.forearm_radius),
    ];
    let mut out = Vec::with_capacity(2 * rings * per_ring);
    for (a, b, axis, r) in segs {
        let helper = if axis.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
        let u = axis.cross(&helper).normalize();
        let v = axis.cross(&u);
        for i in 0..rings {
            let t = (i as f64 + 0.5) / rings as f64;
            let c = a + (b - a) * t;
            for k in 0..per_ring {
                let th = std::f64::consts::TAU * k as f64 / per_ring as f64;
                out.push(c + (u * th.cos() + v * th.sin()) * r);
            }
        }
    }
    out
}

fn ply_text(frame: &Frame) -> String {
    let n = frame.cloth.len() + frame.arm.len() + 1;
    let mut s = String::new();
    let _ = write!(
        s,
        "ply\nformat ascii 1.0\ncomment class 0 garment, 1 arm, 2 gripper\nelement vertex {n}\n\
         property double x\nproperty double y\nproperty double z\nproperty uchar class\nend_header\n"
    );
    let tagged = frame
        .cloth
        .iter()
        .map(|p| (p, 0))
        .chain(frame.arm.iter().map(|p| (p, 1)))
        .chain(std::iter::once((&frame.gripper, 2)));
    for (p, c) in tagged {
        let _ = writeln!(s, "{:?} {:?} {:?} {c}", p.x, p.y, p.z);
    }
    s
}

/// Writes `frame_NNNN.ply` per recorded frame and `steps.jsonl`; returns the
/// written paths.
pub fn export_trajectory(log: &EpisodeLog, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::with_capacity(log.frames.len() + 1);
    for (k, f) in log.frames.iter().enumerate() {
        let p = dir.join(format!("frame_{k:04}.ply"));
        std::fs::write(&p, ply_text(f)).map_err(io_err(&p))?;
        written.push(p);
    }
    let p = dir.join("steps.jsonl");
    let mut file = std::io::BufWriter::new(std::fs::File::create(&p).map_err(io_err(&p))?);
    for s in &log.steps {
        let line = serde_json::to_string(s)?;
        writeln!(file, "{line}").map_err(io_err(&p))?;
    }
    file.flush().map_err(io_err(&p))?;
    written.push(p);
    Ok(written)
}
