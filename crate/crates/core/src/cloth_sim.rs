//! Position-based-dynamics cloth with capsule-arm collision, a rigid gripper
//! attachment, and a garment-to-arm force proxy.
//!
//! Each step splits `dt` into `substeps`. Every substep predicts positions
//! under gravity, runs `solver_iterations` Gauss-Seidel sweeps over the
//! stretch, shear and bend springs followed by capsule collision projection,
//! then derives velocities from the position change.

use nalgebra::Rotation3;
use serde::{Deserialize, Serialize};

use crate::arm_model::{arm_distance, arm_distance_detail, ArmGeometry, BodyParams, Vec3};
use crate::env::Action;
use crate::garment::GarmentMesh;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SimError {
    #[error("simulation diverged: particle {particle} is not finite")]
    Diverged { particle: usize },
    #[error("cannot attach gripper: grasp set is empty")]
    EmptyGrasp,
    #[error("invalid simulation parameters: {0}")]
    InvalidParams(String),
    #[error("state has {state} particles but the cloth model has {model}")]
    SizeMismatch { state: usize, model: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimParams {
    pub stretch_stiffness: f64,
    pub bend_stiffness: f64,
    pub shear_stiffness: f64,
    pub particle_radius: f64,
    pub friction: f64,
    pub dt: f64,
    pub solver_iterations: usize,
    pub substeps: usize,
    /// Signed acceleration along world z, m/s^2.
    pub gravity: f64,
    /// kg per free particle.
    pub particle_mass: f64,
    /// Fractional velocity loss per second.
    pub velocity_damping: f64,
    /// `settle` stops once every particle is slower than this, m/s.
    pub settle_speed_threshold: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            stretch_stiffness: 0.3,
            bend_stiffness: 0.3,
            shear_stiffness: 0.3,
            particle_radius: 0.00625,
            friction: 0.3,
            dt: 0.01,
            solver_iterations: 4,
            substeps: 16,
            gravity: -9.81,
            particle_mass: 0.002,
            velocity_damping: 4.0,
            settle_speed_threshold: 0.01,
        }
    }
}

impl SimParams {
    pub fn validate(&self) -> Result<(), SimError> {
        let stiff = [self.stretch_stiffness, self.bend_stiffness, self.shear_stiffness];
        if stiff.iter().any(|k| !(0.0..=1.0).contains(k)) {
            return Err(SimError::InvalidParams("stiffness must lie in [0, 1]".into()));
        }
        if !(self.dt > 0.0) || self.solver_iterations == 0 || self.substeps == 0 {
            return Err(SimError::InvalidParams("dt > 0, iterations >= 1 and substeps >= 1 required".into()));
        }
        if !(self.particle_mass > 0.0) || self.particle_radius < 0.0 || self.friction < 0.0 || self.velocity_damping < 0.0 {
            return Err(SimError::InvalidParams("mass, radius, friction and damping must be non-negative".into()));
        }
        Ok(())
    }

    /// Per-iteration stiffness so that `iterations` sweeps compound to `k`.
    pub fn iteration_stiffness(k: f64, iterations: usize) -> f64 {
        1.0 - (1.0 - k).powf(1.0 / iterations as f64)
    }
}

/// Gripper position with yaw (about z) and pitch (about y); roll is always zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GripperPose {
    pub position: Vec3,
    pub yaw: f64,
    pub pitch: f64,
}

impl GripperPose {
    pub fn at(position: Vec3) -> Self {
        Self { position, yaw: 0.0, pitch: 0.0 }
    }

    pub fn rotation(&self) -> Rotation3<f64> {
        Rotation3::from_axis_angle(&Vec3::z_axis(), self.yaw) * Rotation3::from_axis_angle(&Vec3::y_axis(), self.pitch)
    }

    pub fn transform(&self, local: &Vec3) -> Vec3 {
        self.position + self.rotation() * local
    }

    /// Applies a delta; rotation components are (roll, pitch, yaw) and roll is ignored.
    pub fn apply(&self, action: &Action) -> Self {
        Self {
            position: self.position + action.translation,
            yaw: self.yaw + action.rotation.z,
            pitch: self.pitch + action.rotation.y,
        }
    }

    fn lerp(&self, to: &GripperPose, t: f64) -> Self {
        Self {
            position: self.position + (to.position - self.position) * t,
            yaw: self.yaw + (to.yaw - self.yaw) * t,
            pitch: self.pitch + (to.pitch - self.pitch) * t,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpringKind {
    Stretch,
    Shear,
    Bend,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceConstraint {
    pub i: usize,
    pub j: usize,
    pub rest: f64,
    pub kind: SpringKind,
}

/// Spring topology with rest lengths, plus the opening ring for force/distance outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClothModel {
    pub num_particles: usize,
    pub constraints: Vec<DistanceConstraint>,
    pub ring: Vec<usize>,
    pub grasp: Vec<usize>,
}

impl ClothModel {
    pub fn from_mesh(mesh: &GarmentMesh) -> Self {
        let v = &mesh.vertices;
        let mk = |e: &[usize; 2], kind| DistanceConstraint { i: e[0], j: e[1], rest: (v[e[0]] - v[e[1]]).norm(), kind };
        let constraints = mesh
            .stretch_edges
            .iter()
            .map(|e| mk(e, SpringKind::Stretch))
            .chain(mesh.shear_edges.iter().map(|e| mk(e, SpringKind::Shear)))
            .chain(mesh.bend_pairs.iter().map(|e| mk(e, SpringKind::Bend)))
            .collect();
        Self { num_particles: v.len(), constraints, ring: mesh.opening_ring.clone(), grasp: mesh.grasp_vertices.clone() }
    }

    pub fn stretch_ratio_max(&self, positions: &[Vec3]) -> f64 {
        self.constraints
            .iter()
            .filter(|c| c.kind == SpringKind::Stretch && c.rest > 0.0)
            .map(|c| (positions[c.i] - positions[c.j]).norm() / c.rest)
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClothState {
    pub positions: Vec<Vec3>,
    pub velocities: Vec<Vec3>,
    pub inverse_masses: Vec<f64>,
    pub gripper: GripperPose,
    /// Pinned particle and its fixed offset in the gripper frame.
    pub attachments: Vec<(usize, Vec3)>,
}

impl ClothState {
    /// Free particles at the given positions, at rest.
    pub fn new(positions: Vec<Vec3>, particle_mass: f64) -> Self {
        let n = positions.len();
        Self {
            positions,
            velocities: vec![Vec3::zeros(); n],
            inverse_masses: vec![1.0 / particle_mass; n],
            gripper: GripperPose::at(Vec3::zeros()),
            attachments: Vec::new(),
        }
    }

    pub fn max_speed(&self) -> f64 {
        self.velocities.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn ring_center(&self, ring: &[usize]) -> Vec3 {
        ring.iter().fold(Vec3::zeros(), |a, &i| a + self.positions[i]) / ring.len().max(1) as f64
    }

    pub fn is_pinned(&self, i: usize) -> bool {
        self.inverse_masses[i] == 0.0
    }
}

/// Posed arm used for collision and distance queries.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmBody {
    pub geom: ArmGeometry,
    pub body: BodyParams,
}

impl ArmBody {
    pub fn distance(&self, p: &Vec3) -> f64 {
        arm_distance(p, &self.geom, &self.body)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub new_state: ClothState,
    /// Sum of collision corrections times mass over dt^2 (simulator force units).
    pub total_arm_force: f64,
    /// Gripper-to-arm distance `d_e`, meters.
    pub min_gripper_arm_distance: f64,
    /// Opening-center-to-arm distance `d_g`, meters.
    pub center_arm_distance: f64,
}

pub fn attach_gripper(state: &ClothState, grasp: &[usize], gripper: GripperPose) -> Result<ClothState, SimError> {
    if grasp.is_empty() {
        return Err(SimError::EmptyGrasp);
    }
    let mut out = state.clone();
    let inv_rot = gripper.rotation().inverse();
    out.attachments = grasp.iter().map(|&i| (i, inv_rot * (state.positions[i] - gripper.position))).collect();
    for &i in grasp {
        out.inverse_masses[i] = 0.0;
        out.velocities[i] = Vec3::zeros();
    }
    out.gripper = gripper;
    Ok(out)
}

fn project_distance(p: &mut [Vec3], w: &[f64], c: &DistanceConstraint, k: f64) {
    let (wi, wj) = (w[c.i], w[c.j]);
    let wsum = wi + wj;
    if wsum <= 0.0 {
        return;
    }
    let d = p[c.i] - p[c.j];
    let len = d.norm();
    if len < 1e-12 {
        return;
    }
    let corr = d * (k * (len - c.rest) / (wsum * len));
    p[c.i] -= corr * wi;
    p[c.j] += corr * wj;
}

/// Pushes a free particle out of the arm and clamps its tangential slip.
/// Returns the magnitude of the normal correction.
fn resolve_collision(p: &mut Vec3, start: &Vec3, arm: &ArmBody, params: &SimParams) -> f64 {
    let hit = arm_distance_detail(p, &arm.geom, &arm.body);
    if hit.distance >= params.particle_radius {
        return 0.0;
    }
    let radius = match hit.part {
        crate::arm_model::ArmPart::Forearm => arm.body.forearm_radius,
        crate::arm_model::ArmPart::UpperArm => arm.body.upper_arm_radius,
    };
    let offset = *p - hit.axis_point;
    let normal = offset
        .try_normalize(1e-12)
        .or_else(|| (*start - hit.axis_point).try_normalize(1e-12))
        .unwrap_or_else(Vec3::z);
    let target = hit.axis_point + normal * (radius + params.particle_radius);
    let dn = (target - *p).norm();
    *p = target;
    let disp = *p - start;
    let tangential = disp - normal * disp.dot(&normal);
    let t_len = tangential.norm();
    if t_len > 0.0 {
        let limit = params.friction * dn;
        if t_len <= limit {
            *p -= tangential;
        } else {
            *p -= tangential * (limit / t_len);
        }
    }
    dn
}

pub fn step(
    state: &ClothState,
    model: &ClothModel,
    params: &SimParams,
    arm: Option<&ArmBody>,
    action: &Action,
) -> Result<StepOutcome, SimError> {
    if state.positions.len() != model.num_particles {
        return Err(SimError::SizeMismatch { state: state.positions.len(), model: model.num_particles });
    }
    let mut x = state.positions.clone();
    let mut vel = state.velocities.clone();
    let w = &state.inverse_masses;
    let start_pose = state.gripper;
    let end_pose = state.gripper.apply(action);
    let h = params.dt / params.substeps as f64;
    let iters = params.solver_iterations;
    let k_stretch = SimParams::iteration_stiffness(params.stretch_stiffness, iters);
    let k_shear = SimParams::iteration_stiffness(params.shear_stiffness, iters);
    let k_bend = SimParams::iteration_stiffness(params.bend_stiffness, iters);
    let gravity = Vec3::new(0.0, 0.0, params.gravity);
    let damping = (1.0 - params.velocity_damping * h).max(0.0);
    let mut correction_sum = 0.0;

    let mut p = x.clone();
    for s in 1..=params.substeps {
        let pose = if s == params.substeps { end_pose } else { start_pose.lerp(&end_pose, s as f64 / params.substeps as f64) };
        for i in 0..x.len() {
            if w[i] > 0.0 {
                vel[i] = (vel[i] + gravity * h) * damping;
                p[i] = x[i] + vel[i] * h;
            }
        }
        for &(i, off) in &state.attachments {
            p[i] = pose.transform(&off);
        }
        for _ in 0..iters {
            for c in &model.constraints {
                let k = match c.kind {
                    SpringKind::Stretch => k_stretch,
                    SpringKind::Shear => k_shear,
                    SpringKind::Bend => k_bend,
                };
                project_distance(&mut p, w, c, k);
            }
            if let Some(arm) = arm {
                for i in 0..p.len() {
                    if w[i] > 0.0 {
                        correction_sum += resolve_collision(&mut p[i], &x[i], arm, params);
                    }
                }
            }
        }
        for i in 0..x.len() {
            vel[i] = (p[i] - x[i]) / h;
            x[i] = p[i];
        }
    }

    if let Some(bad) = x.iter().zip(&vel).position(|(a, b)| !(a.iter().all(|v| v.is_finite()) && b.iter().all(|v| v.is_finite()))) {
        return Err(SimError::Diverged { particle: bad });
    }

    let new_state = ClothState {
        positions: x,
        velocities: vel,
        inverse_masses: state.inverse_masses.clone(),
        gripper: end_pose,
        attachments: state.attachments.clone(),
    };
    let (d_e, d_g) = match arm {
        Some(arm) => (arm.distance(&end_pose.position), arm.distance(&new_state.ring_center(&model.ring))),
        None => (f64::INFINITY, f64::INFINITY),
    };
    Ok(StepOutcome {
        new_state,
        total_arm_force: correction_sum * params.particle_mass / (params.dt * params.dt),
        min_gripper_arm_distance: d_e,
        center_arm_distance: d_g,
    })
}

/// Runs zero-action steps until the cloth is quiescent or `steps` is exhausted.
pub fn settle(
    state: &ClothState,
    model: &ClothModel,
    params: &SimParams,
    arm: Option<&ArmBody>,
    steps: usize,
) -> Result<ClothState, SimError> {
    let mut cur = state.clone();
    let zero = Action::zero();
    for _ in 0..steps {
        cur = step(&cur, model, params, arm, &zero)?.new_state;
        if cur.max_speed() < params.settle_speed_threshold {
            break;
        }
    }
    Ok(cur)
}
