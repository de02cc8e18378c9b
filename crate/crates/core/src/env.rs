//! Dressing POMDP: reset (sample garment, body and pose, drape, grasp), step
//! (scale the raw action, simulate, observe, reward) and termination. Also a
//! cloth-free fingertip-reach environment built on the same observation
//! format, used as a learning sanity check.

use std::path::PathBuf;
use std::sync::Arc;

use nalgebra::Rotation3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arm_model::{
    forward_kinematics, sample_pose, ArmError, ArmGeometry, ArmPose, BodyParams, PoseSubRange, Vec3, NUM_SUBRANGES,
};
use crate::cloth_sim::{self, attach_gripper, settle, ArmBody, ClothModel, ClothState, GripperPose, SimError, SimParams};
use crate::garment::{generate_sleeve_garment, load_obj_garment, opening_geometry, GarmentError, GarmentMesh, SleeveParams};
use crate::perception::{
    assemble_observation, crop_arm, randomize_observation, render_arm, render_cloth, Camera, DepthImage, PixelLabel,
    RandomizationDraw, RandomizerConfig, RandomizerMode, SegmentedPointCloud, DEFAULT_ARM_CROP, DEFAULT_VOXEL_SIZE,
};
use crate::reward::{compute_metrics, compute_progress, compute_reward, ContactMeasurements, RewardParams};

pub const ACTION_DIM: usize = 6;
pub type RawAction = [f64; ACTION_DIM];

/// End-effector delta: translation in meters and an axis-angle rotation
/// whose components are (roll, pitch, yaw) in radians.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub translation: Vec3,
    pub rotation: Vec3,
}

impl Action {
    pub fn new(translation: Vec3, rotation: Vec3) -> Self {
        Self { translation, rotation }
    }

    pub fn zero() -> Self {
        Self::new(Vec3::zeros(), Vec3::zeros())
    }

    /// Scales a raw policy output in [-1, 1]^6 to a physical delta. Roll is
    /// dropped and the rotation vector is capped at `max_rotation`.
    pub fn from_raw(raw: &RawAction, max_translation: f64, max_rotation: f64) -> Self {
        let c = |v: f64| if v.is_nan() { 0.0 } else { v.clamp(-1.0, 1.0) };
        let translation = Vec3::new(c(raw[0]), c(raw[1]), c(raw[2])) * max_translation;
        let mut rotation = Vec3::new(0.0, c(raw[4]), c(raw[5])) * max_rotation;
        let n = rotation.norm();
        if n > max_rotation {
            rotation *= max_rotation / n;
        }
        Self { translation, rotation }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EnvError {
    #[error("step called on a finished or unstarted episode")]
    EpisodeNotActive,
    #[error("reset failed after {attempts} attempts: {last}")]
    ResetFailed { attempts: usize, last: SimError },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Garment(#[from] GarmentError),
    #[error(transparent)]
    Arm(#[from] ArmError),
    #[error("invalid environment config: {0}")]
    Config(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GarmentSource {
    Generated(SleeveParams),
    File { mesh: PathBuf, annotation: PathBuf },
}

impl GarmentSource {
    pub fn load(&self) -> Result<GarmentMesh, GarmentError> {
        match self {
            GarmentSource::Generated(p) => generate_sleeve_garment(p),
            GarmentSource::File { mesh, annotation } => load_obj_garment(mesh, annotation),
        }
    }
}

pub fn default_garment_registry() -> Vec<GarmentSource> {
    let g = |name: &str, sleeve_length: f64, sleeve_radius: f64, body_panel: bool| {
        GarmentSource::Generated(SleeveParams { name: name.into(), sleeve_length, sleeve_radius, body_panel, resolution: 12, panel_height: 0.2 })
    };
    vec![
        g("tee_short", 0.22, 0.085, true),
        g("hospital_gown", 0.30, 0.080, true),
        g("cardigan", 0.40, 0.070, true),
        g("jacket", 0.42, 0.085, false),
        g("vest_sleeve", 0.28, 0.075, false),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BodyRanges {
    pub upper_arm_length: [f64; 2],
    pub forearm_length: [f64; 2],
    pub upper_arm_radius: [f64; 2],
    pub forearm_radius: [f64; 2],
}

impl Default for BodyRanges {
    fn default() -> Self {
        Self {
            upper_arm_length: [0.27, 0.33],
            forearm_length: [0.22, 0.28],
            upper_arm_radius: [0.040, 0.050],
            forearm_radius: [0.030, 0.040],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraConfig {
    pub eye: [f64; 3],
    pub target: [f64; 3],
    pub width: usize,
    pub height: usize,
    pub vertical_fov_deg: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self { eye: [0.35, -0.95, 0.55], target: [0.4, 0.0, 0.15], width: 128, height: 128, vertical_fov_deg: 60.0 }
    }
}

impl CameraConfig {
    pub fn camera(&self) -> Camera {
        Camera::look_at(Vec3::from(self.eye), Vec3::from(self.target), Vec3::z(), self.width, self.height, self.vertical_fov_deg)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvMode {
    /// Fixed-length episodes over the training poses.
    Train,
    /// Held-out poses with success and no-progress termination.
    Eval,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub garments: Vec<GarmentSource>,
    pub subranges: Vec<usize>,
    pub body: BodyRanges,
    pub shoulder_position: [f64; 3],
    /// Rotation of the arm about world z; 180 points it back toward the robot.
    pub arm_heading_deg: f64,
    pub episode_length: usize,
    pub max_step_translation: f64,
    pub max_step_rotation_deg: f64,
    pub no_progress_window: usize,
    pub no_progress_tolerance: f64,
    /// Opening-center offset beyond the fingertip along the forearm at reset.
    pub initial_opening_offset: f64,
    pub settle_steps: usize,
    pub poses_per_subrange: usize,
    pub train_poses_per_subrange: usize,
    pub pose_seed: u64,
    pub voxel_size: f64,
    pub arm_crop: f64,
    pub camera: CameraConfig,
    pub sim: SimParams,
    pub reward: RewardParams,
    pub randomizer: RandomizerConfig,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            garments: default_garment_registry(),
            subranges: (0..NUM_SUBRANGES).collect(),
            body: BodyRanges::default(),
            shoulder_position: [0.75, 0.0, 0.15],
            arm_heading_deg: 180.0,
            episode_length: 150,
            max_step_translation: 0.01,
            max_step_rotation_deg: 2.0,
            no_progress_window: 15,
            no_progress_tolerance: 1e-3,
            initial_opening_offset: 0.05,
            settle_steps: 150,
            poses_per_subrange: 50,
            train_poses_per_subrange: 45,
            pose_seed: 2023,
            voxel_size: DEFAULT_VOXEL_SIZE,
            arm_crop: DEFAULT_ARM_CROP,
            camera: CameraConfig::default(),
            sim: SimParams::default(),
            reward: RewardParams::default(),
            randomizer: RandomizerConfig { mode: RandomizerMode::Off, ..RandomizerConfig::default() },
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: &str| Err(EnvError::Config(m.into()));
        if self.garments.is_empty() {
            return bad("garment registry is empty");
        }
        if self.subranges.is_empty() || self.subranges.iter().any(|&s| s >= NUM_SUBRANGES) {
            return bad("subranges must be a nonempty list of indices below 27");
        }
        if self.episode_length == 0 {
            return bad("episode_length must be >= 1");
        }
        if self.train_poses_per_subrange > self.poses_per_subrange {
            return bad("train_poses_per_subrange exceeds poses_per_subrange");
        }
        if !(self.max_step_translation > 0.0) || !(self.max_step_rotation_deg >= 0.0) || !(self.voxel_size > 0.0) {
            return bad("action limits and voxel size must be positive");
        }
        if !self.reward.is_valid() {
            return bad("reward parameters must be non-negative with deviation_near < deviation_far");
        }
        self.sim.validate()?;
        Ok(())
    }
}

/// Fixed per-sub-range pose lists split into training and held-out evaluation poses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseSet {
    pub subrange: usize,
    pub train: Vec<ArmPose>,
    pub eval: Vec<ArmPose>,
}

impl PoseSet {
    pub fn generate(subrange: usize, total: usize, train: usize, seed: u64) -> Result<Self, ArmError> {
        let sub = PoseSubRange::from_index(subrange)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (subrange as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let poses: Vec<ArmPose> = (0..total).map(|_| sample_pose(&sub, &mut rng)).collect();
        Ok(Self { subrange, train: poses[..train].to_vec(), eval: poses[train..].to_vec() })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Timeout,
    Success,
    NoProgress,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub r_m: f64,
    pub r_f: f64,
    pub r_c: f64,
    pub r_d: f64,
    pub upper_ratio: f64,
    pub whole_ratio: f64,
    pub success: bool,
    pub subrange_id: usize,
    pub force: f64,
}

/// Policy inputs for one timestep. `randomized` is present iff randomization is enabled.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub clean: Arc<SegmentedPointCloud>,
    pub randomized: Option<Arc<SegmentedPointCloud>>,
}

impl Observation {
    pub fn plain(cloud: SegmentedPointCloud) -> Self {
        Self { clean: Arc::new(cloud), randomized: None }
    }

    /// The stream a policy consumes: randomized when requested and available.
    pub fn for_policy(&self, randomized: bool) -> &Arc<SegmentedPointCloud> {
        if randomized {
            self.randomized.as_ref().unwrap_or(&self.clean)
        } else {
            &self.clean
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub obs: Observation,
    pub reward: f64,
    /// Episode is over (for any reason).
    pub done: bool,
    /// Episode ended in a true terminal state; timeouts are truncations.
    pub terminal: bool,
    pub termination: Option<Termination>,
    pub info: StepInfo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub obs: Observation,
    pub action: RawAction,
    pub reward: f64,
    pub next_obs: Observation,
    /// Terminal flag used for bootstrapping.
    pub done: bool,
    pub subrange_id: usize,
}

impl Transition {
    pub fn check_invariants(&self) -> bool {
        self.obs.clean.is_valid()
            && self.next_obs.clean.is_valid()
            && self.obs.randomized.is_some() == self.next_obs.randomized.is_some()
            && self.subrange_id < NUM_SUBRANGES
            && self.action.iter().all(|a| a.is_finite())
            && self.reward.is_finite()
    }
}

/// Shared interface of the dressing and toy environments.
pub trait Environment {
    fn reset(&mut self) -> Result<Observation, EnvError>;
    fn step(&mut self, raw: &RawAction) -> Result<StepResult, EnvError>;
    fn subrange_id(&self) -> usize;
    fn episode_length(&self) -> usize;
}

/// Episode setup; any field left `None` is sampled.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub garment: Option<usize>,
    pub subrange: Option<usize>,
    pub pose: Option<ArmPose>,
    pub body: Option<BodyParams>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub garment: usize,
    pub subrange: usize,
    pub pose: ArmPose,
    pub body: BodyParams,
    /// Geometry used for the frozen arm capture.
    pub captured_arm: ArmBody,
    /// Geometry used for physics and reward; differs from the capture after `perturb_arm`.
    pub arm: ArmBody,
    pub cloth: ClothState,
    pub arm_points: Vec<Vec3>,
    pub arm_image: DepthImage,
    pub draw: Option<RandomizationDraw>,
    pub step_count: usize,
    pub best_rm: f64,
    pub best_rm_history: Vec<f64>,
    pub done: bool,
    pub last_info: StepInfo,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DressingEnv {
    /// Stored as JSON text so non-self-describing formats can hold the tagged garment sources.
    #[serde(with = "json_text")]
    pub cfg: EnvConfig,
    pub mode: EnvMode,
    garments: Vec<GarmentMesh>,
    models: Vec<ClothModel>,
    pose_sets: Vec<PoseSet>,
    camera: Camera,
    rng: ChaCha8Rng,
    episode: Option<Episode>,
}

mod json_text {
    use serde::de::{DeserializeOwned, Error as _};
    use serde::ser::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<T: Serialize, S: Serializer>(v: &T, s: S) -> Result<S::Ok, S::Error> {
        serde_json::to_string(v).map_err(S::Error::custom)?.serialize(s)
    }

    pub fn deserialize<'de, T: DeserializeOwned, D: Deserializer<'de>>(d: D) -> Result<T, D::Error> {
        let text = String::deserialize(d)?;
        serde_json::from_str(&text).map_err(D::Error::custom)
    }
}

impl DressingEnv {
    pub fn new(cfg: EnvConfig, mode: EnvMode, seed: u64) -> Result<Self, EnvError> {
        cfg.validate()?;
        let garments = cfg.garments.iter().map(|g| g.load()).collect::<Result<Vec<_>, _>>()?;
        let models = garments.iter().map(ClothModel::from_mesh).collect();
        let pose_sets = cfg
            .subranges
            .iter()
            .map(|&s| PoseSet::generate(s, cfg.poses_per_subrange, cfg.train_poses_per_subrange, cfg.pose_seed))
            .collect::<Result<Vec<_>, _>>()?;
        let camera = cfg.camera.camera();
        Ok(Self { cfg, mode, garments, models, pose_sets, camera, rng: ChaCha8Rng::seed_from_u64(seed), episode: None })
    }

    pub fn episode(&self) -> Option<&Episode> {
        self.episode.as_ref()
    }

    pub fn garments(&self) -> &[GarmentMesh] {
        &self.garments
    }

    pub fn pose_sets(&self) -> &[PoseSet] {
        &self.pose_sets
    }

    pub fn camera(&self) -> &Camera {
        &self.camera
    }

    pub fn model(&self, garment: usize) -> &ClothModel {
        &self.models[garment]
    }

    /// World-placed arm for a pose and body.
    pub fn place_arm(&self, pose: &ArmPose, body: &BodyParams) -> ArmBody {
        let body = BodyParams { shoulder_position: Vec3::from(self.cfg.shoulder_position), ..*body };
        let local = forward_kinematics(pose, &body);
        let rot = Rotation3::from_axis_angle(&Vec3::z_axis(), self.cfg.arm_heading_deg.to_radians());
        let geom = local.transformed(&rot, &body.shoulder_position, &Vec3::zeros());
        ArmBody { geom, body }
    }

    fn sample_body(&mut self) -> BodyParams {
        let r = &self.cfg.body;
        let u = |rng: &mut ChaCha8Rng, range: [f64; 2]| if range[1] > range[0] { rng.random_range(range[0]..=range[1]) } else { range[0] };
        BodyParams {
            upper_arm_length: u(&mut self.rng, r.upper_arm_length),
            forearm_length: u(&mut self.rng, r.forearm_length),
            upper_arm_radius: u(&mut self.rng, r.upper_arm_radius),
            forearm_radius: u(&mut self.rng, r.forearm_radius),
            shoulder_position: Vec3::from(self.cfg.shoulder_position),
        }
    }

    /// Initial garment placement: opening plane normal along the forearm,
    /// tube trailing beyond the hand, ring top toward world up.
    fn place_garment(&self, garment: usize, geom: &ArmGeometry) -> (Vec<Vec3>, GripperPose) {
        let mesh = &self.garments[garment];
        let a = geom.forearm_axis;
        let pitch = -a.z.clamp(-1.0, 1.0).asin();
        let yaw = a.y.atan2(a.x);
        let pose = GripperPose { position: Vec3::zeros(), yaw, pitch };
        let rot = pose.rotation();
        let ring_center = mesh.opening_ring.iter().fold(Vec3::zeros(), |s, &i| s + mesh.vertices[i]) / mesh.opening_ring.len() as f64;
        let target = geom.finger + a * self.cfg.initial_opening_offset;
        let positions: Vec<Vec3> = mesh.vertices.iter().map(|v| target + rot * (v - ring_center)).collect();
        let grip = mesh.grasp_vertices.iter().fold(Vec3::zeros(), |s, &i| s + positions[i]) / mesh.grasp_vertices.len() as f64;
        (positions, GripperPose { position: grip, yaw, pitch })
    }

    pub fn reset_with(&mut self, spec: &EpisodeSpec) -> Result<Observation, EnvError> {
        let mut last = None;
        for _ in 0..3 {
            match self.try_reset(spec) {
                Ok(obs) => return Ok(obs),
                Err(EnvError::Sim(e)) => {
                    log::warn!("reset settle diverged ({e}); resampling");
                    last = Some(e);
                }
                Err(e) => return Err(e),
            }
        }
        Err(EnvError::ResetFailed { attempts: 3, last: last.expect("three failed attempts") })
    }

    fn try_reset(&mut self, spec: &EpisodeSpec) -> Result<Observation, EnvError> {
        let garment = match spec.garment {
            Some(g) if g < self.garments.len() => g,
            Some(g) => return Err(EnvError::Config(format!("garment index {g} out of range"))),
            None => self.rng.random_range(0..self.garments.len()),
        };
        let set_idx = match spec.subrange {
            Some(s) => self.pose_sets.iter().position(|p| p.subrange == s).ok_or_else(|| EnvError::Config(format!("sub-range {s} not configured")))?,
            None => self.rng.random_range(0..self.pose_sets.len()),
        };
        let subrange = self.pose_sets[set_idx].subrange;
        let body = match spec.body {
            Some(b) => b,
            None => self.sample_body(),
        };
        body.validate()?;
        let pose = match spec.pose {
            Some(p) => p,
            None => {
                let list = match self.mode {
                    EnvMode::Train => &self.pose_sets[set_idx].train,
                    EnvMode::Eval => &self.pose_sets[set_idx].eval,
                };
                if list.is_empty() {
                    return Err(EnvError::Config("pose list for this mode is empty".into()));
                }
                list[self.rng.random_range(0..list.len())]
            }
        };
        let arm = self.place_arm(&pose, &body);
        let (positions, gripper) = self.place_garment(garment, &arm.geom);
        let state = ClothState::new(positions, self.cfg.sim.particle_mass);
        let state = attach_gripper(&state, &self.garments[garment].grasp_vertices, gripper)?;
        let cloth = settle(&state, &self.models[garment], &self.cfg.sim, Some(&arm), self.cfg.settle_steps)?;

        let mut arm_image = DepthImage::empty(&self.camera);
        render_arm(&mut arm_image, &arm);
        let raw_arm = crop_arm(&arm_image.deproject_label(PixelLabel::Arm), &arm.geom, self.cfg.arm_crop);
        let arm_points = crate::perception::voxel_filter(&raw_arm, self.cfg.voxel_size);
        let draw = match self.cfg.randomizer.mode {
            RandomizerMode::Off => None,
            _ => Some(RandomizationDraw::sample(&self.cfg.randomizer, &mut self.rng)),
        };
        let mut ep = Episode {
            garment,
            subrange,
            pose,
            body,
            captured_arm: arm,
            arm,
            cloth,
            arm_points,
            arm_image,
            draw,
            step_count: 0,
            best_rm: f64::NEG_INFINITY,
            best_rm_history: Vec::new(),
            done: false,
            last_info: StepInfo { subrange_id: subrange, ..StepInfo::default() },
        };
        let obs = self.observe(&ep);
        let (info, _) = self.evaluate(&ep, &ContactMeasurements { force: 0.0, d_e: f64::INFINITY, d_g: f64::INFINITY });
        ep.last_info = info;
        self.episode = Some(ep);
        Ok(obs)
    }

    fn observe(&self, ep: &Episode) -> Observation {
        let mut img = ep.arm_image.clone();
        render_cloth(&mut img, &ep.cloth.positions, &self.garments[ep.garment].triangles);
        let garment_pts = img.deproject_label(PixelLabel::Garment);
        let gripper = ep.cloth.gripper.position;
        let clean = assemble_observation(&ep.arm_points, &garment_pts, &gripper, self.cfg.voxel_size);
        let randomized = ep
            .draw
            .as_ref()
            .map(|d| Arc::new(randomize_observation(&ep.arm_points, &img, &ep.captured_arm.geom, &gripper, d, self.cfg.voxel_size)));
        Observation { clean: Arc::new(clean), randomized }
    }

    fn evaluate(&self, ep: &Episode, contact: &ContactMeasurements) -> (StepInfo, f64) {
        let opening = opening_geometry(&self.garments[ep.garment], &ep.cloth.positions);
        let progress = compute_progress(&opening, &ep.arm.geom);
        let r = compute_reward(&progress, &opening.p_center, contact, &ep.arm.geom, &self.cfg.reward);
        let m = compute_metrics(&progress, &ep.arm.geom);
        let info = StepInfo {
            r_m: r.r_m,
            r_f: r.r_f,
            r_c: r.r_c,
            r_d: r.r_d,
            upper_ratio: m.upper_ratio,
            whole_ratio: m.whole_ratio,
            success: m.success,
            subrange_id: ep.subrange,
            force: contact.force,
        };
        (info, r.r_total)
    }

    /// Re-poses the physical arm by joint deltas while keeping the captured arm points.
    pub fn perturb_arm(&mut self, delta: &ArmPose) -> Result<(), EnvError> {
        let ep = self.episode.as_ref().ok_or(EnvError::EpisodeNotActive)?;
        let pose = ArmPose::new(ep.pose.phi1 + delta.phi1, ep.pose.phi2 + delta.phi2, ep.pose.phi3 + delta.phi3);
        let arm = self.place_arm(&pose, &ep.body);
        let ep = self.episode.as_mut().expect("checked above");
        ep.arm = arm;
        Ok(())
    }

    pub fn last_info(&self) -> Option<&StepInfo> {
        self.episode.as_ref().map(|e| &e.last_info)
    }

    /// Done flag and reason for the given counters.
    pub fn is_terminal(&self, step_count: usize, info: &StepInfo, best_rm_history: &[f64]) -> Option<Termination> {
        is_terminal(self.mode, self.cfg.episode_length, self.cfg.no_progress_window, self.cfg.no_progress_tolerance, step_count, info, best_rm_history)
    }
}

/// Eval mode adds success and no-progress termination to the step cap.
/// `best_rm_history[k]` is the best r_m seen up to and including step k+1.
pub fn is_terminal(
    mode: EnvMode,
    episode_length: usize,
    window: usize,
    tolerance: f64,
    step_count: usize,
    info: &StepInfo,
    best_rm_history: &[f64],
) -> Option<Termination> {
    if mode == EnvMode::Eval {
        if info.success {
            return Some(Termination::Success);
        }
        let n = best_rm_history.len();
        if window > 0 && n > window && best_rm_history[n - 1] - best_rm_history[n - 1 - window] <= tolerance {
            return Some(Termination::NoProgress);
        }
    }
    (step_count >= episode_length).then_some(Termination::Timeout)
}

impl Environment for DressingEnv {
    fn reset(&mut self) -> Result<Observation, EnvError> {
        self.reset_with(&EpisodeSpec::default())
    }

    fn step(&mut self, raw: &RawAction) -> Result<StepResult, EnvError> {
        let mut ep = self.episode.take().ok_or(EnvError::EpisodeNotActive)?;
        if ep.done {
            self.episode = Some(ep);
            return Err(EnvError::EpisodeNotActive);
        }
        let action = Action::from_raw(raw, self.cfg.max_step_translation, self.cfg.max_step_rotation_deg.to_radians());
        let outcome = match cloth_sim::step(&ep.cloth, &self.models[ep.garment], &self.cfg.sim, Some(&ep.arm), &action) {
            Ok(o) => o,
            Err(e) => {
                ep.done = true;
                self.episode = Some(ep);
                return Err(e.into());
            }
        };
        ep.cloth = outcome.new_state.clone();
        ep.step_count += 1;
        let (info, reward) = self.evaluate(&ep, &ContactMeasurements::from(&outcome));
        ep.best_rm = ep.best_rm.max(info.r_m);
        ep.best_rm_history.push(ep.best_rm);
        let termination = self.is_terminal(ep.step_count, &info, &ep.best_rm_history);
        ep.done = termination.is_some();
        ep.last_info = info;
        let obs = self.observe(&ep);
        debug_assert!(obs.clean.is_valid());
        let result = StepResult {
            obs,
            reward,
            done: ep.done,
            terminal: matches!(termination, Some(Termination::Success | Termination::NoProgress)),
            termination,
            info,
        };
        self.episode = Some(ep);
        Ok(result)
    }

    fn subrange_id(&self) -> usize {
        self.episode.as_ref().map(|e| e.subrange).unwrap_or(self.cfg.subranges[0])
    }

    fn episode_length(&self) -> usize {
        self.cfg.episode_length
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReachConfig {
    pub episode_length: usize,
    pub max_step_translation: f64,
    /// Finger positions are drawn from this box.
    pub finger_box: [[f64; 2]; 3],
    /// Gripper start offset from the finger, per axis.
    pub start_offset: [[f64; 2]; 3],
    /// Multiplier on the per-step distance decrease.
    pub reward_scale: f64,
}

impl Default for ReachConfig {
    fn default() -> Self {
        Self {
            episode_length: 40,
            max_step_translation: 0.01,
            finger_box: [[0.1, 0.3], [-0.15, 0.15], [0.0, 0.2]],
            start_offset: [[-0.15, 0.15], [-0.15, 0.15], [-0.15, 0.15]],
            reward_scale: 100.0,
        }
    }
}

/// Point-mass gripper reaching a fixed fingertip; observation is the finger
/// (arm class) plus the gripper point, reward is the scaled per-step distance decrease.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReachEnv {
    pub cfg: ReachConfig,
    rng: ChaCha8Rng,
    finger: Vec3,
    gripper: Vec3,
    step_count: usize,
    active: bool,
}

impl ReachEnv {
    pub fn new(cfg: ReachConfig, seed: u64) -> Self {
        Self { cfg, rng: ChaCha8Rng::seed_from_u64(seed), finger: Vec3::zeros(), gripper: Vec3::zeros(), step_count: 0, active: false }
    }

    fn obs(&self) -> Observation {
        let cloud = SegmentedPointCloud {
            points: vec![self.finger, self.gripper],
            classes: vec![crate::perception::PointClass::Arm, crate::perception::PointClass::Gripper],
        };
        Observation::plain(cloud)
    }

    pub fn distance(&self) -> f64 {
        (self.finger - self.gripper).norm()
    }

    /// Return of the greedy policy that moves each axis straight toward the
    /// finger at the maximum per-axis step from the current state.
    pub fn oracle_return(&self) -> f64 {
        let mut g = self.gripper;
        let d0 = self.distance();
        let m = self.cfg.max_step_translation;
        for _ in 0..self.cfg.episode_length.saturating_sub(self.step_count) {
            let delta = self.finger - g;
            g += delta.map(|v| v.clamp(-m, m));
        }
        (d0 - (self.finger - g).norm()) * self.cfg.reward_scale
    }

    /// Raw action of that greedy oracle.
    pub fn oracle_action(&self) -> RawAction {
        let d = (self.finger - self.gripper) / self.cfg.max_step_translation;
        [d.x.clamp(-1.0, 1.0), d.y.clamp(-1.0, 1.0), d.z.clamp(-1.0, 1.0), 0.0, 0.0, 0.0]
    }
}

impl Environment for ReachEnv {
    fn reset(&mut self) -> Result<Observation, EnvError> {
        let b = self.cfg.finger_box;
        let o = self.cfg.start_offset;
        let rng = &mut self.rng;
        let mut u = |r: [f64; 2]| if r[1] > r[0] { rng.random_range(r[0]..=r[1]) } else { r[0] };
        self.finger = Vec3::new(u(b[0]), u(b[1]), u(b[2]));
        let off = Vec3::new(u(o[0]), u(o[1]), u(o[2]));
        self.gripper = self.finger + off;
        self.step_count = 0;
        self.active = true;
        Ok(self.obs())
    }

    fn step(&mut self, raw: &RawAction) -> Result<StepResult, EnvError> {
        if !self.active {
            return Err(EnvError::EpisodeNotActive);
        }
        let a = Action::from_raw(raw, self.cfg.max_step_translation, 0.0);
        let before = self.distance();
        self.gripper += a.translation;
        self.step_count += 1;
        let reward = (before - self.distance()) * self.cfg.reward_scale;
        let done = self.step_count >= self.cfg.episode_length;
        self.active = !done;
        Ok(StepResult {
            obs: self.obs(),
            reward,
            done,
            terminal: false,
            termination: done.then_some(Termination::Timeout),
            info: StepInfo { r_m: -self.distance(), ..StepInfo::default() },
        })
    }

    fn subrange_id(&self) -> usize {
        0
    }

    fn episode_length(&self) -> usize {
        self.cfg.episode_length
    }
}
