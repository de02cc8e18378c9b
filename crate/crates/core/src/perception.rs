//! Synthetic depth camera, deprojection, voxel filtering, arm cropping and
//! the observation randomizations used for sim-to-real transfer.
//!
//! Camera frame follows the pinhole convention with x right, y down and z
//! along the optical axis; depth is the camera-frame z coordinate.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{Rotation3, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::arm_model::{point_segment_distance, ArmGeometry, Vec3};
use crate::cloth_sim::ArmBody;

pub const DEFAULT_VOXEL_SIZE: f64 = 0.0625;
pub const DEFAULT_ARM_CROP: f64 = 0.075;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PixelLabel {
    None,
    Arm,
    Garment,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PointClass {
    Garment,
    Arm,
    Gripper,
}

impl PointClass {
    pub fn one_hot(self) -> [f64; 3] {
        match self {
            PointClass::Garment => [1.0, 0.0, 0.0],
            PointClass::Arm => [0.0, 1.0, 0.0],
            PointClass::Gripper => [0.0, 0.0, 1.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Camera-to-world rotation; columns are the camera x, y, z axes in world.
    pub rotation: Rotation3<f64>,
    pub position: Vec3,
}

impl Camera {
    /// Looks from `eye` toward `target` with world `up` projecting to image-up.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, width: usize, height: usize, vertical_fov_deg: f64) -> Self {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        let rotation = Rotation3::from_matrix_unchecked(nalgebra::Matrix3::from_columns(&[right, down, forward]));
        let f = (height as f64 / 2.0) / (vertical_fov_deg.to_radians() / 2.0).tan();
        Self {
            width,
            height,
            fx: f,
            fy: f,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
            rotation,
            position: eye,
        }
    }

    pub fn to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation.inverse() * (p - self.position)
    }

    /// Camera-frame point for pixel (u, v) at depth `d`.
    pub fn deproject_camera(&self, u: f64, v: f64, d: f64) -> Vec3 {
        Vec3::new((u - self.cx) * d / self.fx, (v - self.cy) * d / self.fy, d)
    }

    pub fn deproject(&self, u: f64, v: f64, d: f64) -> Vec3 {
        self.rotation * self.deproject_camera(u, v, d) + self.position
    }

    /// World-space ray direction whose camera-frame z component is 1, so the
    /// ray parameter equals depth.
    pub fn pixel_ray(&self, u: f64, v: f64) -> Vec3 {
        self.rotation * Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    fn project(&self, p: &Vec3) -> Option<(f64, f64)> {
        let c = self.to_camera(p);
        if c.z <= 1e-6 {
            return None;
        }
        Some((self.fx * c.x / c.z + self.cx, self.fy * c.y / c.z + self.cy))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    /// Row-major, `f64::INFINITY` where nothing was hit.
    pub depth: Vec<f64>,
    pub label: Vec<PixelLabel>,
    pub camera: Camera,
}

impl DepthImage {
    pub fn empty(camera: &Camera) -> Self {
        let n = camera.width * camera.height;
        Self {
            width: camera.width,
            height: camera.height,
            depth: vec![f64::INFINITY; n],
            label: vec![PixelLabel::None; n],
            camera: camera.clone(),
        }
    }

    pub fn at(&self, u: usize, v: usize) -> (f64, PixelLabel) {
        let i = v * self.width + u;
        (self.depth[i], self.label[i])
    }

    pub fn mask(&self, label: PixelLabel) -> Vec<bool> {
        self.label.iter().map(|&l| l == label).collect()
    }

    /// World points of every pixel carrying `label`, in raster order.
    pub fn deproject_label(&self, label: PixelLabel) -> Vec<Vec3> {
        let mut out = Vec::new();
        for v in 0..self.height {
            for u in 0..self.width {
                let i = v * self.width + u;
                if self.label[i] == label {
                    out.push(self.camera.deproject(u as f64, v as f64, self.depth[i]));
                }
            }
        }
        out
    }
}

/// Smallest positive ray parameter hitting a capsule; `dir` must be unit length.
pub fn ray_capsule(origin: &Vec3, dir: &Vec3, a: &Vec3, b: &Vec3, radius: f64) -> Option<f64> {
    let ba = b - a;
    let oa = origin - a;
    let baba = ba.dot(&ba);
    let bard = ba.dot(dir);
    let baoa = ba.dot(&oa);
    let rdoa = dir.dot(&oa);
    let oaoa = oa.dot(&oa);
    let qa = baba - bard * bard;
    if qa.abs() > 1e-15 {
        let qb = baba * rdoa - baoa * bard;
        let qc = baba * oaoa - baoa * baoa - radius * radius * baba;
        let h = qb * qb - qa * qc;
        if h < 0.0 {
            return None;
        }
        let t = (-qb - h.sqrt()) / qa;
        let y = baoa + t * bard;
        if y > 0.0 && y < baba && t > 0.0 {
            return Some(t);
        }
    }
    let mut best: Option<f64> = None;
    for center in [a, b] {
        let oc = origin - center;
        let hb = dir.dot(&oc);
        let hc = oc.dot(&oc) - radius * radius;
        let h = hb * hb - hc;
        if h >= 0.0 {
            let t = -hb - h.sqrt();
            if t > 0.0 && best.is_none_or(|bt| t < bt) {
                best = Some(t);
            }
        }
    }
    best
}

/// Möller–Trumbore; returns the ray parameter of a front or back face hit.
pub fn ray_triangle(origin: &Vec3, dir: &Vec3, v0: &Vec3, v1: &Vec3, v2: &Vec3) -> Option<f64> {
    let e1 = v1 - v0;
    let e2 = v2 - v0;
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-14 {
        return None;
    }
    let inv = 1.0 / det;
    let s = origin - v0;
    let u = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = dir.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&q) * inv;
    (t > 0.0).then_some(t)
}

/// Z-buffers both arm capsules into `img`.
pub fn render_arm(img: &mut DepthImage, arm: &ArmBody) {
    let cam = img.camera.clone();
    let g = &arm.geom;
    let caps = [
        (g.finger, g.elbow, arm.body.forearm_radius),
        (g.elbow, g.shoulder, arm.body.upper_arm_radius),
    ];
    for v in 0..img.height {
        for u in 0..img.width {
            let ray = cam.pixel_ray(u as f64, v as f64);
            let len = ray.norm();
            let dir = ray / len;
            for (a, b, r) in &caps {
                if let Some(t) = ray_capsule(&cam.position, &dir, a, b, *r) {
                    let d = t / len;
                    let i = v * img.width + u;
                    if d < img.depth[i] {
                        img.depth[i] = d;
                        img.label[i] = PixelLabel::Arm;
                    }
                }
            }
        }
    }
}

/// Z-buffers cloth triangles into `img`, testing only pixels inside each
/// triangle's screen bounding box.
pub fn render_cloth(img: &mut DepthImage, positions: &[Vec3], triangles: &[[usize; 3]]) {
    let cam = img.camera.clone();
    for tri in triangles {
        let (v0, v1, v2) = (positions[tri[0]], positions[tri[1]], positions[tri[2]]);
        let (Some(p0), Some(p1), Some(p2)) = (cam.project(&v0), cam.project(&v1), cam.project(&v2)) else {
            continue;
        };
        let umin = p0.0.min(p1.0).min(p2.0).floor().max(0.0);
        let umax = p0.0.max(p1.0).max(p2.0).ceil().min(img.width as f64 - 1.0);
        let vmin = p0.1.min(p1.1).min(p2.1).floor().max(0.0);
        let vmax = p0.1.max(p1.1).max(p2.1).ceil().min(img.height as f64 - 1.0);
        if umin > umax || vmin > vmax {
            continue;
        }
        for v in vmin as usize..=vmax as usize {
            for u in umin as usize..=umax as usize {
                let ray = cam.pixel_ray(u as f64, v as f64);
                if let Some(d) = ray_triangle(&cam.position, &ray, &v0, &v1, &v2) {
                    let i = v * img.width + u;
                    if d < img.depth[i] {
                        img.depth[i] = d;
                        img.label[i] = PixelLabel::Garment;
                    }
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Scene<'a> {
    pub camera: &'a Camera,
    pub arm: Option<&'a ArmBody>,
    pub cloth_positions: &'a [Vec3],
    pub triangles: &'a [[usize; 3]],
}

pub fn render(scene: &Scene<'_>) -> DepthImage {
    let mut img = DepthImage::empty(scene.camera);
    if let Some(arm) = scene.arm {
        render_arm(&mut img, arm);
    }
    render_cloth(&mut img, scene.cloth_positions, scene.triangles);
    img
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SegmentedPointCloud {
    pub points: Vec<Vec3>,
    pub classes: Vec<PointClass>,
}

impl SegmentedPointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn count(&self, class: PointClass) -> usize {
        self.classes.iter().filter(|&&c| c == class).count()
    }

    pub fn of_class(&self, class: PointClass) -> Vec<Vec3> {
        self.points.iter().zip(&self.classes).filter(|(_, &c)| c == class).map(|(p, _)| *p).collect()
    }

    pub fn gripper(&self) -> Option<Vec3> {
        self.classes.iter().position(|&c| c == PointClass::Gripper).map(|i| self.points[i])
    }

    /// Exactly one gripper point and finite coordinates.
    pub fn is_valid(&self) -> bool {
        self.points.len() == self.classes.len()
            && self.count(PointClass::Gripper) == 1
            && self.points.iter().all(|p| p.iter().all(|v| v.is_finite()))
    }

    pub fn write_ply<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "ply\nformat ascii 1.0\nelement vertex {}", self.points.len())?;
        writeln!(w, "property float x\nproperty float y\nproperty float z\nproperty uchar class\nend_header")?;
        for (p, c) in self.points.iter().zip(&self.classes) {
            let id = match c {
                PointClass::Garment => 0,
                PointClass::Arm => 1,
                PointClass::Gripper => 2,
            };
            writeln!(w, "{} {} {} {}", p.x, p.y, p.z, id)?;
        }
        Ok(())
    }
}

fn voxel_key(p: &Vec3, size: f64) -> (i64, i64, i64) {
    ((p.x / size).floor() as i64, (p.y / size).floor() as i64, (p.z / size).floor() as i64)
}

/// One centroid per occupied voxel, ordered by voxel index.
pub fn voxel_filter(points: &[Vec3], voxel_size: f64) -> Vec<Vec3> {
    assert!(voxel_size > 0.0, "voxel size must be positive");
    let mut bins: BTreeMap<(i64, i64, i64), (Vec3, usize)> = BTreeMap::new();
    for p in points {
        let e = bins.entry(voxel_key(p, voxel_size)).or_insert((Vec3::zeros(), 0));
        e.0 += p;
        e.1 += 1;
    }
    bins.into_values().map(|(s, n)| s / n as f64).collect()
}

pub fn crop_arm(points: &[Vec3], geom: &ArmGeometry, threshold: f64) -> Vec<Vec3> {
    points
        .iter()
        .filter(|p| {
            point_segment_distance(p, &geom.finger, &geom.elbow) < threshold
                || point_segment_distance(p, &geom.elbow, &geom.shoulder) < threshold
        })
        .copied()
        .collect()
}

/// Voxel-filters arm and garment points and appends the gripper point.
pub fn assemble_observation(arm_pts: &[Vec3], garment_pts: &[Vec3], gripper: &Vec3, voxel_size: f64) -> SegmentedPointCloud {
    let arm = voxel_filter(arm_pts, voxel_size);
    let garment = voxel_filter(garment_pts, voxel_size);
    let mut cloud = SegmentedPointCloud::default();
    cloud.points.extend(&arm);
    cloud.classes.extend(std::iter::repeat_n(PointClass::Arm, arm.len()));
    cloud.points.extend(&garment);
    cloud.classes.extend(std::iter::repeat_n(PointClass::Garment, garment.len()));
    cloud.points.push(*gripper);
    cloud.classes.push(PointClass::Gripper);
    cloud
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RandomizerMode {
    TrainRandomized,
    DeployFixed,
    Off,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RandomizerConfig {
    pub mode: RandomizerMode,
    pub delta1_range: [f64; 2],
    pub delta2_range: [f64; 2],
    pub delta3_range: [f64; 2],
    pub delta4: f64,
    pub drop_probability: f64,
    pub kernel_sizes: Vec<usize>,
    pub gripper_noise_range: [f64; 2],
    /// (delta1, delta2, delta3) used in deploy mode.
    pub deploy_deltas: [f64; 3],
}

impl Default for RandomizerConfig {
    fn default() -> Self {
        Self {
            mode: RandomizerMode::TrainRandomized,
            delta1_range: [0.10, 0.25],
            delta2_range: [0.01, 0.05],
            delta3_range: [0.01, 0.05],
            delta4: 0.09375,
            drop_probability: 0.5,
            kernel_sizes: vec![0, 3, 5, 7, 9, 11, 13, 15, 17, 19],
            gripper_noise_range: [-0.03125, 0.03125],
            deploy_deltas: [0.15, 0.02, 0.01],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Morphology {
    None,
    Erode(usize),
    Dilate(usize),
}

/// Randomization parameters drawn once per episode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomizationDraw {
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub drop_near_gripper: bool,
    pub delta4: f64,
    pub morphology: Morphology,
    pub gripper_noise: Vec3,
}

fn uniform<R: Rng + ?Sized>(range: [f64; 2], rng: &mut R) -> f64 {
    if range[1] > range[0] {
        rng.random_range(range[0]..=range[1])
    } else {
        range[0]
    }
}

impl RandomizationDraw {
    pub fn sample<R: Rng + ?Sized>(cfg: &RandomizerConfig, rng: &mut R) -> Self {
        if cfg.mode != RandomizerMode::TrainRandomized {
            return Self::fixed(cfg);
        }
        let delta1 = uniform(cfg.delta1_range, rng);
        let delta2 = uniform(cfg.delta2_range, rng);
        let delta3 = uniform(cfg.delta3_range, rng);
        let drop_near_gripper = rng.random_bool(cfg.drop_probability.clamp(0.0, 1.0));
        let pick = |rng: &mut R| if cfg.kernel_sizes.is_empty() { 0 } else { cfg.kernel_sizes[rng.random_range(0..cfg.kernel_sizes.len())] };
        let erode = pick(rng);
        let dilate = pick(rng);
        let morphology = match (erode, dilate) {
            (0, 0) => Morphology::None,
            (k, 0) => Morphology::Erode(k),
            (0, k) => Morphology::Dilate(k),
            (e, d) => {
                if rng.random_bool(0.5) {
                    Morphology::Erode(e)
                } else {
                    Morphology::Dilate(d)
                }
            }
        };
        let gripper_noise = Vector3::from_fn(|_, _| uniform(cfg.gripper_noise_range, rng));
        Self { delta1, delta2, delta3, drop_near_gripper, delta4: cfg.delta4, morphology, gripper_noise }
    }

    /// Deployment cropping only.
    pub fn fixed(cfg: &RandomizerConfig) -> Self {
        Self {
            delta1: cfg.deploy_deltas[0],
            delta2: cfg.deploy_deltas[1],
            delta3: cfg.deploy_deltas[2],
            drop_near_gripper: false,
            delta4: cfg.delta4,
            morphology: Morphology::None,
            gripper_noise: Vec3::zeros(),
        }
    }
}

/// Garment points kept by the finger/gripper box crop.
pub fn keep_set_crop(garment: &[Vec3], finger_z: f64, gripper: &Vec3, d1: f64, d2: f64, d3: f64) -> Vec<Vec3> {
    garment
        .iter()
        .filter(|p| p.z > finger_z - d1 && p.z < gripper.z + d2 && p.x < gripper.x + d3)
        .copied()
        .collect()
}

pub fn drop_near_gripper(garment: &[Vec3], gripper: &Vec3, delta4: f64) -> Vec<Vec3> {
    garment.iter().filter(|p| (*p - gripper).norm() >= delta4).copied().collect()
}

/// Square-window binary erosion; pixels outside the image count as background.
pub fn erode_mask(mask: &[bool], width: usize, height: usize, kernel: usize) -> Vec<bool> {
    if kernel <= 1 {
        return mask.to_vec();
    }
    let r = (kernel / 2) as isize;
    let pass = |src: &[bool], horizontal: bool| -> Vec<bool> {
        let mut out = vec![false; src.len()];
        for v in 0..height as isize {
            for u in 0..width as isize {
                let all = (-r..=r).all(|k| {
                    let (uu, vv) = if horizontal { (u + k, v) } else { (u, v + k) };
                    uu >= 0 && vv >= 0 && uu < width as isize && vv < height as isize && src[(vv as usize) * width + uu as usize]
                });
                out[v as usize * width + u as usize] = all;
            }
        }
        out
    };
    pass(&pass(mask, true), false)
}

/// Square-window binary dilation.
pub fn dilate_mask(mask: &[bool], width: usize, height: usize, kernel: usize) -> Vec<bool> {
    if kernel <= 1 {
        return mask.to_vec();
    }
    let r = (kernel / 2) as isize;
    let pass = |src: &[bool], horizontal: bool| -> Vec<bool> {
        let mut out = vec![false; src.len()];
        for v in 0..height as isize {
            for u in 0..width as isize {
                let any = (-r..=r).any(|k| {
                    let (uu, vv) = if horizontal { (u + k, v) } else { (u, v + k) };
                    uu >= 0 && vv >= 0 && uu < width as isize && vv < height as isize && src[(vv as usize) * width + uu as usize]
                });
                out[v as usize * width + u as usize] = any;
            }
        }
        out
    };
    pass(&pass(mask, true), false)
}

/// Applies erosion or dilation to the garment label of a depth image. Newly
/// added pixels copy the depth of the nearest original garment pixel in the
/// window (first in raster order on ties).
pub fn apply_morphology(img: &DepthImage, op: Morphology) -> DepthImage {
    let mut out = img.clone();
    let (w, h) = (img.width, img.height);
    let mask = img.mask(PixelLabel::Garment);
    match op {
        Morphology::None => {}
        Morphology::Erode(k) => {
            let eroded = erode_mask(&mask, w, h, k);
            for i in 0..mask.len() {
                if mask[i] && !eroded[i] {
                    out.label[i] = PixelLabel::None;
                    out.depth[i] = f64::INFINITY;
                }
            }
        }
        Morphology::Dilate(k) => {
            let dilated = dilate_mask(&mask, w, h, k);
            let r = (k / 2) as isize;
            for v in 0..h as isize {
                for u in 0..w as isize {
                    let i = v as usize * w + u as usize;
                    if mask[i] || !dilated[i] {
                        continue;
                    }
                    let mut best: Option<(isize, usize)> = None;
                    for dv in -r..=r {
                        for du in -r..=r {
                            let (uu, vv) = (u + du, v + dv);
                            if uu < 0 || vv < 0 || uu >= w as isize || vv >= h as isize {
                                continue;
                            }
                            let j = vv as usize * w + uu as usize;
                            let d2 = du * du + dv * dv;
                            if mask[j] && best.is_none_or(|(bd, bj)| d2 < bd || (d2 == bd && j < bj)) {
                                best = Some((d2, j));
                            }
                        }
                    }
                    if let Some((_, j)) = best {
                        out.label[i] = PixelLabel::Garment;
                        out.depth[i] = img.depth[j];
                    }
                }
            }
        }
    }
    out
}

/// Builds the randomized observation from a garment depth image. Order:
/// morphology on the garment mask, deprojection, keep-set crop, optional
/// drop near the gripper, voxel filtering, then gripper noise.
pub fn randomize_observation(
    arm_pts: &[Vec3],
    depth: &DepthImage,
    geom: &ArmGeometry,
    gripper: &Vec3,
    draw: &RandomizationDraw,
    voxel_size: f64,
) -> SegmentedPointCloud {
    let morphed = apply_morphology(depth, draw.morphology);
    let garment = morphed.deproject_label(PixelLabel::Garment);
    let mut garment = keep_set_crop(&garment, geom.finger.z, gripper, draw.delta1, draw.delta2, draw.delta3);
    if draw.drop_near_gripper {
        garment = drop_near_gripper(&garment, gripper, draw.delta4);
    }
    let mut cloud = assemble_observation(&[], &garment, &(gripper + draw.gripper_noise), voxel_size);
    // arm points were voxelized at capture time and are passed through verbatim
    let mut out = SegmentedPointCloud { points: arm_pts.to_vec(), classes: vec![PointClass::Arm; arm_pts.len()] };
    out.points.append(&mut cloud.points);
    out.classes.append(&mut cloud.classes);
    out
}
