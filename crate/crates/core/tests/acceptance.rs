//! Acceptance suite. Prints one `criterion N: PASS|FAIL|NOT RUN` line per
//! criterion and exits non-zero if any criterion fails.
//!
//! Criteria 7-9 train the full desk-scale pipeline (dozens of 200k-step runs)
//! and only execute with `DRESS_ACCEPTANCE_FULL=1`. `DRESS_ACCEPTANCE_STEPS`
//! shortens their budget; results under a shortened budget are reported as
//! INFO rather than PASS/FAIL. `DRESS_ACCEPTANCE_DIR` keeps their artifacts.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use dressing_core::arm_model::{
    decompose_pose_range, forward_kinematics, point_segment_distance, sample_pose, ArmGeometry, ArmPose, BodyParams, Vec3,
};
use dressing_core::autodiff::{Graph, Tensor, Var};
use dressing_core::distill::{
    distill_update, loss_value, pcgrad_project, DistillConfig, KlDirection, LossKind, TeacherBank, TeacherEntry,
    TeacherManifest,
};
use dressing_core::env::{Environment, Observation, ReachConfig, ReachEnv, Transition};
use dressing_core::garment::{opening_geometry_from_ring, OpeningGeometry};
use dressing_core::harness::{
    decode, encode, eval_env, eval_table, load_checkpoint, load_teacher_bank, perturb_curves, perturb_table, train_seed,
    CheckpointKind, Controller, ExperimentConfig, Method, PerturbConfig, TrainState,
};
use dressing_core::nets::{Critic, CriticKind, Policy, PolicyKind, PointNetConfig, PreparedBatch};
use dressing_core::perception::{
    crop_arm, keep_set_crop, voxel_filter, PointClass, RandomizationDraw, RandomizerConfig, RandomizerMode,
    SegmentedPointCloud,
};
use dressing_core::reward::{
    compute_progress, compute_reward, hexagon_segment_intersection, main_reward, ContactMeasurements, Phase, RewardParams,
};
use dressing_core::sac::{evaluate_episodes, sac_update, ReplayBuffer, SacAgent, SacConfig, SacUpdater, Trainer};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

enum Outcome {
    Pass(String),
    Fail(String),
    NotRun(String),
    Info(String),
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn main() {
    let criteria: Vec<(u32, &str, fn() -> Outcome)> = vec![
        (1, "geometry oracle", c1_geometry_oracle),
        (2, "reward structure", c2_reward_structure),
        (3, "observation pipeline", c3_observation_pipeline),
        (4, "network invariances and gradients", c4_networks),
        (5, "distillation losses", c5_distillation),
        (6, "learning sanity", c6_learning_sanity),
        (7, "distillation ordering", c7_ordering),
        (8, "guided randomization", c8_guided_dr),
        (9, "perturbation curves", c9_perturbation),
        (10, "determinism and persistence", c10_determinism),
    ];
    let only: Option<Vec<u32>> =
        std::env::var("DRESS_ACCEPTANCE_ONLY").ok().map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let mut failed = 0;
    for (n, name, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let t0 = Instant::now();
        let out = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Outcome::Fail(format!("panicked: {msg}"))
        });
        let secs = t0.elapsed().as_secs_f64();
        let (tag, detail) = match out {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Outcome::NotRun(d) => ("NOT RUN", d),
            Outcome::Info(d) => ("INFO", d),
        };
        println!("criterion {n} [{name}]: {tag} ({detail}; {secs:.1}s)");
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------------------
// 1. Hexagon crossing against a dense triangulation

fn random_ring(rng: &mut ChaCha8Rng) -> Vec<Vec3> {
    let n = rng.random_range(6..=16);
    let center = Vec3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(0.5..1.5));
    let normal = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        .try_normalize(1e-6)
        .unwrap_or_else(Vec3::x);
    let helper = if normal.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let u = normal.cross(&helper).normalize();
    let v = normal.cross(&u);
    let base = rng.random_range(0.03..0.15);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    (0..n)
        .map(|k| {
            let th = phase + std::f64::consts::TAU * (k as f64 + rng.random_range(-0.3..0.3)) / n as f64;
            let r = base * rng.random_range(0.6..1.4);
            center + (u * th.cos() + v * th.sin()) * r + normal * rng.random_range(-0.01..0.01) * base
        })
        .collect()
}

/// Segment/triangle crossing (Moller-Trumbore) with parameter `t` on the segment.
fn segment_triangle(a: &Vec3, b: &Vec3, v0: &Vec3, v1: &Vec3, v2: &Vec3) -> Option<f64> {
    let d = b - a;
    let e1 = v1 - v0;
    let e2 = v2 - v0;
    let p = d.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-300 {
        return None;
    }
    let inv = 1.0 / det;
    let s = a - v0;
    let u = s.dot(&p) * inv;
    if !(-1e-12..=1.0 + 1e-12).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = d.dot(&q) * inv;
    if v < -1e-12 || u + v > 1.0 + 1e-12 {
        return None;
    }
    let t = e2.dot(&q) * inv;
    (0.0..=1.0).contains(&t).then_some(t)
}

/// Each fan triangle of the hexagon split into `level^2` sub-triangles.
fn dense_triangles(hex: &OpeningGeometry, level: usize) -> Vec<[Vec3; 3]> {
    let mut out = Vec::new();
    for i in 0..6 {
        let (c, p, q) = (hex.p_center, hex.hexagon[i], hex.hexagon[(i + 1) % 6]);
        let at = |i: usize, j: usize| c + (p - c) * (i as f64 / level as f64) + (q - c) * (j as f64 / level as f64);
        for i in 0..level {
            for j in 0..level - i {
                out.push([at(i, j), at(i + 1, j), at(i, j + 1)]);
                if i + j + 1 < level {
                    out.push([at(i + 1, j), at(i + 1, j + 1), at(i, j + 1)]);
                }
            }
        }
    }
    out
}

/// Distance from the line/plane crossing to the nearest place where the
/// hit/miss answer can flip; `None` when the segment is nearly parallel.
fn boundary_margin(hex: &OpeningGeometry, a: &Vec3, b: &Vec3) -> Option<f64> {
    let n = hex.plane_normal;
    let d = b - a;
    let len = d.norm();
    let denom = n.dot(&d);
    if (denom / len).abs() < 1e-6 {
        return None;
    }
    let t = n.dot(&(hex.p_center - a)) / denom;
    let x = a + d * t;
    let edge = (0..6).map(|i| point_segment_distance(&x, &hex.hexagon[i], &hex.hexagon[(i + 1) % 6])).fold(f64::INFINITY, f64::min);
    let ends = (t * len).abs().min(((1.0 - t) * len).abs());
    Some(edge.min(ends))
}

fn c1_geometry_oracle() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut cases, mut hits, mut banded, mut mismatches, mut worst) = (0, 0, 0, 0, 0.0f64);
    while cases < 10_000 {
        let hex = opening_geometry_from_ring(&random_ring(&mut rng));
        if hex.degenerate {
            continue;
        }
        let scale = (hex.hexagon[0] - hex.p_center).norm().max(0.02);
        let jitter = |rng: &mut ChaCha8Rng| Vec3::new(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)) * scale;
        let (a, b) = if rng.random_bool(0.7) {
            let lateral = jitter(&mut rng) * 0.8;
            let a = hex.p_center + lateral + hex.plane_normal * rng.random_range(-2.0..2.0) * scale + jitter(&mut rng) * 0.2;
            let b = hex.p_center + lateral - hex.plane_normal * rng.random_range(-2.0..2.0) * scale + jitter(&mut rng) * 0.2;
            (a, b)
        } else {
            (hex.p_center + jitter(&mut rng), hex.p_center + jitter(&mut rng))
        };
        if (b - a).norm() < 1e-6 {
            continue;
        }
        cases += 1;
        match boundary_margin(&hex, &a, &b) {
            Some(m) if m > 1e-7 => {}
            _ => {
                banded += 1;
                continue;
            }
        }
        let oracle = dense_triangles(&hex, 4).iter().find_map(|t| segment_triangle(&a, &b, &t[0], &t[1], &t[2])).map(|t| a + (b - a) * t);
        let got = hexagon_segment_intersection(&hex, &a, &b);
        match (got, oracle) {
            (Some(p), Some(q)) => {
                hits += 1;
                worst = worst.max((p - q).norm());
            }
            (None, None) => {}
            _ => mismatches += 1,
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    check(
        mismatches == 0 && worst <= 1e-6 && secs < 60.0 && hits > 1000,
        format!("{cases} cases, {hits} hits, {banded} in boundary band, {mismatches} hit/miss mismatches, max position error {worst:.2e} m"),
    )
}

// ---------------------------------------------------------------------------
// 2. Reward structure

fn perpendicular_opening(center: Vec3, axis: Vec3, radius: f64) -> OpeningGeometry {
    let axis = axis.normalize();
    let u = axis.cross(&Vec3::new(0.3, 0.9, 0.1)).normalize();
    let v = axis.cross(&u);
    let ring: Vec<Vec3> = (0..12)
        .map(|k| {
            let th = std::f64::consts::TAU * k as f64 / 12.0;
            center + (u * th.cos() + v * th.sin()) * radius
        })
        .collect();
    opening_geometry_from_ring(&ring)
}

/// r_m with the opening centred `s` metres along the arm from the fingertip,
/// perpendicular to the segment it sits on.
fn slide_reward(geom: &ArmGeometry, s: f64, w: f64) -> (Phase, f64) {
    let fore = (geom.elbow - geom.finger).norm();
    let (center, axis) = if s <= fore {
        (geom.finger + (geom.elbow - geom.finger) * (s / fore), geom.elbow - geom.finger)
    } else {
        let upper = (geom.shoulder - geom.elbow).norm();
        (geom.elbow + (geom.shoulder - geom.elbow) * ((s - fore) / upper), geom.shoulder - geom.elbow)
    };
    let hex = perpendicular_opening(center, axis, 0.06);
    let progress = compute_progress(&hex, geom);
    (progress.phase, main_reward(&progress, &hex.p_center, geom, w))
}

fn c2_reward_structure() -> Outcome {
    let params = RewardParams::default();
    let mut worst_fore = 0.0f64;
    let mut worst_upper = 0.0f64;
    let mut worst_gap = 0.0f64;
    let mut monotone = true;
    for pose in [ArmPose::new(0.0, 0.0, 0.0), ArmPose::new(10.0, -5.0, 20.0), ArmPose::new(-15.0, 12.0, 25.0)] {
        let geom = forward_kinematics(&pose, &BodyParams::default());
        let fore = (geom.elbow - geom.finger).norm();
        let upper = (geom.shoulder - geom.elbow).norm();
        let stations = |lo: f64, hi: f64| (0..100).map(move |k| lo + (hi - lo) * (k as f64 + 0.5) / 100.0).collect::<Vec<_>>();
        for (lo, hi, slope, phase, worst) in [
            (0.0, fore, 1.0, Phase::Forearm, &mut worst_fore),
            (fore, fore + upper, params.w, Phase::UpperArm, &mut worst_upper),
        ] {
            let st = stations(lo, hi);
            let r: Vec<(Phase, f64)> = st.iter().map(|&s| slide_reward(&geom, s, params.w)).collect();
            for k in 0..st.len() {
                if r[k].0 != phase {
                    return Outcome::Fail(format!("station {:.4} on pose {pose:?} is in phase {:?}", st[k], r[k].0));
                }
            }
            for k in 1..st.len() {
                let fd = (r[k].1 - r[k - 1].1) / (st[k] - st[k - 1]);
                *worst = worst.max((fd - slope).abs());
                monotone &= r[k].1 >= r[k - 1].1;
            }
        }
        for eps in [1e-5, 1e-7, 1e-9] {
            let below = slide_reward(&geom, fore - eps, params.w).1;
            let above = slide_reward(&geom, fore + eps, params.w).1;
            worst_gap = worst_gap.max((below - fore).abs().max((above - fore).abs()) - params.w * eps);
        }
    }

    // Penalty closed forms, exact.
    let geom = forward_kinematics(&ArmPose::new(0.0, 0.0, 0.0), &BodyParams::default());
    let progress = compute_progress(&perpendicular_opening(geom.finger + Vec3::new(0.0, 0.0, 0.3), Vec3::x(), 0.06), &geom);
    let p_center = geom.finger + Vec3::new(0.0, 0.0, 0.3);
    let mut penalties_exact = params.force_coeff == 0.001
        && params.f_max == 4.0
        && params.contact_coeff == 0.01
        && params.d_min == 0.01
        && params.deviation_near == 0.03
        && params.deviation_far == 0.075
        && params.deviation_bonus == 0.02
        && params.deviation_penalty == 0.05
        && params.w == 5.0;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut cases: Vec<(f64, f64, f64)> = vec![
        (4.0, 0.01, 0.03),
        (4.0 + 1e-9, 0.01 - 1e-12, 0.03 - 1e-12),
        (0.0, 0.0, 0.075),
        (10.0, 0.5, 0.075 + 1e-12),
        (1e6, 0.009999, 0.05),
    ];
    cases.extend((0..1000).map(|_| (rng.random_range(0.0..20.0), rng.random_range(0.0..0.05), rng.random_range(0.0..0.15))));
    for (force, d_e, d_g) in cases {
        let r = compute_reward(&progress, &p_center, &ContactMeasurements { force, d_e, d_g }, &geom, &params);
        let r_f = -0.001 * (force - 4.0f64).max(0.0);
        let r_c = if d_e < 0.01 { -0.01 } else { 0.0 };
        let r_d = if d_g < 0.03 {
            0.02
        } else if d_g > 0.075 {
            -0.05
        } else {
            0.0
        };
        let r_m = -(p_center - geom.finger).norm();
        penalties_exact &= r.r_f == r_f && r.r_c == r_c && r.r_d == r_d && r.r_m == r_m && r.r_total == r_m + r_f + r_c + r_d;
    }
    check(
        worst_fore <= 1e-6 && worst_upper <= 1e-6 && worst_gap <= 1e-6 && monotone && penalties_exact,
        format!(
            "forearm slope error {worst_fore:.1e}, upper-arm slope error {worst_upper:.1e}, elbow gap {worst_gap:.1e}, \
             monotone {monotone}, penalties exact {penalties_exact}"
        ),
    )
}

// ---------------------------------------------------------------------------
// 3. Observation filters

fn brute_voxel(points: &[Vec3], size: f64) -> Vec<Vec3> {
    let mut bins: BTreeMap<(i64, i64, i64), Vec<Vec3>> = BTreeMap::new();
    for p in points {
        let key = ((p.x / size).floor() as i64, (p.y / size).floor() as i64, (p.z / size).floor() as i64);
        bins.entry(key).or_default().push(*p);
    }
    bins.values().map(|ps| ps.iter().fold(Vec3::zeros(), |a, p| a + p) / ps.len() as f64).collect()
}

fn c3_observation_pipeline() -> Outcome {
    let env_defaults = dressing_core::env::EnvConfig::default();
    let (voxel, crop) = (env_defaults.voxel_size, env_defaults.arm_crop);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let subranges = decompose_pose_range();
    let body = BodyParams::default();
    let mut bad = Vec::new();
    for cloud in 0..1000 {
        let n = rng.random_range(50..400);
        let pose = sample_pose(&subranges[rng.random_range(0..subranges.len())], &mut rng);
        let geom = forward_kinematics(&pose, &body);
        let lo = geom.shoulder.inf(&geom.finger).inf(&geom.elbow) - Vec3::repeat(0.2);
        let hi = geom.shoulder.sup(&geom.finger).sup(&geom.elbow) + Vec3::repeat(0.2);
        let pts: Vec<Vec3> = (0..n)
            .map(|_| Vec3::new(rng.random_range(lo.x..hi.x), rng.random_range(lo.y..hi.y), rng.random_range(lo.z..hi.z)))
            .collect();

        let got = voxel_filter(&pts, voxel);
        let want = brute_voxel(&pts, voxel);
        let inside = got.iter().all(|c| {
            pts.iter().any(|p| {
                let k = |x: f64| (x / voxel).floor();
                (k(p.x), k(p.y), k(p.z)) == (k(c.x), k(c.y), k(c.z))
            })
        });
        if got != want || !inside {
            bad.push(format!("voxel filter on cloud {cloud}"));
        }

        let kept = crop_arm(&pts, &geom, crop);
        let want: Vec<Vec3> = pts
            .iter()
            .filter(|p| point_segment_distance(p, &geom.finger, &geom.elbow).min(point_segment_distance(p, &geom.elbow, &geom.shoulder)) < crop)
            .copied()
            .collect();
        if kept != want {
            bad.push(format!("arm crop on cloud {cloud}"));
        }

        let gripper = Vec3::new(rng.random_range(lo.x..hi.x), rng.random_range(lo.y..hi.y), rng.random_range(lo.z..hi.z));
        let (d1, d2, d3) = (rng.random_range(0.0..0.2), rng.random_range(0.0..0.05), rng.random_range(0.0..0.05));
        let kept = keep_set_crop(&pts, geom.finger.z, &gripper, d1, d2, d3);
        let want: Vec<Vec3> =
            pts.iter().filter(|p| p.z > geom.finger.z - d1 && p.z < gripper.z + d2 && p.x < gripper.x + d3).copied().collect();
        if kept != want {
            bad.push(format!("keep-set crop on cloud {cloud}"));
        }
    }
    let deploy = RandomizerConfig { mode: RandomizerMode::DeployFixed, ..RandomizerConfig::default() };
    let draws: Vec<RandomizationDraw> = (0..100).map(|_| RandomizationDraw::sample(&deploy, &mut rng)).collect();
    let pinned = draws.iter().all(|d| (d.delta1, d.delta2, d.delta3) == (0.15, 0.02, 0.01));
    check(
        bad.is_empty() && pinned && voxel == 0.0625 && crop == 0.075,
        format!(
            "1000 clouds, voxel {voxel} m, crop {crop} m, {} filter mismatches{}, deploy deltas pinned {pinned}",
            bad.len(),
            bad.first().map(|b| format!(" (first: {b})")).unwrap_or_default()
        ),
    )
}

// ---------------------------------------------------------------------------
// 4. Networks

fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> SegmentedPointCloud {
    let mut points = Vec::with_capacity(n + 1);
    let mut classes = Vec::with_capacity(n + 1);
    for _ in 0..n {
        points.push(Vec3::new(rng.random_range(-0.15..0.15), rng.random_range(-0.15..0.15), rng.random_range(-0.15..0.15)));
        classes.push(if rng.random_bool(0.6) { PointClass::Garment } else { PointClass::Arm });
    }
    let at = rng.random_range(0..=n);
    points.insert(at, Vec3::new(rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05)));
    classes.insert(at, PointClass::Gripper);
    SegmentedPointCloud { points, classes }
}

fn permuted(c: &SegmentedPointCloud, perm: &[usize]) -> SegmentedPointCloud {
    SegmentedPointCloud { points: perm.iter().map(|&i| c.points[i]).collect(), classes: perm.iter().map(|&i| c.classes[i]).collect() }
}

fn shifted(c: &SegmentedPointCloud, t: Vec3) -> SegmentedPointCloud {
    SegmentedPointCloud { points: c.points.iter().map(|p| p + t).collect(), classes: c.classes.clone() }
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Gaussian parameters of every point (dense) or of the executed action.
fn policy_outputs(p: &Policy, c: &SegmentedPointCloud, dense: bool) -> Vec<Vec<f64>> {
    let flat = |g: &dressing_core::nets::GaussianPolicyOutput| g.mu.iter().chain(g.log_std.iter()).copied().collect::<Vec<f64>>();
    match (p, dense) {
        (Policy::Dense(d), true) => d.dense_outputs(c).unwrap().0.iter().map(flat).collect(),
        _ => p.gaussians(&[c]).unwrap().iter().map(flat).collect(),
    }
}

/// Central differences of `f` with respect to every entry of `inputs`, and
/// the analytic gradient, as one flattened pair.
fn fd_pair(inputs: &[Tensor], f: &dyn Fn(&mut Graph, &[Var]) -> Var) -> (Vec<f64>, Vec<f64>) {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars);
    g.backward(out).unwrap();
    let analytic: Vec<f64> = vars
        .iter()
        .zip(inputs)
        .flat_map(|(v, t)| g.grad(*v).map(|x| x.data().to_vec()).unwrap_or_else(|| vec![0.0; t.len()]))
        .collect();
    let eval = |vals: &[Tensor]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars);
        g.value(out).item()
    };
    let h = 1e-6;
    let mut numeric = Vec::with_capacity(analytic.len());
    let mut work = inputs.to_vec();
    for i in 0..inputs.len() {
        for k in 0..inputs[i].len() {
            let x = inputs[i].data()[k];
            work[i].data_mut()[k] = x + h;
            let up = eval(&work);
            work[i].data_mut()[k] = x - h;
            let down = eval(&work);
            work[i].data_mut()[k] = x;
            numeric.push((up - down) / (2.0 * h));
        }
    }
    (analytic, numeric)
}

fn rel_err(a: &[f64], n: &[f64]) -> f64 {
    let diff = a.iter().zip(n).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(n.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

/// Random tensor whose entries stay at least `gap` away from zero.
fn away_from_zero(rng: &mut ChaCha8Rng, r: usize, c: usize, gap: f64) -> Tensor {
    Tensor::from_fn(r, c, |_, _| {
        let m = rng.random_range(gap..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

fn weighted_sum(g: &mut Graph, x: Var, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (r, c) = g.shape(x);
    let w = g.constant(Tensor::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0)));
    let y = g.mul(x, w).unwrap();
    g.sum(y)
}

fn primitive_errors() -> Vec<(&'static str, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let a = away_from_zero(&mut rng, 5, 4, 0.05);
    let b = away_from_zero(&mut rng, 5, 4, 0.05);
    let m = away_from_zero(&mut rng, 4, 3, 0.05);
    let row = away_from_zero(&mut rng, 1, 4, 0.05);
    let pos = Tensor::from_fn(5, 4, |_, _| rng.random_range(0.2..2.0));
    let sets = vec![vec![0, 2], vec![1, 3, 4], vec![4]];
    type Case = (&'static str, Vec<Tensor>, Box<dyn Fn(&mut Graph, &[Var]) -> Var>);
    let cases: Vec<Case> = vec![
        ("matmul", vec![a.clone(), m.clone()], Box::new(|g, v| g.matmul(v[0], v[1]).unwrap())),
        ("add", vec![a.clone(), b.clone()], Box::new(|g, v| g.add(v[0], v[1]).unwrap())),
        ("sub", vec![a.clone(), b.clone()], Box::new(|g, v| g.sub(v[0], v[1]).unwrap())),
        ("mul", vec![a.clone(), b.clone()], Box::new(|g, v| g.mul(v[0], v[1]).unwrap())),
        ("min", vec![a.clone(), b.clone()], Box::new(|g, v| g.min(v[0], v[1]).unwrap())),
        ("add_row", vec![a.clone(), row.clone()], Box::new(|g, v| g.add_row(v[0], v[1]).unwrap())),
        ("scale", vec![a.clone()], Box::new(|g, v| g.scale(v[0], -1.7))),
        ("add_scalar", vec![a.clone()], Box::new(|g, v| g.add_scalar(v[0], 0.3))),
        ("relu", vec![a.clone()], Box::new(|g, v| g.relu(v[0]))),
        ("tanh", vec![a.clone()], Box::new(|g, v| g.tanh(v[0]))),
        ("exp", vec![a.clone()], Box::new(|g, v| g.exp(v[0]))),
        ("log", vec![pos.clone()], Box::new(|g, v| g.log(v[0]))),
        ("softplus", vec![a.clone()], Box::new(|g, v| g.softplus(v[0]))),
        ("clamp", vec![a.clone()], Box::new(|g, v| g.clamp(v[0], -0.5, 0.5))),
        ("max_over_set", vec![a.clone()], Box::new(move |g, v| g.max_over_set(v[0], &sets).unwrap())),
        ("gather_rows", vec![a.clone()], Box::new(|g, v| g.gather_rows(v[0], &[2, 0, 2, 4]).unwrap())),
        ("scatter_add_rows", vec![a.clone()], Box::new(|g, v| g.scatter_add_rows(v[0], &[1, 0, 1, 2, 1], 3).unwrap())),
        ("scale_rows", vec![a.clone()], Box::new(|g, v| g.scale_rows(v[0], &[0.5, -1.0, 2.0, 0.1, 3.0]).unwrap())),
        ("sum", vec![a.clone()], Box::new(|g, v| g.sum(v[0]))),
        ("mean", vec![a.clone()], Box::new(|g, v| g.mean(v[0]))),
        ("sum_cols", vec![a.clone()], Box::new(|g, v| g.sum_cols(v[0]))),
        ("concat_cols", vec![a.clone(), b.clone()], Box::new(|g, v| g.concat_cols(&[v[0], v[1]]).unwrap())),
        ("slice_cols", vec![a.clone()], Box::new(|g, v| g.slice_cols(v[0], 1, 3).unwrap())),
    ];
    cases
        .into_iter()
        .enumerate()
        .map(|(k, (name, inputs, f))| {
            let (an, nu) = fd_pair(&inputs, &|g, v| {
                let y = f(g, v);
                weighted_sum(g, y, 100 + k as u64)
            });
            (name, rel_err(&an, &nu))
        })
        .collect()
}

fn network_errors() -> Vec<(&'static str, f64)> {
    let cfg = PointNetConfig::tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let clouds = [random_cloud(&mut rng, 14), random_cloud(&mut rng, 9)];
    let refs: Vec<&SegmentedPointCloud> = clouds.iter().collect();
    let batch = PreparedBatch::new(&refs, &cfg).unwrap();
    let action = Tensor::from_fn(2, 6, |_, _| rng.random_range(-0.9..0.9));
    let mut out = Vec::new();
    for (name, kind) in [("dense policy", PolicyKind::Dense), ("direct-vector policy", PolicyKind::DirectVector)] {
        let p = Policy::new(kind, &cfg, &mut rng).unwrap();
        let (an, nu) = fd_pair(p.params().values(), &|g, v| {
            let pv = p.forward(g, v, &batch).unwrap();
            let a = weighted_sum(g, pv.mu, 7);
            let b = weighted_sum(g, pv.log_std, 8);
            g.add(a, b).unwrap()
        });
        out.push((name, rel_err(&an, &nu)));
    }
    for (name, kind) in [("per-point critic", CriticKind::PerPoint), ("latent critic", CriticKind::LatentQ)] {
        let q = Critic::new(kind, &cfg, &mut rng).unwrap();
        let mut inputs = q.params().values().to_vec();
        inputs.push(action.clone());
        let n = inputs.len();
        let (an, nu) = fd_pair(&inputs, &|g, v| {
            let out = q.forward(g, &v[..n - 1], &batch, v[n - 1]).unwrap();
            weighted_sum(g, out, 9)
        });
        out.push((name, rel_err(&an, &nu)));
    }
    out
}

fn c4_networks() -> Outcome {
    let cfg = PointNetConfig::desk();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let dense = Policy::new(PolicyKind::Dense, &cfg, &mut rng).unwrap();
    let direct = Policy::new(PolicyKind::DirectVector, &cfg, &mut rng).unwrap();
    let q_point = Critic::new(CriticKind::PerPoint, &cfg, &mut rng).unwrap();
    let q_latent = Critic::new(CriticKind::LatentQ, &cfg, &mut rng).unwrap();
    let (mut perm_err, mut shift_err) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let n = rng.random_range(20..60);
        let c = random_cloud(&mut rng, n);
        let mut perm: Vec<usize> = (0..c.len()).collect();
        perm.shuffle(&mut rng);
        let pc = permuted(&c, &perm);
        let t = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let sc = shifted(&c, t);
        let action: [f64; 6] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));

        let base = policy_outputs(&dense, &c, true);
        let per = policy_outputs(&dense, &pc, true);
        for (i, &j) in perm.iter().enumerate() {
            perm_err = perm_err.max(max_diff(&per[i], &base[j]));
        }
        let sh = policy_outputs(&dense, &sc, true);
        for i in 0..base.len() {
            shift_err = shift_err.max(max_diff(&sh[i], &base[i]));
        }
        let base = policy_outputs(&direct, &c, false);
        perm_err = perm_err.max(max_diff(&policy_outputs(&direct, &pc, false)[0], &base[0]));
        shift_err = shift_err.max(max_diff(&policy_outputs(&direct, &sc, false)[0], &base[0]));
        for q in [&q_point, &q_latent] {
            let v = q.q_value(&c, &action).unwrap();
            perm_err = perm_err.max((q.q_value(&pc, &action).unwrap() - v).abs());
            shift_err = shift_err.max((q.q_value(&sc, &action).unwrap() - v).abs());
        }
    }
    let prim = primitive_errors();
    let nets = network_errors();
    fn worst<'a>(v: &[(&'a str, f64)]) -> (&'a str, f64) {
        v.iter().copied().fold(("", 0.0), |a, b| if b.1 > a.1 { b } else { a })
    }
    let (pw, pe) = worst(&prim);
    let (nw, ne) = worst(&nets);
    check(
        perm_err <= 1e-12 && shift_err <= 1e-12 && pe <= 1e-5 && ne <= 1e-5,
        format!(
            "100 clouds: permutation {perm_err:.1e}, translation {shift_err:.1e}; {} primitives, worst {pw} {pe:.1e}; \
             full networks worst {nw} {ne:.1e}",
            prim.len()
        ),
    )
}

// ---------------------------------------------------------------------------
// 5. Distillation

fn gaussian(mu: [f64; 6], log_std: [f64; 6]) -> dressing_core::nets::GaussianPolicyOutput {
    dressing_core::nets::GaussianPolicyOutput { mu, log_std }
}

fn emd_closed(s: &[dressing_core::nets::GaussianPolicyOutput], t: &[dressing_core::nets::GaussianPolicyOutput]) -> f64 {
    s.iter()
        .zip(t)
        .map(|(s, t)| {
            (0..6).map(|k| (s.mu[k] - t.mu[k]).powi(2) + (s.log_std[k].exp().sqrt() - t.log_std[k].exp().sqrt()).powi(2)).sum::<f64>()
        })
        .sum()
}

/// KL(p || q) between diagonal Gaussians.
fn kl_closed(p: &[dressing_core::nets::GaussianPolicyOutput], q: &[dressing_core::nets::GaussianPolicyOutput]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(p, q)| {
            (0..6)
                .map(|k| {
                    let (sp, sq) = (p.log_std[k].exp(), q.log_std[k].exp());
                    (sq / sp).ln() + (sp * sp + (p.mu[k] - q.mu[k]).powi(2)) / (2.0 * sq * sq) - 0.5
                })
                .sum::<f64>()
        })
        .sum()
}

fn replay(rng: &mut ChaCha8Rng, subs: &[usize]) -> ReplayBuffer {
    let mut b = ReplayBuffer::new(1000);
    for k in 0..60 {
        let obs = Observation::plain(random_cloud(rng, 10));
        let next = Observation::plain(random_cloud(rng, 10));
        b.push(Transition {
            obs,
            action: std::array::from_fn(|_| rng.random_range(-1.0..1.0)),
            reward: rng.random_range(-1.0..1.0),
            next_obs: next,
            done: k % 9 == 0,
            subrange_id: subs[k % subs.len()],
        });
    }
    b
}

fn c5_distillation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    let grid_mu = [-1.0, 0.0, 0.4];
    let grid_ls = [-2.0, -0.5, 0.0, 1.0];
    let mut pairs = Vec::new();
    for &ms in &grid_mu {
        for &mt in &grid_mu {
            for &ls in &grid_ls {
                for &lt in &grid_ls {
                    pairs.push((gaussian([ms; 6], [ls; 6]), gaussian([mt; 6], [lt; 6])));
                }
            }
        }
    }
    for _ in 0..200 {
        let s = gaussian(std::array::from_fn(|_| rng.random_range(-1.0..1.0)), std::array::from_fn(|_| rng.random_range(-3.0..1.5)));
        let t = gaussian(std::array::from_fn(|_| rng.random_range(-1.0..1.0)), std::array::from_fn(|_| rng.random_range(-3.0..1.5)));
        pairs.push((s, t));
    }
    let (students, teachers): (Vec<_>, Vec<_>) = pairs.iter().cloned().unzip();
    for k in 0..pairs.len() {
        let (s, t) = (&students[k..k + 1], &teachers[k..k + 1]);
        let emd = loss_value(LossKind::Emd, KlDirection::TeacherStudent, s, t).unwrap();
        let kl_ts = loss_value(LossKind::Kl, KlDirection::TeacherStudent, s, t).unwrap();
        let kl_st = loss_value(LossKind::Kl, KlDirection::StudentTeacher, s, t).unwrap();
        worst = worst.max((emd - emd_closed(s, t)).abs()).max((kl_ts - kl_closed(t, s)).abs()).max((kl_st - kl_closed(s, t)).abs());
    }
    let batch_emd = loss_value(LossKind::Emd, KlDirection::TeacherStudent, &students, &teachers).unwrap();
    worst = worst.max((batch_emd - emd_closed(&students, &teachers)).abs() / pairs.len() as f64);

    // beta = 0 against plain SAC, bitwise on the whole agent and the rng.
    let subs = [3, 11];
    let buf = replay(&mut rng, &subs);
    let tiny = PointNetConfig::tiny();
    let bank = TeacherBank::new(subs.iter().map(|&s| (s, Policy::new(PolicyKind::Dense, &tiny, &mut rng).unwrap()))).unwrap();
    let sac_cfg = SacConfig { batch: 16, actor_delay: 2, ..SacConfig::default() };
    let mut a = SacAgent::new(&tiny, &sac_cfg, &mut ChaCha8Rng::seed_from_u64(50)).unwrap();
    let mut b = a.clone();
    let dcfg = DistillConfig { beta: 0.0, ..DistillConfig::default() };
    let mut ra = ChaCha8Rng::seed_from_u64(51);
    let mut rb = ra.clone();
    let mut diag_equal = true;
    for _ in 0..8 {
        let da = sac_update(&buf, &mut a, &sac_cfg, &mut ra).unwrap();
        let db = distill_update(&buf, &mut b, &bank, &dcfg, &sac_cfg, &mut rb).unwrap();
        diag_equal &= da.critic_loss.to_bits() == db.critic_loss.to_bits()
            && da.actor_loss.map(f64::to_bits) == db.actor_loss.map(f64::to_bits);
    }
    let agent_bits = encode(CheckpointKind::Policy, &a).unwrap() == encode(CheckpointKind::Policy, &b).unwrap();
    let bitwise = agent_bits && diag_equal && ra == rb;

    // PCGrad hand cases.
    let close = |x: &[Vec<f64>], y: &[Vec<f64>]| x.iter().flatten().zip(y.iter().flatten()).all(|(p, q)| (p - q).abs() < 1e-12);
    let mut pc = true;
    for seed in 0..5 {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        pc &= close(&pcgrad_project(&[vec![1.0, 0.0], vec![-1.0, 1.0]], &mut r), &[vec![0.5, 0.5], vec![0.0, 1.0]]);
        pc &= close(&pcgrad_project(&[vec![2.0, 1.0, 0.0], vec![-1.0, 0.0, 1.0]], &mut r), &[vec![1.0, 1.0, 1.0], vec![-0.2, 0.4, 1.0]]);
        let calm = vec![vec![1.0, 0.0, 2.0], vec![1.0, 1.0, 0.0], vec![0.0, 3.0, 1.0]];
        let out = pcgrad_project(&calm, &mut r);
        pc &= out.iter().flatten().zip(calm.iter().flatten()).all(|(p, q)| p.to_bits() == q.to_bits());
    }
    check(
        worst <= 1e-10 && bitwise && pc,
        format!("{} Gaussian pairs, worst closed-form error {worst:.1e}; beta=0 bitwise {bitwise}; PCGrad cases {pc}", pairs.len()),
    )
}

// ---------------------------------------------------------------------------
// 6. Learning sanity on the reach toy

fn reach_sac() -> SacConfig {
    SacConfig { lr_actor: 1e-3, lr_critic: 1e-3, lr_alpha: 1e-3, eval_every: 2500, ..SacConfig::default() }
}

fn reach_oracle(env: &ReachEnv, episodes: usize) -> f64 {
    let mut env = env.clone();
    (0..episodes)
        .map(|_| {
            env.reset().unwrap();
            env.oracle_return()
        })
        .sum::<f64>()
        / episodes as f64
}

fn c6_learning_sanity() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for seed in 0..3u64 {
        let t0 = Instant::now();
        let cfg = reach_sac();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let agent = SacAgent::new(&PointNetConfig::desk(), &cfg, &mut rng).unwrap();
        let mut trainer = Trainer::new(cfg, ReachEnv::new(ReachConfig::default(), seed + 100), agent, rng).unwrap();
        let eval_env = ReachEnv::new(ReachConfig::default(), 999);
        let oracle = reach_oracle(&eval_env, 20);
        let mut eval_rng = ChaCha8Rng::seed_from_u64(0);
        let mut evaluate = |p: &Policy| evaluate_episodes(&eval_env, p, 20, false, &mut eval_rng);
        let mut reached = None;
        let mut best = f64::NEG_INFINITY;
        while trainer.env_steps < 50_000 && reached.is_none() {
            for row in trainer.run(2500, &mut SacUpdater, &mut evaluate).unwrap() {
                let ratio = row.avg_return / oracle;
                best = best.max(ratio);
                if ratio >= 0.9 && reached.is_none() {
                    reached = Some(row.step);
                }
            }
        }
        let elapsed = t0.elapsed();
        let seed_ok = reached.is_some() && elapsed < Duration::from_secs(30 * 60);
        ok &= seed_ok;
        lines.push(match reached {
            Some(step) => format!("seed {seed}: {best:.3} of oracle at step {step} in {:.0}s", elapsed.as_secs_f64()),
            None => format!("seed {seed}: best {best:.3} of oracle in 50000 steps, {:.0}s", elapsed.as_secs_f64()),
        });
    }
    check(ok, lines.join("; "))
}

// ---------------------------------------------------------------------------
// 7-9. Desk-scale pipeline

struct Pipeline {
    steps: u64,
    full_budget: bool,
    root: PathBuf,
    _tmp: Option<tempfile::TempDir>,
}

fn pipeline() -> Option<Pipeline> {
    if std::env::var("DRESS_ACCEPTANCE_FULL").ok().as_deref() != Some("1") {
        return None;
    }
    let budget = ExperimentConfig::desk().steps;
    let steps = std::env::var("DRESS_ACCEPTANCE_STEPS").ok().and_then(|s| s.parse().ok()).unwrap_or(budget);
    let (root, tmp) = match std::env::var("DRESS_ACCEPTANCE_DIR") {
        Ok(d) => (PathBuf::from(d), None),
        Err(_) => {
            let t = tempfile::tempdir().unwrap();
            (t.path().to_path_buf(), Some(t))
        }
    };
    Some(Pipeline { steps, full_budget: steps >= budget, root, _tmp: tmp })
}

const NOT_RUN: &str = "set DRESS_ACCEPTANCE_FULL=1; needs dozens of 200k-step desk runs";

impl Pipeline {
    fn base(&self) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::desk();
        cfg.steps = self.steps;
        cfg.sac.eval_every = cfg.sac.eval_every.min(self.steps);
        cfg
    }

    fn verdict(&self, ok: bool, detail: String) -> Outcome {
        if self.full_budget {
            check(ok, detail)
        } else {
            Outcome::Info(format!("{} steps per run, below the acceptance budget: {detail}", self.steps))
        }
    }

    /// One clean-observation teacher per sub-range for `seed`, reused across criteria.
    fn teachers(&self, seed: u64) -> (PathBuf, Vec<(usize, f64)>) {
        let base = self.base();
        let dir = self.root.join(format!("seed_{seed}")).join("teachers");
        let manifest = dir.join("teachers.json");
        let mut entries = Vec::new();
        let mut scores = Vec::new();
        for &sub in &base.env.subranges {
            let cfg = base.clone().with_subranges(&[sub]).unwrap();
            let tdir = dir.join(format!("sub_{sub}"));
            let policy_path = tdir.join("policy.bin");
            let policy = if policy_path.exists() {
                dressing_core::harness::load_policy(&policy_path).unwrap()
            } else {
                train_seed(&cfg, seed, &tdir, None, None, "acceptance teacher").unwrap().state.trainer.agent.policy
            };
            scores.push((sub, self.score(&cfg, seed, &policy, false)));
            entries.push(TeacherEntry { checkpoint: PathBuf::from(format!("sub_{sub}/policy.bin")), subrange: sub });
        }
        std::fs::write(&manifest, serde_json::to_string_pretty(&TeacherManifest { teachers: entries }).unwrap()).unwrap();
        (manifest, scores)
    }

    fn student(&self, cfg: &ExperimentConfig, seed: u64, name: &str, bank: Option<&TeacherBank>) -> Policy {
        let dir = self.root.join(format!("seed_{seed}")).join(name);
        let path = dir.join("policy.bin");
        if path.exists() {
            return dressing_core::harness::load_policy(&path).unwrap();
        }
        train_seed(cfg, seed, &dir, bank, None, "acceptance student").unwrap().state.trainer.agent.policy
    }

    /// Mean upper-arm ratio over the held-out poses and garments.
    fn score(&self, cfg: &ExperimentConfig, seed: u64, policy: &Policy, randomized: bool) -> f64 {
        let env = eval_env(cfg, seed).unwrap();
        let rows = eval_table(&env, &cfg.eval_garments(), &Controller::Policy { policy, randomized }, None, seed).unwrap();
        rows.iter().map(|r| r.upper_ratio).sum::<f64>() / rows.len() as f64
    }

    fn distill_cfg(&self, manifest: &Path, mode: Method) -> ExperimentConfig {
        let mut cfg = self.base();
        cfg.mode = mode;
        cfg.teacher_manifest = Some(manifest.to_path_buf());
        cfg
    }
}

fn c7_ordering() -> Outcome {
    let Some(p) = pipeline() else { return Outcome::NotRun(NOT_RUN.into()) };
    let mut ok = true;
    let mut lines = Vec::new();
    for seed in 0..3 {
        let (manifest, teacher_scores) = p.teachers(seed);
        let bank = load_teacher_bank(&manifest).unwrap();
        let emd_cfg = p.distill_cfg(&manifest, Method::Distill);
        let emd = p.score(&emd_cfg, seed, &p.student(&emd_cfg, seed, "emd", Some(&bank)), false);
        let kl_cfg = p.distill_cfg(&manifest, Method::KlDistill);
        let kl = p.score(&kl_cfg, seed, &p.student(&kl_cfg, seed, "kl", Some(&bank)), false);
        let plain = p.base();
        let none = p.score(&plain, seed, &p.student(&plain, seed, "no_distill", None), false);
        let teacher = teacher_scores.iter().map(|t| t.1).sum::<f64>() / teacher_scores.len() as f64;
        let seed_ok = emd > kl && emd > none && emd >= 0.8 * teacher;
        ok &= seed_ok;
        lines.push(format!("seed {seed}: emd {emd:.3} kl {kl:.3} none {none:.3} teachers {teacher:.3}"));
    }
    p.verdict(ok, lines.join("; "))
}

fn c8_guided_dr() -> Outcome {
    let Some(p) = pipeline() else { return Outcome::NotRun(NOT_RUN.into()) };
    let mut ok = true;
    let mut lines = Vec::new();
    for seed in 0..3 {
        let (manifest, _) = p.teachers(seed);
        let bank = load_teacher_bank(&manifest).unwrap();
        let mut guided_cfg = p.distill_cfg(&manifest, Method::Distill);
        guided_cfg.env.randomizer.mode = RandomizerMode::TrainRandomized;
        guided_cfg.sac.randomized_obs = true;
        guided_cfg.distill.guided_dr = true;
        let guided = p.score(&guided_cfg, seed, &p.student(&guided_cfg, seed, "guided_dr", Some(&bank)), true);
        let mut naive_cfg = p.base();
        naive_cfg.env.randomizer.mode = RandomizerMode::TrainRandomized;
        naive_cfg.sac.randomized_obs = true;
        let naive = p.score(&naive_cfg, seed, &p.student(&naive_cfg, seed, "naive_dr", None), true);
        ok &= guided >= naive;
        lines.push(format!("seed {seed}: guided {guided:.3} naive {naive:.3}"));
    }
    p.verdict(ok, lines.join("; "))
}

fn c9_perturbation() -> Outcome {
    let Some(p) = pipeline() else { return Outcome::NotRun(NOT_RUN.into()) };
    let perturb = PerturbConfig::default();
    assert_eq!(perturb.deltas_deg, [0.0, 5.0, 10.0]);
    let mut per_delta: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    let mut lines = Vec::new();
    for seed in 0..3 {
        let (manifest, _) = p.teachers(seed);
        let bank = load_teacher_bank(&manifest).unwrap();
        let cfg = p.distill_cfg(&manifest, Method::Distill);
        let policy = p.student(&cfg, seed, "emd", Some(&bank));
        let env = eval_env(&cfg, seed).unwrap();
        let rows = perturb_table(&env, &cfg.eval_garments(), &Controller::Policy { policy: &policy, randomized: false }, &perturb, seed).unwrap();
        for curve in perturb_curves(&rows).chunk_by(|a, b| a.joint == b.joint) {
            lines.push(format!(
                "seed {seed} {}: {}",
                curve[0].joint,
                curve.iter().map(|c| format!("{}deg {:.3}", c.delta_deg, c.upper_ratio_mean)).collect::<Vec<_>>().join(" ")
            ));
            for c in curve {
                per_delta.entry(c.delta_deg.round() as u64).or_default().push(c.upper_ratio_mean);
            }
        }
    }
    let mean: Vec<(u64, f64)> = per_delta.iter().map(|(d, v)| (*d, v.iter().sum::<f64>() / v.len() as f64)).collect();
    let monotone = mean.windows(2).all(|w| w[1].1 <= w[0].1);
    let at = |d: u64| mean.iter().find(|m| m.0 == d).map(|m| m.1).unwrap_or(f64::NAN);
    let graceful = at(5) >= 0.75 * at(0);
    let summary = mean.iter().map(|(d, v)| format!("{d}deg {v:.3}")).collect::<Vec<_>>().join(", ");
    p.verdict(monotone && graceful, format!("mean curve {summary}; {}", lines.join("; ")))
}

// ---------------------------------------------------------------------------
// 10. Determinism and persistence

fn metric_bits(rows: &[dressing_core::sac::MetricsRow]) -> Vec<u64> {
    rows.iter()
        .flat_map(|r| {
            [
                r.step,
                r.avg_return.to_bits(),
                r.upper_ratio.to_bits(),
                r.whole_ratio.to_bits(),
                r.success_rate.to_bits(),
                r.alpha.to_bits(),
                r.critic_loss.to_bits(),
                r.actor_loss.map_or(u64::MAX, f64::to_bits),
            ]
        })
        .collect()
}

fn tiny_dressing_cfg(steps: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::desk().with_garments(&[0]).unwrap().with_subranges(&[13]).unwrap();
    cfg.steps = steps;
    cfg.net = PointNetConfig::tiny();
    cfg.env.episode_length = 25;
    cfg.env.settle_steps = 10;
    cfg.sac.batch = 16;
    cfg.sac.start_steps = 60;
    cfg.sac.eval_every = 100;
    cfg.eval.episodes_during_training = 1;
    cfg
}

fn c10_determinism() -> Outcome {
    // Reach trainer: straight 10k steps against 5k + checkpoint round trip + 5k.
    let cfg = SacConfig { eval_every: 1000, ..reach_sac() };
    let fresh = || {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let agent = SacAgent::new(&PointNetConfig::tiny(), &cfg, &mut rng).unwrap();
        Trainer::new(cfg.clone(), ReachEnv::new(ReachConfig::default(), 70), agent, rng).unwrap()
    };
    let eval_env = ReachEnv::new(ReachConfig::default(), 999);
    let evaluate = || {
        let eval_env = eval_env.clone();
        move |p: &Policy| evaluate_episodes(&eval_env, p, 5, false, &mut ChaCha8Rng::seed_from_u64(0))
    };
    let mut straight = fresh();
    straight.run(10_000, &mut SacUpdater, &mut evaluate()).unwrap();
    let mut first = fresh();
    first.run(5_000, &mut SacUpdater, &mut evaluate()).unwrap();
    let bytes = encode(CheckpointKind::Trainer, &first).unwrap();
    drop(first);
    let mut resumed: Trainer<ReachEnv> = decode(&bytes, CheckpointKind::Trainer).unwrap();
    let reencoded = encode(CheckpointKind::Trainer, &resumed).unwrap() == bytes;
    resumed.run(5_000, &mut SacUpdater, &mut evaluate()).unwrap();
    let split_metrics = metric_bits(&straight.metrics) == metric_bits(&resumed.metrics) && straight.metrics.len() == 10;
    let split_state = encode(CheckpointKind::Trainer, &straight).unwrap() == encode(CheckpointKind::Trainer, &resumed).unwrap();

    // Dressing runs through the harness: same seed twice, and a resumed run.
    let tmp = tempfile::tempdir().unwrap();
    let full = tiny_dressing_cfg(300);
    let a = train_seed(&full, 3, &tmp.path().join("a"), None, None, "acceptance").unwrap();
    let b = train_seed(&full, 3, &tmp.path().join("b"), None, None, "acceptance").unwrap();
    let read = |d: &str, f: &str| std::fs::read(tmp.path().join(d).join(f)).unwrap();
    let repeat = metric_bits(&a.metrics) == metric_bits(&b.metrics)
        && read("a", "metrics.csv") == read("b", "metrics.csv")
        && read("a", "checkpoint.bin") == read("b", "checkpoint.bin");
    train_seed(&tiny_dressing_cfg(150), 3, &tmp.path().join("c"), None, None, "acceptance").unwrap();
    let state: TrainState<dressing_core::env::DressingEnv> =
        load_checkpoint(&tmp.path().join("c").join("checkpoint.bin"), CheckpointKind::Trainer).unwrap();
    let c = train_seed(&full, 3, &tmp.path().join("c"), None, Some(state), "acceptance").unwrap();
    let resumed_dressing = metric_bits(&a.metrics) == metric_bits(&c.metrics) && read("a", "checkpoint.bin") == read("c", "checkpoint.bin");

    check(
        reencoded && split_metrics && split_state && repeat && resumed_dressing,
        format!(
            "reach 10k split at 5k: metrics equal {split_metrics}, state equal {split_state}, re-encode equal {reencoded}; \
             dressing repeat bitwise {repeat}, dressing resume bitwise {resumed_dressing}"
        ),
    )
}
