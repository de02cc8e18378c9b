//! Python module `dressing`: forward kinematics, garment generation, the
//! distillation loss closed forms, a stepping environment and heuristic evaluation.

use std::collections::HashMap;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use dressing_core::arm_model::{self, ArmPose, BodyParams};
use dressing_core::baselines::{heuristic_actions, HeuristicConfig};
use dressing_core::distill::{loss_value, KlDirection, LossKind};
use dressing_core::env::{self as denv, EnvConfig, ACTION_DIM, EnvMode, Environment, EpisodeSpec, Observation, StepInfo};
use dressing_core::garment::{generate_sleeve_garment, SleeveParams};
use dressing_core::harness::{self, Controller, ExperimentConfig};
use dressing_core::nets::GaussianPolicyOutput;
use dressing_core::perception::PointClass;

type Points = Vec<[f64; 3]>;

fn runtime<E: std::fmt::Display>(e: E) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn value<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn class_id(c: PointClass) -> u8 {
    match c {
        PointClass::Garment => 0,
        PointClass::Arm => 1,
        PointClass::Gripper => 2,
    }
}

fn cloud(obs: &Observation) -> (Points, Vec<u8>) {
    let c = &obs.clean;
    (c.points.iter().map(|p| [p.x, p.y, p.z]).collect(), c.classes.iter().map(|&k| class_id(k)).collect())
}

fn info_dict<'py>(py: Python<'py>, info: &StepInfo) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("r_m", info.r_m)?;
    d.set_item("r_f", info.r_f)?;
    d.set_item("r_c", info.r_c)?;
    d.set_item("r_d", info.r_d)?;
    d.set_item("upper_ratio", info.upper_ratio)?;
    d.set_item("whole_ratio", info.whole_ratio)?;
    d.set_item("success", info.success)?;
    d.set_item("subrange_id", info.subrange_id)?;
    d.set_item("force", info.force)?;
    Ok(d)
}

/// Shoulder, elbow and fingertip positions for joint angles in degrees.
#[pyfunction]
fn forward_kinematics(phi1: f64, phi2: f64, phi3: f64) -> HashMap<&'static str, [f64; 3]> {
    let g = arm_model::forward_kinematics(&ArmPose::new(phi1, phi2, phi3), &BodyParams::default());
    let v = |p: arm_model::Vec3| [p.x, p.y, p.z];
    HashMap::from([("shoulder", v(g.shoulder)), ("elbow", v(g.elbow)), ("finger", v(g.finger))])
}

/// Vertices, triangles and opening-ring indices of a procedural sleeve garment.
#[pyfunction]
#[pyo3(signature = (name, sleeve_length=0.3, sleeve_radius=0.07, body_panel=false, resolution=12))]
fn generate_garment(
    name: &str,
    sleeve_length: f64,
    sleeve_radius: f64,
    body_panel: bool,
    resolution: usize,
) -> PyResult<(Points, Vec<[usize; 3]>, Vec<usize>)> {
    let p = SleeveParams { name: name.into(), sleeve_length, sleeve_radius, body_panel, resolution, ..SleeveParams::default() };
    let m = generate_sleeve_garment(&p).map_err(value)?;
    Ok((m.vertices.iter().map(|v| [v.x, v.y, v.z]).collect(), m.triangles.clone(), m.opening_ring.clone()))
}

fn gaussian(mu: Vec<f64>, log_std: Vec<f64>) -> PyResult<GaussianPolicyOutput> {
    let mu: [f64; ACTION_DIM] = mu.try_into().map_err(|_| PyValueError::new_err(format!("mu must have {ACTION_DIM} entries")))?;
    let log_std: [f64; ACTION_DIM] =
        log_std.try_into().map_err(|_| PyValueError::new_err(format!("log_std must have {ACTION_DIM} entries")))?;
    Ok(GaussianPolicyOutput { mu, log_std })
}

/// Distillation loss between one student and one teacher Gaussian: `"emd"`
/// or `"kl"` (teacher-to-student direction).
#[pyfunction]
fn distill_loss(kind: &str, mu_s: Vec<f64>, log_std_s: Vec<f64>, mu_t: Vec<f64>, log_std_t: Vec<f64>) -> PyResult<f64> {
    let kind = match kind {
        "emd" => LossKind::Emd,
        "kl" => LossKind::Kl,
        other => return Err(PyValueError::new_err(format!("unknown loss {other:?}"))),
    };
    let s = gaussian(mu_s, log_std_s)?;
    let t = gaussian(mu_t, log_std_t)?;
    loss_value(kind, KlDirection::default(), &[s], &[t]).map_err(runtime)
}

/// The desk-scale experiment config as JSON.
#[pyfunction]
fn default_config_json() -> PyResult<String> {
    serde_json::to_string_pretty(&ExperimentConfig::desk()).map_err(runtime)
}

fn parse_config(config_json: Option<&str>) -> PyResult<ExperimentConfig> {
    let cfg = match config_json {
        Some(text) => serde_json::from_str(text).map_err(value)?,
        None => ExperimentConfig::desk(),
    };
    cfg.validate().map_err(value)?;
    Ok(cfg)
}

/// Heuristic-planner evaluation over the held-out poses; one
/// `(pose_id, garment, upper_ratio, whole_ratio, success)` tuple per episode.
#[pyfunction]
#[pyo3(signature = (config_json=None, seed=0))]
fn evaluate_heuristic(py: Python<'_>, config_json: Option<&str>, seed: u64) -> PyResult<Vec<(String, String, f64, f64, bool)>> {
    let cfg = parse_config(config_json)?;
    py.detach(|| {
        let template = harness::eval_env(&cfg, seed)?;
        harness::eval_table(&template, &cfg.eval_garments(), &Controller::Heuristic(&cfg.heuristic), None, seed)
    })
    .map(|rows| rows.into_iter().map(|r| (r.pose_id, r.garment, r.upper_ratio, r.whole_ratio, r.success)).collect())
    .map_err(runtime)
}

/// Dressing environment. Observations are `(points, classes)` with classes
/// 0 garment, 1 arm, 2 gripper.
#[pyclass(name = "DressingEnv", unsendable)]
struct PyDressingEnv {
    env: denv::DressingEnv,
}

#[pymethods]
impl PyDressingEnv {
    /// `config_json` is an environment config; `mode` is "train" or "eval".
    #[new]
    #[pyo3(signature = (config_json=None, seed=0, mode="eval"))]
    fn new(config_json: Option<&str>, seed: u64, mode: &str) -> PyResult<Self> {
        let cfg: EnvConfig = match config_json {
            Some(text) => serde_json::from_str(text).map_err(value)?,
            None => ExperimentConfig::desk().env,
        };
        let mode = match mode {
            "train" => EnvMode::Train,
            "eval" => EnvMode::Eval,
            other => return Err(PyValueError::new_err(format!("unknown mode {other:?}"))),
        };
        Ok(Self { env: denv::DressingEnv::new(cfg, mode, seed).map_err(value)? })
    }

    fn garment_names(&self) -> Vec<String> {
        self.env.garments().iter().map(|g| g.meta.name.clone()).collect()
    }

    #[pyo3(signature = (garment=None, subrange=None))]
    fn reset(&mut self, garment: Option<usize>, subrange: Option<usize>) -> PyResult<(Points, Vec<u8>)> {
        let spec = EpisodeSpec { garment, subrange, ..EpisodeSpec::default() };
        let obs = self.env.reset_with(&spec).map_err(runtime)?;
        Ok(cloud(&obs))
    }

    /// Applies a 6-vector in [-1, 1]; returns `(points, classes, reward, done, info)`.
    fn step<'py>(&mut self, py: Python<'py>, action: Vec<f64>) -> PyResult<(Points, Vec<u8>, f64, bool, Bound<'py, PyDict>)> {
        let a: [f64; ACTION_DIM] = action.try_into().map_err(|_| PyValueError::new_err(format!("action must have {ACTION_DIM} entries")))?;
        let r = self.env.step(&a).map_err(runtime)?;
        let (pts, cls) = cloud(&r.obs);
        Ok((pts, cls, r.reward, r.done, info_dict(py, &r.info)?))
    }

    /// Open-loop heuristic plan for the current episode.
    fn heuristic_actions(&self) -> PyResult<Vec<[f64; ACTION_DIM]>> {
        heuristic_actions(&self.env, &HeuristicConfig::default()).map_err(runtime)
    }
}

#[pymodule]
fn dressing(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(forward_kinematics, m)?)?;
    m.add_function(wrap_pyfunction!(generate_garment, m)?)?;
    m.add_function(wrap_pyfunction!(distill_loss, m)?)?;
    m.add_function(wrap_pyfunction!(default_config_json, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_heuristic, m)?)?;
    m.add_class::<PyDressingEnv>()?;
    Ok(())
}
