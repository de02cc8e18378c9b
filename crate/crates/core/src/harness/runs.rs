//! Training runs, evaluation tables, seed summaries and run manifests.

use std::collections::VecDeque;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{config_hash, ExperimentConfig, Method, PerturbConfig};
use super::export::{capsule_surface_points, EpisodeLog, Frame, StepRecord};
use super::{io_err, load_checkpoint, save_checkpoint, CheckpointKind, HarnessError, Result};
use crate::arm_model::ArmPose;
use crate::baselines::{
    collect_force_data, heuristic_actions, train_force_model, write_force_csv, BaselineError, ForceModel, HapticController, HapticModelConfig,
    HeuristicConfig,
};
use crate::distill::{DistillConfig, DistillUpdater, PcgradState, PcgradUpdater, TeacherBank, TeacherManifest};
use crate::env::{DressingEnv, EnvMode, Environment, EpisodeSpec, RawAction};
use crate::nets::Policy;
use crate::sac::{self, EvalSummary, MetricsRow, SacAgent, SacUpdater, Trainer};

/// Seed offset for evaluation environments, keeping them independent of training.
const EVAL_SEED_SALT: u64 = 0x5EED_E7A1;

/// Everything needed to resume a learned run bit-for-bit.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainState<E> {
    pub method: Method,
    pub seed: u64,
    pub config_hash: String,
    pub trainer: Trainer<E>,
    pub pcgrad: Option<PcgradUpdater>,
}

impl<E: Environment> TrainState<E> {
    /// Fresh state: the agent's networks and the trainer rng both derive from `seed`.
    pub fn new(cfg: &ExperimentConfig, env: E, seed: u64) -> Result<Self> {
        if !cfg.mode.is_learned() {
            return Err(HarnessError::Config(format!("{} is not a learned method", cfg.mode.name())));
        }
        let mut sac_cfg = cfg.sac.clone();
        if matches!(cfg.mode, Method::DirectVector | Method::LatentQ) {
            sac_cfg.policy = cfg.mode.policy_kind();
            sac_cfg.critic = cfg.mode.critic_kind();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let agent = SacAgent::new(&cfg.net, &sac_cfg, &mut rng)?;
        let pcgrad = (cfg.mode == Method::Pcgrad)
            .then(|| PcgradUpdater { cfg: cfg.pcgrad.clone(), state: PcgradState::new(&sac_cfg) });
        Ok(Self {
            method: cfg.mode,
            seed,
            config_hash: config_hash(cfg),
            trainer: Trainer::new(sac_cfg, env, agent, rng)?,
            pcgrad,
        })
    }

    /// Runs `steps` more environment steps with the method's update rule.
    pub fn advance<F>(
        &mut self,
        steps: u64,
        bank: Option<&TeacherBank>,
        distill: &DistillConfig,
        evaluate: &mut F,
    ) -> Result<Vec<MetricsRow>>
    where
        F: FnMut(&Policy) -> sac::Result<EvalSummary>,
    {
        let rows = match self.method {
            Method::Sac | Method::DirectVector | Method::LatentQ => self.trainer.run(steps, &mut SacUpdater, evaluate)?,
            Method::Distill | Method::KlDistill => {
                let bank = bank.ok_or_else(|| HarnessError::MissingTeacherBank("no teachers loaded".into()))?;
                let mut up = DistillUpdater { bank, cfg: distill.clone() };
                self.trainer.run(steps, &mut up, evaluate)?
            }
            Method::Pcgrad => {
                let up = self.pcgrad.as_mut().ok_or_else(|| HarnessError::Config("PCGrad state missing".into()))?;
                self.trainer.run(steps, up, evaluate)?
            }
            Method::Heuristic | Method::HapticMpc => {
                return Err(HarnessError::Config(format!("{} is not a learned method", self.method.name())))
            }
        };
        Ok(rows)
    }
}

/// How actions are chosen during an evaluation episode.
pub enum Controller<'a> {
    Policy { policy: &'a Policy, randomized: bool },
    Heuristic(&'a HeuristicConfig),
    HapticMpc { model: &'a ForceModel, cfg: &'a HapticModelConfig },
}

fn frame(env: &DressingEnv) -> Frame {
    let ep = env.episode().expect("active episode");
    Frame { cloth: ep.cloth.positions.clone(), arm: capsule_surface_points(&ep.arm, 8, 12), gripper: ep.cloth.gripper.position }
}

/// Resets to `spec`, applies `delta` to the physical arm after the capture,
/// and runs the controller until the episode ends.
pub fn run_episode(
    env: &mut DressingEnv,
    spec: &EpisodeSpec,
    delta: Option<&ArmPose>,
    ctrl: &Controller<'_>,
    rng: &mut ChaCha8Rng,
    record: bool,
) -> Result<EpisodeLog> {
    let mut obs = env.reset_with(spec)?;
    let zero = ArmPose::new(0.0, 0.0, 0.0);
    let delta = *delta.unwrap_or(&zero);
    if delta != zero {
        env.perturb_arm(&delta)?;
    }
    let mut plan: VecDeque<RawAction> = match ctrl {
        Controller::Heuristic(cfg) => match heuristic_actions(env, cfg) {
            Ok(a) => a.into(),
            Err(BaselineError::NoCollisionFreePath { segment, lift }) => {
                log::warn!("heuristic planner found no path (segment {segment}, lift {lift:.3}); holding still");
                VecDeque::new()
            }
            Err(e) => return Err(e.into()),
        },
        _ => VecDeque::new(),
    };
    let mut haptic = match ctrl {
        Controller::HapticMpc { cfg, .. } => Some(HapticController::new(env, cfg)?),
        _ => None,
    };
    let ep = env.episode().expect("reset succeeded");
    let mut log = EpisodeLog {
        garment: ep.garment,
        garment_name: env.garments()[ep.garment].meta.name.clone(),
        subrange: ep.subrange,
        pose: ep.pose,
        delta,
        steps: Vec::new(),
        frames: Vec::new(),
        final_info: ep.last_info,
    };
    loop {
        let action = match ctrl {
            Controller::Policy { policy, randomized } => policy.act(obs.for_policy(*randomized), rng, true)?,
            Controller::Heuristic(_) => plan.pop_front().unwrap_or([0.0; 6]),
            Controller::HapticMpc { model, cfg } => haptic.as_ref().expect("built above").select(model, cfg, rng)?,
        };
        let res = env.step(&action)?;
        if let Some(h) = haptic.as_mut() {
            h.observe(env, res.info.force)?;
        }
        log.steps.push(StepRecord::new(log.steps.len(), action, res.reward, &res.info));
        if record {
            log.frames.push(frame(env));
        }
        log.final_info = res.info;
        if res.done {
            return Ok(log);
        }
        obs = res.obs;
    }
}

/// Held-out poses of every configured sub-range crossed with `garments`,
/// labelled `"{subrange}-{pose index}"`.
pub fn held_out_specs(env: &DressingEnv, garments: &[usize]) -> Vec<(String, EpisodeSpec)> {
    let mut out = Vec::new();
    for set in env.pose_sets() {
        for (k, pose) in set.eval.iter().enumerate() {
            for &g in garments {
                let spec = EpisodeSpec { garment: Some(g), subrange: Some(set.subrange), pose: Some(*pose), body: None };
                out.push((format!("{}-{k}", set.subrange), spec));
            }
        }
    }
    out
}

/// Evaluation environment for a config and seed.
pub fn eval_env(cfg: &ExperimentConfig, seed: u64) -> Result<DressingEnv> {
    Ok(DressingEnv::new(cfg.env.clone(), EnvMode::Eval, seed ^ EVAL_SEED_SALT)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub pose_id: String,
    pub garment: String,
    pub upper_ratio: f64,
    pub whole_ratio: f64,
    pub success: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbRow {
    pub pose_id: String,
    pub garment: String,
    pub joint: String,
    pub delta_deg: f64,
    pub upper_ratio: f64,
    pub whole_ratio: f64,
    pub success: bool,
}

/// One episode per held-out (pose, garment) pair on a fresh copy of `template`.
pub fn eval_table(
    template: &DressingEnv,
    garments: &[usize],
    ctrl: &Controller<'_>,
    delta: Option<&ArmPose>,
    seed: u64,
) -> Result<Vec<EvalRow>> {
    let mut env = template.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    held_out_specs(&env, garments)
        .into_iter()
        .map(|(pose_id, spec)| {
            let log = run_episode(&mut env, &spec, delta, ctrl, &mut rng, false)?;
            Ok(EvalRow {
                pose_id,
                garment: log.garment_name,
                upper_ratio: log.final_info.upper_ratio,
                whole_ratio: log.final_info.whole_ratio,
                success: log.final_info.success,
            })
        })
        .collect()
}

/// Evaluation table per joint and magnitude. The zero change is evaluated
/// once, with joint `none`.
pub fn perturb_table(
    template: &DressingEnv,
    garments: &[usize],
    ctrl: &Controller<'_>,
    perturb: &PerturbConfig,
    seed: u64,
) -> Result<Vec<PerturbRow>> {
    let mut rows = Vec::new();
    let add = |joint: &str, deg: f64, delta: ArmPose, rows: &mut Vec<PerturbRow>| -> Result<()> {
        for r in eval_table(template, garments, ctrl, Some(&delta), seed)? {
            rows.push(PerturbRow {
                pose_id: r.pose_id,
                garment: r.garment,
                joint: joint.to_string(),
                delta_deg: deg,
                upper_ratio: r.upper_ratio,
                whole_ratio: r.whole_ratio,
                success: r.success,
            });
        }
        Ok(())
    };
    if perturb.deltas_deg.contains(&0.0) {
        add("none", 0.0, ArmPose::new(0.0, 0.0, 0.0), &mut rows)?;
    }
    for &joint in &perturb.joints {
        for &deg in perturb.deltas_deg.iter().filter(|d| **d != 0.0) {
            add(joint.name(), deg, joint.delta(deg), &mut rows)?;
        }
    }
    Ok(rows)
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_eval_csv(path: &Path, rows: &[EvalRow]) -> Result<()> {
    write_csv(path, rows)
}

pub fn write_perturb_csv(path: &Path, rows: &[PerturbRow]) -> Result<()> {
    write_csv(path, rows)
}

/// Mean metrics of one (joint, magnitude) cell of a perturbation table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub joint: String,
    pub delta_deg: f64,
    pub episodes: usize,
    pub upper_ratio_mean: f64,
    pub whole_ratio_mean: f64,
    pub success_rate: f64,
}

/// One curve per perturbed joint, sorted by magnitude. The shared zero rows
/// (joint `none`) start every curve.
pub fn perturb_curves(rows: &[PerturbRow]) -> Vec<CurvePoint> {
    let point = |joint: &str, delta_deg: f64, cell: &[&PerturbRow]| {
        let n = cell.len().max(1) as f64;
        CurvePoint {
            joint: joint.to_string(),
            delta_deg,
            episodes: cell.len(),
            upper_ratio_mean: cell.iter().map(|r| r.upper_ratio).sum::<f64>() / n,
            whole_ratio_mean: cell.iter().map(|r| r.whole_ratio).sum::<f64>() / n,
            success_rate: cell.iter().filter(|r| r.success).count() as f64 / n,
        }
    };
    let zero: Vec<&PerturbRow> = rows.iter().filter(|r| r.joint == "none").collect();
    let mut joints: Vec<&str> = Vec::new();
    for r in rows.iter().filter(|r| r.joint != "none") {
        if !joints.contains(&r.joint.as_str()) {
            joints.push(&r.joint);
        }
    }
    let mut out = Vec::new();
    for j in joints {
        if !zero.is_empty() {
            out.push(point(j, 0.0, &zero));
        }
        let mut degs: Vec<f64> = rows.iter().filter(|r| r.joint == j).map(|r| r.delta_deg).collect();
        degs.sort_by(f64::total_cmp);
        degs.dedup();
        for d in degs {
            let cell: Vec<&PerturbRow> = rows.iter().filter(|r| r.joint == j && r.delta_deg == d).collect();
            out.push(point(j, d, &cell));
        }
    }
    out
}

pub fn write_curve_csv(path: &Path, points: &[CurvePoint]) -> Result<()> {
    write_csv(path, points)
}

/// Mean and sample standard deviation across seeds at one evaluation step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub step: u64,
    pub seeds: usize,
    pub avg_return_mean: f64,
    pub avg_return_std: f64,
    pub upper_ratio_mean: f64,
    pub upper_ratio_std: f64,
    pub whole_ratio_mean: f64,
    pub whole_ratio_std: f64,
    pub success_rate_mean: f64,
    pub success_rate_std: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (m, var.sqrt())
}

/// Summary over the evaluation steps present in every seed's metrics.
pub fn summarize(per_seed: &[Vec<MetricsRow>]) -> Vec<SummaryRow> {
    let Some(first) = per_seed.first() else { return Vec::new() };
    first
        .iter()
        .map(|r| r.step)
        .filter_map(|step| {
            let rows: Vec<&MetricsRow> =
                per_seed.iter().map(|m| m.iter().find(|r| r.step == step)).collect::<Option<_>>()?;
            let col = |f: fn(&MetricsRow) -> f64| mean_std(&rows.iter().map(|r| f(r)).collect::<Vec<_>>());
            let (avg_return_mean, avg_return_std) = col(|r| r.avg_return);
            let (upper_ratio_mean, upper_ratio_std) = col(|r| r.upper_ratio);
            let (whole_ratio_mean, whole_ratio_std) = col(|r| r.whole_ratio);
            let (success_rate_mean, success_rate_std) = col(|r| r.success_rate);
            Some(SummaryRow {
                step,
                seeds: rows.len(),
                avg_return_mean,
                avg_return_std,
                upper_ratio_mean,
                upper_ratio_std,
                whole_ratio_mean,
                whole_ratio_std,
                success_rate_mean,
                success_rate_std,
            })
        })
        .collect()
}

pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    write_csv(path, rows)
}

/// Mean and sample standard deviation across seeds of per-seed evaluation means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummaryRow {
    pub seeds: usize,
    pub episodes_per_seed: usize,
    pub upper_ratio_mean: f64,
    pub upper_ratio_std: f64,
    pub whole_ratio_mean: f64,
    pub whole_ratio_std: f64,
    pub success_rate_mean: f64,
    pub success_rate_std: f64,
}

pub fn summarize_eval(per_seed: &[Vec<EvalRow>]) -> EvalSummaryRow {
    let means = |f: fn(&EvalRow) -> f64| -> Vec<f64> {
        per_seed.iter().map(|rows| rows.iter().map(f).sum::<f64>() / rows.len().max(1) as f64).collect()
    };
    let (upper_ratio_mean, upper_ratio_std) = mean_std(&means(|r| r.upper_ratio));
    let (whole_ratio_mean, whole_ratio_std) = mean_std(&means(|r| r.whole_ratio));
    let (success_rate_mean, success_rate_std) = mean_std(&means(|r| f64::from(u8::from(r.success))));
    EvalSummaryRow {
        seeds: per_seed.len(),
        episodes_per_seed: per_seed.first().map_or(0, Vec::len),
        upper_ratio_mean,
        upper_ratio_std,
        whole_ratio_mean,
        whole_ratio_std,
        success_rate_mean,
        success_rate_std,
    }
}

pub fn write_eval_summary_csv(path: &Path, row: &EvalSummaryRow) -> Result<()> {
    write_csv(path, std::slice::from_ref(row))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: PathBuf,
    pub sha256: String,
}

/// Everything needed to regenerate a run's artifacts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub mode: Method,
    pub seed: Option<u64>,
    pub config_sha256: String,
    pub code_version: String,
    pub config: ExperimentConfig,
    pub artifacts: Vec<Artifact>,
}

impl RunManifest {
    pub fn new(command: &str, cfg: &ExperimentConfig, seed: Option<u64>) -> Self {
        Self {
            command: command.to_string(),
            mode: cfg.mode,
            seed,
            config_sha256: config_hash(cfg),
            code_version: format!("dressing-core {}", env!("CARGO_PKG_VERSION")),
            config: cfg.clone(),
            artifacts: Vec::new(),
        }
    }
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Hashes the listed files (relative to `dir`) into the manifest and writes
/// `manifest.json`.
pub fn write_manifest(dir: &Path, mut manifest: RunManifest, files: &[PathBuf]) -> Result<PathBuf> {
    manifest.artifacts = files
        .iter()
        .map(|f| {
            let full = dir.join(f);
            Ok(Artifact { path: f.clone(), sha256: sha256_file(&full)? })
        })
        .collect::<Result<_>>()?;
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(io_err(&path))?;
    Ok(path)
}

/// Policy from a policy checkpoint or a full training checkpoint.
pub fn load_policy(path: &Path) -> Result<Policy> {
    match load_checkpoint::<Policy>(path, CheckpointKind::Policy) {
        Err(HarnessError::Kind { found: CheckpointKind::Trainer, .. }) => {
            let st: TrainState<DressingEnv> = load_checkpoint(path, CheckpointKind::Trainer)?;
            Ok(st.trainer.agent.policy)
        }
        other => other,
    }
}

pub fn load_teacher_bank(manifest: &Path) -> Result<TeacherBank> {
    let m = TeacherManifest::load(manifest).map_err(|e| HarnessError::MissingTeacherBank(e.to_string()))?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let teachers = m
        .resolve(base)
        .into_iter()
        .map(|(sub, p)| {
            let policy = load_policy(&p).map_err(|e| HarnessError::MissingTeacherBank(format!("{}: {e}", p.display())))?;
            Ok((sub, policy))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TeacherBank::new(teachers)?)
}

pub struct TrainOutcome {
    pub metrics: Vec<MetricsRow>,
    pub dir: PathBuf,
    pub state: TrainState<DressingEnv>,
}

/// Trains one seed into `dir`: `metrics.csv`, `checkpoint.bin` (full state),
/// `policy.bin` and `manifest.json`. A `resume` state continues where it stopped.
pub fn train_seed(
    cfg: &ExperimentConfig,
    seed: u64,
    dir: &Path,
    bank: Option<&TeacherBank>,
    resume: Option<TrainState<DressingEnv>>,
    command: &str,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if cfg.mode.uses_teachers() && bank.is_none() {
        return Err(HarnessError::MissingTeacherBank("no teachers loaded".into()));
    }
    let mut state = match resume {
        Some(mut s) => {
            let hash = config_hash(cfg);
            if s.config_hash != hash {
                log::warn!("resuming a checkpoint written under a different config");
                s.config_hash = hash;
            }
            s
        }
        None => TrainState::new(cfg, DressingEnv::new(cfg.env.clone(), EnvMode::Train, seed)?, seed)?,
    };
    let template = eval_env(cfg, seed)?;
    let mut specs = held_out_specs(&template, &cfg.eval_garments());
    specs = specs.into_iter().cycle().take(cfg.eval.episodes_during_training.max(1)).collect();
    let randomized = cfg.sac.randomized_obs;
    let mut evaluate = |policy: &Policy| -> sac::Result<EvalSummary> {
        let mut env = template.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ EVAL_SEED_SALT);
        let ctrl = Controller::Policy { policy, randomized };
        let mut s = EvalSummary { episodes: specs.len(), ..EvalSummary::default() };
        for (_, spec) in &specs {
            let log = run_episode(&mut env, spec, None, &ctrl, &mut rng, false).map_err(|e| sac::SacError::Aux(e.to_string()))?;
            s.avg_return += log.steps.iter().map(|r| r.r_total).sum::<f64>();
            s.upper_ratio += log.final_info.upper_ratio;
            s.whole_ratio += log.final_info.whole_ratio;
            s.success_rate += f64::from(u8::from(log.final_info.success));
        }
        let k = specs.len() as f64;
        s.avg_return /= k;
        s.upper_ratio /= k;
        s.whole_ratio /= k;
        s.success_rate /= k;
        Ok(s)
    };
    let distill = cfg.effective_distill();
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let ckpt = dir.join("checkpoint.bin");
    while state.trainer.env_steps < cfg.steps {
        let left = cfg.steps - state.trainer.env_steps;
        let chunk = if cfg.checkpoint_every > 0 { left.min(cfg.checkpoint_every) } else { left };
        state.advance(chunk, bank, &distill, &mut evaluate)?;
        save_checkpoint(&ckpt, CheckpointKind::Trainer, &state)?;
    }
    if !ckpt.exists() {
        save_checkpoint(&ckpt, CheckpointKind::Trainer, &state)?;
    }
    save_checkpoint(&dir.join("policy.bin"), CheckpointKind::Policy, &state.trainer.agent.policy)?;
    let metrics = state.trainer.metrics.clone();
    let mpath = dir.join("metrics.csv");
    let file = std::fs::File::create(&mpath).map_err(io_err(&mpath))?;
    sac::write_metrics_csv(file, &metrics).map_err(io_err(&mpath))?;
    write_manifest(
        dir,
        RunManifest::new(command, cfg, Some(seed)),
        &["metrics.csv".into(), "policy.bin".into(), "checkpoint.bin".into()],
    )?;
    Ok(TrainOutcome { metrics, dir: dir.to_path_buf(), state })
}

/// Trains every configured seed into `out/seed_{s}` and writes `summary.csv`
/// (mean and sample std across seeds) plus a top-level manifest.
pub fn train_all(cfg: &ExperimentConfig, out: &Path, bank: Option<&TeacherBank>, command: &str) -> Result<Vec<TrainOutcome>> {
    cfg.validate()?;
    let mut outcomes = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        log::info!("{}: training seed {seed} for {} steps", cfg.mode.name(), cfg.steps);
        outcomes.push(train_seed(cfg, seed, &out.join(format!("seed_{seed}")), bank, None, command)?);
    }
    let per_seed: Vec<Vec<MetricsRow>> = outcomes.iter().map(|o| o.metrics.clone()).collect();
    write_summary_csv(&out.join("summary.csv"), &summarize(&per_seed))?;
    let mut files = vec![PathBuf::from("summary.csv")];
    files.extend(cfg.seeds.iter().map(|s| PathBuf::from(format!("seed_{s}/metrics.csv"))));
    write_manifest(out, RunManifest::new(command, cfg, None), &files)?;
    Ok(outcomes)
}

/// Artifacts of one haptic-MPC baseline seed.
pub struct HapticOutcome {
    pub model: ForceModel,
    pub losses: Vec<f64>,
    pub rows: Vec<EvalRow>,
}

/// Collects force data, fits the force model and evaluates the controller on
/// held-out poses. Writes `force_data.csv`, `force_model.bin`,
/// `force_loss.csv`, `eval.csv` and `manifest.json` into `dir`.
pub fn haptic_baseline(cfg: &ExperimentConfig, seed: u64, dir: &Path, command: &str) -> Result<HapticOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut env = DressingEnv::new(cfg.env.clone(), EnvMode::Train, seed)?;
    let data = collect_force_data(&mut env, cfg.haptic_data_episodes, &cfg.haptic, &mut rng)?;
    let (model, losses) = train_force_model(&data, &cfg.haptic, &mut rng)?;
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let dpath = dir.join("force_data.csv");
    write_force_csv(std::fs::File::create(&dpath).map_err(io_err(&dpath))?, &data)?;
    save_checkpoint(&dir.join("force_model.bin"), CheckpointKind::ForceModel, &model)?;
    #[derive(Serialize)]
    struct LossRow {
        epoch: usize,
        mse: f64,
    }
    let loss_rows: Vec<LossRow> = losses.iter().enumerate().map(|(epoch, &mse)| LossRow { epoch, mse }).collect();
    write_csv(&dir.join("force_loss.csv"), &loss_rows)?;
    let template = eval_env(cfg, seed)?;
    let ctrl = Controller::HapticMpc { model: &model, cfg: &cfg.haptic };
    let rows = eval_table(&template, &cfg.eval_garments(), &ctrl, None, seed ^ EVAL_SEED_SALT)?;
    write_eval_csv(&dir.join("eval.csv"), &rows)?;
    write_manifest(
        dir,
        RunManifest::new(command, cfg, Some(seed)),
        &["force_data.csv".into(), "force_model.bin".into(), "force_loss.csv".into(), "eval.csv".into()],
    )?;
    Ok(HapticOutcome { model, losses, rows })
}
