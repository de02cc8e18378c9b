//! The `dress` command line: training, distillation, evaluation, baselines,
//! garment generation, trajectory rendering and perturbation evaluation.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dressing_core::baselines::ForceModel;
use dressing_core::distill::{TeacherBank, TeacherEntry, TeacherManifest};
use dressing_core::env::GarmentSource;
use dressing_core::garment::{generate_sleeve_garment, SleeveParams};
use dressing_core::harness::{
    self, eval_env, eval_table, export_trajectory, haptic_baseline, held_out_specs, load_checkpoint, load_config, load_policy,
    load_teacher_bank, perturb_curves, perturb_table, resolve_output_dir, run_episode, summarize_eval, train_all, train_seed,
    write_curve_csv, write_eval_csv, write_eval_summary_csv, write_manifest, write_perturb_csv, CheckpointKind, Controller, EpisodeLog,
    ExperimentConfig, Method, PerturbJoint, RunManifest, TrainState,
};
use dressing_core::nets::Policy;
use dressing_core::perception::RandomizerMode;

#[derive(Debug, Parser)]
#[command(name = "dress", version, about = "Robot-assisted dressing experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every experiment subcommand. Command-line values override
/// the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// Experiment config (TOML or JSON). Defaults to the desk-scale recipe.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run this seed only.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory. Defaults to the config's, under $DRESS_OUTPUT_ROOT when set.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma-separated pose sub-range ids (0..27).
    #[arg(long, value_delimiter = ',')]
    pub subranges: Vec<usize>,
    /// Comma-separated garment names or registry indices.
    #[arg(long, value_delimiter = ',')]
    pub garments: Vec<String>,
    /// Environment steps per training run.
    #[arg(long)]
    pub steps: Option<u64>,
    /// Method: sac, distill, kl-distill, pcgrad, direct-vector, latent-q, heuristic, haptic-mpc.
    #[arg(long)]
    pub mode: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train with SAC (or the configured learned method) on the chosen sub-ranges.
    Train {
        #[command(flatten)]
        common: Common,
        /// Train one teacher per sub-range and write `teachers.json`.
        #[arg(long)]
        teachers: bool,
        /// Continue from a training checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Distill a teacher bank into one student.
    Distill {
        #[command(flatten)]
        common: Common,
        /// Teacher manifest; overrides the config's.
        #[arg(long)]
        teacher_manifest: Option<PathBuf>,
        /// Guided domain randomization: teachers see clean observations, the student randomized ones.
        #[arg(long)]
        guided: bool,
    },
    /// Evaluate a checkpoint over held-out poses and garments.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Policy or training checkpoint; a force model for haptic-mpc. Not needed for heuristic.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run a baseline method end to end.
    Baseline {
        #[command(flatten)]
        common: Common,
        /// Teacher manifest for kl-distill.
        #[arg(long)]
        teacher_manifest: Option<PathBuf>,
    },
    /// Write procedural garments as OBJ meshes plus annotation sidecars.
    GenGarment {
        /// Experiment config whose garment registry is generated.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory for the OBJ meshes, sidecars and `registry.json`.
        #[arg(long)]
        out: PathBuf,
        /// Generate a single garment with this name instead of the config's registry.
        #[arg(long)]
        name: Option<String>,
        #[arg(long, default_value_t = 0.3)]
        sleeve_length: f64,
        #[arg(long, default_value_t = 0.07)]
        sleeve_radius: f64,
        #[arg(long)]
        body_panel: bool,
        #[arg(long, default_value_t = 12)]
        resolution: usize,
    },
    /// Record one episode and export it as PLY frames plus a JSONL step log.
    Render {
        #[command(flatten)]
        common: Common,
        /// Policy checkpoint (a force model for haptic-mpc). Without one the heuristic planner drives.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Index into the held-out (pose, garment) list.
        #[arg(long, default_value_t = 0)]
        episode: usize,
        /// Re-export a saved `episode.json` instead of simulating.
        #[arg(long)]
        from_log: Option<PathBuf>,
    },
    /// Evaluate with joint-angle changes applied after the arm capture.
    PerturbEval {
        #[command(flatten)]
        common: Common,
        /// Policy or training checkpoint; a force model for haptic-mpc. Not needed for heuristic.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Comma-separated magnitudes in degrees; overrides the config.
        #[arg(long, value_delimiter = ',')]
        deltas: Vec<f64>,
        /// Comma-separated joints: shoulder-down, elbow-down, elbow-inward.
        #[arg(long, value_delimiter = ',')]
        joints: Vec<String>,
    },
}

fn garment_name(src: &GarmentSource) -> String {
    match src {
        GarmentSource::Generated(p) => p.name.clone(),
        GarmentSource::File { mesh, .. } => mesh.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
    }
}

/// Loads the config and applies the command-line overrides. Validation is
/// left to the caller, after any subcommand-specific changes.
pub fn prepare(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => load_config(p).with_context(|| format!("loading {}", p.display()))?,
        None => ExperimentConfig::desk(),
    };
    if let Some(m) = &common.mode {
        cfg.mode = Method::parse(m)?;
    }
    if let Some(s) = common.seed {
        cfg.seeds = vec![s];
    }
    if let Some(n) = common.steps {
        cfg.steps = n;
    }
    if !common.subranges.is_empty() {
        cfg = cfg.with_subranges(&common.subranges)?;
    }
    if !common.garments.is_empty() {
        let names: Vec<String> = cfg.env.garments.iter().map(garment_name).collect();
        let idx = common
            .garments
            .iter()
            .map(|g| match names.iter().position(|n| n == g) {
                Some(i) => Ok(i),
                None => g.parse::<usize>().with_context(|| format!("unknown garment {g:?}; registered: {}", names.join(", "))),
            })
            .collect::<Result<Vec<_>>>()?;
        cfg = cfg.with_garments(&idx)?;
    }
    Ok(cfg)
}

fn out_dir(cfg: &ExperimentConfig, common: &Common) -> PathBuf {
    resolve_output_dir(cfg, common.out.as_deref())
}

fn first_seed(cfg: &ExperimentConfig) -> u64 {
    cfg.seeds[0]
}

fn teacher_bank(cfg: &ExperimentConfig) -> Result<Option<TeacherBank>> {
    if !cfg.mode.uses_teachers() {
        return Ok(None);
    }
    let m = cfg.teacher_manifest.as_ref().ok_or_else(|| harness::HarnessError::MissingTeacherBank("set teacher_manifest".into()))?;
    Ok(Some(load_teacher_bank(m)?))
}

/// A controller's owned state, loaded from the command line.
enum Loaded {
    Policy(Policy),
    Heuristic,
    Haptic(ForceModel),
}

impl Loaded {
    fn from_args(cfg: &ExperimentConfig, checkpoint: Option<&Path>) -> Result<Self> {
        Ok(match (cfg.mode, checkpoint) {
            (Method::Heuristic, _) => Loaded::Heuristic,
            (Method::HapticMpc, Some(p)) => Loaded::Haptic(load_checkpoint(p, CheckpointKind::ForceModel)?),
            (Method::HapticMpc, None) => bail!("haptic-mpc needs --checkpoint pointing at a force model"),
            (_, Some(p)) => Loaded::Policy(load_policy(p).with_context(|| format!("loading {}", p.display()))?),
            (m, None) => bail!("{} needs --checkpoint", m.name()),
        })
    }

    fn controller<'a>(&'a self, cfg: &'a ExperimentConfig) -> Controller<'a> {
        match self {
            Loaded::Policy(policy) => Controller::Policy { policy, randomized: cfg.sac.randomized_obs },
            Loaded::Heuristic => Controller::Heuristic(&cfg.heuristic),
            Loaded::Haptic(model) => Controller::HapticMpc { model, cfg: &cfg.haptic },
        }
    }
}

fn write_teacher_manifest(path: &Path, m: &TeacherManifest) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(m)?).with_context(|| format!("writing {}", path.display()))
}

fn cmd_train(common: &Common, teachers: bool, resume: Option<&Path>) -> Result<()> {
    let cfg = prepare(common)?;
    cfg.validate()?;
    if !cfg.mode.is_learned() {
        bail!("{} is not trained; use `dress baseline --mode {}`", cfg.mode.name(), cfg.mode.name());
    }
    let out = out_dir(&cfg, common);
    let bank = teacher_bank(&cfg)?;
    if teachers {
        let seed = first_seed(&cfg);
        let mut manifest = TeacherManifest::default();
        let mut files = Vec::new();
        for &sub in &cfg.env.subranges {
            let sub_cfg = cfg.clone().with_subranges(&[sub])?;
            let rel = PathBuf::from(format!("teacher_{sub}"));
            log::info!("training teacher for sub-range {sub} (seed {seed})");
            train_seed(&sub_cfg, seed, &out.join(&rel), bank.as_ref(), None, "train --teachers")?;
            manifest.teachers.push(TeacherEntry { checkpoint: rel.join("policy.bin"), subrange: sub });
            files.push(rel.join("policy.bin"));
        }
        write_teacher_manifest(&out.join("teachers.json"), &manifest)?;
        files.push("teachers.json".into());
        write_manifest(&out, RunManifest::new("train --teachers", &cfg, Some(seed)), &files)?;
        println!("wrote {} teachers to {}", manifest.teachers.len(), out.join("teachers.json").display());
        return Ok(());
    }
    if let Some(ckpt) = resume {
        let seed = first_seed(&cfg);
        let state: TrainState<_> = load_checkpoint(ckpt, CheckpointKind::Trainer)?;
        if state.seed != seed || state.method != cfg.mode {
            bail!("checkpoint is {} seed {}, config asks for {} seed {seed}", state.method.name(), state.seed, cfg.mode.name());
        }
        let o = train_seed(&cfg, seed, &out.join(format!("seed_{seed}")), bank.as_ref(), Some(state), "train --resume")?;
        println!("resumed to step {} in {}", o.state.trainer.env_steps, o.dir.display());
        return Ok(());
    }
    let outs = train_all(&cfg, &out, bank.as_ref(), "train")?;
    println!("trained {} seed(s); summary in {}", outs.len(), out.join("summary.csv").display());
    Ok(())
}

fn cmd_distill(common: &Common, teacher_manifest: Option<&Path>, guided: bool) -> Result<()> {
    let mut cfg = prepare(common)?;
    if !cfg.mode.uses_teachers() {
        cfg.mode = Method::Distill;
    }
    if let Some(m) = teacher_manifest {
        cfg.teacher_manifest = Some(m.to_path_buf());
    }
    if guided {
        cfg.distill.guided_dr = true;
        cfg.sac.randomized_obs = true;
        cfg.env.randomizer.mode = RandomizerMode::TrainRandomized;
    }
    cfg.validate()?;
    let bank = teacher_bank(&cfg)?;
    let out = out_dir(&cfg, common);
    let outs = train_all(&cfg, &out, bank.as_ref(), "distill")?;
    println!("distilled {} seed(s); summary in {}", outs.len(), out.join("summary.csv").display());
    Ok(())
}

fn cmd_eval(common: &Common, checkpoint: Option<&Path>) -> Result<()> {
    let cfg = prepare(common)?;
    cfg.validate()?;
    let seed = first_seed(&cfg);
    let loaded = Loaded::from_args(&cfg, checkpoint)?;
    let template = eval_env(&cfg, seed)?;
    let rows = eval_table(&template, &cfg.eval_garments(), &loaded.controller(&cfg), None, seed)?;
    let out = out_dir(&cfg, common);
    write_eval_csv(&out.join("eval.csv"), &rows)?;
    write_manifest(&out, RunManifest::new("eval", &cfg, Some(seed)), &["eval.csv".into()])?;
    let mean = rows.iter().map(|r| r.upper_ratio).sum::<f64>() / rows.len().max(1) as f64;
    println!("{} episodes, mean upper-arm ratio {mean:.3}; wrote {}", rows.len(), out.join("eval.csv").display());
    Ok(())
}

fn cmd_baseline(common: &Common, teacher_manifest: Option<&Path>) -> Result<()> {
    let mut cfg = prepare(common)?;
    if common.mode.is_none() {
        bail!("baseline needs --mode (heuristic, haptic-mpc, pcgrad, direct-vector, latent-q, kl-distill)");
    }
    if matches!(cfg.mode, Method::Sac | Method::Distill) {
        bail!("{} is not a baseline; use `dress train` or `dress distill`", cfg.mode.name());
    }
    if let Some(m) = teacher_manifest {
        cfg.teacher_manifest = Some(m.to_path_buf());
    }
    cfg.validate()?;
    let out = out_dir(&cfg, common);
    let command = format!("baseline --mode {}", cfg.mode.name());
    if cfg.mode.is_learned() {
        let bank = teacher_bank(&cfg)?;
        train_all(&cfg, &out, bank.as_ref(), &command)?;
        println!("{} done; summary in {}", cfg.mode.name(), out.join("summary.csv").display());
        return Ok(());
    }
    let mut per_seed = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let dir = out.join(format!("seed_{seed}"));
        let rows = if cfg.mode == Method::HapticMpc {
            haptic_baseline(&cfg, seed, &dir, &command)?.rows
        } else {
            let template = eval_env(&cfg, seed)?;
            let rows = eval_table(&template, &cfg.eval_garments(), &Controller::Heuristic(&cfg.heuristic), None, seed)?;
            write_eval_csv(&dir.join("eval.csv"), &rows)?;
            write_manifest(&dir, RunManifest::new(&command, &cfg, Some(seed)), &["eval.csv".into()])?;
            rows
        };
        per_seed.push(rows);
    }
    let summary = summarize_eval(&per_seed);
    write_eval_summary_csv(&out.join("eval_summary.csv"), &summary)?;
    let mut files = vec![PathBuf::from("eval_summary.csv")];
    files.extend(cfg.seeds.iter().map(|s| PathBuf::from(format!("seed_{s}/eval.csv"))));
    write_manifest(&out, RunManifest::new(&command, &cfg, None), &files)?;
    println!(
        "{}: upper-arm ratio {:.3} ± {:.3} over {} seed(s)",
        cfg.mode.name(),
        summary.upper_ratio_mean,
        summary.upper_ratio_std,
        summary.seeds
    );
    Ok(())
}

fn cmd_gen_garment(
    config: Option<&Path>,
    out: &Path,
    name: Option<&str>,
    params: SleeveParams,
) -> Result<()> {
    let sources: Vec<GarmentSource> = match (name, config) {
        (Some(n), _) => vec![GarmentSource::Generated(SleeveParams { name: n.to_string(), ..params })],
        (None, Some(p)) => load_config(p)?.env.garments,
        (None, None) => ExperimentConfig::desk().env.garments,
    };
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut registry = Vec::with_capacity(sources.len());
    for src in &sources {
        let mesh = match src {
            GarmentSource::Generated(p) => generate_sleeve_garment(p)?,
            other => other.load()?,
        };
        let stem = mesh.meta.name.clone();
        let (obj, ann) = (PathBuf::from(format!("{stem}.obj")), PathBuf::from(format!("{stem}.json")));
        mesh.save(&out.join(&obj), &out.join(&ann))?;
        println!("{stem}: {} vertices, {} triangles", mesh.num_vertices(), mesh.triangles.len());
        registry.push(GarmentSource::File { mesh: obj, annotation: ann });
    }
    let reg = serde_json::json!({ "garments": registry });
    let path = out.join("registry.json");
    std::fs::write(&path, serde_json::to_string_pretty(&reg)?).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn cmd_render(common: &Common, checkpoint: Option<&Path>, episode: usize, from_log: Option<&Path>) -> Result<()> {
    let mut cfg = prepare(common)?;
    let out = out_dir(&cfg, common);
    let log = match from_log {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str::<EpisodeLog>(&text)?
        }
        None => {
            if checkpoint.is_none() && common.mode.is_none() {
                cfg.mode = Method::Heuristic;
            }
            cfg.validate()?;
            let seed = first_seed(&cfg);
            let loaded = Loaded::from_args(&cfg, checkpoint)?;
            let mut env = eval_env(&cfg, seed)?;
            let specs = held_out_specs(&env, &cfg.eval_garments());
            let (pose_id, spec) =
                specs.get(episode).with_context(|| format!("episode {episode} out of range (0..{})", specs.len()))?.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let log = run_episode(&mut env, &spec, None, &loaded.controller(&cfg), &mut rng, true)?;
            log::info!("rendered pose {pose_id} on {}", log.garment_name);
            log
        }
    };
    if log.frames.is_empty() {
        bail!("episode log has no recorded frames");
    }
    let written = export_trajectory(&log, &out)?;
    let path = out.join("episode.json");
    std::fs::write(&path, serde_json::to_string(&log)?).with_context(|| format!("writing {}", path.display()))?;
    let mut files: Vec<PathBuf> = written.iter().filter_map(|p| p.strip_prefix(&out).ok().map(Path::to_path_buf)).collect();
    files.push("episode.json".into());
    write_manifest(&out, RunManifest::new("render", &cfg, cfg.seeds.first().copied()), &files)?;
    println!(
        "{} frames, final upper-arm ratio {:.3}; wrote {}",
        log.frames.len(),
        log.final_info.upper_ratio,
        out.display()
    );
    Ok(())
}

fn cmd_perturb_eval(common: &Common, checkpoint: Option<&Path>, deltas: &[f64], joints: &[String]) -> Result<()> {
    let mut cfg = prepare(common)?;
    if !deltas.is_empty() {
        cfg.perturb.deltas_deg = deltas.to_vec();
    }
    if !joints.is_empty() {
        cfg.perturb.joints = joints
            .iter()
            .map(|j| PerturbJoint::parse(j).with_context(|| format!("unknown joint {j:?}")))
            .collect::<Result<_>>()?;
    }
    cfg.validate()?;
    let seed = first_seed(&cfg);
    let loaded = Loaded::from_args(&cfg, checkpoint)?;
    let template = eval_env(&cfg, seed)?;
    let rows = perturb_table(&template, &cfg.eval_garments(), &loaded.controller(&cfg), &cfg.perturb, seed)?;
    let curves = perturb_curves(&rows);
    let out = out_dir(&cfg, common);
    write_perturb_csv(&out.join("perturb.csv"), &rows)?;
    write_curve_csv(&out.join("perturb_curves.csv"), &curves)?;
    write_manifest(&out, RunManifest::new("perturb-eval", &cfg, Some(seed)), &["perturb.csv".into(), "perturb_curves.csv".into()])?;
    for p in &curves {
        println!("{:>14} {:>6.2} deg  upper {:.3}  success {:.2}", p.joint, p.delta_deg, p.upper_ratio_mean, p.success_rate);
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { common, teachers, resume } => cmd_train(&common, teachers, resume.as_deref()),
        Command::Distill { common, teacher_manifest, guided } => cmd_distill(&common, teacher_manifest.as_deref(), guided),
        Command::Eval { common, checkpoint } => cmd_eval(&common, checkpoint.as_deref()),
        Command::Baseline { common, teacher_manifest } => cmd_baseline(&common, teacher_manifest.as_deref()),
        Command::GenGarment { config, out, name, sleeve_length, sleeve_radius, body_panel, resolution } => cmd_gen_garment(
            config.as_deref(),
            &out,
            name.as_deref(),
            SleeveParams { sleeve_length, sleeve_radius, body_panel, resolution, ..SleeveParams::default() },
        ),
        Command::Render { common, checkpoint, episode, from_log } => {
            cmd_render(&common, checkpoint.as_deref(), episode, from_log.as_deref())
        }
        Command::PerturbEval { common, checkpoint, deltas, joints } => {
            cmd_perturb_eval(&common, checkpoint.as_deref(), &deltas, &joints)
        }
    }
}
