use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{io_err, HarnessError, Result};
use crate::arm_model::{ArmPose, NUM_SUBRANGES};
use crate::baselines::{HapticModelConfig, HeuristicConfig};
use crate::distill::{DistillConfig, LossKind, PcgradConfig};
use crate::env::{EnvConfig, GarmentSource};
use crate::nets::{CriticKind, PointNetConfig, PolicyKind};
use crate::perception::RandomizerMode;
use crate::sac::SacConfig;

/// Environment variable naming the directory relative output paths live under.
pub const OUTPUT_ROOT_ENV: &str = "DRESS_OUTPUT_ROOT";

/// Training or control method.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Dense per-point SAC.
    #[default]
    Sac,
    /// Student trained with SAC plus distillation from a teacher bank.
    Distill,
    /// Distillation with the KL loss in place of the configured one.
    KlDistill,
    Pcgrad,
    DirectVector,
    LatentQ,
    Heuristic,
    HapticMpc,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Sac => "sac",
            Method::Distill => "distill",
            Method::KlDistill => "kl-distill",
            Method::Pcgrad => "pcgrad",
            Method::DirectVector => "direct-vector",
            Method::LatentQ => "latent-q",
            Method::Heuristic => "heuristic",
            Method::HapticMpc => "haptic-mpc",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| HarnessError::Config(format!("unknown mode {s:?}")))
    }

    pub fn is_learned(self) -> bool {
        !matches!(self, Method::Heuristic | Method::HapticMpc)
    }

    pub fn uses_teachers(self) -> bool {
        matches!(self, Method::Distill | Method::KlDistill)
    }

    pub fn policy_kind(self) -> PolicyKind {
        match self {
            Method::DirectVector => PolicyKind::DirectVector,
            _ => PolicyKind::Dense,
        }
    }

    pub fn critic_kind(self) -> CriticKind {
        match self {
            Method::DirectVector | Method::LatentQ => CriticKind::LatentQ,
            _ => CriticKind::PerPoint,
        }
    }
}

/// Evaluation protocol: held-out poses of each sub-range crossed with garments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Garment indices; empty means every registered garment.
    pub garments: Vec<usize>,
    /// Episodes per evaluation during training, cycling through the held-out set.
    pub episodes_during_training: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { garments: Vec::new(), episodes_during_training: 15 }
    }
}

/// Joint whose angle is changed after the arm capture.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerturbJoint {
    /// Lowering the shoulder: `phi1` decreases.
    ShoulderDown,
    /// Lowering the elbow: `phi3` decreases.
    ElbowDown,
    /// Bending the elbow inwards: `phi2` increases.
    ElbowInward,
}

impl PerturbJoint {
    pub fn name(self) -> &'static str {
        match self {
            PerturbJoint::ShoulderDown => "shoulder-down",
            PerturbJoint::ElbowDown => "elbow-down",
            PerturbJoint::ElbowInward => "elbow-inward",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [PerturbJoint::ShoulderDown, PerturbJoint::ElbowDown, PerturbJoint::ElbowInward].into_iter().find(|j| j.name() == s)
    }

    /// Joint-angle change in degrees for a non-negative magnitude.
    pub fn delta(self, degrees: f64) -> ArmPose {
        match self {
            PerturbJoint::ShoulderDown => ArmPose::new(-degrees, 0.0, 0.0),
            PerturbJoint::ElbowDown => ArmPose::new(0.0, 0.0, -degrees),
            PerturbJoint::ElbowInward => ArmPose::new(0.0, degrees, 0.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerturbConfig {
    pub deltas_deg: Vec<f64>,
    pub joints: Vec<PerturbJoint>,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        Self {
            deltas_deg: vec![0.0, 5.0, 10.0],
            joints: vec![PerturbJoint::ShoulderDown, PerturbJoint::ElbowDown, PerturbJoint::ElbowInward],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub mode: Method,
    pub seeds: Vec<u64>,
    /// Environment steps per training run.
    pub steps: u64,
    /// Full-state checkpoint interval in environment steps; 0 writes only the final one.
    pub checkpoint_every: u64,
    pub env: EnvConfig,
    pub net: PointNetConfig,
    pub sac: SacConfig,
    pub distill: DistillConfig,
    pub pcgrad: PcgradConfig,
    pub heuristic: HeuristicConfig,
    pub haptic: HapticModelConfig,
    /// Scripted episodes collected to fit the MPC force model.
    pub haptic_data_episodes: usize,
    pub eval: EvalConfig,
    pub perturb: PerturbConfig,
    pub output_dir: PathBuf,
    /// JSON or TOML list of garment sources replacing `env.garments`.
    pub garment_registry: Option<PathBuf>,
    /// Teacher manifest for distillation modes.
    pub teacher_manifest: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ExperimentConfig {
    /// Desk-scale recipe: 3 garments, 3 pose sub-ranges, the reduced cloth
    /// meshes, desk network widths and 200k training steps.
    pub fn desk() -> Self {
        let mut env = EnvConfig::default();
        env.garments.truncate(3);
        env.subranges = vec![0, 13, 26];
        Self {
            mode: Method::Sac,
            seeds: vec![0, 1, 2],
            steps: 200_000,
            checkpoint_every: 0,
            env,
            net: PointNetConfig::desk(),
            sac: SacConfig { eval_every: 10_000, ..SacConfig::default() },
            distill: DistillConfig::default(),
            pcgrad: PcgradConfig { tasks_per_batch: 3, samples_per_task: 21 },
            heuristic: HeuristicConfig::default(),
            haptic: HapticModelConfig::default(),
            haptic_data_episodes: 20,
            eval: EvalConfig::default(),
            perturb: PerturbConfig::default(),
            output_dir: PathBuf::from("runs"),
            garment_registry: None,
            teacher_manifest: None,
        }
    }

    /// Checks every section; nothing is computed before this passes.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        self.env.validate()?;
        if self.mode.is_learned() {
            if self.steps == 0 {
                return bad("steps must be >= 1".into());
            }
            self.net.validate()?;
            self.sac.validate()?;
        }
        if self.mode.uses_teachers() {
            self.distill.validate()?;
            if self.teacher_manifest.is_none() {
                return Err(HarnessError::MissingTeacherBank("set teacher_manifest".into()));
            }
        }
        if self.sac.randomized_obs && self.env.randomizer.mode != RandomizerMode::TrainRandomized {
            return bad("randomized_obs needs env.randomizer.mode = \"train_randomized\"".into());
        }
        if self.distill.guided_dr && !self.sac.randomized_obs && self.mode.uses_teachers() {
            return bad("guided_dr trains the student on randomized observations; set sac.randomized_obs".into());
        }
        if self.mode == Method::Pcgrad && self.pcgrad.tasks_per_batch > self.env.subranges.len() {
            return bad(format!(
                "pcgrad.tasks_per_batch {} exceeds the {} training sub-ranges",
                self.pcgrad.tasks_per_batch,
                self.env.subranges.len()
            ));
        }
        if let Some(g) = self.eval.garments.iter().find(|&&g| g >= self.env.garments.len()) {
            return bad(format!("eval garment {g} is not registered"));
        }
        if self.perturb.deltas_deg.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return bad("perturbation magnitudes must be finite and >= 0".into());
        }
        if self.mode == Method::HapticMpc {
            self.haptic.validate()?;
            if self.haptic_data_episodes == 0 {
                return bad("haptic_data_episodes must be >= 1".into());
            }
        }
        if self.mode == Method::Heuristic {
            self.heuristic.validate()?;
        }
        Ok(())
    }

    /// Sub-ranges given on the command line replace the configured ones.
    pub fn with_subranges(mut self, subranges: &[usize]) -> Result<Self> {
        if let Some(s) = subranges.iter().find(|&&s| s >= NUM_SUBRANGES) {
            return Err(HarnessError::Config(format!("sub-range {s} is outside 0..27")));
        }
        self.env.subranges = subranges.to_vec();
        Ok(self)
    }

    /// Keeps only the listed garments, in order.
    pub fn with_garments(mut self, garments: &[usize]) -> Result<Self> {
        let all = self.env.garments.clone();
        self.env.garments = garments
            .iter()
            .map(|&g| all.get(g).cloned().ok_or_else(|| HarnessError::Config(format!("garment {g} is not registered"))))
            .collect::<Result<_>>()?;
        self.eval.garments.clear();
        Ok(self)
    }

    pub fn eval_garments(&self) -> Vec<usize> {
        if self.eval.garments.is_empty() {
            (0..self.env.garments.len()).collect()
        } else {
            self.eval.garments.clone()
        }
    }

    /// Distillation settings for the chosen method.
    pub fn effective_distill(&self) -> DistillConfig {
        let mut d = self.distill.clone();
        if self.mode == Method::KlDistill {
            d.loss_kind = LossKind::Kl;
        }
        d
    }
}

fn parse_text<T: serde::de::DeserializeOwned>(path: &Path, text: &str) -> Result<T> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    let cfg_err = |e: String| HarnessError::Config(format!("{}: {e}", path.display()));
    match ext {
        "json" => serde_json::from_str(text).map_err(|e| cfg_err(e.to_string())),
        "toml" => toml::from_str(text).map_err(|e| cfg_err(e.to_string())),
        _ => toml::from_str(text)
            .or_else(|t: toml::de::Error| serde_json::from_str(text).map_err(|j| format!("not TOML ({t}) nor JSON ({j})")))
            .map_err(|e| cfg_err(e.to_string())),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Registry {
    garments: Vec<GarmentSource>,
}

/// Reads a TOML or JSON experiment config, applies the garment registry and
/// validates. File garments in the registry resolve relative to it.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut cfg: ExperimentConfig = parse_text(path, &text)?;
    if let Some(reg) = cfg.garment_registry.clone() {
        let reg = if reg.is_relative() { path.parent().unwrap_or(Path::new(".")).join(reg) } else { reg };
        let text = std::fs::read_to_string(&reg).map_err(io_err(&reg))?;
        let r: Registry = parse_text(&reg, &text)?;
        let base = reg.parent().unwrap_or(Path::new(".")).to_path_buf();
        cfg.env.garments = r
            .garments
            .into_iter()
            .map(|g| match g {
                GarmentSource::File { mesh, annotation } => {
                    GarmentSource::File { mesh: base.join(mesh), annotation: base.join(annotation) }
                }
                other => other,
            })
            .collect();
    }
    if let Some(m) = &cfg.teacher_manifest {
        if m.is_relative() {
            cfg.teacher_manifest = Some(path.parent().unwrap_or(Path::new(".")).join(m));
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Hex SHA-256 of the canonical JSON form of a config.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let bytes = serde_json::to_vec(cfg).expect("config serializes");
    let digest = Sha256::digest(&bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// `--out` wins; otherwise relative config paths live under the output-root
/// environment variable when it is set.
pub fn resolve_output_dir(cfg: &ExperimentConfig, cli_out: Option<&Path>) -> PathBuf {
    if let Some(p) = cli_out {
        return p.to_path_buf();
    }
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if cfg.output_dir.is_relative() => PathBuf::from(root).join(&cfg.output_dir),
        _ => cfg.output_dir.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_config_is_valid_and_round_trips() {
        let cfg = ExperimentConfig::desk();
        cfg.validate().unwrap();
        assert_eq!(cfg.env.garments.len(), 3);
        assert_eq!(cfg.env.subranges.len(), 3);
        let toml_text = toml::to_string(&cfg).unwrap();
        let back: ExperimentConfig = toml::from_str(&toml_text).unwrap();
        assert_eq!(back, cfg);
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<ExperimentConfig>(&json).unwrap(), cfg);
        assert_eq!(config_hash(&back), config_hash(&cfg));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "steps = 10\nbogus = 1\n").unwrap();
        assert!(matches!(load_config(&p), Err(HarnessError::Config(_))));
        std::fs::write(&p, "[sac]\nlr_actr = 0.1\n").unwrap();
        assert!(load_config(&p).is_err());
        std::fs::write(&p, "steps = 10\nmode = \"pcgrad\"\n").unwrap();
        assert_eq!(load_config(&p).unwrap().mode, Method::Pcgrad);
        let j = dir.path().join("c.json");
        std::fs::write(&j, r#"{"steps": 5, "seeds": [7]}"#).unwrap();
        let c = load_config(&j).unwrap();
        assert_eq!((c.steps, c.seeds.clone()), (5, vec![7]));
    }

    #[test]
    fn invalid_values_are_rejected() {
        let mut c = ExperimentConfig::desk();
        c.seeds.clear();
        assert!(c.validate().is_err());
        let c = ExperimentConfig { mode: Method::Distill, ..ExperimentConfig::desk() };
        assert!(matches!(c.validate(), Err(HarnessError::MissingTeacherBank(_))));
        let mut c = ExperimentConfig::desk();
        c.sac.randomized_obs = true;
        assert!(c.validate().is_err());
        assert!(ExperimentConfig::desk().with_subranges(&[27]).is_err());
        assert!(ExperimentConfig::desk().with_garments(&[5]).is_err());
    }

    #[test]
    fn method_names_parse() {
        for m in [
            Method::Sac,
            Method::Distill,
            Method::KlDistill,
            Method::Pcgrad,
            Method::DirectVector,
            Method::LatentQ,
            Method::Heuristic,
            Method::HapticMpc,
        ] {
            assert_eq!(Method::parse(m.name()).unwrap(), m);
        }
        assert!(Method::parse("td-mpc").is_err());
    }

    #[test]
    fn registry_replaces_garments() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("reg.json"),
            r#"{"garments": [{"kind": "generated", "name": "g", "sleeve_length": 0.3, "sleeve_radius": 0.08, "body_panel": false, "resolution": 10}]}"#,
        )
        .unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "garment_registry = \"reg.json\"\n").unwrap();
        let c = load_config(&p).unwrap();
        assert_eq!(c.env.garments.len(), 1);
    }

    #[test]
    fn output_dir_resolution() {
        let cfg = ExperimentConfig::desk();
        assert_eq!(resolve_output_dir(&cfg, Some(Path::new("/x"))), PathBuf::from("/x"));
    }
}
