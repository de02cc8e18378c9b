//! Policy distillation: Earth-Mover and KL losses between diagonal Gaussians,
//! the combined SAC + distillation objective with optional guided domain
//! randomization, and the PCGrad multi-task baseline.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, Graph, ParamSet, Tensor, Var};
use crate::arm_model::NUM_SUBRANGES;
use crate::env::{Transition, ACTION_DIM};
use crate::nets::{GaussianPolicyOutput, Policy, PolicyVars, PreparedBatch};
use crate::perception::SegmentedPointCloud;
use crate::sac::{
    actor_objective, critic_targets, soft_update, sac_update_with, ActorAux, ActorGraph, ReplayBuffer, Result, SacAgent, SacConfig,
    SacError, UpdateDiagnostics, Updater,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    Emd,
    Kl,
}

/// Which distribution is the reference in the KL loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlDirection {
    /// KL(teacher || student).
    #[default]
    TeacherStudent,
    /// KL(student || teacher).
    StudentTeacher,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeacherRouting {
    /// Each sample is supervised by the teacher of its own sub-range.
    #[default]
    BySubrange,
    /// Every teacher supervises every sample.
    SumAll,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillConfig {
    pub beta: f64,
    pub loss_kind: LossKind,
    pub kl_direction: KlDirection,
    /// Student sees the randomized observation, teachers the clean one.
    pub guided_dr: bool,
    pub teacher_routing: TeacherRouting,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            beta: 0.01,
            loss_kind: LossKind::Emd,
            kl_direction: KlDirection::TeacherStudent,
            guided_dr: false,
            teacher_routing: TeacherRouting::BySubrange,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(SacError::Config(format!("beta must be finite and >= 0, got {}", self.beta)));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Losses

fn teacher_tensors(t: &[GaussianPolicyOutput]) -> (Tensor, Tensor) {
    let mu = Tensor::from_fn(t.len(), ACTION_DIM, |r, c| t[r].mu[c]);
    let ls = Tensor::from_fn(t.len(), ACTION_DIM, |r, c| t[r].log_std[c]);
    (mu, ls)
}

fn check_dims(g: &Graph, student: &PolicyVars, teacher: &[GaussianPolicyOutput]) -> Result<()> {
    let shape = g.shape(student.mu);
    if shape != (teacher.len(), ACTION_DIM) || g.shape(student.log_std) != shape {
        return Err(SacError::Aux(format!(
            "student batch {shape:?} does not match {} teacher outputs",
            teacher.len()
        )));
    }
    Ok(())
}

/// `sum (mu_s - mu_t)^2 + (sqrt(sigma_s) - sqrt(sigma_t))^2` over samples and
/// action dims; the teacher is a constant.
pub fn emd_loss(g: &mut Graph, student: &PolicyVars, teacher: &[GaussianPolicyOutput]) -> Result<Var> {
    check_dims(g, student, teacher)?;
    let (mu_t, ls_t) = teacher_tensors(teacher);
    let mu_t = g.constant(mu_t);
    let root_t = g.constant(ls_t.map(|l| (0.5 * l).exp()));
    let dm = g.sub(student.mu, mu_t)?;
    let dm2 = g.mul(dm, dm)?;
    let half = g.scale(student.log_std, 0.5);
    let root_s = g.exp(half);
    let ds = g.sub(root_s, root_t)?;
    let ds2 = g.mul(ds, ds)?;
    let tot = g.add(dm2, ds2)?;
    Ok(g.sum(tot))
}

/// Closed-form diagonal Gaussian KL summed over samples and action dims.
pub fn kl_loss(
    g: &mut Graph,
    student: &PolicyVars,
    teacher: &[GaussianPolicyOutput],
    direction: KlDirection,
) -> Result<Var> {
    check_dims(g, student, teacher)?;
    let (mu_t, ls_t) = teacher_tensors(teacher);
    let n = teacher.len();
    let mu_tv = g.constant(mu_t);
    let dm = g.sub(student.mu, mu_tv)?;
    let dm2 = g.mul(dm, dm)?;
    let kl = match direction {
        KlDirection::TeacherStudent => {
            // ln(s_s / s_t) + (s_t^2 + dmu^2) / (2 s_s^2) - 1/2
            let var_t = g.constant(ls_t.map(|l| (2.0 * l).exp()));
            let ls_tv = g.constant(ls_t);
            let num = g.add(var_t, dm2)?;
            let m2 = g.scale(student.log_std, -2.0);
            let inv_var_s = g.exp(m2);
            let q = g.mul(num, inv_var_s)?;
            let q = g.scale(q, 0.5);
            let lr = g.sub(student.log_std, ls_tv)?;
            let k = g.add(lr, q)?;
            g.add_scalar(k, -0.5)
        }
        KlDirection::StudentTeacher => {
            // ln(s_t / s_s) + (s_s^2 + dmu^2) / (2 s_t^2) - 1/2
            let inv_var_t = g.constant(ls_t.map(|l| (-2.0 * l).exp()));
            let ls_tv = g.constant(ls_t);
            let two = g.scale(student.log_std, 2.0);
            let var_s = g.exp(two);
            let num = g.add(var_s, dm2)?;
            let q = g.mul(num, inv_var_t)?;
            let q = g.scale(q, 0.5);
            let lr = g.sub(ls_tv, student.log_std)?;
            let k = g.add(lr, q)?;
            g.add_scalar(k, -0.5)
        }
    };
    debug_assert_eq!(g.shape(kl), (n, ACTION_DIM));
    Ok(g.sum(kl))
}

/// Loss value between plain Gaussian batches.
pub fn loss_value(
    kind: LossKind,
    direction: KlDirection,
    student: &[GaussianPolicyOutput],
    teacher: &[GaussianPolicyOutput],
) -> Result<f64> {
    let mut g = Graph::new();
    let (mu, ls) = teacher_tensors(student);
    let sv = PolicyVars { mu: g.constant(mu), log_std: g.constant(ls) };
    let v = match kind {
        LossKind::Emd => emd_loss(&mut g, &sv, teacher)?,
        LossKind::Kl => kl_loss(&mut g, &sv, teacher, direction)?,
    };
    Ok(g.value(v).item())
}

// ---------------------------------------------------------------------------
// Teachers

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeacherEntry {
    pub checkpoint: PathBuf,
    pub subrange: usize,
}

/// Manifest listing one teacher checkpoint per trained sub-range.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherManifest {
    pub teachers: Vec<TeacherEntry>,
}

impl TeacherManifest {
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        if self.teachers.is_empty() {
            return Err(SacError::Config("teacher manifest is empty".into()));
        }
        for t in &self.teachers {
            if t.subrange >= NUM_SUBRANGES {
                return Err(SacError::Config(format!("teacher sub-range {} out of range", t.subrange)));
            }
            if !seen.insert(t.subrange) {
                return Err(SacError::Config(format!("sub-range {} has more than one teacher", t.subrange)));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SacError::Config(format!("cannot read teacher manifest {}: {e}", path.display())))?;
        let m: Self = serde_json::from_str(&text)
            .map_err(|e| SacError::Config(format!("bad teacher manifest {}: {e}", path.display())))?;
        m.validate()?;
        Ok(m)
    }

    /// Checkpoint paths are resolved relative to `base`.
    pub fn resolve(&self, base: &Path) -> Vec<(usize, PathBuf)> {
        self.teachers.iter().map(|t| (t.subrange, base.join(&t.checkpoint))).collect()
    }
}

/// Frozen teacher policies keyed by sub-range.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TeacherBank {
    teachers: BTreeMap<usize, Policy>,
}

impl TeacherBank {
    pub fn new(teachers: impl IntoIterator<Item = (usize, Policy)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (s, p) in teachers {
            if s >= NUM_SUBRANGES || map.insert(s, p).is_some() {
                return Err(SacError::Config(format!("duplicate or invalid teacher sub-range {s}")));
            }
        }
        if map.is_empty() {
            return Err(SacError::Config("teacher bank is empty".into()));
        }
        Ok(Self { teachers: map })
    }

    pub fn subranges(&self) -> Vec<usize> {
        self.teachers.keys().copied().collect()
    }

    pub fn get(&self, sub: usize) -> Option<&Policy> {
        self.teachers.get(&sub)
    }

    pub fn len(&self) -> usize {
        self.teachers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.teachers.is_empty()
    }
}

// ---------------------------------------------------------------------------
// Distillation update

struct DistillTerm<'a> {
    bank: &'a TeacherBank,
    cfg: &'a DistillConfig,
    student_randomized: bool,
}

impl DistillTerm<'_> {
    fn teacher_obs<'t>(&self, t: &'t Transition) -> &'t SegmentedPointCloud {
        let randomized = !self.cfg.guided_dr && self.student_randomized;
        t.obs.for_policy(randomized)
    }

    fn teacher_outputs(&self, teacher: &Policy, ts: &[&Transition]) -> Result<Vec<GaussianPolicyOutput>> {
        let obs: Vec<&SegmentedPointCloud> = ts.iter().map(|t| self.teacher_obs(t)).collect();
        let batch = PreparedBatch::new(&obs, teacher.cfg())?;
        Ok(teacher.gaussians_prepared(&batch)?)
    }

    fn loss(&self, g: &mut Graph, student: &PolicyVars, teacher: &[GaussianPolicyOutput]) -> Result<Var> {
        match self.cfg.loss_kind {
            LossKind::Emd => emd_loss(g, student, teacher),
            LossKind::Kl => kl_loss(g, student, teacher, self.cfg.kl_direction),
        }
    }
}

impl ActorAux for DistillTerm<'_> {
    fn term(&mut self, g: &mut Graph, student: &PolicyVars, ts: &[&Transition]) -> Result<Option<Var>> {
        let raw = match self.cfg.teacher_routing {
            TeacherRouting::BySubrange => {
                let mut rows: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
                for (k, t) in ts.iter().enumerate() {
                    rows.entry(t.subrange_id).or_default().push(k);
                }
                if let Some(missing) = rows.keys().find(|s| self.bank.get(**s).is_none()) {
                    return Err(SacError::Aux(format!(
                        "no teacher for sub-range {missing}; bank covers {:?}",
                        self.bank.subranges()
                    )));
                }
                let mut teacher = vec![GaussianPolicyOutput { mu: [0.0; ACTION_DIM], log_std: [0.0; ACTION_DIM] }; ts.len()];
                for (sub, idx) in &rows {
                    let sel: Vec<&Transition> = idx.iter().map(|&k| ts[k]).collect();
                    let out = self.teacher_outputs(self.bank.get(*sub).expect("checked"), &sel)?;
                    for (&k, o) in idx.iter().zip(out) {
                        teacher[k] = o;
                    }
                }
                self.loss(g, student, &teacher)?
            }
            TeacherRouting::SumAll => {
                let mut total: Option<Var> = None;
                for sub in self.bank.subranges() {
                    let out = self.teacher_outputs(self.bank.get(sub).expect("listed"), ts)?;
                    let l = self.loss(g, student, &out)?;
                    total = Some(match total {
                        Some(t) => g.add(t, l)?,
                        None => l,
                    });
                }
                total.expect("bank is non-empty")
            }
        };
        Ok(Some(g.scale(raw, self.cfg.beta)))
    }
}

/// SAC update of the student plus `beta` times the distillation loss on the
/// actor objective. Teachers are only read.
pub fn distill_update<R: Rng + ?Sized>(
    buffer: &ReplayBuffer,
    student: &mut SacAgent,
    bank: &TeacherBank,
    dcfg: &DistillConfig,
    sac_cfg: &SacConfig,
    rng: &mut R,
) -> Result<UpdateDiagnostics> {
    dcfg.validate()?;
    let mut term = DistillTerm { bank, cfg: dcfg, student_randomized: sac_cfg.randomized_obs };
    sac_update_with(buffer, student, sac_cfg, rng, Some(&mut term))
}

/// Distillation as a training-loop update rule.
pub struct DistillUpdater<'a> {
    pub bank: &'a TeacherBank,
    pub cfg: DistillConfig,
}

impl Updater for DistillUpdater<'_> {
    fn update(
        &mut self,
        buffer: &ReplayBuffer,
        agent: &mut SacAgent,
        cfg: &SacConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<UpdateDiagnostics> {
        distill_update(buffer, agent, self.bank, &self.cfg, cfg, rng)
    }
}

/// Student actor objective plus the weighted distillation term, for gradient
/// checks. The policy is bound as `pv`.
pub fn student_objective(
    g: &mut Graph,
    pv: &[Var],
    student: &SacAgent,
    bank: &TeacherBank,
    dcfg: &DistillConfig,
    sac_cfg: &SacConfig,
    ts: &[&Transition],
    xi: &Tensor,
) -> Result<Var> {
    let obs: Vec<&SegmentedPointCloud> = ts.iter().map(|t| &**t.obs.for_policy(sac_cfg.randomized_obs)).collect();
    let batch = PreparedBatch::new(&obs, student.policy.cfg())?;
    let ActorGraph { loss, out, .. } = actor_objective(g, pv, student, &batch, xi, student.alpha())?;
    let mut term = DistillTerm { bank, cfg: dcfg, student_randomized: sac_cfg.randomized_obs };
    match term.term(g, &out, ts)? {
        Some(t) => Ok(g.add(loss, t)?),
        None => Ok(loss),
    }
}

// ---------------------------------------------------------------------------
// PCGrad

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PcgradConfig {
    pub tasks_per_batch: usize,
    pub samples_per_task: usize,
}

impl Default for PcgradConfig {
    fn default() -> Self {
        Self { tasks_per_batch: 16, samples_per_task: 4 }
    }
}

/// Projects each task gradient off the others it conflicts with, visiting the
/// others in a random order, and returns the projected gradients.
pub fn pcgrad_project<R: Rng + ?Sized>(grads: &[Vec<f64>], rng: &mut R) -> Vec<Vec<f64>> {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut out = Vec::with_capacity(grads.len());
    for (i, gi) in grads.iter().enumerate() {
        let mut p = gi.clone();
        let mut order: Vec<usize> = (0..grads.len()).filter(|&j| j != i).collect();
        order.shuffle(rng);
        for j in order {
            let gj = &grads[j];
            let d = dot(&p, gj);
            let nn = dot(gj, gj);
            if d < 0.0 && nn > 0.0 {
                let c = d / nn;
                p.iter_mut().zip(gj).for_each(|(x, y)| *x -= c * y);
            }
        }
        out.push(p);
    }
    out
}

/// PCGrad optimiser state: one entropy temperature per task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcgradState {
    pub log_alphas: Vec<ParamSet>,
    pub alpha_opts: Vec<Adam>,
}

impl PcgradState {
    pub fn new(sac: &SacConfig) -> Self {
        let log_alphas: Vec<ParamSet> = (0..NUM_SUBRANGES)
            .map(|_| {
                let mut p = ParamSet::new();
                p.add("log_alpha", Tensor::scalar(sac.initial_alpha.ln()));
                p
            })
            .collect();
        let alpha_opts = log_alphas.iter().map(|p| Adam::new(p, sac.lr_alpha)).collect();
        Self { log_alphas, alpha_opts }
    }

    pub fn alpha(&self, task: usize) -> f64 {
        self.log_alphas[task].value(0).item().exp()
    }
}

/// Stratified batch: `tasks_per_batch` distinct sub-ranges, `samples_per_task` each.
pub fn stratified_batch<R: Rng + ?Sized>(
    buffer: &ReplayBuffer,
    cfg: &PcgradConfig,
    rng: &mut R,
) -> Result<Vec<(usize, Vec<usize>)>> {
    let mut tasks = buffer.subranges();
    if tasks.len() < cfg.tasks_per_batch {
        return Err(SacError::Config(format!(
            "PCGrad needs {} non-empty task buffers, found {}",
            cfg.tasks_per_batch,
            tasks.len()
        )));
    }
    tasks.shuffle(rng);
    tasks.truncate(cfg.tasks_per_batch);
    tasks.sort_unstable();
    tasks
        .into_iter()
        .map(|t| Ok((t, buffer.sample_subrange(t, cfg.samples_per_task, rng)?)))
        .collect()
}

fn flat_grads(ps: &ParamSet, g: &Graph, vars: &[Var]) -> Vec<f64> {
    let mut out = Vec::with_capacity(ps.num_scalars());
    for (v, t) in vars.iter().zip(ps.values()) {
        match g.grad(*v) {
            Some(gr) => out.extend_from_slice(gr.data()),
            None => out.extend(std::iter::repeat_n(0.0, t.len())),
        }
    }
    out
}

fn unflatten(like: &ParamSet, flat: &[f64]) -> Vec<Tensor> {
    let mut off = 0;
    like.values()
        .iter()
        .map(|t| {
            let n = t.len();
            let out = Tensor::new(t.rows(), t.cols(), flat[off..off + n].to_vec()).expect("same size");
            off += n;
            out
        })
        .collect()
}

fn sum_vecs(vs: &[Vec<f64>]) -> Vec<f64> {
    let mut acc = vec![0.0; vs.first().map_or(0, Vec::len)];
    for v in vs {
        acc.iter_mut().zip(v).for_each(|(a, b)| *a += b);
    }
    acc
}

/// One multi-task SAC update with PCGrad on both the critic and actor
/// gradients and a separate temperature per task.
pub fn pcgrad_update<R: Rng + ?Sized>(
    buffer: &ReplayBuffer,
    agent: &mut SacAgent,
    state: &mut PcgradState,
    pcfg: &PcgradConfig,
    cfg: &SacConfig,
    rng: &mut R,
) -> Result<UpdateDiagnostics> {
    let strata = stratified_batch(buffer, pcfg, rng)?;
    let net_cfg = agent.policy.cfg().clone();
    let mut batches = Vec::with_capacity(strata.len());
    for (task, idx) in &strata {
        let ts: Vec<&Transition> = idx.iter().map(|&i| buffer.get(i)).collect();
        let obs: Vec<&SegmentedPointCloud> = ts.iter().map(|t| &**t.obs.for_policy(cfg.randomized_obs)).collect();
        let next: Vec<&SegmentedPointCloud> = ts.iter().map(|t| &**t.next_obs.for_policy(cfg.randomized_obs)).collect();
        batches.push((*task, ts, PreparedBatch::new(&obs, &net_cfg)?, PreparedBatch::new(&next, &net_cfg)?));
    }

    // Critic gradients per task.
    let mut g1s = Vec::new();
    let mut g2s = Vec::new();
    let mut critic_loss = 0.0;
    for (task, ts, bo, bn) in &batches {
        let n = ts.len();
        let xi: Tensor = Tensor::from_fn(n, ACTION_DIM, |_, _| rng.sample(StandardNormal));
        let alpha = state.alpha(*task);
        let y = critic_targets(agent, ts, bn, &xi, cfg.gamma, alpha)?;
        let mut g = Graph::new();
        let v1 = agent.q1.params().bind(&mut g);
        let v2 = agent.q2.params().bind(&mut g);
        let a = g.constant(Tensor::from_fn(n, ACTION_DIM, |r, c| ts[r].action[c]));
        let yv = g.constant(Tensor::new(n, 1, y).expect("n targets"));
        let q1 = agent.q1.forward(&mut g, &v1, bo, a)?;
        let q2 = agent.q2.forward(&mut g, &v2, bo, a)?;
        let d1 = g.sub(q1, yv)?;
        let d1 = g.mul(d1, d1)?;
        let l1 = g.mean(d1);
        let d2 = g.sub(q2, yv)?;
        let d2 = g.mul(d2, d2)?;
        let l2 = g.mean(d2);
        let loss = g.add(l1, l2)?;
        g.backward(loss)?;
        critic_loss += g.value(loss).item();
        g1s.push(flat_grads(agent.q1.params(), &g, &v1));
        g2s.push(flat_grads(agent.q2.params(), &g, &v2));
    }
    let p1 = sum_vecs(&pcgrad_project(&g1s, rng));
    let p2 = sum_vecs(&pcgrad_project(&g2s, rng));
    let grads1 = unflatten(agent.q1.params(), &p1);
    agent.q1_opt.step_with(agent.q1.params_mut(), &grads1);
    let grads2 = unflatten(agent.q2.params(), &p2);
    agent.q2_opt.step_with(agent.q2.params_mut(), &grads2);
    agent.critic_updates += 1;

    let mut diag = UpdateDiagnostics { critic_loss: critic_loss / batches.len() as f64, ..UpdateDiagnostics::default() };

    if agent.critic_updates % cfg.actor_delay == 0 {
        let mut gs = Vec::new();
        let mut actor_loss = 0.0;
        for (task, ts, bo, _) in &batches {
            let n = ts.len();
            let xi: Tensor = Tensor::from_fn(n, ACTION_DIM, |_, _| rng.sample(StandardNormal));
            let alpha = state.alpha(*task);
            let mut g = Graph::new();
            let pv = agent.policy.params().bind(&mut g);
            let ag = actor_objective(&mut g, &pv, agent, bo, &xi, alpha)?;
            g.backward(ag.loss)?;
            actor_loss += g.value(ag.loss).item();
            gs.push(flat_grads(agent.policy.params(), &g, &pv));
            let lp_mean = g.value(ag.log_prob).data().iter().sum::<f64>() / n as f64;
            state.log_alphas[*task].set_flat_grad(&[-(lp_mean + cfg.target_entropy)]);
            let (p, opt) = (&mut state.log_alphas[*task], &mut state.alpha_opts[*task]);
            opt.step(p);
        }
        let p = sum_vecs(&pcgrad_project(&gs, rng));
        let grads = unflatten(agent.policy.params(), &p);
        agent.policy_opt.step_with(agent.policy.params_mut(), &grads);
        agent.actor_updates += 1;
        diag.actor_loss = Some(actor_loss / batches.len() as f64);
    }
    diag.alpha = batches.iter().map(|b| state.alpha(b.0)).sum::<f64>() / batches.len() as f64;
    soft_update(agent.q1.params(), agent.q1_target.params_mut(), cfg.tau)?;
    soft_update(agent.q2.params(), agent.q2_target.params_mut(), cfg.tau)?;
    Ok(diag)
}

/// PCGrad as a training-loop update rule. Updates start once enough task
/// buffers hold data; earlier calls return default diagnostics.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PcgradUpdater {
    pub cfg: PcgradConfig,
    pub state: PcgradState,
}

impl Updater for PcgradUpdater {
    fn update(
        &mut self,
        buffer: &ReplayBuffer,
        agent: &mut SacAgent,
        cfg: &SacConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<UpdateDiagnostics> {
        if buffer.subranges().len() < self.cfg.tasks_per_batch {
            return Ok(UpdateDiagnostics::default());
        }
        pcgrad_update(buffer, agent, &mut self.state, &self.cfg, cfg, rng)
    }
}
