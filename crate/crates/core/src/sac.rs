//! Soft Actor-Critic with twin critics, target networks, automatic entropy
//! temperature and delayed actor updates, plus the replay buffer and the
//! rollout/evaluation loop.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, Graph, ParamSet, Tensor, Var};
use crate::env::{EnvError, Environment, Observation, Transition, ACTION_DIM};
use crate::nets::{
    squashed_sample_graph, Critic, CriticKind, NetError, PointNetConfig, Policy, PolicyKind, PolicyVars, PreparedBatch,
};
use crate::perception::SegmentedPointCloud;

#[derive(Debug, thiserror::Error)]
pub enum SacError {
    #[error("replay buffer holds {len} transitions, batch needs {batch}")]
    EmptyBuffer { len: usize, batch: usize },
    #[error("parameter shapes differ")]
    ShapeMismatch,
    #[error("invalid SAC config: {0}")]
    Config(String),
    #[error("{0}")]
    Aux(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

impl From<crate::autodiff::AutodiffError> for SacError {
    fn from(e: crate::autodiff::AutodiffError) -> Self {
        SacError::Net(e.into())
    }
}

pub type Result<T> = std::result::Result<T, SacError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SacConfig {
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub lr_alpha: f64,
    pub actor_delay: u64,
    pub tau: f64,
    pub batch: usize,
    pub gamma: f64,
    pub target_entropy: f64,
    pub initial_alpha: f64,
    pub buffer_capacity: usize,
    pub eval_every: u64,
    /// Uniform random actions for this many initial env steps.
    pub start_steps: u64,
    pub updates_per_step: usize,
    /// Policy and critics consume the randomized observation stream.
    pub randomized_obs: bool,
    pub policy: PolicyKind,
    pub critic: CriticKind,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            lr_actor: 1e-4,
            lr_critic: 1e-4,
            lr_alpha: 1e-4,
            actor_delay: 4,
            tau: 0.01,
            batch: 64,
            gamma: 0.99,
            target_entropy: -(ACTION_DIM as f64),
            initial_alpha: 1.0,
            buffer_capacity: 400_000,
            eval_every: 10_000,
            start_steps: 1_000,
            updates_per_step: 1,
            randomized_obs: false,
            policy: PolicyKind::Dense,
            critic: CriticKind::PerPoint,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SacError::Config(m.into()));
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        if self.actor_delay == 0 {
            return bad("actor_delay must be >= 1");
        }
        if self.batch == 0 || self.buffer_capacity < self.batch {
            return bad("batch must be positive and no larger than the buffer capacity");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if !(self.initial_alpha > 0.0) || self.eval_every == 0 {
            return bad("initial_alpha and eval_every must be positive");
        }
        if !(self.lr_actor > 0.0 && self.lr_critic > 0.0 && self.lr_alpha >= 0.0) {
            return bad("learning rates must be positive");
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Replay

/// FIFO ring of transitions with a per-sub-range slot index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
    by_subrange: BTreeMap<usize, Vec<usize>>,
    /// Position of each slot inside its sub-range list.
    slot_pos: Vec<usize>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self { capacity, items: Vec::new(), next: 0, by_subrange: BTreeMap::new(), slot_pos: Vec::new() }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.items[i]
    }

    pub fn push(&mut self, t: Transition) {
        let sub = t.subrange_id;
        let slot = if self.items.len() < self.capacity {
            self.items.push(t);
            self.slot_pos.push(0);
            self.items.len() - 1
        } else {
            let slot = self.next;
            let old = self.items[slot].subrange_id;
            let list = self.by_subrange.get_mut(&old).expect("indexed");
            let pos = self.slot_pos[slot];
            list.swap_remove(pos);
            if let Some(&moved) = list.get(pos) {
                self.slot_pos[moved] = pos;
            }
            if list.is_empty() {
                self.by_subrange.remove(&old);
            }
            self.items[slot] = t;
            slot
        };
        let list = self.by_subrange.entry(sub).or_default();
        self.slot_pos[slot] = list.len();
        list.push(slot);
        self.next = (slot + 1) % self.capacity;
    }

    /// Sub-ranges with at least one stored transition, ascending.
    pub fn subranges(&self) -> Vec<usize> {
        self.by_subrange.keys().copied().collect()
    }

    pub fn subrange_len(&self, sub: usize) -> usize {
        self.by_subrange.get(&sub).map_or(0, Vec::len)
    }

    /// Uniform sample with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<usize>> {
        if self.items.len() < n || self.items.is_empty() {
            return Err(SacError::EmptyBuffer { len: self.items.len(), batch: n });
        }
        Ok((0..n).map(|_| rng.random_range(0..self.items.len())).collect())
    }

    /// Uniform sample with replacement from one sub-range.
    pub fn sample_subrange<R: Rng + ?Sized>(&self, sub: usize, n: usize, rng: &mut R) -> Result<Vec<usize>> {
        let list = self.by_subrange.get(&sub).ok_or(SacError::EmptyBuffer { len: 0, batch: n })?;
        Ok((0..n).map(|_| list[rng.random_range(0..list.len())]).collect())
    }
}

// ---------------------------------------------------------------------------
// Agent

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SacAgent {
    pub policy: Policy,
    pub q1: Critic,
    pub q2: Critic,
    pub q1_target: Critic,
    pub q2_target: Critic,
    pub policy_opt: Adam,
    pub q1_opt: Adam,
    pub q2_opt: Adam,
    /// Single scalar `ln alpha`.
    pub log_alpha: ParamSet,
    pub alpha_opt: Adam,
    pub critic_updates: u64,
    pub actor_updates: u64,
}

impl SacAgent {
    pub fn new<R: Rng + ?Sized>(net: &PointNetConfig, cfg: &SacConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let policy = Policy::new(cfg.policy, net, rng)?;
        let q1 = Critic::new(cfg.critic, net, rng)?;
        let q2 = Critic::new(cfg.critic, net, rng)?;
        let mut log_alpha = ParamSet::new();
        log_alpha.add("log_alpha", Tensor::scalar(cfg.initial_alpha.ln()));
        Ok(Self {
            policy_opt: Adam::new(policy.params(), cfg.lr_actor),
            q1_opt: Adam::new(q1.params(), cfg.lr_critic),
            q2_opt: Adam::new(q2.params(), cfg.lr_critic),
            alpha_opt: Adam::new(&log_alpha, cfg.lr_alpha),
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            policy,
            q1,
            q2,
            log_alpha,
            critic_updates: 0,
            actor_updates: 0,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.value(0).item().exp()
    }
}

/// `target <- (1 - tau) target + tau online`, elementwise.
pub fn soft_update(online: &ParamSet, target: &mut ParamSet, tau: f64) -> Result<()> {
    if !online.same_layout(target) {
        return Err(SacError::ShapeMismatch);
    }
    for (t, o) in target.values_mut().iter_mut().zip(online.values()) {
        for (tv, &ov) in t.data_mut().iter_mut().zip(o.data()) {
            *tv = (1.0 - tau) * *tv + tau * ov;
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateDiagnostics {
    pub critic_loss: f64,
    pub q_mean: f64,
    pub target_mean: f64,
    pub actor_loss: Option<f64>,
    pub alpha_loss: Option<f64>,
    pub log_prob_mean: Option<f64>,
    /// Weighted auxiliary term added to the actor loss (distillation).
    pub aux_loss: Option<f64>,
    pub alpha: f64,
}

/// Extra differentiable term added to the actor objective.
pub trait ActorAux {
    /// Returns the already-weighted term for the sampled transitions, given
    /// the student's Gaussian at each sample.
    fn term(&mut self, g: &mut Graph, student: &PolicyVars, batch: &[&Transition]) -> Result<Option<Var>>;
}

fn noise<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Tensor {
    Tensor::from_fn(n, ACTION_DIM, |_, _| rng.sample(StandardNormal))
}

fn clouds<'a>(ts: &[&'a Transition], next: bool, randomized: bool) -> Vec<&'a SegmentedPointCloud> {
    ts.iter().map(|t| &**(if next { &t.next_obs } else { &t.obs }).for_policy(randomized)).collect()
}

/// Bootstrapped critic targets, computed without gradients.
pub fn critic_targets(
    agent: &SacAgent,
    ts: &[&Transition],
    next_batch: &PreparedBatch,
    xi: &Tensor,
    gamma: f64,
    alpha: f64,
) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let pv = agent.policy.params().bind_frozen(&mut g);
    let out = agent.policy.forward(&mut g, &pv, next_batch)?;
    let (a, lp) = squashed_sample_graph(&mut g, out.mu, out.log_std, xi)?;
    let t1v = agent.q1_target.params().bind_frozen(&mut g);
    let t1 = agent.q1_target.forward(&mut g, &t1v, next_batch, a)?;
    let t2v = agent.q2_target.params().bind_frozen(&mut g);
    let t2 = agent.q2_target.forward(&mut g, &t2v, next_batch, a)?;
    Ok(ts
        .iter()
        .enumerate()
        .map(|(k, t)| {
            if t.done {
                t.reward
            } else {
                let q = g.value(t1).get(k, 0).min(g.value(t2).get(k, 0));
                t.reward + gamma * (q - alpha * g.value(lp).get(k, 0))
            }
        })
        .collect())
}

/// Graph handles of the actor objective.
pub struct ActorGraph {
    /// `mean(alpha * log pi - min(Q1, Q2))`.
    pub loss: Var,
    pub out: PolicyVars,
    pub log_prob: Var,
}

/// Builds the actor objective with the policy bound as `pv` and both online
/// critics frozen.
pub fn actor_objective(
    g: &mut Graph,
    pv: &[Var],
    agent: &SacAgent,
    batch: &PreparedBatch,
    xi: &Tensor,
    alpha: f64,
) -> Result<ActorGraph> {
    let out = agent.policy.forward(g, pv, batch)?;
    let (act, log_prob) = squashed_sample_graph(g, out.mu, out.log_std, xi)?;
    let c1 = agent.q1.params().bind_frozen(g);
    let qa = agent.q1.forward(g, &c1, batch, act)?;
    let c2 = agent.q2.params().bind_frozen(g);
    let qb = agent.q2.forward(g, &c2, batch, act)?;
    let qmin = g.min(qa, qb)?;
    let ent = g.scale(log_prob, alpha);
    let obj = g.sub(ent, qmin)?;
    Ok(ActorGraph { loss: g.mean(obj), out, log_prob })
}

/// One SAC update on a uniformly sampled batch.
pub fn sac_update<R: Rng + ?Sized>(
    buffer: &ReplayBuffer,
    agent: &mut SacAgent,
    cfg: &SacConfig,
    rng: &mut R,
) -> Result<UpdateDiagnostics> {
    sac_update_with(buffer, agent, cfg, rng, None)
}

/// SAC update with an optional auxiliary actor term.
pub fn sac_update_with<R: Rng + ?Sized>(
    buffer: &ReplayBuffer,
    agent: &mut SacAgent,
    cfg: &SacConfig,
    rng: &mut R,
    aux: Option<&mut dyn ActorAux>,
) -> Result<UpdateDiagnostics> {
    if buffer.len() < cfg.batch {
        return Err(SacError::EmptyBuffer { len: buffer.len(), batch: cfg.batch });
    }
    let idx = buffer.sample_indices(cfg.batch, rng)?;
    let ts: Vec<&Transition> = idx.iter().map(|&i| buffer.get(i)).collect();
    update_on_batch(&ts, agent, cfg, rng, aux)
}

/// SAC update on an explicit batch.
pub fn update_on_batch<R: Rng + ?Sized>(
    ts: &[&Transition],
    agent: &mut SacAgent,
    cfg: &SacConfig,
    rng: &mut R,
    aux: Option<&mut dyn ActorAux>,
) -> Result<UpdateDiagnostics> {
    let n = ts.len();
    let net_cfg = agent.policy.cfg().clone();
    let batch_o = PreparedBatch::new(&clouds(ts, false, cfg.randomized_obs), &net_cfg)?;
    let batch_n = PreparedBatch::new(&clouds(ts, true, cfg.randomized_obs), &net_cfg)?;

    let xi_next = noise(rng, n);
    let y = critic_targets(agent, ts, &batch_n, &xi_next, cfg.gamma, agent.alpha())?;

    // Critic regression.
    let mut g = Graph::new();
    let v1 = agent.q1.params().bind(&mut g);
    let v2 = agent.q2.params().bind(&mut g);
    let acts = Tensor::from_fn(n, ACTION_DIM, |r, c| ts[r].action[c]);
    let a = g.constant(acts);
    let q1 = agent.q1.forward(&mut g, &v1, &batch_o, a)?;
    let q2 = agent.q2.forward(&mut g, &v2, &batch_o, a)?;
    let yv = g.constant(Tensor::new(n, 1, y.clone()).expect("n targets"));
    let d1 = g.sub(q1, yv)?;
    let d1 = g.mul(d1, d1)?;
    let l1 = g.mean(d1);
    let d2 = g.sub(q2, yv)?;
    let d2 = g.mul(d2, d2)?;
    let l2 = g.mean(d2);
    let loss = g.add(l1, l2)?;
    g.backward(loss)?;
    let q_mean = g.value(q1).data().iter().sum::<f64>() / n as f64;
    let critic_loss = g.value(loss).item();
    agent.q1.params_mut().zero_grad();
    agent.q1.params_mut().accumulate_grads(&g, &v1);
    agent.q1_opt.step(agent.q1.params_mut());
    agent.q2.params_mut().zero_grad();
    agent.q2.params_mut().accumulate_grads(&g, &v2);
    agent.q2_opt.step(agent.q2.params_mut());
    drop(g);
    agent.critic_updates += 1;

    let mut diag = UpdateDiagnostics {
        critic_loss,
        q_mean,
        target_mean: y.iter().sum::<f64>() / n as f64,
        alpha: agent.alpha(),
        ..UpdateDiagnostics::default()
    };

    if agent.critic_updates % cfg.actor_delay == 0 {
        let xi = noise(rng, n);
        let alpha = agent.alpha();
        let mut g = Graph::new();
        let pv = agent.policy.params().bind(&mut g);
        let ActorGraph { loss, out, log_prob: lp } = actor_objective(&mut g, &pv, agent, &batch_o, &xi, alpha)?;
        let mut loss = loss;
        diag.actor_loss = Some(g.value(loss).item());
        if let Some(aux) = aux {
            if let Some(term) = aux.term(&mut g, &out, ts)? {
                diag.aux_loss = Some(g.value(term).item());
                loss = g.add(loss, term)?;
            }
        }
        g.backward(loss)?;
        agent.policy.params_mut().zero_grad();
        agent.policy.params_mut().accumulate_grads(&g, &pv);
        agent.policy_opt.step(agent.policy.params_mut());
        agent.actor_updates += 1;

        // Temperature: minimise -ln(alpha) * (log pi + target_entropy).
        let lp_mean = g.value(lp).data().iter().sum::<f64>() / n as f64;
        let grad = -(lp_mean + cfg.target_entropy);
        diag.alpha_loss = Some(-agent.log_alpha.value(0).item() * (lp_mean + cfg.target_entropy));
        diag.log_prob_mean = Some(lp_mean);
        agent.log_alpha.set_flat_grad(&[grad]);
        agent.alpha_opt.step(&mut agent.log_alpha);
        diag.alpha = agent.alpha();
    }

    soft_update(agent.q1.params(), agent.q1_target.params_mut(), cfg.tau)?;
    soft_update(agent.q2.params(), agent.q2_target.params_mut(), cfg.tau)?;
    Ok(diag)
}

// ---------------------------------------------------------------------------
// Training loop

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub episodes: usize,
    pub avg_return: f64,
    pub upper_ratio: f64,
    pub whole_ratio: f64,
    pub success_rate: f64,
}

/// One row of the metrics CSV.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    pub avg_return: f64,
    pub upper_ratio: f64,
    pub whole_ratio: f64,
    pub success_rate: f64,
    pub alpha: f64,
    pub critic_loss: f64,
    /// Most recent actor loss; empty before the first actor update.
    pub actor_loss: Option<f64>,
}

pub fn write_metrics_csv<W: std::io::Write>(w: W, rows: &[MetricsRow]) -> std::io::Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r).map_err(std::io::Error::other)?;
    }
    wr.flush()
}

/// Which update rule drives training.
pub trait Updater {
    fn update(
        &mut self,
        buffer: &ReplayBuffer,
        agent: &mut SacAgent,
        cfg: &SacConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<UpdateDiagnostics>;
}

/// Plain SAC.
pub struct SacUpdater;

impl Updater for SacUpdater {
    fn update(
        &mut self,
        buffer: &ReplayBuffer,
        agent: &mut SacAgent,
        cfg: &SacConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<UpdateDiagnostics> {
        sac_update(buffer, agent, cfg, rng)
    }
}

/// Complete resumable training state: environment, agent, replay, rng and
/// counters.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Trainer<E> {
    pub cfg: SacConfig,
    pub env: E,
    pub agent: SacAgent,
    pub buffer: ReplayBuffer,
    pub rng: ChaCha8Rng,
    pub env_steps: u64,
    pub episodes: u64,
    current: Option<Observation>,
    episode_return: f64,
    pub recent_returns: Vec<f64>,
    last_diag: UpdateDiagnostics,
    last_actor_loss: Option<f64>,
    pub metrics: Vec<MetricsRow>,
}

impl<E: Environment> Trainer<E> {
    pub fn new(cfg: SacConfig, env: E, agent: SacAgent, rng: ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            buffer: ReplayBuffer::new(cfg.buffer_capacity),
            cfg,
            env,
            agent,
            rng,
            env_steps: 0,
            episodes: 0,
            current: None,
            episode_return: 0.0,
            recent_returns: Vec::new(),
            last_diag: UpdateDiagnostics::default(),
            last_actor_loss: None,
            metrics: Vec::new(),
        })
    }

    /// One environment step followed by `updates_per_step` gradient updates.
    pub fn step<U: Updater + ?Sized>(&mut self, updater: &mut U) -> Result<()> {
        let obs = match self.current.take() {
            Some(o) => o,
            None => self.env.reset()?,
        };
        let action = if self.env_steps < self.cfg.start_steps {
            std::array::from_fn(|_| self.rng.random_range(-1.0..1.0))
        } else {
            self.agent.policy.act(obs.for_policy(self.cfg.randomized_obs), &mut self.rng, false)?
        };
        let subrange_id = self.env.subrange_id();
        let res = self.env.step(&action)?;
        self.episode_return += res.reward;
        self.buffer.push(Transition {
            obs,
            action,
            reward: res.reward,
            next_obs: res.obs.clone(),
            done: res.terminal,
            subrange_id,
        });
        self.env_steps += 1;
        if res.done {
            self.episodes += 1;
            self.recent_returns.push(self.episode_return);
            if self.recent_returns.len() > 100 {
                self.recent_returns.remove(0);
            }
            self.episode_return = 0.0;
        } else {
            self.current = Some(res.obs);
        }
        if self.buffer.len() >= self.cfg.batch {
            for _ in 0..self.cfg.updates_per_step {
                self.last_diag = updater.update(&self.buffer, &mut self.agent, &self.cfg, &mut self.rng)?;
                if self.last_diag.actor_loss.is_some() {
                    self.last_actor_loss = self.last_diag.actor_loss;
                }
            }
        }
        Ok(())
    }

    /// Runs `steps` env steps, evaluating whenever the step counter reaches a
    /// multiple of `eval_every`.
    pub fn run<U, F>(&mut self, steps: u64, updater: &mut U, evaluate: &mut F) -> Result<Vec<MetricsRow>>
    where
        U: Updater + ?Sized,
        F: FnMut(&Policy) -> Result<EvalSummary>,
    {
        let mut rows = Vec::new();
        for _ in 0..steps {
            self.step(updater)?;
            if self.env_steps % self.cfg.eval_every == 0 {
                let s = evaluate(&self.agent.policy)?;
                let row = MetricsRow {
                    step: self.env_steps,
                    avg_return: s.avg_return,
                    upper_ratio: s.upper_ratio,
                    whole_ratio: s.whole_ratio,
                    success_rate: s.success_rate,
                    alpha: self.agent.alpha(),
                    critic_loss: self.last_diag.critic_loss,
                    actor_loss: self.last_actor_loss,
                };
                log::info!(
                    "step {} return {:.3} upper {:.3} success {:.2} alpha {:.4}",
                    row.step,
                    row.avg_return,
                    row.upper_ratio,
                    row.success_rate,
                    row.alpha
                );
                self.metrics.push(row);
                rows.push(row);
            }
        }
        Ok(rows)
    }
}

/// Runs one deterministic episode from an already reset environment.
pub fn rollout_episode<E: Environment + ?Sized, R: Rng + ?Sized>(
    env: &mut E,
    first: Observation,
    policy: &Policy,
    randomized: bool,
    rng: &mut R,
) -> Result<(f64, crate::env::StepInfo)> {
    let mut obs = first;
    let mut ret = 0.0;
    loop {
        let a = policy.act(obs.for_policy(randomized), rng, true)?;
        let res = env.step(&a)?;
        ret += res.reward;
        if res.done {
            return Ok((ret, res.info));
        }
        obs = res.obs;
    }
}

/// Mean return of `episodes` deterministic episodes on a freshly seeded copy.
pub fn evaluate_episodes<E: Environment + Clone, R: Rng + ?Sized>(
    env: &E,
    policy: &Policy,
    episodes: usize,
    randomized: bool,
    rng: &mut R,
) -> Result<EvalSummary> {
    let mut env = env.clone();
    let mut s = EvalSummary { episodes, ..EvalSummary::default() };
    for _ in 0..episodes {
        let first = env.reset()?;
        let (ret, info) = rollout_episode(&mut env, first, policy, randomized, rng)?;
        s.avg_return += ret;
        s.upper_ratio += info.upper_ratio;
        s.whole_ratio += info.whole_ratio;
        s.success_rate += f64::from(u8::from(info.success));
    }
    let k = episodes.max(1) as f64;
    s.avg_return /= k;
    s.upper_ratio /= k;
    s.whole_ratio /= k;
    s.success_rate /= k;
    Ok(s)
}
