//! Point-cloud networks: the dense per-point policy, the action-conditioned
//! critic, the direct-vector policy and the latent-Q critic, plus
//! squashed-Gaussian sampling.
//!
//! Every network sees coordinates centred on the gripper point. Set
//! abstraction keeps all points (sampling ratio 1) and max-pools an MLP over
//! radius neighbourhoods. Feature propagation interpolates over the same point
//! set with inverse squared-distance weights; the first propagation layer
//! receives the global feature broadcast to every point.
//!
//! Batches are stacked row-wise so a whole minibatch is one graph. Neighbour
//! lists are ordered by `(distance, coordinates, class)` rather than by input
//! index, which makes every reduction order independent of point order.

use std::cmp::Ordering;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::arm_model::Vec3;
use crate::autodiff::{AutodiffError, Graph, ParamSet, Tensor, Var};
use crate::env::ACTION_DIM;
use crate::perception::{PointClass, SegmentedPointCloud};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
const FEATURE_DIM: usize = 6;
const INTERP_EPS: f64 = 1e-16;

#[derive(Debug, thiserror::Error)]
pub enum NetError {
    #[error("observation {index} has {grippers} gripper points (expected exactly 1)")]
    MissingGripper { index: usize, grippers: usize },
    #[error("invalid network config: {0}")]
    Config(String),
    #[error("action batch has {got} rows for {expected} observations")]
    ActionBatch { got: usize, expected: usize },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

pub type Result<T> = std::result::Result<T, NetError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PointNetConfig {
    pub sa_radii: Vec<f64>,
    pub sa_sampling_ratios: Vec<f64>,
    /// Neighbour cap per radius group, nearest first.
    pub max_neighbors: usize,
    pub fp_neighbors: Vec<usize>,
    pub sa_mlps: Vec<Vec<usize>>,
    pub global_mlp: Vec<usize>,
    pub fp_mlps: Vec<Vec<usize>>,
    pub head_mlp: Vec<usize>,
    pub critic_head: Vec<usize>,
    pub direct_head: Vec<usize>,
}

impl Default for PointNetConfig {
    fn default() -> Self {
        Self {
            sa_radii: vec![0.05, 0.1],
            sa_sampling_ratios: vec![1.0, 1.0],
            max_neighbors: 32,
            fp_neighbors: vec![1, 3, 3],
            sa_mlps: vec![vec![64, 64, 128], vec![128, 128, 256]],
            global_mlp: vec![256, 512, 1024],
            fp_mlps: vec![vec![256, 256], vec![256, 128], vec![128, 128, 128]],
            head_mlp: vec![128, 128],
            critic_head: vec![128, 128],
            direct_head: vec![256, 256, 256, 128, 128, 128, 128, 128, 128],
        }
    }
}

impl PointNetConfig {
    /// Narrow trunk for single-CPU training runs. Radii, neighbour counts and
    /// head sizes are unchanged.
    pub fn desk() -> Self {
        Self {
            sa_mlps: vec![vec![32, 32], vec![64, 64]],
            global_mlp: vec![64, 128],
            fp_mlps: vec![vec![64], vec![64], vec![64]],
            ..Self::default()
        }
    }

    /// Very small widths for unit tests and toy problems.
    pub fn tiny() -> Self {
        Self {
            sa_mlps: vec![vec![8], vec![8]],
            global_mlp: vec![16],
            fp_mlps: vec![vec![8], vec![8], vec![8]],
            head_mlp: vec![16, 16],
            critic_head: vec![16, 16],
            direct_head: vec![16, 16],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(NetError::Config(m));
        if self.sa_radii.len() != 2 || self.sa_mlps.len() != 2 || self.sa_sampling_ratios.len() != 2 {
            return err("exactly two set-abstraction layers are supported".into());
        }
        if !(self.sa_radii[0] > 0.0 && self.sa_radii[0] < self.sa_radii[1]) {
            return err(format!("radii must be positive and ascending, got {:?}", self.sa_radii));
        }
        if self.sa_sampling_ratios.iter().any(|&r| !(r > 0.0 && r <= 1.0)) {
            return err(format!("sampling ratios must lie in (0, 1], got {:?}", self.sa_sampling_ratios));
        }
        if self.sa_sampling_ratios.iter().any(|&r| r != 1.0) {
            return err("only sampling ratio 1 (grouping without downsampling) is implemented".into());
        }
        if self.fp_neighbors.len() != 3 || self.fp_mlps.len() != 3 {
            return err("exactly three feature-propagation layers are required".into());
        }
        if self.fp_neighbors.iter().any(|&k| k == 0) || self.max_neighbors == 0 {
            return err("neighbour counts must be positive".into());
        }
        let all = self.sa_mlps.iter().chain(&self.fp_mlps).chain([
            &self.global_mlp,
            &self.head_mlp,
            &self.critic_head,
            &self.direct_head,
        ]);
        for mlp in all {
            if mlp.is_empty() || mlp.contains(&0) {
                return err(format!("MLP widths must be non-empty and positive, got {mlp:?}"));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Batch preparation

#[derive(Clone, Debug)]
struct Grouping {
    /// Source point row for each (centre, neighbour) pair.
    src: Vec<usize>,
    /// `x_src - x_centre` per pair.
    rel: Tensor,
    /// Pair rows belonging to each centre point.
    sets: Vec<Vec<usize>>,
}

#[derive(Clone, Debug)]
struct Interp {
    dst: Vec<usize>,
    src: Vec<usize>,
    w: Vec<f64>,
}

/// Parameter-independent structure of a batch of observations: centred
/// coordinates, base features, neighbourhoods and interpolation weights.
#[derive(Clone, Debug)]
pub struct PreparedBatch {
    num_clouds: usize,
    num_points: usize,
    cloud_of: Vec<usize>,
    cloud_rows: Vec<Vec<usize>>,
    gripper_rows: Vec<usize>,
    features: Tensor,
    groups: [Grouping; 2],
    interps: [Interp; 2],
}

fn class_index(c: PointClass) -> usize {
    match c {
        PointClass::Garment => 0,
        PointClass::Arm => 1,
        PointClass::Gripper => 2,
    }
}

/// Sorted neighbour candidates of `i` within one cloud.
fn sorted_neighbors(pts: &[Vec3], classes: &[PointClass], i: usize) -> Vec<(f64, usize)> {
    let mut cand: Vec<(f64, usize)> = (0..pts.len()).map(|j| ((pts[j] - pts[i]).norm_squared(), j)).collect();
    cand.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then_with(|| {
                let (pa, pb) = (pts[a.1], pts[b.1]);
                pa.x.total_cmp(&pb.x).then(pa.y.total_cmp(&pb.y)).then(pa.z.total_cmp(&pb.z))
            })
            .then_with(|| class_index(classes[a.1]).cmp(&class_index(classes[b.1])))
            .then(Ordering::Equal)
    });
    cand
}

impl PreparedBatch {
    pub fn new(clouds: &[&SegmentedPointCloud], cfg: &PointNetConfig) -> Result<Self> {
        let mut cloud_of = Vec::new();
        let mut cloud_rows = Vec::with_capacity(clouds.len());
        let mut gripper_rows = Vec::with_capacity(clouds.len());
        let mut feats = Vec::new();
        let mut groups: [(Vec<usize>, Vec<f64>, Vec<Vec<usize>>); 2] = Default::default();
        let mut interps: [Interp; 2] = std::array::from_fn(|_| Interp { dst: vec![], src: vec![], w: vec![] });
        let mut offset = 0;
        for (ci, cloud) in clouds.iter().enumerate() {
            let grippers = cloud.count(PointClass::Gripper);
            if grippers != 1 || cloud.points.len() != cloud.classes.len() {
                return Err(NetError::MissingGripper { index: ci, grippers });
            }
            let g = cloud.gripper().expect("counted");
            let centred: Vec<Vec3> = cloud.points.iter().map(|p| p - g).collect();
            let m = centred.len();
            let mut rows = Vec::with_capacity(m);
            for (k, (p, c)) in centred.iter().zip(&cloud.classes).enumerate() {
                let oh = c.one_hot();
                feats.extend_from_slice(&[p.x, p.y, p.z, oh[0], oh[1], oh[2]]);
                cloud_of.push(ci);
                rows.push(offset + k);
                if *c == PointClass::Gripper {
                    gripper_rows.push(offset + k);
                }
            }
            for i in 0..m {
                let cand = sorted_neighbors(&centred, &cloud.classes, i);
                for (layer, r) in cfg.sa_radii.iter().enumerate() {
                    let (src, rel, sets) = &mut groups[layer];
                    let mut set = Vec::new();
                    for &(d2, j) in cand.iter().take(cfg.max_neighbors) {
                        if d2 > r * r {
                            break;
                        }
                        set.push(src.len());
                        src.push(offset + j);
                        let d = centred[j] - centred[i];
                        rel.extend_from_slice(&[d.x, d.y, d.z]);
                    }
                    sets.push(set);
                }
                for (slot, &k) in cfg.fp_neighbors[1..].iter().enumerate() {
                    let near = &cand[..k.min(m)];
                    let w: Vec<f64> = near.iter().map(|&(d2, _)| 1.0 / d2.max(INTERP_EPS)).collect();
                    let total: f64 = w.iter().sum();
                    let it = &mut interps[slot];
                    for (&(_, j), wj) in near.iter().zip(w) {
                        it.dst.push(offset + i);
                        it.src.push(offset + j);
                        it.w.push(wj / total);
                    }
                }
            }
            cloud_rows.push(rows);
            offset += m;
        }
        let groups = groups.map(|(src, rel, sets)| {
            let n = src.len();
            Grouping { src, rel: Tensor::new(n, 3, rel).expect("3 per pair"), sets }
        });
        Ok(Self {
            num_clouds: clouds.len(),
            num_points: offset,
            cloud_of,
            cloud_rows,
            gripper_rows,
            features: Tensor::new(offset, FEATURE_DIM, feats).expect("6 per point"),
            groups,
            interps,
        })
    }

    pub fn num_clouds(&self) -> usize {
        self.num_clouds
    }

    pub fn num_points(&self) -> usize {
        self.num_points
    }

    /// Stacked row of each cloud's gripper point.
    pub fn gripper_rows(&self) -> &[usize] {
        &self.gripper_rows
    }

    /// Stacked rows belonging to cloud `i`.
    pub fn cloud_rows(&self, i: usize) -> &[usize] {
        &self.cloud_rows[i]
    }
}

// ---------------------------------------------------------------------------
// Layers

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub(crate) struct Linear {
    w: usize,
    b: usize,
}

impl Linear {
    fn new<R: Rng + ?Sized>(ps: &mut ParamSet, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let w = ps.add_linear(name, fan_in, fan_out, rng);
        Self { w, b: w + 1 }
    }

    fn forward(&self, g: &mut Graph, vars: &[Var], x: Var) -> Result<Var> {
        let y = g.matmul(x, vars[self.w])?;
        Ok(g.add_row(y, vars[self.b])?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub(crate) struct Mlp {
    layers: Vec<Linear>,
    relu_last: bool,
}

impl Mlp {
    pub(crate) fn new<R: Rng + ?Sized>(
        ps: &mut ParamSet,
        name: &str,
        fan_in: usize,
        widths: &[usize],
        relu_last: bool,
        rng: &mut R,
    ) -> Self {
        let mut layers = Vec::with_capacity(widths.len());
        let mut prev = fan_in;
        for (k, &w) in widths.iter().enumerate() {
            layers.push(Linear::new(ps, &format!("{name}.{k}"), prev, w, rng));
            prev = w;
        }
        Self { layers, relu_last }
    }

    pub(crate) fn forward(&self, g: &mut Graph, vars: &[Var], mut x: Var) -> Result<Var> {
        let n = self.layers.len();
        for (k, l) in self.layers.iter().enumerate() {
            x = l.forward(g, vars, x)?;
            if k + 1 < n || self.relu_last {
                x = g.relu(x);
            }
        }
        Ok(x)
    }
}

/// Radius-group layer. The first linear map is split into a relative-position
/// part applied per pair and a feature part applied per point and gathered,
/// which equals a dense layer on `[x_j - x_i, f_j]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct SetAbstraction {
    w_rel: usize,
    w_feat: usize,
    b: usize,
    rest: Mlp,
    out_dim: usize,
}

impl SetAbstraction {
    fn new<R: Rng + ?Sized>(ps: &mut ParamSet, name: &str, feat_in: usize, widths: &[usize], rng: &mut R) -> Self {
        let out0 = widths[0];
        let std = (2.0 / (3 + feat_in) as f64).sqrt();
        let mut normal = |r, c| {
            Tensor::from_fn(r, c, |_, _| std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        };
        let w_rel = ps.add(format!("{name}.0.rel_weight"), normal(3, out0));
        let w_feat = ps.add(format!("{name}.0.feat_weight"), normal(feat_in, out0));
        let b = ps.add(format!("{name}.0.bias"), Tensor::zeros(1, out0));
        let rest = Mlp::new(ps, &format!("{name}.tail"), out0, &widths[1..], true, rng);
        Self { w_rel, w_feat, b, rest, out_dim: *widths.last().expect("non-empty") }
    }

    fn forward(&self, g: &mut Graph, vars: &[Var], group: &Grouping, feats: Var) -> Result<Var> {
        let rel = g.constant(group.rel.clone());
        let pr = g.matmul(rel, vars[self.w_rel])?;
        let pf = g.matmul(feats, vars[self.w_feat])?;
        let pf = g.gather_rows(pf, &group.src)?;
        let h = g.add(pr, pf)?;
        let h = g.add_row(h, vars[self.b])?;
        let h = g.relu(h);
        let h = self.rest.forward(g, vars, h)?;
        Ok(g.max_over_set(h, &group.sets)?)
    }
}

/// Classification-style encoder: two set-abstraction layers, a per-point
/// global MLP on `[x, h]` and a max pool per cloud.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Encoder {
    sa1: SetAbstraction,
    sa2: SetAbstraction,
    global: Mlp,
}

struct EncoderOut {
    h1: Var,
    h2: Var,
    global: Var,
}

impl Encoder {
    fn new<R: Rng + ?Sized>(ps: &mut ParamSet, name: &str, feat_in: usize, cfg: &PointNetConfig, rng: &mut R) -> Self {
        let sa1 = SetAbstraction::new(ps, &format!("{name}.sa1"), feat_in, &cfg.sa_mlps[0], rng);
        let sa2 = SetAbstraction::new(ps, &format!("{name}.sa2"), sa1.out_dim, &cfg.sa_mlps[1], rng);
        let global = Mlp::new(ps, &format!("{name}.global"), 3 + sa2.out_dim, &cfg.global_mlp, true, rng);
        Self { sa1, sa2, global }
    }

    fn forward(&self, g: &mut Graph, vars: &[Var], batch: &PreparedBatch, feats: Var) -> Result<EncoderOut> {
        let h1 = self.sa1.forward(g, vars, &batch.groups[0], feats)?;
        let h2 = self.sa2.forward(g, vars, &batch.groups[1], h1)?;
        let pos = g.slice_cols(feats, 0, 3)?;
        let x = g.concat_cols(&[pos, h2])?;
        let x = self.global.forward(g, vars, x)?;
        let global = g.max_over_set(x, &batch.cloud_rows)?;
        Ok(EncoderOut { h1, h2, global })
    }
}

fn interpolate(g: &mut Graph, x: Var, it: &Interp, n: usize) -> Result<Var> {
    let y = g.gather_rows(x, &it.src)?;
    let y = g.scale_rows(y, &it.w)?;
    Ok(g.scatter_add_rows(y, &it.dst, n)?)
}

fn last(widths: &[usize]) -> usize {
    *widths.last().expect("validated non-empty")
}

// ---------------------------------------------------------------------------
// Gaussian outputs and sampling

/// Mean and clamped log-std of one diagonal Gaussian.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianPolicyOutput {
    pub mu: [f64; ACTION_DIM],
    pub log_std: [f64; ACTION_DIM],
}

impl GaussianPolicyOutput {
    pub fn sigma(&self) -> [f64; ACTION_DIM] {
        self.log_std.map(f64::exp)
    }

    pub fn is_valid(&self) -> bool {
        self.mu.iter().all(|m| m.is_finite())
            && self.log_std.iter().all(|s| (LOG_STD_MIN..=LOG_STD_MAX).contains(s))
    }

    fn from_rows(mu: &Tensor, log_std: &Tensor) -> Vec<Self> {
        (0..mu.rows())
            .map(|r| Self {
                mu: std::array::from_fn(|k| mu.get(r, k)),
                log_std: std::array::from_fn(|k| log_std.get(r, k)),
            })
            .collect()
    }
}

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// `ln(1 - tanh(u)^2)` without cancellation.
pub fn log_one_minus_tanh_sq(u: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - u - crate::autodiff::softplus_f64(-2.0 * u))
}

/// Draws `tanh(mu + sigma * xi)` and its log-density including the tanh
/// Jacobian. The deterministic branch returns `tanh(mu)` and no density.
pub fn sample_squashed_action<R: Rng + ?Sized>(
    gauss: &GaussianPolicyOutput,
    rng: &mut R,
    deterministic: bool,
) -> ([f64; ACTION_DIM], Option<f64>) {
    if deterministic {
        return (gauss.mu.map(f64::tanh), None);
    }
    let xi: [f64; ACTION_DIM] = std::array::from_fn(|_| rng.sample(StandardNormal));
    squashed_from_noise(gauss, &xi)
}

/// Same as the stochastic branch of [`sample_squashed_action`] for given noise.
pub fn squashed_from_noise(gauss: &GaussianPolicyOutput, xi: &[f64; ACTION_DIM]) -> ([f64; ACTION_DIM], Option<f64>) {
    let mut a = [0.0; ACTION_DIM];
    let mut logp = 0.0;
    for k in 0..ACTION_DIM {
        let u = gauss.mu[k] + gauss.log_std[k].exp() * xi[k];
        a[k] = u.tanh();
        logp += -0.5 * xi[k] * xi[k] - gauss.log_std[k] - HALF_LN_2PI - log_one_minus_tanh_sq(u);
    }
    (a, Some(logp))
}

/// Differentiable squashed sample for a `B x 6` batch given standard-normal
/// noise `xi`. Returns the action (`B x 6`) and log-probability (`B x 1`).
pub fn squashed_sample_graph(g: &mut Graph, mu: Var, log_std: Var, xi: &Tensor) -> Result<(Var, Var)> {
    let xi_v = g.constant(xi.clone());
    let sigma = g.exp(log_std);
    let noise = g.mul(sigma, xi_v)?;
    let u = g.add(mu, noise)?;
    let a = g.tanh(u);
    // ln(1 - tanh^2 u) = 2 (ln 2 - u - softplus(-2u))
    let m2u = g.scale(u, -2.0);
    let sp = g.softplus(m2u);
    let t = g.add(u, sp)?;
    let t = g.add_scalar(t, -std::f64::consts::LN_2);
    let corr = g.scale(t, -2.0);
    let base = g.constant(xi.map(|x| -0.5 * x * x - HALF_LN_2PI));
    let lp = g.sub(base, log_std)?;
    let lp = g.sub(lp, corr)?;
    Ok((a, g.sum_cols(lp)))
}

/// Splits a `n x 12` head output into mean and clamped log-std.
fn split_gaussian(g: &mut Graph, out: Var) -> Result<(Var, Var)> {
    let mu = g.slice_cols(out, 0, ACTION_DIM)?;
    let ls = g.slice_cols(out, ACTION_DIM, 2 * ACTION_DIM)?;
    Ok((mu, g.clamp(ls, LOG_STD_MIN, LOG_STD_MAX)))
}

// ---------------------------------------------------------------------------
// Networks

/// Graph handles of a policy forward pass.
#[derive(Clone, Copy, Debug)]
pub struct PolicyVars {
    /// `B x 6` means at the gripper rows.
    pub mu: Var,
    /// `B x 6` clamped log-stds at the gripper rows.
    pub log_std: Var,
}

/// Dense transformation policy: segmentation network emitting a Gaussian
/// per point; the gripper row is executed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensePolicy {
    pub cfg: PointNetConfig,
    pub params: ParamSet,
    encoder: Encoder,
    fp: [Mlp; 3],
    head: Mlp,
}

impl DensePolicy {
    pub fn new<R: Rng + ?Sized>(cfg: &PointNetConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut ps = ParamSet::new();
        let encoder = Encoder::new(&mut ps, "enc", FEATURE_DIM, cfg, rng);
        let g_dim = last(&cfg.global_mlp);
        let fp3 = Mlp::new(&mut ps, "fp3", g_dim + encoder.sa2.out_dim, &cfg.fp_mlps[0], true, rng);
        let fp2 = Mlp::new(&mut ps, "fp2", last(&cfg.fp_mlps[0]) + encoder.sa1.out_dim, &cfg.fp_mlps[1], true, rng);
        let fp1 = Mlp::new(&mut ps, "fp1", last(&cfg.fp_mlps[1]) + FEATURE_DIM, &cfg.fp_mlps[2], true, rng);
        let mut widths = cfg.head_mlp.clone();
        widths.push(2 * ACTION_DIM);
        let head = Mlp::new(&mut ps, "head", last(&cfg.fp_mlps[2]), &widths, false, rng);
        Ok(Self { cfg: cfg.clone(), params: ps, encoder, fp: [fp3, fp2, fp1], head })
    }

    /// Per-point features entering the head (`N x c`).
    fn trunk(&self, g: &mut Graph, vars: &[Var], batch: &PreparedBatch) -> Result<Var> {
        let feats = g.constant(batch.features.clone());
        let enc = self.encoder.forward(g, vars, batch, feats)?;
        let n = batch.num_points;
        // The global level holds one point per cloud, so its interpolation is a broadcast.
        let gb = g.gather_rows(enc.global, &batch.cloud_of)?;
        let x = g.concat_cols(&[gb, enc.h2])?;
        let x = self.fp[0].forward(g, vars, x)?;
        let x = interpolate(g, x, &batch.interps[0], n)?;
        let x = g.concat_cols(&[x, enc.h1])?;
        let x = self.fp[1].forward(g, vars, x)?;
        let x = interpolate(g, x, &batch.interps[1], n)?;
        let x = g.concat_cols(&[x, feats])?;
        self.fp[2].forward(g, vars, x)
    }

    /// Head evaluated at the gripper rows only.
    pub fn forward(&self, g: &mut Graph, vars: &[Var], batch: &PreparedBatch) -> Result<PolicyVars> {
        let x = self.trunk(g, vars, batch)?;
        let x = g.gather_rows(x, &batch.gripper_rows)?;
        let out = self.head.forward(g, vars, x)?;
        let (mu, log_std) = split_gaussian(g, out)?;
        Ok(PolicyVars { mu, log_std })
    }

    /// Per-point Gaussians (`N x 6` each) for the whole batch.
    pub fn forward_dense(&self, g: &mut Graph, vars: &[Var], batch: &PreparedBatch) -> Result<PolicyVars> {
        let x = self.trunk(g, vars, batch)?;
        let out = self.head.forward(g, vars, x)?;
        let (mu, log_std) = split_gaussian(g, out)?;
        Ok(PolicyVars { mu, log_std })
    }

    /// Per-point outputs of one observation and the selected gripper output.
    pub fn dense_outputs(&self, obs: &SegmentedPointCloud) -> Result<(Vec<GaussianPolicyOutput>, GaussianPolicyOutput)> {
        let batch = PreparedBatch::new(&[obs], &self.cfg)?;
        let mut g = Graph::new();
        let vars = self.params.bind_frozen(&mut g);
        let pv = self.forward_dense(&mut g, &vars, &batch)?;
        let all = GaussianPolicyOutput::from_rows(g.value(pv.mu), g.value(pv.log_std));
        let sel = all[batch.gripper_rows[0]];
        Ok((all, sel))
    }
}

/// Action-conditioned critic: the action is appended to every point's
/// features before a classification trunk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointCritic {
    pub cfg: PointNetConfig,
    pub params: ParamSet,
    encoder: Encoder,
    head: Mlp,
}

impl PointCritic {
    pub fn new<R: Rng + ?Sized>(cfg: &PointNetConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut ps = ParamSet::new();
        let encoder = Encoder::new(&mut ps, "enc", FEATURE_DIM + ACTION_DIM, cfg, rng);
        let mut widths = cfg.critic_head.clone();
        widths.push(1);
        let head = Mlp::new(&mut ps, "head", last(&cfg.global_mlp), &widths, false, rng);
        Ok(Self { cfg: cfg.clone(), params: ps, encoder, head })
    }

    /// `B x 1` Q values for a `B x 6` action node.
    pub fn forward(&self, g: &mut Graph, vars: &[Var], batch: &PreparedBatch, action: Var) -> Result<Var> {
        check_actions(g, batch, action)?;
        let base = g.constant(batch.features.clone());
        let per_point = g.gather_rows(action, &batch.cloud_of)?;
        let feats = g.concat_cols(&[base, per_point])?;
        let enc = self.encoder.forward(g, vars, batch, feats)?;
        self.head.forward(g, vars, enc.global)
    }
}

/// Classification trunk encoding the cloud to one Gaussian through the
/// nine-layer head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectVectorPolicy {
    pub cfg: PointNetConfig,
    pub params: ParamSet,
    encoder: Encoder,
    head: Mlp,
}

impl DirectVectorPolicy {
    pub fn new<R: Rng + ?Sized>(cfg: &PointNetConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut ps = ParamSet::new();
        let encoder = Encoder::new(&mut ps, "enc", FEATURE_DIM, cfg, rng);
        let mut widths = cfg.direct_head.clone();
        widths.push(2 * ACTION_DIM);
        let head = Mlp::new(&mut ps, "head", last(&cfg.global_mlp), &widths, false, rng);
        Ok(Self { cfg: cfg.clone(), params: ps, encoder, head })
    }

    pub fn forward(&self, g: &mut Graph, vars: &[Var], batch: &PreparedBatch) -> Result<PolicyVars> {
        let feats = g.constant(batch.features.clone());
        let enc = self.encoder.forward(g, vars, batch, feats)?;
        let out = self.head.forward(g, vars, enc.global)?;
        let (mu, log_std) = split_gaussian(g, out)?;
        Ok(PolicyVars { mu, log_std })
    }
}

/// Encode-then-concatenate critic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentQCritic {
    pub cfg: PointNetConfig,
    pub params: ParamSet,
    encoder: Encoder,
    head: Mlp,
}

impl LatentQCritic {
    pub fn new<R: Rng + ?Sized>(cfg: &PointNetConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut ps = ParamSet::new();
        let encoder = Encoder::new(&mut ps, "enc", FEATURE_DIM, cfg, rng);
        let mut widths = cfg.critic_head.clone();
        widths.push(1);
        let head = Mlp::new(&mut ps, "head", last(&cfg.global_mlp) + ACTION_DIM, &widths, false, rng);
        Ok(Self { cfg: cfg.clone(), params: ps, encoder, head })
    }

    pub fn forward(&self, g: &mut Graph, vars: &[Var], batch: &PreparedBatch, action: Var) -> Result<Var> {
        check_actions(g, batch, action)?;
        let feats = g.constant(batch.features.clone());
        let enc = self.encoder.forward(g, vars, batch, feats)?;
        let x = g.concat_cols(&[enc.global, action])?;
        self.head.forward(g, vars, x)
    }
}

fn check_actions(g: &Graph, batch: &PreparedBatch, action: Var) -> Result<()> {
    let (rows, cols) = g.shape(action);
    if rows != batch.num_clouds || cols != ACTION_DIM {
        return Err(NetError::ActionBatch { got: rows, expected: batch.num_clouds });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Architecture-agnostic wrappers used by the trainers

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    #[default]
    Dense,
    DirectVector,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticKind {
    #[default]
    PerPoint,
    LatentQ,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Policy {
    Dense(DensePolicy),
    DirectVector(DirectVectorPolicy),
}

impl Policy {
    pub fn new<R: Rng + ?Sized>(kind: PolicyKind, cfg: &PointNetConfig, rng: &mut R) -> Result<Self> {
        Ok(match kind {
            PolicyKind::Dense => Policy::Dense(DensePolicy::new(cfg, rng)?),
            PolicyKind::DirectVector => Policy::DirectVector(DirectVectorPolicy::new(cfg, rng)?),
        })
    }

    pub fn kind(&self) -> PolicyKind {
        match self {
            Policy::Dense(_) => PolicyKind::Dense,
            Policy::DirectVector(_) => PolicyKind::DirectVector,
        }
    }

    pub fn cfg(&self) -> &PointNetConfig {
        match self {
            Policy::Dense(p) => &p.cfg,
            Policy::DirectVector(p) => &p.cfg,
        }
    }

    pub fn params(&self) -> &ParamSet {
        match self {
            Policy::Dense(p) => &p.params,
            Policy::DirectVector(p) => &p.params,
        }
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        match self {
            Policy::Dense(p) => &mut p.params,
            Policy::DirectVector(p) => &mut p.params,
        }
    }

    pub fn forward(&self, g: &mut Graph, vars: &[Var], batch: &PreparedBatch) -> Result<PolicyVars> {
        match self {
            Policy::Dense(p) => p.forward(g, vars, batch),
            Policy::DirectVector(p) => p.forward(g, vars, batch),
        }
    }

    /// Selected Gaussian for each observation, without gradients.
    pub fn gaussians(&self, obs: &[&SegmentedPointCloud]) -> Result<Vec<GaussianPolicyOutput>> {
        let batch = PreparedBatch::new(obs, self.cfg())?;
        self.gaussians_prepared(&batch)
    }

    pub fn gaussians_prepared(&self, batch: &PreparedBatch) -> Result<Vec<GaussianPolicyOutput>> {
        let mut g = Graph::new();
        let vars = self.params().bind_frozen(&mut g);
        let pv = self.forward(&mut g, &vars, batch)?;
        Ok(GaussianPolicyOutput::from_rows(g.value(pv.mu), g.value(pv.log_std)))
    }

    /// Acts on one observation.
    pub fn act<R: Rng + ?Sized>(
        &self,
        obs: &SegmentedPointCloud,
        rng: &mut R,
        deterministic: bool,
    ) -> Result<[f64; ACTION_DIM]> {
        let gauss = self.gaussians(&[obs])?[0];
        Ok(sample_squashed_action(&gauss, rng, deterministic).0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Critic {
    PerPoint(PointCritic),
    LatentQ(LatentQCritic),
}

impl Critic {
    pub fn new<R: Rng + ?Sized>(kind: CriticKind, cfg: &PointNetConfig, rng: &mut R) -> Result<Self> {
        Ok(match kind {
            CriticKind::PerPoint => Critic::PerPoint(PointCritic::new(cfg, rng)?),
            CriticKind::LatentQ => Critic::LatentQ(LatentQCritic::new(cfg, rng)?),
        })
    }

    pub fn params(&self) -> &ParamSet {
        match self {
            Critic::PerPoint(c) => &c.params,
            Critic::LatentQ(c) => &c.params,
        }
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        match self {
            Critic::PerPoint(c) => &mut c.params,
            Critic::LatentQ(c) => &mut c.params,
        }
    }

    pub fn forward(&self, g: &mut Graph, vars: &[Var], batch: &PreparedBatch, action: Var) -> Result<Var> {
        match self {
            Critic::PerPoint(c) => c.forward(g, vars, batch, action),
            Critic::LatentQ(c) => c.forward(g, vars, batch, action),
        }
    }

    /// Q for one observation and action, without gradients.
    pub fn q_value(&self, obs: &SegmentedPointCloud, action: &[f64; ACTION_DIM]) -> Result<f64> {
        let cfg = match self {
            Critic::PerPoint(c) => &c.cfg,
            Critic::LatentQ(c) => &c.cfg,
        };
        let batch = PreparedBatch::new(&[obs], cfg)?;
        let mut g = Graph::new();
        let vars = self.params().bind_frozen(&mut g);
        let a = g.constant(Tensor::row_vector(action));
        let q = self.forward(&mut g, &vars, &batch, a)?;
        Ok(g.value(q).item())
    }
}
