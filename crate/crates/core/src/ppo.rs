//! PPO for the residual policy: clipped surrogate, GAE, value loss, entropy
//! bonus and global gradient-norm clipping. Rollouts step one simulator per
//! environment against a read-only snapshot of the network.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::episode::Env;
use crate::error::{Error, Result};
use crate::nn::{Adam, MlpGrad};
use crate::par;
use crate::policy::{PolicyNet, ACTION_DIM, OBS_DIM};
use crate::scenario::ScenarioConfig;

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 0.5;
pub const TRAIN_SCENARIOS: [&str; 3] = ["high_speed", "uncertainty", "discrete_terrain"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PpoConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub clip: f64,
    pub lr: f64,
    pub n_envs: usize,
    /// Policy steps per rollout, summed over environments.
    pub rollout_steps: usize,
    pub epochs: usize,
    pub minibatch: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    pub normalize_advantages: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lambda: 0.95,
            clip: 0.2,
            lr: 3e-4,
            n_envs: 8,
            rollout_steps: 4096,
            epochs: 4,
            minibatch: 512,
            entropy_coef: 0.005,
            value_coef: 0.5,
            max_grad_norm: 0.5,
            normalize_advantages: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub obs: DVector<f64>,
    /// Pre-squash action sample.
    pub u: DVector<f64>,
    pub log_prob: f64,
    pub value: f64,
    pub reward: f64,
    /// Terminal: no value beyond this step.
    pub done: bool,
    /// The sequence is cut here (time limit or rollout end) but the state
    /// continues with this value estimate.
    pub bootstrap: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RolloutBuffer {
    pub transitions: Vec<Transition>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBuffer {
    pub fn push(&mut self, t: Transition) {
        self.transitions.push(t);
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// Generalized advantage estimates. A transition that is neither terminal
    /// nor cut continues into the next one in the buffer.
    pub fn compute_gae(&mut self, gamma: f64, lambda: f64) {
        let n = self.transitions.len();
        self.advantages = vec![0.0; n];
        self.returns = vec![0.0; n];
        let mut next_adv = 0.0;
        let mut next_value = 0.0;
        for i in (0..n).rev() {
            let t = &self.transitions[i];
            let (nv, na) = if t.done {
                (0.0, 0.0)
            } else if let Some(v) = t.bootstrap {
                (v, 0.0)
            } else {
                (next_value, next_adv)
            };
            let delta = t.reward + gamma * nv - t.value;
            let adv = delta + gamma * lambda * na;
            self.advantages[i] = adv;
            self.returns[i] = adv + t.value;
            next_adv = adv;
            next_value = t.value;
        }
    }
}

/// `min(r A, clip(r, 1-ε, 1+ε) A)`.
pub fn clipped_surrogate(ratio: f64, adv: f64, eps: f64) -> f64 {
    (ratio * adv).min(ratio.clamp(1.0 - eps, 1.0 + eps) * adv)
}

/// `∂ clipped_surrogate / ∂ log π` (zero where the clipped branch is active).
pub fn clipped_surrogate_grad(ratio: f64, adv: f64, eps: f64) -> f64 {
    if (adv > 0.0 && ratio > 1.0 + eps) || (adv < 0.0 && ratio < 1.0 - eps) {
        0.0
    } else {
        ratio * adv
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

impl LossTerms {
    pub fn total(&self, cfg: &PpoConfig) -> f64 {
        self.policy_loss + cfg.value_coef * self.value_loss - cfg.entropy_coef * self.entropy
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub policy: MlpGrad,
    pub log_std: DVector<f64>,
    pub value: MlpGrad,
}

impl Gradients {
    pub fn policy_norm(&self) -> f64 {
        (self.policy.norm_squared() + self.log_std.norm_squared()).sqrt()
    }

    pub fn value_norm(&self) -> f64 {
        self.value.norm_squared().sqrt()
    }

    /// Clips the policy and value groups to `max` separately, so the larger
    /// value gradient cannot shrink the policy step.
    pub fn clip(&mut self, max: f64) {
        let p = self.policy_norm();
        if p > max {
            self.policy.scale(max / p);
            self.log_std *= max / p;
        }
        let v = self.value_norm();
        if v > max {
            self.value.scale(max / v);
        }
    }
}

/// Loss over the minibatch `idx` and its gradient with respect to every parameter.
pub fn minibatch_loss(
    net: &PolicyNet,
    buf: &RolloutBuffer,
    idx: &[usize],
    adv: &[f64],
    cfg: &PpoConfig,
) -> (LossTerms, Gradients) {
    let b = idx.len();
    let bf = b as f64;
    let mut x = DMatrix::zeros(OBS_DIM, b);
    for (c, &i) in idx.iter().enumerate() {
        x.set_column(c, &net.scale_input(&buf.transitions[i].obs));
    }
    let (mean, pcache) = net.policy.forward_batch(&x);
    let (values, vcache) = net.value.forward_batch(&x);
    let var: DVector<f64> = net.log_std.map(|s| (2.0 * s).exp());
    let half_log_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();

    let mut terms = LossTerms::default();
    let mut d_mean = DMatrix::zeros(ACTION_DIM, b);
    let mut d_log_std = DVector::zeros(ACTION_DIM);
    let mut d_value = DMatrix::zeros(1, b);
    for (c, &i) in idx.iter().enumerate() {
        let t = &buf.transitions[i];
        let mut lp = 0.0;
        for k in 0..ACTION_DIM {
            let diff = t.u[k] - mean[(k, c)];
            lp += -0.5 * diff * diff / var[k] - net.log_std[k] - half_log_2pi;
        }
        let log_ratio = lp - t.log_prob;
        let ratio = log_ratio.exp();
        let a = adv[i];
        terms.policy_loss -= clipped_surrogate(ratio, a, cfg.clip) / bf;
        terms.approx_kl += (ratio - 1.0 - log_ratio) / bf;
        if (ratio - 1.0).abs() > cfg.clip {
            terms.clip_fraction += 1.0 / bf;
        }
        let g = -clipped_surrogate_grad(ratio, a, cfg.clip) / bf;
        for k in 0..ACTION_DIM {
            let diff = t.u[k] - mean[(k, c)];
            d_mean[(k, c)] = g * diff / var[k];
            d_log_std[k] += g * (diff * diff / var[k] - 1.0);
        }
        let ve = values[(0, c)] - buf.returns[i];
        terms.value_loss += ve * ve / bf;
        d_value[(0, c)] = cfg.value_coef * 2.0 * ve / bf;
    }
    terms.entropy = net.log_std.iter().map(|s| s + 0.5 + half_log_2pi).sum();
    d_log_std.add_scalar_mut(-cfg.entropy_coef);
    let grads = Gradients {
        policy: net.policy.backward(&pcache, &d_mean),
        log_std: d_log_std,
        value: net.value.backward(&vcache, &d_value),
    };
    (terms, grads)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct UpdateStats {
    pub loss: LossTerms,
    /// Mean pre-clip policy gradient norm.
    pub grad_norm: f64,
    pub minibatches: usize,
}

/// Optimizer state carried across updates.
pub struct Ppo {
    pub cfg: PpoConfig,
    pub opt: Adam,
    rng: ChaCha8Rng,
}

impl Ppo {
    pub fn new(cfg: PpoConfig, seed: u64) -> Self {
        Self { opt: Adam::new(cfg.lr), cfg, rng: ChaCha8Rng::seed_from_u64(seed ^ 0x9907_0bad) }
    }

    /// Several epochs of minibatch updates over `buf`, whose GAE must already be computed.
    pub fn update(&mut self, net: &mut PolicyNet, buf: &RolloutBuffer) -> Result<UpdateStats> {
        let n = buf.len();
        if n == 0 {
            return Ok(UpdateStats::default());
        }
        if buf.advantages.len() != n || buf.returns.len() != n {
            return Err(Error::DimensionMismatch { context: "rollout advantages", expected: n, actual: buf.advantages.len() });
        }
        let mut adv = buf.advantages.clone();
        if self.cfg.normalize_advantages {
            let m = adv.iter().sum::<f64>() / n as f64;
            let sd = (adv.iter().map(|a| (a - m).powi(2)).sum::<f64>() / n as f64).sqrt();
            for a in &mut adv {
                *a = if sd > 1e-12 { (*a - m) / sd } else { *a - m };
            }
        }
        let mut order: Vec<usize> = (0..n).collect();
        let mut stats = UpdateStats::default();
        let mb = self.cfg.minibatch.clamp(1, n);
        for _ in 0..self.cfg.epochs {
            order.shuffle(&mut self.rng);
            for idx in order.chunks(mb) {
                let (terms, mut g) = minibatch_loss(net, buf, idx, &adv, &self.cfg);
                let norm = g.policy_norm();
                if !terms.total(&self.cfg).is_finite() || !norm.is_finite() || !g.value_norm().is_finite() {
                    return Err(Error::Diverged(format!("non-finite loss {terms:?}")));
                }
                g.clip(self.cfg.max_grad_norm);
                self.opt.begin();
                let slot = self.opt.step_mlp(0, &mut net.policy, &g.policy);
                let slot = self.opt.step_mlp(slot, &mut net.value, &g.value);
                self.opt.update(slot, net.log_std.as_mut_slice(), g.log_std.as_slice());
                net.log_std.apply(|s| *s = s.clamp(LOG_STD_MIN, LOG_STD_MAX));
                let k = stats.minibatches as f64;
                let avg = |old: f64, new: f64| (old * k + new) / (k + 1.0);
                stats.loss = LossTerms {
                    policy_loss: avg(stats.loss.policy_loss, terms.policy_loss),
                    value_loss: avg(stats.loss.value_loss, terms.value_loss),
                    entropy: avg(stats.loss.entropy, terms.entropy),
                    approx_kl: avg(stats.loss.approx_kl, terms.approx_kl),
                    clip_fraction: avg(stats.loss.clip_fraction, terms.clip_fraction),
                };
                stats.grad_norm = avg(stats.grad_norm, norm);
                stats.minibatches += 1;
            }
        }
        if !net.is_finite() {
            return Err(Error::Diverged("non-finite parameters after update".into()));
        }
        Ok(stats)
    }
}

/// Free-function form of [`Ppo::update`].
pub fn ppo_update(net: &mut PolicyNet, buf: &RolloutBuffer, ppo: &mut Ppo) -> Result<UpdateStats> {
    ppo.update(net, buf)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurvePoint {
    pub update: usize,
    pub env_steps: u64,
    pub episodes: usize,
    /// Mean undiscounted return of episodes that finished during the rollout.
    pub mean_reward: f64,
    pub mean_episode_length: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

pub const CURVE_HEADER: &str =
    "update,env_steps,episodes,mean_reward,mean_episode_length,policy_loss,value_loss,entropy,approx_kl,clip_fraction";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LearningCurve {
    pub points: Vec<CurvePoint>,
}

impl LearningCurve {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{CURVE_HEADER}\n");
        for p in &self.points {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{}",
                p.update,
                p.env_steps,
                p.episodes,
                p.mean_reward,
                p.mean_episode_length,
                p.policy_loss,
                p.value_loss,
                p.entropy,
                p.approx_kl,
                p.clip_fraction
            );
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(CURVE_HEADER) {
            return Err(Error::Schema("learning curve header".into()));
        }
        let mut points = Vec::new();
        for l in lines.filter(|l| !l.trim().is_empty()) {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 10 {
                return Err(Error::Schema(format!("learning curve row '{l}'")));
            }
            let num = |i: usize| f[i].parse::<f64>().map_err(|_| Error::Schema(format!("learning curve value '{}'", f[i])));
            points.push(CurvePoint {
                update: num(0)? as usize,
                env_steps: num(1)? as u64,
                episodes: num(2)? as usize,
                mean_reward: num(3)?,
                mean_episode_length: num(4)?,
                policy_loss: num(5)?,
                value_loss: num(6)?,
                entropy: num(7)?,
                approx_kl: num(8)?,
                clip_fraction: num(9)?,
            });
        }
        Ok(Self { points })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub ppo: PpoConfig,
    /// Environment (policy) steps to collect in total; never exceeded.
    pub budget: u64,
    pub seed: u64,
    /// Checkpoints and the learning curve are written here after every update.
    pub out_dir: Option<PathBuf>,
}

/// Seed of the `k`-th training episode of environment `env`.
pub fn episode_seed(train_seed: u64, env: usize, k: u64) -> u64 {
    let mut z = train_seed ^ ((env as u64) << 40) ^ k;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

struct Worker {
    index: usize,
    env: Env,
    rng: ChaCha8Rng,
    episodes_started: u64,
    ep_reward: f64,
    ep_len: usize,
}

struct Segment {
    transitions: Vec<Transition>,
    finished: Vec<(f64, usize)>,
}

fn collect(
    worker: &mut Worker,
    net: &PolicyNet,
    scenario: &ScenarioConfig,
    train_seed: u64,
    steps: usize,
) -> Result<Segment> {
    let mut seg = Segment { transitions: Vec::with_capacity(steps), finished: Vec::new() };
    for s in 0..steps {
        let obs = worker.env.observe();
        let out = net.act(&obs, Some(&mut worker.rng));
        let o = worker.env.step(&out.action, None);
        worker.ep_reward += o.reward;
        worker.ep_len += 1;
        let mut t = Transition {
            obs,
            u: out.pre_squash,
            log_prob: out.log_prob,
            value: out.value,
            reward: o.reward,
            done: o.done && !o.truncated,
            bootstrap: None,
        };
        if o.done {
            if o.truncated {
                t.bootstrap = Some(net.value_of(&worker.env.observe()));
            }
            seg.finished.push((worker.ep_reward, worker.ep_len));
            worker.ep_reward = 0.0;
            worker.ep_len = 0;
            worker.episodes_started += 1;
            worker.env = Env::new(scenario, episode_seed(train_seed, worker.index, worker.episodes_started))?;
        } else if s + 1 == steps {
            t.bootstrap = Some(net.value_of(&worker.env.observe()));
        }
        seg.transitions.push(t);
    }
    Ok(seg)
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Trains a fresh network on `scenario`. `on_update` sees every curve point as it is produced.
pub fn train(
    scenario: &ScenarioConfig,
    cfg: &TrainConfig,
    mut on_update: impl FnMut(&CurvePoint),
) -> Result<(PolicyNet, LearningCurve)> {
    if !TRAIN_SCENARIOS.contains(&scenario.name.as_str()) {
        return Err(Error::Config(format!(
            "training scenario must be one of {TRAIN_SCENARIOS:?}, got '{}'",
            scenario.name
        )));
    }
    let p = &cfg.ppo;
    if p.n_envs == 0 || p.rollout_steps < p.n_envs || p.minibatch == 0 {
        return Err(Error::Config("ppo needs n_envs ≥ 1, rollout_steps ≥ n_envs and minibatch ≥ 1".into()));
    }
    if let Some(dir) = &cfg.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut net = PolicyNet::new(scenario.bounds, cfg.seed);
    let mut curve = LearningCurve::default();
    if cfg.budget == 0 {
        return Ok((net, curve));
    }
    let mut ppo = Ppo::new(p.clone(), cfg.seed);
    let mut workers = (0..p.n_envs)
        .map(|i| {
            Ok(Worker {
                index: i,
                env: Env::new(scenario, episode_seed(cfg.seed, i, 0))?,
                rng: ChaCha8Rng::seed_from_u64(episode_seed(cfg.seed ^ 0xac7, i, u64::MAX)),
                episodes_started: 0,
                ep_reward: 0.0,
                ep_len: 0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let per_env = p.rollout_steps / p.n_envs;
    let mut env_steps = 0u64;
    let mut update = 0usize;
    loop {
        // The last rollout is shortened so the total never exceeds the budget.
        let steps = per_env.min(((cfg.budget - env_steps) / p.n_envs as u64) as usize);
        if steps == 0 {
            break;
        }
        let snapshot = &net;
        let segments = par::map_mut(&mut workers, |_, w| collect(w, snapshot, scenario, cfg.seed, steps));
        let mut buf = RolloutBuffer::default();
        let mut rewards = Vec::new();
        let mut lengths = Vec::new();
        for seg in segments {
            let seg = seg?;
            for (r, l) in seg.finished {
                rewards.push(r);
                lengths.push(l as f64);
            }
            buf.transitions.extend(seg.transitions);
        }
        env_steps += buf.len() as u64;
        buf.compute_gae(p.gamma, p.lambda);
        let before = net.clone();
        let stats = match ppo.update(&mut net, &buf) {
            Ok(s) => s,
            Err(e) => {
                if let Some(dir) = &cfg.out_dir {
                    checkpoint::save(&before, &dir.join("diverged.ckpt"))?;
                    curve.save(&dir.join("learning_curve.csv"))?;
                }
                return Err(e);
            }
        };
        let point = CurvePoint {
            update,
            env_steps,
            episodes: rewards.len(),
            mean_reward: mean(&rewards),
            mean_episode_length: mean(&lengths),
            policy_loss: stats.loss.policy_loss,
            value_loss: stats.loss.value_loss,
            entropy: stats.loss.entropy,
            approx_kl: stats.loss.approx_kl,
            clip_fraction: stats.loss.clip_fraction,
        };
        on_update(&point);
        curve.points.push(point);
        if let Some(dir) = &cfg.out_dir {
            checkpoint::save(&net, &dir.join("policy.ckpt"))?;
            curve.save(&dir.join("learning_curve.csv"))?;
        }
        update += 1;
    }
    Ok((net, curve))
}
