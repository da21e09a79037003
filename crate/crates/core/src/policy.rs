//! Residual policy: robot-agnostic observations, bounded actions, reward.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DVector, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BodyState, Compensation};
use crate::nn::{Mlp, MlpGrad};
use crate::robot::{RobotPreset, NUM_LEGS};

pub const HISTORY: usize = 5;
pub const FRAME_WIDTH: usize = 68;
pub const OBS_DIM: usize = HISTORY * FRAME_WIDTH;
pub const ACTION_DIM: usize = 18;
pub const DQ_BOUND: f64 = 0.3;
pub const HIDDEN: [usize; 3] = [256, 32, 256];
pub const INIT_LOG_STD: f64 = -1.0;

/// Feature groups of one frame, in order, with their widths.
pub const FRAME_LAYOUT: [(&str, usize); 10] = [
    ("q", 12),
    ("qd", 12),
    ("v_com", 3),
    ("omega_com", 3),
    ("s_phi", 4),
    ("s_actual", 4),
    ("v_des", 3),
    ("omega_des", 3),
    ("p_heuristic", 12),
    ("force_per_mass", 12),
];

/// Fixed input scaling per feature group, so typical magnitudes are O(1).
const FRAME_SCALE: [f64; 10] = [1.0, 0.1, 1.0, 0.25, 1.0, 1.0, 1.0, 0.25, 5.0, 0.2];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundsPreset {
    HighSpeed,
    Uncertainty,
    DiscreteTerrain,
}

impl BoundsPreset {
    pub fn bounds(self) -> ActionBounds {
        let (dalpha, da) = match self {
            BoundsPreset::HighSpeed => ([2.0, 10.0, 2.0], [4.0, 2.0, 3.0]),
            BoundsPreset::Uncertainty => ([4.0, 10.0, 2.0], [4.0, 2.0, 8.0]),
            BoundsPreset::DiscreteTerrain => ([4.0, 10.0, 2.0], [2.0, 2.0, 2.0]),
        };
        ActionBounds {
            dalpha_max: Vector3::from(dalpha),
            da_max: Vector3::from(da),
            dq_max: DQ_BOUND,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BoundsPreset::HighSpeed => "high_speed",
            BoundsPreset::Uncertainty => "uncertainty",
            BoundsPreset::DiscreteTerrain => "discrete_terrain",
        }
    }
}

impl fmt::Display for BoundsPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BoundsPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "high_speed" => Ok(BoundsPreset::HighSpeed),
            "uncertainty" => Ok(BoundsPreset::Uncertainty),
            "discrete_terrain" => Ok(BoundsPreset::DiscreteTerrain),
            other => Err(Error::Config(format!("unknown bounds preset '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActionBounds {
    /// rad/s².
    pub dalpha_max: Vector3<f64>,
    /// m/s².
    pub da_max: Vector3<f64>,
    /// rad.
    pub dq_max: f64,
}

impl ActionBounds {
    pub fn scale_vector(&self) -> DVector<f64> {
        DVector::from_fn(ACTION_DIM, |i, _| match i {
            0..=2 => self.dalpha_max[i],
            3..=5 => self.da_max[i - 3],
            _ => self.dq_max,
        })
    }
}

/// Compensation in the yaw-aligned body frame plus per-leg joint offsets.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PolicyAction {
    pub comp: Compensation,
    pub dq: [Vector3<f64>; NUM_LEGS],
}

impl PolicyAction {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_vector(a: &DVector<f64>) -> Self {
        Self {
            comp: Compensation {
                dalpha: Vector3::new(a[0], a[1], a[2]),
                da: Vector3::new(a[3], a[4], a[5]),
            },
            dq: std::array::from_fn(|leg| Vector3::new(a[6 + 3 * leg], a[7 + 3 * leg], a[8 + 3 * leg])),
        }
    }

    pub fn to_vector(&self) -> DVector<f64> {
        let mut v = DVector::zeros(ACTION_DIM);
        v.fixed_rows_mut::<3>(0).copy_from(&self.comp.dalpha);
        v.fixed_rows_mut::<3>(3).copy_from(&self.comp.da);
        for leg in 0..NUM_LEGS {
            v.fixed_rows_mut::<3>(6 + 3 * leg).copy_from(&self.dq[leg]);
        }
        v
    }

    pub fn within(&self, b: &ActionBounds) -> bool {
        let s = b.scale_vector();
        self.to_vector().iter().zip(s.iter()).all(|(a, m)| a.abs() <= *m)
    }
}

/// Per-tick quantities that make up one observation frame. Vectors are in
/// the yaw-aligned body frame; `p_heuristic` is hip-relative.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FrameInputs {
    pub q: [Vector3<f64>; NUM_LEGS],
    pub qd: [Vector3<f64>; NUM_LEGS],
    pub v_com: Vector3<f64>,
    pub omega_com: Vector3<f64>,
    pub s_phi: [bool; NUM_LEGS],
    pub s_actual: [bool; NUM_LEGS],
    pub v_des: Vector3<f64>,
    pub omega_des: Vector3<f64>,
    pub p_heuristic: [Vector3<f64>; NUM_LEGS],
    pub force_per_mass: [Vector3<f64>; NUM_LEGS],
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Frame(pub [f64; FRAME_WIDTH]);

impl Frame {
    pub fn build(x: &FrameInputs) -> Result<Self> {
        let mut f = Vec::with_capacity(FRAME_WIDTH);
        let legs = |f: &mut Vec<f64>, v: &[Vector3<f64>; NUM_LEGS]| v.iter().for_each(|x| f.extend(x.iter()));
        let flags = |f: &mut Vec<f64>, b: &[bool; NUM_LEGS]| f.extend(b.iter().map(|c| *c as u8 as f64));
        legs(&mut f, &x.q);
        legs(&mut f, &x.qd);
        f.extend(x.v_com.iter());
        f.extend(x.omega_com.iter());
        flags(&mut f, &x.s_phi);
        flags(&mut f, &x.s_actual);
        f.extend(x.v_des.iter());
        f.extend(x.omega_des.iter());
        legs(&mut f, &x.p_heuristic);
        legs(&mut f, &x.force_per_mass);
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("observation frame"));
        }
        let mut out = [0.0; FRAME_WIDTH];
        out.copy_from_slice(&f);
        Ok(Frame(out))
    }

    pub fn group(&self, name: &str) -> Option<&[f64]> {
        let mut start = 0;
        for (n, w) in FRAME_LAYOUT {
            if n == name {
                return Some(&self.0[start..start + w]);
            }
            start += w;
        }
        None
    }
}

/// Ring buffer of the last `HISTORY` frames.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ObservationHistory {
    frames: VecDeque<Frame>,
}

impl ObservationHistory {
    pub fn push(&mut self, f: Frame) {
        if self.frames.len() == HISTORY {
            self.frames.pop_front();
        }
        self.frames.push_back(f);
    }

    pub fn clear(&mut self) {
        self.frames.clear();
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Oldest-to-newest frames; missing history is zero-padded at the front.
pub fn assemble_observation(h: &ObservationHistory) -> DVector<f64> {
    let mut obs = DVector::zeros(OBS_DIM);
    let pad = HISTORY - h.frames.len();
    for (k, f) in h.frames.iter().enumerate() {
        obs.rows_mut((pad + k) * FRAME_WIDTH, FRAME_WIDTH).copy_from_slice(&f.0);
    }
    obs
}

pub fn observation_scale() -> DVector<f64> {
    let mut frame = Vec::with_capacity(FRAME_WIDTH);
    for ((_, w), s) in FRAME_LAYOUT.iter().zip(FRAME_SCALE) {
        frame.extend(std::iter::repeat_n(s, *w));
    }
    DVector::from_fn(OBS_DIM, |i, _| frame[i % FRAME_WIDTH])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub w4: f64,
    /// Desired trunk height above the terrain (m).
    pub z_des: f64,
}

impl RewardWeights {
    pub fn for_robot(robot: RobotPreset) -> Self {
        Self {
            w1: 1.0,
            w2: -1.5,
            w3: -0.01,
            w4: 5.0,
            z_des: robot.params().z0,
        }
    }
}

/// Survival, velocity tracking, energy and height terms.
///
/// `height` is the trunk height above the terrain under it; velocities are
/// compared in the yaw-aligned body frame.
#[allow(clippy::too_many_arguments)]
pub fn compute_reward(
    body: &BodyState,
    height: f64,
    v_des_body: &Vector3<f64>,
    yaw_rate: f64,
    tau: &[Vector3<f64>; NUM_LEGS],
    qd: &[Vector3<f64>; NUM_LEGS],
    w: &RewardWeights,
    dt: f64,
) -> f64 {
    let rz = crate::model::rot_z(body.yaw());
    let v = rz.transpose() * body.pdot;
    let omega = rz.transpose() * body.omega;
    let vel_err = (v_des_body - v).norm() + (Vector3::new(0.0, 0.0, yaw_rate) - omega).norm();
    let power: f64 = (0..NUM_LEGS).map(|l| tau[l].component_mul(&qd[l]).abs().sum()).sum();
    w.w1 + w.w2 * vel_err + w.w3 * power * dt + w.w4 * (0.02 - (height - w.z_des).abs())
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyNet {
    pub policy: Mlp,
    pub value: Mlp,
    pub log_std: DVector<f64>,
    pub obs_scale: DVector<f64>,
    pub bounds_preset: BoundsPreset,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyOutput {
    pub action: PolicyAction,
    /// Gaussian sample before `tanh` squashing.
    pub pre_squash: DVector<f64>,
    pub log_prob: f64,
    pub value: f64,
}

pub fn layer_sizes(out: usize) -> Vec<usize> {
    let mut s = vec![OBS_DIM];
    s.extend(HIDDEN);
    s.push(out);
    s
}

/// Diagonal Gaussian log density.
pub fn gaussian_log_prob(u: &DVector<f64>, mean: &DVector<f64>, log_std: &DVector<f64>) -> f64 {
    let half_log_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    (0..u.len())
        .map(|i| {
            let z = (u[i] - mean[i]) / log_std[i].exp();
            -0.5 * z * z - log_std[i] - half_log_2pi
        })
        .sum()
}

impl PolicyNet {
    /// Random init with the final policy layer scaled by 0.01 so the initial residual is near zero.
    pub fn new(bounds_preset: BoundsPreset, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            policy: Mlp::new(&layer_sizes(ACTION_DIM), 0.01, &mut rng),
            value: Mlp::new(&layer_sizes(1), 1.0, &mut rng),
            log_std: DVector::from_element(ACTION_DIM, INIT_LOG_STD),
            obs_scale: observation_scale(),
            bounds_preset,
        }
    }

    pub fn zeros(bounds_preset: BoundsPreset) -> Self {
        Self {
            policy: Mlp::zeros(&layer_sizes(ACTION_DIM)),
            value: Mlp::zeros(&layer_sizes(1)),
            log_std: DVector::from_element(ACTION_DIM, INIT_LOG_STD),
            obs_scale: observation_scale(),
            bounds_preset,
        }
    }

    pub fn bounds(&self) -> ActionBounds {
        self.bounds_preset.bounds()
    }

    pub fn scale_input(&self, obs: &DVector<f64>) -> DVector<f64> {
        obs.component_mul(&self.obs_scale)
    }

    pub fn mean(&self, obs: &DVector<f64>) -> DVector<f64> {
        self.policy.forward(&self.scale_input(obs))
    }

    pub fn value_of(&self, obs: &DVector<f64>) -> f64 {
        self.value.forward(&self.scale_input(obs))[0]
    }

    pub fn squash(&self, u: &DVector<f64>) -> DVector<f64> {
        u.map(|x| x.tanh()).component_mul(&self.bounds().scale_vector())
    }

    /// Deterministic mode returns the squashed mean; stochastic mode samples in pre-squash space.
    pub fn act<R: Rng>(&self, obs: &DVector<f64>, rng: Option<&mut R>) -> PolicyOutput {
        let x = self.scale_input(obs);
        let mean = self.policy.forward(&x);
        let value = self.value.forward(&x)[0];
        let u = match rng {
            Some(rng) => DVector::from_fn(ACTION_DIM, |i, _| {
                let n: f64 = StandardNormal.sample(rng);
                mean[i] + self.log_std[i].exp() * n
            }),
            None => mean.clone(),
        };
        let log_prob = gaussian_log_prob(&u, &mean, &self.log_std);
        PolicyOutput {
            action: PolicyAction::from_vector(&self.squash(&u)),
            pre_squash: u,
            log_prob,
            value,
        }
    }

    /// `∂ log π(u | obs) / ∂θ` for the mean network and `log_std`.
    pub fn log_prob_grad(&self, obs: &DVector<f64>, u: &DVector<f64>) -> (MlpGrad, DVector<f64>) {
        let x = nalgebra::DMatrix::from_column_slice(OBS_DIM, 1, self.scale_input(obs).as_slice());
        let (mean, cache) = self.policy.forward_batch(&x);
        let mut d_mean = nalgebra::DMatrix::zeros(ACTION_DIM, 1);
        let mut d_log_std = DVector::zeros(ACTION_DIM);
        for i in 0..ACTION_DIM {
            let var = (2.0 * self.log_std[i]).exp();
            let diff = u[i] - mean[(i, 0)];
            d_mean[(i, 0)] = diff / var;
            d_log_std[i] = diff * diff / var - 1.0;
        }
        (self.policy.backward(&cache, &d_mean), d_log_std)
    }

    pub fn is_finite(&self) -> bool {
        self.policy.flatten().iter().chain(self.value.flatten().iter()).chain(self.log_std.iter()).all(|x| x.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounds_presets() {
        let b = BoundsPreset::Uncertainty.bounds();
        assert_eq!(b.dalpha_max, Vector3::new(4.0, 10.0, 2.0));
        assert_eq!(b.da_max, Vector3::new(4.0, 2.0, 8.0));
        let h = BoundsPreset::HighSpeed.bounds();
        assert_eq!(h.dalpha_max, Vector3::new(2.0, 10.0, 2.0));
        assert_eq!(h.da_max, Vector3::new(4.0, 2.0, 3.0));
        let d = BoundsPreset::DiscreteTerrain.bounds();
        assert_eq!(d.da_max, Vector3::new(2.0, 2.0, 2.0));
        assert_eq!(d.dq_max, 0.3);
        for p in [BoundsPreset::HighSpeed, BoundsPreset::Uncertainty, BoundsPreset::DiscreteTerrain] {
            assert_eq!(p.name().parse::<BoundsPreset>().unwrap(), p);
        }
    }

    #[test]
    fn frame_layout_is_fixed() {
        assert_eq!(FRAME_LAYOUT.iter().map(|(_, w)| w).sum::<usize>(), FRAME_WIDTH);
        assert_eq!(OBS_DIM, 340);
        let names: Vec<&str> = FRAME_LAYOUT.iter().map(|(n, _)| *n).collect();
        // No raw morphology parameters.
        for banned in ["mass", "inertia", "link_length", "hip_offset", "torque_limit"] {
            assert!(!names.contains(&banned), "{banned}");
        }
    }

    #[test]
    fn history_pads_with_zeros() {
        let mut h = ObservationHistory::default();
        let mut x = FrameInputs::default();
        x.v_des = Vector3::new(1.0, 2.0, 3.0);
        let f = Frame::build(&x).unwrap();
        h.push(f);
        let obs = assemble_observation(&h);
        assert!(obs.rows(0, 4 * FRAME_WIDTH).iter().all(|v| *v == 0.0));
        assert_eq!(obs.rows(4 * FRAME_WIDTH, FRAME_WIDTH).as_slice(), &f.0);
        for k in 0..7 {
            let mut x = FrameInputs::default();
            x.v_com.x = k as f64;
            h.push(Frame::build(&x).unwrap());
        }
        assert_eq!(h.len(), HISTORY);
        let obs = assemble_observation(&h);
        let v0 = 24;
        for k in 0..HISTORY {
            assert_eq!(obs[k * FRAME_WIDTH + v0], (k + 2) as f64);
        }
        let mut bad = FrameInputs::default();
        bad.q[2].y = f64::NAN;
        assert!(Frame::build(&bad).is_err());
    }

    #[test]
    fn zero_net_gives_zero_action() {
        let net = PolicyNet::zeros(BoundsPreset::Uncertainty);
        let obs = DVector::from_fn(OBS_DIM, |i, _| (i as f64).sin());
        let out = net.act::<ChaCha8Rng>(&obs, None);
        assert_eq!(out.action, PolicyAction::zero());
        assert_eq!(out.value, 0.0);
    }

    #[test]
    fn actions_within_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for preset in [BoundsPreset::HighSpeed, BoundsPreset::Uncertainty, BoundsPreset::DiscreteTerrain] {
            let mut net = PolicyNet::new(preset, 5);
            // Large weights saturate the squashing.
            for l in &mut net.policy.layers {
                l.w *= 50.0;
            }
            net.log_std.fill(1.0);
            let b = net.bounds();
            for _ in 0..2000 {
                let obs = DVector::from_fn(OBS_DIM, |_, _| rng.random_range(-100.0..100.0));
                let out = net.act(&obs, Some(&mut rng));
                assert!(out.action.within(&b));
            }
        }
    }

    #[test]
    fn action_vector_round_trip() {
        let v = DVector::from_fn(ACTION_DIM, |i, _| i as f64 * 0.1);
        let a = PolicyAction::from_vector(&v);
        assert_eq!(a.to_vector(), v);
        assert_eq!(a.dq[3].z, v[17]);
    }

    #[test]
    fn log_prob_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut net = PolicyNet::new(BoundsPreset::Uncertainty, 7);
        for l in &mut net.policy.layers {
            l.w *= 3.0;
        }
        let obs = DVector::from_fn(OBS_DIM, |_, _| rng.random_range(-2.0..2.0));
        let u = DVector::from_fn(ACTION_DIM, |_, _| rng.random_range(-1.0..1.0));
        let (g, g_std) = net.log_prob_grad(&obs, &u);
        let lp = |n: &PolicyNet| gaussian_log_prob(&u, &n.mean(&obs), &n.log_std);
        let h = 1e-6;
        let rel = |a: f64, b: f64| (a - b).abs() / (1e-6 + a.abs().max(b.abs()));
        for li in 0..net.policy.layers.len() {
            let (r, c) = (li % 3, (li * 7) % 20);
            let mut p = net.clone();
            p.policy.layers[li].w[(r, c)] += h;
            let mut m = net.clone();
            m.policy.layers[li].w[(r, c)] -= h;
            let fd = (lp(&p) - lp(&m)) / (2.0 * h);
            assert!(rel(fd, g.layers[li].w[(r, c)]) < 1e-4, "layer {li}: {fd} vs {}", g.layers[li].w[(r, c)]);
        }
        for i in [0, 9, 17] {
            let mut p = net.clone();
            p.log_std[i] += h;
            let mut m = net.clone();
            m.log_std[i] -= h;
            let fd = (lp(&p) - lp(&m)) / (2.0 * h);
            assert!(rel(fd, g_std[i]) < 1e-4);
        }
    }

    #[test]
    fn reward_terms() {
        let w = RewardWeights::for_robot(RobotPreset::A1);
        let body = BodyState { p: Vector3::new(0.0, 0.0, 0.3), ..Default::default() };
        let zero = [Vector3::zeros(); 4];
        let r0 = compute_reward(&body, w.z_des, &Vector3::zeros(), 0.0, &zero, &zero, &w, 0.03);
        assert!((r0 - (w.w1 + 0.02 * w.w4)).abs() < 1e-15);
        let r1 = compute_reward(&body, w.z_des, &Vector3::new(1.0, 0.0, 0.0), 0.0, &zero, &zero, &w, 0.03);
        assert!((r0 - r1 - w.w2.abs()).abs() < 1e-12);
        let tau = [Vector3::new(2.0, -3.0, 1.0); 4];
        let qd = [Vector3::new(1.0, 2.0, -4.0); 4];
        let e1 = compute_reward(&body, w.z_des, &Vector3::zeros(), 0.0, &tau, &qd, &w, 0.03) - r0;
        let e2 = compute_reward(&body, w.z_des, &Vector3::zeros(), 0.0, &tau, &qd, &w, 0.06) - r0;
        assert!((e2 - 2.0 * e1).abs() < 1e-12);
        assert!(e1 < 0.0);
    }
}
