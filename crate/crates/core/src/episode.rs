//! Closed-loop environment: policy and MPC every 30 ms, leg control and
//! physics every 1 ms.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DVector, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::controller::{ControllerParams, LocomotionController};
use crate::error::{Error, Result};
use crate::log::{
    EpisodeLog, RewardRecord, Row, Timing, TrapEvent, COL_DA, COL_DALPHA, COL_DQ, COL_FALL, COL_FORCE, COL_OMEGA,
    COL_POS, COL_QD, COL_Q, COL_S_ACTUAL, COL_S_PHI, COL_TAU, COL_THETA, COL_TIME, COL_VEL, LOG_COLUMNS,
};
use crate::model::{rot_z, world_inertia, BodyState, Compensation};
use crate::policy::{
    assemble_observation, compute_reward, Frame, FrameInputs, ObservationHistory, PolicyAction, PolicyNet,
};
use crate::robot::{RobotParams, NUM_LEGS};
use crate::scenario::ScenarioConfig;
use crate::sim::{self, SimConfig, SimState, StepReport, SIM_DT};

/// Roll/pitch beyond this (rad) counts as a fall.
pub const FALL_ANGLE: f64 = 1.0;
/// Trunk height above the terrain below which the robot has fallen (m).
pub const FALL_HEIGHT: f64 = 0.12;
pub const NOISE_V: f64 = 0.05;
pub const NOISE_OMEGA: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    Baseline,
    Augmented,
    Oracle,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::Augmented => "augmented",
            Mode::Oracle => "oracle",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Mode::Baseline),
            "augmented" => Ok(Mode::Augmented),
            "oracle" => Ok(Mode::Oracle),
            other => Err(Error::Config(format!("unknown mode '{other}'"))),
        }
    }
}

/// Source of the residual action each control tick.
pub trait Residual {
    fn act(&mut self, env: &Env, obs: &DVector<f64>) -> PolicyAction;
}

pub struct ZeroResidual;

impl Residual for ZeroResidual {
    fn act(&mut self, _env: &Env, _obs: &DVector<f64>) -> PolicyAction {
        PolicyAction::zero()
    }
}

/// Deterministic (mean) policy output.
pub struct NetResidual<'a>(pub &'a PolicyNet);

impl Residual for NetResidual<'_> {
    fn act(&mut self, _env: &Env, obs: &DVector<f64>) -> PolicyAction {
        self.0.act::<ChaCha8Rng>(obs, None).action
    }
}

/// Compensation computed from the injected wrench and payload.
pub struct OracleResidual;

impl Residual for OracleResidual {
    fn act(&mut self, env: &Env, _obs: &DVector<f64>) -> PolicyAction {
        PolicyAction { comp: env.oracle_compensation(), dq: Default::default() }
    }
}

impl<F: FnMut(&Env, &DVector<f64>) -> PolicyAction> Residual for F {
    fn act(&mut self, env: &Env, obs: &DVector<f64>) -> PolicyAction {
        self(env, obs)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub done: bool,
    pub fell: bool,
    /// Reached the scenario duration.
    pub truncated: bool,
}

pub struct Env {
    pub scenario: ScenarioConfig,
    pub cfg: SimConfig,
    pub sim: SimState,
    pub ctrl: LocomotionController,
    history: ObservationHistory,
    noise: Option<ChaCha8Rng>,
    est: BodyState,
    tick: usize,
    n_ticks: usize,
    steps_per_tick: usize,
    blocked: [bool; NUM_LEGS],
    last_tau: [Vector3<f64>; NUM_LEGS],
    comp_world: Compensation,
    dq: [Vector3<f64>; NUM_LEGS],
    pub traps: Vec<TrapEvent>,
    pub fault: Option<String>,
    pub fell: bool,
    pub mpc_ms: Vec<f64>,
}

fn fall_check(sim: &SimState, cfg: &SimConfig, rep: &StepReport) -> bool {
    let b = &sim.body;
    b.theta.x.abs() > FALL_ANGLE
        || b.theta.y.abs() > FALL_ANGLE
        || b.p.z - cfg.terrain.height(b.p.x, b.p.y) < FALL_HEIGHT
        || rep.trunk_contact
        || !b.is_finite()
}

impl Env {
    /// Episode drawn from `scenario` with `seed` (randomization sampled here).
    pub fn new(scenario: &ScenarioConfig, seed: u64) -> Result<Self> {
        scenario.validate()?;
        let scenario = scenario.sample(seed);
        let robot = scenario.robot.params();
        let cfg = SimConfig::new(robot.clone(), scenario.terrain.clone(), scenario.disturbance.clone());
        cfg.validate()?;
        let mut params = ControllerParams::new(&robot, scenario.gait.schedule());
        params.swing_height = scenario.swing_height;
        let steps_per_tick = (params.mpc.dt / SIM_DT).round() as usize;
        let n_ticks = (scenario.duration / params.mpc.dt).round() as usize;
        let sim = SimState::standing(&cfg, seed);
        let noise = scenario.observation_noise.then(|| ChaCha8Rng::seed_from_u64(seed ^ 0x0b5e_7e11));
        let mut env = Self {
            est: sim.body,
            ctrl: LocomotionController::new(robot, params),
            scenario,
            cfg,
            sim,
            history: ObservationHistory::default(),
            noise,
            tick: 0,
            n_ticks,
            steps_per_tick,
            blocked: [false; NUM_LEGS],
            last_tau: [Vector3::zeros(); NUM_LEGS],
            comp_world: Compensation::zero(),
            dq: [Vector3::zeros(); NUM_LEGS],
            traps: Vec::new(),
            fault: None,
            fell: false,
            mpc_ms: Vec::new(),
        };
        env.est = env.estimate();
        let frame = env.frame()?;
        env.history.push(frame);
        Ok(env)
    }

    pub fn robot(&self) -> &RobotParams {
        &self.ctrl.robot
    }

    pub fn tick(&self) -> usize {
        self.tick
    }

    pub fn n_ticks(&self) -> usize {
        self.n_ticks
    }

    pub fn done(&self) -> bool {
        self.fell || self.fault.is_some() || self.tick >= self.n_ticks
    }

    /// Ground truth, or ground truth with additive velocity noise.
    fn estimate(&mut self) -> BodyState {
        let mut est = self.sim.body;
        if let Some(rng) = &mut self.noise {
            let nv = Normal::new(0.0, NOISE_V).expect("finite sigma");
            let nw = Normal::new(0.0, NOISE_OMEGA).expect("finite sigma");
            est.pdot += Vector3::from_fn(|_, _| nv.sample(rng));
            est.omega += Vector3::from_fn(|_, _| nw.sample(rng));
        }
        est
    }

    /// Commanded body-frame velocity and yaw rate now.
    pub fn command(&self) -> (Vector3<f64>, f64) {
        self.scenario.command.at(self.sim.time)
    }

    pub fn observe(&self) -> DVector<f64> {
        assemble_observation(&self.history)
    }

    fn frame(&self) -> Result<Frame> {
        let est = &self.est;
        let rzt = rot_z(est.yaw()).transpose();
        let rot_inv = self.sim.rotation().inverse();
        let robot = self.robot();
        let hips = self.sim.hip_positions(robot);
        let targets = self.ctrl.targets();
        let forces = self.ctrl.forces();
        let (v_des, wz) = self.command();
        Frame::build(&FrameInputs {
            q: std::array::from_fn(|l| self.sim.joints[l].q),
            qd: std::array::from_fn(|l| self.sim.joints[l].qd),
            v_com: rzt * est.pdot,
            omega_com: rzt * est.omega,
            s_phi: self.ctrl.planned_contacts(),
            s_actual: self.sim.foot_contacts,
            v_des,
            omega_des: Vector3::new(0.0, 0.0, wz),
            p_heuristic: std::array::from_fn(|l| {
                if self.tick == 0 {
                    Vector3::zeros()
                } else {
                    rot_inv * (targets[l] - hips[l])
                }
            }),
            force_per_mass: std::array::from_fn(|l| rzt * forces[l] / robot.mass),
        })
    }

    /// Compensation matching the known external wrench, in the yaw frame.
    pub fn oracle_compensation(&self) -> Compensation {
        let robot = self.robot();
        let yaw = self.sim.body.yaw();
        let (f, m) = self.cfg.disturbance.known_wrench(self.sim.time, self.sim.rotation());
        let inv = world_inertia(robot, yaw).try_inverse().unwrap_or_default();
        let rzt = rot_z(yaw).transpose();
        Compensation { dalpha: rzt * (inv * m), da: rzt * (f / robot.mass) }
    }

    fn log_row(&self, log: &mut EpisodeLog, fall: bool) {
        let mut row: Row = [0.0; LOG_COLUMNS];
        let b = &self.sim.body;
        row[COL_TIME] = self.sim.time;
        let put = |row: &mut Row, at: usize, v: &Vector3<f64>| row[at..at + 3].copy_from_slice(v.as_slice());
        put(&mut row, COL_THETA, &b.theta);
        put(&mut row, COL_POS, &b.p);
        put(&mut row, COL_OMEGA, &b.omega);
        put(&mut row, COL_VEL, &b.pdot);
        let forces = self.ctrl.forces();
        let s_phi = self.ctrl.planned_contacts();
        for l in 0..NUM_LEGS {
            put(&mut row, COL_Q + 3 * l, &self.sim.joints[l].q);
            put(&mut row, COL_QD + 3 * l, &self.sim.joints[l].qd);
            put(&mut row, COL_TAU + 3 * l, &self.last_tau[l]);
            put(&mut row, COL_FORCE + 3 * l, &forces[l]);
            put(&mut row, COL_DQ + 3 * l, &self.dq[l]);
            row[COL_S_PHI + l] = s_phi[l] as u8 as f64;
            row[COL_S_ACTUAL + l] = self.sim.foot_contacts[l] as u8 as f64;
        }
        put(&mut row, COL_DALPHA, &self.comp_world.dalpha);
        put(&mut row, COL_DA, &self.comp_world.da);
        row[COL_FALL] = fall as u8 as f64;
        log.rows.push(row);
    }

    /// One control interval: MPC tick then `steps_per_tick` physics steps.
    /// Controller failures end the episode with a fault instead of an error.
    pub fn step(&mut self, action: &PolicyAction, mut log: Option<&mut EpisodeLog>) -> StepOutcome {
        if self.done() {
            return StepOutcome { reward: 0.0, done: true, fell: self.fell, truncated: false };
        }
        let (v_des, wz) = self.command();
        let rz = rot_z(self.sim.body.yaw());
        self.comp_world = Compensation { dalpha: rz * action.comp.dalpha, da: rz * action.comp.da };
        self.dq = action.dq;
        self.est = self.estimate();
        let comp = self.comp_world;
        match self.ctrl.control_tick(&self.est, &self.sim, &v_des, wz, &comp, &action.dq) {
            Ok(out) => self.mpc_ms.push(out.solve_time.as_secs_f64() * 1e3),
            Err(e) => {
                self.fault = Some(format!("mpc: {e}"));
                return StepOutcome { reward: 0.0, done: true, fell: true, truncated: false };
            }
        }
        for _ in 0..self.steps_per_tick {
            self.est = self.estimate();
            let tau = self.ctrl.torques(&self.est, &self.sim);
            self.last_tau = tau;
            let rep = match sim::step(&mut self.sim, &tau, &self.cfg) {
                Ok(r) => r,
                Err(e) => {
                    self.fault = Some(format!("sim: {e}"));
                    break;
                }
            };
            for leg in 0..NUM_LEGS {
                if rep.blocked[leg] && !self.blocked[leg] {
                    self.traps.push(TrapEvent { time: self.sim.time, leg });
                    if let Some(log) = log.as_deref_mut() {
                        log.traps.push(TrapEvent { time: self.sim.time, leg });
                    }
                }
            }
            self.blocked = rep.blocked;
            let fall = fall_check(&self.sim, &self.cfg, &rep);
            if let Some(log) = log.as_deref_mut() {
                self.log_row(log, fall);
            }
            if fall {
                self.fell = true;
                break;
            }
        }
        self.tick += 1;
        if self.fault.is_some() {
            self.fell = true;
            return StepOutcome { reward: 0.0, done: true, fell: true, truncated: false };
        }
        self.est = self.estimate();
        match self.frame() {
            Ok(f) => self.history.push(f),
            Err(e) => {
                self.fault = Some(format!("observation: {e}"));
                self.fell = true;
                return StepOutcome { reward: 0.0, done: true, fell: true, truncated: false };
            }
        }
        let b = &self.sim.body;
        let height = b.p.z - self.cfg.terrain.height(b.p.x, b.p.y);
        let qd = std::array::from_fn(|l| self.sim.joints[l].qd);
        let dt = self.steps_per_tick as f64 * SIM_DT;
        let reward = compute_reward(b, height, &v_des, wz, &self.last_tau, &qd, &self.scenario.reward, dt);
        if let Some(log) = log {
            if let Some(row) = log.rows.len().checked_sub(1) {
                log.rewards.push(RewardRecord { row, value: reward });
            }
        }
        let truncated = !self.fell && self.tick >= self.n_ticks;
        StepOutcome { reward, done: self.done(), fell: self.fell, truncated }
    }
}

/// Runs one full episode and returns its log.
pub fn run_episode(scenario: &ScenarioConfig, mode: Mode, residual: &mut dyn Residual, seed: u64) -> Result<EpisodeLog> {
    let mut env = Env::new(scenario, seed)?;
    let mut log = EpisodeLog::new(mode.name(), env.scenario.clone());
    let mut policy_ms = Vec::new();
    while !env.done() {
        let obs = env.observe();
        let t0 = Instant::now();
        let action = residual.act(&env, &obs);
        policy_ms.push(t0.elapsed().as_secs_f64() * 1e3);
        env.step(&action, Some(&mut log));
    }
    log.fault = env.fault.clone();
    log.timing = Timing::from_samples(&env.mpc_ms, &policy_ms);
    Ok(log)
}

/// Recomputes the per-interval rewards from the log alone.
pub fn recompute_rewards(log: &EpisodeLog) -> Vec<f64> {
    use crate::log::{leg3, vec3};
    let sc = &log.scenario;
    let dt = crate::mpc::DEFAULT_DT;
    let mut prev_row_time = 0.0;
    let mut out = Vec::with_capacity(log.rewards.len());
    let mut last_row: Option<usize> = None;
    for rec in &log.rewards {
        let t_cmd = match last_row {
            Some(r) => log.rows[r][COL_TIME],
            None => prev_row_time,
        };
        let row = &log.rows[rec.row];
        let body = BodyState {
            theta: vec3(row, COL_THETA),
            p: vec3(row, COL_POS),
            omega: vec3(row, COL_OMEGA),
            pdot: vec3(row, COL_VEL),
        };
        let (v_des, wz) = sc.command.at(t_cmd);
        let height = body.p.z - sc.terrain.height(body.p.x, body.p.y);
        let tau = std::array::from_fn(|l| leg3(row, COL_TAU, l));
        let qd = std::array::from_fn(|l| leg3(row, COL_QD, l));
        out.push(compute_reward(&body, height, &v_des, wz, &tau, &qd, &sc.reward, dt));
        last_row = Some(rec.row);
        prev_row_time = row[COL_TIME];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::robot::RobotPreset;

    #[test]
    fn standing_episode_is_stable_and_deterministic() {
        let sc = ScenarioConfig::stand(RobotPreset::A1);
        let a = run_episode(&sc, Mode::Baseline, &mut ZeroResidual, 1).unwrap();
        assert!(!a.fell(), "{:?}", a.fault);
        assert_eq!(a.rows.len(), 67 * 30);
        let z0 = RobotPreset::A1.params().z0;
        let last = a.rows.last().unwrap();
        assert!((last[COL_POS + 2] - z0).abs() < 0.02, "{}", last[COL_POS + 2]);
        let b = run_episode(&sc, Mode::Baseline, &mut ZeroResidual, 1).unwrap();
        assert!(a.same_trajectory(&b));
    }

    #[test]
    fn rewards_recompute_from_log() {
        let sc = ScenarioConfig::uncertainty(RobotPreset::A1);
        let mut sc = sc;
        sc.duration = 1.0;
        let log = run_episode(&sc, Mode::Baseline, &mut ZeroResidual, 4).unwrap();
        let re = recompute_rewards(&log);
        assert_eq!(re.len(), log.rewards.len());
        for (a, b) in re.iter().zip(&log.rewards) {
            assert!((a - b.value).abs() < 1e-10);
        }
    }

    #[test]
    fn standing_force_features_sum_to_gravity() {
        let sc = ScenarioConfig::stand(RobotPreset::A1);
        let mut env = Env::new(&sc, 0).unwrap();
        for _ in 0..10 {
            env.step(&PolicyAction::zero(), None);
        }
        let obs = env.observe();
        let newest = &obs.as_slice()[4 * crate::policy::FRAME_WIDTH..];
        let f = Frame(newest.try_into().unwrap());
        let fm = f.group("force_per_mass").unwrap();
        let fz: f64 = (0..4).map(|l| fm[3 * l + 2]).sum();
        assert!((fz - 9.81).abs() < 1e-3, "{fz}");
        assert!(f.group("v_com").unwrap().iter().all(|v| v.abs() < 0.05));
    }
}
