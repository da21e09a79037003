//! Host wall-clock distribution of the MPC solve and policy inference.

use std::fmt::Write as _;
use std::time::Instant;

use nalgebra::Vector3;
use rand_chacha::ChaCha8Rng;

use crate::episode::Env;
use crate::error::Result;
use crate::gait::GaitTable;
use crate::log::percentile;
use crate::model::{BodyState, Compensation};
use crate::mpc::{Command, FrictionParams, MpcConfig, MpcController};
use crate::policy::PolicyNet;
use crate::robot::NUM_LEGS;
use crate::scenario::ScenarioConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TimingStats {
    pub n: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p99_ms: f64,
    pub max_ms: f64,
}

impl TimingStats {
    pub fn from_ms(samples: &[f64]) -> Self {
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        let n = s.len();
        Self {
            n,
            mean_ms: if n == 0 { 0.0 } else { s.iter().sum::<f64>() / n as f64 },
            p50_ms: percentile(&s, 0.5),
            p99_ms: percentile(&s, 0.99),
            max_ms: s.last().copied().unwrap_or(0.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub scenario: String,
    pub robot: String,
    pub ticks: usize,
    pub mpc: TimingStats,
    pub policy: TimingStats,
    /// All legs in flight over the whole horizon: the QP has no variables.
    pub flight_mpc: TimingStats,
}

impl BenchReport {
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "scenario={}", self.scenario);
        let _ = writeln!(s, "robot={}", self.robot);
        let _ = writeln!(s, "ticks={}", self.ticks);
        for (name, t) in [("mpc", &self.mpc), ("policy", &self.policy), ("flight_mpc", &self.flight_mpc)] {
            let _ = writeln!(s, "{name}_n={}", t.n);
            let _ = writeln!(s, "{name}_mean_ms={}", t.mean_ms);
            let _ = writeln!(s, "{name}_p50_ms={}", t.p50_ms);
            let _ = writeln!(s, "{name}_p99_ms={}", t.p99_ms);
            let _ = writeln!(s, "{name}_max_ms={}", t.max_ms);
        }
        s
    }
}

/// Runs `n_ticks` control ticks of `scenario` with `net` in the loop,
/// restarting episodes as they end.
pub fn bench(scenario: &ScenarioConfig, n_ticks: usize, net: &PolicyNet, seed: u64) -> Result<BenchReport> {
    let mut env = Env::new(scenario, seed)?;
    let mut episode = 0;
    let mut mpc_ms = Vec::with_capacity(n_ticks);
    let mut policy_ms = Vec::with_capacity(n_ticks);
    for _ in 0..n_ticks {
        if env.done() {
            mpc_ms.append(&mut env.mpc_ms);
            episode += 1;
            env = Env::new(scenario, seed.wrapping_add(episode))?;
        }
        let obs = env.observe();
        let t0 = Instant::now();
        let out = net.act::<ChaCha8Rng>(&obs, None);
        policy_ms.push(t0.elapsed().as_secs_f64() * 1e3);
        env.step(&out.action, None);
    }
    mpc_ms.append(&mut env.mpc_ms);

    let robot = scenario.robot.params();
    let mut mpc = MpcController::new(MpcConfig::default(), FrictionParams::for_robot(&robot));
    let state = BodyState { p: Vector3::new(0.0, 0.0, robot.z0), ..Default::default() };
    let feet: [Vector3<f64>; NUM_LEGS] = std::array::from_fn(|l| robot.hip_offsets[l] - Vector3::new(0.0, 0.0, robot.z0));
    let flight = GaitTable::all(mpc.config.horizon, false);
    let cmd = Command { z0: robot.z0, ..Default::default() };
    let mut flight_ms = Vec::new();
    for _ in 0..50 {
        let out = mpc.tick(&state, &feet, &flight, &cmd, &Compensation::zero(), &robot)?;
        flight_ms.push(out.solve_time.as_secs_f64() * 1e3);
    }

    Ok(BenchReport {
        scenario: scenario.name.clone(),
        robot: scenario.robot.name().to_string(),
        ticks: n_ticks,
        mpc: TimingStats::from_ms(&mpc_ms),
        policy: TimingStats::from_ms(&policy_ms),
        flight_mpc: TimingStats::from_ms(&flight_ms),
    })
}
