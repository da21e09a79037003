//! Episode metrics, computed only from an `EpisodeLog`, and log comparison.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::log::{vec3, EpisodeLog, COL_OMEGA, COL_POS, COL_THETA, COL_TIME, COL_VEL};
use crate::model::rot_z;

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub scenario: String,
    pub robot: String,
    pub mode: String,
    pub seed: u64,
    pub config_hash: String,
    pub survival_time: f64,
    pub fall: bool,
    pub peak_yaw_rate: f64,
    /// Horizontal velocity error in the yaw frame (m/s).
    pub mean_velocity_error: f64,
    pub max_velocity_error: f64,
    /// `| |v| - |v_des| |` (m/s).
    pub mean_speed_error: f64,
    pub peak_speed: f64,
    pub foot_trap_events: usize,
    /// Magnitude of the mean error over the second half of the episode.
    pub steady_height_error: f64,
    pub steady_pitch_error: f64,
    pub mean_reward: f64,
    pub total_reward: f64,
    pub mean_mpc_solve_ms: f64,
    pub p99_mpc_solve_ms: f64,
    pub mean_policy_inference_ms: f64,
    pub p99_policy_inference_ms: f64,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

impl MetricsReport {
    pub fn from_log(log: &EpisodeLog) -> Self {
        let sc = &log.scenario;
        let z0 = sc.robot.params().z0;
        let mut vel_err = Vec::with_capacity(log.rows.len());
        let mut speed_err = Vec::with_capacity(log.rows.len());
        let mut peak_yaw_rate = 0.0_f64;
        let mut peak_speed = 0.0_f64;
        for row in &log.rows {
            let t = row[COL_TIME];
            let (v_des, _) = sc.command.at(t);
            let theta = vec3(row, COL_THETA);
            let v = rot_z(theta.z).transpose() * vec3(row, COL_VEL);
            let e = ((v.x - v_des.x).powi(2) + (v.y - v_des.y).powi(2)).sqrt();
            let speed = v.xy().norm();
            vel_err.push(e);
            speed_err.push((speed - v_des.xy().norm()).abs());
            peak_speed = peak_speed.max(speed);
            peak_yaw_rate = peak_yaw_rate.max(row[COL_OMEGA + 2].abs());
        }
        let half = log.duration() * 0.5;
        let steady: Vec<_> = log.rows.iter().filter(|r| r[COL_TIME] >= half).collect();
        let steady_height_error = mean(steady.iter().map(|r| {
            let p = vec3(r, COL_POS);
            p.z - sc.terrain.height(p.x, p.y) - z0
        }))
        .abs();
        let steady_pitch_error = mean(steady.iter().map(|r| r[COL_THETA + 1])).abs();
        let total_reward: f64 = log.rewards.iter().map(|r| r.value).sum();
        Self {
            scenario: sc.name.clone(),
            robot: sc.robot.name().to_string(),
            mode: log.mode.clone(),
            seed: sc.seed,
            config_hash: sc.config_hash(),
            survival_time: log.duration(),
            fall: log.fell(),
            peak_yaw_rate,
            mean_velocity_error: mean(vel_err.iter().copied()),
            max_velocity_error: vel_err.iter().copied().fold(0.0, f64::max),
            mean_speed_error: mean(speed_err.iter().copied()),
            peak_speed,
            foot_trap_events: log.traps.len(),
            steady_height_error,
            steady_pitch_error,
            mean_reward: mean(log.rewards.iter().map(|r| r.value)),
            total_reward,
            mean_mpc_solve_ms: log.timing.mpc_mean_ms,
            p99_mpc_solve_ms: log.timing.mpc_p99_ms,
            mean_policy_inference_ms: log.timing.policy_mean_ms,
            p99_policy_inference_ms: log.timing.policy_p99_ms,
        }
    }

    /// Numeric entries in a fixed order.
    pub fn numeric(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("survival_time", self.survival_time),
            ("fall", self.fall as u8 as f64),
            ("peak_yaw_rate", self.peak_yaw_rate),
            ("mean_velocity_error", self.mean_velocity_error),
            ("max_velocity_error", self.max_velocity_error),
            ("mean_speed_error", self.mean_speed_error),
            ("peak_speed", self.peak_speed),
            ("foot_trap_events", self.foot_trap_events as f64),
            ("steady_height_error", self.steady_height_error),
            ("steady_pitch_error", self.steady_pitch_error),
            ("mean_reward", self.mean_reward),
            ("total_reward", self.total_reward),
            ("mean_mpc_solve_ms", self.mean_mpc_solve_ms),
            ("p99_mpc_solve_ms", self.p99_mpc_solve_ms),
            ("mean_policy_inference_ms", self.mean_policy_inference_ms),
            ("p99_policy_inference_ms", self.p99_policy_inference_ms),
        ]
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "scenario={}", self.scenario);
        let _ = writeln!(s, "robot={}", self.robot);
        let _ = writeln!(s, "mode={}", self.mode);
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "config_hash={}", self.config_hash);
        for (k, v) in self.numeric() {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let map: BTreeMap<&str, &str> = text
            .lines()
            .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
            .map(|l| l.split_once('=').ok_or_else(|| Error::Schema(format!("bad line '{l}'"))))
            .collect::<Result<_>>()?;
        let get = |k: &str| map.get(k).copied().ok_or_else(|| Error::Schema(format!("missing key {k}")));
        let num = |k: &str| -> Result<f64> { get(k)?.parse().map_err(|_| Error::Schema(format!("bad value for {k}"))) };
        Ok(Self {
            scenario: get("scenario")?.to_string(),
            robot: get("robot")?.to_string(),
            mode: get("mode")?.to_string(),
            seed: get("seed")?.parse().map_err(|_| Error::Schema("bad seed".into()))?,
            config_hash: get("config_hash")?.to_string(),
            survival_time: num("survival_time")?,
            fall: num("fall")? != 0.0,
            peak_yaw_rate: num("peak_yaw_rate")?,
            mean_velocity_error: num("mean_velocity_error")?,
            max_velocity_error: num("max_velocity_error")?,
            mean_speed_error: num("mean_speed_error")?,
            peak_speed: num("peak_speed")?,
            foot_trap_events: num("foot_trap_events")? as usize,
            steady_height_error: num("steady_height_error")?,
            steady_pitch_error: num("steady_pitch_error")?,
            mean_reward: num("mean_reward")?,
            total_reward: num("total_reward")?,
            mean_mpc_solve_ms: num("mean_mpc_solve_ms")?,
            p99_mpc_solve_ms: num("p99_mpc_solve_ms")?,
            mean_policy_inference_ms: num("mean_policy_inference_ms")?,
            p99_policy_inference_ms: num("p99_policy_inference_ms")?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_kv()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_kv(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Aligned metric deltas `b - a` plus the largest per-field row difference.
#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub a: MetricsReport,
    pub b: MetricsReport,
    pub deltas: Vec<(&'static str, f64)>,
    /// `None` when the logs have different lengths.
    pub max_row_diff: Option<f64>,
}

impl Comparison {
    pub fn delta(&self, key: &str) -> Option<f64> {
        self.deltas.iter().find(|(k, _)| *k == key).map(|(_, v)| *v)
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "mode_a={}", self.a.mode);
        let _ = writeln!(s, "mode_b={}", self.b.mode);
        let _ = writeln!(s, "config_hash_a={}", self.a.config_hash);
        let _ = writeln!(s, "config_hash_b={}", self.b.config_hash);
        match self.max_row_diff {
            Some(d) => {
                let _ = writeln!(s, "max_row_diff={d}");
            }
            None => {
                let _ = writeln!(s, "max_row_diff=nan");
            }
        }
        for (k, v) in &self.deltas {
            let _ = writeln!(s, "delta_{k}={v}");
        }
        s
    }
}

/// Compares two logs. Logs from different robots or scenarios are rejected.
pub fn compare(a: &EpisodeLog, b: &EpisodeLog) -> Result<Comparison> {
    if a.scenario.robot != b.scenario.robot || a.scenario.name != b.scenario.name {
        return Err(Error::Schema(format!(
            "cannot compare {}/{} with {}/{}",
            a.scenario.name,
            a.scenario.robot.name(),
            b.scenario.name,
            b.scenario.robot.name()
        )));
    }
    let ra = MetricsReport::from_log(a);
    let rb = MetricsReport::from_log(b);
    let deltas = ra.numeric().iter().zip(rb.numeric()).map(|((k, va), (_, vb))| (*k, vb - va)).collect();
    Ok(Comparison { max_row_diff: a.max_row_diff(b), a: ra, b: rb, deltas })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::log::{RewardRecord, Row, LOG_COLUMNS};
    use crate::robot::RobotPreset;
    use crate::scenario::ScenarioConfig;

    fn synthetic(speed: f64) -> EpisodeLog {
        let sc = ScenarioConfig::payload_trot(RobotPreset::A1, 3.0);
        let z0 = sc.robot.params().z0;
        let mut log = EpisodeLog::new("baseline", sc);
        for i in 1..=1000 {
            let mut r: Row = [0.0; LOG_COLUMNS];
            r[COL_TIME] = i as f64 * 1e-3;
            r[COL_POS + 2] = z0 - 0.01;
            r[COL_VEL] = speed;
            r[COL_THETA + 1] = 0.02;
            log.rows.push(r);
        }
        log.rewards.push(RewardRecord { row: 999, value: 2.0 });
        log
    }

    #[test]
    fn report_from_synthetic_log() {
        let r = MetricsReport::from_log(&synthetic(0.0));
        assert_eq!(r.survival_time, 1.0);
        assert!(!r.fall);
        assert!((r.steady_height_error - 0.01).abs() < 1e-12);
        assert!((r.steady_pitch_error - 0.02).abs() < 1e-12);
        // The command ramps 0 -> 0.5 m/s over 2 s; at t the error is 0.25 t.
        assert!((r.max_velocity_error - 0.25).abs() < 1e-12);
        assert_eq!(r.mean_reward, 2.0);
    }

    #[test]
    fn kv_round_trip() {
        let r = MetricsReport::from_log(&synthetic(0.3));
        assert_eq!(MetricsReport::from_kv(&r.to_kv()).unwrap(), r);
        assert!(MetricsReport::from_kv("scenario=x\n").is_err());
    }

    #[test]
    fn self_compare_is_zero() {
        let log = synthetic(0.2);
        let c = compare(&log, &log).unwrap();
        assert!(c.deltas.iter().all(|(_, d)| *d == 0.0));
        assert_eq!(c.max_row_diff, Some(0.0));
        let mut other = synthetic(0.2);
        other.scenario = ScenarioConfig::flat_trot(RobotPreset::A1);
        assert!(compare(&log, &other).is_err());
    }
}
