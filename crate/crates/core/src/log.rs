//! Episode log: one CSV row per physics step plus a `#` preamble carrying
//! the sampled scenario, per-tick rewards, foot-trap events and timings.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::robot::{LEG_NAMES, NUM_LEGS};
use crate::scenario::ScenarioConfig;

pub const LOG_COLUMNS: usize = 88;
pub const LOG_VERSION: u32 = 1;

pub const COL_TIME: usize = 0;
pub const COL_THETA: usize = 1;
pub const COL_POS: usize = 4;
pub const COL_OMEGA: usize = 7;
pub const COL_VEL: usize = 10;
pub const COL_Q: usize = 13;
pub const COL_QD: usize = 25;
pub const COL_TAU: usize = 37;
pub const COL_FORCE: usize = 49;
pub const COL_S_PHI: usize = 61;
pub const COL_S_ACTUAL: usize = 65;
pub const COL_DALPHA: usize = 69;
pub const COL_DA: usize = 72;
pub const COL_DQ: usize = 75;
pub const COL_FALL: usize = 87;

pub type Row = [f64; LOG_COLUMNS];

pub fn column_names() -> Vec<String> {
    let mut c: Vec<String> = vec!["time".into()];
    let xyz = ["x", "y", "z"];
    let joints = ["abd", "hip", "knee"];
    c.extend(["roll", "pitch", "yaw"].map(String::from));
    c.extend(xyz.map(|a| format!("p_{a}")));
    c.extend(xyz.map(|a| format!("omega_{a}")));
    c.extend(xyz.map(|a| format!("v_{a}")));
    for prefix in ["q", "qd", "tau"] {
        for leg in LEG_NAMES {
            c.extend(joints.map(|j| format!("{prefix}_{leg}_{j}")));
        }
    }
    for leg in LEG_NAMES {
        c.extend(xyz.map(|a| format!("f_{leg}_{a}")));
    }
    for prefix in ["s_phi", "s_actual"] {
        c.extend(LEG_NAMES.map(|leg| format!("{prefix}_{leg}")));
    }
    c.extend(xyz.map(|a| format!("dalpha_{a}")));
    c.extend(xyz.map(|a| format!("da_{a}")));
    for leg in LEG_NAMES {
        c.extend(joints.map(|j| format!("dq_{leg}_{j}")));
    }
    c.push("fall".into());
    c
}

/// Host timing summary; excluded from determinism comparisons.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Timing {
    pub ticks: usize,
    pub mpc_mean_ms: f64,
    pub mpc_p50_ms: f64,
    pub mpc_p99_ms: f64,
    pub policy_mean_ms: f64,
    pub policy_p50_ms: f64,
    pub policy_p99_ms: f64,
}

pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let idx = ((sorted.len() - 1) as f64 * p).round() as usize;
    sorted[idx]
}

impl Timing {
    pub fn from_samples(mpc_ms: &[f64], policy_ms: &[f64]) -> Self {
        let stats = |v: &[f64]| {
            let mut s = v.to_vec();
            s.sort_by(f64::total_cmp);
            let mean = if s.is_empty() { 0.0 } else { s.iter().sum::<f64>() / s.len() as f64 };
            (mean, percentile(&s, 0.5), percentile(&s, 0.99))
        };
        let (mpc_mean_ms, mpc_p50_ms, mpc_p99_ms) = stats(mpc_ms);
        let (policy_mean_ms, policy_p50_ms, policy_p99_ms) = stats(policy_ms);
        Self {
            ticks: mpc_ms.len(),
            mpc_mean_ms,
            mpc_p50_ms,
            mpc_p99_ms,
            policy_mean_ms,
            policy_p50_ms,
            policy_p99_ms,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrapEvent {
    pub time: f64,
    pub leg: usize,
}

/// Reward for the control interval ending at `row`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardRecord {
    pub row: usize,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeLog {
    pub mode: String,
    /// The concrete (already sampled) scenario.
    pub scenario: ScenarioConfig,
    pub rows: Vec<Row>,
    pub rewards: Vec<RewardRecord>,
    pub traps: Vec<TrapEvent>,
    pub fault: Option<String>,
    pub timing: Timing,
}

fn parse_f64(s: &str, what: &str) -> Result<f64> {
    s.trim().parse().map_err(|_| Error::Schema(format!("bad {what} value '{s}'")))
}

impl EpisodeLog {
    pub fn new(mode: &str, scenario: ScenarioConfig) -> Self {
        Self {
            mode: mode.to_string(),
            scenario,
            rows: Vec::new(),
            rewards: Vec::new(),
            traps: Vec::new(),
            fault: None,
            timing: Timing::default(),
        }
    }

    pub fn fell(&self) -> bool {
        self.fault.is_some() || self.rows.last().is_some_and(|r| r[COL_FALL] != 0.0)
    }

    pub fn duration(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r[COL_TIME])
    }

    /// Everything except the mode label and host timing.
    pub fn same_trajectory(&self, other: &Self) -> bool {
        self.scenario == other.scenario
            && self.rows == other.rows
            && self.rewards == other.rewards
            && self.traps == other.traps
            && self.fault == other.fault
    }

    /// Largest absolute per-field difference between the rows of two logs.
    pub fn max_row_diff(&self, other: &Self) -> Option<f64> {
        if self.rows.len() != other.rows.len() {
            return None;
        }
        let mut worst = 0.0_f64;
        for (a, b) in self.rows.iter().zip(&other.rows) {
            for k in 0..LOG_COLUMNS {
                let d = (a[k] - b[k]).abs();
                if d.is_nan() {
                    return Some(f64::INFINITY);
                }
                worst = worst.max(d);
            }
        }
        Some(worst)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let mut head = String::new();
        let _ = writeln!(head, "# version {LOG_VERSION}");
        let _ = writeln!(head, "# mode {}", self.mode);
        for line in self.scenario.to_toml()?.lines() {
            let _ = writeln!(head, "# scenario {line}");
        }
        for r in &self.rewards {
            let _ = writeln!(head, "# reward {} {}", r.row, r.value);
        }
        for t in &self.traps {
            let _ = writeln!(head, "# trap {} {}", t.time, t.leg);
        }
        if let Some(f) = &self.fault {
            let _ = writeln!(head, "# fault {}", f.replace('\n', " "));
        }
        let t = &self.timing;
        let _ = writeln!(
            head,
            "# timing {} {} {} {} {} {} {}",
            t.ticks, t.mpc_mean_ms, t.mpc_p50_ms, t.mpc_p99_ms, t.policy_mean_ms, t.policy_p50_ms, t.policy_p99_ms
        );
        let _ = writeln!(head, "{}", column_names().join(","));
        let io = |e| Error::io("<episode log>", e);
        w.write_all(head.as_bytes()).map_err(io)?;
        let mut line = String::with_capacity(LOG_COLUMNS * 12);
        for row in &self.rows {
            line.clear();
            for (k, v) in row.iter().enumerate() {
                if k > 0 {
                    line.push(',');
                }
                let _ = write!(line, "{v}");
            }
            line.push('\n');
            w.write_all(line.as_bytes()).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(BufWriter::new(f))
            .map_err(|e| match e {
                Error::Io { source, .. } => Error::io(path, source),
                other => other,
            })
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut mode = None;
        let mut toml = String::new();
        let mut rewards = Vec::new();
        let mut traps = Vec::new();
        let mut fault = None;
        let mut timing = Timing::default();
        let mut header_seen = false;
        let mut rows = Vec::new();
        let expected = column_names();
        for line in r.lines() {
            let line = line.map_err(|e| Error::io("<episode log>", e))?;
            if let Some(rest) = line.strip_prefix("# ") {
                let (key, val) = rest.split_once(' ').unwrap_or((rest, ""));
                match key {
                    "version" => {
                        if val.trim() != LOG_VERSION.to_string() {
                            return Err(Error::Schema(format!("unsupported log version {val}")));
                        }
                    }
                    "mode" => mode = Some(val.to_string()),
                    "scenario" => {
                        toml.push_str(val);
                        toml.push('\n');
                    }
                    "reward" => {
                        let (a, b) = val.split_once(' ').ok_or_else(|| Error::Schema("bad reward line".into()))?;
                        rewards.push(RewardRecord {
                            row: a.parse().map_err(|_| Error::Schema("bad reward row".into()))?,
                            value: parse_f64(b, "reward")?,
                        });
                    }
                    "trap" => {
                        let (a, b) = val.split_once(' ').ok_or_else(|| Error::Schema("bad trap line".into()))?;
                        traps.push(TrapEvent {
                            time: parse_f64(a, "trap time")?,
                            leg: b.trim().parse().map_err(|_| Error::Schema("bad trap leg".into()))?,
                        });
                    }
                    "fault" => fault = Some(val.to_string()),
                    "timing" => {
                        let v: Vec<&str> = val.split_whitespace().collect();
                        if v.len() != 7 {
                            return Err(Error::Schema("bad timing line".into()));
                        }
                        timing = Timing {
                            ticks: v[0].parse().map_err(|_| Error::Schema("bad tick count".into()))?,
                            mpc_mean_ms: parse_f64(v[1], "timing")?,
                            mpc_p50_ms: parse_f64(v[2], "timing")?,
                            mpc_p99_ms: parse_f64(v[3], "timing")?,
                            policy_mean_ms: parse_f64(v[4], "timing")?,
                            policy_p50_ms: parse_f64(v[5], "timing")?,
                            policy_p99_ms: parse_f64(v[6], "timing")?,
                        };
                    }
                    _ => {}
                }
                continue;
            }
            if !header_seen {
                let cols: Vec<&str> = line.split(',').collect();
                if cols.len() != LOG_COLUMNS || cols.iter().zip(&expected).any(|(a, b)| a != b) {
                    return Err(Error::Schema(format!("expected {LOG_COLUMNS} known columns, got {}", cols.len())));
                }
                header_seen = true;
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let mut row = [0.0; LOG_COLUMNS];
            let mut n = 0;
            for (k, field) in line.split(',').enumerate() {
                if k >= LOG_COLUMNS {
                    return Err(Error::Schema("too many fields in row".into()));
                }
                row[k] = parse_f64(field, "row")?;
                n += 1;
            }
            if n != LOG_COLUMNS {
                return Err(Error::Schema(format!("row has {n} fields")));
            }
            rows.push(row);
        }
        if !header_seen {
            return Err(Error::Schema("missing column header".into()));
        }
        let mode = mode.ok_or_else(|| Error::Schema("missing mode".into()))?;
        let scenario = ScenarioConfig::from_toml(&toml)?;
        Ok(Self { mode, scenario, rows, rewards, traps, fault, timing })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(f))
    }
}

/// Per-leg slice helpers over a log row.
pub fn leg3(row: &Row, base: usize, leg: usize) -> nalgebra::Vector3<f64> {
    debug_assert!(leg < NUM_LEGS);
    nalgebra::Vector3::new(row[base + 3 * leg], row[base + 3 * leg + 1], row[base + 3 * leg + 2])
}

pub fn vec3(row: &Row, base: usize) -> nalgebra::Vector3<f64> {
    nalgebra::Vector3::new(row[base], row[base + 1], row[base + 2])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::robot::RobotPreset;

    #[test]
    fn column_layout() {
        let c = column_names();
        assert_eq!(c.len(), LOG_COLUMNS);
        assert_eq!(c[COL_Q], "q_FR_abd");
        assert_eq!(c[COL_QD], "qd_FR_abd");
        assert_eq!(c[COL_TAU], "tau_FR_abd");
        assert_eq!(c[COL_FORCE], "f_FR_x");
        assert_eq!(c[COL_S_PHI], "s_phi_FR");
        assert_eq!(c[COL_S_ACTUAL], "s_actual_FR");
        assert_eq!(c[COL_DALPHA], "dalpha_x");
        assert_eq!(c[COL_DA], "da_x");
        assert_eq!(c[COL_DQ], "dq_FR_abd");
        assert_eq!(c[COL_FALL], "fall");
        let mut uniq = c.clone();
        uniq.sort();
        uniq.dedup();
        assert_eq!(uniq.len(), LOG_COLUMNS);
    }

    fn sample_log() -> EpisodeLog {
        let mut log = EpisodeLog::new("baseline", ScenarioConfig::uncertainty(RobotPreset::A1).sample(3));
        for i in 0..5 {
            let mut row = [0.0; LOG_COLUMNS];
            for (k, v) in row.iter_mut().enumerate() {
                *v = ((i * 97 + k) as f64 * 0.37).sin() / 3.0;
            }
            log.rows.push(row);
        }
        log.rewards.push(RewardRecord { row: 4, value: 0.1 + 0.2 });
        log.traps.push(TrapEvent { time: 0.003, leg: 2 });
        log.timing = Timing::from_samples(&[1.0, 2.0, 3.0], &[0.1]);
        log
    }

    #[test]
    fn round_trip_is_exact() {
        let log = sample_log();
        let mut buf = Vec::new();
        log.write_to(&mut buf).unwrap();
        let back = EpisodeLog::read_from(&buf[..]).unwrap();
        assert_eq!(back, log);
    }

    #[test]
    fn rejects_bad_schema() {
        let log = sample_log();
        let mut buf = Vec::new();
        log.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let short = text.replace(",fall\n", "\n");
        assert!(matches!(EpisodeLog::read_from(short.as_bytes()), Err(Error::Schema(_))));
        let renamed = text.replace("q_FR_abd", "q_FR_hipx");
        assert!(EpisodeLog::read_from(renamed.as_bytes()).is_err());
    }

    #[test]
    fn timing_percentiles() {
        let t = Timing::from_samples(&(1..=100).map(f64::from).collect::<Vec<_>>(), &[]);
        assert_eq!(t.ticks, 100);
        assert!((t.mpc_mean_ms - 50.5).abs() < 1e-12);
        assert_eq!(t.mpc_p99_ms, 99.0);
        assert_eq!(t.policy_mean_ms, 0.0);
    }
}
