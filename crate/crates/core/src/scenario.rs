//! Scenario configuration: robot, gait, terrain, command ramps, disturbances.
//!
//! Scenarios serialize to TOML and round-trip losslessly. A scenario with a
//! `randomization` block is a distribution; [`ScenarioConfig::sample`] draws a
//! concrete episode from it.

use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gait::GaitPreset;
use crate::policy::{BoundsPreset, RewardWeights};
use crate::robot::RobotPreset;
use crate::sim::{Disturbance, Payload, WrenchPulse};
use crate::terrain::Terrain;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommandKnot {
    pub t: f64,
    pub vx: f64,
    pub vy: f64,
    pub wz: f64,
}

/// Piecewise-linear body-frame velocity and yaw-rate command; held past the last knot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommandProfile {
    pub knots: Vec<CommandKnot>,
}

impl CommandProfile {
    pub fn constant(vx: f64, vy: f64, wz: f64) -> Self {
        Self {
            knots: vec![CommandKnot { t: 0.0, vx, vy, wz }],
        }
    }

    /// Zero at `t = 0`, linear to the target at `ramp`, then held.
    pub fn ramp(vx: f64, vy: f64, wz: f64, ramp: f64) -> Self {
        Self {
            knots: vec![
                CommandKnot { t: 0.0, vx: 0.0, vy: 0.0, wz: 0.0 },
                CommandKnot { t: ramp, vx, vy, wz },
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.knots.is_empty() {
            return Err(Error::Config("command profile needs at least one knot".into()));
        }
        if self.knots.windows(2).any(|w| !(w[1].t > w[0].t)) {
            return Err(Error::Config("command knot times must increase strictly".into()));
        }
        if self.knots.iter().any(|k| ![k.t, k.vx, k.vy, k.wz].iter().all(|x| x.is_finite())) {
            return Err(Error::Config("command knots must be finite".into()));
        }
        Ok(())
    }

    /// `(v_des body frame, yaw rate)` at time `t`.
    pub fn at(&self, t: f64) -> (Vector3<f64>, f64) {
        let k = &self.knots;
        let pick = |a: &CommandKnot| (Vector3::new(a.vx, a.vy, 0.0), a.wz);
        if t <= k[0].t {
            return pick(&k[0]);
        }
        for w in k.windows(2) {
            if t <= w[1].t {
                let s = (t - w[0].t) / (w[1].t - w[0].t);
                let lerp = |a: f64, b: f64| a + (b - a) * s;
                return (
                    Vector3::new(lerp(w[0].vx, w[1].vx), lerp(w[0].vy, w[1].vy), 0.0),
                    lerp(w[0].wz, w[1].wz),
                );
            }
        }
        pick(k.last().expect("non-empty"))
    }

    /// Compact `t:vx:vy:wz;...` form used in log headers.
    pub fn to_compact(&self) -> String {
        self.knots
            .iter()
            .map(|k| format!("{}:{}:{}:{}", k.t, k.vx, k.vy, k.wz))
            .collect::<Vec<_>>()
            .join(";")
    }

    pub fn from_compact(s: &str) -> Result<Self> {
        let knots = s
            .split(';')
            .map(|part| {
                let v: Vec<f64> = part
                    .split(':')
                    .map(|x| x.parse::<f64>().map_err(|e| Error::Schema(format!("command knot '{part}': {e}"))))
                    .collect::<Result<_>>()?;
                match v.as_slice() {
                    [t, vx, vy, wz] => Ok(CommandKnot { t: *t, vx: *vx, vy: *vy, wz: *wz }),
                    _ => Err(Error::Schema(format!("command knot '{part}' needs 4 fields"))),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let p = Self { knots };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommandRanges {
    pub vx: [f64; 2],
    pub vy: [f64; 2],
    pub wz: [f64; 2],
    /// Time to ramp from rest to the sampled command (s).
    pub ramp: f64,
}

/// Per-episode randomization. Every range is `[lo, hi]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Randomization {
    pub commands: Option<CommandRanges>,
    pub payload_mass: Option<[f64; 2]>,
    /// Max |x|, |y| payload offset from the base origin (m).
    #[serde(default)]
    pub payload_offset: f64,
    #[serde(default)]
    pub wrench_pulses: u32,
    #[serde(default)]
    pub wrench_force: f64,
    #[serde(default)]
    pub wrench_moment: f64,
    #[serde(default = "default_pulse")]
    pub pulse_duration: [f64; 2],
    /// Re-seed block terrain per episode.
    #[serde(default)]
    pub terrain_seed: bool,
    /// Range for the first stair riser position (m).
    #[serde(default)]
    pub stair_start: Option<[f64; 2]>,
}

impl Randomization {
    /// No randomization at all; a base for struct-update syntax.
    pub fn none() -> Self {
        Self {
            commands: None,
            payload_mass: None,
            payload_offset: 0.0,
            wrench_pulses: 0,
            wrench_force: 0.0,
            wrench_moment: 0.0,
            pulse_duration: default_pulse(),
            terrain_seed: false,
            stair_start: None,
        }
    }
}

fn default_pulse() -> [f64; 2] {
    [0.2, 0.6]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub robot: RobotPreset,
    pub gait: GaitPreset,
    pub terrain: Terrain,
    pub command: CommandProfile,
    #[serde(default)]
    pub disturbance: Disturbance,
    pub randomization: Option<Randomization>,
    pub bounds: BoundsPreset,
    pub duration: f64,
    pub seed: u64,
    pub swing_height: f64,
    #[serde(default)]
    pub observation_noise: bool,
    pub reward: RewardWeights,
}

fn sample_range<R: Rng>(rng: &mut R, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.random_range(r[0]..=r[1])
    } else {
        r[0]
    }
}

impl ScenarioConfig {
    fn base(name: &str, robot: RobotPreset, command: CommandProfile, duration: f64) -> Self {
        Self {
            name: name.to_string(),
            robot,
            gait: GaitPreset::Trot,
            terrain: Terrain::Flat,
            command,
            disturbance: Disturbance::default(),
            randomization: None,
            bounds: BoundsPreset::Uncertainty,
            duration,
            seed: 0,
            swing_height: crate::controller::DEFAULT_SWING_HEIGHT,
            observation_noise: false,
            reward: RewardWeights::for_robot(robot),
        }
    }

    pub fn stand(robot: RobotPreset) -> Self {
        let mut s = Self::base("stand", robot, CommandProfile::constant(0.0, 0.0, 0.0), 2.0);
        s.gait = GaitPreset::Stand;
        s
    }

    /// Flat-ground trot ramping to 1 m/s.
    pub fn flat_trot(robot: RobotPreset) -> Self {
        Self::base("flat_trot", robot, CommandProfile::ramp(1.0, 0.0, 0.0, 3.0), 10.0)
    }

    pub fn turn_in_place(robot: RobotPreset, rate: f64) -> Self {
        let mut s = Self::base("turn_in_place", robot, CommandProfile::ramp(0.0, 0.0, rate, 6.0), 8.0);
        s.bounds = BoundsPreset::HighSpeed;
        s
    }

    pub fn run(robot: RobotPreset) -> Self {
        let mut s = Self::base("run", robot, CommandProfile::ramp(3.5, 0.0, 0.0, 6.0), 8.0);
        s.gait = GaitPreset::FlyingTrot;
        s.bounds = BoundsPreset::HighSpeed;
        s
    }

    pub fn run_then_steer(robot: RobotPreset) -> Self {
        let command = CommandProfile {
            knots: vec![
                CommandKnot { t: 0.0, vx: 0.0, vy: 0.0, wz: 0.0 },
                CommandKnot { t: 4.0, vx: 2.5, vy: 0.0, wz: 0.0 },
                CommandKnot { t: 5.0, vx: 2.5, vy: 0.0, wz: 0.0 },
                CommandKnot { t: 5.5, vx: 2.5, vy: 0.0, wz: 0.5 },
            ],
        };
        let mut s = Self::base("run_then_steer", robot, command, 8.0);
        s.gait = GaitPreset::FlyingTrot;
        s.bounds = BoundsPreset::HighSpeed;
        s
    }

    pub fn payload_trot(robot: RobotPreset, mass: f64) -> Self {
        let mut s = Self::base("payload_trot", robot, CommandProfile::ramp(0.5, 0.0, 0.0, 2.0), 8.0);
        s.disturbance.payload = Some(Payload { mass, offset: Vector3::zeros() });
        s
    }

    pub fn stairs(robot: RobotPreset) -> Self {
        let mut s = Self::base("stairs", robot, CommandProfile::ramp(0.4, 0.0, 0.0, 1.0), 6.0);
        s.terrain = Terrain::stairs(0.6);
        s.bounds = BoundsPreset::DiscreteTerrain;
        s.randomization = Some(Randomization {
            stair_start: Some([0.5, 0.7]),
            ..Randomization::none()
        });
        s
    }

    pub fn blocks(robot: RobotPreset) -> Self {
        let mut s = Self::base("blocks", robot, CommandProfile::ramp(0.4, 0.0, 0.0, 1.0), 8.0);
        s.terrain = Terrain::blocks(0.6, 1);
        s.bounds = BoundsPreset::DiscreteTerrain;
        s
    }

    /// Training distribution: random commands, payload and wrench pulses on flat ground.
    pub fn uncertainty(robot: RobotPreset) -> Self {
        let mut s = Self::base("uncertainty", robot, CommandProfile::constant(0.0, 0.0, 0.0), 6.0);
        s.randomization = Some(Randomization {
            commands: Some(CommandRanges {
                vx: [-1.0, 1.0],
                vy: [-0.5, 0.5],
                wz: [-2.0, 2.0],
                ramp: 1.0,
            }),
            payload_mass: Some([0.0, 3.0]),
            payload_offset: 0.05,
            wrench_pulses: 2,
            wrench_force: 30.0,
            wrench_moment: 3.0,
            ..Randomization::none()
        });
        s
    }

    pub fn high_speed(robot: RobotPreset) -> Self {
        let mut s = Self::run(robot);
        s.name = "high_speed".into();
        s.command = CommandProfile::constant(0.0, 0.0, 0.0);
        s.randomization = Some(Randomization {
            commands: Some(CommandRanges { vx: [0.0, 3.5], vy: [0.0, 0.0], wz: [-3.0, 3.0], ramp: 3.0 }),
            ..Randomization::none()
        });
        s
    }

    pub fn discrete_terrain(robot: RobotPreset) -> Self {
        let mut s = Self::blocks(robot);
        s.name = "discrete_terrain".into();
        s.randomization = Some(Randomization {
            commands: Some(CommandRanges { vx: [0.2, 0.6], vy: [0.0, 0.0], wz: [0.0, 0.0], ramp: 1.0 }),
            terrain_seed: true,
            ..Randomization::none()
        });
        s
    }

    pub fn preset(name: &str, robot: RobotPreset) -> Result<Self> {
        Ok(match name {
            "stand" => Self::stand(robot),
            "flat_trot" => Self::flat_trot(robot),
            "turn_in_place" => Self::turn_in_place(robot, 7.0),
            "run" => Self::run(robot),
            "run_then_steer" => Self::run_then_steer(robot),
            "payload_trot" => Self::payload_trot(robot, 10.0),
            "stairs" => Self::stairs(robot),
            "blocks" => Self::blocks(robot),
            "uncertainty" => Self::uncertainty(robot),
            "high_speed" => Self::high_speed(robot),
            "discrete_terrain" => Self::discrete_terrain(robot),
            other => return Err(Error::Config(format!("unknown scenario preset '{other}'"))),
        })
    }

    pub const PRESETS: [&'static str; 11] = [
        "stand",
        "flat_trot",
        "turn_in_place",
        "run",
        "run_then_steer",
        "payload_trot",
        "stairs",
        "blocks",
        "uncertainty",
        "high_speed",
        "discrete_terrain",
    ];

    /// Switches robot and the robot-dependent reward height.
    pub fn with_robot(mut self, robot: RobotPreset) -> Self {
        self.robot = robot;
        self.reward.z_des = robot.params().z0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.command.validate()?;
        self.terrain.validate()?;
        self.disturbance.validate()?;
        self.gait.schedule().validate()?;
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::Config("duration must be positive".into()));
        }
        if !(self.swing_height >= 0.0) {
            return Err(Error::Config("swing height must be >= 0".into()));
        }
        if self.seed > i64::MAX as u64 {
            return Err(Error::Config("seed must fit in a signed 64-bit integer".into()));
        }
        Ok(())
    }

    /// Concrete episode drawn from the randomization block (identity without one).
    pub fn sample(&self, seed: u64) -> Self {
        let mut out = self.clone();
        out.seed = seed;
        let Some(rnd) = &self.randomization else {
            return out;
        };
        out.randomization = None;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5ce4_a710);
        if let Some(c) = &rnd.commands {
            let vx = sample_range(&mut rng, c.vx);
            let vy = sample_range(&mut rng, c.vy);
            let wz = sample_range(&mut rng, c.wz);
            out.command = CommandProfile::ramp(vx, vy, wz, c.ramp);
        }
        if let Some(m) = rnd.payload_mass {
            let mass = sample_range(&mut rng, m);
            let o = rnd.payload_offset;
            let offset = Vector3::new(sample_range(&mut rng, [-o, o]), sample_range(&mut rng, [-o, o]), 0.0);
            out.disturbance.payload = Some(Payload { mass, offset });
        }
        for _ in 0..rnd.wrench_pulses {
            let dir = |rng: &mut ChaCha8Rng| {
                Vector3::new(rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0))
            };
            let start = rng.random_range(0.5..(self.duration - 0.5).max(0.6));
            let duration = sample_range(&mut rng, rnd.pulse_duration);
            let force = dir(&mut rng) * rnd.wrench_force;
            let moment = dir(&mut rng) * rnd.wrench_moment;
            out.disturbance.wrenches.push(WrenchPulse { force, moment, start, duration });
        }
        if rnd.terrain_seed {
            if let Terrain::Blocks { seed: s, .. } = &mut out.terrain {
                *s = rng.random_range(0..u32::MAX as u64);
            }
        }
        if let (Some(r), Terrain::Stairs { start_x, .. }) = (rnd.stair_start, &mut out.terrain) {
            *start_x = sample_range(&mut rng, r);
        }
        out
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("serializing scenario: {e}")))
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(format!("parsing scenario: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }

    /// SHA-256 of the canonical TOML form.
    pub fn config_hash(&self) -> String {
        let text = self.to_toml().unwrap_or_default();
        Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ramp_interpolates_and_holds() {
        let p = CommandProfile::ramp(1.0, 0.0, 2.0, 2.0);
        assert_eq!(p.at(-1.0).0, Vector3::zeros());
        let (v, w) = p.at(1.0);
        assert!((v.x - 0.5).abs() < 1e-15 && (w - 1.0).abs() < 1e-15);
        assert_eq!(p.at(10.0), (Vector3::new(1.0, 0.0, 0.0), 2.0));
    }

    #[test]
    fn compact_round_trip() {
        let p = ScenarioConfig::run_then_steer(RobotPreset::A1).command;
        assert_eq!(CommandProfile::from_compact(&p.to_compact()).unwrap(), p);
        assert!(CommandProfile::from_compact("1:2").is_err());
    }

    #[test]
    fn presets_round_trip_through_toml() {
        for name in ScenarioConfig::PRESETS {
            for robot in RobotPreset::ALL {
                let mut s = ScenarioConfig::preset(name, robot).unwrap();
                s.seed = 17;
                let back = ScenarioConfig::from_toml(&s.to_toml().unwrap()).unwrap();
                assert_eq!(back, s, "{name}");
                assert_eq!(back.config_hash(), s.config_hash());
            }
        }
        assert!(ScenarioConfig::preset("nope", RobotPreset::A1).is_err());
    }

    #[test]
    fn sampled_episodes_respect_ranges() {
        let s = ScenarioConfig::uncertainty(RobotPreset::A1);
        for seed in 0..200 {
            let e = s.sample(seed);
            assert!(e.randomization.is_none());
            let (v, w) = e.command.at(100.0);
            assert!((-1.0..=1.0).contains(&v.x) && (-0.5..=0.5).contains(&v.y) && (-2.0..=2.0).contains(&w));
            let m = e.disturbance.payload.unwrap().mass;
            assert!((0.0..=3.0).contains(&m));
            assert_eq!(e.disturbance.wrenches.len(), 2);
            assert_eq!(e, s.sample(seed));
        }
        assert_ne!(s.sample(1), s.sample(2));
    }

    #[test]
    fn hash_tracks_content() {
        let a = ScenarioConfig::flat_trot(RobotPreset::A1);
        let mut b = a.clone();
        assert_eq!(a.config_hash(), b.config_hash());
        b.duration = 9.0;
        assert_ne!(a.config_hash(), b.config_hash());
        assert_eq!(a.config_hash().len(), 64);
    }
}
