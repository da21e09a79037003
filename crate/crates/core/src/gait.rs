//! Gait scheduling, heuristic foot placement, Bezier swing trajectories and
//! joint-space swing reflection offsets.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::LegConfig;
use crate::model::GRAVITY_MAGNITUDE;
use crate::robot::NUM_LEGS;

/// Feedback gain on the velocity error in the placement heuristic (s).
pub const PLACEMENT_GAIN: f64 = 0.03;

/// Swing phase after which sensed contact counts as an early touchdown.
pub const EARLY_TOUCHDOWN_PHASE: f64 = 0.75;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaitSchedule {
    pub cycle_time: f64,
    pub duty_factor: f64,
    pub phase_offsets: [f64; NUM_LEGS],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GaitPreset {
    Trot,
    FlyingTrot,
    Stand,
}

impl GaitPreset {
    pub fn schedule(self) -> GaitSchedule {
        match self {
            GaitPreset::Trot => GaitSchedule {
                cycle_time: 0.3,
                duty_factor: 0.5,
                phase_offsets: [0.0, 0.5, 0.5, 0.0],
            },
            GaitPreset::FlyingTrot => GaitSchedule {
                cycle_time: 0.3,
                duty_factor: 0.4,
                phase_offsets: [0.0, 0.5, 0.5, 0.0],
            },
            GaitPreset::Stand => GaitSchedule {
                cycle_time: 0.3,
                duty_factor: 1.0,
                phase_offsets: [0.0; NUM_LEGS],
            },
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            GaitPreset::Trot => "trot",
            GaitPreset::FlyingTrot => "flying_trot",
            GaitPreset::Stand => "stand",
        }
    }
}

impl fmt::Display for GaitPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GaitPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "trot" => Ok(GaitPreset::Trot),
            "flying_trot" => Ok(GaitPreset::FlyingTrot),
            "stand" => Ok(GaitPreset::Stand),
            other => Err(Error::Config(format!("unknown gait '{other}'"))),
        }
    }
}

impl GaitSchedule {
    pub fn stance_time(&self) -> f64 {
        self.cycle_time * self.duty_factor
    }

    pub fn swing_time(&self) -> f64 {
        self.cycle_time * (1.0 - self.duty_factor)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cycle_time > 0.0) || !(self.duty_factor > 0.0 && self.duty_factor <= 1.0) {
            return Err(Error::Config("gait needs cycle_time > 0 and duty in (0, 1]".into()));
        }
        if self.phase_offsets.iter().any(|o| !(0.0..1.0).contains(o)) {
            return Err(Error::Config("gait phase offsets must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LegPhase {
    pub in_contact: bool,
    /// Progress through the current stance or swing, in [0, 1).
    pub phase: f64,
}

pub type PhaseState = [LegPhase; NUM_LEGS];

/// Planned contact state of every leg at time `t`.
pub fn advance_gait(sched: &GaitSchedule, t: f64) -> PhaseState {
    // Whole microseconds, so control ticks that land on a transition see the new phase.
    let us = |x: f64| (x * 1e6).round() as i64;
    let cycle = us(sched.cycle_time).max(1);
    let stance = us(sched.duty_factor * sched.cycle_time);
    let now = us(t);
    std::array::from_fn(|leg| {
        let phi = (now + us(sched.phase_offsets[leg] * sched.cycle_time)).rem_euclid(cycle);
        if phi < stance {
            LegPhase {
                in_contact: true,
                phase: phi as f64 / stance as f64,
            }
        } else {
            LegPhase {
                in_contact: false,
                phase: (phi - stance) as f64 / (cycle - stance) as f64,
            }
        }
    })
}

/// Planned contacts over a horizon, one row per step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GaitTable {
    pub contact: Vec<[bool; NUM_LEGS]>,
}

impl GaitTable {
    pub fn horizon(&self) -> usize {
        self.contact.len()
    }

    pub fn all(horizon: usize, contact: bool) -> Self {
        Self {
            contact: vec![[contact; NUM_LEGS]; horizon],
        }
    }
}

pub fn contact_plan(sched: &GaitSchedule, t: f64, dt: f64, horizon: usize) -> GaitTable {
    GaitTable {
        contact: (0..horizon)
            .map(|i| {
                let ph = advance_gait(sched, t + i as f64 * dt);
                std::array::from_fn(|leg| ph[leg].in_contact)
            })
            .collect(),
    }
}

/// Touchdown target from hip position, velocity feedback and stance time.
///
/// `p = p_hip + T/2·v + k·(v - v_cmd) + ½·sqrt(z0/|g|)·(v × ω_cmd)`, with the
/// vertical component projected to the terrain frame (returned z is 0).
pub fn foot_placement_heuristic(
    hip_world: &Vector3<f64>,
    v: &Vector3<f64>,
    v_cmd: &Vector3<f64>,
    yaw_rate_cmd: f64,
    t_stance: f64,
    z0: f64,
) -> Vector3<f64> {
    let omega_cmd = Vector3::new(0.0, 0.0, yaw_rate_cmd);
    let mut p = hip_world
        + v * (t_stance / 2.0)
        + (v - v_cmd) * PLACEMENT_GAIN
        + v.cross(&omega_cmd) * (0.5 * (z0 / GRAVITY_MAGNITUDE).sqrt());
    p.z = 0.0;
    p
}

fn bezier(p: [f64; 4], u: f64) -> f64 {
    let w = 1.0 - u;
    w * w * w * p[0] + 3.0 * w * w * u * p[1] + 3.0 * w * u * u * p[2] + u * u * u * p[3]
}

fn bezier_deriv(p: [f64; 4], u: f64) -> f64 {
    let w = 1.0 - u;
    3.0 * (w * w * (p[1] - p[0]) + 2.0 * w * u * (p[2] - p[1]) + u * u * (p[3] - p[2]))
}

/// Cubic Bezier swing: eased in xy, two eased segments in z through an apex.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SwingPlan {
    /// Liftoff position. After a retarget the xy part is the virtual start
    /// that keeps the curve continuous.
    pub start: Vector3<f64>,
    pub target: Vector3<f64>,
    /// Apex clearance above the higher endpoint (m).
    pub height: f64,
    /// Swing duration (s).
    pub duration: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SwingSample {
    pub p_f: Vector3<f64>,
    pub v_f: Vector3<f64>,
}

impl SwingPlan {
    pub fn new(start: Vector3<f64>, target: Vector3<f64>, height: f64, duration: f64) -> Self {
        Self { start, target, height, duration }
    }

    pub fn apex_z(&self) -> f64 {
        self.start.z.max(self.target.z) + self.height
    }

    /// Control polygons `(x, y, z-up, z-down)`.
    pub fn control_points(&self) -> [[f64; 4]; 4] {
        let (s, t) = (self.start, self.target);
        let apex = self.apex_z();
        [
            [s.x, s.x, t.x, t.x],
            [s.y, s.y, t.y, t.y],
            [s.z, s.z, apex, apex],
            [apex, apex, t.z, t.z],
        ]
    }

    /// Moves the touchdown target without a position jump at `phase`.
    ///
    /// Returns false (and keeps the old target) when the swing is too close
    /// to touchdown for a continuous retarget.
    pub fn retarget(&mut self, target_xy: Vector2<f64>, phase: f64) -> bool {
        let u = phase.clamp(0.0, 1.0);
        let b = u * u * (3.0 - 2.0 * u);
        if 1.0 - b < 1e-3 {
            return false;
        }
        let cp = self.control_points();
        let cur = Vector2::new(bezier(cp[0], u), bezier(cp[1], u));
        let start = (cur - target_xy * b) / (1.0 - b);
        self.start.x = start.x;
        self.start.y = start.y;
        self.target.x = target_xy.x;
        self.target.y = target_xy.y;
        true
    }
}

/// Position and velocity along the swing at `phase` ∈ [0, 1].
pub fn swing_position(plan: &SwingPlan, phase: f64) -> SwingSample {
    let u = phase.clamp(0.0, 1.0);
    let cp = plan.control_points();
    let (zcp, zu) = if u <= 0.5 { (cp[2], 2.0 * u) } else { (cp[3], 2.0 * u - 1.0) };
    let p_f = Vector3::new(bezier(cp[0], u), bezier(cp[1], u), bezier(zcp, zu));
    let scale = 1.0 / plan.duration;
    let v_f = Vector3::new(
        bezier_deriv(cp[0], u) * scale,
        bezier_deriv(cp[1], u) * scale,
        bezier_deriv(zcp, zu) * 2.0 * scale,
    );
    SwingSample { p_f, v_f }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ReflectionFlags {
    /// Some |dq| exceeded the action bound.
    pub offset_clamped: bool,
    /// The offset pushed a joint past its limit.
    pub limit_clamped: bool,
}

/// `q_ik + dq`, with `dq` bounded and the sum clamped to the joint limits.
pub fn apply_reflection(
    cfg: &LegConfig,
    q_ik: &Vector3<f64>,
    dq: &Vector3<f64>,
    bound: f64,
) -> (Vector3<f64>, ReflectionFlags) {
    let mut flags = ReflectionFlags::default();
    let bounded = dq.map(|d| d.clamp(-bound, bound));
    flags.offset_clamped = bounded != *dq;
    let (q, clamped) = cfg.clamp_to_limits(&(q_ik + bounded));
    flags.limit_clamped = clamped;
    (q, flags)
}

/// How the low-level controller treats a leg this tick.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LegMode {
    Stance,
    Swing,
    /// Touched down late in swing; promoted to stance.
    EarlyContact,
    /// Scheduled stance without sensed contact; hold position.
    LateContact,
}

/// Event-driven contact logic on top of the periodic schedule.
#[derive(Clone, Debug)]
pub struct GaitScheduler {
    pub schedule: GaitSchedule,
    early: [bool; NUM_LEGS],
    touched: [bool; NUM_LEGS],
}

impl GaitScheduler {
    pub fn new(schedule: GaitSchedule) -> Self {
        Self {
            schedule,
            early: [false; NUM_LEGS],
            touched: [false; NUM_LEGS],
        }
    }

    pub fn update(&mut self, t: f64, sensed: [bool; NUM_LEGS]) -> (PhaseState, [LegMode; NUM_LEGS]) {
        let planned = advance_gait(&self.schedule, t);
        let modes = std::array::from_fn(|leg| {
            let ph = planned[leg];
            if ph.in_contact {
                self.early[leg] = false;
                if sensed[leg] {
                    self.touched[leg] = true;
                }
                if self.touched[leg] {
                    LegMode::Stance
                } else {
                    LegMode::LateContact
                }
            } else {
                self.touched[leg] = false;
                if self.early[leg] || (sensed[leg] && ph.phase > EARLY_TOUCHDOWN_PHASE) {
                    self.early[leg] = true;
                    LegMode::EarlyContact
                } else {
                    LegMode::Swing
                }
            }
        });
        (planned, modes)
    }
}
