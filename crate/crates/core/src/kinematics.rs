//! Closed-form kinematics for a 3-DOF quadruped leg.
//!
//! Joint order is (abduction, hip pitch, knee). Positions are expressed in the
//! hip frame, which is parallel to the body frame: x forward, y left, z up.
//! With all joints at zero the leg hangs straight down; a negative knee angle
//! folds the shank forward, so the knee itself points backward.

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

/// Geometry and limits of one leg.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LegConfig {
    /// Lateral offset from the abduction axis to the thigh plane (m).
    pub l_abd: f64,
    pub l_thigh: f64,
    pub l_shank: f64,
    /// +1 for left legs, -1 for right legs.
    pub side_sign: f64,
    /// Per-joint `[lo, hi]` limits (rad).
    pub joint_limits: [[f64; 2]; 3],
}

impl LegConfig {
    pub fn with_side(mut self, side_sign: f64) -> Self {
        self.side_sign = side_sign;
        self
    }

    pub fn max_reach(&self) -> f64 {
        self.l_thigh + self.l_shank
    }

    pub fn clamp_to_limits(&self, q: &Vector3<f64>) -> (Vector3<f64>, bool) {
        let mut out = *q;
        let mut clamped = false;
        for j in 0..3 {
            let [lo, hi] = self.joint_limits[j];
            let v = q[j].clamp(lo, hi);
            if v != q[j] {
                clamped = true;
            }
            out[j] = v;
        }
        (out, clamped)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct JointState {
    pub q: Vector3<f64>,
    pub qd: Vector3<f64>,
}

/// Outcome of an inverse-kinematics query.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IkStatus {
    Exact,
    /// The target was outside the reachable set; the nearest reachable point was used.
    Projected,
    /// The solution violated a joint limit and was clamped.
    JointLimited,
}

#[derive(Clone, Copy, Debug)]
pub struct IkSolution {
    pub q: Vector3<f64>,
    pub status: IkStatus,
}

impl IkSolution {
    pub fn is_exact(&self) -> bool {
        self.status == IkStatus::Exact
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdGains {
    pub kp: f64,
    pub kd: f64,
}

impl Default for PdGains {
    fn default() -> Self {
        Self { kp: 40.0, kd: 1.0 }
    }
}

/// Foot position in the hip frame.
pub fn fk(cfg: &LegConfig, q: &Vector3<f64>) -> Vector3<f64> {
    let (s0, c0) = q[0].sin_cos();
    let (s1, c1) = q[1].sin_cos();
    let (s12, c12) = (q[1] + q[2]).sin_cos();
    let d = cfg.side_sign * cfg.l_abd;
    let x = -cfg.l_thigh * s1 - cfg.l_shank * s12;
    let zs = -cfg.l_thigh * c1 - cfg.l_shank * c12;
    Vector3::new(x, d * c0 - zs * s0, d * s0 + zs * c0)
}

/// d fk / d q, in m/rad.
pub fn jacobian(cfg: &LegConfig, q: &Vector3<f64>) -> Matrix3<f64> {
    let (s0, c0) = q[0].sin_cos();
    let (s1, c1) = q[1].sin_cos();
    let (s12, c12) = (q[1] + q[2]).sin_cos();
    let (l1, l2) = (cfg.l_thigh, cfg.l_shank);
    let d = cfg.side_sign * cfg.l_abd;
    let x = -l1 * s1 - l2 * s12;
    let zs = -l1 * c1 - l2 * c12;
    let y = d * c0 - zs * s0;
    let z = d * s0 + zs * c0;
    Matrix3::new(
        0.0,
        zs,
        -l2 * c12,
        -z,
        s0 * x,
        -s0 * l2 * s12,
        y,
        -c0 * x,
        c0 * l2 * s12,
    )
}

/// Knee-backward inverse kinematics.
///
/// Targets outside the reachable annulus are projected onto it and joint
/// limits are enforced; both cases are reported through [`IkStatus`].
pub fn ik(cfg: &LegConfig, p: &Vector3<f64>) -> IkSolution {
    let (l1, l2) = (cfg.l_thigh, cfg.l_shank);
    let d = cfg.side_sign * cfg.l_abd;
    let mut status = IkStatus::Exact;

    // Abduction plane: (y, z) = R(q0) (d, zs) with zs <= 0.
    let (mut y, mut z) = (p.y, p.z);
    let r_yz2 = y * y + z * z;
    if r_yz2 < d * d {
        let r = r_yz2.sqrt();
        if r < 1e-12 {
            y = d;
            z = 0.0;
        } else {
            y *= d.abs() / r;
            z *= d.abs() / r;
        }
        status = IkStatus::Projected;
    }
    let mut zs = -(y * y + z * z - d * d).max(0.0).sqrt();
    let q0 = wrap_angle(z.atan2(y) - zs.atan2(d));

    // Sagittal plane.
    let mut x = p.x;
    let reach = l1 + l2;
    let inner = (l1 - l2).abs();
    let len = (x * x + zs * zs).sqrt();
    if len > reach {
        x *= reach / len;
        zs *= reach / len;
        status = IkStatus::Projected;
    } else if len < inner {
        if len < 1e-12 {
            zs = -inner;
        } else {
            x *= inner / len;
            zs *= inner / len;
        }
        status = IkStatus::Projected;
    }
    let len2 = x * x + zs * zs;
    let c_knee = ((len2 - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)).clamp(-1.0, 1.0);
    let q2 = -c_knee.acos();
    let a = l1 + l2 * q2.cos();
    let b = l2 * q2.sin();
    let q1 = wrap_angle((-x).atan2(-zs) - b.atan2(a));

    let raw = Vector3::new(q0, q1, q2);
    let (q, clamped) = cfg.clamp_to_limits(&raw);
    if clamped && status == IkStatus::Exact {
        status = IkStatus::JointLimited;
    }
    IkSolution { q, status }
}

/// Joint torques that make a stance leg push on the ground with `-f_world`,
/// where `f_world` is the ground reaction force acting on the robot.
pub fn stance_torques(
    cfg: &LegConfig,
    q: &Vector3<f64>,
    f_world: &Vector3<f64>,
    body_rotation: &Rotation3<f64>,
) -> Vector3<f64> {
    let j = jacobian(cfg, q);
    j.transpose() * (body_rotation.inverse() * (-f_world))
}

/// Joint-space PD, clamped to `tau_max`.
pub fn swing_torques(
    q: &Vector3<f64>,
    qd: &Vector3<f64>,
    q_des: &Vector3<f64>,
    qd_des: &Vector3<f64>,
    gains: PdGains,
    tau_max: f64,
) -> Vector3<f64> {
    let tau = gains.kp * (q_des - q) + gains.kd * (qd_des - qd);
    clamp_torque(&tau, tau_max)
}

pub fn clamp_torque(tau: &Vector3<f64>, tau_max: f64) -> Vector3<f64> {
    tau.map(|t| t.clamp(-tau_max, tau_max))
}

/// Solves `J x = b` with Tikhonov damping near singular configurations.
pub(crate) fn damped_solve(j: &Matrix3<f64>, b: &Vector3<f64>, damping: f64) -> Vector3<f64> {
    if j.determinant().abs() > 1e-6 {
        if let Some(inv) = j.try_inverse() {
            return inv * b;
        }
    }
    let jt = j.transpose();
    let m = j * jt + Matrix3::identity() * damping * damping;
    match m.try_inverse() {
        Some(inv) => jt * (inv * b),
        None => Vector3::zeros(),
    }
}

fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut w = a % two_pi;
    if w > std::f64::consts::PI {
        w -= two_pi;
    } else if w <= -std::f64::consts::PI {
        w += two_pi;
    }
    w
}
