//! Robot presets. Geometry, mass and actuator limits are taken from the vendors'
//! published specifications; single-rigid-body inertias lump the legs into the trunk.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::LegConfig;

pub const NUM_LEGS: usize = 4;

/// Leg order used throughout: front-right, front-left, rear-right, rear-left.
pub const LEG_NAMES: [&str; NUM_LEGS] = ["FR", "FL", "RR", "RL"];

pub fn leg_side(leg: usize) -> f64 {
    if leg % 2 == 0 {
        -1.0
    } else {
        1.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotParams {
    pub name: String,
    /// Total mass (kg).
    pub mass: f64,
    /// Body-frame inertia about the COM (kg m^2).
    pub inertia: Matrix3<f64>,
    /// Hip (abduction axis) positions in the body frame (m).
    pub hip_offsets: [Vector3<f64>; NUM_LEGS],
    /// Left-side leg geometry; right legs mirror `side_sign`.
    pub leg: LegConfig,
    /// Per-foot maximum normal force (N).
    pub f_max: f64,
    /// Nominal standing height (m).
    pub z0: f64,
    pub torque_limit: f64,
    pub velocity_limit: f64,
    /// Half extents of the trunk box used for terrain collision (m).
    pub trunk_half_extents: Vector3<f64>,
}

impl RobotParams {
    pub fn leg_config(&self, leg: usize) -> LegConfig {
        self.leg.with_side(leg_side(leg))
    }

    pub fn weight(&self) -> f64 {
        self.mass * crate::model::GRAVITY_MAGNITUDE
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mass > 0.0) {
            return Err(Error::Config(format!("{}: mass must be positive", self.name)));
        }
        let sym = (self.inertia - self.inertia.transpose()).abs().max();
        if sym > 1e-12 || self.inertia.cholesky().is_none() {
            return Err(Error::Config(format!(
                "{}: inertia must be symmetric positive definite",
                self.name
            )));
        }
        let l = &self.leg;
        if !(l.l_abd > 0.0 && l.l_thigh > 0.0 && l.l_shank > 0.0) {
            return Err(Error::Config(format!("{}: leg lengths must be positive", self.name)));
        }
        if !(self.z0 > 0.0 && self.z0 < l.l_thigh + l.l_shank) {
            return Err(Error::Config(format!("{}: stand height out of reach", self.name)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RobotPreset {
    A1,
    Go1,
    AlienGo,
}

impl RobotPreset {
    pub const ALL: [RobotPreset; 3] = [RobotPreset::A1, RobotPreset::Go1, RobotPreset::AlienGo];

    #[allow(clippy::approx_constant)] // vendor hip limit is quoted as 3.14
    pub fn params(self) -> RobotParams {
        match self {
            RobotPreset::A1 => build(
                "a1",
                12.0,
                [0.068, 0.228, 0.256],
                [0.1805, 0.047],
                [0.0838, 0.2, 0.2],
                [[-0.802, 0.802], [-1.047, 4.189], [-2.697, 0.0]],
                0.30,
                33.5,
                21.0,
                [0.134, 0.097, 0.057],
            ),
            RobotPreset::Go1 => build(
                "go1",
                12.8,
                [0.072, 0.245, 0.275],
                [0.1881, 0.04675],
                [0.08, 0.213, 0.213],
                [[-0.863, 0.863], [-0.686, 4.501], [-2.818, 0.0]],
                0.30,
                35.5,
                30.1,
                [0.1881, 0.047, 0.057],
            ),
            RobotPreset::AlienGo => build(
                "aliengo",
                21.0,
                [0.18, 0.62, 0.68],
                [0.2399, 0.051],
                [0.0868, 0.25, 0.25],
                [[-1.222, 1.222], [-3.14, 3.14], [-2.775, 0.0]],
                0.38,
                44.0,
                20.0,
                [0.3235, 0.075, 0.056],
            ),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RobotPreset::A1 => "a1",
            RobotPreset::Go1 => "go1",
            RobotPreset::AlienGo => "aliengo",
        }
    }
}

impl fmt::Display for RobotPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RobotPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "a1" => Ok(RobotPreset::A1),
            "go1" => Ok(RobotPreset::Go1),
            "aliengo" => Ok(RobotPreset::AlienGo),
            other => Err(Error::Config(format!("unknown robot preset '{other}'"))),
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn build(
    name: &str,
    mass: f64,
    inertia_diag: [f64; 3],
    hip: [f64; 2],
    lengths: [f64; 3],
    joint_limits: [[f64; 2]; 3],
    z0: f64,
    torque_limit: f64,
    velocity_limit: f64,
    trunk: [f64; 3],
) -> RobotParams {
    let [hx, hy] = hip;
    let hip_offsets = [
        Vector3::new(hx, -hy, 0.0),
        Vector3::new(hx, hy, 0.0),
        Vector3::new(-hx, -hy, 0.0),
        Vector3::new(-hx, hy, 0.0),
    ];
    RobotParams {
        name: name.to_string(),
        mass,
        inertia: Matrix3::from_diagonal(&Vector3::from(inertia_diag)),
        hip_offsets,
        leg: LegConfig {
            l_abd: lengths[0],
            l_thigh: lengths[1],
            l_shank: lengths[2],
            side_sign: 1.0,
            joint_limits,
        },
        // Twice the two-leg static share, so a trot keeps margin for payloads and transients.
        f_max: 4.0 * mass * crate::model::GRAVITY_MAGNITUDE / 4.0,
        z0,
        torque_limit,
        velocity_limit,
        trunk_half_extents: Vector3::from(trunk),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for p in RobotPreset::ALL {
            p.params().validate().unwrap();
            assert_eq!(p.name().parse::<RobotPreset>().unwrap(), p);
        }
    }

    #[test]
    fn a1_load_ratio() {
        let m = RobotPreset::A1.params().mass;
        assert!((11.9..=12.2).contains(&m));
        assert!((10.0 / m - 0.83).abs() <= 0.01);
    }

    #[test]
    fn right_legs_mirror() {
        let p = RobotPreset::A1.params();
        assert_eq!(p.leg_config(0).side_sign, -1.0);
        assert_eq!(p.leg_config(3).side_sign, 1.0);
        assert!(p.hip_offsets[0].y < 0.0 && p.hip_offsets[1].y > 0.0);
    }
}
