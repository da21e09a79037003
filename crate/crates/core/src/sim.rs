//! Deterministic single-rigid-body simulator with light torque-driven legs and
//! penalty ground contact.
//!
//! Each leg is a 3-DOF chain with a small diagonal joint inertia and no mass
//! of its own; foot contact forces act on the leg joints through `Jᵀ` and on
//! the trunk at the foot point. Contact damping is integrated implicitly
//! together with the joint velocities so the stiff foot mode stays stable at
//! 1 ms. The trunk (plus any rigid payload) follows the Newton-Euler equations
//! about the base origin, so a payload with a COM offset is handled exactly.

use nalgebra::{Matrix3, Matrix6, Rotation3, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{fk, jacobian, ik, JointState};
use crate::model::{gravity, skew, BodyState};
use crate::robot::{leg_side, RobotParams, NUM_LEGS};
use crate::terrain::Terrain;

pub const SIM_DT: f64 = 0.001;
pub const JOINT_INERTIA: f64 = 0.02;
/// Horizontal penetration into a riser that triggers kinematic blocking (m).
pub const BLOCK_DEPTH: f64 = 0.01;
const SINGULAR_DET: f64 = 1e-6;
const LIMIT_STIFFNESS: f64 = 200.0;
const LIMIT_DAMPING: f64 = 2.0;

/// Signed distance past the joint limits (zero inside).
fn limit_violation(lc: &crate::kinematics::LegConfig, q: &Vector3<f64>) -> Vector3<f64> {
    Vector3::from_fn(|k, _| {
        let [lo, hi] = lc.joint_limits[k];
        if q[k] < lo {
            q[k] - lo
        } else if q[k] > hi {
            q[k] - hi
        } else {
            0.0
        }
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContactModel {
    pub k_n: f64,
    pub d_n: f64,
    pub mu_s: f64,
}

impl Default for ContactModel {
    fn default() -> Self {
        Self {
            k_n: 3e4,
            d_n: 1e3,
            mu_s: 0.6,
        }
    }
}

impl ContactModel {
    pub fn validate(&self) -> Result<()> {
        if self.k_n > 0.0 && self.d_n > 0.0 && self.mu_s > 0.0 {
            Ok(())
        } else {
            Err(Error::Config("contact model needs k_n, d_n, mu_s > 0".into()))
        }
    }
}

/// Rigid load bolted to the trunk; `offset` is in the body frame.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Payload {
    pub mass: f64,
    pub offset: Vector3<f64>,
}

/// Constant world-frame wrench at the base origin over `[start, start + duration)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WrenchPulse {
    pub force: Vector3<f64>,
    pub moment: Vector3<f64>,
    pub start: f64,
    pub duration: f64,
}

impl WrenchPulse {
    pub fn active(&self, t: f64) -> bool {
        t >= self.start && t < self.start + self.duration
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Disturbance {
    pub payload: Option<Payload>,
    #[serde(default)]
    pub wrenches: Vec<WrenchPulse>,
}

impl Disturbance {
    pub fn wrench_at(&self, t: f64) -> (Vector3<f64>, Vector3<f64>) {
        self.wrenches
            .iter()
            .filter(|w| w.active(t))
            .fold((Vector3::zeros(), Vector3::zeros()), |(f, m), w| (f + w.force, m + w.moment))
    }

    /// Total wrench about the base origin that the disturbance adds on top of
    /// the nominal robot, in the world frame.
    pub fn known_wrench(&self, t: f64, rotation: &Rotation3<f64>) -> (Vector3<f64>, Vector3<f64>) {
        let (mut f, mut m) = self.wrench_at(t);
        if let Some(p) = &self.payload {
            let w = gravity() * p.mass;
            f += w;
            m += (rotation * p.offset).cross(&w);
        }
        (f, m)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(p) = &self.payload {
            if !(p.mass >= 0.0) || !p.offset.iter().all(|x| x.is_finite()) {
                return Err(Error::Config("payload mass must be >= 0".into()));
            }
        }
        if self.wrenches.iter().any(|w| !(w.duration >= 0.0) || !w.force.iter().chain(w.moment.iter()).all(|x| x.is_finite())) {
            return Err(Error::Config("wrench pulses must be finite with duration >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub robot: RobotParams,
    pub dt: f64,
    pub contact: ContactModel,
    pub terrain: Terrain,
    pub disturbance: Disturbance,
    pub joint_inertia: f64,
}

impl SimConfig {
    pub fn new(robot: RobotParams, terrain: Terrain, disturbance: Disturbance) -> Self {
        Self {
            robot,
            dt: SIM_DT,
            contact: ContactModel::default(),
            terrain,
            disturbance,
            joint_inertia: JOINT_INERTIA,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.robot.validate()?;
        self.contact.validate()?;
        self.terrain.validate()?;
        self.disturbance.validate()?;
        if !(self.dt > 0.0 && self.joint_inertia > 0.0) {
            return Err(Error::Config("dt and joint inertia must be positive".into()));
        }
        Ok(())
    }

    pub fn payload_mass(&self) -> f64 {
        self.disturbance.payload.map_or(0.0, |p| p.mass)
    }

    /// Mass, body-frame COM offset and body-frame inertia about the base origin.
    pub fn mass_properties(&self) -> (f64, Vector3<f64>, Matrix3<f64>) {
        let r = &self.robot;
        match self.disturbance.payload {
            Some(p) if p.mass > 0.0 => {
                let m = r.mass + p.mass;
                let o = p.offset;
                let i = r.inertia + (Matrix3::identity() * o.norm_squared() - o * o.transpose()) * p.mass;
                (m, o * (p.mass / m), i)
            }
            _ => (r.mass, Vector3::zeros(), r.inertia),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimState {
    /// `theta` is (roll, pitch, yaw) with yaw unwrapped; `p` is the base origin.
    pub body: BodyState,
    pub joints: [JointState; NUM_LEGS],
    pub foot_contacts: [bool; NUM_LEGS],
    pub time: f64,
    pub rng_seed: u64,
    /// Ground reaction forces on the robot from the last step (world frame).
    pub contact_forces: [Vector3<f64>; NUM_LEGS],
    rotation: Rotation3<f64>,
    anchors: [Option<Vector3<f64>>; NUM_LEGS],
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepReport {
    /// Swing foot blocked against a riser this step.
    pub blocked: [bool; NUM_LEGS],
    /// Stance leg Jacobian near singular (`|det J| < 1e-6`).
    pub singular: [bool; NUM_LEGS],
    /// Some trunk corner is below the terrain.
    pub trunk_contact: bool,
}

impl SimState {
    /// Standing pose with feet under the hips, pre-loaded to the static penetration.
    pub fn standing(cfg: &SimConfig, rng_seed: u64) -> Self {
        let r = &cfg.robot;
        let (m, _, _) = cfg.mass_properties();
        let ground = cfg.terrain.height(0.0, 0.0);
        let delta = m * crate::model::GRAVITY_MAGNITUDE / (NUM_LEGS as f64 * cfg.contact.k_n);
        let joints = std::array::from_fn(|leg| {
            let lc = r.leg_config(leg);
            let foot = Vector3::new(0.0, leg_side(leg) * r.leg.l_abd, -r.z0);
            JointState {
                q: ik(&lc, &foot).q,
                qd: Vector3::zeros(),
            }
        });
        let body = BodyState {
            p: Vector3::new(0.0, 0.0, ground + r.z0 - delta),
            ..Default::default()
        };
        Self::from_parts(cfg, body, joints, rng_seed)
    }

    pub fn from_parts(cfg: &SimConfig, body: BodyState, joints: [JointState; NUM_LEGS], rng_seed: u64) -> Self {
        let rotation = Rotation3::from_euler_angles(body.theta.x, body.theta.y, body.theta.z);
        let mut s = Self {
            body,
            joints,
            foot_contacts: [false; NUM_LEGS],
            time: 0.0,
            rng_seed,
            contact_forces: [Vector3::zeros(); NUM_LEGS],
            rotation,
            anchors: [None; NUM_LEGS],
        };
        let feet = s.foot_positions(&cfg.robot);
        for leg in 0..NUM_LEGS {
            let pen = cfg.terrain.height(feet[leg].x, feet[leg].y) - feet[leg].z;
            s.foot_contacts[leg] = pen > 0.0;
            if pen > 0.0 {
                s.anchors[leg] = Some(feet[leg]);
            }
        }
        s
    }

    pub fn rotation(&self) -> &Rotation3<f64> {
        &self.rotation
    }

    /// Foot position relative to the base origin, body frame.
    pub fn foot_body(&self, params: &RobotParams, leg: usize) -> Vector3<f64> {
        params.hip_offsets[leg] + fk(&params.leg_config(leg), &self.joints[leg].q)
    }

    pub fn foot_positions(&self, params: &RobotParams) -> [Vector3<f64>; NUM_LEGS] {
        std::array::from_fn(|leg| self.body.p + self.rotation * self.foot_body(params, leg))
    }

    pub fn foot_velocities(&self, params: &RobotParams) -> [Vector3<f64>; NUM_LEGS] {
        std::array::from_fn(|leg| {
            let r = self.rotation * self.foot_body(params, leg);
            let j = self.rotation.matrix() * jacobian(&params.leg_config(leg), &self.joints[leg].q);
            self.body.pdot + self.body.omega.cross(&r) + j * self.joints[leg].qd
        })
    }

    pub fn hip_positions(&self, params: &RobotParams) -> [Vector3<f64>; NUM_LEGS] {
        std::array::from_fn(|leg| self.body.p + self.rotation * params.hip_offsets[leg])
    }

    /// Trunk kinetic + potential energy, joint kinetic energy and stored contact spring energy.
    pub fn mechanical_energy(&self, cfg: &SimConfig) -> f64 {
        let (m, c_b, i_o) = cfg.mass_properties();
        let r = self.rotation.matrix();
        let c = r * c_b;
        let v_c = self.body.pdot + self.body.omega.cross(&c);
        let i_c = r * (i_o - (Matrix3::identity() * c_b.norm_squared() - c_b * c_b.transpose()) * m) * r.transpose();
        let mut e = 0.5 * m * v_c.norm_squared()
            + 0.5 * self.body.omega.dot(&(i_c * self.body.omega))
            + m * crate::model::GRAVITY_MAGNITUDE * (self.body.p.z + c.z);
        for (leg, j) in self.joints.iter().enumerate() {
            let over = limit_violation(&cfg.robot.leg_config(leg), &j.q);
            e += 0.5 * cfg.joint_inertia * j.qd.norm_squared() + 0.5 * LIMIT_STIFFNESS * over.norm_squared();
        }
        let feet = self.foot_positions(&cfg.robot);
        for leg in 0..NUM_LEGS {
            let pen = cfg.terrain.height(feet[leg].x, feet[leg].y) - feet[leg].z;
            if pen > 0.0 {
                e += 0.5 * cfg.contact.k_n * pen * pen;
                if let Some(a) = self.anchors[leg] {
                    let d = feet[leg] - a;
                    e += 0.5 * cfg.contact.k_n * (d.x * d.x + d.y * d.y);
                }
            }
        }
        e
    }

    pub fn trunk_touches_terrain(&self, cfg: &SimConfig) -> bool {
        let h = cfg.robot.trunk_half_extents;
        (0..8).any(|k| {
            let corner = Vector3::new(
                if k & 1 == 0 { h.x } else { -h.x },
                if k & 2 == 0 { h.y } else { -h.y },
                if k & 4 == 0 { h.z } else { -h.z },
            );
            let w = self.body.p + self.rotation * corner;
            w.z < cfg.terrain.height(w.x, w.y)
        })
    }
}

fn wrap(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    a - two_pi * ((a + std::f64::consts::PI) / two_pi).floor()
}

/// Advances the simulation by `cfg.dt` under joint torques `tau`.
pub fn step(sim: &mut SimState, tau: &[Vector3<f64>; NUM_LEGS], cfg: &SimConfig) -> Result<StepReport> {
    if tau.iter().any(|t| !t.iter().all(|x| x.is_finite())) {
        return Err(Error::NonFinite("joint torques"));
    }
    let dt = cfg.dt;
    let robot = &cfg.robot;
    let cm = &cfg.contact;
    let mj = cfg.joint_inertia;
    let rot = sim.rotation;
    let rm = *rot.matrix();
    let mut report = StepReport::default();

    let mut forces = [Vector3::zeros(); NUM_LEGS];
    let mut new_joints = sim.joints;
    let feet_before = sim.foot_positions(robot);
    for leg in 0..NUM_LEGS {
        let lc = robot.leg_config(leg);
        let js = &sim.joints[leg];
        let r = rm * sim.foot_body(robot, leg);
        let p_f = sim.body.p + r;
        let j_body = jacobian(&lc, &js.q);
        let jw = rm * j_body;
        let v_base = sim.body.pdot + sim.body.omega.cross(&r);
        let pen = cfg.terrain.height(p_f.x, p_f.y) - p_f.z;
        let v_now = v_base + jw * js.qd;

        // Joint limits are stiff one-sided springs, integrated implicitly with the contact.
        let over = limit_violation(&lc, &js.q);
        let mut lhs = Matrix3::identity() * mj;
        let mut rhs = js.qd * mj + tau[leg] * dt;
        for k in 0..3 {
            if over[k] != 0.0 {
                lhs[(k, k)] += dt * (LIMIT_DAMPING + LIMIT_STIFFNESS * dt);
                rhs[k] -= dt * LIMIT_STIFFNESS * over[k];
            }
        }
        let solve = |lhs: &Matrix3<f64>, rhs: &Vector3<f64>| lhs.cholesky().map(|c| c.solve(rhs)).unwrap_or(js.qd);
        // The spring acts on the end-of-step penetration, so contact can start mid-step.
        let qd_new = if pen - v_now.z * dt > 0.0 {
            if j_body.determinant().abs() < SINGULAR_DET {
                report.singular[leg] = true;
            }
            let anchor = *sim.anchors[leg].get_or_insert(p_f);
            let spring = Vector3::new(-cm.k_n * (p_f.x - anchor.x), -cm.k_n * (p_f.y - anchor.y), cm.k_n * pen);
            let d = cm.d_n + cm.k_n * dt;
            let damp = Matrix3::from_diagonal(&Vector3::new(d, d, d));
            let qd = solve(
                &(lhs + jw.transpose() * damp * jw * dt),
                &(rhs + jw.transpose() * (spring - damp * v_base) * dt),
            );
            let mut f = spring - damp * (v_base + jw * qd);
            if f.z <= 0.0 {
                sim.anchors[leg] = None;
                solve(&lhs, &rhs)
            } else {
                let ft = (f.x * f.x + f.y * f.y).sqrt();
                let limit = cm.mu_s * f.z;
                if ft > limit {
                    let s = limit / ft;
                    f.x *= s;
                    f.y *= s;
                    // Slide the anchor so the spring carries exactly the Coulomb force.
                    sim.anchors[leg] = Some(Vector3::new(p_f.x + f.x / cm.k_n, p_f.y + f.y / cm.k_n, anchor.z));
                    forces[leg] = f;
                    solve(&lhs, &(rhs + jw.transpose() * f * dt))
                } else {
                    forces[leg] = f;
                    qd
                }
            }
        } else {
            sim.anchors[leg] = None;
            solve(&lhs, &rhs)
        };
        let q = js.q + qd_new * dt;
        new_joints[leg] = JointState { q, qd: qd_new };
    }

    let (m, c_b, i_ob) = cfg.mass_properties();
    let c = rm * c_b;
    let i_o = rm * i_ob * rm.transpose();
    let w = sim.body.omega;
    let (f_ext, m_ext) = cfg.disturbance.wrench_at(sim.time);
    let weight = gravity() * m;
    let mut force = weight + f_ext;
    let mut moment = c.cross(&weight) + m_ext;
    for leg in 0..NUM_LEGS {
        force += forces[leg];
        moment += (feet_before[leg] - sim.body.p).cross(&forces[leg]);
    }
    let mut mass6 = Matrix6::zeros();
    mass6.fixed_view_mut::<3, 3>(0, 0).copy_from(&(Matrix3::identity() * m));
    mass6.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-skew(&c) * m));
    mass6.fixed_view_mut::<3, 3>(3, 0).copy_from(&(skew(&c) * m));
    mass6.fixed_view_mut::<3, 3>(3, 3).copy_from(&i_o);
    let mut rhs6 = Vector6::zeros();
    rhs6.fixed_rows_mut::<3>(0).copy_from(&(force - w.cross(&w.cross(&c)) * m));
    rhs6.fixed_rows_mut::<3>(3).copy_from(&(moment - w.cross(&(i_o * w))));
    let acc = mass6
        .cholesky()
        .ok_or(Error::NotPositiveDefinite)?
        .solve(&rhs6);
    let a = acc.fixed_rows::<3>(0).into_owned();
    let alpha = acc.fixed_rows::<3>(3).into_owned();

    let body = &mut sim.body;
    body.pdot += a * dt;
    body.omega += alpha * dt;
    body.p += body.pdot * dt;
    let mut new_rot = Rotation3::new(body.omega * dt) * rot;
    new_rot.renormalize();
    let (roll, pitch, yaw) = new_rot.euler_angles();
    body.theta = Vector3::new(roll, pitch, body.theta.z + wrap(yaw - body.theta.z));
    sim.rotation = new_rot;
    sim.joints = new_joints;
    // Snapped to whole nanoseconds so the clock does not drift off the tick grid.
    sim.time = ((sim.time + dt) * 1e9).round() / 1e9;
    sim.contact_forces = forces;

    // Kinematic blocking: a foot driven horizontally into a riser stays at its previous xy.
    for leg in 0..NUM_LEGS {
        let p_new = sim.body.p + sim.rotation * sim.foot_body(robot, leg);
        let h_new = cfg.terrain.height(p_new.x, p_new.y);
        let h_old = cfg.terrain.height(feet_before[leg].x, feet_before[leg].y);
        if h_new - p_new.z > BLOCK_DEPTH && h_new - h_old > BLOCK_DEPTH {
            let held = Vector3::new(feet_before[leg].x, feet_before[leg].y, p_new.z);
            let local = sim.rotation.inverse() * (held - sim.body.p) - robot.hip_offsets[leg];
            let lc = robot.leg_config(leg);
            let (q, _) = lc.clamp_to_limits(&ik(&lc, &local).q);
            sim.joints[leg] = JointState { q, qd: Vector3::zeros() };
            report.blocked[leg] = true;
        }
    }

    let feet = sim.foot_positions(robot);
    for leg in 0..NUM_LEGS {
        sim.foot_contacts[leg] = cfg.terrain.height(feet[leg].x, feet[leg].y) - feet[leg].z > 0.0;
    }
    report.trunk_contact = sim.trunk_touches_terrain(cfg);
    if !sim.body.is_finite() || sim.joints.iter().any(|j| !j.q.iter().chain(j.qd.iter()).all(|x| x.is_finite())) {
        return Err(Error::Diverged(format!("simulation state at t = {:.3}", sim.time)));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::stance_torques;
    use crate::robot::RobotPreset;

    fn holding_torques(sim: &SimState, cfg: &SimConfig, q0: &[Vector3<f64>; 4]) -> [Vector3<f64>; 4] {
        let (m, _, _) = cfg.mass_properties();
        let share = Vector3::new(0.0, 0.0, m * crate::model::GRAVITY_MAGNITUDE / 4.0);
        std::array::from_fn(|leg| {
            let lc = cfg.robot.leg_config(leg);
            let js = &sim.joints[leg];
            stance_torques(&lc, &js.q, &share, sim.rotation()) + (q0[leg] - js.q) * 60.0 - js.qd * 2.0
        })
    }

    #[test]
    fn free_flight_is_ballistic() {
        let cfg = SimConfig::new(RobotPreset::A1.params(), Terrain::Flat, Disturbance::default());
        let mut s = SimState::standing(&cfg, 0);
        s.body.p.z = 5.0;
        s.body.pdot = Vector3::new(1.0, -0.5, 2.0);
        let p0 = s.body.p;
        let v0 = s.body.pdot;
        let n = 500;
        for _ in 0..n {
            step(&mut s, &[Vector3::zeros(); 4], &cfg).unwrap();
        }
        let t = n as f64 * cfg.dt;
        let g = gravity();
        // Semi-implicit Euler: p_n = p0 + v0 t + g dt² n(n+1)/2.
        let expect = p0 + v0 * t + g * (cfg.dt * cfg.dt * (n * (n + 1)) as f64 / 2.0);
        assert!((s.body.p - expect).norm() < 1e-9);
        assert!((s.body.p - (p0 + v0 * t + g * (t * t / 2.0))).norm() < 0.01);
        assert!(s.contact_forces.iter().all(|f| *f == Vector3::zeros()));
    }

    #[test]
    fn drop_settles_to_static_balance() {
        let cfg = SimConfig::new(RobotPreset::A1.params(), Terrain::Flat, Disturbance::default());
        let mut s = SimState::standing(&cfg, 0);
        // Lift so the feet start 1 mm above the ground.
        let lowest = s.foot_positions(&cfg.robot).iter().map(|f| f.z).fold(f64::INFINITY, f64::min);
        s.body.p.z += 0.001 - lowest;
        let q0 = s.joints.map(|j| j.q);
        for _ in 0..2000 {
            let tau = holding_torques(&s, &cfg, &q0);
            step(&mut s, &tau, &cfg).unwrap();
        }
        let fz: f64 = s.contact_forces.iter().map(|f| f.z).sum();
        let mg = cfg.robot.weight();
        assert!((fz - mg).abs() <= 0.01 * mg, "{fz} vs {mg}");
        let expected_pen = mg / (4.0 * cfg.contact.k_n);
        for f in s.foot_positions(&cfg.robot) {
            assert!((-f.z - expected_pen).abs() < 0.1 * expected_pen, "{} vs {expected_pen}", -f.z);
        }
        assert!(s.foot_contacts.iter().all(|c| *c));
    }

    #[test]
    fn contact_forces_stay_in_cone() {
        let cfg = SimConfig::new(RobotPreset::A1.params(), Terrain::Flat, Disturbance::default());
        let mut s = SimState::standing(&cfg, 0);
        s.body.pdot = Vector3::new(0.8, 0.3, -0.2);
        s.body.omega = Vector3::new(0.5, -0.3, 1.0);
        for k in 0..800 {
            let tau = std::array::from_fn(|leg| Vector3::new(2.0, -8.0 + leg as f64, 5.0 * ((k as f64) * 0.01).sin()));
            step(&mut s, &tau, &cfg).unwrap();
            for f in &s.contact_forces {
                assert!(f.z >= 0.0);
                assert!((f.x * f.x + f.y * f.y).sqrt() <= cfg.contact.mu_s * f.z + 1e-9);
            }
        }
    }

    #[test]
    fn zero_torque_energy_does_not_grow() {
        // Legs fold under the dropped trunk; checked until the trunk reaches the ground.
        let cfg = SimConfig::new(RobotPreset::A1.params(), Terrain::Flat, Disturbance::default());
        let mut s = SimState::standing(&cfg, 0);
        s.body.p.z += 0.03;
        let mut e = s.mechanical_energy(&cfg);
        let mut touchdowns = 0;
        for _ in 0..1500 {
            let before = s.foot_contacts;
            let r = step(&mut s, &[Vector3::zeros(); 4], &cfg).unwrap();
            if r.trunk_contact {
                break;
            }
            touchdowns += (0..4).filter(|l| s.foot_contacts[*l] && !before[*l]).count();
            let e_new = s.mechanical_energy(&cfg);
            assert!(e_new - e <= 1e-3, "energy rose by {} at t = {}", e_new - e, s.time);
            e = e_new;
        }
        assert!(touchdowns >= 4);
    }

    #[test]
    fn payload_merges_mass_and_inertia() {
        let mut d = Disturbance::default();
        d.payload = Some(Payload { mass: 10.0, offset: Vector3::new(0.1, 0.0, 0.05) });
        let cfg = SimConfig::new(RobotPreset::A1.params(), Terrain::Flat, d);
        let (m, c, i) = cfg.mass_properties();
        assert!((m - 22.0).abs() < 1e-12);
        assert!((c - Vector3::new(10.0 / 22.0 * 0.1, 0.0, 10.0 / 22.0 * 0.05)).norm() < 1e-12);
        assert!((i[(1, 1)] - (0.228 + 10.0 * 0.0125)).abs() < 1e-12);
        // In free fall the offset payload does not induce rotation.
        let mut s = SimState::standing(&cfg, 0);
        s.body.p.z = 3.0;
        for _ in 0..300 {
            step(&mut s, &[Vector3::zeros(); 4], &cfg).unwrap();
        }
        assert!(s.body.omega.norm() < 1e-12);
    }

    #[test]
    fn wrench_schedule() {
        let d = Disturbance {
            payload: None,
            wrenches: vec![WrenchPulse { force: Vector3::new(10.0, 0.0, 0.0), moment: Vector3::zeros(), start: 0.5, duration: 0.2 }],
        };
        assert_eq!(d.wrench_at(0.49).0.x, 0.0);
        assert_eq!(d.wrench_at(0.5).0.x, 10.0);
        assert_eq!(d.wrench_at(0.7).0.x, 0.0);
    }

    #[test]
    fn foot_is_blocked_by_riser() {
        let params = RobotPreset::A1.params();
        let riser = params.hip_offsets[0].x + 0.005;
        let cfg = SimConfig::new(params, Terrain::stairs(riser), Disturbance::default());
        let mut s = SimState::standing(&cfg, 0);
        // Hover with the feet 2 cm up and carry the trunk forward at 1 m/s.
        let q0 = s.joints.map(|j| j.q);
        let mut hits = 0;
        for _ in 0..100 {
            s.body.p.z = cfg.robot.z0 + 0.02;
            s.body.pdot = Vector3::new(1.0, 0.0, 0.0);
            s.body.omega = Vector3::zeros();
            let tau = std::array::from_fn(|leg| (q0[leg] - s.joints[leg].q) * 60.0 - s.joints[leg].qd * 2.0);
            let r = step(&mut s, &tau, &cfg).unwrap();
            hits += r.blocked[0] as usize;
            let f = s.foot_positions(&cfg.robot)[0];
            assert!(f.x < riser + BLOCK_DEPTH + 1e-3, "{}", f.x);
        }
        assert!(hits > 50);
        assert!(!s.foot_contacts[0]);
    }

    #[test]
    fn deterministic_steps() {
        let cfg = SimConfig::new(RobotPreset::Go1.params(), Terrain::blocks(0.1, 3), Disturbance::default());
        let run = || {
            let mut s = SimState::standing(&cfg, 9);
            for k in 0..400 {
                let tau = std::array::from_fn(|leg| Vector3::new(0.3, -1.0 - leg as f64 * 0.1, (k as f64 * 0.02).cos()));
                step(&mut s, &tau, &cfg).unwrap();
            }
            s
        };
        assert_eq!(run(), run());
    }
}
