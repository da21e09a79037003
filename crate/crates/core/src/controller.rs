//! Low-level locomotion loop: gait events and swing tracking at 1 kHz, MPC
//! forces refreshed every control tick.

use nalgebra::{Rotation3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::gait::{
    apply_reflection, contact_plan, foot_placement_heuristic, swing_position, GaitSchedule, GaitScheduler, LegMode,
    PhaseState, SwingPlan,
};
use crate::kinematics::{damped_solve, ik, jacobian, stance_torques, swing_torques, PdGains};
use crate::model::{rot_z, BodyState, Compensation};
use crate::mpc::{Command, FrictionParams, MpcConfig, MpcController, MpcOutput};
use crate::robot::{RobotParams, NUM_LEGS};
use crate::sim::SimState;

pub const DEFAULT_SWING_HEIGHT: f64 = 0.08;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControllerParams {
    pub mpc: MpcConfig,
    pub friction: FrictionParams,
    pub gait: GaitSchedule,
    pub swing_height: f64,
    pub swing_gains: PdGains,
    pub hold_gains: PdGains,
}

impl ControllerParams {
    pub fn new(robot: &RobotParams, gait: GaitSchedule) -> Self {
        Self {
            mpc: MpcConfig::default(),
            friction: FrictionParams::for_robot(robot),
            gait,
            swing_height: DEFAULT_SWING_HEIGHT,
            swing_gains: PdGains { kp: 150.0, kd: 3.0 },
            hold_gains: PdGains { kp: 60.0, kd: 1.5 },
        }
    }
}

/// Desired swing-leg joint targets for one tick.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FootCommand {
    pub p_f: Vector3<f64>,
    pub q_des: Vector3<f64>,
    pub qd_des: Vector3<f64>,
}

#[derive(Clone, Debug)]
pub struct LocomotionController {
    pub robot: RobotParams,
    pub params: ControllerParams,
    mpc: MpcController,
    scheduler: GaitScheduler,
    phases: PhaseState,
    modes: [LegMode; NUM_LEGS],
    plans: [Option<SwingPlan>; NUM_LEGS],
    holds: [Option<Vector3<f64>>; NUM_LEGS],
    targets: [Vector3<f64>; NUM_LEGS],
    forces: [Vector3<f64>; NUM_LEGS],
    force_legs: [bool; NUM_LEGS],
    dq: [Vector3<f64>; NUM_LEGS],
    ground_z: f64,
    reflection_clamped: bool,
}

impl LocomotionController {
    pub fn new(robot: RobotParams, params: ControllerParams) -> Self {
        Self {
            mpc: MpcController::new(params.mpc, params.friction),
            scheduler: GaitScheduler::new(params.gait),
            phases: Default::default(),
            modes: [LegMode::Stance; NUM_LEGS],
            plans: [None; NUM_LEGS],
            holds: [None; NUM_LEGS],
            targets: [Vector3::zeros(); NUM_LEGS],
            forces: [Vector3::zeros(); NUM_LEGS],
            force_legs: [false; NUM_LEGS],
            dq: [Vector3::zeros(); NUM_LEGS],
            ground_z: 0.0,
            reflection_clamped: false,
            robot,
            params,
        }
    }

    pub fn planned_contacts(&self) -> [bool; NUM_LEGS] {
        std::array::from_fn(|leg| self.phases[leg].in_contact)
    }

    pub fn modes(&self) -> [LegMode; NUM_LEGS] {
        self.modes
    }

    /// Latest MPC ground reaction forces (world frame, on the robot).
    pub fn forces(&self) -> [Vector3<f64>; NUM_LEGS] {
        self.forces
    }

    pub fn targets(&self) -> [Vector3<f64>; NUM_LEGS] {
        self.targets
    }

    pub fn reflection(&self) -> [Vector3<f64>; NUM_LEGS] {
        self.dq
    }

    pub fn reflection_clamped(&self) -> bool {
        self.reflection_clamped
    }

    pub fn ground_estimate(&self) -> f64 {
        self.ground_z
    }

    /// Refreshes gait events and the touchdown targets from the current state.
    pub fn update_targets(&mut self, est: &BodyState, sim: &SimState, v_des_body: &Vector3<f64>, yaw_rate: f64) {
        let (phases, modes) = self.scheduler.update(sim.time, sim.foot_contacts);
        self.phases = phases;
        self.modes = modes;
        let sched = &self.params.gait;
        let hips = sim.hip_positions(&self.robot);
        let feet = sim.foot_positions(&self.robot);
        let stance_feet: Vec<f64> = (0..NUM_LEGS).filter(|l| sim.foot_contacts[*l]).map(|l| feet[l].z).collect();
        if !stance_feet.is_empty() {
            self.ground_z = stance_feet.iter().sum::<f64>() / stance_feet.len() as f64;
        }
        let v_cmd = rot_z(est.yaw()) * v_des_body;
        let v = Vector3::new(est.pdot.x, est.pdot.y, 0.0);
        for leg in 0..NUM_LEGS {
            let ph = self.phases[leg];
            // Time until this leg's next touchdown.
            let remaining = if ph.in_contact {
                (1.0 - ph.phase) * sched.stance_time() + sched.swing_time()
            } else {
                (1.0 - ph.phase) * sched.swing_time()
            };
            // The hip translates with the body and swings about it at the commanded yaw rate.
            let arm = hips[leg] - sim.body.p;
            let hip_td = sim.body.p + v * remaining + rot_z(yaw_rate * remaining) * Vector3::new(arm.x, arm.y, 0.0)
                + Vector3::new(0.0, 0.0, arm.z);
            let mut t = foot_placement_heuristic(&hip_td, &v, &v_cmd, yaw_rate, sched.stance_time(), self.robot.z0);
            t.z = match &self.plans[leg] {
                Some(plan) => plan.start.z,
                None => feet[leg].z,
            };
            self.targets[leg] = t;
        }
    }

    /// One MPC tick. `comp` is world frame; `dq` applies to swing legs only.
    pub fn control_tick(
        &mut self,
        est: &BodyState,
        sim: &SimState,
        v_des_body: &Vector3<f64>,
        yaw_rate: f64,
        comp: &Compensation,
        dq: &[Vector3<f64>; NUM_LEGS],
    ) -> Result<MpcOutput> {
        self.update_targets(est, sim, v_des_body, yaw_rate);
        self.dq = *dq;
        let cfg = &self.params.mpc;
        let mut gait = contact_plan(&self.params.gait, sim.time, cfg.dt, cfg.horizon);
        for leg in 0..NUM_LEGS {
            gait.contact[0][leg] = self.phases[leg].in_contact || self.modes[leg] == LegMode::EarlyContact;
        }
        let feet = sim.foot_positions(&self.robot);
        let feet_mpc: [Vector3<f64>; NUM_LEGS] =
            std::array::from_fn(|leg| if gait.contact[0][leg] { feet[leg] } else { self.targets[leg] });
        let cmd = Command {
            v_des: *v_des_body,
            yaw_rate,
            z0: self.ground_z + self.robot.z0,
        };
        let out = self.mpc.tick(est, &feet_mpc, &gait, &cmd, comp, &self.robot)?;
        self.forces = out.forces_now;
        self.force_legs = gait.contact[0];
        for leg in 0..NUM_LEGS {
            if self.modes[leg] == LegMode::Swing {
                if let Some(plan) = &mut self.plans[leg] {
                    let t = self.targets[leg];
                    plan.retarget(Vector2::new(t.x, t.y), self.phases[leg].phase);
                }
            }
        }
        Ok(out)
    }

    fn swing_command(&self, leg: usize, plan: &SwingPlan, phase: f64, est: &BodyState, rot: &Rotation3<f64>) -> (FootCommand, bool) {
        let lc = self.robot.leg_config(leg);
        let sample = swing_position(plan, phase);
        let rel = rot.inverse() * (sample.p_f - est.p);
        let local = rel - self.robot.hip_offsets[leg];
        let q_ik = ik(&lc, &local).q;
        let (q_des, flags) = apply_reflection(&lc, &q_ik, &self.dq[leg], crate::policy::DQ_BOUND);
        let v_rel = rot.inverse() * (sample.v_f - est.pdot - est.omega.cross(&(rot * rel)));
        let qd_des = damped_solve(&jacobian(&lc, &q_ik), &v_rel, 1e-3);
        (
            FootCommand { p_f: sample.p_f, q_des, qd_des },
            flags.offset_clamped || flags.limit_clamped,
        )
    }

    /// Joint torques for this 1 ms step.
    pub fn torques(&mut self, est: &BodyState, sim: &SimState) -> [Vector3<f64>; NUM_LEGS] {
        let (phases, modes) = self.scheduler.update(sim.time, sim.foot_contacts);
        let prev = self.modes;
        self.phases = phases;
        self.modes = modes;
        let rot = sim.rotation();
        let feet = sim.foot_positions(&self.robot);
        let sched = self.params.gait;
        let limit = self.robot.torque_limit;
        self.reflection_clamped = false;
        std::array::from_fn(|leg| {
            let lc = self.robot.leg_config(leg);
            let js = sim.joints[leg];
            match self.modes[leg] {
                LegMode::Swing => {
                    self.holds[leg] = None;
                    if prev[leg] != LegMode::Swing || self.plans[leg].is_none() {
                        let mut target = self.targets[leg];
                        target.z = feet[leg].z;
                        self.plans[leg] = Some(SwingPlan::new(feet[leg], target, self.params.swing_height, sched.swing_time()));
                    }
                    let plan = self.plans[leg].expect("swing plan");
                    let (cmd, clamped) = self.swing_command(leg, &plan, self.phases[leg].phase, est, rot);
                    self.reflection_clamped |= clamped;
                    swing_torques(&js.q, &js.qd, &cmd.q_des, &cmd.qd_des, self.params.swing_gains, limit)
                }
                LegMode::LateContact => {
                    let hold = match (self.holds[leg], &self.plans[leg]) {
                        (Some(q), _) => q,
                        (None, Some(plan)) => {
                            let q = self.swing_command(leg, plan, 1.0, est, rot).0.q_des;
                            self.holds[leg] = Some(q);
                            q
                        }
                        (None, None) => *self.holds[leg].get_or_insert(js.q),
                    };
                    swing_torques(&js.q, &js.qd, &hold, &Vector3::zeros(), self.params.hold_gains, limit)
                }
                LegMode::Stance | LegMode::EarlyContact => {
                    self.plans[leg] = None;
                    if self.force_legs[leg] {
                        self.holds[leg] = None;
                        crate::kinematics::clamp_torque(&stance_torques(&lc, &js.q, &self.forces[leg], rot), limit)
                    } else {
                        // Touched down between ticks: hold until the MPC includes this leg.
                        let hold = *self.holds[leg].get_or_insert(js.q);
                        swing_torques(&js.q, &js.qd, &hold, &Vector3::zeros(), self.params.hold_gains, limit)
                    }
                }
            }
        })
    }

    pub fn reset(&mut self) {
        *self = Self::new(self.robot.clone(), self.params);
    }
}
