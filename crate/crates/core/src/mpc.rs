//! Condensed convex MPC over stance-foot ground reaction forces.
//!
//! States are eliminated through `X = A_qp x0 + B_qp U`, leaving the stacked
//! forces as the only decision variables:
//!
//! ```text
//! H = 2 (B_qpᵀ Q̄ B_qp + R I)
//! q = 2 B_qpᵀ Q̄ (A_qp x0 - X_ref)
//! ```
//!
//! Each stance foot at each step carries a friction pyramid and normal-force
//! bounds. With `f_min ≥ 0` the problem is always feasible: zero tangential
//! force with `f_z = f_min` satisfies every row, so the solver never has to
//! report infeasibility.

use std::time::Duration;

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gait::GaitTable;
use crate::model::{
    build_continuous_dynamics, discretize, rot_z, AugmentedState, BodyState, Compensation, DiscreteDynamics,
    STATE_DIM,
};
use crate::qp::{solve_qp_warm, ForceIndex, KktResiduals, QpProblem, QpSolution, DEFAULT_TOL};
use crate::robot::{RobotParams, NUM_LEGS};

pub const DEFAULT_HORIZON: usize = 10;
pub const DEFAULT_DT: f64 = 0.03;

/// Body-frame velocity command plus yaw rate and stand height.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Command {
    pub v_des: Vector3<f64>,
    pub yaw_rate: f64,
    pub z0: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceTrajectory {
    pub x_ref: Vec<AugmentedState>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MpcWeights {
    pub q: [f64; STATE_DIM],
    pub r: f64,
}

impl Default for MpcWeights {
    fn default() -> Self {
        Self {
            q: [25.0, 25.0, 10.0, 2.0, 2.0, 50.0, 0.5, 0.5, 0.3, 1.5, 1.5, 1.0, 0.0],
            r: 1e-10,
        }
    }
}

impl MpcWeights {
    pub fn validate(&self) -> Result<()> {
        if self.q.iter().any(|w| !(*w >= 0.0)) || !(self.r > 0.0) {
            return Err(Error::Config("MPC weights need Q >= 0 and R > 0".into()));
        }
        Ok(())
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            q: self.q.map(|w| w * k),
            r: self.r * k,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrictionParams {
    pub mu: f64,
    pub f_min: f64,
    pub f_max: f64,
}

impl FrictionParams {
    pub fn for_robot(params: &RobotParams) -> Self {
        Self {
            mu: 0.4,
            f_min: 0.0,
            f_max: params.f_max,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0) || !(self.f_min >= 0.0 && self.f_min < self.f_max) {
            return Err(Error::Config("friction needs mu > 0 and 0 <= f_min < f_max".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MpcConfig {
    pub horizon: usize,
    pub dt: f64,
    pub weights: MpcWeights,
    pub tol: f64,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon: DEFAULT_HORIZON,
            dt: DEFAULT_DT,
            weights: MpcWeights::default(),
            tol: DEFAULT_TOL,
        }
    }
}

/// Integrates the command from the current pose; roll and pitch references are zero.
pub fn build_reference(state: &BodyState, cmd: &Command, dt: f64, horizon: usize) -> ReferenceTrajectory {
    let mut yaw = state.yaw();
    let mut xy = Vector3::new(state.p.x, state.p.y, 0.0);
    let x_ref = (0..horizon)
        .map(|i| {
            let vel_world = rot_z(yaw) * cmd.v_des;
            xy += Vector3::new(vel_world.x, vel_world.y, 0.0) * dt;
            yaw = state.yaw() + cmd.yaw_rate * dt * (i + 1) as f64;
            let rate_world = rot_z(yaw) * cmd.v_des;
            AugmentedState::from_body(&BodyState {
                theta: Vector3::new(0.0, 0.0, yaw),
                p: Vector3::new(xy.x, xy.y, cmd.z0),
                omega: Vector3::new(0.0, 0.0, cmd.yaw_rate),
                pdot: Vector3::new(rate_world.x, rate_world.y, 0.0),
            })
        })
        .collect();
    ReferenceTrajectory { x_ref }
}

/// Keeps only the force columns of the given stance subset.
pub fn select_stance(full: &DiscreteDynamics, stance: [bool; NUM_LEGS]) -> DiscreteDynamics {
    let mut cols = Vec::new();
    let mut full_col = 0;
    for leg in 0..NUM_LEGS {
        if full.stance[leg] {
            if stance[leg] {
                cols.extend(full_col..full_col + 3);
            }
            full_col += 3;
        }
    }
    let b = DMatrix::from_fn(STATE_DIM, cols.len(), |r, c| full.b[(r, cols[c])]);
    let stance = std::array::from_fn(|leg| full.stance[leg] && stance[leg]);
    DiscreteDynamics {
        a: full.a,
        b,
        dt: full.dt,
        stance,
    }
}

pub fn build_qp(
    dyn_per_step: &[DiscreteDynamics],
    x0: &AugmentedState,
    reference: &ReferenceTrajectory,
    gait: &GaitTable,
    weights: &MpcWeights,
    friction: &FrictionParams,
) -> Result<QpProblem> {
    weights.validate()?;
    friction.validate()?;
    let horizon = gait.horizon();
    for (context, actual) in [("per-step dynamics", dyn_per_step.len()), ("reference", reference.x_ref.len())] {
        if actual != horizon {
            return Err(Error::DimensionMismatch { context, expected: horizon, actual });
        }
    }
    let mut index = Vec::new();
    let mut offsets = Vec::with_capacity(horizon);
    for (step, (d, row)) in dyn_per_step.iter().zip(&gait.contact).enumerate() {
        let expected = 3 * row.iter().filter(|c| **c).count();
        if d.b.ncols() != expected || d.stance != *row {
            return Err(Error::DimensionMismatch {
                context: "stance columns vs gait row",
                expected,
                actual: d.b.ncols(),
            });
        }
        offsets.push(index.len());
        for leg in (0..NUM_LEGS).filter(|l| row[*l]) {
            for axis in 0..3 {
                index.push(ForceIndex { step, leg, axis });
            }
        }
    }
    let n = index.len();
    if n == 0 {
        return Ok(QpProblem::empty(horizon));
    }

    let nx = STATE_DIM * horizon;
    let mut b_qp = DMatrix::zeros(nx, n);
    for i in 0..horizon {
        let a = &dyn_per_step[i].a;
        if i > 0 {
            let prev = b_qp.view((STATE_DIM * (i - 1), 0), (STATE_DIM, offsets[i])).into_owned();
            b_qp.view_mut((STATE_DIM * i, 0), (STATE_DIM, offsets[i])).copy_from(&(a * prev));
        }
        let bi = &dyn_per_step[i].b;
        b_qp.view_mut((STATE_DIM * i, offsets[i]), (STATE_DIM, bi.ncols())).copy_from(bi);
    }

    let q_diag = DVector::from_fn(nx, |r, _| weights.q[r % STATE_DIM]);
    let mut qb = b_qp.clone();
    for r in 0..nx {
        qb.row_mut(r).scale_mut(q_diag[r]);
    }
    let mut h = b_qp.transpose() * &qb;
    for i in 0..n {
        h[(i, i)] += weights.r;
    }
    h *= 2.0;
    // Symmetrize against round-off in the product.
    let h = (&h + h.transpose()) * 0.5;

    let mut err = DVector::zeros(nx);
    let mut prop = *x0.as_vector();
    for i in 0..horizon {
        prop = dyn_per_step[i].a * prop;
        let r = reference.x_ref[i].as_vector();
        for k in 0..STATE_DIM {
            err[STATE_DIM * i + k] = prop[k] - r[k];
        }
    }
    let q_lin = (qb.transpose() * err) * 2.0;

    let n_feet = n / 3;
    let m = 5 * n_feet;
    let mut c = DMatrix::zeros(m, n);
    let mut lo = DVector::zeros(m);
    let mut hi = DVector::zeros(m);
    let mu = friction.mu;
    for foot in 0..n_feet {
        let (fx, fy, fz) = (3 * foot, 3 * foot + 1, 3 * foot + 2);
        let r = 5 * foot;
        for (k, tangent) in [fx, fy].into_iter().enumerate() {
            c[(r + 2 * k, tangent)] = 1.0;
            c[(r + 2 * k, fz)] = -mu;
            lo[r + 2 * k] = f64::NEG_INFINITY;
            hi[r + 2 * k] = 0.0;
            c[(r + 2 * k + 1, tangent)] = 1.0;
            c[(r + 2 * k + 1, fz)] = mu;
            lo[r + 2 * k + 1] = 0.0;
            hi[r + 2 * k + 1] = f64::INFINITY;
        }
        c[(r + 4, fz)] = 1.0;
        lo[r + 4] = friction.f_min;
        hi[r + 4] = friction.f_max;
    }

    if h.iter().chain(q_lin.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("condensed QP"));
    }
    if (0..n).any(|i| h[(i, i)] <= 0.0) {
        return Err(Error::NotPositiveDefinite);
    }
    Ok(QpProblem {
        h,
        q: q_lin,
        c,
        lo,
        hi,
        index,
        horizon,
    })
}

/// Per-step forces for every leg; zeros for legs not in stance at that step.
pub fn forces_by_step(problem: &QpProblem, x: &DVector<f64>) -> Vec<[Vector3<f64>; NUM_LEGS]> {
    let mut out = vec![[Vector3::zeros(); NUM_LEGS]; problem.horizon];
    for (k, idx) in problem.index.iter().enumerate() {
        out[idx.step][idx.leg][idx.axis] = x[k];
    }
    out
}

#[derive(Clone, Debug)]
pub struct MpcOutput {
    /// First-step forces on the robot (world frame); zero for swing legs.
    pub forces_now: [Vector3<f64>; NUM_LEGS],
    /// `forces_now / m`, the mass-normalized command seen by the policy.
    pub accel_obs: [Vector3<f64>; NUM_LEGS],
    pub kkt: KktResiduals,
    pub certified: bool,
    pub iterations: usize,
    pub solve_time: Duration,
    pub n_vars: usize,
}

/// One MPC instance per control loop; carries the warm start between ticks.
#[derive(Clone, Debug)]
pub struct MpcController {
    pub config: MpcConfig,
    pub friction: FrictionParams,
    previous: Option<Vec<[Vector3<f64>; NUM_LEGS]>>,
    previous_gait: Option<GaitTable>,
}

impl MpcController {
    pub fn new(config: MpcConfig, friction: FrictionParams) -> Self {
        Self {
            config,
            friction,
            previous: None,
            previous_gait: None,
        }
    }

    pub fn reset(&mut self) {
        self.previous = None;
        self.previous_gait = None;
    }

    fn warm_start(&self, problem: &QpProblem, gait: &GaitTable, weight: f64) -> DVector<f64> {
        let shifted = |step: usize, leg: usize| -> Option<Vector3<f64>> {
            let prev = self.previous.as_ref()?;
            let prev_gait = self.previous_gait.as_ref()?;
            let s = step + 1;
            (s < prev.len() && prev_gait.contact[s][leg]).then(|| prev[s][leg])
        };
        DVector::from_fn(problem.n(), |k, _| {
            let idx = problem.index[k];
            match shifted(idx.step, idx.leg) {
                Some(f) => f[idx.axis],
                None if idx.axis == 2 => {
                    let n = gait.contact[idx.step].iter().filter(|c| **c).count().max(1);
                    (weight / n as f64).min(self.friction.f_max * 0.9)
                }
                None => 0.0,
            }
        })
    }

    /// Solves the horizon problem from the current state and returns the
    /// first-step forces.
    #[allow(clippy::too_many_arguments)]
    pub fn tick(
        &mut self,
        state: &BodyState,
        feet_world: &[Vector3<f64>; NUM_LEGS],
        gait: &GaitTable,
        cmd: &Command,
        comp: &Compensation,
        params: &RobotParams,
    ) -> Result<MpcOutput> {
        let cfg = &self.config;
        if gait.horizon() != cfg.horizon {
            return Err(Error::DimensionMismatch {
                context: "gait table horizon",
                expected: cfg.horizon,
                actual: gait.horizon(),
            });
        }
        let reference = build_reference(state, cmd, cfg.dt, cfg.horizon);
        // Each step is linearized about the midpoint of its reference segment,
        // so moment arms follow the body instead of lagging by v*dt per step.
        let mut per_step = Vec::with_capacity(cfg.horizon);
        let mut prev = *state;
        for (row, x_ref) in gait.contact.iter().zip(&reference.x_ref) {
            let next = x_ref.body();
            let mid = BodyState {
                theta: Vector3::new(state.theta.x, state.theta.y, 0.5 * (prev.theta.z + next.theta.z)),
                p: (prev.p + next.p) * 0.5,
                ..*state
            };
            let cont = build_continuous_dynamics(&mid, feet_world, [true; NUM_LEGS], params, comp)?;
            per_step.push(select_stance(&discretize(&cont, cfg.dt), *row));
            prev = next;
        }
        let x0 = AugmentedState::from_body(state);
        let problem = build_qp(&per_step, &x0, &reference, gait, &cfg.weights, &self.friction)?;
        let warm = self.warm_start(&problem, gait, params.weight());
        let sol: QpSolution = solve_qp_warm(&problem, cfg.tol, Some(&warm))?;
        let by_step = forces_by_step(&problem, &sol.x);
        let forces_now = by_step.first().copied().unwrap_or([Vector3::zeros(); NUM_LEGS]);
        let accel_obs = forces_now.map(|f| f / params.mass);
        self.previous = Some(by_step);
        self.previous_gait = Some(gait.clone());
        Ok(MpcOutput {
            forces_now,
            accel_obs,
            kkt: sol.kkt,
            certified: sol.certified,
            iterations: sol.iterations,
            solve_time: sol.solve_time,
            n_vars: problem.n(),
        })
    }
}
