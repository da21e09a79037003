//! Single-rigid-body dynamics with additive acceleration compensation.
//!
//! The 13-dimensional state `[Θ, p, ω, ṗ, 1]` carries a constant last entry
//! so that gravity and the compensation accelerations enter through the last
//! column of `A_c`. That makes `A_c` strictly upper block-triangular with
//! `A_c^3 = 0`, and the zero-order-hold series terminates after the
//! quadratic term.

use nalgebra::{DMatrix, DVector, Matrix3, SMatrix, SVector, Vector3};

use crate::error::{Error, Result};
use crate::robot::{RobotParams, NUM_LEGS};

pub const STATE_DIM: usize = 13;
pub const GRAVITY_MAGNITUDE: f64 = 9.81;

pub type StateMatrix = SMatrix<f64, STATE_DIM, STATE_DIM>;
pub type StateVector = SVector<f64, STATE_DIM>;

pub fn gravity() -> Vector3<f64> {
    Vector3::new(0.0, 0.0, -GRAVITY_MAGNITUDE)
}

/// Rigid-body state. `theta` is (roll, pitch, yaw); the rest is world frame.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BodyState {
    pub theta: Vector3<f64>,
    pub p: Vector3<f64>,
    pub omega: Vector3<f64>,
    pub pdot: Vector3<f64>,
}

impl BodyState {
    pub fn yaw(&self) -> f64 {
        self.theta.z
    }

    pub fn is_finite(&self) -> bool {
        [self.theta, self.p, self.omega, self.pdot]
            .iter()
            .all(|v| v.iter().all(|x| x.is_finite()))
    }
}

/// Residual angular and linear accelerations added to the model.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Compensation {
    pub dalpha: Vector3<f64>,
    pub da: Vector3<f64>,
}

impl Compensation {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn is_zero(&self) -> bool {
        self.dalpha == Vector3::zeros() && self.da == Vector3::zeros()
    }
}

impl std::ops::Add for Compensation {
    type Output = Compensation;

    fn add(self, rhs: Compensation) -> Compensation {
        Compensation {
            dalpha: self.dalpha + rhs.dalpha,
            da: self.da + rhs.da,
        }
    }
}

/// `[Θ, p, ω, ṗ, 1]`. The trailing one is an invariant of the type.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentedState(StateVector);

impl AugmentedState {
    pub fn from_body(s: &BodyState) -> Self {
        let mut x = StateVector::zeros();
        x.fixed_rows_mut::<3>(0).copy_from(&s.theta);
        x.fixed_rows_mut::<3>(3).copy_from(&s.p);
        x.fixed_rows_mut::<3>(6).copy_from(&s.omega);
        x.fixed_rows_mut::<3>(9).copy_from(&s.pdot);
        x[12] = 1.0;
        Self(x)
    }

    pub fn from_vector(x: StateVector) -> Result<Self> {
        if x[12] != 1.0 {
            return Err(Error::Config("augmented state must end in 1".into()));
        }
        Ok(Self(x))
    }

    pub fn as_vector(&self) -> &StateVector {
        &self.0
    }

    pub fn body(&self) -> BodyState {
        BodyState {
            theta: self.0.fixed_rows::<3>(0).into_owned(),
            p: self.0.fixed_rows::<3>(3).into_owned(),
            omega: self.0.fixed_rows::<3>(6).into_owned(),
            pdot: self.0.fixed_rows::<3>(9).into_owned(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ContinuousDynamics {
    pub a: StateMatrix,
    /// 13 x 3·n_stance; columns ordered by leg index.
    pub b: DMatrix<f64>,
    pub stance: [bool; NUM_LEGS],
}

impl ContinuousDynamics {
    pub fn n_stance(&self) -> usize {
        self.stance.iter().filter(|s| **s).count()
    }
}

#[derive(Clone, Debug)]
pub struct DiscreteDynamics {
    pub a: StateMatrix,
    pub b: DMatrix<f64>,
    pub dt: f64,
    pub stance: [bool; NUM_LEGS],
}

pub fn rot_z(yaw: f64) -> Matrix3<f64> {
    let (s, c) = yaw.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Body inertia rotated into the world frame by yaw only.
pub fn world_inertia(params: &RobotParams, yaw: f64) -> Matrix3<f64> {
    let rz = rot_z(yaw);
    rz * params.inertia * rz.transpose()
}

fn ensure_finite<'a>(what: &'static str, mut vals: impl Iterator<Item = &'a f64>) -> Result<()> {
    if vals.all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// `A_c` and `B_c` linearized at the current yaw and foot positions.
///
/// Only stance feet produce force columns; `r_i = foot_i - p`.
pub fn build_continuous_dynamics(
    state: &BodyState,
    feet_world: &[Vector3<f64>; NUM_LEGS],
    stance: [bool; NUM_LEGS],
    params: &RobotParams,
    comp: &Compensation,
) -> Result<ContinuousDynamics> {
    if !state.is_finite() {
        return Err(Error::NonFinite("body state"));
    }
    ensure_finite("foot positions", feet_world.iter().flat_map(|f| f.iter()))?;
    ensure_finite("compensation", comp.dalpha.iter().chain(comp.da.iter()))?;

    let yaw = state.yaw();
    let mut a = StateMatrix::zeros();
    // Euler rates from world angular velocity (small roll/pitch): Θ̇ = R_z(ψ)ᵀ ω.
    a.fixed_view_mut::<3, 3>(0, 6).copy_from(&rot_z(yaw).transpose());
    a.fixed_view_mut::<3, 3>(3, 9).copy_from(&Matrix3::identity());
    a.fixed_view_mut::<3, 1>(6, 12).copy_from(&comp.dalpha);
    a.fixed_view_mut::<3, 1>(9, 12).copy_from(&(comp.da + gravity()));

    let n_stance = stance.iter().filter(|s| **s).count();
    let mut b = DMatrix::zeros(STATE_DIM, 3 * n_stance);
    let inv_inertia = world_inertia(params, yaw)
        .try_inverse()
        .ok_or(Error::NotPositiveDefinite)?;
    let lin = Matrix3::identity() / params.mass;
    let mut col = 0;
    for leg in 0..NUM_LEGS {
        if !stance[leg] {
            continue;
        }
        let r = feet_world[leg] - state.p;
        b.fixed_view_mut::<3, 3>(6, col).copy_from(&(inv_inertia * skew(&r)));
        b.fixed_view_mut::<3, 3>(9, col).copy_from(&lin);
        col += 3;
    }
    Ok(ContinuousDynamics { a, b, stance })
}

/// Exact zero-order hold using the terminating series (valid because `A_c^3 = 0`).
pub fn discretize(cont: &ContinuousDynamics, dt: f64) -> DiscreteDynamics {
    let a = &cont.a;
    let a2 = a * a;
    let eye = StateMatrix::identity();
    let a_d = eye + a * dt + a2 * (dt * dt / 2.0);
    let gamma = eye * dt + a * (dt * dt / 2.0) + a2 * (dt * dt * dt / 6.0);
    let b_d = DMatrix::from_iterator(STATE_DIM, STATE_DIM, gamma.iter().copied()) * &cont.b;
    DiscreteDynamics {
        a: a_d,
        b: b_d,
        dt,
        stance: cont.stance,
    }
}

/// One-step prediction `x' = A_d x + B_d u`.
pub fn predict(x: &AugmentedState, u: &DVector<f64>, dyn_d: &DiscreteDynamics) -> Result<AugmentedState> {
    if u.len() != dyn_d.b.ncols() {
        return Err(Error::DimensionMismatch {
            context: "predict input",
            expected: dyn_d.b.ncols(),
            actual: u.len(),
        });
    }
    let mut next = dyn_d.a * x.0;
    if !u.is_empty() {
        let bu = &dyn_d.b * u;
        for i in 0..STATE_DIM {
            next[i] += bu[i];
        }
    }
    next[12] = 1.0;
    Ok(AugmentedState(next))
}
