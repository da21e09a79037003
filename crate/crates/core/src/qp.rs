//! Dense convex QP solver.
//!
//! Solves `min ½ xᵀHx + qᵀx  s.t.  lo ≤ Cx ≤ hi` with a Mehrotra
//! predictor-corrector primal-dual interior-point method. Each finite bound
//! becomes a one-sided row `g x ≤ h`. Rows of `C` are stored sparsely, so the
//! normal matrix `H + Gᵀ W G` costs one dense Cholesky per iteration plus a
//! few rank-one updates per constraint.
//!
//! The returned iterate is certified against the KKT conditions of the
//! original (unscaled) problem.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-6;
const MAX_ITERATIONS: usize = 100;
const STEP_FRACTION: f64 = 0.99;
const STALL_MU: f64 = 1e-9;

/// Identifies which force component a decision variable is.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ForceIndex {
    pub step: usize,
    pub leg: usize,
    pub axis: usize,
}

#[derive(Clone, Debug)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub q: DVector<f64>,
    pub c: DMatrix<f64>,
    pub lo: DVector<f64>,
    pub hi: DVector<f64>,
    /// Empty for problems not built from an MPC horizon.
    pub index: Vec<ForceIndex>,
    pub horizon: usize,
}

impl QpProblem {
    pub fn n(&self) -> usize {
        self.q.len()
    }

    pub fn empty(horizon: usize) -> Self {
        Self {
            h: DMatrix::zeros(0, 0),
            q: DVector::zeros(0),
            c: DMatrix::zeros(0, 0),
            lo: DVector::zeros(0),
            hi: DVector::zeros(0),
            index: Vec::new(),
            horizon,
        }
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        if x.is_empty() {
            return 0.0;
        }
        0.5 * x.dot(&(&self.h * x)) + self.q.dot(x)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        let dims = [
            ("Hessian rows", self.h.nrows()),
            ("Hessian cols", self.h.ncols()),
            ("constraint cols", if self.c.nrows() == 0 { n } else { self.c.ncols() }),
        ];
        for (context, actual) in dims {
            if actual != n {
                return Err(Error::DimensionMismatch { context, expected: n, actual });
            }
        }
        let m = self.c.nrows();
        for (context, actual) in [("lower bounds", self.lo.len()), ("upper bounds", self.hi.len())] {
            if actual != m {
                return Err(Error::DimensionMismatch { context, expected: m, actual });
            }
        }
        if !self.index.is_empty() && self.index.len() != n {
            return Err(Error::DimensionMismatch {
                context: "force index map",
                expected: n,
                actual: self.index.len(),
            });
        }
        Ok(())
    }
}

/// Infinity-norm KKT residuals of the original problem.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal)
            .max(self.dual)
            .max(self.complementarity)
    }
}

#[derive(Clone, Debug)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Multipliers for `lo ≤ Cx` and `Cx ≤ hi`, both non-negative.
    pub lambda_lo: DVector<f64>,
    pub lambda_hi: DVector<f64>,
    pub objective: f64,
    pub kkt: KktResiduals,
    pub iterations: usize,
    pub solve_time: Duration,
    /// False when a KKT residual of the original problem exceeds `tol`.
    pub certified: bool,
}

impl QpSolution {
    fn empty() -> Self {
        Self {
            x: DVector::zeros(0),
            lambda_lo: DVector::zeros(0),
            lambda_hi: DVector::zeros(0),
            objective: 0.0,
            kkt: KktResiduals::default(),
            iterations: 0,
            solve_time: Duration::ZERO,
            certified: true,
        }
    }
}

struct SparseRow {
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseRow {
    fn dot(&self, x: &DVector<f64>) -> f64 {
        self.cols.iter().zip(&self.vals).map(|(&j, &v)| v * x[j]).sum()
    }
}

/// One-sided constraint `sign * c_row · x ≤ bound`.
struct OneSided {
    row: usize,
    sign: f64,
    bound: f64,
}

pub fn solve_qp(p: &QpProblem, tol: f64) -> Result<QpSolution> {
    solve_qp_warm(p, tol, None)
}

/// Solves with an optional primal starting point.
pub fn solve_qp_warm(p: &QpProblem, tol: f64, warm: Option<&DVector<f64>>) -> Result<QpSolution> {
    p.validate()?;
    let start = Instant::now();
    let n = p.n();
    if n == 0 {
        return Ok(QpSolution::empty());
    }
    if p.h.iter().chain(p.q.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("QP data"));
    }

    let rows: Vec<SparseRow> = (0..p.c.nrows())
        .map(|i| {
            let mut cols = Vec::new();
            let mut vals = Vec::new();
            for j in 0..n {
                let v = p.c[(i, j)];
                if v != 0.0 {
                    cols.push(j);
                    vals.push(v);
                }
            }
            SparseRow { cols, vals }
        })
        .collect();
    let mut cons = Vec::new();
    for i in 0..rows.len() {
        if p.lo[i].is_finite() {
            cons.push(OneSided { row: i, sign: -1.0, bound: -p.lo[i] });
        }
        if p.hi[i].is_finite() {
            cons.push(OneSided { row: i, sign: 1.0, bound: p.hi[i] });
        }
    }
    let m = cons.len();

    let hmax = (0..n).map(|i| p.h[(i, i)].abs()).fold(0.0_f64, f64::max);
    if hmax <= 0.0 {
        return Err(Error::NotPositiveDefinite);
    }
    let scale = 1.0 / hmax;
    let hs = &p.h * scale;
    let qs = &p.q * scale;

    let gx = |x: &DVector<f64>, k: usize| cons[k].sign * rows[cons[k].row].dot(x);
    // y += Gᵀ v
    let add_gt = |y: &mut DVector<f64>, v: &DVector<f64>| {
        for (k, c) in cons.iter().enumerate() {
            let r = &rows[c.row];
            let w = c.sign * v[k];
            for (&j, &a) in r.cols.iter().zip(&r.vals) {
                y[j] += a * w;
            }
        }
    };

    let mut x = match warm {
        Some(w) if w.len() == n && w.iter().all(|v| v.is_finite()) => w.clone(),
        _ => DVector::zeros(n),
    };
    let mut s = DVector::from_fn(m, |k, _| (cons[k].bound - gx(&x, k)).max(1.0));
    let mut z = DVector::from_element(m, 1.0);

    let qnorm = qs.amax();
    let hnorm = cons.iter().map(|c| c.bound.abs()).fold(0.0, f64::max);
    let eps_d = 1e-11 * (1.0 + qnorm);
    let eps_p = 1e-11 * (1.0 + hnorm);
    let eps_mu = 1e-13;

    let multipliers = |z: &DVector<f64>| {
        let mut lo = DVector::zeros(rows.len());
        let mut hi = DVector::zeros(rows.len());
        for (k, c) in cons.iter().enumerate() {
            if c.sign < 0.0 {
                lo[c.row] = z[k] / scale;
            } else {
                hi[c.row] = z[k] / scale;
            }
        }
        (lo, hi)
    };

    let mut iterations = 0;
    let mut reg = 0.0;
    while iterations < MAX_ITERATIONS {
        let mut r_d = &hs * &x + &qs;
        add_gt(&mut r_d, &z);
        let r_p = DVector::from_fn(m, |k, _| gx(&x, k) + s[k] - cons[k].bound);
        let mu = if m > 0 { s.dot(&z) / m as f64 } else { 0.0 };
        if r_d.amax() <= eps_d && r_p.amax() <= eps_p && mu <= eps_mu {
            break;
        }
        // Near round-off the scaled residuals can stall above their
        // thresholds; stop once the original problem is solved well inside tol.
        if mu <= STALL_MU {
            let (lo, hi) = multipliers(&z);
            if kkt_residuals(p, &x, &lo, &hi).max() <= 1e-3 * tol {
                break;
            }
        }
        iterations += 1;

        let mut mat = hs.clone();
        for (k, c) in cons.iter().enumerate() {
            let w = z[k] / s[k];
            let r = &rows[c.row];
            for (a, (&ja, &va)) in r.cols.iter().zip(&r.vals).enumerate() {
                for (&jb, &vb) in r.cols.iter().zip(&r.vals).skip(a) {
                    let add = w * va * vb;
                    mat[(ja, jb)] += add;
                    if ja != jb {
                        mat[(jb, ja)] += add;
                    }
                }
            }
        }
        // Regularization relative to the largest diagonal: the barrier terms
        // grow without bound near convergence.
        let dmax = (0..n).map(|i| mat[(i, i)]).fold(1.0_f64, f64::max);
        let chol = loop {
            let mut trial = mat.clone();
            if reg > 0.0 {
                for i in 0..n {
                    trial[(i, i)] += reg * dmax;
                }
            }
            match trial.cholesky() {
                Some(c) => break c,
                None if reg < 1e-6 => reg = if reg == 0.0 { 1e-15 } else { reg * 100.0 },
                None => return Err(Error::NotPositiveDefinite),
            }
        };

        let newton = |r_c: &DVector<f64>| {
            // (H + Gᵀ S⁻¹Z G) dx = -r_d + Gᵀ S⁻¹ (r_c - Z r_p)
            let v = DVector::from_fn(m, |k, _| (r_c[k] - z[k] * r_p[k]) / s[k]);
            let mut rhs = -&r_d;
            add_gt(&mut rhs, &v);
            let dx = chol.solve(&rhs);
            let ds = DVector::from_fn(m, |k, _| -r_p[k] - gx(&dx, k));
            let dz = DVector::from_fn(m, |k, _| (-r_c[k] - z[k] * ds[k]) / s[k]);
            (dx, ds, dz)
        };
        let max_step = |ds: &DVector<f64>, dz: &DVector<f64>| {
            let mut a: f64 = 1.0;
            for k in 0..m {
                if ds[k] < 0.0 {
                    a = a.min(-s[k] / ds[k]);
                }
                if dz[k] < 0.0 {
                    a = a.min(-z[k] / dz[k]);
                }
            }
            a
        };

        let r_c_aff = s.component_mul(&z);
        let (_, ds_a, dz_a) = newton(&r_c_aff);
        let a_aff = max_step(&ds_a, &dz_a);
        let mu_aff = if m > 0 {
            (&s + &ds_a * a_aff).dot(&(&z + &dz_a * a_aff)) / m as f64
        } else {
            0.0
        };
        let sigma = if mu > 0.0 { (mu_aff / mu).powi(3).clamp(0.0, 1.0) } else { 0.0 };
        let r_c = DVector::from_fn(m, |k, _| s[k] * z[k] + ds_a[k] * dz_a[k] - sigma * mu);
        let (dx, ds, dz) = newton(&r_c);
        let alpha = if m == 0 { 1.0 } else { (STEP_FRACTION * max_step(&ds, &dz)).min(1.0) };
        x += &dx * alpha;
        s += &ds * alpha;
        z += &dz * alpha;
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("QP iterate"));
        }
    }

    let (lambda_lo, lambda_hi) = multipliers(&z);
    let kkt = kkt_residuals(p, &x, &lambda_lo, &lambda_hi);
    let certified = kkt.max() <= tol;
    Ok(QpSolution {
        objective: p.objective(&x),
        x,
        lambda_lo,
        lambda_hi,
        kkt,
        iterations,
        solve_time: start.elapsed(),
        certified,
    })
}

/// KKT residuals for a candidate primal-dual pair of the original problem.
pub fn kkt_residuals(
    p: &QpProblem,
    x: &DVector<f64>,
    lambda_lo: &DVector<f64>,
    lambda_hi: &DVector<f64>,
) -> KktResiduals {
    if x.is_empty() {
        return KktResiduals::default();
    }
    let cx = &p.c * x;
    let mut grad = &p.h * x + &p.q;
    if p.c.nrows() > 0 {
        grad += p.c.transpose() * (lambda_hi - lambda_lo);
    }
    let mut primal: f64 = 0.0;
    let mut dual: f64 = 0.0;
    let mut comp: f64 = 0.0;
    for i in 0..cx.len() {
        if p.lo[i].is_finite() {
            primal = primal.max(p.lo[i] - cx[i]);
            comp = comp.max((lambda_lo[i] * (cx[i] - p.lo[i])).abs());
        }
        if p.hi[i].is_finite() {
            primal = primal.max(cx[i] - p.hi[i]);
            comp = comp.max((lambda_hi[i] * (p.hi[i] - cx[i])).abs());
        }
        dual = dual.max(-lambda_lo[i]).max(-lambda_hi[i]);
    }
    KktResiduals {
        stationarity: grad.amax(),
        primal,
        dual,
        complementarity: comp,
    }
}
