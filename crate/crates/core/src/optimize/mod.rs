//! Dense convex QP/LP solving via ADMM operator splitting, with an
//! active-set polish step and KKT-based solution differentiation.
//!
//! One kernel serves QPs, LPs (zero quadratic), and the projection
//! sub-problems of the network module.

mod admm;

pub use admm::QpKernel;

use crate::numerics::{Matrix, NumericsError, Vector};
use thiserror::Error;

/// Bounds at or beyond this magnitude are treated as +-infinity.
pub const INF_BOUND: f64 = 1e30;

/// Dual/slack threshold separating active from inactive constraints when
/// differentiating a solution.
pub const ACTIVE_SET_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum OptimizeError {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("invalid settings: {0}")]
    InvalidSettings(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("KKT factorization failed: {0}")]
    Factorization(#[from] NumericsError),
    #[error("constraint {row} is weakly active (|dual| <= {ACTIVE_SET_TOL:.0e} with tight slack)")]
    DegenerateActiveSet { row: usize },
    #[error("solution status {0:?} does not permit this operation")]
    NotSolved(QpStatus),
}

/// Convex QP in the form
/// `min 1/2 zᵀPz + qᵀz  s.t.  lower <= Az <= upper`,
/// with equalities encoded as `lower == upper`.
#[derive(Clone, Debug)]
pub struct QpProblem {
    pub p_mat: Matrix,
    pub q_vec: Vector,
    pub a_mat: Matrix,
    pub lower: Vector,
    pub upper: Vector,
}

impl QpProblem {
    pub fn new(
        p_mat: Matrix,
        q_vec: Vector,
        a_mat: Matrix,
        lower: Vector,
        upper: Vector,
    ) -> Result<Self, OptimizeError> {
        let n = q_vec.len();
        let m = a_mat.rows();
        if p_mat.rows() != n || p_mat.cols() != n {
            return Err(OptimizeError::DimensionMismatch(format!(
                "P is {}x{}, expected {n}x{n}",
                p_mat.rows(),
                p_mat.cols()
            )));
        }
        if a_mat.cols() != n {
            return Err(OptimizeError::DimensionMismatch(format!(
                "A has {} columns, expected {n}",
                a_mat.cols()
            )));
        }
        if lower.len() != m || upper.len() != m {
            return Err(OptimizeError::DimensionMismatch(format!(
                "bounds have {}/{} entries, expected {m}",
                lower.len(),
                upper.len()
            )));
        }
        if !p_mat.is_symmetric(1e-12) {
            return Err(OptimizeError::InvalidProblem(
                "P is not symmetric within 1e-12".to_string(),
            ));
        }
        for i in 0..m {
            if lower[i] > upper[i] {
                return Err(OptimizeError::InvalidProblem(format!(
                    "lower[{i}] = {} exceeds upper[{i}] = {}",
                    lower[i], upper[i]
                )));
            }
        }
        Ok(Self {
            p_mat,
            q_vec,
            a_mat,
            lower,
            upper,
        })
    }

    pub fn num_vars(&self) -> usize {
        self.q_vec.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.a_mat.rows()
    }

    /// True when row `i` encodes an equality (lower == upper).
    pub fn is_equality_row(&self, i: usize) -> bool {
        (self.upper[i] - self.lower[i]).abs() <= 1e-12
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QpStatus {
    Solved,
    MaxIter,
    PrimalInfeasible,
    DualInfeasible,
}

#[derive(Clone, Debug)]
pub struct QpSolution {
    pub z_star: Vector,
    pub y_star: Vector,
    pub status: QpStatus,
    pub prim_res: f64,
    pub dual_res: f64,
    pub iterations: usize,
    pub polished: bool,
}

/// ADMM parameters. `rho` is the initial step weight; rows with
/// `lower == upper` carry the standard 1e3 equality boost. When
/// `adaptive_rho` is on (the default, matching OSQP), rho is rescaled by
/// the normalized primal/dual residual ratio at check points — a
/// deterministic rule, so seeded runs stay bit-reproducible.
#[derive(Clone, Debug)]
pub struct SolverSettings {
    pub rho: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iter: usize,
    pub polish: bool,
    pub adaptive_rho: bool,
    pub eps_prim_inf: f64,
    pub eps_dual_inf: f64,
    pub check_interval: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            eps_abs: 1e-6,
            eps_rel: 1e-6,
            max_iter: 20_000,
            polish: true,
            adaptive_rho: true,
            eps_prim_inf: 1e-7,
            eps_dual_inf: 1e-7,
            check_interval: 25,
        }
    }
}

impl SolverSettings {
    /// Tighter tolerances for the internal support LPs and projection
    /// sub-problems whose answers feed 1e-7/1e-8 set comparisons. These
    /// small, well-scaled problems converge best at the fixed rho, so
    /// adaptation stays off here.
    pub fn tight() -> Self {
        Self {
            eps_abs: 1e-9,
            eps_rel: 1e-9,
            max_iter: 100_000,
            adaptive_rho: false,
            ..Self::default()
        }
    }

    // negated comparisons reject NaN parameters as invalid
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), OptimizeError> {
        if !(self.rho > 0.0) {
            return Err(OptimizeError::InvalidSettings("rho must be > 0".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 2.0) {
            return Err(OptimizeError::InvalidSettings(
                "alpha must lie in (0, 2)".into(),
            ));
        }
        if !(self.sigma > 0.0) {
            return Err(OptimizeError::InvalidSettings("sigma must be > 0".into()));
        }
        if self.max_iter == 0 || self.check_interval == 0 {
            return Err(OptimizeError::InvalidSettings(
                "iteration counts must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Solves the QP from a cold start. Factors the KKT system once; callers
/// that re-solve the same (P, A) with different data should hold a
/// [`QpKernel`] instead.
pub fn qp_solve(prob: &QpProblem, settings: &SolverSettings) -> Result<QpSolution, OptimizeError> {
    let kernel = QpKernel::new(prob.p_mat.clone(), prob.a_mat.clone(), settings.clone())?;
    kernel.solve(&prob.q_vec, &prob.lower, &prob.upper)
}

/// Primal, dual, and complementarity residuals of a candidate solution.
pub fn kkt_residuals(prob: &QpProblem, sol: &QpSolution) -> (f64, f64, f64) {
    let az = prob.a_mat.matvec(&sol.z_star);
    let mut prim = 0.0_f64;
    let mut comp = 0.0_f64;
    for i in 0..az.len() {
        let clamped = az[i].clamp(prob.lower[i], prob.upper[i]);
        prim = prim.max((clamped - az[i]).abs());
        let y = sol.y_star[i];
        if y > 0.0 {
            comp = comp.max(y.abs() * (prob.upper[i] - az[i]).abs());
        } else if y < 0.0 {
            comp = comp.max(y.abs() * (az[i] - prob.lower[i]).abs());
        }
    }
    let mut dual_vec = prob.p_mat.matvec(&sol.z_star);
    dual_vec.axpy(1.0, &prob.q_vec);
    dual_vec.axpy(1.0, &prob.a_mat.tr_matvec(&sol.y_star));
    (prim, dual_vec.inf_norm(), comp)
}

/// Active-set classification of a solved problem's rows.
pub(crate) fn active_rows(
    prob: &QpProblem,
    sol: &QpSolution,
) -> Result<Vec<(usize, ActiveSide)>, OptimizeError> {
    let az = prob.a_mat.matvec(&sol.z_star);
    let mut act = Vec::new();
    for i in 0..prob.num_constraints() {
        if prob.is_equality_row(i) {
            // equalities are active by construction, whatever the multiplier
            act.push((i, ActiveSide::Equality));
            continue;
        }
        let y = sol.y_star[i];
        let slack_lo = if prob.lower[i] <= -INF_BOUND {
            f64::INFINITY
        } else {
            az[i] - prob.lower[i]
        };
        let slack_hi = if prob.upper[i] >= INF_BOUND {
            f64::INFINITY
        } else {
            prob.upper[i] - az[i]
        };
        let slack = slack_lo.min(slack_hi);
        if y.abs() > ACTIVE_SET_TOL {
            if slack < ACTIVE_SET_TOL {
                act.push((
                    i,
                    if y > 0.0 {
                        ActiveSide::Upper
                    } else {
                        ActiveSide::Lower
                    },
                ));
            }
        } else if slack < ACTIVE_SET_TOL {
            return Err(OptimizeError::DegenerateActiveSet { row: i });
        }
    }
    Ok(act)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum ActiveSide {
    Equality,
    Lower,
    Upper,
}

/// Sensitivity of the optimizer `z*` with respect to parameters `theta`
/// entering the linear cost (`dq_dtheta`, n x p) and the constraint bound
/// values (`dbounds_dtheta`, m x p; row i is the derivative of whichever
/// bound of row i binds).
///
/// Differentiating the active-set KKT system
/// `P z + q + A_actᵀ nu = 0,  A_act z = c(theta)` gives
/// `[P A_actᵀ; A_act 0] [dz; dnu] = [-dq/dtheta; dc/dtheta]`.
pub fn qp_solution_jacobian(
    prob: &QpProblem,
    sol: &QpSolution,
    dq_dtheta: &Matrix,
    dbounds_dtheta: &Matrix,
) -> Result<Matrix, OptimizeError> {
    if sol.status != QpStatus::Solved {
        return Err(OptimizeError::NotSolved(sol.status));
    }
    let n = prob.num_vars();
    let p = dq_dtheta.cols();
    if dq_dtheta.rows() != n {
        return Err(OptimizeError::DimensionMismatch(format!(
            "dq_dtheta has {} rows, expected {n}",
            dq_dtheta.rows()
        )));
    }
    if dbounds_dtheta.rows() != prob.num_constraints() || dbounds_dtheta.cols() != p {
        return Err(OptimizeError::DimensionMismatch(
            "dbounds_dtheta shape mismatch".to_string(),
        ));
    }
    let act = active_rows(prob, sol)?;
    let k = act.len();
    let mut a_act = Matrix::zeros(k, n);
    let mut rhs_bot = Matrix::zeros(k, p);
    for (slot, (row, _)) in act.iter().enumerate() {
        a_act.row_mut(slot).copy_from_slice(prob.a_mat.row(*row));
        rhs_bot
            .row_mut(slot)
            .copy_from_slice(dbounds_dtheta.row(*row));
    }
    let mut rhs_cols = Vec::with_capacity(p);
    for j in 0..p {
        let mut col = Vector::zeros(n + k);
        for i in 0..n {
            col[i] = -dq_dtheta[(i, j)];
        }
        for i in 0..k {
            col[n + i] = rhs_bot[(i, j)];
        }
        rhs_cols.push(col);
    }
    let sols = solve_kkt_equality(&prob.p_mat, &a_act, &rhs_cols)?;
    let mut dz = Matrix::zeros(n, p);
    for (j, s) in sols.iter().enumerate() {
        for i in 0..n {
            dz[(i, j)] = s[i];
        }
    }
    Ok(dz)
}

/// Solves `[P Aᵀ; A 0] w = rhs` for each right-hand side, with tiny
/// symmetric regularization and two rounds of iterative refinement against
/// the unregularized system.
pub(crate) fn solve_kkt_equality(
    p_mat: &Matrix,
    a_act: &Matrix,
    rhs_cols: &[Vector],
) -> Result<Vec<Vector>, OptimizeError> {
    let n = p_mat.rows();
    let k = a_act.rows();
    let dim = n + k;
    let scale = p_mat.max_abs().max(a_act.max_abs()).max(1.0);
    let delta = 1e-10 * scale;
    let mut kkt = Matrix::zeros(dim, dim);
    kkt.set_block(0, 0, p_mat);
    if k > 0 {
        kkt.set_block(0, n, &a_act.transpose());
        kkt.set_block(n, 0, a_act);
    }
    let mut kkt_reg = kkt.clone();
    for i in 0..n {
        kkt_reg[(i, i)] += delta;
    }
    for i in n..dim {
        kkt_reg[(i, i)] -= delta;
    }
    let factor = crate::numerics::LdltFactor::factor(&kkt_reg)?;
    let mut out = Vec::with_capacity(rhs_cols.len());
    for rhs in rhs_cols {
        assert_eq!(rhs.len(), dim);
        let mut w = factor.solve(rhs);
        for _ in 0..2 {
            let residual = rhs.sub(&kkt.matvec(&w));
            w.axpy(1.0, &factor.solve(&residual));
        }
        out.push(w);
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
