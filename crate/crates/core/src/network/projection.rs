//! Differentiable projection onto the state-parameterized feasible-input
//! polytope `{u : G u <= h0 - H x}`: inputs stay admissible and the next
//! state stays inside the invariant set, for every state in it.

use crate::mpc::LinearSystem;
use crate::numerics::{LdltFactor, Matrix, Vector};
use crate::optimize::{QpKernel, QpStatus, SolverSettings, ACTIVE_SET_TOL, INF_BOUND};
use crate::polytope::Polytope;

use super::NetworkError;

/// Feasible-input polytope builder and projection solver. Rows come from
/// the input set (state-independent) and from the invariant set pulled
/// back through the dynamics: `(C_A B) u <= C_b - (C_A A) x`.
#[derive(Debug)]
pub struct ProjectionSpec {
    g_mat: Matrix,
    h0_vec: Vector,
    h_x_mat: Matrix,
    kernel: QpKernel,
}

/// Solved projection: the feasible input, the active rows, and the duals.
#[derive(Clone, Debug)]
pub struct Projection {
    pub u: Vector,
    pub active: Vec<usize>,
    pub y: Vector,
}

impl ProjectionSpec {
    pub fn build(
        sys: &LinearSystem,
        u_set: &Polytope,
        cinf: &Polytope,
    ) -> Result<Self, NetworkError> {
        let m = sys.input_dim();
        let n = sys.state_dim();
        if u_set.dim() != m || cinf.dim() != n {
            return Err(NetworkError::DimensionMismatch(
                "constraint sets do not match the system dimensions".to_string(),
            ));
        }
        let cb = cinf.a_mat().matmul(&sys.b_mat);
        let ca = cinf.a_mat().matmul(&sys.a_mat);
        let mut rows: Vec<f64> = Vec::new();
        let mut h0 = Vec::new();
        let mut hx_rows: Vec<f64> = Vec::new();
        for i in 0..u_set.num_rows() {
            rows.extend_from_slice(u_set.a_mat().row(i));
            h0.push(u_set.b_vec()[i]);
            hx_rows.extend(std::iter::repeat_n(0.0, n));
        }
        for i in 0..cinf.num_rows() {
            let g_row = cb.row(i);
            let norm = g_row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < 1e-12 {
                // row does not involve u; membership of x in the invariant
                // set already guarantees it, so it is dropped here
                continue;
            }
            rows.extend(g_row.iter().map(|v| v / norm));
            h0.push(cinf.b_vec()[i] / norm);
            hx_rows.extend(ca.row(i).iter().map(|v| v / norm));
        }
        let k = h0.len();
        let g_mat = Matrix::from_row_major(k, m, rows)
            .map_err(|e| NetworkError::DimensionMismatch(e.to_string()))?;
        let h_x_mat = Matrix::from_row_major(k, n, hx_rows)
            .map_err(|e| NetworkError::DimensionMismatch(e.to_string()))?;
        // tight tolerances for the 1e-8 feasibility contract; adaptive
        // rho handles near-boundary states whose feasible interval is a
        // sliver far from the raw prediction
        let settings = SolverSettings {
            adaptive_rho: true,
            ..SolverSettings::tight()
        };
        let kernel = QpKernel::new(Matrix::identity(m), g_mat.clone(), settings)?;
        Ok(Self {
            g_mat,
            h0_vec: Vector::from_vec_unchecked(h0),
            h_x_mat,
            kernel,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.g_mat.cols()
    }

    pub fn state_dim(&self) -> usize {
        self.h_x_mat.cols()
    }

    pub fn num_rows(&self) -> usize {
        self.g_mat.rows()
    }

    /// Right-hand side `h0 - H x` of the feasible-input polytope at `x`.
    pub fn feasible_rhs(&self, x: &Vector) -> Vector {
        self.h0_vec.sub(&self.h_x_mat.matvec(x))
    }

    /// Per-row slack `h0 - H x - G u`; nonnegative iff `u` is feasible
    /// at `x`.
    pub fn constraint_slack(&self, x: &Vector, u: &Vector) -> Vector {
        self.feasible_rhs(x).sub(&self.g_mat.matvec(u))
    }

    /// Least-squares projection `argmin ||u - u_hat||` over the feasible
    /// inputs at `x`. Infeasibility here falsifies the invariant-set
    /// certificate and is reported as a fatal error.
    pub fn project_feasible(
        &self,
        x: &Vector,
        u_hat: &Vector,
    ) -> Result<Projection, NetworkError> {
        if x.len() != self.state_dim() || u_hat.len() != self.input_dim() {
            return Err(NetworkError::DimensionMismatch(format!(
                "state {} / input {} vs expected {} / {}",
                x.len(),
                u_hat.len(),
                self.state_dim(),
                self.input_dim()
            )));
        }
        let rhs = self.feasible_rhs(x);
        let q = u_hat.scale(-1.0);
        let sol = self
            .kernel
            .solve(&q, &Vector::constant(rhs.len(), -INF_BOUND), &rhs)?;
        match sol.status {
            QpStatus::Solved => {}
            QpStatus::PrimalInfeasible => return Err(NetworkError::InfeasibleProjection),
            other => {
                return Err(NetworkError::Optimize(
                    crate::optimize::OptimizeError::NotSolved(other),
                ))
            }
        }
        let gu = self.g_mat.matvec(&sol.z_star);
        let active = (0..self.num_rows())
            .filter(|&i| sol.y_star[i] > ACTIVE_SET_TOL && rhs[i] - gu[i] < ACTIVE_SET_TOL)
            .collect();
        Ok(Projection {
            u: sol.z_star,
            active,
            y: sol.y_star,
        })
    }

    /// `(du/du_hat, du/dx)` from the KKT system of the projection QP with
    /// active rows `G_A`:
    /// `du/du_hat = I - G_Aᵀ (G_A G_Aᵀ)⁻¹ G_A` and
    /// `du/dx = -G_Aᵀ (G_A G_Aᵀ)⁻¹ H_A`.
    pub fn projection_jacobians(
        &self,
        x: &Vector,
        proj: &Projection,
    ) -> Result<(Matrix, Matrix), NetworkError> {
        // weakly active rows (tight but with a vanishing dual) make the
        // projection non-differentiable
        let rhs = self.feasible_rhs(x);
        let gu = self.g_mat.matvec(&proj.u);
        for i in 0..self.num_rows() {
            let tight = rhs[i] - gu[i] < ACTIVE_SET_TOL;
            if tight && proj.y[i].abs() <= ACTIVE_SET_TOL {
                return Err(NetworkError::DegenerateActiveSet);
            }
        }
        self.jacobians_for_active(&proj.active)
            .ok_or(NetworkError::DegenerateActiveSet)
    }

    /// Jacobians for an explicit active-row list; `None` when `G_A G_Aᵀ`
    /// is singular (linearly dependent active rows).
    pub(crate) fn jacobians_for_active(&self, active: &[usize]) -> Option<(Matrix, Matrix)> {
        let m = self.input_dim();
        let n = self.state_dim();
        let k = active.len();
        if k == 0 {
            return Some((Matrix::identity(m), Matrix::zeros(m, n)));
        }
        let mut g_act = Matrix::zeros(k, m);
        let mut h_act = Matrix::zeros(k, n);
        for (slot, &row) in active.iter().enumerate() {
            g_act.row_mut(slot).copy_from_slice(self.g_mat.row(row));
            h_act.row_mut(slot).copy_from_slice(self.h_x_mat.row(row));
        }
        let gram = g_act.matmul(&g_act.transpose());
        let factor = LdltFactor::factor(&gram).ok()?;
        if factor.diagonal().iter().any(|&d| d <= 0.0) {
            return None;
        }
        // M⁻¹ G_A and M⁻¹ H_A, column by column
        let solve_through = |rhs: &Matrix| -> Matrix {
            let mut out = Matrix::zeros(k, rhs.cols());
            for j in 0..rhs.cols() {
                let col: Vector = (0..k).map(|i| rhs[(i, j)]).collect();
                let sol = factor.solve(&col);
                for i in 0..k {
                    out[(i, j)] = sol[i];
                }
            }
            out
        };
        let minv_g = solve_through(&g_act);
        let minv_h = solve_through(&h_act);
        let gt = g_act.transpose();
        let du_duhat = Matrix::identity(m).sub(&gt.matmul(&minv_g));
        let du_dx = gt.matmul(&minv_h).scale(-1.0);
        Some((du_duhat, du_dx))
    }

    /// Training-time subgradient choice at degenerate points: every tight
    /// row is treated as active; falls back to the identity map when even
    /// that system is singular.
    pub(crate) fn lenient_jacobians(&self, x: &Vector, proj: &Projection) -> (Matrix, Matrix) {
        let rhs = self.feasible_rhs(x);
        let gu = self.g_mat.matvec(&proj.u);
        let tight: Vec<usize> = (0..self.num_rows())
            .filter(|&i| rhs[i] - gu[i] < ACTIVE_SET_TOL)
            .collect();
        if let Some(jac) = self.jacobians_for_active(&tight) {
            return jac;
        }
        // progressively drop rows until the gram matrix is invertible
        let mut subset = tight;
        while !subset.is_empty() {
            subset.pop();
            if let Some(jac) = self.jacobians_for_active(&subset) {
                return jac;
            }
        }
        (
            Matrix::identity(self.input_dim()),
            Matrix::zeros(self.input_dim(), self.state_dim()),
        )
    }
}
