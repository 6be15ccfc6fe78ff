//! Finite-horizon MPC problem definition, its stacked QP form, the exact
//! receding-horizon oracle, the LQR/Riccati baseline, and the oracle's
//! state gradient via KKT differentiation.

use crate::numerics::{
    spectral_radius_estimate, LdltFactor, Matrix, NumericsError, Vector,
};
use crate::optimize::{
    qp_solution_jacobian, OptimizeError, QpKernel, QpProblem, QpSolution, QpStatus,
    SolverSettings, INF_BOUND,
};
use crate::polytope::{Polytope, PolytopeError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MpcError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("state is infeasible for the configured horizon")]
    InfeasibleState,
    #[error("QP solver failed with status {0:?}")]
    SolverFailure(QpStatus),
    #[error("Riccati iteration did not converge (residual {0:.3e})")]
    NoConvergence(f64),
    #[error("closed loop is not stable (spectral radius {0:.6})")]
    UnstableClosedLoop(f64),
    #[error(transparent)]
    Optimize(#[from] OptimizeError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Polytope(#[from] PolytopeError),
    #[error("parse error at line {line}: {msg}")]
    Format { line: usize, msg: String },
}

/// Discrete-time linear dynamics `x_{k+1} = A x_k + B u_k`.
#[derive(Clone, Debug)]
pub struct LinearSystem {
    pub a_mat: Matrix,
    pub b_mat: Matrix,
}

impl LinearSystem {
    pub fn new(a_mat: Matrix, b_mat: Matrix) -> Result<Self, MpcError> {
        if a_mat.rows() != a_mat.cols() {
            return Err(MpcError::DimensionMismatch(
                "state matrix must be square".to_string(),
            ));
        }
        if b_mat.rows() != a_mat.rows() {
            return Err(MpcError::DimensionMismatch(format!(
                "input matrix has {} rows, state dimension is {}",
                b_mat.rows(),
                a_mat.rows()
            )));
        }
        Ok(Self { a_mat, b_mat })
    }

    pub fn state_dim(&self) -> usize {
        self.a_mat.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.b_mat.cols()
    }

    pub fn step(&self, x: &Vector, u: &Vector) -> Vector {
        self.a_mat.matvec(x).add(&self.b_mat.matvec(u))
    }
}

/// Full problem data: dynamics, stage/terminal weights, horizon, and the
/// state/input constraint polytopes.
#[derive(Clone, Debug)]
pub struct MpcSpec {
    pub sys: LinearSystem,
    pub q_mat: Matrix,
    pub qn_mat: Matrix,
    pub r_mat: Matrix,
    pub horizon: usize,
    pub x_set: Polytope,
    pub u_set: Polytope,
}

impl MpcSpec {
    pub fn new(
        sys: LinearSystem,
        q_mat: Matrix,
        qn_mat: Matrix,
        r_mat: Matrix,
        horizon: usize,
        x_set: Polytope,
        u_set: Polytope,
    ) -> Result<Self, MpcError> {
        let n = sys.state_dim();
        let m = sys.input_dim();
        if horizon == 0 {
            return Err(MpcError::InvalidSpec("horizon must be >= 1".to_string()));
        }
        for (name, mat, dim) in [
            ("state weight", &q_mat, n),
            ("terminal weight", &qn_mat, n),
            ("input weight", &r_mat, m),
        ] {
            if mat.rows() != dim || mat.cols() != dim {
                return Err(MpcError::DimensionMismatch(format!(
                    "{name} is {}x{}, expected {dim}x{dim}",
                    mat.rows(),
                    mat.cols()
                )));
            }
        }
        if x_set.dim() != n || u_set.dim() != m {
            return Err(MpcError::DimensionMismatch(
                "constraint sets do not match the system dimensions".to_string(),
            ));
        }
        check_psd("state weight", &q_mat)?;
        check_psd("terminal weight", &qn_mat)?;
        check_pd("input weight", &r_mat)?;
        Ok(Self {
            sys,
            q_mat,
            qn_mat,
            r_mat,
            horizon,
            x_set,
            u_set,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.sys.state_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.sys.input_dim()
    }

    /// Canonical key-value serialization (matrices row-major, constraint
    /// sets inline in the polytope text layout).
    pub fn to_config_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("state_dim = {}\n", self.state_dim()));
        out.push_str(&format!("input_dim = {}\n", self.input_dim()));
        out.push_str(&format!("horizon = {}\n", self.horizon));
        push_matrix(&mut out, "a_mat", &self.sys.a_mat);
        push_matrix(&mut out, "b_mat", &self.sys.b_mat);
        push_matrix(&mut out, "q_mat", &self.q_mat);
        push_matrix(&mut out, "qn_mat", &self.qn_mat);
        push_matrix(&mut out, "r_mat", &self.r_mat);
        push_poly(&mut out, "x_poly", &self.x_set);
        push_poly(&mut out, "u_poly", &self.u_set);
        out
    }

    /// Parses the config text written by [`Self::to_config_text`]. Also
    /// accepts `x_box`/`u_box` (lower coords then upper coords) in place
    /// of the inline polytopes.
    pub fn from_config_text(text: &str) -> Result<Self, MpcError> {
        let mut fields = std::collections::HashMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(MpcError::Format {
                line: idx + 1,
                msg: "expected `key = value`".to_string(),
            })?;
            fields.insert(key.trim().to_string(), (idx + 1, value.trim().to_string()));
        }
        let get = |key: &str| -> Result<(usize, String), MpcError> {
            fields
                .get(key)
                .cloned()
                .ok_or_else(|| MpcError::Format {
                    line: 0,
                    msg: format!("missing key `{key}`"),
                })
        };
        let parse_usize = |key: &str| -> Result<usize, MpcError> {
            let (line, value) = get(key)?;
            value.parse().map_err(|_| MpcError::Format {
                line,
                msg: format!("invalid integer for `{key}`"),
            })
        };
        let n = parse_usize("state_dim")?;
        let m = parse_usize("input_dim")?;
        let horizon = parse_usize("horizon")?;
        let parse_matrix = |key: &str, rows: usize, cols: usize| -> Result<Matrix, MpcError> {
            let (line, value) = get(key)?;
            let vals: Result<Vec<f64>, _> =
                value.split_whitespace().map(str::parse::<f64>).collect();
            let vals = vals.map_err(|e| MpcError::Format {
                line,
                msg: e.to_string(),
            })?;
            Matrix::from_row_major(rows, cols, vals).map_err(|e| MpcError::Format {
                line,
                msg: e.to_string(),
            })
        };
        let parse_poly = |prefix: &str, dim: usize| -> Result<Polytope, MpcError> {
            if let Some((line, value)) = fields.get(&format!("{prefix}_poly")).cloned() {
                let vals: Result<Vec<f64>, _> =
                    value.split_whitespace().map(str::parse::<f64>).collect();
                let vals = vals.map_err(|e| MpcError::Format {
                    line,
                    msg: e.to_string(),
                })?;
                if vals.len() < 2 {
                    return Err(MpcError::Format {
                        line,
                        msg: "inline polytope needs `m n` prefix".to_string(),
                    });
                }
                let rows = vals[0] as usize;
                let cols = vals[1] as usize;
                if cols != dim || vals.len() != 2 + rows * (cols + 1) {
                    return Err(MpcError::Format {
                        line,
                        msg: "inline polytope has inconsistent dimensions".to_string(),
                    });
                }
                let mut a = Matrix::zeros(rows, cols);
                let mut b = Vector::zeros(rows);
                for i in 0..rows {
                    let base = 2 + i * (cols + 1);
                    a.row_mut(i).copy_from_slice(&vals[base..base + cols]);
                    b[i] = vals[base + cols];
                }
                return Ok(Polytope::new(a, b)?);
            }
            if let Some((line, value)) = fields.get(&format!("{prefix}_box")).cloned() {
                let vals: Result<Vec<f64>, _> =
                    value.split_whitespace().map(str::parse::<f64>).collect();
                let vals = vals.map_err(|e| MpcError::Format {
                    line,
                    msg: e.to_string(),
                })?;
                if vals.len() != 2 * dim {
                    return Err(MpcError::Format {
                        line,
                        msg: format!("box needs {} values, found {}", 2 * dim, vals.len()),
                    });
                }
                return Ok(Polytope::from_box(&vals[..dim], &vals[dim..])?);
            }
            Err(MpcError::Format {
                line: 0,
                msg: format!("missing `{prefix}_poly` or `{prefix}_box`"),
            })
        };
        let sys = LinearSystem::new(parse_matrix("a_mat", n, n)?, parse_matrix("b_mat", n, m)?)?;
        MpcSpec::new(
            sys,
            parse_matrix("q_mat", n, n)?,
            parse_matrix("qn_mat", n, n)?,
            parse_matrix("r_mat", m, m)?,
            horizon,
            parse_poly("x", n)?,
            parse_poly("u", m)?,
        )
    }

    /// Stable content hash of the canonical serialization; recorded in
    /// dataset metadata so stale files are rejected.
    pub fn stable_hash(&self) -> u64 {
        crate::hash::fnv1a64(self.to_config_text().as_bytes())
    }
}

fn push_matrix(out: &mut String, key: &str, m: &Matrix) {
    out.push_str(key);
    out.push_str(" =");
    for i in 0..m.rows() {
        for v in m.row(i) {
            out.push_str(&format!(" {v:.16e}"));
        }
    }
    out.push('\n');
}

fn push_poly(out: &mut String, key: &str, p: &Polytope) {
    out.push_str(key);
    out.push_str(&format!(" = {} {}", p.num_rows(), p.dim()));
    for i in 0..p.num_rows() {
        for v in p.a_mat().row(i) {
            out.push_str(&format!(" {v:.16e}"));
        }
        out.push_str(&format!(" {:.16e}", p.b_vec()[i]));
    }
    out.push('\n');
}

/// Symmetric PSD check by attempted Cholesky-style factorization with a
/// tiny diagonal shift.
fn check_psd(name: &str, m: &Matrix) -> Result<(), MpcError> {
    if !m.is_symmetric(1e-9) {
        return Err(MpcError::InvalidSpec(format!("{name} is not symmetric")));
    }
    let shift = 1e-10 * m.max_abs().max(1.0);
    let mut shifted = m.clone();
    for i in 0..m.rows() {
        shifted[(i, i)] += shift;
    }
    match LdltFactor::factor(&shifted) {
        Ok(f) if f.diagonal().iter().all(|&d| d > 0.0) => Ok(()),
        _ => Err(MpcError::InvalidSpec(format!(
            "{name} is not positive semidefinite"
        ))),
    }
}

fn check_pd(name: &str, m: &Matrix) -> Result<(), MpcError> {
    if !m.is_symmetric(1e-9) {
        return Err(MpcError::InvalidSpec(format!("{name} is not symmetric")));
    }
    match LdltFactor::factor(m) {
        Ok(f) if f.diagonal().iter().all(|&d| d > 0.0) => Ok(()),
        _ => Err(MpcError::InvalidSpec(format!(
            "{name} is not positive definite"
        ))),
    }
}

/// Layout of the stacked decision vector `z = (x_1..x_N, u_0..u_{N-1})`.
#[derive(Clone, Copy, Debug)]
pub struct QpLayout {
    pub state_dim: usize,
    pub input_dim: usize,
    pub horizon: usize,
}

impl QpLayout {
    pub fn num_vars(&self) -> usize {
        self.horizon * (self.state_dim + self.input_dim)
    }

    pub fn state_offset(&self, k: usize) -> usize {
        debug_assert!(k >= 1 && k <= self.horizon);
        (k - 1) * self.state_dim
    }

    pub fn input_offset(&self, k: usize) -> usize {
        debug_assert!(k < self.horizon);
        self.horizon * self.state_dim + k * self.input_dim
    }
}

/// Stacked ("simultaneous") QP for the horizon problem at `x0`: dynamics
/// as equality rows, block-diagonal quadratic cost, constraint rows from
/// the state and input sets. The `k = 0` stage cost of the initial state
/// is a constant and is added back by [`MpcSolver::solve`].
pub fn build_mpc_qp(spec: &MpcSpec, x0: &Vector) -> Result<QpProblem, MpcError> {
    let assembled = MpcQpData::assemble(spec)?;
    let (lower, upper) = assembled.bounds_for(spec, x0)?;
    Ok(QpProblem::new(
        assembled.p_mat,
        Vector::zeros(assembled.layout.num_vars()),
        assembled.a_mat,
        lower,
        upper,
    )?)
}

struct MpcQpData {
    layout: QpLayout,
    p_mat: Matrix,
    a_mat: Matrix,
    base_lower: Vector,
    base_upper: Vector,
}

impl MpcQpData {
    fn assemble(spec: &MpcSpec) -> Result<Self, MpcError> {
        let n = spec.state_dim();
        let m = spec.input_dim();
        let horizon = spec.horizon;
        let layout = QpLayout {
            state_dim: n,
            input_dim: m,
            horizon,
        };
        let nz = layout.num_vars();

        let mut p_mat = Matrix::zeros(nz, nz);
        for k in 1..=horizon {
            let block = if k == horizon { &spec.qn_mat } else { &spec.q_mat };
            p_mat.set_block(layout.state_offset(k), layout.state_offset(k), &block.scale(2.0));
        }
        for k in 0..horizon {
            p_mat.set_block(layout.input_offset(k), layout.input_offset(k), &spec.r_mat.scale(2.0));
        }

        let eq_rows = horizon * n;
        let x_rows = spec.x_set.num_rows();
        let u_rows = spec.u_set.num_rows();
        let total_rows = eq_rows + horizon * x_rows + horizon * u_rows;
        let mut a_mat = Matrix::zeros(total_rows, nz);
        let mut base_lower = Vector::zeros(total_rows);
        let mut base_upper = Vector::zeros(total_rows);

        // dynamics equalities: x_{k+1} - A x_k - B u_k = (k == 0 ? A x0 : 0)
        for k in 0..horizon {
            let row0 = k * n;
            a_mat.set_block(row0, layout.state_offset(k + 1), &Matrix::identity(n));
            if k >= 1 {
                a_mat.set_block(row0, layout.state_offset(k), &spec.sys.a_mat.scale(-1.0));
            }
            a_mat.set_block(row0, layout.input_offset(k), &spec.sys.b_mat.scale(-1.0));
        }
        // state constraints on x_1..x_N
        for k in 1..=horizon {
            let row0 = eq_rows + (k - 1) * x_rows;
            a_mat.set_block(row0, layout.state_offset(k), spec.x_set.a_mat());
            for i in 0..x_rows {
                base_lower[row0 + i] = -INF_BOUND;
                base_upper[row0 + i] = spec.x_set.b_vec()[i];
            }
        }
        // input constraints on u_0..u_{N-1}
        for k in 0..horizon {
            let row0 = eq_rows + horizon * x_rows + k * u_rows;
            a_mat.set_block(row0, layout.input_offset(k), spec.u_set.a_mat());
            for i in 0..u_rows {
                base_lower[row0 + i] = -INF_BOUND;
                base_upper[row0 + i] = spec.u_set.b_vec()[i];
            }
        }
        Ok(Self {
            layout,
            p_mat,
            a_mat,
            base_lower,
            base_upper,
        })
    }

    fn bounds_for(&self, spec: &MpcSpec, x0: &Vector) -> Result<(Vector, Vector), MpcError> {
        let n = spec.state_dim();
        if x0.len() != n {
            return Err(MpcError::DimensionMismatch(format!(
                "initial state has {} coordinates, expected {n}",
                x0.len()
            )));
        }
        let mut lower = self.base_lower.clone();
        let mut upper = self.base_upper.clone();
        let ax0 = spec.sys.a_mat.matvec(x0);
        for i in 0..n {
            lower[i] = ax0[i];
            upper[i] = ax0[i];
        }
        Ok((lower, upper))
    }
}

/// Horizon solution: the open-loop input sequence, predicted states, and
/// the objective value including the constant `x0ᵀ Q x0` stage term.
#[derive(Clone, Debug)]
pub struct MpcSolve {
    pub u_seq: Vec<Vector>,
    pub x_seq: Vec<Vector>,
    pub j_star: f64,
    pub qp: QpSolution,
}

/// Factor-once solver for a fixed spec: the stacked QP matrices and the
/// ADMM KKT factorization are shared across every initial state, which is
/// what makes offline label generation cheap.
pub struct MpcSolver {
    spec: MpcSpec,
    data: MpcQpData,
    kernel: QpKernel,
    q_zero: Vector,
}

impl MpcSolver {
    pub fn new(spec: &MpcSpec, settings: &SolverSettings) -> Result<Self, MpcError> {
        let data = MpcQpData::assemble(spec)?;
        let kernel = QpKernel::new(data.p_mat.clone(), data.a_mat.clone(), settings.clone())?;
        let q_zero = Vector::zeros(data.layout.num_vars());
        Ok(Self {
            spec: spec.clone(),
            data,
            kernel,
            q_zero,
        })
    }

    pub fn spec(&self) -> &MpcSpec {
        &self.spec
    }

    pub fn layout(&self) -> QpLayout {
        self.data.layout
    }

    pub fn solve(&self, x0: &Vector) -> Result<MpcSolve, MpcError> {
        let (lower, upper) = self.data.bounds_for(&self.spec, x0)?;
        let qp = self.kernel.solve(&self.q_zero, &lower, &upper)?;
        match qp.status {
            QpStatus::Solved => {}
            QpStatus::PrimalInfeasible => return Err(MpcError::InfeasibleState),
            other => return Err(MpcError::SolverFailure(other)),
        }
        let layout = self.data.layout;
        let n = layout.state_dim;
        let m = layout.input_dim;
        let u_seq: Vec<Vector> = (0..layout.horizon)
            .map(|k| qp.z_star.slice(layout.input_offset(k), m))
            .collect();
        let x_seq: Vec<Vector> = (1..=layout.horizon)
            .map(|k| qp.z_star.slice(layout.state_offset(k), n))
            .collect();
        let pz = self.data.p_mat.matvec(&qp.z_star);
        let j_star = 0.5 * pz.dot(&qp.z_star) + self.spec.q_mat.matvec(x0).dot(x0);
        Ok(MpcSolve {
            u_seq,
            x_seq,
            j_star,
            qp,
        })
    }

    /// First optimal input at `x0` (the control law the networks learn).
    pub fn first_input(&self, x0: &Vector) -> Result<Vector, MpcError> {
        Ok(self.solve(x0)?.u_seq[0].clone())
    }

    /// `d u_0 / d x_0` by implicit differentiation of the active-set KKT
    /// system; `x0` enters through the first dynamics equality block.
    pub fn gradient(&self, x0: &Vector) -> Result<Matrix, MpcError> {
        let solve = self.solve(x0)?;
        self.gradient_from(x0, &solve)
    }

    pub fn gradient_from(&self, x0: &Vector, solve: &MpcSolve) -> Result<Matrix, MpcError> {
        let layout = self.data.layout;
        let n = layout.state_dim;
        let m = layout.input_dim;
        let nz = layout.num_vars();
        let (lower, upper) = self.data.bounds_for(&self.spec, x0)?;
        let prob = QpProblem::new(
            self.data.p_mat.clone(),
            self.q_zero.clone(),
            self.data.a_mat.clone(),
            lower,
            upper,
        )?;
        let dq = Matrix::zeros(nz, n);
        let mut dbounds = Matrix::zeros(self.data.a_mat.rows(), n);
        // first equality block bound is A x0
        dbounds.set_block(0, 0, &self.spec.sys.a_mat);
        let dz = qp_solution_jacobian(&prob, &solve.qp, &dq, &dbounds)?;
        Ok(dz.row_block(layout.input_offset(0), m))
    }
}

/// Open-loop optimal input sequence and objective for one initial state.
pub fn solve_mpc(spec: &MpcSpec, x0: &Vector) -> Result<(Vec<Vector>, f64), MpcError> {
    let solver = MpcSolver::new(spec, &SolverSettings::default())?;
    let solve = solver.solve(x0)?;
    Ok((solve.u_seq, solve.j_star))
}

/// `d u_0 / d x_0` of the MPC law at `x0`.
pub fn mpc_gradient(spec: &MpcSpec, x0: &Vector) -> Result<Matrix, MpcError> {
    MpcSolver::new(spec, &SolverSettings::default())?.gradient(x0)
}

/// Riccati fixed-point tolerance.
const DARE_TOL: f64 = 1e-10;
const DARE_MAX_ITER: usize = 100_000;
/// Residual bound certified by `dare_solve` on return.
pub const DARE_RESIDUAL_TOL: f64 = 1e-8;

/// Solves the discrete algebraic Riccati equation by fixed-point
/// iteration from `P = Q`.
pub fn dare_solve(sys: &LinearSystem, q_mat: &Matrix, r_mat: &Matrix) -> Result<Matrix, MpcError> {
    let mut p = q_mat.clone();
    let mut residual = f64::INFINITY;
    for _ in 0..DARE_MAX_ITER {
        let next = riccati_step(sys, q_mat, r_mat, &p)?;
        residual = next.sub(&p).max_abs();
        p = next;
        if residual <= DARE_TOL {
            return Ok(p);
        }
        if !p.is_finite() {
            return Err(MpcError::NoConvergence(f64::INFINITY));
        }
    }
    Err(MpcError::NoConvergence(residual))
}

/// One backward Riccati update `Q + Aᵀ(P - P B (BᵀPB+R)⁻¹ BᵀP) A`,
/// symmetrized against rounding drift.
fn riccati_step(
    sys: &LinearSystem,
    q_mat: &Matrix,
    r_mat: &Matrix,
    p: &Matrix,
) -> Result<Matrix, MpcError> {
    let gain = riccati_gain(sys, r_mat, p)?;
    let pa = p.matmul(&sys.a_mat);
    let pb = p.matmul(&sys.b_mat);
    let next = q_mat
        .add(&sys.a_mat.transpose().matmul(&pa))
        .sub(&sys.a_mat.transpose().matmul(&pb.matmul(&gain)));
    let sym = next.add(&next.transpose()).scale(0.5);
    Ok(sym)
}

/// `(BᵀPB + R)⁻¹ BᵀPA`, the feedback gain induced by cost-to-go `P`.
fn riccati_gain(sys: &LinearSystem, r_mat: &Matrix, p: &Matrix) -> Result<Matrix, MpcError> {
    let bt = sys.b_mat.transpose();
    let s = bt.matmul(&p.matmul(&sys.b_mat)).add(r_mat);
    let rhs = bt.matmul(&p.matmul(&sys.a_mat));
    let factor = LdltFactor::factor(&s.add(&s.transpose()).scale(0.5))?;
    let m = s.rows();
    let n = sys.a_mat.cols();
    let mut gain = Matrix::zeros(m, n);
    for j in 0..n {
        let col: Vector = (0..m).map(|i| rhs[(i, j)]).collect();
        let sol = factor.solve(&col);
        for i in 0..m {
            gain[(i, j)] = sol[i];
        }
    }
    Ok(gain)
}

/// Infinite-horizon LQR gain `L` with `u = -L x`; checks that the closed
/// loop `A - B L` is a contraction.
pub fn lqr_gain(sys: &LinearSystem, q_mat: &Matrix, r_mat: &Matrix) -> Result<Matrix, MpcError> {
    let p = dare_solve(sys, q_mat, r_mat)?;
    let gain = riccati_gain(sys, r_mat, &p)?;
    let closed = sys.a_mat.sub(&sys.b_mat.matmul(&gain));
    let rho = spectral_radius_estimate(&closed);
    if rho >= 1.0 {
        return Err(MpcError::UnstableClosedLoop(rho));
    }
    Ok(gain)
}

/// Residual of the DARE at `p`: one more Riccati step's displacement.
pub fn dare_residual(
    sys: &LinearSystem,
    q_mat: &Matrix,
    r_mat: &Matrix,
    p: &Matrix,
) -> Result<f64, MpcError> {
    Ok(riccati_step(sys, q_mat, r_mat, p)?.sub(p).max_abs())
}
