//! H-representation polytope algebra: membership, redundancy removal, the
//! one-step backward reachable set, and the maximal control invariant set.
//!
//! Everything is LP-expressible, so the module leans on the ADMM kernel in
//! `optimize` (zero quadratic term) with tight tolerances plus polish.

use crate::mpc::LinearSystem;
use crate::numerics::{Matrix, Vector};
use crate::optimize::{OptimizeError, QpProblem, QpStatus, SolverSettings, INF_BOUND};
use thiserror::Error;

/// Tolerance below which a support value certifies a redundant row.
pub const REDUNDANCY_TOL: f64 = 1e-8;
/// Set-inclusion tolerance used for the invariant-set fixed point.
pub const FIXED_POINT_TOL: f64 = 1e-7;
/// Row normals with norm below this are treated as zero rows.
const ZERO_ROW_TOL: f64 = 1e-12;
/// Coefficient magnitude that separates the sign classes in the
/// Fourier-Motzkin elimination (rows are unit-normalized).
const FM_COEF_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum PolytopeError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("polytope is empty")]
    Empty,
    #[error("polytope is unbounded in the probed direction")]
    Unbounded,
    #[error("LP solve failed with status {0:?}")]
    Lp(QpStatus),
    #[error("solver error: {0}")]
    Solver(#[from] OptimizeError),
    #[error("invariant-set iteration hit the cap of {0} without a certified fixed point")]
    NoConvergence(usize),
    #[error("parse error at line {line}: {msg}")]
    Format { line: usize, msg: String },
}

/// `{x : a_mat x <= b_vec}` with rows normalized to unit Euclidean norm.
///
/// Normalization makes every tolerance in this module a geometric
/// distance. Zero rows are dropped when trivially satisfied and rejected
/// (as `Empty`) when they encode `0 <= negative`.
#[derive(Clone, Debug)]
pub struct Polytope {
    a_mat: Matrix,
    b_vec: Vector,
}

impl Polytope {
    pub fn new(a_mat: Matrix, b_vec: Vector) -> Result<Self, PolytopeError> {
        if a_mat.rows() != b_vec.len() {
            return Err(PolytopeError::DimensionMismatch(format!(
                "{} constraint rows but {} offsets",
                a_mat.rows(),
                b_vec.len()
            )));
        }
        let dim = a_mat.cols();
        let mut rows: Vec<f64> = Vec::new();
        let mut offsets = Vec::new();
        for i in 0..a_mat.rows() {
            let row = a_mat.row(i);
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < ZERO_ROW_TOL {
                if b_vec[i] < -1e-9 {
                    return Err(PolytopeError::Empty);
                }
                continue; // 0 <= nonnegative: vacuous
            }
            rows.extend(row.iter().map(|v| v / norm));
            offsets.push(b_vec[i] / norm);
        }
        let m = offsets.len();
        Ok(Self {
            a_mat: Matrix::from_row_major(m, dim, rows)
                .map_err(|e| PolytopeError::DimensionMismatch(e.to_string()))?,
            b_vec: Vector::from_vec_unchecked(offsets),
        })
    }

    /// Axis-aligned box `lower <= x <= upper`.
    pub fn from_box(lower: &[f64], upper: &[f64]) -> Result<Self, PolytopeError> {
        if lower.len() != upper.len() {
            return Err(PolytopeError::DimensionMismatch(
                "box bounds disagree on dimension".to_string(),
            ));
        }
        let n = lower.len();
        let mut a = Matrix::zeros(2 * n, n);
        let mut b = Vector::zeros(2 * n);
        for i in 0..n {
            a[(2 * i, i)] = 1.0;
            b[2 * i] = upper[i];
            a[(2 * i + 1, i)] = -1.0;
            b[2 * i + 1] = -lower[i];
        }
        Self::new(a, b)
    }

    pub fn a_mat(&self) -> &Matrix {
        &self.a_mat
    }

    pub fn b_vec(&self) -> &Vector {
        &self.b_vec
    }

    pub fn dim(&self) -> usize {
        self.a_mat.cols()
    }

    pub fn num_rows(&self) -> usize {
        self.a_mat.rows()
    }

    /// Elementwise `a_i . x <= b_i + tol`.
    pub fn contains(&self, x: &Vector, tol: f64) -> Result<bool, PolytopeError> {
        if x.len() != self.dim() {
            return Err(PolytopeError::DimensionMismatch(format!(
                "point has {} coordinates, set lives in dimension {}",
                x.len(),
                self.dim()
            )));
        }
        let ax = self.a_mat.matvec(x);
        Ok((0..self.num_rows()).all(|i| ax[i] <= self.b_vec[i] + tol))
    }

    /// Center and radius of the largest inscribed ball, by LP. A negative
    /// optimal radius certifies emptiness; an unbounded LP certifies an
    /// unbounded set.
    pub fn chebyshev_center(&self) -> Result<(Vector, f64), PolytopeError> {
        let m = self.num_rows();
        let n = self.dim();
        if m == 0 {
            return Err(PolytopeError::Unbounded);
        }
        // variables (x, r): maximize r s.t. a_i x + r <= b_i (unit rows)
        let mut a = Matrix::zeros(m, n + 1);
        for i in 0..m {
            a.row_mut(i)[..n].copy_from_slice(self.a_mat.row(i));
            a.row_mut(i)[n] = 1.0;
        }
        let mut q = Vector::zeros(n + 1);
        q[n] = -1.0;
        let sol = solve_lp(&a, &q, &Vector::constant(m, -INF_BOUND), &self.b_vec)?;
        match sol.status {
            QpStatus::Solved => {
                let radius = sol.z_star[n];
                if radius < -1e-9 {
                    return Err(PolytopeError::Empty);
                }
                Ok((sol.z_star.slice(0, n), radius))
            }
            QpStatus::DualInfeasible => Err(PolytopeError::Unbounded),
            other => Err(PolytopeError::Lp(other)),
        }
    }

    /// Support value `max a . x` over the set, or `Unbounded`.
    fn support(&self, direction: &[f64]) -> Result<SupportOutcome, PolytopeError> {
        let n = self.dim();
        debug_assert_eq!(direction.len(), n);
        let q: Vector = direction.iter().map(|v| -v).collect();
        let sol = solve_lp(
            &self.a_mat,
            &q,
            &Vector::constant(self.num_rows(), -INF_BOUND),
            &self.b_vec,
        )?;
        match sol.status {
            QpStatus::Solved => {
                let value: f64 = direction
                    .iter()
                    .zip(sol.z_star.as_slice())
                    .map(|(d, z)| d * z)
                    .sum();
                let accurate = sol.polished || sol.prim_res.max(sol.dual_res) <= 1e-8;
                Ok(SupportOutcome::Value { value, accurate })
            }
            QpStatus::DualInfeasible => Ok(SupportOutcome::Unbounded),
            QpStatus::PrimalInfeasible => Err(PolytopeError::Empty),
            QpStatus::MaxIter => Ok(SupportOutcome::Inaccurate),
        }
    }

    /// Removes every row that the remaining rows imply, one support LP per
    /// row; the returned set equals the input set.
    pub fn minimize(&self) -> Result<Polytope, PolytopeError> {
        let m = self.num_rows();
        let mut alive = vec![true; m];

        // cheap pass first: drop exact duplicates and parallel-dominated rows
        for i in 0..m {
            if !alive[i] {
                continue;
            }
            for j in (i + 1)..m {
                if !alive[j] {
                    continue;
                }
                let same_normal = self
                    .a_mat
                    .row(i)
                    .iter()
                    .zip(self.a_mat.row(j))
                    .all(|(a, b)| (a - b).abs() <= 1e-12);
                if same_normal {
                    if self.b_vec[j] >= self.b_vec[i] {
                        alive[j] = false;
                    } else {
                        alive[i] = false;
                        break;
                    }
                }
            }
        }

        for i in 0..m {
            if !alive[i] {
                continue;
            }
            let others = self.gather(&alive, Some(i));
            if others.num_rows() == 0 {
                continue; // single remaining constraint is never redundant
            }
            match others.support(self.a_mat.row(i))? {
                SupportOutcome::Value { value, accurate } => {
                    if accurate && value <= self.b_vec[i] + REDUNDANCY_TOL {
                        alive[i] = false;
                    }
                }
                // unbounded or sloppy support: keep the row, which never
                // changes the represented set
                SupportOutcome::Unbounded | SupportOutcome::Inaccurate => {}
            }
        }
        Ok(self.gather(&alive, None))
    }

    fn gather(&self, alive: &[bool], skip: Option<usize>) -> Polytope {
        let n = self.dim();
        let mut rows = Vec::new();
        let mut offsets = Vec::new();
        for (i, keep) in alive.iter().enumerate() {
            if *keep && Some(i) != skip {
                rows.extend_from_slice(self.a_mat.row(i));
                offsets.push(self.b_vec[i]);
            }
        }
        Polytope {
            a_mat: Matrix::from_row_major(offsets.len(), n, rows).expect("rows stay well-formed"),
            b_vec: Vector::from_vec_unchecked(offsets),
        }
    }

    /// Row-stack of both sets, minimized when the result is non-empty.
    pub fn intersect(&self, other: &Polytope) -> Result<Polytope, PolytopeError> {
        if self.dim() != other.dim() {
            return Err(PolytopeError::DimensionMismatch(format!(
                "dimensions {} and {}",
                self.dim(),
                other.dim()
            )));
        }
        let stacked = Polytope {
            a_mat: self.a_mat.vstack(&other.a_mat),
            b_vec: self.b_vec.concat(&other.b_vec),
        };
        match stacked.chebyshev_center() {
            Ok(_) => stacked.minimize(),
            // empty or unbounded intersections are returned raw; emptiness
            // stays detectable through chebyshev_center
            Err(PolytopeError::Empty) | Err(PolytopeError::Unbounded) => Ok(stacked),
            Err(e) => Err(e),
        }
    }

    /// True iff every row of `other` is satisfied across all of `self`,
    /// checked with one support LP per row of `other`.
    pub fn is_subset(&self, other: &Polytope, tol: f64) -> Result<bool, PolytopeError> {
        if self.dim() != other.dim() {
            return Err(PolytopeError::DimensionMismatch(format!(
                "dimensions {} and {}",
                self.dim(),
                other.dim()
            )));
        }
        for i in 0..other.num_rows() {
            match self.support(other.a_mat.row(i))? {
                SupportOutcome::Value { value, .. } => {
                    if value > other.b_vec[i] + tol {
                        return Ok(false);
                    }
                }
                SupportOutcome::Unbounded | SupportOutcome::Inaccurate => return Ok(false),
            }
        }
        Ok(true)
    }

    /// Plain-text form: first line `m n`, then one row per line with the
    /// normal followed by the offset.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.num_rows(), self.dim());
        for i in 0..self.num_rows() {
            for v in self.a_mat.row(i) {
                out.push_str(&format!("{v:.16e} "));
            }
            out.push_str(&format!("{:.16e}\n", self.b_vec[i]));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, PolytopeError> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(PolytopeError::Format {
            line: 1,
            msg: "missing header".to_string(),
        })?;
        let mut parts = header.split_whitespace();
        let m: usize = parse_field(parts.next(), 1, "row count")?;
        let n: usize = parse_field(parts.next(), 1, "column count")?;
        let mut a = Matrix::zeros(m, n);
        let mut b = Vector::zeros(m);
        for i in 0..m {
            let (line_no, line) = lines.next().ok_or(PolytopeError::Format {
                line: i + 2,
                msg: "unexpected end of file".to_string(),
            })?;
            let values: Result<Vec<f64>, _> =
                line.split_whitespace().map(str::parse::<f64>).collect();
            let values = values.map_err(|e| PolytopeError::Format {
                line: line_no + 1,
                msg: e.to_string(),
            })?;
            if values.len() != n + 1 {
                return Err(PolytopeError::Format {
                    line: line_no + 1,
                    msg: format!("expected {} values, found {}", n + 1, values.len()),
                });
            }
            a.row_mut(i).copy_from_slice(&values[..n]);
            b[i] = values[n];
        }
        Self::new(a, b)
    }
}

enum SupportOutcome {
    Value { value: f64, accurate: bool },
    Unbounded,
    Inaccurate,
}

fn parse_field<T: std::str::FromStr>(
    field: Option<&str>,
    line: usize,
    what: &str,
) -> Result<T, PolytopeError> {
    field
        .and_then(|f| f.parse().ok())
        .ok_or_else(|| PolytopeError::Format {
            line,
            msg: format!("missing or invalid {what}"),
        })
}

fn solve_lp(
    a: &Matrix,
    q: &Vector,
    lower: &Vector,
    upper: &Vector,
) -> Result<crate::optimize::QpSolution, PolytopeError> {
    let n = a.cols();
    let prob = QpProblem::new(
        Matrix::zeros(n, n),
        q.clone(),
        a.clone(),
        lower.clone(),
        upper.clone(),
    )?;
    Ok(crate::optimize::qp_solve(&prob, &SolverSettings::tight())?)
}

/// One-step backward reachable set
/// `{x : exists u in u_set with A x + B u in target}`, computed by lifting
/// to (x, u) and eliminating the input coordinates with Fourier-Motzkin,
/// minimizing after each elimination.
pub fn pre_set(
    target: &Polytope,
    sys: &LinearSystem,
    u_set: &Polytope,
) -> Result<Polytope, PolytopeError> {
    let n = sys.a_mat.rows();
    let m = sys.b_mat.cols();
    if target.dim() != n || u_set.dim() != m {
        return Err(PolytopeError::DimensionMismatch(format!(
            "target dim {} vs state dim {n}; input set dim {} vs input dim {m}",
            target.dim(),
            u_set.dim()
        )));
    }
    // rows [T_A A | T_A B] <= T_b and [0 | U_A] <= U_b over (x, u)
    let ta_a = target.a_mat.matmul(&sys.a_mat);
    let ta_b = target.a_mat.matmul(&sys.b_mat);
    let rows = target.num_rows() + u_set.num_rows();
    let mut lifted_a = Matrix::zeros(rows, n + m);
    let mut lifted_b = Vector::zeros(rows);
    for i in 0..target.num_rows() {
        lifted_a.row_mut(i)[..n].copy_from_slice(ta_a.row(i));
        lifted_a.row_mut(i)[n..].copy_from_slice(ta_b.row(i));
        lifted_b[i] = target.b_vec[i];
    }
    for i in 0..u_set.num_rows() {
        let dst = target.num_rows() + i;
        lifted_a.row_mut(dst)[n..].copy_from_slice(u_set.a_mat.row(i));
        lifted_b[dst] = u_set.b_vec[i];
    }
    let mut lifted = Polytope::new(lifted_a, lifted_b)?;
    match lifted.chebyshev_center() {
        Ok(_) => {}
        Err(PolytopeError::Empty) => return Err(PolytopeError::Empty),
        Err(PolytopeError::Unbounded) => {} // projection still well-defined
        Err(e) => return Err(e),
    }
    for _ in 0..m {
        lifted = eliminate_last_coordinate(&lifted)?;
        lifted = lifted.minimize()?;
    }
    Ok(lifted)
}

/// Fourier-Motzkin elimination of the final coordinate.
fn eliminate_last_coordinate(p: &Polytope) -> Result<Polytope, PolytopeError> {
    let n = p.dim();
    assert!(n >= 1);
    let keep_dim = n - 1;
    let mut pos: Vec<usize> = Vec::new();
    let mut neg: Vec<usize> = Vec::new();
    let mut rows = Vec::new();
    let mut offsets = Vec::new();
    let mut push_row = |row: &[f64], b: f64| -> Result<(), PolytopeError> {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < ZERO_ROW_TOL {
            if b < -1e-9 {
                return Err(PolytopeError::Empty);
            }
            return Ok(());
        }
        rows.extend_from_slice(row);
        offsets.push(b);
        Ok(())
    };
    for i in 0..p.num_rows() {
        let coef = p.a_mat.row(i)[keep_dim];
        if coef > FM_COEF_TOL {
            pos.push(i);
        } else if coef < -FM_COEF_TOL {
            neg.push(i);
        } else {
            push_row(&p.a_mat.row(i)[..keep_dim], p.b_vec[i])?;
        }
    }
    let mut combined = vec![0.0; keep_dim];
    for &ip in &pos {
        let rp = p.a_mat.row(ip);
        let cp = rp[keep_dim];
        for &im in &neg {
            let rm = p.a_mat.row(im);
            let cm = rm[keep_dim];
            // (row_p / cp) + (row_m / -cm) cancels the last coordinate
            for k in 0..keep_dim {
                combined[k] = rp[k] / cp - rm[k] / cm;
            }
            let b = p.b_vec[ip] / cp - p.b_vec[im] / cm;
            push_row(&combined, b)?;
        }
    }
    Polytope::new(
        Matrix::from_row_major(offsets.len(), keep_dim, rows)
            .map_err(|e| PolytopeError::DimensionMismatch(e.to_string()))?,
        Vector::from_vec_unchecked(offsets),
    )
}

/// Result of the invariant-set fixed-point iteration.
#[derive(Clone, Debug)]
pub struct InvariantSet {
    pub set: Polytope,
    pub iterations: usize,
    /// True when the stopping test `Omega_k subseteq Omega_{k+1}` held at
    /// tolerance `FIXED_POINT_TOL`; false when the iteration cap was hit
    /// and the last iterate is returned uncertified.
    pub certified: bool,
}

/// Maximal control invariant subset of `x_set`:
/// `Omega_0 = X`, `Omega_{k+1} = minimize(pre(Omega_k) intersect Omega_k)`
/// until `Omega_k subseteq Omega_{k+1}` (the reverse holds by
/// construction).
pub fn max_control_invariant(
    sys: &LinearSystem,
    x_set: &Polytope,
    u_set: &Polytope,
    max_iter: usize,
) -> Result<InvariantSet, PolytopeError> {
    let mut omega = x_set.minimize()?;
    for k in 1..=max_iter {
        let pre = pre_set(&omega, sys, u_set)?;
        let next = pre.intersect(&omega)?;
        if omega.is_subset(&next, FIXED_POINT_TOL)? {
            return Ok(InvariantSet {
                set: omega,
                iterations: k,
                certified: true,
            });
        }
        omega = next;
    }
    Ok(InvariantSet {
        set: omega,
        iterations: max_iter,
        certified: false,
    })
}

/// Default iteration cap for [`max_control_invariant`].
pub const DEFAULT_INVARIANT_MAX_ITER: usize = 100;

/// Finds an admissible input keeping the next state inside `target`
/// (`None` when no such input exists). Solves the strictly convex QP
/// `min 1/2 ||u||^2` over the pulled-back constraints so the answer
/// doubles as an invariance certificate for sampled states.
pub fn feasible_input(
    sys: &LinearSystem,
    u_set: &Polytope,
    target: &Polytope,
    x: &Vector,
    tol: f64,
) -> Result<Option<Vector>, PolytopeError> {
    let m = sys.b_mat.cols();
    let ax = sys.a_mat.matvec(x);
    let tb = target.a_mat.matmul(&sys.b_mat);
    let rows = u_set.num_rows() + target.num_rows();
    let mut a = Matrix::zeros(rows, m);
    let mut upper = Vector::zeros(rows);
    for i in 0..u_set.num_rows() {
        a.row_mut(i).copy_from_slice(u_set.a_mat.row(i));
        upper[i] = u_set.b_vec[i] + tol;
    }
    let t_ax = target.a_mat.matvec(&ax);
    for i in 0..target.num_rows() {
        let dst = u_set.num_rows() + i;
        a.row_mut(dst).copy_from_slice(tb.row(i));
        upper[dst] = target.b_vec[i] - t_ax[i] + tol;
    }
    let prob = QpProblem::new(
        Matrix::identity(m),
        Vector::zeros(m),
        a,
        Vector::constant(rows, -INF_BOUND),
        upper,
    )?;
    let sol = crate::optimize::qp_solve(&prob, &SolverSettings::tight())?;
    match sol.status {
        QpStatus::Solved => Ok(Some(sol.z_star)),
        QpStatus::PrimalInfeasible => Ok(None),
        other => Err(PolytopeError::Lp(other)),
    }
}
