//! LDLᵀ factorization for symmetric (quasi-)definite systems.
//!
//! The ADMM KKT matrix is factored once and re-solved thousands of times,
//! so the factorization is a standalone object.

use super::{Matrix, NumericsError, Vector};

/// Pivot magnitudes below `PIVOT_REL_TOL * max|M|` are treated as singular.
pub const PIVOT_REL_TOL: f64 = 1e-12;

/// LDLᵀ factorization without pivoting.
///
/// Valid for symmetric quasi-definite matrices (strictly positive leading
/// block, strictly negative trailing block) and for SPD matrices; callers
/// regularize indefinite systems before factoring.
#[derive(Clone, Debug)]
pub struct LdltFactor {
    n: usize,
    // Unit lower triangle, packed row-major without the diagonal.
    l: Vec<f64>,
    d: Vec<f64>,
}

impl LdltFactor {
    pub fn factor(m: &Matrix) -> Result<Self, NumericsError> {
        assert_eq!(m.rows(), m.cols(), "LDLT needs a square matrix");
        let n = m.rows();
        let threshold = PIVOT_REL_TOL * m.max_abs().max(1e-300);
        let mut l = vec![0.0; n * (n.saturating_sub(1)) / 2];
        let mut d = vec![0.0; n];
        // work holds column j of L scaled by d during elimination
        let mut col = vec![0.0; n];
        for j in 0..n {
            let mut dj = m[(j, j)];
            for k in 0..j {
                let ljk = l[tri_index(j, k)];
                dj -= ljk * ljk * d[k];
            }
            if dj.abs() < threshold {
                return Err(NumericsError::SingularMatrix {
                    pivot: dj,
                    threshold,
                });
            }
            d[j] = dj;
            for (k, c) in col.iter_mut().enumerate().take(j) {
                *c = l[tri_index(j, k)] * d[k];
            }
            for i in (j + 1)..n {
                let mut v = m[(i, j)];
                for k in 0..j {
                    v -= l[tri_index(i, k)] * col[k];
                }
                l[tri_index(i, j)] = v / dj;
            }
        }
        Ok(Self { n, l, d })
    }

    pub fn solve(&self, rhs: &Vector) -> Vector {
        assert_eq!(rhs.len(), self.n);
        let mut x = rhs.as_slice().to_vec();
        self.solve_in_place(&mut x);
        Vector::from_vec_unchecked(x)
    }

    /// Pivot values; their signs are the matrix inertia.
    pub fn diagonal(&self) -> &[f64] {
        &self.d
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        let n = self.n;
        // forward: L y = rhs
        for i in 1..n {
            let mut v = x[i];
            let row_start = tri_index(i, 0);
            for (lik, xk) in self.l[row_start..row_start + i].iter().zip(x.iter()) {
                v -= lik * xk;
            }
            x[i] = v;
        }
        // diagonal
        for (xi, di) in x.iter_mut().zip(&self.d) {
            *xi /= di;
        }
        // backward: Lᵀ x = y; the packed column stride is irregular, so
        // the index loop stays
        #[allow(clippy::needless_range_loop)]
        for i in (0..n).rev() {
            let mut v = x[i];
            for k in (i + 1)..n {
                v -= self.l[tri_index(k, i)] * x[k];
            }
            x[i] = v;
        }
    }
}

#[inline]
fn tri_index(i: usize, k: usize) -> usize {
    debug_assert!(k < i);
    i * (i - 1) / 2 + k
}

/// One-shot factor-and-solve with the residual contract
/// `||M z - rhs||_inf <= 1e-9 * (1 + ||rhs||_inf)`, tightened by one round
/// of iterative refinement.
pub fn ldlt_solve(m: &Matrix, rhs: &Vector) -> Result<Vector, NumericsError> {
    if m.rows() != rhs.len() {
        return Err(NumericsError::DimensionMismatch(format!(
            "matrix is {}x{}, rhs has {} entries",
            m.rows(),
            m.cols(),
            rhs.len()
        )));
    }
    let factor = LdltFactor::factor(m)?;
    let mut z = factor.solve(rhs);
    // refinement: z += M⁻¹ (rhs - M z)
    let residual = rhs.sub(&m.matvec(&z));
    z.axpy(1.0, &factor.solve(&residual));
    Ok(z)
}
