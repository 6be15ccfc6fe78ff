//! Shared oracles for unit tests: deliberately naive implementations that
//! stay independent of the production solve paths they check.

use crate::numerics::{Matrix, Vector};

/// Gaussian elimination with partial pivoting.
pub(crate) fn gauss_solve(m: &Matrix, rhs: &Vector) -> Vector {
    let n = m.rows();
    assert_eq!(m.cols(), n);
    assert_eq!(rhs.len(), n);
    let w = n + 1;
    let mut a = vec![0.0; n * w];
    for i in 0..n {
        a[i * w..i * w + n].copy_from_slice(m.row(i));
        a[i * w + n] = rhs[i];
    }
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&r, &s| {
                a[r * w + col]
                    .abs()
                    .partial_cmp(&a[s * w + col].abs())
                    .unwrap()
            })
            .unwrap();
        if pivot_row != col {
            for j in 0..w {
                a.swap(col * w + j, pivot_row * w + j);
            }
        }
        let pivot = a[col * w + col];
        assert!(pivot.abs() > 1e-300, "oracle hit a singular system");
        for r in (col + 1)..n {
            let f = a[r * w + col] / pivot;
            for j in col..w {
                a[r * w + j] -= f * a[col * w + j];
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut v = a[i * w + n];
        for j in (i + 1)..n {
            v -= a[i * w + j] * x[j];
        }
        x[i] = v / a[i * w + i];
    }
    Vector::from_vec_unchecked(x)
}

/// Finite-horizon LQ feedback gains by backward Riccati recursion;
/// returns `K_0` such that the first optimal input is `-K_0 x_0`.
pub(crate) fn backward_riccati_gain(
    a: &Matrix,
    b: &Matrix,
    q: &Matrix,
    qn: &Matrix,
    r: &Matrix,
    horizon: usize,
) -> Matrix {
    let mut p = qn.clone();
    let mut gain = Matrix::zeros(b.cols(), a.cols());
    for _ in 0..horizon {
        let bt = b.transpose();
        let s = bt.matmul(&p.matmul(b)).add(r);
        let rhs = bt.matmul(&p.matmul(a));
        // solve S K = BᵀPA column by column with the naive oracle
        let m = s.rows();
        let n = a.cols();
        let mut k = Matrix::zeros(m, n);
        for j in 0..n {
            let col: Vector = (0..m).map(|i| rhs[(i, j)]).collect();
            let sol = gauss_solve(&s, &col);
            for i in 0..m {
                k[(i, j)] = sol[i];
            }
        }
        let closed = a.sub(&b.matmul(&k));
        let next = q
            .add(&k.transpose().matmul(&r.matmul(&k)))
            .add(&closed.transpose().matmul(&p.matmul(&closed)));
        p = next.add(&next.transpose()).scale(0.5);
        gain = k;
    }
    gain
}
