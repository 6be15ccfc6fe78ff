//! Oracles shared by the acceptance suite; independent of the production
//! solve paths they check.

use mpclearn_core::numerics::{Matrix, Vector};

/// Gaussian elimination with partial pivoting.
pub fn gauss_solve(m: &Matrix, rhs: &Vector) -> Vector {
    let n = m.rows();
    assert_eq!(m.cols(), n);
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
        assert!(pivot.abs() > 1e-300);
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

/// Condensed unconstrained batch MPC solution
/// `U* = -(Gᵀ Q̄ G + R̄)⁻¹ Gᵀ Q̄ F x0`.
pub fn condensed_unconstrained_inputs(
    spec: &mpclearn_core::mpc::MpcSpec,
    x0: &Vector,
) -> Vec<Vector> {
    let n = spec.state_dim();
    let m = spec.input_dim();
    let big_n = spec.horizon;
    let mut powers = vec![Matrix::identity(n)];
    for _ in 0..big_n {
        powers.push(spec.sys.a_mat.matmul(powers.last().unwrap()));
    }
    let mut f = Matrix::zeros(big_n * n, n);
    let mut g = Matrix::zeros(big_n * n, big_n * m);
    for k in 1..=big_n {
        f.set_block((k - 1) * n, 0, &powers[k]);
        for j in 0..k {
            g.set_block(
                (k - 1) * n,
                j * m,
                &powers[k - 1 - j].matmul(&spec.sys.b_mat),
            );
        }
    }
    let mut q_bar = Matrix::zeros(big_n * n, big_n * n);
    for k in 1..=big_n {
        let block = if k == big_n { &spec.qn_mat } else { &spec.q_mat };
        q_bar.set_block((k - 1) * n, (k - 1) * n, block);
    }
    let mut r_bar = Matrix::zeros(big_n * m, big_n * m);
    for k in 0..big_n {
        r_bar.set_block(k * m, k * m, &spec.r_mat);
    }
    let h = g.transpose().matmul(&q_bar.matmul(&g)).add(&r_bar);
    let rhs = g.transpose().matvec(&q_bar.matvec(&f.matvec(x0)));
    let u = gauss_solve(&h, &rhs).scale(-1.0);
    (0..big_n).map(|k| u.slice(k * m, m)).collect()
}

/// Regularized upper incomplete gamma Q(k/2, x/2): the chi-square upper
/// tail probability.
pub fn chi_square_upper_tail(dof: f64, stat: f64) -> f64 {
    let a = dof / 2.0;
    let x = stat / 2.0;
    if x <= 0.0 {
        return 1.0;
    }
    if x < a + 1.0 {
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut k = a;
        for _ in 0..500 {
            k += 1.0;
            term *= x / k;
            sum += term;
            if term.abs() < 1e-16 * sum.abs() {
                break;
            }
        }
        1.0 - sum * (-x + a * x.ln() - ln_gamma(a)).exp()
    } else {
        let mut b = x + 1.0 - a;
        let mut c = 1e300;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..500 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < 1e-300 {
                d = 1e-300;
            }
            c = b + an / c;
            if c.abs() < 1e-300 {
                c = 1e-300;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-15 {
                break;
            }
        }
        (-x + a * x.ln() - ln_gamma(a)).exp() * h
    }
}

/// Stirling series, accurate to ~1e-12 for a >= 10.
fn ln_gamma(a: f64) -> f64 {
    assert!(a >= 10.0);
    let inv = 1.0 / a;
    (a - 0.5) * a.ln() - a + 0.5 * (2.0 * std::f64::consts::PI).ln() + inv / 12.0
        - inv.powi(3) / 360.0
        + inv.powi(5) / 1260.0
}
