use super::*;
use crate::numerics::{Matrix, Prng, Vector};

fn box_bounds(m: usize, half_width: f64) -> (Vector, Vector) {
    (
        Vector::constant(m, -half_width),
        Vector::constant(m, half_width),
    )
}

#[test]
fn separable_box_qp_clips_unconstrained_minimum() {
    let (lower, upper) = box_bounds(2, 1.0);
    let prob = QpProblem::new(
        Matrix::identity(2),
        Vector::from_slice(&[-2.0, 0.0]),
        Matrix::identity(2),
        lower,
        upper,
    )
    .unwrap();
    let sol = qp_solve(&prob, &SolverSettings::default()).unwrap();
    assert_eq!(sol.status, QpStatus::Solved);
    assert!((sol.z_star[0] - 1.0).abs() < 1e-6, "{:?}", sol.z_star);
    assert!(sol.z_star[1].abs() < 1e-6);
}

#[test]
fn lp_mode_finds_box_vertex() {
    let (lower, upper) = box_bounds(2, 1.0);
    let prob = QpProblem::new(
        Matrix::zeros(2, 2),
        Vector::from_slice(&[-1.0, -1.0]),
        Matrix::identity(2),
        lower,
        upper,
    )
    .unwrap();
    let sol = qp_solve(&prob, &SolverSettings::default()).unwrap();
    assert_eq!(sol.status, QpStatus::Solved);
    assert!((sol.z_star[0] - 1.0).abs() < 1e-6);
    assert!((sol.z_star[1] - 1.0).abs() < 1e-6);
}

#[test]
fn primal_infeasible_detected() {
    // x <= -1 and -x <= -1 cannot both hold
    let prob = QpProblem::new(
        Matrix::identity(1),
        Vector::zeros(1),
        Matrix::from_rows(&[&[1.0], &[-1.0]]).unwrap(),
        Vector::constant(2, -INF_BOUND),
        Vector::from_slice(&[-1.0, -1.0]),
    )
    .unwrap();
    let sol = qp_solve(&prob, &SolverSettings::default()).unwrap();
    assert_eq!(sol.status, QpStatus::PrimalInfeasible);
}

#[test]
fn dual_infeasible_detected_on_unbounded_lp() {
    // min -x s.t. x >= 0: unbounded above
    let prob = QpProblem::new(
        Matrix::zeros(1, 1),
        Vector::from_slice(&[-1.0]),
        Matrix::identity(1),
        Vector::from_slice(&[0.0]),
        Vector::from_slice(&[INF_BOUND]),
    )
    .unwrap();
    let sol = qp_solve(&prob, &SolverSettings::default()).unwrap();
    assert_eq!(sol.status, QpStatus::DualInfeasible);
}

#[test]
fn objective_scaling_leaves_argmin_unchanged() {
    let mut prng = Prng::seed_from_u64(31);
    let (prob, _z) = planted_qp(&mut prng, 6, 10);
    let base = qp_solve(&prob, &SolverSettings::default()).unwrap();
    for &c in &[0.01, 100.0] {
        let scaled = QpProblem::new(
            prob.p_mat.scale(c),
            prob.q_vec.scale(c),
            prob.a_mat.clone(),
            prob.lower.clone(),
            prob.upper.clone(),
        )
        .unwrap();
        let sol = qp_solve(&scaled, &SolverSettings::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Solved);
        assert!(
            sol.z_star.sub(&base.z_star).inf_norm() < 1e-6,
            "scale {c}: {:?} vs {:?}",
            sol.z_star,
            base.z_star
        );
    }
}

/// Builds a strictly convex QP whose optimum is known by construction:
/// plant z*, choose duals with correct signs on a chosen active set, and
/// back out q from stationarity.
pub(crate) fn planted_qp(prng: &mut Prng, n: usize, m: usize) -> (QpProblem, Vector) {
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            l[(i, j)] = 2.0 * prng.next_f64() - 1.0;
        }
        l[(i, i)] += 1.5;
    }
    let p = l.matmul(&l.transpose());
    let mut a = Matrix::zeros(m, n);
    for i in 0..m {
        for j in 0..n {
            a[(i, j)] = 2.0 * prng.next_f64() - 1.0;
        }
    }
    let z_star: Vector = (0..n).map(|_| 2.0 * prng.next_f64() - 1.0).collect();
    let az = a.matvec(&z_star);
    let mut y = Vector::zeros(m);
    let mut lower = Vector::zeros(m);
    let mut upper = Vector::zeros(m);
    let n_active = (m / 4).min(n);
    for i in 0..m {
        if i < n_active {
            // active at the upper bound with a clearly positive dual
            y[i] = 0.5 + prng.next_f64();
            upper[i] = az[i];
            lower[i] = az[i] - 1.0 - prng.next_f64();
        } else {
            lower[i] = az[i] - 1.0 - prng.next_f64();
            upper[i] = az[i] + 1.0 + prng.next_f64();
        }
    }
    let q = p.matvec(&z_star).add(&a.tr_matvec(&y)).scale(-1.0);
    (QpProblem::new(p, q, a, lower, upper).unwrap(), z_star)
}

#[test]
fn recovers_planted_solutions() {
    let mut prng = Prng::seed_from_u64(77);
    for trial in 0..50 {
        let n = 2 + (prng.next_u64() % 19) as usize;
        let m = 2 + (prng.next_u64() % 39) as usize;
        let (prob, z_star) = planted_qp(&mut prng, n, m);
        let sol = qp_solve(&prob, &SolverSettings::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Solved, "trial {trial}");
        let err = sol.z_star.sub(&z_star).inf_norm();
        assert!(err <= 1e-5, "trial {trial}: error {err:.2e}");
    }
}

#[test]
fn kkt_residuals_small_after_polish_and_monotone_under_perturbation() {
    let mut prng = Prng::seed_from_u64(91);
    let (prob, _) = planted_qp(&mut prng, 8, 16);
    let sol = qp_solve(&prob, &SolverSettings::default()).unwrap();
    let (prim, dual, _comp) = kkt_residuals(&prob, &sol);
    assert!(prim <= 1e-5, "prim {prim:.2e}");
    assert!(dual <= 1e-5, "dual {dual:.2e}");

    let mut bumped = sol.clone();
    bumped.z_star[0] += 0.1;
    let (_, dual_bumped, _) = kkt_residuals(&prob, &bumped);
    assert!(dual_bumped > dual);
}

#[test]
fn kkt_residuals_zero_at_constructed_optimum() {
    // unconstrained problem with q = -P z at the chosen z and y = 0
    let p = Matrix::from_rows(&[&[3.0, 1.0], &[1.0, 2.0]]).unwrap();
    let z = Vector::from_slice(&[0.5, -1.5]);
    let q = p.matvec(&z).scale(-1.0);
    let prob = QpProblem::new(
        p,
        q,
        Matrix::identity(2),
        Vector::constant(2, -INF_BOUND),
        Vector::constant(2, INF_BOUND),
    )
    .unwrap();
    let sol = QpSolution {
        z_star: z,
        y_star: Vector::zeros(2),
        status: QpStatus::Solved,
        prim_res: 0.0,
        dual_res: 0.0,
        iterations: 0,
        polished: false,
    };
    let (prim, dual, comp) = kkt_residuals(&prob, &sol);
    assert_eq!(prim, 0.0);
    assert!(dual < 1e-12);
    assert_eq!(comp, 0.0);
}

// -------- LP oracle: dense two-phase simplex on Ax <= b with free x --------

/// Maximizes cᵀx subject to Ax <= b; returns the optimal value.
/// Textbook tableau implementation with Bland's rule; test oracle only.
pub(crate) fn simplex_max(c: &[f64], a: &Matrix, b: &[f64]) -> Option<f64> {
    let m = a.rows();
    let n = a.cols();
    // standard form variables: x+ (n), x- (n), slack (m), artificial (m)
    let cols = 2 * n + m + m;
    let mut t = vec![vec![0.0; cols + 1]; m];
    for i in 0..m {
        let flip = if b[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            t[i][j] = flip * a[(i, j)];
            t[i][n + j] = -flip * a[(i, j)];
        }
        t[i][2 * n + i] = flip;
        t[i][2 * n + m + i] = 1.0;
        t[i][cols] = flip * b[i];
    }
    let mut basis: Vec<usize> = (0..m).map(|i| 2 * n + m + i).collect();

    let solve_phase = |t: &mut Vec<Vec<f64>>, basis: &mut Vec<usize>, obj: &[f64]| -> Option<f64> {
        for _ in 0..20_000 {
            // reduced costs for maximization
            let mut red = obj.to_vec();
            let mut obj_val = 0.0;
            for (i, &bi) in basis.iter().enumerate() {
                let cb = obj[bi];
                if cb != 0.0 {
                    obj_val += cb * t[i][obj.len()];
                    for j in 0..obj.len() {
                        red[j] -= cb * t[i][j];
                    }
                }
            }
            let entering = (0..obj.len()).find(|&j| red[j] > 1e-9);
            let Some(e) = entering else {
                return Some(obj_val);
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..t.len() {
                if t[i][e] > 1e-9 {
                    let ratio = t[i][obj.len()] / t[i][e];
                    if leave.is_none_or(|(li, lr)| {
                        ratio < lr - 1e-12 || (ratio < lr + 1e-12 && basis[i] < basis[li])
                    }) {
                        leave = Some((i, ratio));
                    }
                }
            }
            let Some((l, _)) = leave else {
                return None; // unbounded
            };
            let pivot = t[l][e];
            for v in t[l].iter_mut() {
                *v /= pivot;
            }
            for i in 0..t.len() {
                if i != l && t[i][e].abs() > 1e-14 {
                    let f = t[i][e];
                    for j in 0..t[i].len() {
                        t[i][j] -= f * t[l][j];
                    }
                }
            }
            basis[l] = e;
        }
        None
    };

    // phase 1: maximize -sum(artificials)
    let mut phase1_obj = vec![0.0; cols];
    for slot in phase1_obj.iter_mut().skip(2 * n + m) {
        *slot = -1.0;
    }
    let v1 = solve_phase(&mut t, &mut basis, &phase1_obj)?;
    if v1 < -1e-7 {
        return None; // infeasible
    }
    // phase 2: maximize cᵀ(x+ - x-), forbidding artificials
    let mut phase2_obj = vec![0.0; cols];
    for j in 0..n {
        phase2_obj[j] = c[j];
        phase2_obj[n + j] = -c[j];
    }
    for slot in phase2_obj.iter_mut().skip(2 * n + m) {
        *slot = -1e9; // keep artificials out of the basis
    }
    solve_phase(&mut t, &mut basis, &phase2_obj)
}

#[test]
fn lp_mode_agrees_with_simplex_oracle() {
    let mut prng = Prng::seed_from_u64(2718);
    let mut tested = 0;
    while tested < 100 {
        let n = 2 + (prng.next_u64() % 5) as usize;
        let m_extra = 1 + (prng.next_u64() % 12) as usize;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut b = Vec::new();
        // random halfspaces plus a bounding box keep the LP bounded
        for _ in 0..m_extra {
            let row: Vec<f64> = (0..n).map(|_| 2.0 * prng.next_f64() - 1.0).collect();
            rows.push(row);
            b.push(0.5 + 2.0 * prng.next_f64());
        }
        for j in 0..n {
            let mut lo = vec![0.0; n];
            lo[j] = -1.0;
            rows.push(lo);
            b.push(3.0);
            let mut hi = vec![0.0; n];
            hi[j] = 1.0;
            rows.push(hi);
            b.push(3.0);
        }
        let c: Vec<f64> = (0..n).map(|_| 2.0 * prng.next_f64() - 1.0).collect();
        let row_refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let a = Matrix::from_rows(&row_refs).unwrap();
        let Some(oracle_val) = simplex_max(&c, &a, &b) else {
            continue;
        };
        let prob = QpProblem::new(
            Matrix::zeros(n, n),
            Vector::from_vec_unchecked(c.iter().map(|v| -v).collect()),
            a.clone(),
            Vector::constant(a.rows(), -INF_BOUND),
            Vector::from_slice(&b),
        )
        .unwrap();
        let sol = qp_solve(&prob, &SolverSettings::tight()).unwrap();
        assert_eq!(sol.status, QpStatus::Solved, "lp trial {tested}");
        let val: f64 = c
            .iter()
            .zip(sol.z_star.as_slice())
            .map(|(ci, zi)| ci * zi)
            .sum();
        assert!(
            (val - oracle_val).abs() <= 1e-6 * (1.0 + oracle_val.abs()),
            "trial {tested}: admm {val} vs simplex {oracle_val}"
        );
        tested += 1;
    }
}

// -------- solution differentiation --------

#[test]
fn jacobian_of_unconstrained_qp_is_negative_inverse() {
    let p = Matrix::from_rows(&[&[4.0, 1.0], &[1.0, 3.0]]).unwrap();
    let prob = QpProblem::new(
        p.clone(),
        Vector::from_slice(&[1.0, -2.0]),
        Matrix::identity(2),
        Vector::constant(2, -INF_BOUND),
        Vector::constant(2, INF_BOUND),
    )
    .unwrap();
    let sol = qp_solve(&prob, &SolverSettings::default()).unwrap();
    // theta = q: dq/dtheta = I, bounds independent of theta
    let dz = qp_solution_jacobian(&prob, &sol, &Matrix::identity(2), &Matrix::zeros(2, 2)).unwrap();
    // expect -P^{-1}: check P * dz = -I
    let prod = p.matmul(&dz);
    for i in 0..2 {
        for j in 0..2 {
            let expected = if i == j { -1.0 } else { 0.0 };
            assert!((prod[(i, j)] - expected).abs() < 1e-8);
        }
    }
}

#[test]
fn jacobian_zero_when_clamped() {
    // min (z - q_hat)^2 s.t. z <= 2, with q_hat = 3
    let prob = QpProblem::new(
        Matrix::diagonal(&[2.0]),
        Vector::from_slice(&[-6.0]),
        Matrix::identity(1),
        Vector::from_slice(&[-INF_BOUND]),
        Vector::from_slice(&[2.0]),
    )
    .unwrap();
    let sol = qp_solve(&prob, &SolverSettings::default()).unwrap();
    assert!((sol.z_star[0] - 2.0).abs() < 1e-6);
    // theta = q_hat: dq/dq_hat = -2, bound fixed
    let dz = qp_solution_jacobian(
        &prob,
        &sol,
        &Matrix::from_rows(&[&[-2.0]]).unwrap(),
        &Matrix::zeros(1, 1),
    )
    .unwrap();
    assert!(dz[(0, 0)].abs() < 1e-9, "clamped sensitivity {}", dz[(0, 0)]);
}

#[test]
fn jacobian_matches_finite_differences_with_active_rows() {
    let mut prng = Prng::seed_from_u64(5150);
    let (prob, _) = planted_qp(&mut prng, 5, 9);
    let sol = qp_solve(&prob, &SolverSettings::default()).unwrap();
    // theta perturbs q along two fixed directions
    let dirs = Matrix::from_rows(&[
        &[1.0, 0.0],
        &[0.0, 1.0],
        &[0.5, -0.5],
        &[0.0, 0.25],
        &[-1.0, 0.0],
    ])
    .unwrap();
    let dz = qp_solution_jacobian(&prob, &sol, &dirs, &Matrix::zeros(9, 2)).unwrap();
    let h = 1e-5;
    for j in 0..2 {
        let mut q_plus = prob.q_vec.clone();
        let mut q_minus = prob.q_vec.clone();
        for i in 0..5 {
            q_plus[i] += h * dirs[(i, j)];
            q_minus[i] -= h * dirs[(i, j)];
        }
        let plus = qp_solve(
            &QpProblem::new(
                prob.p_mat.clone(),
                q_plus,
                prob.a_mat.clone(),
                prob.lower.clone(),
                prob.upper.clone(),
            )
            .unwrap(),
            &SolverSettings::default(),
        )
        .unwrap();
        let minus = qp_solve(
            &QpProblem::new(
                prob.p_mat.clone(),
                q_minus,
                prob.a_mat.clone(),
                prob.lower.clone(),
                prob.upper.clone(),
            )
            .unwrap(),
            &SolverSettings::default(),
        )
        .unwrap();
        for i in 0..5 {
            let fd = (plus.z_star[i] - minus.z_star[i]) / (2.0 * h);
            assert!(
                (fd - dz[(i, j)]).abs() < 1e-4,
                "entry ({i},{j}): fd {fd} vs analytic {}",
                dz[(i, j)]
            );
        }
    }
}

#[test]
fn weakly_active_constraint_raises_degenerate_error() {
    // optimum sits exactly on the boundary with zero multiplier
    let prob = QpProblem::new(
        Matrix::diagonal(&[2.0]),
        Vector::zeros(1),
        Matrix::identity(1),
        Vector::from_slice(&[-INF_BOUND]),
        Vector::from_slice(&[0.0]),
    )
    .unwrap();
    let sol = qp_solve(&prob, &SolverSettings::default()).unwrap();
    match qp_solution_jacobian(&prob, &sol, &Matrix::identity(1), &Matrix::zeros(1, 1)) {
        Err(OptimizeError::DegenerateActiveSet { row: 0 }) => {}
        other => panic!("expected DegenerateActiveSet, got {other:?}"),
    }
}

#[test]
fn max_iter_reported_when_budget_exhausted() {
    let mut prng = Prng::seed_from_u64(8);
    let (prob, _) = planted_qp(&mut prng, 10, 20);
    let settings = SolverSettings {
        max_iter: 3,
        check_interval: 3,
        polish: false,
        ..SolverSettings::default()
    };
    let sol = qp_solve(&prob, &settings).unwrap();
    assert_eq!(sol.status, QpStatus::MaxIter);
}
