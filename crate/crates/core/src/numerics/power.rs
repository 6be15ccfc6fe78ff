//! Power iteration for the leading right singular direction.

use super::{Matrix, NumericsError, Vector};

/// Direction-change tolerance for declaring convergence.
pub const POWER_TOL: f64 = 1e-10;
/// Direction change above this at the iteration cap is a hard failure.
pub const POWER_FAIL_TOL: f64 = 1e-6;
pub const POWER_MAX_ITER: usize = 10_000;

/// Returns `(v, s)` where the unit vector `v` maximizes `||G v||` and
/// `s = ||G v||` (the top singular value), via power iteration on GᵀG.
pub fn top_right_singular_vector(g: &Matrix) -> Result<(Vector, f64), NumericsError> {
    assert!(g.rows() > 0 && g.cols() > 0);
    let n = g.cols();
    if g.max_abs() == 0.0 {
        return Err(NumericsError::DidNotConverge(f64::INFINITY));
    }
    // deterministic start with unequal components so it is never exactly
    // orthogonal to the top direction for the generic inputs seen here
    let mut v: Vector = (0..n).map(|i| 1.0 + 0.01 * (i as f64 + 1.0)).collect();
    let norm = v.norm();
    v = v.scale(1.0 / norm);

    let mut gv = vec![0.0; g.rows()];
    let mut w = vec![0.0; n];
    let mut last_change = f64::INFINITY;
    for _ in 0..POWER_MAX_ITER {
        g.matvec_into(v.as_slice(), &mut gv);
        g.tr_matvec_into(&gv, &mut w);
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            // started orthogonal to the range; perturb deterministically
            v[0] += 1e-3;
            let nv = v.norm();
            for x in v.as_mut_slice() {
                *x /= nv;
            }
            continue;
        }
        let next: Vector = w.iter().map(|x| x / norm).collect();
        // sign-insensitive direction change
        let diff_plus = next.sub(&v).inf_norm();
        let diff_minus = next.add(&v).inf_norm();
        last_change = diff_plus.min(diff_minus);
        v = next;
        if last_change < POWER_TOL {
            g.matvec_into(v.as_slice(), &mut gv);
            let s = gv.iter().map(|x| x * x).sum::<f64>().sqrt();
            return Ok((v, s));
        }
    }
    if last_change > POWER_FAIL_TOL {
        return Err(NumericsError::DidNotConverge(last_change));
    }
    let mut gv = vec![0.0; g.rows()];
    g.matvec_into(v.as_slice(), &mut gv);
    let s = gv.iter().map(|x| x * x).sum::<f64>().sqrt();
    Ok((v, s))
}

/// Upper estimate of the spectral radius via repeated squaring:
/// `||M^(2^k)||_inf^(1/2^k)` decreases to rho(M) as k grows.
pub fn spectral_radius_estimate(m: &Matrix) -> f64 {
    assert_eq!(m.rows(), m.cols());
    // invariant: M^steps == power * exp(log_scale * steps)
    let mut power = m.clone();
    let mut log_scale = 0.0_f64;
    let mut steps = 1.0_f64;
    for _ in 0..12 {
        let norm = power.max_abs();
        if norm == 0.0 {
            return 0.0;
        }
        power = power.scale(1.0 / norm);
        log_scale += norm.ln() / steps;
        power = power.matmul(&power);
        steps *= 2.0;
    }
    let norm_rows: f64 = (0..power.rows())
        .map(|i| power.row(i).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    (norm_rows.max(1e-300).ln() / steps + log_scale).exp()
}
