//! Hit-and-run sampling: a random walk whose stationary distribution is
//! uniform over a convex polytope. Supplies training/test states and
//! trajectory initial conditions.

use crate::numerics::{standard_normal, Prng, Vector};
use crate::polytope::{Polytope, PolytopeError};
use thiserror::Error;

/// Strict-interior margin demanded of the start point.
const INTERIOR_TOL: f64 = 1e-9;
/// Chord endpoints are pulled in by this relative margin so iterates stay
/// strictly interior despite floating point.
const CHORD_MARGIN: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("start point is not strictly interior")]
    NotInterior,
    #[error("degenerate chord (t_max <= t_min): polytope is empty or lower-dimensional")]
    EmptyChord,
    #[error("chord is unbounded along the drawn direction")]
    UnboundedDirection,
    #[error(transparent)]
    Polytope(#[from] PolytopeError),
}

#[derive(Clone, Debug)]
pub struct HitAndRunConfig {
    pub seed: u64,
    pub burn_in: usize,
    pub thinning: usize,
    /// Walk start; defaults to the Chebyshev center.
    pub start: Option<Vector>,
}

impl HitAndRunConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            burn_in: 1000,
            thinning: 10,
            start: None,
        }
    }
}

/// Resumable walk over one polytope; [`hit_and_run`] is the batch facade.
pub struct HitAndRunChain {
    poly: Polytope,
    x: Vector,
    prng: Prng,
    thinning: usize,
}

impl HitAndRunChain {
    pub fn new(poly: &Polytope, cfg: &HitAndRunConfig) -> Result<Self, SamplerError> {
        assert!(cfg.thinning >= 1, "thinning must be >= 1");
        let start = match &cfg.start {
            Some(x) => x.clone(),
            None => {
                let (center, radius) = poly.chebyshev_center()?;
                if radius <= INTERIOR_TOL {
                    return Err(SamplerError::NotInterior);
                }
                center
            }
        };
        if !poly.contains(&start, -INTERIOR_TOL)? {
            return Err(SamplerError::NotInterior);
        }
        let mut chain = Self {
            poly: poly.clone(),
            x: start,
            prng: Prng::seed_from_u64(cfg.seed),
            thinning: cfg.thinning,
        };
        for _ in 0..cfg.burn_in {
            chain.step()?;
        }
        Ok(chain)
    }

    /// One uniform step along a random chord.
    fn step(&mut self) -> Result<(), SamplerError> {
        let n = self.poly.dim();
        let dir = standard_normal(&mut self.prng, n);
        let norm = dir.norm();
        if norm < 1e-300 {
            return Ok(()); // astronomically unlikely; stay put
        }
        let dir = dir.scale(1.0 / norm);
        let a = self.poly.a_mat();
        let b = self.poly.b_vec();
        let ax = a.matvec(&self.x);
        let ad = a.matvec(&dir);
        let mut t_min = f64::NEG_INFINITY;
        let mut t_max = f64::INFINITY;
        for i in 0..self.poly.num_rows() {
            let slack = b[i] - ax[i];
            if ad[i] > 1e-14 {
                t_max = t_max.min(slack / ad[i]);
            } else if ad[i] < -1e-14 {
                t_min = t_min.max(slack / ad[i]);
            }
        }
        if !t_min.is_finite() || !t_max.is_finite() {
            return Err(SamplerError::UnboundedDirection);
        }
        // written negated so a NaN chord is also rejected
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(t_max > t_min) {
            return Err(SamplerError::EmptyChord);
        }
        let margin = CHORD_MARGIN * (t_max - t_min);
        let t = t_min + margin + (t_max - t_min - 2.0 * margin) * self.prng.next_f64();
        self.x.axpy(t, &dir);
        Ok(())
    }

    /// Advances `thinning` steps and returns the reached state.
    pub fn next_sample(&mut self) -> Result<Vector, SamplerError> {
        for _ in 0..self.thinning {
            self.step()?;
        }
        Ok(self.x.clone())
    }
}

/// Draws `n_samples` states from the (asymptotically uniform) walk:
/// `burn_in` discarded steps, then every `thinning`-th state.
pub fn hit_and_run(
    poly: &Polytope,
    n_samples: usize,
    cfg: &HitAndRunConfig,
) -> Result<Vec<Vector>, SamplerError> {
    let mut chain = HitAndRunChain::new(poly, cfg)?;
    (0..n_samples).map(|_| chain.next_sample()).collect()
}
