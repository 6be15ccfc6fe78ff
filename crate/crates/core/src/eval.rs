//! Controller evaluation: NMSE against the oracle labels, closed-loop
//! rollouts, normalized trajectory cost, and the two comparison tables.

use rayon::prelude::*;
use thiserror::Error;

use crate::dataset::{self, Dataset, DatasetError, TargetMode};
use crate::mpc::{MpcError, MpcSolver, MpcSpec};
use crate::network::{
    network_output, train, Arch, Mlp, NetworkError, ProjectionSpec, TrainConfig,
};
use crate::numerics::{Matrix, Vector};
use crate::optimize::{QpKernel, QpStatus, SolverSettings, INF_BOUND};
use crate::polytope::{Polytope, PolytopeError};
use crate::sampler::{hit_and_run, HitAndRunConfig, SamplerError};

/// Feasibility flags in rollouts use this tolerance; the projection layer
/// certifies membership at 1e-7, so anything beyond it is a violation.
pub const VIOLATION_TOL: f64 = 1e-7;
/// Exact-match NMSE is reported as this floor instead of -infinity.
pub const NMSE_FLOOR_DB: f64 = -300.0;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("controller failed: {0}")]
    ControllerFailure(String),
    #[error("reference energy is zero; NMSE is undefined")]
    ZeroReference,
    #[error("zero initial state; normalized cost is undefined")]
    ZeroInitialState,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Mpc(#[from] MpcError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Polytope(#[from] PolytopeError),
}

/// Clips a raw control onto an input polytope (exact clamp for boxes,
/// least-squares projection in general).
pub struct InputClip {
    kernel: QpKernel,
    b_vec: Vector,
    rows: usize,
}

impl InputClip {
    pub fn new(u_set: &Polytope) -> Result<Self, EvalError> {
        let kernel = QpKernel::new(
            Matrix::identity(u_set.dim()),
            u_set.a_mat().clone(),
            SolverSettings::tight(),
        )
        .map_err(NetworkError::Optimize)?;
        Ok(Self {
            kernel,
            b_vec: u_set.b_vec().clone(),
            rows: u_set.num_rows(),
        })
    }

    pub fn clip(&self, u: &Vector) -> Result<Vector, EvalError> {
        let sol = self
            .kernel
            .solve(
                &u.scale(-1.0),
                &Vector::constant(self.rows, -INF_BOUND),
                &self.b_vec,
            )
            .map_err(NetworkError::Optimize)?;
        if sol.status != QpStatus::Solved {
            return Err(EvalError::ControllerFailure(format!(
                "input clip failed with status {:?}",
                sol.status
            )));
        }
        Ok(sol.z_star)
    }
}

/// The compared control laws; each maps the current state to one input.
#[allow(clippy::large_enum_variant)]
pub enum Controller {
    /// Re-solves the horizon QP each step and applies the first input.
    MpcOracle(MpcSolver),
    /// `u = -L x` clipped to the input set (state constraints ignored).
    Lqr { gain: Matrix, clip: InputClip },
    /// Raw network output; may leave the feasible set.
    Bbnn { net: Mlp },
    /// Network output passed through the feasibility projection.
    ProjectionNn { net: Mlp, pspec: ProjectionSpec },
}

impl Controller {
    pub fn mpc_oracle(spec: &MpcSpec) -> Result<Self, EvalError> {
        Ok(Controller::MpcOracle(MpcSolver::new(
            spec,
            &SolverSettings::default(),
        )?))
    }

    pub fn lqr(spec: &MpcSpec) -> Result<Self, EvalError> {
        let gain = crate::mpc::lqr_gain(&spec.sys, &spec.q_mat, &spec.r_mat)?;
        Ok(Controller::Lqr {
            gain,
            clip: InputClip::new(&spec.u_set)?,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Controller::MpcOracle(_) => "mpc",
            Controller::Lqr { .. } => "lqr",
            Controller::Bbnn { .. } => "bbnn",
            Controller::ProjectionNn { .. } => "projnn",
        }
    }

    pub fn act(&self, x: &Vector) -> Result<Vector, EvalError> {
        match self {
            Controller::MpcOracle(solver) => Ok(solver.first_input(x)?),
            Controller::Lqr { gain, clip } => clip.clip(&gain.matvec(x).scale(-1.0)),
            Controller::Bbnn { net } => Ok(network_output(Arch::Bbnn, net, None, x)?),
            Controller::ProjectionNn { net, pspec } => {
                Ok(network_output(Arch::ProjectionNn, net, Some(pspec), x)?)
            }
        }
    }
}

/// One closed-loop rollout with per-step feasibility flags.
#[derive(Clone, Debug)]
pub struct TrajectoryResult {
    /// Visited states `x_0..x_N`.
    pub states: Vec<Vector>,
    /// Applied inputs `u_0..u_{N-1}`.
    pub inputs: Vec<Vector>,
    /// Horizon cost of the rollout (terminal weight on the final state).
    pub cost: f64,
    /// `x_k in X` for `k = 1..N`.
    pub state_feasible: Vec<bool>,
    /// `u_k in U` for `k = 0..N-1`.
    pub input_feasible: Vec<bool>,
    pub violations: usize,
}

/// Receding application of `ctrl` for `steps` steps; constraint
/// violations are counted, never aborted on (a black-box network leaving
/// the feasible set is itself a measured outcome).
pub fn simulate(
    ctrl: &Controller,
    spec: &MpcSpec,
    x0: &Vector,
    steps: usize,
) -> Result<TrajectoryResult, EvalError> {
    if x0.len() != spec.state_dim() {
        return Err(EvalError::DimensionMismatch(format!(
            "initial state has {} coordinates, system expects {}",
            x0.len(),
            spec.state_dim()
        )));
    }
    let mut states = Vec::with_capacity(steps + 1);
    let mut inputs = Vec::with_capacity(steps);
    let mut state_feasible = Vec::with_capacity(steps);
    let mut input_feasible = Vec::with_capacity(steps);
    let mut cost = 0.0;
    let mut x = x0.clone();
    states.push(x.clone());
    for _ in 0..steps {
        let u = ctrl
            .act(&x)
            .map_err(|e| EvalError::ControllerFailure(e.to_string()))?;
        cost += spec.q_mat.matvec(&x).dot(&x) + spec.r_mat.matvec(&u).dot(&u);
        input_feasible.push(spec.u_set.contains(&u, VIOLATION_TOL)?);
        x = spec.sys.step(&x, &u);
        state_feasible.push(spec.x_set.contains(&x, VIOLATION_TOL)?);
        inputs.push(u);
        states.push(x.clone());
    }
    cost += spec.qn_mat.matvec(&x).dot(&x);
    let violations = state_feasible.iter().filter(|ok| !**ok).count()
        + input_feasible.iter().filter(|ok| !**ok).count();
    Ok(TrajectoryResult {
        states,
        inputs,
        cost,
        state_feasible,
        input_feasible,
        violations,
    })
}

/// Rollout cost normalized by the initial state energy `x0ᵀx0`.
pub fn normalized_cost(traj: &TrajectoryResult, _spec: &MpcSpec) -> Result<f64, EvalError> {
    let x0 = traj.states.first().ok_or(EvalError::ZeroInitialState)?;
    let energy = x0.dot(x0);
    if energy < 1e-300 {
        return Err(EvalError::ZeroInitialState);
    }
    Ok(traj.cost / energy)
}

/// Aggregate normalized mean square error in decibels:
/// `10 log10( sum ||u - u*||^2 / sum ||u*||^2 )`.
pub fn nmse(preds: &[Vector], truths: &[Vector]) -> Result<f64, EvalError> {
    if preds.len() != truths.len() {
        return Err(EvalError::DimensionMismatch(format!(
            "{} predictions vs {} references",
            preds.len(),
            truths.len()
        )));
    }
    let mut err_energy = 0.0;
    let mut ref_energy = 0.0;
    for (p, t) in preds.iter().zip(truths) {
        if p.len() != t.len() {
            return Err(EvalError::DimensionMismatch(
                "prediction/reference dimensions differ".to_string(),
            ));
        }
        let d = p.sub(t);
        err_energy += d.dot(&d);
        ref_energy += t.dot(t);
    }
    if ref_energy < 1e-300 {
        return Err(EvalError::ZeroReference);
    }
    if err_energy == 0.0 {
        return Ok(NMSE_FLOOR_DB);
    }
    Ok((10.0 * (err_energy / ref_energy).log10()).max(NMSE_FLOOR_DB))
}

/// Test-set NMSE of a trained architecture.
pub fn evaluate_nmse(
    arch: Arch,
    net: &Mlp,
    pspec: Option<&ProjectionSpec>,
    test: &Dataset,
) -> Result<f64, EvalError> {
    let preds: Vec<Result<Vector, NetworkError>> = test
        .pairs
        .par_iter()
        .map(|(x, _)| network_output(arch, net, pspec, x))
        .collect();
    let preds: Result<Vec<Vector>, NetworkError> = preds.into_iter().collect();
    let truths: Vec<Vector> = test.pairs.iter().map(|(_, u)| u.clone()).collect();
    nmse(&preds?, &truths)
}

#[derive(Clone, Debug)]
pub struct NmseRow {
    pub size: usize,
    pub arch: String,
    pub seed: u64,
    pub nmse_db: f64,
}

#[derive(Clone, Debug, Default)]
pub struct NmseTable {
    pub rows: Vec<NmseRow>,
}

impl NmseTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("size,arch,seed,nmse_db\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{:.6}\n",
                row.size, row.arch, row.seed, row.nmse_db
            ));
        }
        out
    }

    pub fn mean_nmse(&self, size: usize, arch: &str) -> Option<f64> {
        let vals: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.size == size && r.arch == arch)
            .map(|r| r.nmse_db)
            .collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    }
}

#[derive(Clone, Debug)]
pub struct NmseCurveConfig {
    pub sizes: Vec<usize>,
    pub archs: Vec<Arch>,
    pub seeds: Vec<u64>,
    pub test_size: usize,
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
    pub burn_in: usize,
    pub thinning: usize,
    pub created: String,
}

/// Learning-curve experiment: a fixed test set, fresh training sets per
/// size, one trained network per (size, arch, seed).
pub fn nmse_curve(
    spec: &MpcSpec,
    cinf: &Polytope,
    cfg: &NmseCurveConfig,
) -> Result<NmseTable, EvalError> {
    assert!(cfg.sizes.windows(2).all(|w| w[0] <= w[1]), "sizes ascending");
    let pspec = if cfg.archs.contains(&Arch::ProjectionNn) {
        Some(ProjectionSpec::build(&spec.sys, &spec.u_set, cinf)?)
    } else {
        None
    };
    let widths: Vec<usize> = std::iter::once(spec.state_dim())
        .chain(cfg.hidden.iter().copied())
        .chain(std::iter::once(spec.input_dim()))
        .collect();
    let sampler_for = |label: &str, seed: u64| HitAndRunConfig {
        seed: seed ^ crate::hash::fnv1a64(label.as_bytes()),
        burn_in: cfg.burn_in,
        thinning: cfg.thinning,
        start: None,
    };
    let base_seed = cfg.train.seed;
    let test = dataset::generate_tagged(
        spec,
        cinf,
        cfg.test_size,
        &sampler_for("nmse-test", base_seed),
        TargetMode::FirstInput,
        &cfg.created,
    )?;
    let mut table = NmseTable::default();
    for &size in &cfg.sizes {
        for &seed in &cfg.seeds {
            let train_set = dataset::generate_tagged(
                spec,
                cinf,
                size,
                &sampler_for(&format!("nmse-train-{size}-{seed}"), base_seed),
                TargetMode::FirstInput,
                &cfg.created,
            )?;
            for &arch in &cfg.archs {
                let net = Mlp::new(&widths, seed);
                let train_cfg = TrainConfig {
                    seed,
                    ..cfg.train.clone()
                };
                let (trained, _) = train(net, &train_set, &train_cfg, arch, pspec.as_ref())?;
                let nmse_db = evaluate_nmse(arch, &trained, pspec.as_ref(), &test)?;
                table.rows.push(NmseRow {
                    size,
                    arch: arch.as_str().to_string(),
                    seed,
                    nmse_db,
                });
            }
        }
    }
    Ok(table)
}

#[derive(Clone, Debug)]
pub struct CostRow {
    pub traj_id: usize,
    pub controller: String,
    pub j_n: f64,
    pub violations: usize,
}

#[derive(Clone, Debug, Default)]
pub struct CostTable {
    pub rows: Vec<CostRow>,
}

impl CostTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("traj_id,controller,j_n,violations\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{:.6},{}\n",
                row.traj_id, row.controller, row.j_n, row.violations
            ));
        }
        out
    }

    pub fn per_controller(&self, name: &str) -> Vec<&CostRow> {
        self.rows.iter().filter(|r| r.controller == name).collect()
    }

    pub fn summary(&self) -> String {
        let mut names: Vec<&str> = self.rows.iter().map(|r| r.controller.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        let mut out = String::from("controller mean_j_n median_j_n violations\n");
        for name in names {
            let mut vals: Vec<f64> = self
                .per_controller(name)
                .iter()
                .map(|r| r.j_n)
                .collect();
            vals.sort_by(|a, b| a.partial_cmp(b).expect("finite costs"));
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let median = vals[vals.len() / 2];
            let violations: usize = self
                .per_controller(name)
                .iter()
                .map(|r| r.violations)
                .sum();
            out.push_str(&format!("{name} {mean:.6} {median:.6} {violations}\n"));
        }
        out
    }
}

/// Closed-loop cost comparison over `n_traj` sampled initial states. The
/// receding-horizon oracle is reported under `mpc`; the open-loop optimum
/// `j*/x0ᵀx0` (the theoretical lower bound for feasible rollouts) is
/// reported under `mpc-open-loop`.
pub fn cost_comparison(
    spec: &MpcSpec,
    cinf: &Polytope,
    controllers: &[Controller],
    n_traj: usize,
    seed: u64,
    burn_in: usize,
    thinning: usize,
) -> Result<CostTable, EvalError> {
    let starts = hit_and_run(
        cinf,
        n_traj,
        &HitAndRunConfig {
            seed,
            burn_in,
            thinning,
            start: None,
        },
    )?;
    let mut table = CostTable::default();
    let open_loop = MpcSolver::new(spec, &SolverSettings::default())?;
    for ctrl in controllers {
        let rows: Vec<Result<CostRow, EvalError>> = starts
            .par_iter()
            .enumerate()
            .map(|(traj_id, x0)| {
                let traj = simulate(ctrl, spec, x0, spec.horizon)?;
                Ok(CostRow {
                    traj_id,
                    controller: ctrl.name().to_string(),
                    j_n: normalized_cost(&traj, spec)?,
                    violations: traj.violations,
                })
            })
            .collect();
        for row in rows {
            table.rows.push(row?);
        }
    }
    let lower_rows: Vec<Result<CostRow, EvalError>> = starts
        .par_iter()
        .enumerate()
        .map(|(traj_id, x0)| {
            let solve = open_loop.solve(x0)?;
            let energy = x0.dot(x0);
            if energy < 1e-300 {
                return Err(EvalError::ZeroInitialState);
            }
            Ok(CostRow {
                traj_id,
                controller: "mpc-open-loop".to_string(),
                j_n: solve.j_star / energy,
                violations: 0,
            })
        })
        .collect();
    for row in lower_rows {
        table.rows.push(row?);
    }
    Ok(table)
}
