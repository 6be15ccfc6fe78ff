//! Supervised (state, optimal control) pairs: generation by sampling the
//! invariant set and solving the horizon QP offline, plus a diff-able
//! plain-text storage format.

use crate::mpc::{MpcError, MpcSolver, MpcSpec};
use crate::numerics::Vector;
use crate::optimize::SolverSettings;
use crate::polytope::{Polytope, PolytopeError};
use crate::sampler::{HitAndRunChain, HitAndRunConfig, SamplerError};
use rayon::prelude::*;
use thiserror::Error;

/// Generation aborts when more than this fraction of sampled states fail
/// to label (feasibility of certified invariant-set samples makes any
/// skip exceptional).
const MAX_SKIP_RATE: f64 = 0.10;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("label generation stalled: {skipped} of {attempted} states were infeasible")]
    GenerationStalled { skipped: usize, attempted: usize },
    #[error("parse error at line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("metadata mismatch: {0}")]
    MetadataMismatch(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Mpc(#[from] MpcError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Polytope(#[from] PolytopeError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TargetMode {
    /// Supervise on the first optimal input `u_0` (the receding law).
    FirstInput,
    /// Supervise on the full stacked sequence `u_0..u_{N-1}`.
    FullSequence,
}

impl TargetMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            TargetMode::FirstInput => "first-input",
            TargetMode::FullSequence => "full-sequence",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "first-input" => Some(TargetMode::FirstInput),
            "full-sequence" => Some(TargetMode::FullSequence),
            _ => None,
        }
    }

    pub fn target_dim(&self, spec: &MpcSpec) -> usize {
        match self {
            TargetMode::FirstInput => spec.input_dim(),
            TargetMode::FullSequence => spec.input_dim() * spec.horizon,
        }
    }
}

/// Provenance carried by every dataset file; loads bound to an experiment
/// must agree on the spec fingerprint and solver tolerance.
#[derive(Clone, Debug)]
pub struct DatasetMetadata {
    pub spec_hash: u64,
    pub seed: u64,
    pub burn_in: usize,
    pub thinning: usize,
    pub solver_eps: f64,
    pub created: String,
    pub skipped: usize,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub pairs: Vec<(Vector, Vector)>,
    pub target_mode: TargetMode,
    pub metadata: DatasetMetadata,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.pairs.first().map_or(0, |(x, _)| x.len())
    }

    pub fn target_dim(&self) -> usize {
        self.pairs.first().map_or(0, |(_, u)| u.len())
    }

    /// Rejects use of this dataset under a different spec than the one
    /// that generated it.
    pub fn ensure_spec(&self, spec: &MpcSpec) -> Result<(), DatasetError> {
        if self.metadata.spec_hash != spec.stable_hash() {
            return Err(DatasetError::MetadataMismatch(format!(
                "dataset was generated under spec {:016x}, experiment uses {:016x}",
                self.metadata.spec_hash,
                spec.stable_hash()
            )));
        }
        Ok(())
    }

    /// Rejects use of this dataset under a different spec or solver
    /// tolerance than the one that generated it.
    pub fn ensure_matches(&self, spec: &MpcSpec, solver_eps: f64) -> Result<(), DatasetError> {
        self.ensure_spec(spec)?;
        if (self.metadata.solver_eps - solver_eps).abs() > 1e-18 {
            return Err(DatasetError::MetadataMismatch(format!(
                "dataset labels used solver eps {:e}, experiment demands {:e}",
                self.metadata.solver_eps, solver_eps
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), DatasetError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, DatasetError> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("# mpclearn dataset\n");
        out.push_str(&format!("# spec_hash: {:016x}\n", self.metadata.spec_hash));
        out.push_str(&format!("# target_mode: {}\n", self.target_mode.as_str()));
        out.push_str(&format!("# seed: {}\n", self.metadata.seed));
        out.push_str(&format!("# burn_in: {}\n", self.metadata.burn_in));
        out.push_str(&format!("# thinning: {}\n", self.metadata.thinning));
        out.push_str(&format!("# solver_eps: {:e}\n", self.metadata.solver_eps));
        out.push_str(&format!("# created: {}\n", self.metadata.created));
        out.push_str(&format!("# skipped: {}\n", self.metadata.skipped));
        out.push_str(&format!("# state_dim: {}\n", self.state_dim()));
        out.push_str(&format!("# target_dim: {}\n", self.target_dim()));
        out.push_str(&format!("# pairs: {}\n", self.len()));
        for (x, u) in &self.pairs {
            for v in x.iter() {
                out.push_str(&format!("{v:.16e} "));
            }
            let mut first = true;
            for v in u.iter() {
                if !first {
                    out.push(' ');
                }
                out.push_str(&format!("{v:.16e}"));
                first = false;
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, DatasetError> {
        let mut meta = std::collections::HashMap::new();
        let mut pairs = Vec::new();
        let mut state_dim = None;
        let mut target_dim = None;
        let mut declared_pairs = None;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                if let Some((key, value)) = comment.split_once(':') {
                    meta.insert(key.trim().to_string(), value.trim().to_string());
                }
                continue;
            }
            let sd = *state_dim.get_or_insert_with(|| {
                meta.get("state_dim")
                    .and_then(|v| v.parse().ok())
                    .unwrap_or(0)
            });
            let td = *target_dim.get_or_insert_with(|| {
                meta.get("target_dim")
                    .and_then(|v| v.parse().ok())
                    .unwrap_or(0)
            });
            if declared_pairs.is_none() {
                declared_pairs = meta.get("pairs").and_then(|v| v.parse::<usize>().ok());
            }
            if sd == 0 || td == 0 {
                return Err(DatasetError::Format {
                    line: line_no,
                    msg: "data before state_dim/target_dim header".to_string(),
                });
            }
            let values: Result<Vec<f64>, _> =
                line.split_whitespace().map(str::parse::<f64>).collect();
            let values = values.map_err(|e| DatasetError::Format {
                line: line_no,
                msg: e.to_string(),
            })?;
            if values.len() != sd + td {
                return Err(DatasetError::Format {
                    line: line_no,
                    msg: format!("expected {} values, found {}", sd + td, values.len()),
                });
            }
            pairs.push((
                Vector::from_slice(&values[..sd]),
                Vector::from_slice(&values[sd..]),
            ));
        }
        if let Some(expected) = declared_pairs {
            if expected != pairs.len() {
                return Err(DatasetError::Format {
                    line: text.lines().count(),
                    msg: format!("header declares {} pairs, file has {}", expected, pairs.len()),
                });
            }
        }
        let target_mode = meta
            .get("target_mode")
            .and_then(|v| TargetMode::parse(v))
            .ok_or(DatasetError::Format {
                line: 1,
                msg: "missing or invalid target_mode".to_string(),
            })?;
        let get_u64 = |key: &str| -> Result<u64, DatasetError> {
            meta.get(key)
                .and_then(|v| {
                    if key == "spec_hash" {
                        u64::from_str_radix(v, 16).ok()
                    } else {
                        v.parse().ok()
                    }
                })
                .ok_or(DatasetError::Format {
                    line: 1,
                    msg: format!("missing or invalid {key}"),
                })
        };
        let metadata = DatasetMetadata {
            spec_hash: get_u64("spec_hash")?,
            seed: get_u64("seed")?,
            burn_in: get_u64("burn_in")? as usize,
            thinning: get_u64("thinning")? as usize,
            solver_eps: meta
                .get("solver_eps")
                .and_then(|v| v.parse().ok())
                .ok_or(DatasetError::Format {
                    line: 1,
                    msg: "missing or invalid solver_eps".to_string(),
                })?,
            created: meta.get("created").cloned().unwrap_or_default(),
            skipped: get_u64("skipped").unwrap_or(0) as usize,
        };
        if pairs.is_empty() {
            return Err(DatasetError::Format {
                line: text.lines().count(),
                msg: "dataset holds no pairs".to_string(),
            });
        }
        Ok(Dataset {
            pairs,
            target_mode,
            metadata,
        })
    }
}

fn stack_targets(solve_u: &[Vector], mode: TargetMode) -> Vector {
    match mode {
        TargetMode::FirstInput => solve_u[0].clone(),
        TargetMode::FullSequence => {
            let mut out = solve_u[0].clone();
            for u in &solve_u[1..] {
                out = out.concat(u);
            }
            out
        }
    }
}

/// Samples `n` states from `cinf` with one deterministic chain and labels
/// them by solving the horizon QP; labeling runs in parallel. States whose
/// QP reports infeasible are skipped and counted.
pub fn generate(
    spec: &MpcSpec,
    cinf: &Polytope,
    n: usize,
    cfg: &HitAndRunConfig,
    mode: TargetMode,
) -> Result<Dataset, DatasetError> {
    generate_tagged(spec, cinf, n, cfg, mode, &now_tag())
}

/// [`generate`] with an explicit `created` tag so seeded pipelines can
/// emit byte-identical files.
pub fn generate_tagged(
    spec: &MpcSpec,
    cinf: &Polytope,
    n: usize,
    cfg: &HitAndRunConfig,
    mode: TargetMode,
    created: &str,
) -> Result<Dataset, DatasetError> {
    assert!(n > 0, "dataset size must be positive");
    let settings = SolverSettings::default();
    let solver = MpcSolver::new(spec, &settings)?;
    let mut chain = HitAndRunChain::new(cinf, cfg)?;
    let mut pairs: Vec<(Vector, Vector)> = Vec::with_capacity(n);
    let mut skipped = 0usize;
    let mut attempted = 0usize;
    while pairs.len() < n {
        let batch_size = (n - pairs.len()).min(256);
        let states: Vec<Vector> = (0..batch_size)
            .map(|_| chain.next_sample())
            .collect::<Result<_, _>>()?;
        attempted += states.len();
        let labeled: Vec<Result<Option<(Vector, Vector)>, MpcError>> = states
            .into_par_iter()
            .map(|x| match solver.solve(&x) {
                Ok(solve) => Ok(Some((x, stack_targets(&solve.u_seq, mode)))),
                Err(MpcError::InfeasibleState) => Ok(None),
                Err(e) => Err(e),
            })
            .collect();
        for item in labeled {
            match item? {
                Some(pair) => pairs.push(pair),
                None => skipped += 1,
            }
        }
        if skipped as f64 > MAX_SKIP_RATE * attempted as f64 {
            return Err(DatasetError::GenerationStalled { skipped, attempted });
        }
    }
    pairs.truncate(n);
    Ok(Dataset {
        pairs,
        target_mode: mode,
        metadata: DatasetMetadata {
            spec_hash: spec.stable_hash(),
            seed: cfg.seed,
            burn_in: cfg.burn_in,
            thinning: cfg.thinning,
            solver_eps: settings.eps_abs,
            created: created.to_string(),
            skipped,
        },
    })
}

/// Labels caller-provided states (used to turn acquisition proposals into
/// training pairs). Infeasible states are skipped and counted.
pub fn generate_from_states(
    spec: &MpcSpec,
    states: &[Vector],
    mode: TargetMode,
    created: &str,
) -> Result<Dataset, DatasetError> {
    let settings = SolverSettings::default();
    let solver = MpcSolver::new(spec, &settings)?;
    let labeled: Vec<Result<Option<(Vector, Vector)>, MpcError>> = states
        .par_iter()
        .map(|x| match solver.solve(x) {
            Ok(solve) => Ok(Some((x.clone(), stack_targets(&solve.u_seq, mode)))),
            Err(MpcError::InfeasibleState) => Ok(None),
            Err(e) => Err(e),
        })
        .collect();
    let mut pairs = Vec::with_capacity(states.len());
    let mut skipped = 0usize;
    for item in labeled {
        match item? {
            Some(pair) => pairs.push(pair),
            None => skipped += 1,
        }
    }
    if pairs.is_empty() || skipped as f64 > MAX_SKIP_RATE * states.len() as f64 {
        return Err(DatasetError::GenerationStalled {
            skipped,
            attempted: states.len(),
        });
    }
    Ok(Dataset {
        pairs,
        target_mode: mode,
        metadata: DatasetMetadata {
            spec_hash: spec.stable_hash(),
            seed: 0,
            burn_in: 0,
            thinning: 0,
            solver_eps: settings.eps_abs,
            created: created.to_string(),
            skipped,
        },
    })
}

fn now_tag() -> String {
    let secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    format!("unix:{secs}")
}
