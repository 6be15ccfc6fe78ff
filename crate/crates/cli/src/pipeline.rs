//! Command implementations: each stage writes its artifacts plus a
//! manifest, and removes partial outputs on failure.

use std::path::{Path, PathBuf};

use mpclearn_core::acquisition;
use mpclearn_core::dataset::{self, Dataset, DatasetError, TargetMode};
use mpclearn_core::eval::{
    cost_comparison, evaluate_nmse, nmse_curve, Controller, CostTable, EvalError, NmseCurveConfig,
    NmseTable,
};
use mpclearn_core::mpc::{MpcError, MpcSpec};
use mpclearn_core::network::{Arch, Mlp, NetworkError, ProjectionSpec, TrainConfig};
use mpclearn_core::numerics::Vector;
use mpclearn_core::polytope::{max_control_invariant, Polytope, PolytopeError};
use mpclearn_core::sampler::{hit_and_run, HitAndRunConfig, SamplerError};
use thiserror::Error;

use crate::config::{stage_seed, ConfigError, ExperimentConfig};
use crate::manifest::OutputGuard;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Polytope(#[from] PolytopeError),
    #[error("{0}")]
    Mpc(#[from] MpcError),
    #[error("{0}")]
    Dataset(#[from] DatasetError),
    #[error("{0}")]
    Network(#[from] NetworkError),
    #[error("{0}")]
    Eval(#[from] EvalError),
    #[error("{0}")]
    Sampler(#[from] SamplerError),
    #[error("{0}")]
    Acquisition(#[from] acquisition::AcquisitionError),
    #[error("invariant-set iteration was not certified within the cap")]
    UncertifiedInvariantSet,
}

impl CliError {
    /// Stable machine-parseable class label for the one-line error output.
    pub fn class(&self) -> &'static str {
        match self {
            CliError::Config(_) => "InvalidConfig",
            CliError::Usage(_) => "Usage",
            CliError::Io(_) => "Io",
            CliError::Polytope(_) => "Polytope",
            CliError::Mpc(_) => "Mpc",
            CliError::Dataset(_) => "Dataset",
            CliError::Network(_) => "Network",
            CliError::Eval(_) => "Eval",
            CliError::Sampler(_) => "Sampler",
            CliError::Acquisition(_) => "Acquisition",
            CliError::UncertifiedInvariantSet => "UncertifiedInvariantSet",
        }
    }
}

const INVARIANT_MAX_ITER: usize = 100;

fn guard_for(cfg: &ExperimentConfig, command: &str) -> Result<OutputGuard, CliError> {
    Ok(OutputGuard::new(
        &cfg.out_dir,
        command,
        cfg.config_hash(),
        cfg.master_seed,
    )?)
}

fn compute_invariant_set(spec: &MpcSpec) -> Result<Polytope, CliError> {
    let inv = max_control_invariant(&spec.sys, &spec.x_set, &spec.u_set, INVARIANT_MAX_ITER)?;
    if !inv.certified {
        return Err(CliError::UncertifiedInvariantSet);
    }
    Ok(inv.set)
}

/// Loads a cached invariant set or computes (and caches) it.
fn load_or_compute_cinf(
    cfg: &ExperimentConfig,
    spec: &MpcSpec,
    cinf_path: Option<&Path>,
) -> Result<Polytope, CliError> {
    if let Some(path) = cinf_path {
        return Ok(Polytope::from_text(&std::fs::read_to_string(path)?)?);
    }
    let cache = cfg.out_dir.join("cinf.poly");
    if cache.exists() {
        return Ok(Polytope::from_text(&std::fs::read_to_string(&cache)?)?);
    }
    let set = compute_invariant_set(spec)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    std::fs::write(&cache, set.to_text())?;
    Ok(set)
}

pub fn run_invariant_set(cfg: &ExperimentConfig) -> Result<PathBuf, CliError> {
    let spec = cfg.load_spec()?;
    let mut guard = guard_for(cfg, "invariant-set")?;
    let set = compute_invariant_set(&spec)?;
    let path = guard.write_file("cinf.poly", &set.to_text())?;
    guard.commit()?;
    println!(
        "invariant set: {} rows in dimension {} -> {}",
        set.num_rows(),
        set.dim(),
        path.display()
    );
    Ok(path)
}

/// Plain-text states file: `# states: <n>` and `# dim: <d>` headers, then
/// one state per line (shared by `sample` and `acquire`).
pub fn write_states_text(states: &[Vector]) -> String {
    let dim = states.first().map_or(0, Vector::len);
    let mut out = format!("# states: {}\n# dim: {}\n", states.len(), dim);
    for x in states {
        let mut first = true;
        for v in x.iter() {
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

pub fn parse_states_text(text: &str) -> Result<Vec<Vector>, CliError> {
    let mut states = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let values: Result<Vec<f64>, _> = line.split_whitespace().map(str::parse).collect();
        let values = values.map_err(|e| {
            CliError::Usage(format!("states file line {}: {e}", idx + 1))
        })?;
        states.push(Vector::from_slice(&values));
    }
    if states.is_empty() {
        return Err(CliError::Usage("states file holds no points".to_string()));
    }
    Ok(states)
}

pub fn run_sample(
    cfg: &ExperimentConfig,
    n: usize,
    cinf_path: Option<&Path>,
) -> Result<PathBuf, CliError> {
    let spec = cfg.load_spec()?;
    let cinf = load_or_compute_cinf(cfg, &spec, cinf_path)?;
    let mut guard = guard_for(cfg, "sample")?;
    let seed = stage_seed(cfg.master_seed, "sample");
    guard.record_seed("sample", seed);
    let states = hit_and_run(
        &cinf,
        n,
        &HitAndRunConfig {
            seed,
            burn_in: cfg.burn_in,
            thinning: cfg.thinning,
            start: None,
        },
    )?;
    let path = guard.write_file("samples.txt", &write_states_text(&states))?;
    guard.commit()?;
    println!("sampled {} states -> {}", states.len(), path.display());
    Ok(path)
}

pub fn run_gen_data(
    cfg: &ExperimentConfig,
    n: usize,
    name: &str,
    cinf_path: Option<&Path>,
    states_from: Option<&Path>,
) -> Result<PathBuf, CliError> {
    let spec = cfg.load_spec()?;
    let mut guard = guard_for(cfg, "gen-data")?;
    let ds = match states_from {
        Some(path) => {
            let states = parse_states_text(&std::fs::read_to_string(path)?)?;
            dataset::generate_from_states(&spec, &states, cfg.target_mode, &cfg.run_tag())?
        }
        None => {
            let cinf = load_or_compute_cinf(cfg, &spec, cinf_path)?;
            let seed = stage_seed(cfg.master_seed, &format!("gen-data-{name}"));
            guard.record_seed(&format!("gen-data-{name}"), seed);
            dataset::generate_tagged(
                &spec,
                &cinf,
                n,
                &HitAndRunConfig {
                    seed,
                    burn_in: cfg.burn_in,
                    thinning: cfg.thinning,
                    start: None,
                },
                cfg.target_mode,
                &cfg.run_tag(),
            )?
        }
    };
    let path = guard.write_file(&format!("{name}.data"), &ds.to_text())?;
    guard.commit()?;
    println!(
        "dataset `{name}`: {} pairs ({} skipped) -> {}",
        ds.len(),
        ds.metadata.skipped,
        path.display()
    );
    Ok(path)
}

fn widths_for(cfg: &ExperimentConfig, spec: &MpcSpec, target_dim: usize) -> Vec<usize> {
    std::iter::once(spec.state_dim())
        .chain(cfg.hidden.iter().copied())
        .chain(std::iter::once(target_dim))
        .collect()
}

fn train_once(
    cfg: &ExperimentConfig,
    spec: &MpcSpec,
    ds: &Dataset,
    arch: Arch,
    pspec: Option<&ProjectionSpec>,
    seed: u64,
) -> Result<(Mlp, Vec<f64>), CliError> {
    let widths = widths_for(cfg, spec, ds.target_dim());
    let net = Mlp::new(&widths, seed);
    let train_cfg = TrainConfig {
        learning_rate: cfg.learning_rate,
        batch_size: cfg.batch_size,
        epochs: cfg.epochs,
        seed,
        ..TrainConfig::default()
    };
    Ok(mpclearn_core::network::train(
        net, ds, &train_cfg, arch, pspec,
    )?)
}

pub fn run_train(
    cfg: &ExperimentConfig,
    data_path: &Path,
    arch: Arch,
    cinf_path: Option<&Path>,
) -> Result<PathBuf, CliError> {
    let spec = cfg.load_spec()?;
    let ds = Dataset::load(data_path)?;
    ds.ensure_spec(&spec)?;
    let pspec = match arch {
        Arch::ProjectionNn => {
            let cinf = load_or_compute_cinf(cfg, &spec, cinf_path)?;
            Some(ProjectionSpec::build(&spec.sys, &spec.u_set, &cinf)?)
        }
        Arch::Bbnn => None,
    };
    let mut guard = guard_for(cfg, "train")?;
    let seed = stage_seed(cfg.master_seed, &format!("train-{}", arch.as_str()));
    guard.record_seed(&format!("train-{}", arch.as_str()), seed);
    let (net, history) = train_once(cfg, &spec, &ds, arch, pspec.as_ref(), seed)?;
    let final_loss = history.last().copied().unwrap_or(f64::NAN);
    let path = guard.write_file(
        &format!("{}.net", arch.as_str()),
        &net.to_checkpoint_text(arch.as_str(), seed),
    )?;
    guard.commit()?;
    println!(
        "trained {} for {} epochs, final MSE {final_loss:.3e} -> {}",
        arch.as_str(),
        history.len(),
        path.display()
    );
    Ok(path)
}

pub fn run_eval_nmse(
    cfg: &ExperimentConfig,
    net_path: &Path,
    data_path: &Path,
    cinf_path: Option<&Path>,
) -> Result<f64, CliError> {
    let spec = cfg.load_spec()?;
    let (net, arch_label, _) = Mlp::load(net_path)?;
    let arch = Arch::parse(&arch_label)
        .ok_or_else(|| CliError::Usage(format!("checkpoint has unknown arch `{arch_label}`")))?;
    let test = Dataset::load(data_path)?;
    test.ensure_spec(&spec)?;
    let pspec = match arch {
        Arch::ProjectionNn => {
            let cinf = load_or_compute_cinf(cfg, &spec, cinf_path)?;
            Some(ProjectionSpec::build(&spec.sys, &spec.u_set, &cinf)?)
        }
        Arch::Bbnn => None,
    };
    let nmse_db = evaluate_nmse(arch, &net, pspec.as_ref(), &test)?;
    let mut guard = guard_for(cfg, "eval-nmse")?;
    guard.write_file(
        "nmse.csv",
        &format!(
            "arch,test_size,target_mode,nmse_db\n{},{},{},{:.6}\n",
            arch.as_str(),
            test.len(),
            test.target_mode.as_str(),
            nmse_db
        ),
    )?;
    guard.commit()?;
    println!(
        "{} NMSE on {} pairs ({} targets): {nmse_db:.3} dB",
        arch.as_str(),
        test.len(),
        test.target_mode.as_str()
    );
    Ok(nmse_db)
}

pub struct EvalCostArgs<'a> {
    pub cinf: Option<&'a Path>,
    pub bbnn: Option<&'a Path>,
    pub projnn: Option<&'a Path>,
    pub n_traj: Option<usize>,
}

pub fn run_eval_cost(cfg: &ExperimentConfig, args: &EvalCostArgs) -> Result<PathBuf, CliError> {
    let spec = cfg.load_spec()?;
    let cinf = load_or_compute_cinf(cfg, &spec, args.cinf)?;
    let mut controllers = vec![Controller::mpc_oracle(&spec)?, Controller::lqr(&spec)?];
    if let Some(path) = args.bbnn {
        let (net, _, _) = Mlp::load(path)?;
        controllers.push(Controller::Bbnn { net });
    }
    if let Some(path) = args.projnn {
        let (net, _, _) = Mlp::load(path)?;
        let pspec = ProjectionSpec::build(&spec.sys, &spec.u_set, &cinf)?;
        controllers.push(Controller::ProjectionNn { net, pspec });
    }
    let mut guard = guard_for(cfg, "eval-cost")?;
    let seed = stage_seed(cfg.master_seed, "cost-init");
    guard.record_seed("cost-init", seed);
    let table = cost_comparison(
        &spec,
        &cinf,
        &controllers,
        args.n_traj.unwrap_or(cfg.n_traj),
        seed,
        cfg.burn_in,
        cfg.thinning,
    )?;
    let path = guard.write_file("cost_comparison.csv", &table.to_csv())?;
    guard.write_file("cost_comparison.gp", &cost_plot_script())?;
    guard.commit()?;
    print!("{}", table.summary());
    Ok(path)
}

pub struct AcquireArgs<'a> {
    pub net: &'a Path,
    pub anchors: &'a Path,
    pub cinf: Option<&'a Path>,
    pub k: usize,
    pub epsilon: Option<f64>,
}

pub fn run_acquire(cfg: &ExperimentConfig, args: &AcquireArgs) -> Result<PathBuf, CliError> {
    let spec = cfg.load_spec()?;
    let cinf = load_or_compute_cinf(cfg, &spec, args.cinf)?;
    let (net, arch_label, _) = Mlp::load(args.net)?;
    let arch = Arch::parse(&arch_label)
        .ok_or_else(|| CliError::Usage(format!("checkpoint has unknown arch `{arch_label}`")))?;
    let pspec = match arch {
        Arch::ProjectionNn => Some(ProjectionSpec::build(&spec.sys, &spec.u_set, &cinf)?),
        Arch::Bbnn => None,
    };
    let anchor_ds = Dataset::load(args.anchors)?;
    let anchors: Vec<Vector> = anchor_ds.pairs.iter().map(|(x, _)| x.clone()).collect();
    let epsilon = match args.epsilon {
        Some(e) => e,
        None => acquisition::default_epsilon(&cinf)?,
    };
    let round = acquisition::acquisition_round(
        arch,
        &net,
        pspec.as_ref(),
        &spec,
        &cinf,
        &anchors,
        epsilon,
        args.k,
    )?;
    let states: Vec<Vector> = round.proposals.iter().map(|p| p.x_new.clone()).collect();
    let mut guard = guard_for(cfg, "acquire")?;
    let path = guard.write_file("proposals.txt", &write_states_text(&states))?;
    guard.commit()?;
    println!(
        "acquired {} proposals (ball radius {epsilon:.4}, {} degenerate anchors skipped) -> {}",
        states.len(),
        round.skipped_anchors,
        path.display()
    );
    println!("label them with: mpclearn gen-data --states-from {}", path.display());
    Ok(path)
}

fn nmse_plot_script() -> String {
    "set datafile separator ','\n\
     set logscale x\n\
     set xlabel 'training set size'\n\
     set ylabel 'NMSE [dB]'\n\
     plot 'nmse_curve.csv' using 1:(strcol(2) eq 'bbnn' ? $4 : 1/0) skip 1 with points title 'bbnn', \\\n\
     \t'' using 1:(strcol(2) eq 'projnn' ? $4 : 1/0) skip 1 with points title 'projnn'\n"
        .to_string()
}

fn cost_plot_script() -> String {
    "set datafile separator ','\n\
     set xlabel 'trajectory'\n\
     set ylabel 'normalized cost J_n'\n\
     plot 'cost_comparison.csv' using 1:(strcol(2) eq 'mpc' ? $3 : 1/0) skip 1 with points title 'mpc', \\\n\
     \t'' using 1:(strcol(2) eq 'lqr' ? $3 : 1/0) skip 1 with points title 'lqr', \\\n\
     \t'' using 1:(strcol(2) eq 'bbnn' ? $3 : 1/0) skip 1 with points title 'bbnn', \\\n\
     \t'' using 1:(strcol(2) eq 'projnn' ? $3 : 1/0) skip 1 with points title 'projnn', \\\n\
     \t'' using 1:(strcol(2) eq 'mpc-open-loop' ? $3 : 1/0) skip 1 with points title 'open-loop bound'\n"
        .to_string()
}

/// Artifacts produced by a full benchmark reproduction.
pub struct ReproduceResult {
    pub nmse_table: NmseTable,
    pub cost_table: CostTable,
    pub out_dir: PathBuf,
}

/// End-to-end chain: invariant set, learning-curve NMSE study, final
/// training at the benchmark's training size, and the closed-loop cost
/// comparison over sampled initial states.
pub fn run_reproduce(cfg: &ExperimentConfig) -> Result<ReproduceResult, CliError> {
    let spec = cfg.load_spec()?;
    let mut guard = guard_for(cfg, "reproduce")?;
    let run_tag = cfg.run_tag();

    let cinf = compute_invariant_set(&spec)?;
    guard.write_file("cinf.poly", &cinf.to_text())?;

    // learning-curve study
    let nmse_base = stage_seed(cfg.master_seed, "nmse-curve");
    guard.record_seed("nmse-curve", nmse_base);
    let seeds: Vec<u64> = (0..cfg.nmse_seeds)
        .map(|i| stage_seed(cfg.master_seed, &format!("nmse-seed-{i}")))
        .collect();
    for (i, seed) in seeds.iter().enumerate() {
        guard.record_seed(&format!("nmse-seed-{i}"), *seed);
    }
    let curve_cfg = NmseCurveConfig {
        sizes: cfg.nmse_sizes.clone(),
        archs: cfg.archs.clone(),
        seeds,
        test_size: cfg.test_size,
        hidden: cfg.hidden.clone(),
        train: TrainConfig {
            learning_rate: cfg.learning_rate,
            batch_size: cfg.batch_size,
            epochs: cfg.epochs,
            seed: nmse_base,
            ..TrainConfig::default()
        },
        burn_in: cfg.burn_in,
        thinning: cfg.thinning,
        created: run_tag.clone(),
    };
    let nmse_table = nmse_curve(&spec, &cinf, &curve_cfg)?;
    guard.write_file("nmse_curve.csv", &nmse_table.to_csv())?;
    guard.write_file("nmse_curve.gp", &nmse_plot_script())?;

    // final training set at the benchmark size
    let data_seed = stage_seed(cfg.master_seed, "final-train-data");
    guard.record_seed("final-train-data", data_seed);
    let train_set = dataset::generate_tagged(
        &spec,
        &cinf,
        cfg.train_size,
        &HitAndRunConfig {
            seed: data_seed,
            burn_in: cfg.burn_in,
            thinning: cfg.thinning,
            start: None,
        },
        TargetMode::FirstInput,
        &run_tag,
    )?;
    guard.write_file("train.data", &train_set.to_text())?;

    let pspec = ProjectionSpec::build(&spec.sys, &spec.u_set, &cinf)?;
    let mut controllers = vec![Controller::mpc_oracle(&spec)?, Controller::lqr(&spec)?];
    for arch in &cfg.archs {
        let seed = stage_seed(cfg.master_seed, &format!("train-{}", arch.as_str()));
        guard.record_seed(&format!("train-{}", arch.as_str()), seed);
        let pspec_ref = match arch {
            Arch::ProjectionNn => Some(&pspec),
            Arch::Bbnn => None,
        };
        let (net, _) = train_once(cfg, &spec, &train_set, *arch, pspec_ref, seed)?;
        guard.write_file(
            &format!("{}.net", arch.as_str()),
            &net.to_checkpoint_text(arch.as_str(), seed),
        )?;
        match arch {
            Arch::Bbnn => controllers.push(Controller::Bbnn { net }),
            Arch::ProjectionNn => controllers.push(Controller::ProjectionNn {
                net,
                pspec: ProjectionSpec::build(&spec.sys, &spec.u_set, &cinf)?,
            }),
        }
    }

    // closed-loop cost comparison
    let cost_seed = stage_seed(cfg.master_seed, "cost-init");
    guard.record_seed("cost-init", cost_seed);
    let cost_table = cost_comparison(
        &spec,
        &cinf,
        &controllers,
        cfg.n_traj,
        cost_seed,
        cfg.burn_in,
        cfg.thinning,
    )?;
    guard.write_file("cost_comparison.csv", &cost_table.to_csv())?;
    guard.write_file("cost_comparison.gp", &cost_plot_script())?;

    let out_dir = guard.out_dir().to_path_buf();
    guard.commit()?;
    print!("{}", cost_table.summary());
    for size in &cfg.nmse_sizes {
        for arch in &cfg.archs {
            if let Some(mean) = nmse_table.mean_nmse(*size, arch.as_str()) {
                println!("nmse {} size {size}: {mean:.2} dB", arch.as_str());
            }
        }
    }
    Ok(ReproduceResult {
        nmse_table,
        cost_table,
        out_dir,
    })
}
