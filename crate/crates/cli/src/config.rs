//! Experiment configuration: a sectioned key-value text format plus the
//! derivation of per-stage seeds from the master seed.

use mpclearn_core::benchmarks;
use mpclearn_core::dataset::TargetMode;
use mpclearn_core::hash::fnv1a64;
use mpclearn_core::mpc::MpcSpec;
use mpclearn_core::network::Arch;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unknown built-in spec `{0}` and no such file exists")]
    UnknownSpec(String),
    #[error("referenced file does not exist: {0}")]
    MissingFile(PathBuf),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("spec file: {0}")]
    Spec(#[from] mpclearn_core::mpc::MpcError),
}

/// Full experiment setup; CLI flags override file values, defaults fill
/// the rest.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    /// Built-in benchmark name or a path to a spec config file.
    pub spec_source: String,
    pub out_dir: PathBuf,
    pub master_seed: u64,
    pub threads: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub target_mode: TargetMode,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub hidden: Vec<usize>,
    pub nmse_sizes: Vec<usize>,
    pub nmse_seeds: usize,
    pub n_traj: usize,
    pub archs: Vec<Arch>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            spec_source: "double-integrator-2d".to_string(),
            out_dir: PathBuf::from("out"),
            master_seed: 0,
            threads: 0,
            burn_in: 1000,
            thinning: 10,
            train_size: 1000,
            test_size: 500,
            target_mode: TargetMode::FirstInput,
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 1500,
            hidden: vec![32, 32],
            nmse_sizes: vec![100, 300, 1000],
            nmse_seeds: 3,
            n_traj: 100,
            archs: vec![Arch::Bbnn, Arch::ProjectionNn],
        }
    }
}

impl ExperimentConfig {
    /// Benchmark presets mirroring the two built-in experiment setups.
    pub fn preset_2d() -> Self {
        Self::default()
    }

    pub fn preset_4d() -> Self {
        Self {
            spec_source: "system-4d".to_string(),
            train_size: 7000,
            test_size: 500,
            epochs: 200,
            hidden: vec![64, 64],
            nmse_sizes: vec![500, 2000, 7000],
            nmse_seeds: 1,
            n_traj: 500,
            ..Self::default()
        }
    }

    /// Parses the sectioned `key = value` format, starting from `base`.
    pub fn parse(text: &str, base: Self) -> Result<Self, ConfigError> {
        let mut cfg = base;
        let mut section = String::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::Parse {
                line: line_no,
                msg: "expected `key = value`".to_string(),
            })?;
            let key = format!("{}.{}", section, key.trim());
            let value = value.trim();
            let bad = |msg: &str| ConfigError::Parse {
                line: line_no,
                msg: msg.to_string(),
            };
            match key.as_str() {
                "experiment.spec" => cfg.spec_source = value.to_string(),
                "experiment.out" => cfg.out_dir = PathBuf::from(value),
                "experiment.master_seed" => {
                    cfg.master_seed = value.parse().map_err(|_| bad("invalid integer"))?
                }
                "experiment.threads" => {
                    cfg.threads = value.parse().map_err(|_| bad("invalid integer"))?
                }
                "sampler.burn_in" => {
                    cfg.burn_in = value.parse().map_err(|_| bad("invalid integer"))?
                }
                "sampler.thinning" => {
                    cfg.thinning = value.parse().map_err(|_| bad("invalid integer"))?
                }
                "dataset.train_size" => {
                    cfg.train_size = value.parse().map_err(|_| bad("invalid integer"))?
                }
                "dataset.test_size" => {
                    cfg.test_size = value.parse().map_err(|_| bad("invalid integer"))?
                }
                "dataset.target_mode" => {
                    cfg.target_mode =
                        TargetMode::parse(value).ok_or_else(|| bad("invalid target mode"))?
                }
                "train.learning_rate" => {
                    cfg.learning_rate = value.parse().map_err(|_| bad("invalid float"))?
                }
                "train.batch_size" => {
                    cfg.batch_size = value.parse().map_err(|_| bad("invalid integer"))?
                }
                "train.epochs" => cfg.epochs = value.parse().map_err(|_| bad("invalid integer"))?,
                "train.hidden" => {
                    cfg.hidden = value
                        .split_whitespace()
                        .map(|v| v.parse().map_err(|_| bad("invalid width")))
                        .collect::<Result<_, _>>()?
                }
                "eval.nmse_sizes" => {
                    cfg.nmse_sizes = value
                        .split_whitespace()
                        .map(|v| v.parse().map_err(|_| bad("invalid size")))
                        .collect::<Result<_, _>>()?
                }
                "eval.nmse_seeds" => {
                    cfg.nmse_seeds = value.parse().map_err(|_| bad("invalid integer"))?
                }
                "eval.n_traj" => cfg.n_traj = value.parse().map_err(|_| bad("invalid integer"))?,
                "eval.archs" => {
                    cfg.archs = value
                        .split_whitespace()
                        .map(|v| Arch::parse(v).ok_or_else(|| bad("invalid arch")))
                        .collect::<Result<_, _>>()?
                }
                other => {
                    return Err(ConfigError::Parse {
                        line: line_no,
                        msg: format!("unknown key `{other}`"),
                    })
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load_file(path: &Path, base: Self) -> Result<Self, ConfigError> {
        Self::parse(&std::fs::read_to_string(path)?, base)
    }

    /// Referenced files must exist at parse time.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if benchmarks::by_name(&self.spec_source).is_none() {
            let path = Path::new(&self.spec_source);
            if !path.exists() {
                return Err(ConfigError::UnknownSpec(self.spec_source.clone()));
            }
        }
        Ok(())
    }

    /// Resolves the built-in benchmark or loads the spec config file.
    pub fn load_spec(&self) -> Result<MpcSpec, ConfigError> {
        if let Some(spec) = benchmarks::by_name(&self.spec_source) {
            return Ok(spec);
        }
        let path = Path::new(&self.spec_source);
        if !path.exists() {
            return Err(ConfigError::MissingFile(path.to_path_buf()));
        }
        Ok(MpcSpec::from_config_text(&std::fs::read_to_string(path)?)?)
    }

    /// Canonical serialization for hashing into the run manifest. The
    /// output directory and thread count are excluded: neither changes
    /// any produced byte.
    pub fn canonical_text(&self) -> String {
        let archs: Vec<&str> = self.archs.iter().map(|a| a.as_str()).collect();
        format!(
            "[experiment]\nspec = {}\nmaster_seed = {}\n\
             [sampler]\nburn_in = {}\nthinning = {}\n\
             [dataset]\ntrain_size = {}\ntest_size = {}\ntarget_mode = {}\n\
             [train]\nlearning_rate = {:e}\nbatch_size = {}\nepochs = {}\nhidden = {}\n\
             [eval]\nnmse_sizes = {}\nnmse_seeds = {}\nn_traj = {}\narchs = {}\n",
            self.spec_source,
            self.master_seed,
            self.burn_in,
            self.thinning,
            self.train_size,
            self.test_size,
            self.target_mode.as_str(),
            self.learning_rate,
            self.batch_size,
            self.epochs,
            join_usize(&self.hidden),
            join_usize(&self.nmse_sizes),
            self.nmse_seeds,
            self.n_traj,
            archs.join(" "),
        )
    }

    pub fn config_hash(&self) -> u64 {
        fnv1a64(self.canonical_text().as_bytes())
    }

    /// Deterministic run tag embedded in generated files in place of a
    /// wall-clock stamp, so seeded runs are byte-identical.
    pub fn run_tag(&self) -> String {
        format!("seeded-run:{:016x}:{}", self.config_hash(), self.master_seed)
    }
}

fn join_usize(values: &[usize]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Sub-seed for a named stage: master seed plus the stable hash of the
/// stage name (wrapping).
pub fn stage_seed(master: u64, stage: &str) -> u64 {
    master.wrapping_add(fnv1a64(stage.as_bytes()))
}
