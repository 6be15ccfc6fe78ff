//! ReLU multilayer perceptron with hand-rolled backpropagation, plus the
//! state-parameterized projection layer that makes predicted controls
//! feasible by construction.

mod projection;
mod train;

pub use projection::{Projection, ProjectionSpec};
pub use train::{network_gradient, network_output, train, Arch, TrainConfig};

use crate::numerics::{Matrix, Prng, Vector};
use crate::optimize::OptimizeError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite loss in batch {batch}")]
    NonFiniteLoss { batch: usize },
    #[error("projection problem is infeasible: the invariant-set certificate is broken")]
    InfeasibleProjection,
    #[error("projection active set is degenerate")]
    DegenerateActiveSet,
    #[error("invalid training setup: {0}")]
    InvalidTraining(String),
    #[error(transparent)]
    Optimize(#[from] OptimizeError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at line {line}: {msg}")]
    Format { line: usize, msg: String },
}

/// Fully-connected net: ReLU on every hidden layer, linear output layer.
#[derive(Clone, Debug)]
pub struct Mlp {
    widths: Vec<usize>,
    weights: Vec<Matrix>,
    biases: Vec<Vector>,
}

/// Layer inputs and pre-activations saved by [`Mlp::forward`] for the
/// backward pass.
pub struct ForwardCache {
    /// `inputs[i]` is the input to layer `i` (so `inputs[0]` is `x`).
    inputs: Vec<Vector>,
    /// Pre-activation values of each layer.
    preacts: Vec<Vector>,
}

/// Parameter and input gradients from one backward pass.
pub struct Gradients {
    pub d_weights: Vec<Matrix>,
    pub d_biases: Vec<Vector>,
    pub d_input: Vector,
}

impl Gradients {
    fn zeros_like(net: &Mlp) -> Self {
        Self {
            d_weights: net
                .weights
                .iter()
                .map(|w| Matrix::zeros(w.rows(), w.cols()))
                .collect(),
            d_biases: net.biases.iter().map(|b| Vector::zeros(b.len())).collect(),
            d_input: Vector::zeros(net.input_dim()),
        }
    }

    fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.d_weights.iter_mut().zip(&other.d_weights) {
            *a = a.add(b);
        }
        for (a, b) in self.d_biases.iter_mut().zip(&other.d_biases) {
            a.axpy(1.0, b);
        }
        self.d_input.axpy(1.0, &other.d_input);
    }
}

impl Mlp {
    /// Seeded init: weights uniform in +-sqrt(1/fan_in), biases zero.
    pub fn new(widths: &[usize], seed: u64) -> Self {
        assert!(widths.len() >= 2, "need at least input and output widths");
        let mut prng = Prng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in widths.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let scale = (1.0 / fan_in as f64).sqrt();
            let mut w = Matrix::zeros(fan_out, fan_in);
            for i in 0..fan_out {
                for j in 0..fan_in {
                    w[(i, j)] = scale * (2.0 * prng.next_f64() - 1.0);
                }
            }
            weights.push(w);
            biases.push(Vector::zeros(fan_out));
        }
        Self {
            widths: widths.to_vec(),
            weights,
            biases,
        }
    }

    pub fn zeros(widths: &[usize]) -> Self {
        assert!(widths.len() >= 2);
        Self {
            widths: widths.to_vec(),
            weights: widths
                .windows(2)
                .map(|p| Matrix::zeros(p[1], p[0]))
                .collect(),
            biases: widths.windows(2).map(|p| Vector::zeros(p[1])).collect(),
        }
    }

    pub fn from_parts(
        widths: Vec<usize>,
        weights: Vec<Matrix>,
        biases: Vec<Vector>,
    ) -> Result<Self, NetworkError> {
        if widths.len() < 2 || weights.len() != widths.len() - 1 || biases.len() != weights.len() {
            return Err(NetworkError::DimensionMismatch(
                "layer counts disagree".to_string(),
            ));
        }
        for (i, pair) in widths.windows(2).enumerate() {
            if weights[i].rows() != pair[1]
                || weights[i].cols() != pair[0]
                || biases[i].len() != pair[1]
            {
                return Err(NetworkError::DimensionMismatch(format!(
                    "layer {i} shapes disagree with widths"
                )));
            }
            if !weights[i].is_finite() || !biases[i].is_finite() {
                return Err(NetworkError::DimensionMismatch(format!(
                    "layer {i} holds non-finite parameters"
                )));
            }
        }
        Ok(Self {
            widths,
            weights,
            biases,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().expect("nonempty widths")
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub(crate) fn weights_mut(&mut self) -> (&mut Vec<Matrix>, &mut Vec<Vector>) {
        (&mut self.weights, &mut self.biases)
    }

    pub fn forward(&self, x: &Vector) -> (Vector, ForwardCache) {
        assert_eq!(
            x.len(),
            self.input_dim(),
            "input size does not match the first layer"
        );
        let layers = self.num_layers();
        let mut inputs = Vec::with_capacity(layers);
        let mut preacts = Vec::with_capacity(layers);
        let mut a = x.clone();
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            inputs.push(a.clone());
            let mut z = w.matvec(&a);
            z.axpy(1.0, b);
            preacts.push(z.clone());
            a = if i + 1 == layers {
                z
            } else {
                z.iter().map(|v| v.max(0.0)).collect()
            };
        }
        (a, ForwardCache { inputs, preacts })
    }

    /// Exact reverse-mode gradients; the ReLU subgradient at zero is taken
    /// as zero.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &Vector) -> Gradients {
        let layers = self.num_layers();
        assert_eq!(grad_out.len(), self.output_dim());
        let mut d_weights = vec![Matrix::zeros(0, 0); layers];
        let mut d_biases = vec![Vector::zeros(0); layers];
        // gradient w.r.t. the pre-activation of the current layer
        let mut delta = grad_out.clone();
        for i in (0..layers).rev() {
            let a_in = &cache.inputs[i];
            let mut dw = Matrix::zeros(delta.len(), a_in.len());
            for r in 0..delta.len() {
                let dr = delta[r];
                if dr != 0.0 {
                    for c in 0..a_in.len() {
                        dw[(r, c)] = dr * a_in[c];
                    }
                }
            }
            d_weights[i] = dw;
            d_biases[i] = delta.clone();
            let upstream = self.weights[i].tr_matvec(&delta);
            if i > 0 {
                let z_prev = &cache.preacts[i - 1];
                delta = upstream
                    .iter()
                    .zip(z_prev.iter())
                    .map(|(g, z)| if *z > 0.0 { *g } else { 0.0 })
                    .collect();
            } else {
                delta = upstream;
            }
        }
        Gradients {
            d_weights,
            d_biases,
            d_input: delta,
        }
    }

    /// Jacobian of the raw network output w.r.t. the input, one backward
    /// pass per output row.
    pub fn input_jacobian(&self, x: &Vector) -> Matrix {
        let (_, cache) = self.forward(x);
        let m = self.output_dim();
        let mut jac = Matrix::zeros(m, self.input_dim());
        for r in 0..m {
            let mut one_hot = Vector::zeros(m);
            one_hot[r] = 1.0;
            let grads = self.backward(&cache, &one_hot);
            jac.row_mut(r).copy_from_slice(grads.d_input.as_slice());
        }
        jac
    }

    /// Checkpoint: header with widths/arch/seed, then per-layer weight
    /// rows and bias line, all in round-trip-exact decimals.
    pub fn to_checkpoint_text(&self, arch: &str, seed: u64) -> String {
        let mut out = String::new();
        out.push_str("# mpclearn network\n");
        out.push_str("# widths:");
        for w in &self.widths {
            out.push_str(&format!(" {w}"));
        }
        out.push('\n');
        out.push_str(&format!("# arch: {arch}\n"));
        out.push_str(&format!("# seed: {seed}\n"));
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            out.push_str(&format!("layer {i}\n"));
            for r in 0..w.rows() {
                let mut first = true;
                for v in w.row(r) {
                    if !first {
                        out.push(' ');
                    }
                    out.push_str(&format!("{v:.16e}"));
                    first = false;
                }
                out.push('\n');
            }
            let mut first = true;
            for v in b.iter() {
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

    pub fn from_checkpoint_text(text: &str) -> Result<(Self, String, u64), NetworkError> {
        let mut widths: Vec<usize> = Vec::new();
        let mut arch = String::new();
        let mut seed = 0u64;
        let mut lines = text.lines().enumerate().peekable();
        while let Some((_, line)) = lines.peek() {
            let line = line.trim();
            if let Some(rest) = line.strip_prefix('#') {
                if let Some((key, value)) = rest.split_once(':') {
                    match key.trim() {
                        "widths" => {
                            widths = value
                                .split_whitespace()
                                .filter_map(|v| v.parse().ok())
                                .collect()
                        }
                        "arch" => arch = value.trim().to_string(),
                        "seed" => seed = value.trim().parse().unwrap_or(0),
                        _ => {}
                    }
                }
                lines.next();
            } else {
                break;
            }
        }
        if widths.len() < 2 {
            return Err(NetworkError::Format {
                line: 1,
                msg: "missing widths header".to_string(),
            });
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (layer, pair) in widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let (line_no, header) = lines.next().ok_or(NetworkError::Format {
                line: 0,
                msg: format!("missing layer {layer} header"),
            })?;
            if header.trim() != format!("layer {layer}") {
                return Err(NetworkError::Format {
                    line: line_no + 1,
                    msg: format!("expected `layer {layer}`, found `{header}`"),
                });
            }
            let mut w = Matrix::zeros(fan_out, fan_in);
            for r in 0..fan_out {
                let (line_no, row) = lines.next().ok_or(NetworkError::Format {
                    line: 0,
                    msg: "unexpected end of checkpoint".to_string(),
                })?;
                let vals = parse_floats(row, line_no + 1, fan_in)?;
                w.row_mut(r).copy_from_slice(&vals);
            }
            let (line_no, brow) = lines.next().ok_or(NetworkError::Format {
                line: 0,
                msg: "unexpected end of checkpoint".to_string(),
            })?;
            let bvals = parse_floats(brow, line_no + 1, fan_out)?;
            weights.push(w);
            biases.push(Vector::from_slice(&bvals));
        }
        let net = Mlp::from_parts(widths, weights, biases)?;
        Ok((net, arch, seed))
    }

    pub fn save(&self, path: &std::path::Path, arch: &str, seed: u64) -> Result<(), NetworkError> {
        std::fs::write(path, self.to_checkpoint_text(arch, seed))?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<(Self, String, u64), NetworkError> {
        Self::from_checkpoint_text(&std::fs::read_to_string(path)?)
    }
}

fn parse_floats(line: &str, line_no: usize, expected: usize) -> Result<Vec<f64>, NetworkError> {
    let vals: Result<Vec<f64>, _> = line.split_whitespace().map(str::parse::<f64>).collect();
    let vals = vals.map_err(|e| NetworkError::Format {
        line: line_no,
        msg: e.to_string(),
    })?;
    if vals.len() != expected {
        return Err(NetworkError::Format {
            line: line_no,
            msg: format!("expected {expected} values, found {}", vals.len()),
        });
    }
    Ok(vals)
}
