//! Minibatch Adam on mean squared error, with the projection layer inside
//! the training graph for the constrained architecture.

use rayon::prelude::*;

use crate::dataset::{Dataset, TargetMode};
use crate::numerics::{Matrix, Prng, Vector};

use super::{Gradients, Mlp, NetworkError, ProjectionSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Arch {
    /// Plain MLP; predictions may leave the feasible set.
    Bbnn,
    /// MLP followed by the feasibility projection layer.
    ProjectionNn,
}

impl Arch {
    pub fn as_str(&self) -> &'static str {
        match self {
            Arch::Bbnn => "bbnn",
            Arch::ProjectionNn => "projnn",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "bbnn" => Some(Arch::Bbnn),
            "projnn" => Some(Arch::ProjectionNn),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// When false, the projection architecture trains on raw outputs and
    /// only projects at inference time (ablation switch).
    pub project_during_training: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 64,
            epochs: 200,
            seed: 0,
            project_during_training: true,
        }
    }
}

struct AdamState {
    m_w: Vec<Matrix>,
    v_w: Vec<Matrix>,
    m_b: Vec<Vector>,
    v_b: Vec<Vector>,
    step: usize,
}

impl AdamState {
    fn new(net: &Mlp) -> Self {
        let zeros = Gradients::zeros_like(net);
        Self {
            m_w: zeros.d_weights.clone(),
            v_w: zeros.d_weights,
            m_b: zeros.d_biases.clone(),
            v_b: zeros.d_biases,
            step: 0,
        }
    }

    fn update(&mut self, net: &mut Mlp, grads: &Gradients, cfg: &TrainConfig) {
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - cfg.beta1.powf(t);
        let bc2 = 1.0 - cfg.beta2.powf(t);
        let (weights, biases) = net.weights_mut();
        for layer in 0..weights.len() {
            let w = &mut weights[layer];
            let gw = &grads.d_weights[layer];
            for r in 0..w.rows() {
                for c in 0..w.cols() {
                    let g = gw[(r, c)];
                    let m = &mut self.m_w[layer][(r, c)];
                    *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                    let v = &mut self.v_w[layer][(r, c)];
                    *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    w[(r, c)] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_eps);
                }
            }
            let b = &mut biases[layer];
            let gb = &grads.d_biases[layer];
            for r in 0..b.len() {
                let g = gb[r];
                let m = &mut self.m_b[layer][r];
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                let v = &mut self.v_b[layer][r];
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                b[r] -= cfg.learning_rate * (*m / bc1) / ((*v / bc2).sqrt() + cfg.adam_eps);
            }
        }
    }
}

/// Per-sample loss and gradient; the projection layer, when present, is
/// differentiated through its KKT system.
fn sample_grad(
    net: &Mlp,
    arch: Arch,
    pspec: Option<&ProjectionSpec>,
    project: bool,
    x: &Vector,
    target: &Vector,
) -> Result<(Gradients, f64), NetworkError> {
    let (u_hat, cache) = net.forward(x);
    match (arch, project) {
        (Arch::Bbnn, _) | (Arch::ProjectionNn, false) => {
            let err = u_hat.sub(target);
            let loss = err.dot(&err);
            let grads = net.backward(&cache, &err.scale(2.0));
            Ok((grads, loss))
        }
        (Arch::ProjectionNn, true) => {
            let pspec = pspec.expect("validated at entry");
            let proj = pspec.project_feasible(x, &u_hat)?;
            let err = proj.u.sub(target);
            let loss = err.dot(&err);
            let (du_duhat, _) = pspec.lenient_jacobians(x, &proj);
            // dL/du_hat = (du/du_hat)ᵀ dL/du
            let grad_uhat = du_duhat.tr_matvec(&err.scale(2.0));
            let grads = net.backward(&cache, &grad_uhat);
            Ok((grads, loss))
        }
    }
}

/// Minibatch Adam on MSE. Deterministic for a fixed config: the shuffle
/// is seeded and batch gradients are reduced in sample order regardless
/// of thread scheduling.
pub fn train(
    net: Mlp,
    ds: &Dataset,
    cfg: &TrainConfig,
    arch: Arch,
    pspec: Option<&ProjectionSpec>,
) -> Result<(Mlp, Vec<f64>), NetworkError> {
    if ds.is_empty() {
        return Err(NetworkError::InvalidTraining("empty dataset".to_string()));
    }
    if ds.state_dim() != net.input_dim() || ds.target_dim() != net.output_dim() {
        return Err(NetworkError::InvalidTraining(format!(
            "network {}->{} vs dataset {}->{}",
            net.input_dim(),
            net.output_dim(),
            ds.state_dim(),
            ds.target_dim()
        )));
    }
    if arch == Arch::ProjectionNn {
        let pspec = pspec.ok_or_else(|| {
            NetworkError::InvalidTraining("projection architecture needs a projection spec".into())
        })?;
        if ds.target_mode != TargetMode::FirstInput {
            return Err(NetworkError::InvalidTraining(
                "projection architecture trains on first-input targets".to_string(),
            ));
        }
        if pspec.input_dim() != net.output_dim() {
            return Err(NetworkError::InvalidTraining(
                "projection spec input dimension does not match the network output".to_string(),
            ));
        }
    }
    let mut net = net;
    let mut adam = AdamState::new(&net);
    let mut prng = Prng::seed_from_u64(cfg.seed);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let project = cfg.project_during_training;
    for _epoch in 0..cfg.epochs {
        // Fisher-Yates with the run's generator
        for i in (1..order.len()).rev() {
            order.swap(i, prng.next_index(i + 1));
        }
        let mut epoch_loss = 0.0;
        for (batch_index, batch) in order.chunks(cfg.batch_size.max(1)).enumerate() {
            let results: Vec<Result<(Gradients, f64), NetworkError>> = batch
                .par_iter()
                .map(|&idx| {
                    let (x, target) = &ds.pairs[idx];
                    sample_grad(&net, arch, pspec, project, x, target)
                })
                .collect();
            let mut total = Gradients::zeros_like(&net);
            let mut batch_loss = 0.0;
            for item in results {
                let (g, loss) = item?;
                total.accumulate(&g);
                batch_loss += loss;
            }
            let scale = 1.0 / batch.len() as f64;
            batch_loss *= scale;
            if !batch_loss.is_finite() {
                return Err(NetworkError::NonFiniteLoss { batch: batch_index });
            }
            for w in &mut total.d_weights {
                *w = w.scale(scale);
            }
            for b in &mut total.d_biases {
                *b = b.scale(scale);
            }
            adam.update(&mut net, &total, cfg);
            epoch_loss += batch_loss * batch.len() as f64;
        }
        history.push(epoch_loss / ds.len() as f64);
    }
    Ok((net, history))
}

/// Controller output of the architecture at `x` (projection applied for
/// the constrained architecture).
pub fn network_output(
    arch: Arch,
    net: &Mlp,
    pspec: Option<&ProjectionSpec>,
    x: &Vector,
) -> Result<Vector, NetworkError> {
    let (u_hat, _) = net.forward(x);
    match arch {
        Arch::Bbnn => Ok(u_hat),
        Arch::ProjectionNn => {
            let pspec = pspec.ok_or_else(|| {
                NetworkError::InvalidTraining("projection architecture needs a spec".into())
            })?;
            Ok(pspec.project_feasible(x, &u_hat)?.u)
        }
    }
}

/// Jacobian of the (optionally projected) controller output w.r.t. the
/// state, by the chain rule through the projection KKT system.
pub fn network_gradient(
    arch: Arch,
    net: &Mlp,
    pspec: Option<&ProjectionSpec>,
    x: &Vector,
) -> Result<Matrix, NetworkError> {
    let net_jac = net.input_jacobian(x);
    match arch {
        Arch::Bbnn => Ok(net_jac),
        Arch::ProjectionNn => {
            let pspec = pspec.ok_or_else(|| {
                NetworkError::InvalidTraining("projection architecture needs a spec".into())
            })?;
            let (u_hat, _) = net.forward(x);
            let proj = pspec.project_feasible(x, &u_hat)?;
            let (du_duhat, du_dx) = pspec.projection_jacobians(x, &proj)?;
            Ok(du_duhat.matmul(&net_jac).add(&du_dx))
        }
    }
}
