//! Fully connected tanh network trained with full-batch Adam.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{KanError, Result};
use crate::rng;

const INIT_STREAM: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    sizes: Vec<usize>,
    /// Per layer, row-major `out x in`.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    /// Predictions are `net(x) * y_scale + y_shift`.
    y_shift: f64,
    y_scale: f64,
}

impl MlpModel {
    /// Glorot-uniform weights and zero biases.
    pub fn new(sizes: &[usize], seed: u64) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(KanError::InvalidArgument(format!(
                "mlp layer sizes must have at least two non-zero entries, got {sizes:?}"
            )));
        }
        let mut rng = rng::stream(seed, INIT_STREAM);
        let mut weights = Vec::with_capacity(sizes.len() - 1);
        let mut biases = Vec::with_capacity(sizes.len() - 1);
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            weights.push((0..fan_in * fan_out).map(|_| rng.random_range(-limit..limit)).collect());
            biases.push(vec![0.0; fan_out]);
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            weights,
            biases,
            y_shift: 0.0,
            y_scale: 1.0,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn output_scaling(&self) -> (f64, f64) {
        (self.y_shift, self.y_scale)
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().chain(&self.biases).map(Vec::len).sum()
    }

    /// Weights then biases, layer by layer.
    pub fn flatten_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    pub fn assign_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(KanError::shape("mlp parameters", self.param_count(), params.len()));
        }
        let mut at = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let (nw, nb) = (w.len(), b.len());
            w.copy_from_slice(&params[at..at + nw]);
            at += nw;
            b.copy_from_slice(&params[at..at + nb]);
            at += nb;
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.sizes[0] {
            return Err(KanError::shape("mlp input", self.sizes[0], x.len()));
        }
        Ok(())
    }

    /// Activations of every layer; the last entry is the unscaled output.
    fn activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let depth = self.weights.len();
        let mut acts = Vec::with_capacity(depth + 1);
        acts.push(x.to_vec());
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let input = &acts[l];
            let n_in = input.len();
            let out: Vec<f64> = b
                .iter()
                .enumerate()
                .map(|(j, bj)| {
                    let z = bj + w[j * n_in..(j + 1) * n_in]
                        .iter()
                        .zip(input)
                        .map(|(wi, xi)| wi * xi)
                        .sum::<f64>();
                    if l + 1 < depth {
                        z.tanh()
                    } else {
                        z
                    }
                })
                .collect();
            acts.push(out);
        }
        acts
    }

    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let acts = self.activations(x);
        Ok(acts[acts.len() - 1]
            .iter()
            .map(|v| v * self.y_scale + self.y_shift)
            .collect())
    }

    /// Mean squared error of the network output before output scaling,
    /// with its gradient in [`MlpModel::flatten_params`] order.
    pub fn loss_and_grad(&self, xs: &[Vec<f64>], ys: &[f64]) -> Result<(f64, Vec<f64>)> {
        if xs.len() != ys.len() {
            return Err(KanError::shape("mlp targets", xs.len(), ys.len()));
        }
        if xs.is_empty() {
            return Err(KanError::InvalidInput("empty batch".into()));
        }
        if self.sizes[self.sizes.len() - 1] != 1 {
            return Err(KanError::InvalidArgument("mlp loss needs a single output".into()));
        }
        let n = xs.len() as f64;
        let depth = self.weights.len();
        let mut gw: Vec<Vec<f64>> = self.weights.iter().map(|w| vec![0.0; w.len()]).collect();
        let mut gb: Vec<Vec<f64>> = self.biases.iter().map(|b| vec![0.0; b.len()]).collect();
        let mut loss = 0.0;
        for (x, &y) in xs.iter().zip(ys) {
            self.check_input(x)?;
            let acts = self.activations(x);
            let r = acts[depth][0] - y;
            loss += r * r;
            // delta = dL/dz for the current layer.
            let mut delta = vec![2.0 * r / n];
            for l in (0..depth).rev() {
                let input = &acts[l];
                let n_in = input.len();
                for (j, dj) in delta.iter().enumerate() {
                    gb[l][j] += dj;
                    for (g, xi) in gw[l][j * n_in..(j + 1) * n_in].iter_mut().zip(input) {
                        *g += dj * xi;
                    }
                }
                if l > 0 {
                    let w = &self.weights[l];
                    delta = (0..n_in)
                        .map(|i| {
                            let back: f64 = delta.iter().enumerate().map(|(j, dj)| dj * w[j * n_in + i]).sum();
                            back * (1.0 - input[i] * input[i])
                        })
                        .collect();
                }
            }
        }
        let mut grad = Vec::with_capacity(self.param_count());
        for (w, b) in gw.iter().zip(&gb) {
            grad.extend_from_slice(w);
            grad.extend_from_slice(b);
        }
        Ok((loss / n, grad))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64, 64],
            epochs: 2000,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
        }
    }
}

/// Full-batch Adam on standardized targets. Returns the parameters with the
/// lowest training loss seen.
pub fn train_mlp(xs: &[Vec<f64>], ys: &[f64], cfg: &MlpConfig) -> Result<MlpModel> {
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(KanError::shape("mlp training targets", xs.len(), ys.len()));
    }
    if cfg.epochs == 0 || !(cfg.learning_rate > 0.0) {
        return Err(KanError::InvalidArgument("mlp needs epochs >= 1 and a positive learning rate".into()));
    }
    let mut sizes = vec![xs[0].len()];
    sizes.extend_from_slice(&cfg.hidden);
    sizes.push(1);
    let mut model = MlpModel::new(&sizes, cfg.seed)?;

    let n = ys.len() as f64;
    let mean = ys.iter().sum::<f64>() / n;
    let std = (ys.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / n).sqrt();
    let scale = if std > 0.0 { std } else { 1.0 };
    let scaled: Vec<f64> = ys.iter().map(|y| (y - mean) / scale).collect();

    let mut params = model.flatten_params();
    let mut m = vec![0.0; params.len()];
    let mut v = vec![0.0; params.len()];
    let mut best = (f64::INFINITY, params.clone());
    for epoch in 0..=cfg.epochs {
        model.assign_params(&params)?;
        let (loss, grad) = model.loss_and_grad(xs, &scaled)?;
        if !loss.is_finite() {
            return Err(KanError::NonFiniteLoss { iteration: epoch });
        }
        if loss < best.0 {
            best = (loss, params.clone());
        }
        if epoch == cfg.epochs {
            break;
        }
        let t = (epoch + 1) as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for k in 0..params.len() {
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * grad[k];
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * grad[k] * grad[k];
            params[k] -= cfg.learning_rate * (m[k] / c1) / ((v[k] / c2).sqrt() + cfg.eps);
        }
    }
    model.assign_params(&best.1)?;
    model.y_shift = mean;
    model.y_scale = scale;
    log::debug!("mlp best standardized train loss {:.3e}", best.0);
    Ok(model)
}
