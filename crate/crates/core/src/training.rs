//! Loss, exact gradients and LBFGS training of [`KanModel`]s, plus the
//! sparse-train / prune / refine pipeline.
//!
//! The objective is `mse + lambda_sparsity * sum_e A_e + lambda_entropy * sum_l H_l`
//! where `A_e` is the mean absolute output of edge `e` over the batch and
//! `H_l` the entropy of the normalized `A_e` distribution within layer `l`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::{mse, Samples, Target};
use crate::error::{KanError, Result};
use crate::kan::{silu, silu_derivative, KanModel};
use crate::optim::{self, LbfgsOptions, Termination};
use crate::prune::{prune, PruneConfig, PruneReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_iters: usize,
    pub lbfgs_history: usize,
    pub grad_tol: f64,
    pub lambda_sparsity: f64,
    pub lambda_entropy: f64,
    pub seed: u64,
    /// When false, `w_base` and `w_spline` are held fixed and only spline
    /// coefficients are optimized.
    pub train_scales: bool,
    /// Resize hidden-layer spline domains to the observed activation range
    /// every this many iterations (0 disables).
    pub grid_update_every: usize,
    /// No grid updates at or after this iteration.
    pub grid_update_until: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_iters: 200,
            lbfgs_history: 10,
            grad_tol: 1e-7,
            lambda_sparsity: 0.01,
            lambda_entropy: 0.01,
            seed: 0,
            train_scales: true,
            grid_update_every: 10,
            grid_update_until: 50,
        }
    }
}

impl TrainConfig {
    /// Same settings with both regularization weights zeroed.
    pub fn unregularized(&self) -> Self {
        Self {
            lambda_sparsity: 0.0,
            lambda_entropy: 0.0,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 || self.lbfgs_history == 0 {
            return Err(KanError::InvalidArgument(
                "max_iters and lbfgs_history must be at least 1".into(),
            ));
        }
        if !(self.grad_tol > 0.0) {
            return Err(KanError::InvalidArgument("grad_tol must be positive".into()));
        }
        if !(self.lambda_sparsity >= 0.0 && self.lambda_entropy >= 0.0) {
            return Err(KanError::InvalidArgument(
                "regularization weights must be non-negative".into(),
            ));
        }
        Ok(())
    }

    fn lbfgs_options(&self, max_iters: usize) -> LbfgsOptions {
        LbfgsOptions {
            history: self.lbfgs_history,
            max_iters,
            grad_tol: self.grad_tol,
            ..LbfgsOptions::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub data_mse: f64,
    pub reg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub train_loss: f64,
    pub reg: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub records: Vec<TraceRecord>,
}

impl TrainTrace {
    pub const CSV_HEADER: &'static str = "iteration,train_loss,reg,grad_norm";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                r.iteration, r.train_loss, r.reg, r.grad_norm
            );
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == Self::CSV_HEADER => {}
            _ => {
                return Err(KanError::Format {
                    path: "trace".into(),
                    message: format!("expected header `{}`", Self::CSV_HEADER),
                })
            }
        }
        let mut records = Vec::new();
        for (idx, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |message: String| KanError::Parse {
                path: "trace".into(),
                line: idx + 1,
                message,
            };
            let cells: Vec<&str> = line.split(',').map(str::trim).collect();
            if cells.len() != 4 {
                return Err(parse_err(format!("expected 4 columns, found {}", cells.len())));
            }
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| parse_err(format!("cannot parse `{s}`")))
            };
            records.push(TraceRecord {
                iteration: cells[0]
                    .parse()
                    .map_err(|_| parse_err(format!("bad iteration `{}`", cells[0])))?,
                train_loss: num(cells[1])?,
                reg: num(cells[2])?,
                grad_norm: num(cells[3])?,
            });
        }
        Ok(Self { records })
    }
}

fn check_batch(model: &KanModel, xs: &[Vec<f64>], ys: &[f64]) -> Result<()> {
    if xs.is_empty() {
        return Err(KanError::InvalidInput("training batch is empty".into()));
    }
    if xs.len() != ys.len() {
        return Err(KanError::shape("targets", xs.len(), ys.len()));
    }
    if model.output_dim() != 1 {
        return Err(KanError::shape("model output for a single target", 1, model.output_dim()));
    }
    if let Some(x) = xs.iter().find(|x| x.len() != model.input_dim()) {
        return Err(KanError::shape("network input", model.input_dim(), x.len()));
    }
    Ok(())
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Per-layer entropy of the normalized activation magnitudes, and the
/// derivative of that entropy with respect to each magnitude.
fn entropy_with_grad(stats: &[f64]) -> (f64, Vec<f64>) {
    let total: f64 = stats.iter().sum();
    if !(total > 0.0) {
        return (0.0, vec![0.0; stats.len()]);
    }
    let h: f64 = stats
        .iter()
        .filter(|&&a| a > 0.0)
        .map(|&a| {
            let p = a / total;
            -p * p.ln()
        })
        .sum();
    let grad = stats
        .iter()
        .map(|&a| {
            if a > 0.0 {
                -((a / total).ln() + h) / total
            } else {
                0.0
            }
        })
        .collect();
    (h, grad)
}

fn evaluate(
    model: &KanModel,
    xs: &[Vec<f64>],
    ys: &[f64],
    cfg: &TrainConfig,
    want_grad: bool,
) -> Result<(LossParts, Vec<f64>)> {
    check_batch(model, xs, ys)?;
    let n = xs.len();
    let nf = n as f64;
    let layers = model.layers();

    // Forward pass, keeping node values and edge outputs for every sample.
    let mut nodes: Vec<Vec<Vec<f64>>> = Vec::with_capacity(n);
    let mut edge_out: Vec<Vec<Vec<f64>>> = Vec::with_capacity(n);
    for x in xs {
        let mut sample_nodes = vec![x.clone()];
        let mut sample_edges = Vec::with_capacity(layers.len());
        for layer in layers {
            let input = sample_nodes.last().unwrap();
            let mut out = vec![0.0; layer.out_dim()];
            let mut vals = Vec::with_capacity(layer.edges().len());
            for (j, o) in out.iter_mut().enumerate() {
                for (i, &xi) in input.iter().enumerate() {
                    let v = layer.edge(j, i).eval(xi);
                    vals.push(v);
                    *o += v;
                }
            }
            sample_edges.push(vals);
            sample_nodes.push(out);
        }
        nodes.push(sample_nodes);
        edge_out.push(sample_edges);
    }

    let data_mse = nodes
        .iter()
        .zip(ys)
        .map(|(s, y)| (s.last().unwrap()[0] - y).powi(2))
        .sum::<f64>()
        / nf;

    // Activation magnitudes and regularizer.
    let regularized = cfg.lambda_sparsity > 0.0 || cfg.lambda_entropy > 0.0;
    let mut reg = 0.0;
    let mut reg_grad: Vec<Vec<f64>> = Vec::new();
    if regularized {
        for (l, layer) in layers.iter().enumerate() {
            let mut stats = vec![0.0; layer.edges().len()];
            for sample in &edge_out {
                for (a, v) in stats.iter_mut().zip(&sample[l]) {
                    *a += v.abs();
                }
            }
            stats.iter_mut().for_each(|a| *a /= nf);
            let (h, dh) = entropy_with_grad(&stats);
            reg += cfg.lambda_sparsity * stats.iter().sum::<f64>() + cfg.lambda_entropy * h;
            reg_grad.push(
                dh.iter()
                    .map(|d| cfg.lambda_sparsity + cfg.lambda_entropy * d)
                    .collect(),
            );
        }
    }
    let parts = LossParts {
        total: data_mse + reg,
        data_mse,
        reg,
    };
    if !want_grad {
        return Ok((parts, Vec::new()));
    }

    let mut offsets = Vec::with_capacity(layers.len());
    let mut acc = 0;
    for layer in layers {
        offsets.push(acc);
        acc += layer.edges().iter().map(|e| e.param_count()).sum::<usize>();
    }
    let mut grad = vec![0.0; acc];
    let k = model.degree();
    let mut local = vec![0.0; k + 1];
    let mut dlocal = vec![0.0; k + 1];

    for s in 0..n {
        let mut delta = vec![2.0 * (nodes[s].last().unwrap()[0] - ys[s]) / nf];
        for l in (0..layers.len()).rev() {
            let layer = &layers[l];
            let input = &nodes[s][l];
            let mut delta_prev = vec![0.0; layer.in_dim()];
            for j in 0..layer.out_dim() {
                for (i, &x) in input.iter().enumerate() {
                    let e = j * layer.in_dim() + i;
                    let mut g = delta[j];
                    if regularized {
                        g += reg_grad[l][e] * sign(edge_out[s][l][e]) / nf;
                    }
                    if g == 0.0 {
                        continue;
                    }
                    let edge = layer.edge(j, i);
                    let nb = edge.spline.coefficients().len();
                    let first = edge.spline.grid().local_basis(x, &mut local, Some(&mut dlocal));
                    let coeffs = edge.spline.coefficients();
                    let base = offsets[l] + e * (nb + 2);
                    let mut spline_val = 0.0;
                    let mut spline_slope = 0.0;
                    for r in 0..=k {
                        grad[base + first + r] += g * edge.w_spline * local[r];
                        spline_val += coeffs[first + r] * local[r];
                        spline_slope += coeffs[first + r] * dlocal[r];
                    }
                    grad[base + nb] += g * silu(x);
                    grad[base + nb + 1] += g * spline_val;
                    if l > 0 {
                        delta_prev[i] +=
                            g * (edge.w_base * silu_derivative(x) + edge.w_spline * spline_slope);
                    }
                }
            }
            delta = delta_prev;
        }
    }

    if !cfg.train_scales {
        for (l, layer) in layers.iter().enumerate() {
            let mut base = offsets[l];
            for edge in layer.edges() {
                let nb = edge.spline.coefficients().len();
                grad[base + nb] = 0.0;
                grad[base + nb + 1] = 0.0;
                base += nb + 2;
            }
        }
    }
    Ok((parts, grad))
}

pub fn loss(model: &KanModel, xs: &[Vec<f64>], ys: &[f64], cfg: &TrainConfig) -> Result<LossParts> {
    Ok(evaluate(model, xs, ys, cfg, false)?.0)
}

/// Gradient of the total loss in [`KanModel::flatten_params`] layout.
pub fn grad(model: &KanModel, xs: &[Vec<f64>], ys: &[f64], cfg: &TrainConfig) -> Result<Vec<f64>> {
    Ok(evaluate(model, xs, ys, cfg, true)?.1)
}

pub fn loss_and_grad(
    model: &KanModel,
    xs: &[Vec<f64>],
    ys: &[f64],
    cfg: &TrainConfig,
) -> Result<(LossParts, Vec<f64>)> {
    evaluate(model, xs, ys, cfg, true)
}

/// Relative widening of hidden-layer spline domains during grid updates.
pub const GRID_MARGIN: f64 = 0.05;

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: KanModel,
    pub trace: TrainTrace,
    pub termination: Termination,
    pub steps: Vec<optim::StepRecord>,
}

/// Full-batch LBFGS on the regularized loss.
pub fn lbfgs_minimize(
    model: &KanModel,
    xs: &[Vec<f64>],
    ys: &[f64],
    cfg: &TrainConfig,
) -> Result<(KanModel, TrainTrace)> {
    let out = train(model, xs, ys, cfg)?;
    Ok((out.model, out.trace))
}

/// Like [`lbfgs_minimize`], also reporting why the optimizer stopped and
/// every accepted line-search step.
pub fn train(model: &KanModel, xs: &[Vec<f64>], ys: &[f64], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_batch(model, xs, ys)?;
    let mut current = model.clone();
    let mut trace = TrainTrace::default();
    let mut steps = Vec::new();
    let mut done = 0usize;
    let mut updates_pending = cfg.grid_update_every > 0 && current.layers().len() > 1;

    // Grid updates split the run into segments; each restarts LBFGS history.
    loop {
        updates_pending &= done < cfg.grid_update_until;
        let segment = if updates_pending {
            current.update_grids_from_samples(xs, GRID_MARGIN)?;
            cfg.grid_update_every.min(cfg.max_iters - done)
        } else {
            cfg.max_iters - done
        };
        let base = current.clone();
        let mut scratch = current.clone();
        let first_segment = done == 0;
        let objective = |p: &[f64]| {
            let mut m = base.clone();
            m.assign_params(p)?;
            let (parts, g) = evaluate(&m, xs, ys, cfg, true)?;
            Ok((parts.total, g))
        };
        let record = |iteration: usize, p: &[f64], f: f64, g: &[f64]| {
            if !f.is_finite() {
                return Err(KanError::NonFiniteLoss {
                    iteration: done + iteration,
                });
            }
            if iteration == 0 && !first_segment {
                return Ok(());
            }
            scratch.assign_params(p)?;
            let parts = loss(&scratch, xs, ys, cfg)?;
            trace.records.push(TraceRecord {
                iteration: done + iteration,
                train_loss: parts.data_mse,
                reg: parts.reg,
                grad_norm: g.iter().map(|v| v * v).sum::<f64>().sqrt(),
            });
            Ok(())
        };
        let result = optim::minimize(
            objective,
            current.flatten_params(),
            &cfg.lbfgs_options(segment),
            record,
        )
        .map_err(|e| match e {
            KanError::NonFiniteLoss { iteration } => KanError::NonFiniteLoss {
                iteration: done + iteration,
            },
            other => other,
        })?;
        current.assign_params(&result.x)?;
        steps.extend(result.steps.into_iter().map(|mut s| {
            s.iteration += done;
            s
        }));
        done += result.iterations;
        if !updates_pending || done >= cfg.max_iters {
            return Ok(TrainOutcome {
                model: current,
                trace,
                termination: result.termination,
                steps,
            });
        }
        if result.iterations == 0 {
            updates_pending = false;
        }
    }
}

/// Network shape and initialization seed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KanArch {
    pub widths: Vec<usize>,
    pub grid: usize,
    pub degree: usize,
    pub seed: u64,
}

impl KanArch {
    /// `[5, 2, 1]`, G = 2, k = 3 for pressure; `[5, 6, 1]`, G = 4, k = 4 for flow rate.
    pub fn reference(target: Target) -> Self {
        match target {
            Target::Pressure => Self {
                widths: vec![5, 2, 1],
                grid: 2,
                degree: 3,
                seed: 0,
            },
            Target::FlowRate => Self {
                widths: vec![5, 6, 1],
                grid: 4,
                degree: 4,
                seed: 0,
            },
        }
    }

    pub fn build(&self) -> Result<KanModel> {
        KanModel::new(&self.widths, self.grid, self.degree, self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub sparse: TrainConfig,
    pub prune: PruneConfig,
    pub refine: TrainConfig,
    /// Grid size to extend to before refinement (`None` keeps the original).
    pub refine_grid: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let sparse = TrainConfig::default();
        let refine = sparse.unregularized();
        Self {
            sparse,
            prune: PruneConfig::default(),
            refine,
            refine_grid: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageMetrics {
    pub stage: String,
    pub widths: Vec<usize>,
    pub train_mse: f64,
    pub test_mse: f64,
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub model: KanModel,
    pub sparse_trace: TrainTrace,
    pub refine_trace: TrainTrace,
    pub prune_report: PruneReport,
    pub stages: Vec<StageMetrics>,
}

impl PipelineOutcome {
    pub fn final_test_mse(&self) -> f64 {
        self.stages.last().map(|s| s.test_mse).unwrap_or(f64::NAN)
    }
}

pub fn predict_all(model: &KanModel, xs: &[Vec<f64>]) -> Result<Vec<f64>> {
    xs.iter().map(|x| Ok(model.forward(x)?[0])).collect()
}

fn stage_metrics(stage: &str, model: &KanModel, train: &Samples, test: &Samples) -> Result<StageMetrics> {
    let train_mse = mse(&predict_all(model, &train.xs)?, &train.ys)?;
    let test_mse = if test.is_empty() {
        f64::NAN
    } else {
        mse(&predict_all(model, &test.xs)?, &test.ys)?
    };
    Ok(StageMetrics {
        stage: stage.to_string(),
        widths: model.widths().to_vec(),
        train_mse,
        test_mse,
    })
}

/// Sparse training, pruning on training activations, then unregularized
/// refinement. Inputs must already be mapped into the spline domain.
pub fn run_pipeline(
    train_set: &Samples,
    test_set: &Samples,
    arch: &KanArch,
    cfg: &PipelineConfig,
) -> Result<PipelineOutcome> {
    let initial = arch.build()?;
    let sparse = train(&initial, &train_set.xs, &train_set.ys, &cfg.sparse)?;
    let mut stages = vec![stage_metrics("sparse", &sparse.model, train_set, test_set)?];

    let (pruned, prune_report) = prune(&sparse.model, &train_set.xs, &cfg.prune)?;
    stages.push(stage_metrics("pruned", &pruned, train_set, test_set)?);

    let mut pruned = pruned;
    if let Some(g) = cfg.refine_grid {
        pruned.extend_grids(g)?;
    }
    let refine_cfg = cfg.refine.unregularized();
    let refined = train(&pruned, &train_set.xs, &train_set.ys, &refine_cfg)?;
    stages.push(stage_metrics("refined", &refined.model, train_set, test_set)?);

    Ok(PipelineOutcome {
        model: refined.model,
        sparse_trace: sparse.trace,
        refine_trace: refined.trace,
        prune_report,
        stages,
    })
}
