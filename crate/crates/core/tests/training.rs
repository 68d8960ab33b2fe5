use kanforge::optim::Termination;
use kanforge::spline::{linspace, SplineFunction, SplineGrid};
use kanforge::training::{grad, loss, loss_and_grad, train, TrainConfig};
use kanforge::{KanEdge, KanLayer, KanModel};
use rand::Rng;

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

/// Degree-1 spline on [-1, 1] with G = 2: hat functions at -1, 0, 1 plus the
/// two boundary-extension hats.
fn hat_edge(coeffs: [f64; 3], w_base: f64, w_spline: f64) -> KanEdge {
    let grid = SplineGrid::symmetric(2, 1).unwrap();
    assert_eq!(grid.basis_count(), 3);
    KanEdge::new(SplineFunction::new(grid, coeffs.to_vec()).unwrap(), w_base, w_spline)
}

/// Piecewise-linear interpolant through (-1, c0), (0, c1), (1, c2).
fn hat_eval(c: [f64; 3], x: f64) -> f64 {
    if x <= 0.0 {
        c[0] * (-x) + c[1] * (1.0 + x)
    } else {
        c[1] * (1.0 - x) + c[2] * x
    }
}

fn random_xs(rng: &mut impl Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

fn perturbed(model: &KanModel, seed: u64, scale: f64) -> KanModel {
    let mut rng = kanforge::rng::seeded(seed);
    let p: Vec<f64> = model
        .flatten_params()
        .iter()
        .map(|v| v + rng.random_range(-scale..scale))
        .collect();
    model.unflatten_params(&p).unwrap()
}

#[test]
fn mse_matches_hand_evaluation_of_two_edge_model() {
    let c1 = [0.5, -0.2, 1.0];
    let c2 = [-1.0, 0.3, 0.0];
    let edges = vec![hat_edge(c1, 0.7, 1.3), hat_edge(c2, -0.4, 0.9)];
    let model = KanModel::from_layers(vec![KanLayer::new(2, 1, edges).unwrap()], 2, 1, 0).unwrap();
    let xs = vec![vec![-0.5, 0.25], vec![0.75, -1.0], vec![0.0, 0.5]];
    let ys = vec![0.1, -0.3, 2.0];
    let phi = |c: [f64; 3], wb: f64, ws: f64, x: f64| wb * silu(x) + ws * hat_eval(c, x);
    let mut sse = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        let out = phi(c1, 0.7, 1.3, x[0]) + phi(c2, -0.4, 0.9, x[1]);
        sse += (out - y).powi(2);
    }
    let cfg = TrainConfig::default().unregularized();
    let parts = loss(&model, &xs, &ys, &cfg).unwrap();
    assert!((parts.data_mse - sse / 3.0).abs() < 1e-14);
    assert_eq!(parts.reg, 0.0);
    assert_eq!(parts.total, parts.data_mse);
}

#[test]
fn regularizer_matches_l1_plus_entropy_by_hand() {
    let c1 = [0.5, -0.2, 1.0];
    let c2 = [-1.0, 0.3, 0.0];
    let edges = vec![hat_edge(c1, 0.7, 1.3), hat_edge(c2, -0.4, 0.9)];
    let model = KanModel::from_layers(vec![KanLayer::new(2, 1, edges).unwrap()], 2, 1, 0).unwrap();
    let xs = vec![vec![-0.5, 0.25], vec![0.75, -1.0], vec![0.0, 0.5]];
    let ys = vec![0.0; 3];
    let phi = |c: [f64; 3], wb: f64, ws: f64, x: f64| wb * silu(x) + ws * hat_eval(c, x);
    let a1: f64 = xs.iter().map(|x| phi(c1, 0.7, 1.3, x[0]).abs()).sum::<f64>() / 3.0;
    let a2: f64 = xs.iter().map(|x| phi(c2, -0.4, 0.9, x[1]).abs()).sum::<f64>() / 3.0;
    let (p1, p2) = (a1 / (a1 + a2), a2 / (a1 + a2));
    let entropy = -(p1 * p1.ln() + p2 * p2.ln());
    let cfg = TrainConfig {
        lambda_sparsity: 0.3,
        lambda_entropy: 0.7,
        ..TrainConfig::default()
    };
    let parts = loss(&model, &xs, &ys, &cfg).unwrap();
    let expected = 0.3 * (a1 + a2) + 0.7 * entropy;
    assert!((parts.reg - expected).abs() < 1e-13, "{} vs {expected}", parts.reg);
    assert!((parts.total - parts.data_mse - parts.reg).abs() < 1e-13);
}

#[test]
fn single_edge_gradient_by_chain_rule() {
    // d/dc_i mean((ws * B_i(x) + ...) - y)^2 = 2/n * sum r * ws * B_i(x), with
    // hat bases written out by hand.
    let c = [0.2, -0.5, 0.8];
    let (wb, ws) = (0.6, 1.5);
    let model =
        KanModel::from_layers(vec![KanLayer::new(1, 1, vec![hat_edge(c, wb, ws)]).unwrap()], 2, 1, 0).unwrap();
    let xs: Vec<Vec<f64>> = [-0.75, -0.25, 0.5, 0.9].iter().map(|&x| vec![x]).collect();
    let ys = vec![1.0, -1.0, 0.5, 0.0];
    let hats = |x: f64| {
        if x <= 0.0 {
            [-x, 1.0 + x, 0.0]
        } else {
            [0.0, 1.0 - x, x]
        }
    };
    let n = xs.len() as f64;
    let mut dc = [0.0; 3];
    let (mut dwb, mut dws) = (0.0, 0.0);
    for (x, y) in xs.iter().zip(&ys) {
        let x = x[0];
        let r = wb * silu(x) + ws * hat_eval(c, x) - y;
        let b = hats(x);
        for i in 0..3 {
            dc[i] += 2.0 / n * r * ws * b[i];
        }
        dwb += 2.0 / n * r * silu(x);
        dws += 2.0 / n * r * hat_eval(c, x);
    }
    let g = grad(&model, &xs, &ys, &TrainConfig::default().unregularized()).unwrap();
    let p = model.flatten_params();
    // Locate each parameter by its value; all five are distinct.
    let find = |v: f64| p.iter().position(|&q| q == v).unwrap();
    for i in 0..3 {
        assert!((g[find(c[i])] - dc[i]).abs() < 1e-13);
    }
    assert!((g[find(wb)] - dwb).abs() < 1e-13);
    assert!((g[find(ws)] - dws).abs() < 1e-13);
}

#[test]
fn deep_model_gradient_matches_finite_differences() {
    let mut rng = kanforge::rng::seeded(5);
    let model = perturbed(&KanModel::new(&[3, 4, 2, 1], 4, 3, 9).unwrap(), 11, 0.5);
    let xs = random_xs(&mut rng, 12, 3);
    let ys: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
    let cfg = TrainConfig {
        lambda_sparsity: 0.05,
        lambda_entropy: 0.02,
        ..TrainConfig::default()
    };
    let (parts, g) = loss_and_grad(&model, &xs, &ys, &cfg).unwrap();
    assert!(parts.reg > 0.0);
    let p0 = model.flatten_params();
    let h = 1e-6;
    for i in 0..p0.len() {
        let mut p = p0.clone();
        p[i] += h;
        let fp = loss(&model.unflatten_params(&p).unwrap(), &xs, &ys, &cfg).unwrap().total;
        p[i] -= 2.0 * h;
        let fm = loss(&model.unflatten_params(&p).unwrap(), &xs, &ys, &cfg).unwrap().total;
        let fd = (fp - fm) / (2.0 * h);
        let err = (g[i] - fd).abs() / g[i].abs().max(fd.abs()).max(1e-6);
        assert!(err < 1e-4, "param {i}: analytic {} fd {fd}", g[i]);
    }
}

#[test]
fn exact_fit_start_is_stationary() {
    let model = perturbed(&KanModel::new(&[2, 1], 3, 3, 0).unwrap(), 2, 0.3);
    let xs = random_xs(&mut kanforge::rng::seeded(1), 20, 2);
    let ys: Vec<f64> = xs.iter().map(|x| model.forward(x).unwrap()[0]).collect();
    let out = train(&model, &xs, &ys, &TrainConfig::default().unregularized()).unwrap();
    assert_eq!(out.termination, Termination::GradientTolerance);
    assert!(out.steps.is_empty());
    assert_eq!(out.model.flatten_params(), model.flatten_params());
}

#[test]
fn fits_a_sine_and_trace_is_consistent() {
    let model = KanModel::new(&[1, 1], 8, 3, 0).unwrap();
    let xs: Vec<Vec<f64>> = linspace(-1.0, 1.0, 100).into_iter().map(|x| vec![x]).collect();
    let ys: Vec<f64> = xs.iter().map(|x| (std::f64::consts::PI * x[0]).sin()).collect();
    let cfg = TrainConfig::default().unregularized();
    let out = train(&model, &xs, &ys, &cfg).unwrap();
    let mse = loss(&out.model, &xs, &ys, &cfg).unwrap().data_mse;
    assert!(mse < 1e-4, "mse {mse}");
    let records = &out.trace.records;
    assert!(records.len() >= 2);
    assert!(records.windows(2).all(|w| w[1].iteration > w[0].iteration));
    assert!(records.last().unwrap().train_loss <= records[0].train_loss);
}

#[test]
fn accepted_steps_satisfy_strong_wolfe() {
    let model = KanModel::new(&[2, 3, 1], 3, 3, 4).unwrap();
    let xs = random_xs(&mut kanforge::rng::seeded(8), 30, 2);
    let ys: Vec<f64> = xs.iter().map(|x| (2.0 * x[0]).sin() * x[1]).collect();
    let cfg = TrainConfig {
        max_iters: 60,
        grid_update_every: 0,
        ..TrainConfig::default()
    };
    let out = train(&model, &xs, &ys, &cfg).unwrap();
    assert!(!out.steps.is_empty());
    for s in &out.steps {
        assert!(s.slope_before < 0.0);
        assert!(s.f_after <= s.f_before + 1e-4 * s.alpha * s.slope_before + 1e-12 * s.f_before.abs());
        assert!(s.slope_after.abs() <= 0.9 * s.slope_before.abs() + 1e-12);
    }
}

#[test]
fn training_is_deterministic() {
    let model = KanModel::new(&[3, 2, 1], 2, 3, 1).unwrap();
    let xs = random_xs(&mut kanforge::rng::seeded(3), 25, 3);
    let ys: Vec<f64> = xs.iter().map(|x| x[0] * x[1] + x[2].exp()).collect();
    let cfg = TrainConfig { max_iters: 80, ..TrainConfig::default() };
    let a = train(&model, &xs, &ys, &cfg).unwrap();
    let b = train(&model, &xs, &ys, &cfg).unwrap();
    assert_eq!(a.model.flatten_params(), b.model.flatten_params());
    assert_eq!(a.trace.to_csv(), b.trace.to_csv());
}

#[test]
fn stronger_regularization_gives_smaller_activation_mass() {
    let xs = random_xs(&mut kanforge::rng::seeded(12), 60, 3);
    let ys: Vec<f64> = xs.iter().map(|x| (x[0] + 0.5 * x[1]).tanh()).collect();
    let model = KanModel::new(&[3, 3, 1], 3, 3, 0).unwrap();
    let mass = |lambda: f64| {
        let cfg = TrainConfig {
            lambda_sparsity: lambda,
            lambda_entropy: lambda,
            ..TrainConfig::default()
        };
        let fitted = train(&model, &xs, &ys, &cfg).unwrap().model;
        let l1_only = TrainConfig {
            lambda_sparsity: 1.0,
            lambda_entropy: 0.0,
            ..TrainConfig::default()
        };
        let parts = loss(&fitted, &xs, &ys, &l1_only).unwrap();
        (parts.reg, parts.data_mse)
    };
    let (m0, e0) = mass(0.0);
    let (m1, _) = mass(0.01);
    let (m2, e2) = mass(0.1);
    assert!(m1 < m0 && m2 < m1, "activation mass {m0} {m1} {m2}");
    assert!(e2 >= e0);
}

#[test]
fn frozen_scales_are_untouched() {
    let model = perturbed(&KanModel::new(&[2, 2, 1], 3, 3, 0).unwrap(), 4, 0.2);
    let xs = random_xs(&mut kanforge::rng::seeded(6), 20, 2);
    let ys: Vec<f64> = xs.iter().map(|x| x[0] - x[1]).collect();
    let cfg = TrainConfig {
        train_scales: false,
        max_iters: 30,
        grid_update_every: 0,
        ..TrainConfig::default()
    };
    let out = train(&model, &xs, &ys, &cfg).unwrap().model;
    for (la, lb) in model.layers().iter().zip(out.layers()) {
        for (ea, eb) in la.edges().iter().zip(lb.edges()) {
            assert_eq!(ea.w_base, eb.w_base);
            assert_eq!(ea.w_spline, eb.w_spline);
        }
    }
}
