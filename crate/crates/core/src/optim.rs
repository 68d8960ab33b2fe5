//! Limited-memory BFGS with a strong-Wolfe line search.
//!
//! The objective is any closure returning `(value, gradient)`. A step is
//! accepted only when the line search finds a point satisfying both the
//! sufficient-decrease and the curvature condition; otherwise the search is
//! retried once along steepest descent with a cleared history, and the run
//! terminates if that fails too.

use std::collections::VecDeque;

use crate::error::{KanError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsOptions {
    pub history: usize,
    pub max_iters: usize,
    /// Stop when the infinity norm of the gradient falls to this value.
    pub grad_tol: f64,
    /// Armijo constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    /// Objective evaluations allowed per line search.
    pub max_line_search: usize,
    /// Stop when an accepted step changes the objective by no more than
    /// this fraction of its magnitude.
    pub rel_change_tol: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            history: 10,
            max_iters: 200,
            grad_tol: 1e-7,
            c1: 1e-4,
            c2: 0.9,
            max_line_search: 20,
            rel_change_tol: 1e-15,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    GradientTolerance,
    MaxIterations,
    LineSearchFailed,
    NoProgress,
}

/// One accepted step, with the quantities needed to audit the Wolfe conditions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub iteration: usize,
    pub alpha: f64,
    pub f_before: f64,
    pub f_after: f64,
    /// Directional derivative at the start of the step.
    pub slope_before: f64,
    /// Directional derivative at the accepted point.
    pub slope_after: f64,
}

#[derive(Debug, Clone)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub iterations: usize,
    pub termination: Termination,
    pub steps: Vec<StepRecord>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn axpy(x: &[f64], alpha: f64, d: &[f64]) -> Vec<f64> {
    x.iter().zip(d).map(|(xi, di)| xi + alpha * di).collect()
}

struct Trial {
    alpha: f64,
    value: f64,
    slope: f64,
    x: Vec<f64>,
    grad: Vec<f64>,
}

/// Minimizes `objective` from `x0`. `on_accept` is called with the iteration
/// index and the accepted point after every step (and once for the start,
/// with index 0).
pub fn minimize<F, C>(
    mut objective: F,
    x0: Vec<f64>,
    opts: &LbfgsOptions,
    mut on_accept: C,
) -> Result<LbfgsResult>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
    C: FnMut(usize, &[f64], f64, &[f64]) -> Result<()>,
{
    let (mut f, mut g) = objective(&x0)?;
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(KanError::NonFiniteLoss { iteration: 0 });
    }
    let mut x = x0;
    on_accept(0, &x, f, &g)?;

    let mut s_hist: VecDeque<Vec<f64>> = VecDeque::with_capacity(opts.history);
    let mut y_hist: VecDeque<Vec<f64>> = VecDeque::with_capacity(opts.history);
    let mut steps = Vec::new();
    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;

    while iterations < opts.max_iters {
        if inf_norm(&g) <= opts.grad_tol {
            termination = Termination::GradientTolerance;
            break;
        }

        let mut trial = None;
        for attempt in 0..2 {
            let fresh = attempt == 1 || s_hist.is_empty();
            if attempt == 1 {
                s_hist.clear();
                y_hist.clear();
            }
            let mut d = two_loop(&g, &s_hist, &y_hist);
            let mut slope = dot(&g, &d);
            if !(slope < 0.0) {
                s_hist.clear();
                y_hist.clear();
                d = g.iter().map(|v| -v).collect();
                slope = dot(&g, &d);
            }
            let alpha0 = if fresh {
                (1.0 / g.iter().map(|v| v.abs()).sum::<f64>()).min(1.0)
            } else {
                1.0
            };
            if let Some(t) = strong_wolfe(&mut objective, &x, f, slope, &d, alpha0, opts)? {
                trial = Some((t, slope, d));
                break;
            }
            if fresh {
                break;
            }
        }

        let Some((t, slope_before, d)) = trial else {
            termination = Termination::LineSearchFailed;
            break;
        };
        iterations += 1;

        let s: Vec<f64> = d.iter().map(|v| t.alpha * v).collect();
        let y: Vec<f64> = t.grad.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-10 * dot(&y, &y).max(f64::MIN_POSITIVE) {
            if s_hist.len() == opts.history {
                s_hist.pop_front();
                y_hist.pop_front();
            }
            s_hist.push_back(s);
            y_hist.push_back(y);
        }

        steps.push(StepRecord {
            iteration: iterations,
            alpha: t.alpha,
            f_before: f,
            f_after: t.value,
            slope_before,
            slope_after: t.slope,
        });
        let change = (f - t.value).abs();
        x = t.x;
        f = t.value;
        g = t.grad;
        on_accept(iterations, &x, f, &g)?;

        if change <= opts.rel_change_tol * f.abs() {
            termination = if inf_norm(&g) <= opts.grad_tol {
                Termination::GradientTolerance
            } else {
                Termination::NoProgress
            };
            break;
        }
    }
    if iterations == opts.max_iters && inf_norm(&g) <= opts.grad_tol {
        termination = Termination::GradientTolerance;
    }

    Ok(LbfgsResult {
        x,
        value: f,
        gradient: g,
        iterations,
        termination,
        steps,
    })
}

/// Two-loop recursion: approximate inverse-Hessian times `-g`.
fn two_loop(g: &[f64], s_hist: &VecDeque<Vec<f64>>, y_hist: &VecDeque<Vec<f64>>) -> Vec<f64> {
    let mut q: Vec<f64> = g.to_vec();
    let m = s_hist.len();
    let mut alphas = vec![0.0; m];
    let mut rhos = vec![0.0; m];
    for i in (0..m).rev() {
        rhos[i] = 1.0 / dot(&y_hist[i], &s_hist[i]);
        alphas[i] = rhos[i] * dot(&s_hist[i], &q);
        for (qj, yj) in q.iter_mut().zip(&y_hist[i]) {
            *qj -= alphas[i] * yj;
        }
    }
    if m > 0 {
        let gamma = dot(&s_hist[m - 1], &y_hist[m - 1]) / dot(&y_hist[m - 1], &y_hist[m - 1]);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for i in 0..m {
        let beta = rhos[i] * dot(&y_hist[i], &q);
        for (qj, sj) in q.iter_mut().zip(&s_hist[i]) {
            *qj += (alphas[i] - beta) * sj;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

/// Line search for a step satisfying the strong Wolfe conditions
/// (bracketing followed by zoom with safeguarded cubic interpolation).
/// Returns `None` when no such step is found within the evaluation budget.
fn strong_wolfe<F>(
    objective: &mut F,
    x: &[f64],
    f0: f64,
    slope0: f64,
    d: &[f64],
    alpha0: f64,
    opts: &LbfgsOptions,
) -> Result<Option<Trial>>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mut evals = 0usize;
    let mut eval = |alpha: f64, evals: &mut usize| -> Result<Trial> {
        *evals += 1;
        let xt = axpy(x, alpha, d);
        let (value, grad) = objective(&xt)?;
        let slope = dot(&grad, d);
        Ok(Trial {
            alpha,
            value,
            slope,
            x: xt,
            grad,
        })
    };
    let finite = |t: &Trial| t.value.is_finite() && t.slope.is_finite();
    let armijo = |t: &Trial| t.value <= f0 + opts.c1 * t.alpha * slope0;
    let curvature = |t: &Trial| t.slope.abs() <= -opts.c2 * slope0;

    // (alpha, value, slope) of the previous trial; alpha = 0 is the start.
    let mut prev = (0.0, f0, slope0);
    let mut alpha = alpha0;
    let bracket: Option<((f64, f64, f64), (f64, f64, f64))>;
    loop {
        if evals >= opts.max_line_search {
            return Ok(None);
        }
        let t = eval(alpha, &mut evals)?;
        if !finite(&t) {
            alpha = prev.0 + 0.5 * (alpha - prev.0);
            continue;
        }
        if !armijo(&t) || (prev.0 > 0.0 && t.value >= prev.1) {
            bracket = Some((prev, (t.alpha, t.value, t.slope)));
            break;
        }
        if curvature(&t) {
            return Ok(Some(t));
        }
        if t.slope >= 0.0 {
            bracket = Some(((t.alpha, t.value, t.slope), prev));
            break;
        }
        prev = (t.alpha, t.value, t.slope);
        alpha *= 2.0;
    }

    let (mut lo, mut hi) = bracket.unwrap();
    while evals < opts.max_line_search {
        let (a_lo, a_hi) = (lo.0, hi.0);
        let width = (a_hi - a_lo).abs();
        if width <= f64::EPSILON * a_lo.abs().max(a_hi.abs()) {
            break;
        }
        let mut a = cubic_minimizer(lo, hi).unwrap_or(0.5 * (a_lo + a_hi));
        let (left, right) = (a_lo.min(a_hi), a_lo.max(a_hi));
        if !(a > left + 0.1 * width && a < right - 0.1 * width) {
            a = 0.5 * (a_lo + a_hi);
        }
        let t = eval(a, &mut evals)?;
        if !finite(&t) {
            hi = (t.alpha, f64::INFINITY, f64::NAN);
            continue;
        }
        if !armijo(&t) || t.value >= lo.1 {
            hi = (t.alpha, t.value, t.slope);
        } else {
            if curvature(&t) {
                return Ok(Some(t));
            }
            if t.slope * (hi.0 - lo.0) >= 0.0 {
                hi = lo;
            }
            lo = (t.alpha, t.value, t.slope);
        }
    }
    Ok(None)
}

/// Minimizer of the cubic interpolating values and slopes at two points.
fn cubic_minimizer(p: (f64, f64, f64), q: (f64, f64, f64)) -> Option<f64> {
    let (a, fa, ga) = p;
    let (b, fb, gb) = q;
    if !(fa.is_finite() && fb.is_finite() && ga.is_finite() && gb.is_finite()) {
        return None;
    }
    let d1 = ga + gb - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - ga * gb;
    if disc < 0.0 {
        return None;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let m = b - (b - a) * (gb + d2 - d1) / (gb - ga + 2.0 * d2);
    m.is_finite().then_some(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![
            -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
            200.0 * (b - a * a),
        ];
        Ok((f, g))
    }

    #[test]
    fn solves_rosenbrock() {
        let opts = LbfgsOptions {
            max_iters: 500,
            grad_tol: 1e-9,
            ..Default::default()
        };
        let r = minimize(rosenbrock, vec![-1.2, 1.0], &opts, |_, _, _, _| Ok(())).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-6, "{:?}", r.x);
    }

    #[test]
    fn accepted_steps_satisfy_strong_wolfe() {
        let opts = LbfgsOptions::default();
        let r = minimize(rosenbrock, vec![-1.2, 1.0], &opts, |_, _, _, _| Ok(())).unwrap();
        assert!(!r.steps.is_empty());
        for s in &r.steps {
            assert!(s.f_after <= s.f_before + opts.c1 * s.alpha * s.slope_before);
            assert!(s.slope_after.abs() <= -opts.c2 * s.slope_before);
        }
    }

    #[test]
    fn stationary_start_returns_immediately() {
        let quad = |x: &[f64]| Ok((x[0] * x[0], vec![2.0 * x[0]]));
        let r = minimize(quad, vec![0.0], &LbfgsOptions::default(), |_, _, _, _| Ok(())).unwrap();
        assert_eq!(r.iterations, 0);
        assert_eq!(r.termination, Termination::GradientTolerance);
        assert_eq!(r.x, vec![0.0]);
    }

    #[test]
    fn non_finite_start_is_an_error() {
        let bad = |_: &[f64]| Ok((f64::NAN, vec![0.0]));
        let err = minimize(bad, vec![1.0], &LbfgsOptions::default(), |_, _, _, _| Ok(())).unwrap_err();
        assert!(matches!(err, KanError::NonFiniteLoss { iteration: 0 }));
        assert!(err.to_string().contains("iteration 0"));
    }

    #[test]
    fn overflowing_region_is_backed_off() {
        // exp overflows for large steps; the search must halve back into range.
        let f = |x: &[f64]| {
            let v = (x[0] * 400.0).exp() - 400.0 * x[0];
            Ok((v, vec![400.0 * (x[0] * 400.0).exp() - 400.0]))
        };
        let r = minimize(f, vec![-3.0], &LbfgsOptions::default(), |_, _, _, _| Ok(())).unwrap();
        assert!(r.x[0].abs() < 1e-6, "{:?}", r.x);
    }
}
