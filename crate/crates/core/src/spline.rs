//! B-spline bases on uniform knot grids.
//!
//! A grid with `G` interior intervals on `[lo, hi]` and degree `k` carries
//! `G + 2k + 1` knots: the `G + 1` uniform breakpoints plus `k` further
//! uniform steps past each boundary. That gives `G + k` basis functions, and
//! refining `G` by an integer factor yields nested spline spaces.
//!
//! Inputs outside `[lo, hi]` are clamped to the boundary, so a spline is
//! constant outside its domain and its derivative there is zero.

use nalgebra::{DMatrix, DVector};

use crate::error::{KanError, Result};

/// Singular values below this fraction of the largest are treated as zero.
pub const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct SplineGrid {
    degree: usize,
    intervals: usize,
    lo: f64,
    hi: f64,
    knots: Vec<f64>,
}

impl SplineGrid {
    pub fn uniform(intervals: usize, degree: usize, lo: f64, hi: f64) -> Result<Self> {
        if intervals == 0 {
            return Err(KanError::InvalidArgument(
                "spline grid needs at least one interval".into(),
            ));
        }
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(KanError::InvalidArgument(format!(
                "spline domain must satisfy lo < hi, got [{lo}, {hi}]"
            )));
        }
        let step = (hi - lo) / intervals as f64;
        let knots = (0..intervals + 2 * degree + 1)
            .map(|j| {
                let offset = j as isize - degree as isize;
                if offset == 0 {
                    lo
                } else if offset == intervals as isize {
                    hi
                } else {
                    lo + offset as f64 * step
                }
            })
            .collect();
        Ok(Self {
            degree,
            intervals,
            lo,
            hi,
            knots,
        })
    }

    /// Default layout used by every network edge: `[-1, 1]`.
    pub fn symmetric(intervals: usize, degree: usize) -> Result<Self> {
        Self::uniform(intervals, degree, -1.0, 1.0)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn intervals(&self) -> usize {
        self.intervals
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn basis_count(&self) -> usize {
        self.intervals + self.degree
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.lo, self.hi)
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    /// Knot span `s` with `t[s] <= x < t[s+1]`, restricted to the interior
    /// spans so that `x == hi` falls into the last one.
    fn span(&self, x: f64) -> usize {
        let k = self.degree;
        let last = k + self.intervals - 1;
        let step = (self.hi - self.lo) / self.intervals as f64;
        let guess = ((x - self.lo) / step).floor();
        let mut s = if guess.is_finite() && guess > 0.0 {
            (k + guess as usize).min(last)
        } else {
            k
        };
        while s > k && x < self.knots[s] {
            s -= 1;
        }
        while s < last && x >= self.knots[s + 1] {
            s += 1;
        }
        s
    }

    /// Evaluates the `k + 1` basis functions that are nonzero at `x` (after
    /// clamping) into `values`, and their derivatives into `derivs` when
    /// requested. Returns the global index of the first of them.
    ///
    /// Both slices must have length `degree + 1`. Derivatives are those of the
    /// clamped basis, i.e. zero when `x` lies strictly outside the domain.
    pub fn local_basis(&self, x: f64, values: &mut [f64], derivs: Option<&mut [f64]>) -> usize {
        let k = self.degree;
        debug_assert_eq!(values.len(), k + 1);
        let inside = self.contains(x);
        let xc = self.clamp(x);
        let s = self.span(xc);
        let t = &self.knots;

        // Triangular de Boor table; `values` holds the degree-d row after step d.
        values.fill(0.0);
        values[0] = 1.0;
        let mut lower = [0.0f64; 16];
        let want_derivs = derivs.is_some() && k > 0;
        for d in 1..=k {
            if want_derivs && d == k {
                lower[..k].copy_from_slice(&values[..k]);
            }
            let mut saved = 0.0;
            for r in 0..d {
                let right = t[s + r + 1] - xc;
                let left = xc - t[s + r + 1 - d];
                let temp = values[r] / (right + left);
                values[r] = saved + right * temp;
                saved = left * temp;
            }
            values[d] = saved;
        }

        if let Some(derivs) = derivs {
            debug_assert_eq!(derivs.len(), k + 1);
            derivs.fill(0.0);
            if k > 0 && inside {
                // lower[r] is the degree k-1 function with global index s-k+1+r.
                let kf = k as f64;
                for r in 0..=k {
                    let i = s - k + r;
                    let mut dv = 0.0;
                    if r >= 1 {
                        dv += kf * lower[r - 1] / (t[i + k] - t[i]);
                    }
                    if r < k {
                        dv -= kf * lower[r] / (t[i + k + 1] - t[i + 1]);
                    }
                    derivs[r] = dv;
                }
            }
        }
        s - k
    }

    /// Full basis vector `B_0(x) .. B_{G+k-1}(x)`.
    pub fn basis(&self, x: f64) -> Result<Vec<f64>> {
        check_finite(x)?;
        if self.degree > 15 {
            return Err(KanError::InvalidArgument("spline degree above 15".into()));
        }
        let mut local = vec![0.0; self.degree + 1];
        let first = self.local_basis(x, &mut local, None);
        let mut out = vec![0.0; self.basis_count()];
        out[first..first + local.len()].copy_from_slice(&local);
        Ok(out)
    }

    /// Full vector of basis derivatives `dB_i/dx`.
    pub fn basis_derivative(&self, x: f64) -> Result<Vec<f64>> {
        check_finite(x)?;
        if self.degree > 15 {
            return Err(KanError::InvalidArgument("spline degree above 15".into()));
        }
        let mut local = vec![0.0; self.degree + 1];
        let mut dlocal = vec![0.0; self.degree + 1];
        let first = self.local_basis(x, &mut local, Some(&mut dlocal));
        let mut out = vec![0.0; self.basis_count()];
        out[first..first + dlocal.len()].copy_from_slice(&dlocal);
        Ok(out)
    }
}

fn check_finite(x: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(KanError::InvalidInput(format!("non-finite spline input {x}")))
    }
}

/// A univariate spline `x -> sum_i c_i B_i(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineFunction {
    grid: SplineGrid,
    coefficients: Vec<f64>,
}

impl SplineFunction {
    pub fn new(grid: SplineGrid, coefficients: Vec<f64>) -> Result<Self> {
        if coefficients.len() != grid.basis_count() {
            return Err(KanError::shape(
                "spline coefficients",
                grid.basis_count(),
                coefficients.len(),
            ));
        }
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(KanError::InvalidInput(
                "spline coefficients must be finite".into(),
            ));
        }
        Ok(Self { grid, coefficients })
    }

    pub fn zeros(grid: SplineGrid) -> Self {
        let coefficients = vec![0.0; grid.basis_count()];
        Self { grid, coefficients }
    }

    pub fn grid(&self) -> &SplineGrid {
        &self.grid
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn coefficients_mut(&mut self) -> &mut [f64] {
        &mut self.coefficients
    }

    pub fn eval(&self, x: f64) -> f64 {
        let mut local = [0.0f64; 16];
        let n = self.grid.degree + 1;
        let first = self.grid.local_basis(x, &mut local[..n], None);
        local[..n]
            .iter()
            .zip(&self.coefficients[first..first + n])
            .map(|(b, c)| b * c)
            .sum()
    }

    /// Value and derivative with respect to `x`.
    pub fn eval_with_derivative(&self, x: f64) -> (f64, f64) {
        let mut local = [0.0f64; 16];
        let mut dlocal = [0.0f64; 16];
        let n = self.grid.degree + 1;
        let first = self
            .grid
            .local_basis(x, &mut local[..n], Some(&mut dlocal[..n]));
        let coeffs = &self.coefficients[first..first + n];
        let value = local[..n].iter().zip(coeffs).map(|(b, c)| b * c).sum();
        let slope = dlocal[..n].iter().zip(coeffs).map(|(b, c)| b * c).sum();
        (value, slope)
    }
}

/// Result of a least-squares spline fit.
#[derive(Debug, Clone)]
pub struct SplineFit {
    pub function: SplineFunction,
    /// Numerical rank of the collocation matrix.
    pub rank: usize,
    /// True when the collocation matrix was rank deficient and the
    /// minimum-norm solution was returned.
    pub degenerate: bool,
}

/// Least-squares spline coefficients for samples `(xs, ys)` on `grid`.
pub fn fit_coefficients(grid: &SplineGrid, xs: &[f64], ys: &[f64]) -> Result<SplineFit> {
    if xs.len() != ys.len() {
        return Err(KanError::shape("spline fit samples", xs.len(), ys.len()));
    }
    let nb = grid.basis_count();
    if xs.len() < nb {
        return Err(KanError::InvalidArgument(format!(
            "spline fit needs at least {nb} samples, got {}",
            xs.len()
        )));
    }
    if ys.iter().any(|y| !y.is_finite()) {
        return Err(KanError::InvalidInput("non-finite spline fit target".into()));
    }
    let mut design = DMatrix::<f64>::zeros(xs.len(), nb);
    for (row, &x) in xs.iter().enumerate() {
        let basis = grid.basis(x)?;
        for (col, b) in basis.into_iter().enumerate() {
            design[(row, col)] = b;
        }
    }
    let rhs = DVector::from_column_slice(ys);
    let svd = design.svd(true, true);
    let sigma_max = svd.singular_values.max();
    let eps = RANK_TOLERANCE * sigma_max;
    let rank = svd.singular_values.iter().filter(|&&s| s > eps).count();
    let solution = svd
        .solve(&rhs, eps)
        .map_err(|e| KanError::InvalidInput(format!("least-squares solve failed: {e}")))?;
    let degenerate = rank < nb;
    if degenerate {
        log::warn!("spline fit is rank deficient (rank {rank} of {nb}); using least-norm solution");
    }
    Ok(SplineFit {
        function: SplineFunction::new(grid.clone(), solution.iter().copied().collect())?,
        rank,
        degenerate,
    })
}

/// Re-expresses `function` on a finer uniform grid over the same domain,
/// by least squares on `10 * (G_new + k)` uniform samples.
pub fn extend_grid(function: &SplineFunction, new_intervals: usize) -> Result<SplineFunction> {
    let grid = function.grid();
    if new_intervals < grid.intervals() {
        return Err(KanError::InvalidArgument(format!(
            "cannot extend a grid of {} intervals down to {new_intervals}",
            grid.intervals()
        )));
    }
    if new_intervals == grid.intervals() {
        return Ok(function.clone());
    }
    let (lo, hi) = grid.domain();
    let fine = SplineGrid::uniform(new_intervals, grid.degree(), lo, hi)?;
    let xs = linspace(lo, hi, 10 * fine.basis_count());
    let ys: Vec<f64> = xs.iter().map(|&x| function.eval(x)).collect();
    Ok(fit_coefficients(&fine, &xs, &ys)?.function)
}

/// Re-expresses `function` on a uniform grid of the same size and degree
/// spanning `[lo, hi]`, by least squares on `10 * (G + k)` uniform samples
/// of the original (clamped) function.
pub fn rescale_domain(function: &SplineFunction, lo: f64, hi: f64) -> Result<SplineFunction> {
    let grid = function.grid();
    if grid.domain() == (lo, hi) {
        return Ok(function.clone());
    }
    let target = SplineGrid::uniform(grid.intervals(), grid.degree(), lo, hi)?;
    let xs = linspace(lo, hi, 10 * target.basis_count());
    let ys: Vec<f64> = xs.iter().map(|&x| function.eval(x)).collect();
    Ok(fit_coefficients(&target, &xs, &ys)?.function)
}

/// `n` evenly spaced points covering `[lo, hi]` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|i| {
                if i == n - 1 {
                    hi
                } else {
                    lo + (hi - lo) * i as f64 / (n - 1) as f64
                }
            })
            .collect(),
    }
}
