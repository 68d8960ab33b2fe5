//! Kolmogorov-Arnold networks.
//!
//! Every edge carries its own univariate activation
//! `phi(x) = w_base * silu(x) + w_spline * spline(x)`, and every node is the
//! plain sum of its incoming edges. There are no node biases.
//!
//! Flattened parameter order (checkpoints and the optimizer depend on it):
//! layer by layer, edges row-major (`edge[out][in]`), and within one edge the
//! spline coefficients, then `w_base`, then `w_spline`.

use rand::Rng as _;

use crate::dataset::Normalizer;
use crate::error::{KanError, Result};
use crate::rng;
use crate::spline::{extend_grid, rescale_domain, SplineFunction, SplineGrid};

/// Half-width of the uniform distribution for initial spline coefficients.
pub const INIT_COEFF_SCALE: f64 = 0.1;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Residual base function `x * sigmoid(x)`.
pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

pub fn silu_derivative(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

#[derive(Debug, Clone, PartialEq)]
pub struct KanEdge {
    pub spline: SplineFunction,
    pub w_base: f64,
    pub w_spline: f64,
}

impl KanEdge {
    pub fn new(spline: SplineFunction, w_base: f64, w_spline: f64) -> Self {
        Self {
            spline,
            w_base,
            w_spline,
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.w_base * silu(x) + self.w_spline * self.spline.eval(x)
    }

    /// Value and slope of the activation at `x`.
    pub fn eval_with_derivative(&self, x: f64) -> (f64, f64) {
        let (s, ds) = self.spline.eval_with_derivative(x);
        (
            self.w_base * silu(x) + self.w_spline * s,
            self.w_base * silu_derivative(x) + self.w_spline * ds,
        )
    }

    pub fn param_count(&self) -> usize {
        self.spline.coefficients().len() + 2
    }

    pub fn is_zero(&self) -> bool {
        self.w_base == 0.0
            && (self.w_spline == 0.0 || self.spline.coefficients().iter().all(|&c| c == 0.0))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KanLayer {
    in_dim: usize,
    out_dim: usize,
    edges: Vec<KanEdge>,
}

impl KanLayer {
    pub fn new(in_dim: usize, out_dim: usize, edges: Vec<KanEdge>) -> Result<Self> {
        if edges.len() != in_dim * out_dim {
            return Err(KanError::shape("layer edges", in_dim * out_dim, edges.len()));
        }
        Ok(Self {
            in_dim,
            out_dim,
            edges,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn edge(&self, out: usize, inp: usize) -> &KanEdge {
        &self.edges[out * self.in_dim + inp]
    }

    pub fn edge_mut(&mut self, out: usize, inp: usize) -> &mut KanEdge {
        &mut self.edges[out * self.in_dim + inp]
    }

    /// Edges in row-major order.
    pub fn edges(&self) -> &[KanEdge] {
        &self.edges
    }

    pub fn edges_mut(&mut self) -> &mut [KanEdge] {
        &mut self.edges
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        (0..self.out_dim)
            .map(|j| {
                input
                    .iter()
                    .enumerate()
                    .map(|(i, &x)| self.edge(j, i).eval(x))
                    .sum()
            })
            .collect()
    }
}

/// Dense `rows x cols` matrix of per-edge quantities, row = output node.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl EdgeMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCapture {
    /// Node values per layer, starting with the input vector.
    pub nodes: Vec<Vec<f64>>,
    /// Edge outputs per layer, row-major `out x in`.
    pub edges: Vec<EdgeMatrix>,
}

impl ForwardCapture {
    pub fn output(&self) -> &[f64] {
        self.nodes.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KanModel {
    widths: Vec<usize>,
    grid_intervals: usize,
    degree: usize,
    seed: u64,
    normalizer: Option<Normalizer>,
    layers: Vec<KanLayer>,
}

fn validate_shape(widths: &[usize], grid_intervals: usize, degree: usize) -> Result<()> {
    if widths.len() < 2 {
        return Err(KanError::InvalidArgument(format!(
            "a network needs at least an input and an output width, got {widths:?}"
        )));
    }
    if widths.contains(&0) {
        return Err(KanError::InvalidArgument(format!(
            "all widths must be positive, got {widths:?}"
        )));
    }
    if grid_intervals == 0 {
        return Err(KanError::InvalidArgument("grid must be at least 1".into()));
    }
    if degree == 0 || degree > 15 {
        return Err(KanError::InvalidArgument(format!(
            "spline degree k must be in 1..=15, got {degree}"
        )));
    }
    Ok(())
}

impl KanModel {
    /// Seeded initialization: coefficients uniform in `[-0.1, 0.1)`,
    /// `w_base = w_spline = 1`.
    pub fn new(widths: &[usize], grid_intervals: usize, degree: usize, seed: u64) -> Result<Self> {
        validate_shape(widths, grid_intervals, degree)?;
        let grid = SplineGrid::symmetric(grid_intervals, degree)?;
        let mut rng = rng::seeded(seed);
        let layers = widths
            .windows(2)
            .map(|w| {
                let (in_dim, out_dim) = (w[0], w[1]);
                let edges = (0..in_dim * out_dim)
                    .map(|_| {
                        let coeffs = (0..grid.basis_count())
                            .map(|_| rng.random_range(-INIT_COEFF_SCALE..INIT_COEFF_SCALE))
                            .collect();
                        Ok(KanEdge::new(SplineFunction::new(grid.clone(), coeffs)?, 1.0, 1.0))
                    })
                    .collect::<Result<Vec<_>>>()?;
                KanLayer::new(in_dim, out_dim, edges)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            widths: widths.to_vec(),
            grid_intervals,
            degree,
            seed,
            normalizer: None,
            layers,
        })
    }

    /// Assembles a model from explicit layers. Every edge must use the same
    /// grid size and degree.
    pub fn from_layers(
        layers: Vec<KanLayer>,
        grid_intervals: usize,
        degree: usize,
        seed: u64,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(KanError::InvalidArgument("model has no layers".into()));
        }
        let mut widths = vec![layers[0].in_dim];
        for layer in &layers {
            if layer.in_dim != *widths.last().unwrap() {
                return Err(KanError::shape(
                    "layer chaining",
                    *widths.last().unwrap(),
                    layer.in_dim,
                ));
            }
            for edge in &layer.edges {
                let g = edge.spline.grid();
                if g.intervals() != grid_intervals || g.degree() != degree {
                    return Err(KanError::InvalidArgument(format!(
                        "edge grid (G={}, k={}) differs from model (G={grid_intervals}, k={degree})",
                        g.intervals(),
                        g.degree()
                    )));
                }
            }
            widths.push(layer.out_dim);
        }
        validate_shape(&widths, grid_intervals, degree)?;
        Ok(Self {
            widths,
            grid_intervals,
            degree,
            seed,
            normalizer: None,
            layers,
        })
    }

    pub fn with_normalizer(mut self, normalizer: Normalizer) -> Self {
        self.normalizer = Some(normalizer);
        self
    }

    pub fn set_normalizer(&mut self, normalizer: Option<Normalizer>) {
        self.normalizer = normalizer;
    }

    pub fn normalizer(&self) -> Option<&Normalizer> {
        self.normalizer.as_ref()
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn grid_intervals(&self) -> usize {
        self.grid_intervals
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn layers(&self) -> &[KanLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [KanLayer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn edge_count(&self) -> usize {
        self.layers.iter().map(|l| l.edges.len()).sum()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .flat_map(|l| &l.edges)
            .map(KanEdge::param_count)
            .sum()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(KanError::shape("network input", self.input_dim(), x.len()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(KanError::InvalidInput("non-finite network input".into()));
        }
        Ok(())
    }

    /// Evaluates the network on an input already mapped into the spline domain.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut current = x.to_vec();
        for layer in &self.layers {
            current = layer.forward(&current);
        }
        Ok(current)
    }

    pub fn forward_capture(&self, x: &[f64]) -> Result<ForwardCapture> {
        self.check_input(x)?;
        let mut nodes = vec![x.to_vec()];
        let mut edges = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let input = nodes.last().unwrap();
            let mut out = EdgeMatrix::zeros(layer.out_dim, layer.in_dim);
            let mut next = vec![0.0; layer.out_dim];
            for j in 0..layer.out_dim {
                for (i, &xi) in input.iter().enumerate() {
                    let v = layer.edge(j, i).eval(xi);
                    out.data[j * layer.in_dim + i] = v;
                    next[j] += v;
                }
            }
            edges.push(out);
            nodes.push(next);
        }
        Ok(ForwardCapture { nodes, edges })
    }

    /// Maps a raw feature vector through the attached normalizer, then
    /// evaluates the network. Without a normalizer the input is used as is.
    pub fn predict_raw(&self, raw: &[f64]) -> Result<Vec<f64>> {
        match &self.normalizer {
            Some(n) => self.forward(&n.to_symmetric(raw)?),
            None => self.forward(raw),
        }
    }

    pub fn flatten_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for edge in self.layers.iter().flat_map(|l| &l.edges) {
            out.extend_from_slice(edge.spline.coefficients());
            out.push(edge.w_base);
            out.push(edge.w_spline);
        }
        out
    }

    /// Copy of the model with parameters replaced by `params`.
    pub fn unflatten_params(&self, params: &[f64]) -> Result<Self> {
        let mut model = self.clone();
        model.assign_params(params)?;
        Ok(model)
    }

    pub fn assign_params(&mut self, params: &[f64]) -> Result<()> {
        let expected = self.param_count();
        if params.len() != expected {
            return Err(KanError::shape("parameter vector", expected, params.len()));
        }
        let mut offset = 0;
        for edge in self.layers.iter_mut().flat_map(|l| l.edges.iter_mut()) {
            let nb = edge.spline.coefficients().len();
            edge.spline
                .coefficients_mut()
                .copy_from_slice(&params[offset..offset + nb]);
            edge.w_base = params[offset + nb];
            edge.w_spline = params[offset + nb + 1];
            offset += nb + 2;
        }
        Ok(())
    }

    /// Refines every edge onto a grid with `new_intervals` intervals over the
    /// same domain.
    pub fn extend_grids(&mut self, new_intervals: usize) -> Result<()> {
        if new_intervals < self.grid_intervals {
            return Err(KanError::InvalidArgument(format!(
                "cannot extend grid from {} to {new_intervals} intervals",
                self.grid_intervals
            )));
        }
        for edge in self.layers.iter_mut().flat_map(|l| l.edges.iter_mut()) {
            edge.spline = extend_grid(&edge.spline, new_intervals)?;
        }
        self.grid_intervals = new_intervals;
        Ok(())
    }

    /// Resizes the spline domain of every edge fed by a hidden node to the
    /// range that node takes over `xs`, widened by `margin` times that range
    /// on each side. Knots stay uniform and each spline is refit to its
    /// previous values. Input-layer edges keep their domain.
    pub fn update_grids_from_samples(&mut self, xs: &[Vec<f64>], margin: f64) -> Result<()> {
        if xs.is_empty() || self.layers.len() < 2 {
            return Ok(());
        }
        let captures = xs
            .iter()
            .map(|x| self.forward_capture(x))
            .collect::<Result<Vec<_>>>()?;
        for l in 1..self.layers.len() {
            for i in 0..self.widths[l] {
                let (lo, hi) = captures.iter().map(|c| c.nodes[l][i]).fold(
                    (f64::INFINITY, f64::NEG_INFINITY),
                    |(lo, hi), v| (lo.min(v), hi.max(v)),
                );
                let span = hi - lo;
                let (lo, hi) = if span > 1e-9 * (1.0 + lo.abs().max(hi.abs())) {
                    (lo - margin * span, hi + margin * span)
                } else {
                    (lo - 1.0, hi + 1.0)
                };
                if !(lo.is_finite() && hi.is_finite()) {
                    return Err(KanError::InvalidInput(
                        "non-finite hidden activations during grid update".into(),
                    ));
                }
                let layer = &mut self.layers[l];
                for j in 0..layer.out_dim {
                    let edge = layer.edge_mut(j, i);
                    edge.spline = rescale_domain(&edge.spline, lo, hi)?;
                }
            }
        }
        Ok(())
    }

    /// Mean absolute edge output over the rows of `xs`, one matrix per layer.
    pub fn activation_stats(&self, xs: &[Vec<f64>]) -> Result<Vec<EdgeMatrix>> {
        if xs.is_empty() {
            return Err(KanError::InvalidInput(
                "activation statistics need at least one sample".into(),
            ));
        }
        let mut stats: Vec<EdgeMatrix> = self
            .layers
            .iter()
            .map(|l| EdgeMatrix::zeros(l.out_dim, l.in_dim))
            .collect();
        for x in xs {
            let capture = self.forward_capture(x)?;
            for (acc, edges) in stats.iter_mut().zip(&capture.edges) {
                for (a, v) in acc.data.iter_mut().zip(&edges.data) {
                    *a += v.abs();
                }
            }
        }
        let n = xs.len() as f64;
        for acc in &mut stats {
            acc.data.iter_mut().for_each(|a| *a /= n);
        }
        Ok(stats)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_model(widths: &[usize], g: usize, k: usize) -> KanModel {
        let m = KanModel::new(widths, g, k, 0).unwrap();
        m.unflatten_params(&vec![0.0; m.param_count()]).unwrap()
    }

    #[test]
    fn pressure_architecture_shape() {
        let m = KanModel::new(&[5, 2, 1], 2, 3, 0).unwrap();
        assert_eq!(m.layers().len(), 2);
        assert_eq!(m.layers()[0].edges().len(), 10);
        assert_eq!(m.layers()[1].edges().len(), 2);
        assert_eq!(m.param_count(), 12 * 7);
    }

    #[test]
    fn flow_architecture_shape() {
        let m = KanModel::new(&[5, 6, 1], 4, 4, 0).unwrap();
        assert_eq!(m.layers()[0].edges().len(), 30);
        assert_eq!(m.layers()[1].edges().len(), 6);
        assert_eq!(m.layers()[0].edge(0, 0).spline.grid().basis_count(), 8);
    }

    #[test]
    fn param_count_matches_enumeration() {
        let m = KanModel::new(&[5, 2, 1], 2, 3, 0).unwrap();
        let mut enumerated = 0;
        for layer in m.layers() {
            for j in 0..layer.out_dim() {
                for i in 0..layer.in_dim() {
                    enumerated += layer.edge(j, i).spline.coefficients().len() + 2;
                }
            }
        }
        assert_eq!(enumerated, 84);
        assert_eq!(m.flatten_params().len(), 84);
    }

    #[test]
    fn construction_is_deterministic() {
        let a = KanModel::new(&[5, 6, 1], 4, 4, 0).unwrap();
        let b = KanModel::new(&[5, 6, 1], 4, 4, 0).unwrap();
        assert_eq!(a, b);
        let c = KanModel::new(&[5, 6, 1], 4, 4, 1).unwrap();
        assert_ne!(a.flatten_params(), c.flatten_params());
        let p = a.flatten_params();
        assert!(p.iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn invalid_shapes_rejected() {
        assert!(KanModel::new(&[5], 2, 3, 0).is_err());
        assert!(KanModel::new(&[5, 0, 1], 2, 3, 0).is_err());
        assert!(KanModel::new(&[5, 2, 1], 0, 3, 0).is_err());
        assert!(KanModel::new(&[5, 2, 1], 2, 0, 0).is_err());
    }

    #[test]
    fn edge_zero_function_and_base_origin() {
        let grid = SplineGrid::symmetric(2, 3).unwrap();
        let zero = KanEdge::new(SplineFunction::zeros(grid.clone()), 0.0, 1.0);
        for x in [-3.0, -0.4, 0.0, 0.7, 2.0] {
            assert_eq!(zero.eval(x), 0.0);
        }
        let base = KanEdge::new(SplineFunction::zeros(grid), 1.0, 1.0);
        assert_eq!(base.eval(0.0), 0.0);
    }

    #[test]
    fn edge_linear_spline_by_hand() {
        // Hat functions on [0, 1] with G = 2: at x = 0.5 only the middle one is active,
        // at x = 0.25 the first two share weight 1/2 each.
        let grid = SplineGrid::uniform(2, 1, 0.0, 1.0).unwrap();
        let spline = SplineFunction::new(grid, vec![1.0, 3.0, -2.0]).unwrap();
        let edge = KanEdge::new(spline, 0.0, 2.0);
        assert!((edge.eval(0.5) - 2.0 * 3.0).abs() < 1e-14);
        assert!((edge.eval(0.25) - 2.0 * (0.5 * 1.0 + 0.5 * 3.0)).abs() < 1e-14);
    }

    #[test]
    fn zero_network_outputs_zero() {
        let m = zero_model(&[5, 2, 1], 2, 3);
        let y = m.forward(&[0.1, -0.3, 0.9, 0.0, -1.0]).unwrap();
        assert_eq!(y, vec![0.0]);
    }

    #[test]
    fn two_edge_composition_by_hand() {
        let grid = SplineGrid::uniform(2, 1, -1.0, 1.0).unwrap();
        let inner = KanEdge::new(
            SplineFunction::new(grid.clone(), vec![0.0, 0.5, 1.0]).unwrap(),
            0.5,
            1.0,
        );
        let outer = KanEdge::new(
            SplineFunction::new(grid, vec![2.0, 0.0, -1.0]).unwrap(),
            -1.0,
            3.0,
        );
        let model = KanModel::from_layers(
            vec![
                KanLayer::new(1, 1, vec![inner]).unwrap(),
                KanLayer::new(1, 1, vec![outer]).unwrap(),
            ],
            2,
            1,
            0,
        )
        .unwrap();
        // x = 0.4: hat spline on [-1, 0, 1] -> 0.6*0.5 + 0.4*1 = 0.7.
        let x: f64 = 0.4;
        let h = 0.5 * x / (1.0 + (-x).exp()) + 0.7;
        // h > 0: outer spline = (1-h)*0 + h*(-1).
        let expected = -h / (1.0 + (-h).exp()) + 3.0 * (-h);
        let y = model.forward(&[x]).unwrap()[0];
        assert!((y - expected).abs() < 1e-14, "{y} vs {expected}");
    }

    #[test]
    fn forward_rejects_wrong_dimension() {
        let m = KanModel::new(&[5, 2, 1], 2, 3, 0).unwrap();
        assert!(matches!(m.forward(&[0.0; 4]), Err(KanError::Shape { .. })));
    }

    #[test]
    fn capture_has_one_entry_per_edge() {
        let m = KanModel::new(&[5, 6, 1], 4, 4, 0).unwrap();
        let c = m.forward_capture(&[0.1, 0.2, 0.3, 0.4, 0.5]).unwrap();
        assert_eq!(c.edges[0].data.len(), 30);
        assert_eq!(c.edges[1].data.len(), 6);
        let direct = m.forward(&[0.1, 0.2, 0.3, 0.4, 0.5]).unwrap();
        assert_eq!(c.output(), direct.as_slice());
    }

    #[test]
    fn unflatten_rejects_bad_length() {
        let m = KanModel::new(&[2, 1], 2, 3, 0).unwrap();
        assert!(m.unflatten_params(&[0.0; 3]).is_err());
    }

    #[test]
    fn stats_by_hand() {
        let grid = SplineGrid::uniform(2, 1, -1.0, 1.0).unwrap();
        let edge = KanEdge::new(
            SplineFunction::new(grid, vec![1.0, -1.0, 2.0]).unwrap(),
            0.0,
            1.0,
        );
        let model =
            KanModel::from_layers(vec![KanLayer::new(1, 1, vec![edge]).unwrap()], 2, 1, 0).unwrap();
        // x=-0.5 -> 0, x=0 -> -1, x=0.75 -> 0.25*(-1)+0.75*2 = 1.25
        let xs = vec![vec![-0.5], vec![0.0], vec![0.75]];
        let stats = model.activation_stats(&xs).unwrap();
        assert!((stats[0].get(0, 0) - (0.0 + 1.0 + 1.25) / 3.0).abs() < 1e-14);
        let single = model.activation_stats(&[vec![0.0]]).unwrap();
        assert_eq!(single[0].get(0, 0), 1.0);
        assert!(model.activation_stats(&[]).is_err());
    }
}
