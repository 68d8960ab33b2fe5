//! Symbolic snapping of learned edges and the closed-form pump formulas.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{KanError, Result};
use crate::kan::{KanEdge, KanModel};
use crate::spline::linspace;

/// Candidate univariate functions, listed in complexity order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Primitive {
    Identity,
    Square,
    Cube,
    Quartic,
    Tanh,
    Sin,
    Exp,
    /// `exp(-u^2)`
    NegExpDecay,
    /// `ln(u + 1)`, undefined for `u <= -1`.
    LogShifted,
}

impl Primitive {
    pub const ALL: [Primitive; 9] = [
        Primitive::Identity,
        Primitive::Square,
        Primitive::Cube,
        Primitive::Quartic,
        Primitive::Tanh,
        Primitive::Sin,
        Primitive::Exp,
        Primitive::NegExpDecay,
        Primitive::LogShifted,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Primitive::Identity => "identity",
            Primitive::Square => "square",
            Primitive::Cube => "cube",
            Primitive::Quartic => "quartic",
            Primitive::Tanh => "tanh",
            Primitive::Sin => "sin",
            Primitive::Exp => "exp",
            Primitive::NegExpDecay => "neg_exp_decay",
            Primitive::LogShifted => "log_shifted",
        }
    }

    /// Position in the tie-break order (lower is simpler).
    pub fn complexity(self) -> usize {
        self as usize
    }

    /// NaN outside the admissible domain.
    pub fn apply(self, u: f64) -> f64 {
        match self {
            Primitive::Identity => u,
            Primitive::Square => u * u,
            Primitive::Cube => u * u * u,
            Primitive::Quartic => (u * u) * (u * u),
            Primitive::Tanh => u.tanh(),
            Primitive::Sin => u.sin(),
            Primitive::Exp => u.exp(),
            Primitive::NegExpDecay => (-u * u).exp(),
            Primitive::LogShifted => {
                if u > -1.0 {
                    u.ln_1p()
                } else {
                    f64::NAN
                }
            }
        }
    }

    fn parity(self) -> Parity {
        match self {
            Primitive::Identity | Primitive::Cube | Primitive::Tanh | Primitive::Sin => Parity::Odd,
            Primitive::Square | Primitive::Quartic | Primitive::NegExpDecay => Parity::Even,
            Primitive::Exp | Primitive::LogShifted => Parity::None,
        }
    }

    fn infix(self, arg: &str) -> String {
        match self {
            Primitive::Identity => format!("({arg})"),
            Primitive::Square => format!("({arg})^2"),
            Primitive::Cube => format!("({arg})^3"),
            Primitive::Quartic => format!("({arg})^4"),
            Primitive::Tanh => format!("tanh({arg})"),
            Primitive::Sin => format!("sin({arg})"),
            Primitive::Exp => format!("exp({arg})"),
            Primitive::NegExpDecay => format!("exp(-({arg})^2)"),
            Primitive::LogShifted => format!("log(1 + {arg})"),
        }
    }
}

impl fmt::Display for Primitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Primitive {
    type Err = KanError;

    fn from_str(s: &str) -> Result<Self> {
        Primitive::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| KanError::InvalidArgument(format!("unknown primitive `{s}`")))
    }
}

#[derive(Clone, Copy)]
enum Parity {
    Odd,
    Even,
    None,
}

/// `x -> c * f(a * x + b) + d`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineWrap {
    pub primitive: Primitive,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl AffineWrap {
    pub fn constant(primitive: Primitive, value: f64) -> Self {
        Self {
            primitive,
            a: 1.0,
            b: 0.0,
            c: 0.0,
            d: value,
        }
    }

    pub fn is_constant(&self) -> bool {
        self.c == 0.0
    }

    pub fn eval(&self, x: f64) -> f64 {
        if self.is_constant() {
            return self.d;
        }
        self.c * self.primitive.apply(self.a * x + self.b) + self.d
    }

    /// Puts the fit in a canonical form: `a > 0` for odd and even
    /// primitives, and `a = 1, b = 0` for the identity.
    fn canonical(mut self) -> Self {
        if self.is_constant() {
            return AffineWrap::constant(self.primitive, self.d);
        }
        if let Primitive::Identity = self.primitive {
            return AffineWrap {
                primitive: Primitive::Identity,
                a: 1.0,
                b: 0.0,
                c: self.c * self.a,
                d: self.c * self.b + self.d,
            };
        }
        if self.a < 0.0 {
            match self.primitive.parity() {
                Parity::Odd => {
                    self.a = -self.a;
                    self.b = -self.b;
                    self.c = -self.c;
                }
                Parity::Even => {
                    self.a = -self.a;
                    self.b = -self.b;
                }
                Parity::None => {}
            }
        }
        self
    }
}

/// Grid sizes for the coarse search in [`fit_affine`].
pub const FIT_A_STEPS: usize = 41;
pub const FIT_B_STEPS: usize = 41;
pub const FIT_REFINE_ROUNDS: usize = 3;
const FIT_MAX_ROUNDS: usize = 200;
const A_RANGE: (f64, f64) = (0.1, 10.0);
const B_RANGE: (f64, f64) = (-5.0, 5.0);

struct Fitter<'a> {
    primitive: Primitive,
    ts: Vec<f64>,
    ys: &'a [f64],
    y_mean: f64,
    ss_tot: f64,
    buf: Vec<f64>,
}

impl Fitter<'_> {
    /// Best `(c, d, sse)` for fixed `(a, b)`, or `None` when `f` is undefined
    /// somewhere on the sample.
    fn solve(&mut self, a: f64, b: f64) -> Option<(f64, f64, f64)> {
        let n = self.ts.len() as f64;
        self.buf.clear();
        for &t in &self.ts {
            let u = self.primitive.apply(a * t + b);
            if !u.is_finite() {
                return None;
            }
            self.buf.push(u);
        }
        let u_mean = self.buf.iter().sum::<f64>() / n;
        let mut suu = 0.0;
        let mut suy = 0.0;
        for (u, y) in self.buf.iter().zip(self.ys) {
            suu += (u - u_mean) * (u - u_mean);
            suy += (u - u_mean) * (y - self.y_mean);
        }
        let (c, d) = if suu > f64::MIN_POSITIVE && suu > 1e-24 * u_mean * u_mean * n {
            let c = suy / suu;
            (c, self.y_mean - c * u_mean)
        } else {
            (0.0, self.y_mean)
        };
        let sse: f64 = self
            .buf
            .iter()
            .zip(self.ys)
            .map(|(u, y)| {
                let r = y - (c * u + d);
                r * r
            })
            .sum();
        sse.is_finite().then_some((c, d, sse))
    }

    fn sse(&mut self, a: f64, b: f64) -> f64 {
        self.solve(a, b).map_or(f64::INFINITY, |s| s.2)
    }
}

/// Golden-section minimization of `f` over `[lo, hi]`.
fn golden_section(mut f: impl FnMut(f64) -> f64, mut lo: f64, mut hi: f64, iters: usize) -> (f64, f64) {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - r * (hi - lo);
    let mut x2 = lo + r * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..iters {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - r * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + r * (hi - lo);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Fits `y ~ c * f(a * x + b) + d` and returns the fit with its coefficient
/// of determination.
///
/// The search runs in the coordinate `t` that maps the observed `x` range
/// onto `[-1, 1]`; the returned `(a, b)` are expressed in terms of `x`.
pub fn fit_affine(primitive: Primitive, xs: &[f64], ys: &[f64]) -> Result<(AffineWrap, f64)> {
    if xs.len() != ys.len() {
        return Err(KanError::shape("fit_affine ys", xs.len(), ys.len()));
    }
    if xs.len() < 8 {
        return Err(KanError::InvalidInput(format!(
            "fit_affine needs at least 8 samples, got {}",
            xs.len()
        )));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(KanError::InvalidInput("non-finite sample in fit_affine".into()));
    }
    let n = ys.len() as f64;
    let y_mean = ys.iter().sum::<f64>() / n;
    let ss_tot: f64 = ys.iter().map(|y| (y - y_mean) * (y - y_mean)).sum();
    if ys.iter().all(|&y| y == ys[0]) || ss_tot == 0.0 {
        return Ok((AffineWrap::constant(primitive, ys[0]), 1.0));
    }

    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (center, half) = if hi > lo {
        ((hi + lo) / 2.0, (hi - lo) / 2.0)
    } else {
        (lo, 1.0)
    };
    let mut fitter = Fitter {
        primitive,
        ts: xs.iter().map(|x| (x - center) / half).collect(),
        ys,
        y_mean,
        ss_tot,
        buf: Vec::with_capacity(xs.len()),
    };

    let log_lo = A_RANGE.0.ln();
    let log_hi = A_RANGE.1.ln();
    let log_step = (log_hi - log_lo) / (FIT_A_STEPS - 1) as f64;
    let b_step = (B_RANGE.1 - B_RANGE.0) / (FIT_B_STEPS - 1) as f64;

    // Coarse search. `a` is stored as (sign, log|a|).
    let mut best = (1.0, log_lo, 0.0, f64::INFINITY);
    for sign in [1.0, -1.0] {
        for i in 0..FIT_A_STEPS {
            let log_a = log_lo + i as f64 * log_step;
            let a = sign * log_a.exp();
            for j in 0..FIT_B_STEPS {
                let b = B_RANGE.0 + j as f64 * b_step;
                let sse = fitter.sse(a, b);
                if sse < best.3 {
                    best = (sign, log_a, b, sse);
                }
            }
        }
    }
    let (sign, mut log_a, mut b, mut sse) = best;
    if !sse.is_finite() {
        // The primitive is undefined somewhere on every grid point.
        return Ok((AffineWrap::constant(primitive, y_mean), f64::NEG_INFINITY));
    }

    // Coordinate descent, one grid step either side of the incumbent and
    // never leaving the search box. The fixed rounds are followed by extra
    // ones while they still pay off.
    for round in 0..FIT_MAX_ROUNDS {
        let before = sse;
        let (la, s) = golden_section(
            |la| fitter.sse(sign * la.exp(), b),
            (log_a - log_step).max(log_lo),
            (log_a + log_step).min(log_hi),
            60,
        );
        if s < sse {
            log_a = la;
            sse = s;
        }
        let a = sign * log_a.exp();
        let (bb, s) = golden_section(
            |bb| fitter.sse(a, bb),
            (b - b_step).max(B_RANGE.0),
            (b + b_step).min(B_RANGE.1),
            60,
        );
        if s < sse {
            b = bb;
            sse = s;
        }
        if round + 1 >= FIT_REFINE_ROUNDS && before - sse <= 1e-12 * before {
            break;
        }
    }

    let a = sign * log_a.exp();
    let (c, d, sse) = fitter.solve(a, b).expect("incumbent is feasible");
    let r2 = 1.0 - sse / fitter.ss_tot;
    // Undo the t-coordinate: a*t + b = (a/half)*x + (b - a*center/half).
    let wrap = AffineWrap {
        primitive,
        a: a / half,
        b: b - a * center / half,
        c,
        d,
    }
    .canonical();
    Ok((wrap, r2))
}

/// Number of points at which an edge is sampled for snapping.
pub const SNAP_SAMPLES: usize = 201;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedFit {
    pub wrap: AffineWrap,
    pub r2: f64,
}

/// Fits every primitive to `edge` over the observed range of `x_column`.
/// The ranking is sorted by `r2` descending, ties broken by complexity.
pub fn snap_edge(edge: &KanEdge, x_column: &[f64]) -> Result<(AffineWrap, Vec<RankedFit>)> {
    if x_column.is_empty() {
        return Err(KanError::InvalidInput("snap_edge needs at least one sample".into()));
    }
    let lo = x_column.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x_column.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() || !hi.is_finite() {
        return Err(KanError::InvalidInput("non-finite edge input".into()));
    }
    let xs = linspace(lo, hi, SNAP_SAMPLES);
    let ys: Vec<f64> = xs.iter().map(|&x| edge.eval(x)).collect();
    let mut ranked = Primitive::ALL
        .into_iter()
        .map(|p| fit_affine(p, &xs, &ys).map(|(wrap, r2)| RankedFit { wrap, r2 }))
        .collect::<Result<Vec<_>>>()?;
    ranked.sort_by(|x, y| {
        y.r2.total_cmp(&x.r2)
            .then(x.wrap.primitive.complexity().cmp(&y.wrap.primitive.complexity()))
    });
    Ok((ranked[0].wrap, ranked))
}

/// Expression tree over inputs `x1..xn`.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    /// Zero-based input index.
    Input(usize),
    Sum(Vec<Expr>),
    Wrap(AffineWrap, Box<Expr>),
}

impl Expr {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Expr::Const(v) => *v,
            Expr::Input(i) => x[*i],
            Expr::Sum(terms) => terms.iter().map(|t| t.eval(x)).sum(),
            Expr::Wrap(w, arg) => w.eval(arg.eval(x)),
        }
    }

    /// Folds constant wraps and merges constant terms of sums.
    fn simplified(self) -> Expr {
        match self {
            Expr::Wrap(w, arg) => {
                if w.is_constant() {
                    return Expr::Const(w.d);
                }
                match arg.simplified() {
                    Expr::Const(v) => Expr::Const(w.eval(v)),
                    arg => Expr::Wrap(w, Box::new(arg)),
                }
            }
            Expr::Sum(terms) => {
                let mut constant = 0.0;
                let mut rest = Vec::new();
                for t in terms.into_iter().map(Expr::simplified) {
                    match t {
                        Expr::Const(v) => constant += v,
                        other => rest.push(other),
                    }
                }
                if constant != 0.0 || rest.is_empty() {
                    rest.push(Expr::Const(constant));
                }
                if rest.len() == 1 {
                    rest.pop().unwrap()
                } else {
                    Expr::Sum(rest)
                }
            }
            other => other,
        }
    }

    /// Rewrites input references `x_i` as `scale * x_i + shift`.
    fn substitute_inputs(self, scale: f64, shift: f64) -> Expr {
        match self {
            Expr::Wrap(w, arg) => match *arg {
                Expr::Input(i) => Expr::Wrap(
                    AffineWrap {
                        a: w.a * scale,
                        b: w.a * shift + w.b,
                        ..w
                    },
                    Box::new(Expr::Input(i)),
                ),
                arg => Expr::Wrap(w, Box::new(arg.substitute_inputs(scale, shift))),
            },
            Expr::Sum(terms) => {
                Expr::Sum(terms.into_iter().map(|t| t.substitute_inputs(scale, shift)).collect())
            }
            Expr::Input(i) => Expr::Wrap(
                AffineWrap {
                    primitive: Primitive::Identity,
                    a: 1.0,
                    b: 0.0,
                    c: scale,
                    d: shift,
                },
                Box::new(Expr::Input(i)),
            ),
            c @ Expr::Const(_) => c,
        }
    }

    pub fn to_infix(&self) -> String {
        match self {
            Expr::Const(v) => fmt_num(*v),
            Expr::Input(i) => format!("x{}", i + 1),
            Expr::Sum(terms) => {
                let mut out = String::new();
                for (k, t) in terms.iter().enumerate() {
                    let s = t.to_infix();
                    if k == 0 {
                        out.push_str(&s);
                    } else if let Some(rest) = s.strip_prefix('-') {
                        out.push_str(" - ");
                        out.push_str(rest);
                    } else {
                        out.push_str(" + ");
                        out.push_str(&s);
                    }
                }
                out
            }
            Expr::Wrap(w, arg) => {
                let inner = arg.to_infix();
                let inner = if matches!(**arg, Expr::Sum(_)) {
                    format!("({inner})")
                } else {
                    inner
                };
                let lin = match (w.a, w.b) {
                    (1.0, 0.0) => inner,
                    (a, 0.0) => format!("{}*{inner}", fmt_num(a)),
                    (1.0, b) => format!("{inner} {}", fmt_signed(b)),
                    (a, b) => format!("{}*{inner} {}", fmt_num(a), fmt_signed(b)),
                };
                let body = w.primitive.infix(&lin);
                let scaled = if w.c == 1.0 {
                    body
                } else {
                    format!("{}*{body}", fmt_num(w.c))
                };
                if w.d == 0.0 {
                    scaled
                } else {
                    format!("{scaled} {}", fmt_signed(w.d))
                }
            }
        }
    }

    /// JSON tree of `{op, children, params}` nodes.
    pub fn to_json(&self) -> Value {
        match self {
            Expr::Const(v) => json!({"op": "const", "children": [], "params": [v]}),
            Expr::Input(i) => json!({"op": "input", "children": [], "params": [i + 1]}),
            Expr::Sum(terms) => json!({
                "op": "sum",
                "children": terms.iter().map(Expr::to_json).collect::<Vec<_>>(),
                "params": [],
            }),
            Expr::Wrap(w, arg) => json!({
                "op": w.primitive.name(),
                "children": [arg.to_json()],
                "params": [w.a, w.b, w.c, w.d],
            }),
        }
    }
}

fn fmt_num(v: f64) -> String {
    format!("{}", Sig(v))
}

fn fmt_signed(v: f64) -> String {
    if v < 0.0 {
        format!("- {}", Sig(-v))
    } else {
        format!("+ {}", Sig(v))
    }
}

/// Six significant digits, trailing zeros trimmed.
struct Sig(f64);

impl fmt::Display for Sig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = self.0;
        if v == 0.0 {
            return f.write_str("0");
        }
        let mag = v.abs().log10().floor() as i32;
        if !(-4..6).contains(&mag) {
            return write!(f, "{v:.5e}");
        }
        let decimals = (5 - mag).max(0) as usize;
        let s = format!("{v:.decimals$}");
        let s = if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        };
        f.write_str(&s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeSnap {
    /// Edge layer index (0 = input layer).
    pub layer: usize,
    pub input: usize,
    pub output: usize,
    pub best: AffineWrap,
    pub r2: f64,
    pub ranked: Vec<RankedFit>,
}

/// A whole-network formula: one expression per output.
#[derive(Debug, Clone)]
pub struct SymbolicFormula {
    pub outputs: Vec<Expr>,
    pub edges: Vec<EdgeSnap>,
    /// Mean squared difference between network and formula over the
    /// extraction inputs.
    pub fidelity_mse: f64,
    /// Set when some edge's best fit has `r2 < LOW_FIDELITY_R2`.
    pub low_fidelity: bool,
}

pub const LOW_FIDELITY_R2: f64 = 0.5;

impl SymbolicFormula {
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.outputs.iter().map(|e| e.eval(x)).collect()
    }

    pub fn to_infix(&self) -> String {
        self.outputs
            .iter()
            .map(Expr::to_infix)
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// The same formula expressed in unit inputs `u = (x + 1) / 2`, the
    /// coordinates of [`eval_pump_formula`].
    pub fn in_unit_inputs(&self) -> SymbolicFormula {
        SymbolicFormula {
            outputs: self
                .outputs
                .iter()
                .map(|e| e.clone().substitute_inputs(2.0, -1.0).simplified())
                .collect(),
            ..self.clone()
        }
    }

    pub fn to_json(&self) -> Value {
        json!({
            "infix": self.outputs.iter().map(Expr::to_infix).collect::<Vec<_>>(),
            "tree": self.outputs.iter().map(Expr::to_json).collect::<Vec<_>>(),
            "fidelity_mse": self.fidelity_mse,
            "low_fidelity": self.low_fidelity,
            "edges": self.edges,
        })
    }
}

/// Snaps every edge of `model` and composes the snapped edges into a formula
/// over the model's input coordinates.
pub fn extract_formula(model: &KanModel, xs: &[Vec<f64>]) -> Result<SymbolicFormula> {
    if xs.is_empty() {
        return Err(KanError::InvalidInput("extract_formula needs samples".into()));
    }
    // Values reaching every node layer, per sample.
    let captures = xs
        .iter()
        .map(|x| model.forward_capture(x))
        .collect::<Result<Vec<_>>>()?;

    let mut edges = Vec::with_capacity(model.edge_count());
    let mut node_exprs: Vec<Expr> = (0..model.input_dim()).map(Expr::Input).collect();
    for (l, layer) in model.layers().iter().enumerate() {
        let mut next = Vec::with_capacity(layer.out_dim());
        for j in 0..layer.out_dim() {
            let mut terms = Vec::with_capacity(layer.in_dim());
            for i in 0..layer.in_dim() {
                let column: Vec<f64> = captures.iter().map(|c| c.nodes[l][i]).collect();
                let (best, ranked) = snap_edge(layer.edge(j, i), &column)?;
                edges.push(EdgeSnap {
                    layer: l,
                    input: i,
                    output: j,
                    best,
                    r2: ranked[0].r2,
                    ranked,
                });
                terms.push(Expr::Wrap(best, Box::new(node_exprs[i].clone())));
            }
            next.push(Expr::Sum(terms));
        }
        node_exprs = next;
    }
    let outputs: Vec<Expr> = node_exprs.into_iter().map(Expr::simplified).collect();

    let mut total = 0.0;
    let mut count = 0usize;
    for (x, cap) in xs.iter().zip(&captures) {
        for (e, y) in outputs.iter().zip(cap.output()) {
            let diff = e.eval(x) - y;
            total += diff * diff;
            count += 1;
        }
    }
    let fidelity_mse = total / count as f64;
    let low_fidelity = edges.iter().any(|e| e.r2 < LOW_FIDELITY_R2);
    if low_fidelity {
        log::warn!("some edges snapped with r2 below {LOW_FIDELITY_R2}");
    }
    Ok(SymbolicFormula {
        outputs,
        edges,
        fidelity_mse,
        low_fidelity,
    })
}

/// The two closed-form relations between normalized pump features and
/// performance extracted from trained networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PumpFormula {
    /// Maximum pressure in Pa.
    Pressure,
    /// Maximum flow rate in ml/min.
    FlowRate,
}

/// Evaluates the pressure (`Y1`) or flow-rate (`Y2`) formula at a feature
/// vector normalized onto `[0, 1]^5`. Inputs outside the unit box are
/// evaluated anyway, with a warning.
pub fn eval_pump_formula(which: PumpFormula, x: &[f64]) -> Result<f64> {
    if x.len() != 5 {
        return Err(KanError::shape("formula input", 5, x.len()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(KanError::InvalidInput("non-finite formula input".into()));
    }
    if x.iter().any(|v| !(0.0..=1.0).contains(v)) {
        log::warn!("formula input {x:?} lies outside the unit box");
    }
    let (x1, x2, x3, x4, x5) = (x[0], x[1], x[2], x[3], x[4]);
    Ok(match which {
        PumpFormula::Pressure => {
            let inner = -0.01 * (1.0 - 0.8 * x2).powi(3) + 4.3 * (1.0 - 0.75 * x4).powi(4)
                - 0.06 * (3.03 * x1).exp()
                + 3.18 * (0.18 * x3 - 0.55).tanh()
                + 2.43 * (-2.57 * x5).exp();
            12.46 * inner.exp() - 1.87
        }
        PumpFormula::FlowRate => {
            let inner = 22.4 * (0.9 - x4).powi(4) - 3.33 * (6.2 * x3 - 2.35).sin() + 0.08
                - 2.11 * (-1.72 * x5).exp()
                + 2.13 * (-0.24 * x2).exp()
                - 0.89 * (-1.4 * x1).exp();
            1.7 - 1.59 * inner.tanh()
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kan::KanLayer;
    use crate::spline::{SplineFunction, SplineGrid};

    fn grid_x(n: usize) -> Vec<f64> {
        linspace(-1.0, 1.0, n)
    }

    #[test]
    fn recovers_tanh_parameters() {
        let xs = grid_x(50);
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * (3.0 * x - 1.0).tanh() + 0.5).collect();
        let (w, r2) = fit_affine(Primitive::Tanh, &xs, &ys).unwrap();
        assert!(r2 > 0.9999, "r2 {r2}");
        for (got, want) in [(w.a, 3.0), (w.b, -1.0), (w.c, 2.0), (w.d, 0.5)] {
            assert!((got - want).abs() < 1e-2, "{w:?}");
        }
    }

    #[test]
    fn constant_data_gives_constant_wrap() {
        let xs = grid_x(20);
        let ys = vec![4.2; 20];
        let (w, r2) = fit_affine(Primitive::Sin, &xs, &ys).unwrap();
        assert_eq!(r2, 1.0);
        assert_eq!(w.c, 0.0);
        assert_eq!(w.d, 4.2);
    }

    #[test]
    fn identity_recovers_slope() {
        let xs = grid_x(30);
        let (w, r2) = fit_affine(Primitive::Identity, &xs, &xs).unwrap();
        assert!((w.a * w.c - 1.0).abs() < 1e-6);
        assert!(r2 > 1.0 - 1e-10);
    }

    #[test]
    fn too_few_samples_rejected() {
        let xs = grid_x(7);
        assert!(fit_affine(Primitive::Identity, &xs, &xs).is_err());
    }

    #[test]
    fn log_shifted_never_evaluated_outside_domain() {
        let xs = grid_x(40);
        let ys: Vec<f64> = xs.iter().map(|x| (0.8 * x + 0.5).ln_1p()).collect();
        let (w, r2) = fit_affine(Primitive::LogShifted, &xs, &ys).unwrap();
        assert!(r2 > 0.9999, "{w:?} {r2}");
        assert!(xs.iter().all(|&x| w.eval(x).is_finite()));
    }

    #[test]
    fn canonical_sign_for_even_primitive() {
        let xs = grid_x(40);
        let ys: Vec<f64> = xs.iter().map(|x| (-1.5 * x + 0.3).powi(2)).collect();
        let (w, _) = fit_affine(Primitive::Square, &xs, &ys).unwrap();
        assert!(w.a > 0.0);
    }

    fn spline_edge(coeffs: Vec<f64>) -> KanEdge {
        let grid = SplineGrid::symmetric(2, 3).unwrap();
        KanEdge::new(SplineFunction::new(grid, coeffs).unwrap(), 0.0, 1.0)
    }

    #[test]
    fn zero_edge_snaps_to_constant() {
        let edge = spline_edge(vec![0.0; 5]);
        let (best, ranked) = snap_edge(&edge, &[-1.0, 0.3, 1.0]).unwrap();
        assert_eq!(ranked.len(), Primitive::ALL.len());
        assert!(best.is_constant());
        assert_eq!(ranked[0].r2, 1.0);
        assert_eq!(best.primitive, Primitive::Identity);
    }

    #[test]
    fn ranking_is_a_sorted_permutation() {
        let edge = spline_edge(vec![0.3, -0.2, 0.5, 0.1, -0.4]);
        let (best, ranked) = snap_edge(&edge, &[-1.0, 1.0]).unwrap();
        let mut names: Vec<_> = ranked.iter().map(|r| r.wrap.primitive).collect();
        names.sort();
        assert_eq!(names, Primitive::ALL.to_vec());
        assert!(ranked.windows(2).all(|w| w[0].r2 >= w[1].r2));
        assert_eq!(best, ranked[0].wrap);
    }

    #[test]
    fn zero_network_formula_is_zero() {
        let m = KanModel::new(&[5, 2, 1], 2, 3, 0).unwrap();
        let m = m.unflatten_params(&vec![0.0; m.param_count()]).unwrap();
        let xs = vec![vec![0.1, -0.2, 0.3, 0.4, -0.5], vec![0.9, 0.1, -0.7, 0.0, 0.2]];
        let f = extract_formula(&m, &xs).unwrap();
        assert_eq!(f.to_infix(), "0");
        assert_eq!(f.fidelity_mse, 0.0);
        assert!(!f.low_fidelity);
    }

    /// A spline edge whose curve is exactly `g` on its domain, for
    /// polynomial `g` of degree at most 3.
    fn exact_edge(g: impl Fn(f64) -> f64, lo: f64, hi: f64) -> KanEdge {
        let grid = SplineGrid::uniform(4, 3, lo, hi).unwrap();
        let xs = linspace(lo, hi, 40);
        let ys: Vec<f64> = xs.iter().map(|&x| g(x)).collect();
        let fit = crate::spline::fit_coefficients(&grid, &xs, &ys).unwrap();
        KanEdge::new(fit.function, 0.0, 1.0)
    }

    #[test]
    fn exact_primitive_chain_is_reproduced() {
        // Inner edge: 0.5*(x + 0.2)^3, outer edge: -2*(h)^2 + 1.
        let inner = exact_edge(|x| 0.5 * (x + 0.2).powi(3), -1.0, 1.0);
        let outer = exact_edge(|h| -2.0 * h * h + 1.0, -0.5, 1.0);
        let layers = vec![
            KanLayer::new(1, 1, vec![inner]).unwrap(),
            KanLayer::new(1, 1, vec![outer]).unwrap(),
        ];
        let m = KanModel::from_layers(layers, 4, 3, 0).unwrap();
        let xs: Vec<Vec<f64>> = linspace(-1.0, 1.0, 60).into_iter().map(|x| vec![x]).collect();
        let f = extract_formula(&m, &xs).unwrap();
        assert_eq!(f.edges[0].best.primitive, Primitive::Cube);
        assert_eq!(f.edges[1].best.primitive, Primitive::Square);
        assert!(f.fidelity_mse < 1e-6, "fidelity {}", f.fidelity_mse);
    }

    #[test]
    fn unit_inputs_agree_with_symmetric_inputs() {
        let inner = exact_edge(|x| 0.7 * x * x - 0.1, -1.0, 1.0);
        let layers = vec![KanLayer::new(1, 1, vec![inner]).unwrap()];
        let m = KanModel::from_layers(layers, 4, 3, 0).unwrap();
        let xs: Vec<Vec<f64>> = linspace(-1.0, 1.0, 30).into_iter().map(|x| vec![x]).collect();
        let f = extract_formula(&m, &xs).unwrap();
        let u = f.in_unit_inputs();
        for s in [-1.0, -0.3, 0.2, 1.0] {
            let unit = (s + 1.0) / 2.0;
            assert!((f.eval(&[s])[0] - u.eval(&[unit])[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn json_tree_shape() {
        let e = Expr::Sum(vec![
            Expr::Wrap(
                AffineWrap {
                    primitive: Primitive::Sin,
                    a: 2.0,
                    b: 0.5,
                    c: 1.0,
                    d: 0.0,
                },
                Box::new(Expr::Input(0)),
            ),
            Expr::Const(3.0),
        ]);
        let v = e.to_json();
        assert_eq!(v["op"], "sum");
        assert_eq!(v["children"][0]["op"], "sin");
        assert_eq!(v["children"][0]["children"][0]["params"][0], 1);
        assert_eq!(e.to_infix(), "sin(2*x1 + 0.5) + 3");
    }

    #[test]
    fn primitive_names_round_trip() {
        for p in Primitive::ALL {
            assert_eq!(p.name().parse::<Primitive>().unwrap(), p);
        }
    }

    #[test]
    fn formula_values_at_origin() {
        // Frozen from a 40-digit evaluation of the printed expressions.
        let y1 = eval_pump_formula(PumpFormula::Pressure, &[0.0; 5]).unwrap();
        let y2 = eval_pump_formula(PumpFormula::FlowRate, &[0.0; 5]).unwrap();
        assert!((y1 / 1978.1638940999411 - 1.0).abs() < 1e-9, "{y1}");
        assert!((y2 / 0.11000000000002320 - 1.0).abs() < 1e-9, "{y2}");
    }
}
