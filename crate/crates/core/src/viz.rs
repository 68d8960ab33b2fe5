//! Standalone SVG figures: learned edge curves with their B-spline basis,
//! network diagrams and training traces.

use std::fmt::Write as _;

use crate::error::{KanError, Result};
use crate::kan::{EdgeMatrix, KanModel};
use crate::spline::{linspace, SplineGrid};
use crate::training::TrainTrace;

/// Samples per plotted curve.
pub const CURVE_SAMPLES: usize = 200;

const PANEL_W: f64 = 180.0;
const PANEL_H: f64 = 130.0;
const MARGIN: f64 = 28.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
];

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

struct Svg {
    width: f64,
    height: f64,
    body: String,
}

impl Svg {
    fn new(width: f64, height: f64) -> Self {
        let mut body = String::new();
        let _ = writeln!(body, r#"<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>"#);
        Self { width, height, body }
    }

    fn text(&mut self, x: f64, y: f64, size: f64, anchor: &str, text: &str) {
        let _ = writeln!(
            self.body,
            r#"<text x="{x:.2}" y="{y:.2}" font-family="sans-serif" font-size="{size}" text-anchor="{anchor}">{}</text>"#,
            escape(text)
        );
    }

    fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str, width: f64) {
        let _ = writeln!(
            self.body,
            r#"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="{stroke}" stroke-width="{width:.3}"/>"#
        );
    }

    fn raw(&mut self, s: &str) {
        self.body.push_str(s);
        self.body.push('\n');
    }

    fn finish(self) -> String {
        format!(
            "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n{}</svg>\n",
            self.body,
            w = self.width,
            h = self.height
        )
    }
}

/// Axis-aligned plotting area mapping data coordinates to pixels.
struct Panel {
    x0: f64,
    y0: f64,
    w: f64,
    h: f64,
    xr: (f64, f64),
    yr: (f64, f64),
}

impl Panel {
    fn new(x0: f64, y0: f64, w: f64, h: f64, xr: (f64, f64), yr: (f64, f64)) -> Self {
        let widen = |(lo, hi): (f64, f64)| {
            if hi > lo {
                (lo, hi)
            } else {
                let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.1 };
                (lo - pad, hi + pad)
            }
        };
        Self {
            x0,
            y0,
            w,
            h,
            xr: widen(xr),
            yr: widen(yr),
        }
    }

    fn px(&self, x: f64) -> f64 {
        self.x0 + (x - self.xr.0) / (self.xr.1 - self.xr.0) * self.w
    }

    fn py(&self, y: f64) -> f64 {
        self.y0 + self.h - (y - self.yr.0) / (self.yr.1 - self.yr.0) * self.h
    }

    fn frame(&self, svg: &mut Svg, title: &str) {
        let _ = writeln!(
            svg.body,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#444" stroke-width="0.8"/>"##,
            self.x0, self.y0, self.w, self.h
        );
        svg.text(self.x0 + self.w / 2.0, self.y0 - 6.0, 11.0, "middle", title);
        svg.text(self.x0, self.y0 + self.h + 12.0, 9.0, "start", &format!("{:.3}", self.xr.0));
        svg.text(self.x0 + self.w, self.y0 + self.h + 12.0, 9.0, "end", &format!("{:.3}", self.xr.1));
        svg.text(self.x0 - 3.0, self.y0 + 9.0, 9.0, "end", &format!("{:.3}", self.yr.1));
        svg.text(self.x0 - 3.0, self.y0 + self.h, 9.0, "end", &format!("{:.3}", self.yr.0));
    }

    fn polyline(&self, xs: &[f64], ys: &[f64], stroke: &str, attrs: &str) -> String {
        let mut pts = String::new();
        for (k, (x, y)) in xs.iter().zip(ys).enumerate() {
            if k > 0 {
                pts.push(' ');
            }
            let _ = write!(pts, "{:.2},{:.2}", self.px(*x), self.py(*y));
        }
        format!(r#"<polyline points="{pts}" fill="none" stroke="{stroke}" stroke-width="1.4" {attrs}/>"#)
    }
}

fn range_of(values: impl IntoIterator<Item = f64>) -> (f64, f64) {
    values
        .into_iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// One panel per edge of `layer` (rows = output nodes, columns = input
/// nodes) and a final panel with the basis functions of the first edge's
/// grid. Edge curves carry their sampled extrema in `data-min`/`data-max`.
pub fn layer_splines_svg(model: &KanModel, layer: usize) -> Result<String> {
    let layers = model.layers();
    let Some(kl) = layers.get(layer) else {
        return Err(KanError::InvalidArgument(format!(
            "layer {layer} out of range (model has {})",
            layers.len()
        )));
    };
    let cols = kl.in_dim();
    let rows = kl.out_dim() + 1;
    let width = MARGIN * 2.0 + cols as f64 * (PANEL_W + MARGIN * 1.5);
    let height = MARGIN * 2.0 + rows as f64 * (PANEL_H + MARGIN * 1.5);
    let mut svg = Svg::new(width, height);
    let origin = |r: usize, c: usize| {
        (
            MARGIN * 2.0 + c as f64 * (PANEL_W + MARGIN * 1.5),
            MARGIN * 1.5 + r as f64 * (PANEL_H + MARGIN * 1.5),
        )
    };

    for j in 0..kl.out_dim() {
        for i in 0..cols {
            let edge = kl.edge(j, i);
            let (lo, hi) = edge.spline.grid().domain();
            let xs = linspace(lo, hi, CURVE_SAMPLES);
            let ys: Vec<f64> = xs.iter().map(|&x| edge.eval(x)).collect();
            let (ymin, ymax) = range_of(ys.iter().copied());
            let (x0, y0) = origin(j, i);
            let panel = Panel::new(x0, y0, PANEL_W, PANEL_H, (lo, hi), (ymin, ymax));
            panel.frame(&mut svg, &format!("phi[{layer}] {i} -> {j}"));
            let attrs = format!(
                r#"class="edge" data-edge="{j},{i}" data-min="{ymin:e}" data-max="{ymax:e}""#
            );
            svg.raw(&panel.polyline(&xs, &ys, PALETTE[(j * cols + i) % PALETTE.len()], &attrs));
        }
    }

    let grid = kl.edge(0, 0).spline.grid().clone();
    basis_panel(&mut svg, &grid, origin(rows - 1, 0))?;
    Ok(svg.finish())
}

fn basis_panel(svg: &mut Svg, grid: &SplineGrid, (x0, y0): (f64, f64)) -> Result<()> {
    let (lo, hi) = grid.domain();
    let xs = linspace(lo, hi, CURVE_SAMPLES);
    let values = xs.iter().map(|&x| grid.basis(x)).collect::<Result<Vec<_>>>()?;
    let panel = Panel::new(x0, y0, PANEL_W, PANEL_H, (lo, hi), (0.0, 1.0));
    panel.frame(
        svg,
        &format!("basis G={} k={}", grid.intervals(), grid.degree()),
    );
    for b in 0..grid.basis_count() {
        let ys: Vec<f64> = values.iter().map(|v| v[b]).collect();
        let attrs = format!(r#"class="basis" data-index="{b}""#);
        svg.raw(&panel.polyline(&xs, &ys, PALETTE[b % PALETTE.len()], &attrs));
    }
    Ok(())
}

/// Basis functions of a single grid.
pub fn basis_svg(grid: &SplineGrid) -> Result<String> {
    let mut svg = Svg::new(PANEL_W + MARGIN * 3.0, PANEL_H + MARGIN * 3.0);
    basis_panel(&mut svg, grid, (MARGIN * 2.0, MARGIN * 1.5))?;
    Ok(svg.finish())
}

/// Nodes as circles, edges as lines. With `stats` (mean |activation| per
/// edge, as from [`KanModel::activation_stats`]) line opacity follows each
/// edge's share of its layer's largest activation.
pub fn network_svg(model: &KanModel, stats: Option<&[EdgeMatrix]>) -> Result<String> {
    let widths = model.widths();
    if let Some(s) = stats {
        if s.len() != model.layers().len() {
            return Err(KanError::shape("activation stats", model.layers().len(), s.len()));
        }
    }
    let max_w = *widths.iter().max().unwrap() as f64;
    let width = MARGIN * 2.0 + max_w * 70.0;
    let height = MARGIN * 2.0 + (widths.len() - 1) as f64 * 110.0 + 20.0;
    let mut svg = Svg::new(width, height);
    let pos = |l: usize, n: usize| {
        let count = widths[l] as f64;
        let x = width / 2.0 + (n as f64 - (count - 1.0) / 2.0) * 70.0;
        // Inputs at the bottom.
        let y = height - MARGIN - 10.0 - l as f64 * 110.0;
        (x, y)
    };
    for (l, layer) in model.layers().iter().enumerate() {
        let peak = stats.map(|s| s[l].data.iter().copied().fold(0.0, f64::max));
        for j in 0..layer.out_dim() {
            for i in 0..layer.in_dim() {
                let (x1, y1) = pos(l, i);
                let (x2, y2) = pos(l + 1, j);
                let alpha = match (stats, peak) {
                    (Some(s), Some(p)) if p > 0.0 => s[l].get(j, i) / p,
                    (Some(_), _) => 0.0,
                    _ => 1.0,
                };
                let _ = writeln!(
                    svg.body,
                    r#"<line class="edge" x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="black" stroke-width="1.5" stroke-opacity="{alpha:.4}"/>"#
                );
            }
        }
    }
    for (l, &w) in widths.iter().enumerate() {
        for n in 0..w {
            let (x, y) = pos(l, n);
            let _ = writeln!(
                svg.body,
                r##"<circle class="node" cx="{x:.2}" cy="{y:.2}" r="7" fill="#ddd" stroke="black"/>"##
            );
            if l == 0 {
                svg.text(x, y + 22.0, 10.0, "middle", &format!("x{}", n + 1));
            }
        }
    }
    Ok(svg.finish())
}

/// Training loss and regularizer against iteration, on a log10 axis.
pub fn trace_svg(trace: &TrainTrace, title: &str) -> Result<String> {
    let width = 520.0;
    let height = 320.0;
    let mut svg = Svg::new(width, height);
    let recs = &trace.records;
    if recs.is_empty() {
        svg.text(width / 2.0, height / 2.0, 12.0, "middle", "empty trace");
        return Ok(svg.finish());
    }
    let floor = 1e-300;
    let log = |v: f64| v.max(floor).log10();
    let iters: Vec<f64> = recs.iter().map(|r| r.iteration as f64).collect();
    let loss: Vec<f64> = recs.iter().map(|r| log(r.train_loss)).collect();
    let reg: Vec<f64> = recs.iter().filter(|r| r.reg > 0.0).map(|r| log(r.reg)).collect();
    let (ymin, ymax) = range_of(loss.iter().chain(&reg).copied());
    let panel = Panel::new(
        70.0,
        40.0,
        width - 100.0,
        height - 90.0,
        range_of(iters.iter().copied()),
        (ymin, ymax),
    );
    panel.frame(&mut svg, title);
    svg.text(width / 2.0, height - 12.0, 11.0, "middle", "iteration");
    svg.text(16.0, height / 2.0, 11.0, "middle", "log10");
    svg.raw(&panel.polyline(&iters, &loss, PALETTE[0], r#"class="train_loss""#));
    if !reg.is_empty() {
        let reg_iters: Vec<f64> = recs.iter().filter(|r| r.reg > 0.0).map(|r| r.iteration as f64).collect();
        svg.raw(&panel.polyline(&reg_iters, &reg, PALETTE[1], r#"class="reg""#));
    }
    svg.line(width - 150.0, 20.0, width - 130.0, 20.0, PALETTE[0], 2.0);
    svg.text(width - 126.0, 24.0, 10.0, "start", "train loss");
    svg.line(width - 70.0, 20.0, width - 50.0, 20.0, PALETTE[1], 2.0);
    svg.text(width - 46.0, 24.0, 10.0, "start", "reg");
    Ok(svg.finish())
}
