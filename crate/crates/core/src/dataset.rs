//! Pump measurement schema, CSV I/O, normalization, train/test splits and the
//! synthetic generator built on the closed-form pressure and flow formulas.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_3, FRAC_PI_6, PI};
use std::fmt;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{KanError, Result};
use crate::rng;
use crate::symbolic::{eval_pump_formula, PumpFormula};

pub const CSV_HEADER: [&str; 7] = [
    "channel_height_mm",
    "overlap_mm",
    "voltage_kV",
    "gap_mm",
    "apex_angle_rad",
    "pressure_pa",
    "flow_ml_min",
];

pub const FEATURE_COUNT: usize = 5;

pub const CHANNEL_HEIGHTS_MM: [f64; 3] = [1.0, 0.5, 0.15];
pub const OVERLAPS_MM: [f64; 3] = [8.0, 4.0, 0.0];
pub const VOLTAGE_RANGE_KV: (f64, f64) = (0.0, 11.0);
pub const GAPS_MM: [f64; 4] = [0.3, 0.6, 0.9, 1.2];
pub const APEX_ANGLES_RAD: [f64; 4] = [PI, FRAC_PI_2, FRAC_PI_3, FRAC_PI_6];

/// Default synthetic noise (pressure in Pa, flow in ml/min).
pub const DEFAULT_NOISE: (f64, f64) = (3.0, 0.05);

/// Prediction target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Pressure,
    FlowRate,
}

impl Target {
    pub const ALL: [Target; 2] = [Target::Pressure, Target::FlowRate];

    pub fn name(self) -> &'static str {
        match self {
            Target::Pressure => "pressure",
            Target::FlowRate => "flow_rate",
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Target {
    type Err = KanError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pressure" => Ok(Target::Pressure),
            "flow_rate" | "flow" => Ok(Target::FlowRate),
            other => Err(KanError::InvalidArgument(format!(
                "unknown target `{other}` (expected pressure or flow_rate)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PumpSample {
    pub channel_height_mm: f64,
    pub overlap_mm: f64,
    pub voltage_kv: f64,
    pub gap_mm: f64,
    pub apex_angle_rad: f64,
    pub pressure_pa: f64,
    pub flow_ml_min: f64,
}

impl PumpSample {
    pub fn features(&self) -> [f64; FEATURE_COUNT] {
        [
            self.channel_height_mm,
            self.overlap_mm,
            self.voltage_kv,
            self.gap_mm,
            self.apex_angle_rad,
        ]
    }

    pub fn target(&self, target: Target) -> f64 {
        match target {
            Target::Pressure => self.pressure_pa,
            Target::FlowRate => self.flow_ml_min,
        }
    }

    /// Fields that fall outside the tested factor levels.
    fn schema_violations(&self) -> Vec<&'static str> {
        let in_set = |v: f64, set: &[f64]| set.iter().any(|s| (v - s).abs() < 1e-9);
        let mut out = Vec::new();
        if !in_set(self.channel_height_mm, &CHANNEL_HEIGHTS_MM) {
            out.push("channel_height_mm");
        }
        if !in_set(self.overlap_mm, &OVERLAPS_MM) {
            out.push("overlap_mm");
        }
        if !(VOLTAGE_RANGE_KV.0..=VOLTAGE_RANGE_KV.1).contains(&self.voltage_kv) {
            out.push("voltage_kV");
        }
        if !in_set(self.gap_mm, &GAPS_MM) {
            out.push("gap_mm");
        }
        if !in_set(self.apex_angle_rad, &APEX_ANGLES_RAD) {
            out.push("apex_angle_rad");
        }
        if self.pressure_pa < 0.0 {
            out.push("pressure_pa");
        }
        if self.flow_ml_min < 0.0 {
            out.push("flow_ml_min");
        }
        out
    }
}

/// Per-feature affine map from raw units onto `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Normalizer {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(KanError::shape("normalizer bounds", lo.len(), hi.len()));
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l < h)) {
            return Err(KanError::InvalidArgument(
                "normalizer needs hi > lo for every feature".into(),
            ));
        }
        Ok(Self { lo, hi })
    }

    /// Bounds of the tested parameter ranges.
    pub fn pump() -> Self {
        Self {
            lo: vec![0.15, 0.0, VOLTAGE_RANGE_KV.0, 0.3, FRAC_PI_6],
            hi: vec![1.0, 8.0, VOLTAGE_RANGE_KV.1, 1.2, PI],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(KanError::shape("normalizer input", self.dim(), x.len()));
        }
        Ok(())
    }

    pub fn to_unit(&self, raw: &[f64]) -> Result<Vec<f64>> {
        self.check(raw)?;
        Ok(raw
            .iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(x, (lo, hi))| (x - lo) / (hi - lo))
            .collect())
    }

    pub fn from_unit(&self, unit: &[f64]) -> Result<Vec<f64>> {
        self.check(unit)?;
        Ok(unit
            .iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(u, (lo, hi))| lo + u * (hi - lo))
            .collect())
    }

    /// Raw features onto the spline domain `[-1, 1]`.
    pub fn to_symmetric(&self, raw: &[f64]) -> Result<Vec<f64>> {
        Ok(self
            .to_unit(raw)?
            .into_iter()
            .map(|u| 2.0 * u - 1.0)
            .collect())
    }
}

/// Feature scaling applied when extracting model inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scaling {
    Raw,
    Unit,
    Symmetric,
}

/// Inputs and one target column.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Samples {
    pub xs: Vec<Vec<f64>>,
    pub ys: Vec<f64>,
}

impl Samples {
    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn variance(&self) -> f64 {
        if self.ys.is_empty() {
            return 0.0;
        }
        let n = self.ys.len() as f64;
        let mean = self.ys.iter().sum::<f64>() / n;
        self.ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PumpDataset {
    pub samples: Vec<PumpSample>,
}

impl PumpDataset {
    pub fn new(samples: Vec<PumpSample>) -> Self {
        Self { samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn select(
        &self,
        indices: &[usize],
        target: Target,
        normalizer: &Normalizer,
        scaling: Scaling,
    ) -> Result<Samples> {
        let mut out = Samples::default();
        for &i in indices {
            let sample = self.samples.get(i).ok_or_else(|| {
                KanError::InvalidArgument(format!("sample index {i} out of range"))
            })?;
            let raw = sample.features();
            let x = match scaling {
                Scaling::Raw => raw.to_vec(),
                Scaling::Unit => normalizer.to_unit(&raw)?,
                Scaling::Symmetric => normalizer.to_symmetric(&raw)?,
            };
            out.xs.push(x);
            out.ys.push(sample.target(target));
        }
        Ok(out)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| KanError::io(path, e))?;
        Ok(Self::new(parse_csv(&text, &path.display().to_string())?))
    }

    pub fn to_csv(&self, comment: Option<&str>) -> String {
        write_csv(&self.samples, comment)
    }
}

/// Parses the pump CSV schema. `origin` labels error messages.
pub fn parse_csv(text: &str, origin: &str) -> Result<Vec<PumpSample>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut records = reader.records();

    let header = match records.next() {
        Some(r) => r.map_err(|e| csv_error(origin, &e))?,
        None => {
            return Err(KanError::Format {
                path: origin.into(),
                message: "missing header row".into(),
            })
        }
    };
    let names: Vec<&str> = header.iter().collect();
    if names != CSV_HEADER {
        return Err(KanError::Format {
            path: origin.into(),
            message: format!(
                "expected header `{}`, found `{}`",
                CSV_HEADER.join(","),
                names.join(",")
            ),
        });
    }

    let mut samples = Vec::new();
    for record in records {
        let record = record.map_err(|e| csv_error(origin, &e))?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() != CSV_HEADER.len() {
            return Err(KanError::Parse {
                path: origin.into(),
                line,
                message: format!(
                    "expected {} columns, found {}",
                    CSV_HEADER.len(),
                    record.len()
                ),
            });
        }
        let mut values = [0.0f64; 7];
        for (col, (cell, value)) in record.iter().zip(values.iter_mut()).enumerate() {
            *value = cell.parse::<f64>().map_err(|_| KanError::Parse {
                path: origin.into(),
                line,
                message: format!("column `{}`: cannot parse `{cell}` as a number", CSV_HEADER[col]),
            })?;
            if !value.is_finite() {
                return Err(KanError::Parse {
                    path: origin.into(),
                    line,
                    message: format!("column `{}`: non-finite value", CSV_HEADER[col]),
                });
            }
        }
        let sample = PumpSample {
            channel_height_mm: values[0],
            overlap_mm: values[1],
            voltage_kv: values[2],
            gap_mm: values[3],
            apex_angle_rad: values[4],
            pressure_pa: values[5],
            flow_ml_min: values[6],
        };
        let violations = sample.schema_violations();
        if !violations.is_empty() {
            log::warn!(
                "{origin}: line {line}: values outside the tested ranges: {}",
                violations.join(", ")
            );
        }
        samples.push(sample);
    }
    Ok(samples)
}

fn csv_error(origin: &str, e: &csv::Error) -> KanError {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    KanError::Parse {
        path: origin.into(),
        line,
        message: e.to_string(),
    }
}

/// Serializes samples in the CSV schema. Floats use the shortest
/// representation that parses back to the same value.
pub fn write_csv(samples: &[PumpSample], comment: Option<&str>) -> String {
    let mut out = String::new();
    if let Some(c) = comment {
        for line in c.lines() {
            let _ = writeln!(out, "# {line}");
        }
    }
    out.push_str(&CSV_HEADER.join(","));
    out.push('\n');
    for s in samples {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            s.channel_height_mm,
            s.overlap_mm,
            s.voltage_kv,
            s.gap_mm,
            s.apex_angle_rad,
            s.pressure_pa,
            s.flow_ml_min
        );
    }
    out
}

/// Train/test partition of `0..n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

const SPLIT_STREAM: u64 = 1;
const GENERATOR_STREAM: u64 = 2;

/// Seeded shuffle of `0..n`; the first `round(n * train_fraction)` go to
/// training. Both index lists are returned in ascending order.
pub fn split(n: usize, train_fraction: f64, seed: u64) -> Result<SplitIndices> {
    if n < 2 {
        return Err(KanError::InvalidArgument(format!(
            "cannot split {n} samples"
        )));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(KanError::InvalidArgument(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let n_train = (n as f64 * train_fraction).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(KanError::InvalidArgument(format!(
            "split of {n} samples at {train_fraction} leaves an empty subset"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, SPLIT_STREAM));
    let mut train = order[..n_train].to_vec();
    let mut test = order[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitIndices { train, test, seed })
}

/// Draws pump configurations from the tested factor levels (voltage uniform
/// on 0..11 kV) and labels them with the closed-form pressure and flow
/// formulas plus Gaussian noise. Targets are clamped at zero.
pub fn generate_synthetic(n: usize, noise_sigma: (f64, f64), seed: u64) -> Result<PumpDataset> {
    if !(noise_sigma.0 >= 0.0 && noise_sigma.1 >= 0.0) {
        return Err(KanError::InvalidArgument(format!(
            "noise sigmas must be non-negative, got {noise_sigma:?}"
        )));
    }
    let normalizer = Normalizer::pump();
    let mut rng = rng::stream(seed, GENERATOR_STREAM);
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let channel_height_mm = *CHANNEL_HEIGHTS_MM.choose(&mut rng).unwrap();
        let overlap_mm = *OVERLAPS_MM.choose(&mut rng).unwrap();
        let voltage_kv = rng.random_range(VOLTAGE_RANGE_KV.0..=VOLTAGE_RANGE_KV.1);
        let gap_mm = *GAPS_MM.choose(&mut rng).unwrap();
        let apex_angle_rad = *APEX_ANGLES_RAD.choose(&mut rng).unwrap();
        let z_pressure: f64 = rng.sample(StandardNormal);
        let z_flow: f64 = rng.sample(StandardNormal);

        let raw = [channel_height_mm, overlap_mm, voltage_kv, gap_mm, apex_angle_rad];
        let unit = normalizer.to_unit(&raw)?;
        let pressure = eval_pump_formula(PumpFormula::Pressure, &unit)?;
        let flow = eval_pump_formula(PumpFormula::FlowRate, &unit)?;
        samples.push(PumpSample {
            channel_height_mm,
            overlap_mm,
            voltage_kv,
            gap_mm,
            apex_angle_rad,
            pressure_pa: (pressure + noise_sigma.0 * z_pressure).max(0.0),
            flow_ml_min: (flow + noise_sigma.1 * z_flow).max(0.0),
        });
    }
    Ok(PumpDataset::new(samples))
}

/// Mean squared error.
pub fn mse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(KanError::shape("mse", truth.len(), pred.len()));
    }
    if pred.is_empty() {
        return Err(KanError::InvalidInput("mse of empty sequences".into()));
    }
    let sum: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum();
    Ok(sum / pred.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_sizes_for_98_rows() {
        let s = split(98, 0.9, 0).unwrap();
        assert_eq!(s.train.len(), 88);
        assert_eq!(s.test.len(), 10);
        let mut all: Vec<usize> = s.train.iter().chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..98).collect::<Vec<_>>());
        assert_eq!(s, split(98, 0.9, 0).unwrap());
    }

    #[test]
    fn split_half() {
        let s = split(10, 0.5, 3).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (5, 5));
        assert!(s.train.iter().all(|i| !s.test.contains(i)));
    }

    #[test]
    fn split_degenerate() {
        assert!(split(1, 0.5, 0).is_err());
        assert!(split(10, 0.99, 0).is_err());
        assert!(split(10, 0.0, 0).is_err());
        assert!(split(10, 1.0, 0).is_err());
    }

    #[test]
    fn mse_by_hand() {
        assert_eq!(mse(&[0.0, 0.0], &[1.0, 3.0]).unwrap(), 5.0);
        assert_eq!(mse(&[1.5, 2.5], &[1.5, 2.5]).unwrap(), 0.0);
        assert!(mse(&[1.0], &[1.0, 2.0]).is_err());
        assert!(mse(&[], &[]).is_err());
    }

    #[test]
    fn normalizer_extremes_are_exact() {
        let n = Normalizer::pump();
        let lo = n.lo.clone();
        let hi = n.hi.clone();
        assert!(n.to_unit(&lo).unwrap().iter().all(|&u| u == 0.0));
        assert!(n.to_unit(&hi).unwrap().iter().all(|&u| u == 1.0));
        let apex_lo = n.to_unit(&[1.0, 8.0, 11.0, 1.2, FRAC_PI_6]).unwrap();
        assert_eq!(apex_lo[4], 0.0);
        let sym = n.to_symmetric(&lo).unwrap();
        assert!(sym.iter().all(|&u| u == -1.0));
    }

    #[test]
    fn csv_empty_body_and_single_row() {
        let header = CSV_HEADER.join(",");
        assert!(parse_csv(&format!("{header}\n"), "t").unwrap().is_empty());
        let row = format!("{header}\n0.5,4,3.25,0.6,1.5707963267948966,120.5,0.75\n");
        let s = parse_csv(&row, "t").unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].voltage_kv, 3.25);
        assert_eq!(s[0].apex_angle_rad, FRAC_PI_2);
        assert_eq!(s[0].flow_ml_min, 0.75);
    }

    #[test]
    fn csv_errors_name_the_line() {
        let header = CSV_HEADER.join(",");
        let short = format!("{header}\n0.5,4,3.25,0.6,1.57,120.5,0.75\n0.5,4,3.25,0.6,1.57,120.5\n");
        match parse_csv(&short, "d.csv") {
            Err(KanError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        let bad = format!("{header}\n0.5,4,abc,0.6,1.57,120.5,0.75\n");
        let err = parse_csv(&bad, "d.csv").unwrap_err().to_string();
        assert!(err.contains("line 2") && err.contains("voltage_kV"), "{err}");
        assert!(matches!(parse_csv("", "d.csv"), Err(KanError::Format { .. })));
        assert!(matches!(
            parse_csv("a,b,c\n", "d.csv"),
            Err(KanError::Format { .. })
        ));
    }

    #[test]
    fn comments_are_skipped() {
        let text = format!("# seed=0\n{}\n1,8,0,0.3,3.141592653589793,1,1\n", CSV_HEADER.join(","));
        assert_eq!(parse_csv(&text, "t").unwrap().len(), 1);
    }

    #[test]
    fn generator_levels_and_consistency() {
        let ds = generate_synthetic(98, (0.0, 0.0), 0).unwrap();
        assert_eq!(ds.len(), 98);
        let norm = Normalizer::pump();
        for s in &ds.samples {
            assert!(s.schema_violations().is_empty(), "{s:?}");
            let unit = norm.to_unit(&s.features()).unwrap();
            let p = eval_pump_formula(PumpFormula::Pressure, &unit).unwrap().max(0.0);
            let f = eval_pump_formula(PumpFormula::FlowRate, &unit).unwrap().max(0.0);
            assert_eq!(s.pressure_pa, p);
            assert_eq!(s.flow_ml_min, f);
        }
        assert_eq!(ds, generate_synthetic(98, (0.0, 0.0), 0).unwrap());
        assert!(generate_synthetic(3, (-1.0, 0.0), 0).is_err());
    }
}
