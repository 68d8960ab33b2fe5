//! JSON checkpoints for KAN and baseline models.
//!
//! Every file shares one envelope: `schema_version`, a `kind` tag, the model
//! fields and a free-form `metadata` object. Reals are written with 17
//! significant digits so a save/load cycle is exact.

use std::collections::BTreeMap;
use std::io;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};
use serde_json::Value;

use crate::baselines::{ForestModel, MlpModel};
use crate::dataset::Normalizer;
use crate::error::{KanError, Result};
use crate::kan::{KanEdge, KanLayer, KanModel};
use crate::spline::{SplineFunction, SplineGrid};

pub const SCHEMA_VERSION: u32 = 1;

/// Metadata key holding the wall-clock time of writing. No other field of
/// any output depends on the clock.
pub const TIMESTAMP_KEY: &str = "timestamp";

/// Pretty JSON with every `f64` printed as `d.dddddddddddddddde±x`.
struct ExactFloats<'a>(PrettyFormatter<'a>);

impl Formatter for ExactFloats<'_> {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, f64::from(value))
    }

    fn begin_array<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.begin_array(writer)
    }

    fn end_array<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_array(writer)
    }

    fn begin_array_value<W: ?Sized + io::Write>(&mut self, writer: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(writer, first)
    }

    fn end_array_value<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_array_value(writer)
    }

    fn begin_object<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.begin_object(writer)
    }

    fn end_object<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_object(writer)
    }

    fn begin_object_key<W: ?Sized + io::Write>(&mut self, writer: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(writer, first)
    }

    fn begin_object_value<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.begin_object_value(writer)
    }

    fn end_object_value<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_object_value(writer)
    }
}

/// Serializes `value` as indented JSON with exact reals, ending in a newline.
pub fn to_json_string<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, ExactFloats(PrettyFormatter::new()));
    value.serialize(&mut ser)?;
    out.push(b'\n');
    Ok(String::from_utf8(out).expect("serde_json writes UTF-8"))
}

pub fn write_json<T: Serialize + ?Sized>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_json_string(value)?).map_err(|e| KanError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| KanError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| KanError::Schema(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub coeffs: Vec<f64>,
    pub w_base: f64,
    pub w_spline: f64,
    /// Spline domain `[lo, hi]`.
    pub domain: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    /// Row-major over (output node, input node).
    pub edges: Vec<EdgeRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KanRecord {
    pub widths: Vec<usize>,
    #[serde(rename = "grid_G")]
    pub grid: usize,
    #[serde(rename = "degree_k")]
    pub degree: usize,
    pub seed: u64,
    pub normalizer: Option<Normalizer>,
    pub layers: Vec<LayerRecord>,
}

impl KanRecord {
    pub fn from_model(model: &KanModel) -> Self {
        let layers = model
            .layers()
            .iter()
            .map(|layer| LayerRecord {
                edges: layer
                    .edges()
                    .iter()
                    .map(|e| {
                        let (lo, hi) = e.spline.grid().domain();
                        EdgeRecord {
                            coeffs: e.spline.coefficients().to_vec(),
                            w_base: e.w_base,
                            w_spline: e.w_spline,
                            domain: [lo, hi],
                        }
                    })
                    .collect(),
            })
            .collect();
        Self {
            widths: model.widths().to_vec(),
            grid: model.grid_intervals(),
            degree: model.degree(),
            seed: model.seed(),
            normalizer: model.normalizer().cloned(),
            layers,
        }
    }

    pub fn to_model(&self) -> Result<KanModel> {
        if self.widths.len() != self.layers.len() + 1 {
            return Err(KanError::Schema(format!(
                "{} widths do not match {} layers",
                self.widths.len(),
                self.layers.len()
            )));
        }
        let layers = self
            .layers
            .iter()
            .zip(self.widths.windows(2))
            .map(|(rec, w)| {
                if rec.edges.len() != w[0] * w[1] {
                    return Err(KanError::Schema(format!(
                        "layer {}x{} has {} edges",
                        w[1],
                        w[0],
                        rec.edges.len()
                    )));
                }
                let edges = rec
                    .edges
                    .iter()
                    .map(|e| {
                        let grid = SplineGrid::uniform(self.grid, self.degree, e.domain[0], e.domain[1])?;
                        let spline = SplineFunction::new(grid, e.coeffs.clone())?;
                        Ok(KanEdge::new(spline, e.w_base, e.w_spline))
                    })
                    .collect::<Result<Vec<_>>>()?;
                KanLayer::new(w[0], w[1], edges)
            })
            .collect::<Result<Vec<_>>>()
            .map_err(|e| KanError::Schema(e.to_string()))?;
        let mut model = KanModel::from_layers(layers, self.grid, self.degree, self.seed)?;
        model.set_normalizer(self.normalizer.clone());
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelRecord {
    Kan(KanRecord),
    Mlp {
        /// Inputs are mapped onto `[-1, 1]` with this before prediction.
        normalizer: Option<Normalizer>,
        model: MlpModel,
    },
    Forest {
        /// Forests read raw features.
        model: ForestModel,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    #[serde(flatten)]
    pub model: ModelRecord,
    #[serde(default)]
    pub metadata: BTreeMap<String, Value>,
}

impl Checkpoint {
    pub fn new(model: ModelRecord) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            model,
            metadata: BTreeMap::new(),
        }
    }

    pub fn kan(model: &KanModel) -> Self {
        Self::new(ModelRecord::Kan(KanRecord::from_model(model)))
    }

    pub fn kind(&self) -> &'static str {
        match self.model {
            ModelRecord::Kan(_) => "kan",
            ModelRecord::Mlp { .. } => "mlp",
            ModelRecord::Forest { .. } => "forest",
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.metadata.insert(key.to_string(), value.into());
        self
    }

    pub fn kan_model(&self) -> Result<KanModel> {
        match &self.model {
            ModelRecord::Kan(rec) => rec.to_model(),
            _ => Err(KanError::Schema(format!("expected a kan checkpoint, found {}", self.kind()))),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        to_json_string(self)
    }

    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        let ckpt: Checkpoint =
            serde_json::from_str(text).map_err(|e| KanError::Schema(format!("{origin}: {e}")))?;
        if ckpt.schema_version != SCHEMA_VERSION {
            return Err(KanError::Schema(format!(
                "{origin}: schema_version {} is not supported (expected {SCHEMA_VERSION})",
                ckpt.schema_version
            )));
        }
        if let ModelRecord::Forest { model } = &ckpt.model {
            model.validate()?;
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| KanError::io(path, e))?;
        Self::from_json(&text, &path.display().to_string())
    }
}
