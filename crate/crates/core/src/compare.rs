//! Side-by-side evaluation of the KAN pipeline against the baselines on one
//! shared train/test split.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::baselines::{train_forest, train_mlp, ForestConfig, MlpConfig};
use crate::dataset::{mse, split, Normalizer, PumpDataset, Scaling, Target};
use crate::error::{KanError, Result};
use crate::training::{predict_all, run_pipeline, KanArch, PipelineConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "KAN")]
    Kan,
    RandomForest,
    #[serde(rename = "MLP")]
    Mlp,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Kan, ModelKind::RandomForest, ModelKind::Mlp];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Kan => "KAN",
            ModelKind::RandomForest => "RandomForest",
            ModelKind::Mlp => "MLP",
        }
    }

    /// Published test MSE on the measured pump data, shown for reference.
    pub fn reference_mse(self, target: Target) -> f64 {
        match (self, target) {
            (ModelKind::Kan, Target::Pressure) => 12.186,
            (ModelKind::Kan, Target::FlowRate) => 0.012,
            (ModelKind::RandomForest, Target::Pressure) => 1750.017,
            (ModelKind::RandomForest, Target::FlowRate) => 0.040,
            (ModelKind::Mlp, Target::Pressure) => 78.329,
            (ModelKind::Mlp, Target::FlowRate) => 0.002,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: ModelKind,
    pub target: Target,
    pub test_mse: f64,
    pub reference_mse: f64,
    /// Dataset rows this cell was scored on.
    pub test_indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
    pub metadata: BTreeMap<String, Value>,
}

impl EvalReport {
    pub fn row(&self, model: ModelKind, target: Target) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.model == model && r.target == target)
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<14} {:<10} {:>14} {:>14}", "model", "target", "test_mse", "reference");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<14} {:<10} {:>14.6e} {:>14}",
                r.model.name(),
                r.target.name(),
                r.test_mse,
                r.reference_mse
            );
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareConfig {
    pub split_seed: u64,
    pub train_fraction: f64,
    pub targets: Vec<Target>,
    pub kan: PipelineConfig,
    /// Architecture override; `None` picks the per-target default.
    pub kan_arch: Option<KanArch>,
    pub mlp: MlpConfig,
    pub forest: ForestConfig,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            split_seed: 0,
            train_fraction: 0.9,
            targets: vec![Target::Pressure, Target::FlowRate],
            kan: PipelineConfig::default(),
            kan_arch: None,
            mlp: MlpConfig::default(),
            forest: ForestConfig::default(),
        }
    }
}

fn run_cell(ds: &PumpDataset, model: ModelKind, target: Target, cfg: &CompareConfig, test_idx: &[usize], train_idx: &[usize]) -> Result<f64> {
    let norm = Normalizer::pump();
    match model {
        ModelKind::Kan => {
            let train = ds.select(train_idx, target, &norm, Scaling::Symmetric)?;
            let test = ds.select(test_idx, target, &norm, Scaling::Symmetric)?;
            let arch = cfg.kan_arch.clone().unwrap_or_else(|| KanArch::reference(target));
            let out = run_pipeline(&train, &test, &arch, &cfg.kan)?;
            mse(&predict_all(&out.model, &test.xs)?, &test.ys)
        }
        ModelKind::Mlp => {
            let train = ds.select(train_idx, target, &norm, Scaling::Symmetric)?;
            let test = ds.select(test_idx, target, &norm, Scaling::Symmetric)?;
            let m = train_mlp(&train.xs, &train.ys, &cfg.mlp)?;
            let pred = test.xs.iter().map(|x| Ok(m.predict(x)?[0])).collect::<Result<Vec<_>>>()?;
            mse(&pred, &test.ys)
        }
        ModelKind::RandomForest => {
            let train = ds.select(train_idx, target, &norm, Scaling::Raw)?;
            let test = ds.select(test_idx, target, &norm, Scaling::Raw)?;
            let f = train_forest(&train.xs, &train.ys, &cfg.forest)?;
            let pred = test.xs.iter().map(|x| f.predict(x)).collect::<Result<Vec<_>>>()?;
            mse(&pred, &test.ys)
        }
    }
}

/// Trains every (model, target) cell on one split and reports test MSE in
/// fixed row order (models outer, targets inner). Cells run on separate
/// threads; results do not depend on scheduling.
pub fn run_compare(ds: &PumpDataset, cfg: &CompareConfig) -> Result<EvalReport> {
    if cfg.targets.is_empty() {
        return Err(KanError::InvalidArgument("no targets requested".into()));
    }
    let sp = split(ds.len(), cfg.train_fraction, cfg.split_seed)?;
    if sp.test.is_empty() {
        return Err(KanError::InvalidArgument("split leaves no test rows".into()));
    }
    let cells: Vec<(ModelKind, Target)> = ModelKind::ALL
        .into_iter()
        .flat_map(|m| cfg.targets.iter().map(move |&t| (m, t)))
        .collect();
    let results: Vec<Result<f64>> = std::thread::scope(|s| {
        let handles: Vec<_> = cells
            .iter()
            .map(|&(m, t)| {
                let sp = &sp;
                s.spawn(move || run_cell(ds, m, t, cfg, &sp.test, &sp.train))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("compare worker panicked"))
            .collect()
    });

    let mut rows = Vec::with_capacity(cells.len());
    for (&(model, target), res) in cells.iter().zip(results) {
        let test_mse = res?;
        log::info!("{} {}: test mse {test_mse:.6e} on rows {:?}", model.name(), target.name(), sp.test);
        rows.push(ReportRow {
            model,
            target,
            test_mse,
            reference_mse: model.reference_mse(target),
            test_indices: sp.test.clone(),
        });
    }
    let mut metadata = BTreeMap::new();
    metadata.insert("split_seed".into(), Value::from(cfg.split_seed));
    metadata.insert("train_fraction".into(), Value::from(cfg.train_fraction));
    metadata.insert("n_train".into(), Value::from(sp.train.len()));
    metadata.insert("n_test".into(), Value::from(sp.test.len()));
    metadata.insert("kan_seed".into(), Value::from(cfg.kan.sparse.seed));
    metadata.insert("mlp_seed".into(), Value::from(cfg.mlp.seed));
    metadata.insert("forest_seed".into(), Value::from(cfg.forest.seed));
    Ok(EvalReport { rows, metadata })
}
