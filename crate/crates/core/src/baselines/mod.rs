//! Reference regressors compared against the KAN.

pub mod forest;
pub mod mlp;

pub use forest::{train_forest, ForestConfig, ForestModel, RegressionTree};
pub use mlp::{train_mlp, MlpConfig, MlpModel};
