//! Kolmogorov-Arnold networks for tabular surrogate modeling.
//!
//! The crate covers B-spline edge activations ([`spline`]), network
//! evaluation ([`kan`]), regularized LBFGS training ([`training`]),
//! node pruning ([`prune`]), symbolic snapping ([`symbolic`]), MLP and
//! random-forest baselines ([`baselines`]), the pump dataset with its
//! synthetic generator ([`dataset`]), JSON checkpoints ([`checkpoint`]),
//! the three-model comparison ([`compare`]) and SVG plots ([`viz`]).

pub mod checkpoint;
pub mod compare;
pub mod dataset;
pub mod baselines;
pub mod error;
pub mod kan;
pub mod optim;
pub mod prune;
pub mod rng;
pub mod spline;
pub mod symbolic;
pub mod training;
pub mod viz;

pub use baselines::{ForestModel, MlpModel};
pub use dataset::{Normalizer, PumpDataset, PumpSample, Samples, SplitIndices, Target};
pub use error::{KanError, Result};
pub use kan::{KanEdge, KanLayer, KanModel};
pub use prune::{PruneConfig, PruneReport};
pub use spline::{SplineFunction, SplineGrid};
pub use training::{KanArch, PipelineConfig, TrainConfig, TrainTrace};
