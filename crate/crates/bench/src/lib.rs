//! Shared fixtures for the benchmarks.

use kanforge::dataset::{generate_synthetic, split, Normalizer, Samples, Scaling};
use kanforge::Target;

/// The 88-row training split of the default synthetic dataset.
pub fn pump_train_set(target: Target) -> Samples {
    let ds = generate_synthetic(98, (3.0, 0.05), 0).expect("synthetic data");
    let sp = split(ds.len(), 0.9, 0).expect("split");
    ds.select(&sp.train, target, &Normalizer::pump(), Scaling::Symmetric)
        .expect("select")
}
