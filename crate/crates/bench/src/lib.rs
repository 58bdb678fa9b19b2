//! Shared fixtures for the benchmarks.

use nested_dirichlet::{ndd_sample, seeded_rng, CompositionMatrix, NddModel};

/// Five components: a three-way group with a strong negative dependence and a
/// positively correlated pair.
pub const SYNTHETIC: &str = "((X1:0.5,X2:1.5,X3:2):8,(X4:10,X5:10):2)";

pub fn synthetic_model() -> NddModel {
    NddModel::parse(SYNTHETIC).expect("fixture tree parses")
}

pub fn synthetic_data(n: usize, seed: u64) -> CompositionMatrix {
    ndd_sample(&synthetic_model(), n, &mut seeded_rng(seed))
}
