//! Shared fixtures for the benchmarks in `benches/`.

use perfest::{generate_synthetic, GeneratorSpec, ScoreSet};

/// An overconfident validation set and a prevalence-shifted test set of `n`
/// records each.
pub fn shifted_pair(n: usize, seed: u64) -> (ScoreSet, ScoreSet) {
    let spec = GeneratorSpec {
        n,
        seed,
        distortion: 2.0,
        ..GeneratorSpec::default()
    };
    let val = generate_synthetic(&spec).expect("valid spec");
    let test = generate_synthetic(&GeneratorSpec {
        seed: seed + 1,
        prevalence: Some(0.3),
        ..spec
    })
    .expect("valid spec");
    (val, test)
}
