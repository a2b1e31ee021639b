//! Shared setup for the criterion benchmarks; see `benches/gibbs.rs`.

use brace_core::{simulate_dataset, CovarianceCase, Dataset, SimConfig};

/// Benchmark dataset at the requested width.
pub fn bench_dataset(p: usize, seed: u64) -> Dataset {
    let cfg = SimConfig {
        n: 300,
        p,
        case: CovarianceCase::Dep1,
        rho: 0.5,
        snr: 1.0,
        seed,
        train_fraction: 0.8,
    };
    simulate_dataset(&cfg).expect("benchmark dataset").0
}
