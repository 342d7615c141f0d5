//! Criterion benchmarks for the compute kernels live under `benches/`.
