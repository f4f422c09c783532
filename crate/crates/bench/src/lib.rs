//! Criterion benchmarks for the identification kernels live under `benches/`.
