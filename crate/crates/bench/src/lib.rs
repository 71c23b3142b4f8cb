//! Criterion benchmarks for the audit kernels live under `benches/`.
