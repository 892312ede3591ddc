//! Criterion benchmarks for the model kernels live in `benches/`.
