//! Criterion benchmarks for the dscan operators and training step; see `benches/`.
