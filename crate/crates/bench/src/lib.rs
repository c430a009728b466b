//! Criterion benchmarks for the spt-core pipeline; see `benches/`.
