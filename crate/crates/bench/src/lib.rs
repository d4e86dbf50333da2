//! Criterion benchmarks for `mmh-core`; see `benches/`.
