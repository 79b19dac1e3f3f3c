//! Benchmarks for `lme-core` live in `benches/`; this crate has no library code.
