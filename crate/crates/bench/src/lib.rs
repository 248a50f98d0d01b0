//! Criterion benchmarks for the subspace estimators live in `benches/`;
//! this crate has no library code of its own.
