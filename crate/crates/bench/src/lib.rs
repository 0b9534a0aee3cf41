//! Criterion benchmarks of the hot paths; see `benches/`.
//!
//! `cargo bench -p bbm-bench`
