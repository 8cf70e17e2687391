//! Benchmark-only crate. The measurements live in `benches/hot_paths.rs`;
//! this library exists so the workspace member has a normal crate root.
