//! Neural-network stack: autodiff graph, conv primitives, layer specs,
//! parameter store, Adam.
//!
//! Everything is `f64` end to end and single-threaded by construction, so
//! a fixed seed reproduces training bit-exactly.

pub mod adam;
pub mod conv;
pub mod graph;
pub mod layers;
pub mod params;

pub use adam::Adam;
pub use conv::ConvCfg;
pub use graph::{Gradients, Graph, Id};
pub use layers::{conv_stack, dense, init_dense, ConvDecoderSpec, ConvEncoderSpec, GaussianHeadSpec, MlpSpec};
pub use params::ParamStore;
