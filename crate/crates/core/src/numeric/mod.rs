//! Dense tensors, reverse-mode autodiff, seeded random streams and the
//! binary snapshot container.

pub mod graph;
pub mod layers;
pub mod linalg;
pub mod params;
pub mod rng;
pub mod snapshot;
pub mod tensor;

pub use graph::{gelu, Graph, Var};
pub use params::{Adam, AdamConfig, ParamId, ParamStore};
pub use rng::RngStream;
pub use tensor::{ComplexTensor, Tensor};
