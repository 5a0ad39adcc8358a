//! A small CPU autograd engine: NCHW tensors, im2col convolutions and a
//! reverse-mode tape.

pub mod adam;
pub mod graph;
pub mod kernels;
pub mod params;
pub mod tensor;

pub use adam::{Adam, AdamConfig};
pub use graph::{BatchStats, Graph, Var};
pub use kernels::ConvGeom;
pub use params::{ParamId, ParamKind, ParamStore};
pub use tensor::{Real, Tensor};
