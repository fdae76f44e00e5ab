pub mod analysis;
pub mod data;
pub mod layers;
pub mod losses;
pub mod model;
pub mod scalar;
pub mod tensor;
pub mod training;

pub use model::{MasslModel, NetworkConfig, ParamGroup};
pub use scalar::Scalar;
pub use tensor::{Graph, TensorError, TensorId};

pub type Graph32 = Graph<f32>;
pub type Graph64 = Graph<f64>;
pub type Model32 = MasslModel<f32>;
pub type Model64 = MasslModel<f64>;
