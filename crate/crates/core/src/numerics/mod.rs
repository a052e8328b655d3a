//! Dense tensors, reverse-mode autodiff, Adam and the checkpoint format.

mod adam;
mod alloc;
pub mod checkpoint;
mod conv;
mod float;
pub mod gradcheck;
mod linalg;
mod ops;
mod params;
mod sample;
pub use sample::deformable_aggregate;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use alloc::tune_allocator;
pub use conv::upsample_nearest_tensor;
pub use float::{gemm, Float};
pub use linalg::softmax_tensor;
pub use ops::broadcast_shape;
pub use params::{Binding, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{strides, Tensor};

