//! Minimal neural-network substrate: tensors, a reverse-mode tape, a GRU
//! cell and the Adam optimizer. Generic over `f32`/`f64`.

pub mod adam;
pub mod gradcheck;
pub mod gru;
pub mod tape;
pub mod tensor;

pub use adam::Adam;
pub use gru::GruCell;
pub use tape::{NodeId, Tape};
pub use tensor::{ParamId, Params, Real, Tensor};
