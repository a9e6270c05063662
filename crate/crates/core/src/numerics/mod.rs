//! Dense `f32` tensors with a per-forward-pass reverse-mode tape.

pub mod container;
pub mod gradcheck;
pub mod layers;
pub mod ops;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;

pub use container::{Container, DType, NamedArray};
pub use gradcheck::{finite_difference_check, GradCheckReport};
pub use layers::{Conv1d, Linear};
pub use ops::{Padding, Primitive};
pub use optim::{Adam, ClipScope};
pub use params::{Gradients, ParamId, ParamStore};
pub use tape::{Tape, Var};
pub use tensor::{Float, Tensor};
