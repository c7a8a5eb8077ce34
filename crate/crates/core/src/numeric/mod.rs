//! Dense tensors, the tape-based gradient engine, MLPs and the optimizer.

pub mod gradcheck;
pub mod mlp;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;

pub use gradcheck::{finite_difference_grad, grad_close, relative_error};
pub use mlp::{Mlp, MlpSpec, OutputActivation};
pub use optim::sgd_step;
pub use params::{Param, ParamId, ParamStore};
pub use tape::{OpKind, Tape, Var};
pub use tensor::Tensor;
