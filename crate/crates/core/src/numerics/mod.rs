//! Dense tensors, a differentiation tape, and an adaptive-moment optimizer.

mod fd;
mod gemm;
mod optim;
mod params;
mod tape;
mod tensor;

pub use fd::{finite_difference_grad, finite_difference_grad_5pt, max_relative_error};
pub use optim::{optimizer_step, optimizer_step_in_place, AdamConfig, OptimState};
pub use params::{GradMap, ParamSet};
pub use tape::{ParamVars, Tape, Var};
pub use tensor::Tensor;

pub(crate) use tape::{log_softmax_in_place, normalize_group, silu};
