// SPDX-License-Identifier: Apache-2.0
//! Reverse-mode differentiation over a closed set of tensor operations.
//!
//! A [`Graph`] is built eagerly during one forward pass and consumed by
//! [`Graph::backward`]. Tensors are row-major, image tensors are laid out as
//! `[batch, channels, height, width]`.
//!
//! Gradients of complex tensors follow the convention
//! `G = dL/dRe + i dL/dIm` for a real loss `L`, so a complex-linear map
//! `y = A x` back-propagates as `G_x = A^H G_y`.

mod check;
mod graph;
mod optim;
mod tensor;

pub use check::gradient_check;
pub use graph::{kept_modes, Gradients, Graph, Var};
pub use optim::{lr_schedule, AdamState, StepSchedule};
pub use tensor::{Data, ParamSet, Tensor};
