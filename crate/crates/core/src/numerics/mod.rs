//! Tensor math substrate: dense `f32` tensors, a reverse-mode tape and Adam.

mod adam;
mod gradcheck;
mod linear;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use gradcheck::{check_direction, mixed_direction, GradCheck};
pub use linear::{Linear, LinearVars};
pub use tape::{sigmoid, Axis, Gradients, Tape, Var};
pub use tensor::{matmul, Tensor};

/// Kaiming-uniform bound for a ReLU layer with the given fan-in.
pub fn kaiming_bound(fan_in: usize) -> f32 {
    (6.0 / fan_in.max(1) as f32).sqrt()
}
