//! Affine layer `y = x·Wᵀ + b` shared by the encoder and the coefficient maps.

use rand::Rng;

use super::kaiming_bound;
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    /// `out × in`.
    pub weight: Tensor,
    /// `1 × out`.
    pub bias: Tensor,
}

/// A [`Linear`] recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct LinearVars {
    pub weight: Var,
    pub bias: Var,
}

impl Linear {
    /// Kaiming-uniform weights, zero bias.
    pub fn kaiming<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        Self {
            weight: Tensor::uniform(&[fan_out, fan_in], kaiming_bound(fan_in), rng),
            bias: Tensor::zeros(&[1, fan_out]),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[fan_out, fan_in]),
            bias: Tensor::zeros(&[1, fan_out]),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.cols()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.rows()
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    /// Records both tensors, as trainable leaves or as constants.
    pub fn record(&self, tape: &mut Tape, trainable: bool) -> LinearVars {
        let rec = |tape: &mut Tape, t: &Tensor| {
            if trainable {
                tape.var(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        LinearVars {
            weight: rec(tape, &self.weight),
            bias: rec(tape, &self.bias),
        }
    }
}

impl LinearVars {
    pub fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let y = tape.matmul_t(x, false, self.weight, true)?;
        tape.add_row(y, self.bias)
    }
}
