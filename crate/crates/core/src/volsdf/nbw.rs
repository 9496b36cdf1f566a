//! Neural blend weights: each part's decoder layer is the shared base
//! matrix plus a latent-dependent combination of that part's shape matrices.

use rand::Rng;

use super::{DecoderSpec, DECODER_LAYERS};
use crate::body::NUM_PARTS;
use crate::encoder::LATENT_DIM;
use crate::error::{contract, Result};
use crate::numerics::{kaiming_bound, Linear, LinearVars, Tape, Tensor, Var};

const SHAPE_INIT_GAIN: f32 = 1e-2;

#[derive(Clone, Debug, PartialEq)]
pub struct NbwBank {
    pub rank: usize,
    /// Base weight `W^l` (`out × in`) and shared bias `b_l` per layer.
    pub base: Vec<Linear>,
    /// `shape[k][l]`: the `R` shape matrices of part `k`, layer `l`, one
    /// flattened `out·in` matrix per row. Empty when `R = 0`.
    pub shape: Vec<Vec<Tensor>>,
    /// `coef[k][l]`: latent → `R` coefficients. Empty when `R = 0`.
    pub coef: Vec<Vec<Linear>>,
}

/// An [`NbwBank`] recorded on a tape.
pub struct BankVars {
    pub rank: usize,
    pub dims: Vec<(usize, usize)>,
    pub base: Vec<LinearVars>,
    pub shape: Vec<Vec<Var>>,
    pub coef: Vec<Vec<LinearVars>>,
}

impl NbwBank {
    /// Base layers Kaiming-uniform; shape matrices at 1% of that bound;
    /// coefficient maps zero so training starts from the base decoder.
    pub fn new<R: Rng + ?Sized>(spec: &DecoderSpec, rng: &mut R) -> Self {
        let dims = spec.layer_dims();
        let base: Vec<Linear> = dims
            .iter()
            .map(|&(i, o)| Linear::kaiming(i, o, rng))
            .collect();
        let (shape, coef) = if spec.rank == 0 {
            (vec![Vec::new(); NUM_PARTS], vec![Vec::new(); NUM_PARTS])
        } else {
            let mut shape = Vec::with_capacity(NUM_PARTS);
            let mut coef = Vec::with_capacity(NUM_PARTS);
            for _ in 0..NUM_PARTS {
                shape.push(
                    dims.iter()
                        .map(|&(i, o)| {
                            Tensor::uniform(
                                &[spec.rank, o * i],
                                SHAPE_INIT_GAIN * kaiming_bound(i),
                                rng,
                            )
                        })
                        .collect(),
                );
                coef.push(
                    (0..DECODER_LAYERS)
                        .map(|_| Linear::zeros(LATENT_DIM, spec.rank))
                        .collect(),
                );
            }
            (shape, coef)
        };
        Self {
            rank: spec.rank,
            base,
            shape,
            coef,
        }
    }

    pub fn dims(&self) -> Vec<(usize, usize)> {
        self.base
            .iter()
            .map(|l| (l.fan_in(), l.fan_out()))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn tensor_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for l in 0..self.base.len() {
            names.push(format!("base.{l}.weight"));
            names.push(format!("base.{l}.bias"));
        }
        for k in 0..self.shape.len() {
            for l in 0..self.shape[k].len() {
                names.push(format!("part{k}.layer{l}.shape"));
                names.push(format!("part{k}.layer{l}.coef.weight"));
                names.push(format!("part{k}.layer{l}.coef.bias"));
            }
        }
        names
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = self
            .base
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect();
        for (shapes, coefs) in self.shape.iter().zip(&self.coef) {
            for (s, c) in shapes.iter().zip(coefs) {
                out.extend([s, &c.weight, &c.bias]);
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = self
            .base
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect();
        for (shapes, coefs) in self.shape.iter_mut().zip(self.coef.iter_mut()) {
            for (s, c) in shapes.iter_mut().zip(coefs.iter_mut()) {
                out.push(s);
                out.push(&mut c.weight);
                out.push(&mut c.bias);
            }
        }
        out
    }

    pub fn record(&self, tape: &mut Tape, trainable: bool) -> BankVars {
        let rec = |tape: &mut Tape, t: &Tensor| {
            if trainable {
                tape.var(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        let base = self
            .base
            .iter()
            .map(|l| l.record(tape, trainable))
            .collect();
        let mut shape = Vec::with_capacity(self.shape.len());
        let mut coef = Vec::with_capacity(self.coef.len());
        for (shapes, coefs) in self.shape.iter().zip(&self.coef) {
            let mut s_row = Vec::new();
            let mut c_row = Vec::new();
            for (s, c) in shapes.iter().zip(coefs) {
                s_row.push(rec(tape, s));
                c_row.push(c.record(tape, trainable));
            }
            shape.push(s_row);
            coef.push(c_row);
        }
        BankVars {
            rank: self.rank,
            dims: self.dims(),
            base,
            shape,
            coef,
        }
    }
}

impl BankVars {
    pub fn leaves(&self) -> Vec<Var> {
        let mut out: Vec<Var> = self.base.iter().flat_map(|l| [l.weight, l.bias]).collect();
        for (shapes, coefs) in self.shape.iter().zip(&self.coef) {
            for (s, c) in shapes.iter().zip(coefs) {
                out.extend([*s, c.weight, c.bias]);
            }
        }
        out
    }

    /// Blend coefficients `v_k^l = A_k^l z` for every layer (`1 × R` each);
    /// `None` when `R = 0`.
    pub fn coefficients(&self, tape: &mut Tape, k: usize, z: Var) -> Result<Option<Vec<Var>>> {
        if self.rank == 0 {
            return Ok(None);
        }
        let coefs = self
            .coef
            .get(k)
            .ok_or_else(|| contract(format!("no coefficient maps for part {k}")))?;
        Ok(Some(
            coefs
                .iter()
                .map(|c| c.apply(tape, z))
                .collect::<Result<_>>()?,
        ))
    }

    /// Effective `out × in` weight of layer `l` for part `k` given its
    /// coefficients.
    pub fn effective_weight(
        &self,
        tape: &mut Tape,
        k: usize,
        l: usize,
        v: Option<Var>,
    ) -> Result<Var> {
        let base = self.base[l].weight;
        let Some(v) = v else { return Ok(base) };
        let (fan_in, fan_out) = self.dims[l];
        let flat = tape.reshape(base, &[1, fan_in * fan_out])?;
        let blended = tape.matmul(v, self.shape[k][l])?;
        let sum = tape.add(flat, blended)?;
        tape.reshape(sum, &[fan_out, fan_in])
    }
}

/// `v_k^l = A_k^l(z_k)` for every layer, as plain vectors.
pub fn blend_coefficients(z: &[f32], bank: &NbwBank, k: usize) -> Result<Vec<Vec<f32>>> {
    if z.len() != LATENT_DIM {
        return Err(contract(format!(
            "latent has {} values, expected {LATENT_DIM}",
            z.len()
        )));
    }
    let mut tape = Tape::new();
    let vars = bank.record(&mut tape, false);
    let zv = tape.constant(Tensor::row(z));
    Ok(match vars.coefficients(&mut tape, k, zv)? {
        None => vec![Vec::new(); DECODER_LAYERS],
        Some(vs) => vs
            .into_iter()
            .map(|v| tape.value(v).data().to_vec())
            .collect(),
    })
}

/// `𝒲_k^l = W^l + Σ_r v[l][r]·W_k^l[r]` for every layer.
pub fn compose_weights(k: usize, v: &[Vec<f32>], bank: &NbwBank) -> Result<Vec<Tensor>> {
    if v.len() != bank.base.len() || v.iter().any(|vl| vl.len() != bank.rank) {
        return Err(contract(format!(
            "expected {} coefficient vectors of length {}",
            bank.base.len(),
            bank.rank
        )));
    }
    let mut tape = Tape::new();
    let vars = bank.record(&mut tape, false);
    (0..bank.base.len())
        .map(|l| {
            let vl = if bank.rank == 0 {
                None
            } else {
                Some(tape.constant(Tensor::row(&v[l])))
            };
            let w = vars.effective_weight(&mut tape, k, l, vl)?;
            Ok(tape.value(w).clone())
        })
        .collect()
}
