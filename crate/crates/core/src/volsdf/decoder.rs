//! Positional encoding and the per-part decoder MLP.
//!
//! The decoder input is `[γ(x), z]`. Because `z` is shared by every point of
//! a part, its contribution to layer 1 and to the skip layer is folded into
//! a per-part row bias `z·W_zᵀ + b`, so the per-point matrices only see the
//! encoded point (and the hidden state at the skip layer).

use std::f32::consts::PI;

use super::nbw::BankVars;
use super::{DecoderSpec, SKIP_LAYER};
use crate::encoder::LATENT_DIM;
use crate::error::{contract, Result};
use crate::numerics::{Axis, Tape, Tensor, Var};

/// `[x, sin(πx), cos(πx), sin(2πx), cos(2πx)]`, component-wise.
pub fn positional_encode(x: [f32; 3]) -> [f32; 15] {
    let mut out = [0.0; 15];
    out[..3].copy_from_slice(&x);
    for (level, scale) in [PI, 2.0 * PI].into_iter().enumerate() {
        for i in 0..3 {
            let a = x[i] * scale;
            out[3 + 6 * level + i] = a.sin();
            out[6 + 6 * level + i] = a.cos();
        }
    }
    out
}

pub(crate) fn encode_points(tape: &mut Tape, pts: Var, use_gamma: bool) -> Result<Var> {
    if !use_gamma {
        return Ok(pts);
    }
    let mut pieces = vec![pts];
    for scale in [PI, 2.0 * PI] {
        let a = tape.scale(pts, scale);
        pieces.push(tape.sin(a));
        pieces.push(tape.cos(a));
    }
    tape.concat(&pieces, Axis::Cols)
}

#[derive(Clone, Debug)]
pub enum Layer<T> {
    /// First layer: point weights plus the latent folded into a row bias.
    Input {
        w_pe: T,
        zb: T,
    },
    /// Skip layer: hidden-state weights, point weights, latent row bias.
    Skip {
        w_h: T,
        w_pe: T,
        zb: T,
    },
    Plain {
        w: T,
        b: T,
    },
}

/// Effective decoder weights of one part with its latent folded in.
#[derive(Clone, Debug)]
pub struct PartWeights<T> {
    pub layers: Vec<Layer<T>>,
    pub use_gamma: bool,
}

impl<T> PartWeights<T> {
    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> PartWeights<U> {
        let layers = self
            .layers
            .iter()
            .map(|layer| match layer {
                Layer::Input { w_pe, zb } => Layer::Input {
                    w_pe: f(w_pe),
                    zb: f(zb),
                },
                Layer::Skip { w_h, w_pe, zb } => Layer::Skip {
                    w_h: f(w_h),
                    w_pe: f(w_pe),
                    zb: f(zb),
                },
                Layer::Plain { w, b } => Layer::Plain { w: f(w), b: f(b) },
            })
            .collect();
        PartWeights {
            layers,
            use_gamma: self.use_gamma,
        }
    }
}

fn fold_latent(tape: &mut Tape, w: Var, z: Var, start: usize, bias: Var) -> Result<Var> {
    let w_z = tape.slice(w, Axis::Cols, start, LATENT_DIM)?;
    let zw = tape.matmul_t(z, false, w_z, true)?;
    tape.add(zw, bias)
}

/// Splits effective layer weights into the point/hidden/latent blocks and
/// folds the latent `z` (`1 × 128`) into row biases.
pub(crate) fn split_weights(
    tape: &mut Tape,
    spec: &DecoderSpec,
    weights: &[Var],
    biases: &[Var],
    z: Var,
) -> Result<PartWeights<Var>> {
    let pe = spec.pe_dim();
    let mut layers = Vec::with_capacity(weights.len());
    for (l, (&w, &b)) in weights.iter().zip(biases).enumerate() {
        let layer = match l + 1 {
            1 => {
                let w_pe = tape.slice(w, Axis::Cols, 0, pe)?;
                let zb = fold_latent(tape, w, z, pe, b)?;
                Layer::Input { w_pe, zb }
            }
            SKIP_LAYER => {
                let w_h = tape.slice(w, Axis::Cols, 0, spec.width)?;
                let w_pe = tape.slice(w, Axis::Cols, spec.width, pe)?;
                let zb = fold_latent(tape, w, z, spec.width + pe, b)?;
                Layer::Skip { w_h, w_pe, zb }
            }
            _ => Layer::Plain { w, b },
        };
        layers.push(layer);
    }
    Ok(PartWeights {
        layers,
        use_gamma: spec.use_gamma,
    })
}

/// Blends part `k`'s weights from its latent row `z` and folds `z` in.
pub(crate) fn compose_part(
    tape: &mut Tape,
    spec: &DecoderSpec,
    bank: &BankVars,
    k: usize,
    z: Var,
) -> Result<PartWeights<Var>> {
    let coefs = bank.coefficients(tape, k, z)?;
    let weights = (0..bank.base.len())
        .map(|l| bank.effective_weight(tape, k, l, coefs.as_ref().map(|c| c[l])))
        .collect::<Result<Vec<_>>>()?;
    let biases: Vec<Var> = bank.base.iter().map(|b| b.bias).collect();
    split_weights(tape, spec, &weights, &biases, z)
}

fn affine(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = tape.matmul_t(x, false, w, true)?;
    tape.add_row(y, b)
}

/// Decoder forward over canonical points `pts` (`n × 3`); returns `n × 1`.
pub(crate) fn decode_on_tape(tape: &mut Tape, pw: &PartWeights<Var>, pts: Var) -> Result<Var> {
    let g = encode_points(tape, pts, pw.use_gamma)?;
    let last = pw.layers.len() - 1;
    let mut h = None;
    for (l, layer) in pw.layers.iter().enumerate() {
        let pre = match (layer, h) {
            (Layer::Input { w_pe, zb }, _) => affine(tape, g, *w_pe, *zb)?,
            (Layer::Skip { w_h, w_pe, zb }, Some(hv)) => {
                let a = tape.matmul_t(hv, false, *w_h, true)?;
                let b = tape.matmul_t(g, false, *w_pe, true)?;
                let s = tape.add(a, b)?;
                tape.add_row(s, *zb)?
            }
            (Layer::Plain { w, b }, Some(hv)) => affine(tape, hv, *w, *b)?,
            _ => return Err(contract("decoder layer order is malformed")),
        };
        h = Some(if l == last { pre } else { tape.relu(pre) });
    }
    h.ok_or_else(|| contract("decoder has no layers"))
}

/// Decodes canonical points with explicit effective weights (`out × in`
/// per layer, e.g. from [`super::compose_weights`]) and shared biases.
pub fn decode_sdf(
    points: &[[f32; 3]],
    z: &[f32],
    weights: &[Tensor],
    biases: &[Tensor],
    spec: &DecoderSpec,
) -> Result<Vec<f32>> {
    let dims = spec.layer_dims();
    if weights.len() != dims.len() || biases.len() != dims.len() {
        return Err(contract(format!("expected {} layers", dims.len())));
    }
    for (l, (w, &(fan_in, fan_out))) in weights.iter().zip(&dims).enumerate() {
        if w.shape() != [fan_out, fan_in] {
            return Err(contract(format!(
                "layer {l}: weight {:?}, expected [{fan_out}, {fan_in}]",
                w.shape()
            )));
        }
    }
    if z.len() != LATENT_DIM {
        return Err(contract(format!("latent has {} values", z.len())));
    }
    if points.is_empty() {
        return Ok(Vec::new());
    }
    let mut tape = Tape::new();
    let ws: Vec<Var> = weights.iter().map(|w| tape.constant(w.clone())).collect();
    let bs: Vec<Var> = biases.iter().map(|b| tape.constant(b.clone())).collect();
    let zv = tape.constant(Tensor::row(z));
    let pw = split_weights(&mut tape, spec, &ws, &bs, zv)?;
    let pts = tape.constant(Tensor::from_rows(
        points.len(),
        3,
        points.iter().flatten().copied().collect(),
    ));
    let out = decode_on_tape(&mut tape, &pw, pts)?;
    Ok(tape.value(out).data().to_vec())
}
