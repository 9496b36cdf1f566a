//! The neural part of the model: blended per-part decoder weights, the
//! decoder itself and the hybrid box/decoder query engine.

mod decoder;
mod nbw;
mod query;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use decoder::{decode_sdf, positional_encode, Layer, PartWeights};
pub use nbw::{blend_coefficients, compose_weights, BankVars, NbwBank};
pub use query::{
    implicit_sdf, query, query_with, record_query, Branch, PreparedModel, QueryCotangent,
    QueryGraph, QueryMode, RecordOptions, SdfResult,
};

use crate::body::{Vec3, NUM_PARTS};
use crate::encoder::{encode_body, stack_latents, EncoderVars, EncoderWeights, LATENT_DIM};
use crate::error::{invalid, Result};
use crate::numerics::{Tape, Tensor, Var};

pub const DECODER_LAYERS: usize = 7;
/// 1-based index of the layer that re-reads the decoder input.
pub const SKIP_LAYER: usize = 3;
pub const DEFAULT_WIDTH: usize = 64;
pub const DEFAULT_RANK: usize = 80;
pub const MAX_RANK: usize = 80;

/// Decoder shape. Everything else about the network is fixed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderSpec {
    pub width: usize,
    /// Number of blended shape matrices per layer; 0 gives a plain MLP.
    pub rank: usize,
    /// Two-level sin/cos lift of the canonical point.
    pub use_gamma: bool,
}

impl Default for DecoderSpec {
    fn default() -> Self {
        Self {
            width: DEFAULT_WIDTH,
            rank: DEFAULT_RANK,
            use_gamma: true,
        }
    }
}

impl DecoderSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 {
            return Err(invalid("decoder width must be positive"));
        }
        if self.rank > MAX_RANK {
            return Err(invalid(format!("rank {} exceeds {MAX_RANK}", self.rank)));
        }
        Ok(())
    }

    pub fn pe_dim(&self) -> usize {
        if self.use_gamma {
            15
        } else {
            3
        }
    }

    pub fn input_dim(&self) -> usize {
        self.pe_dim() + LATENT_DIM
    }

    /// `(fan_in, fan_out)` of layers 1..=7.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        (1..=DECODER_LAYERS)
            .map(|l| {
                let fan_in = match l {
                    1 => self.input_dim(),
                    SKIP_LAYER => self.width + self.input_dim(),
                    _ => self.width,
                };
                let fan_out = if l == DECODER_LAYERS { 1 } else { self.width };
                (fan_in, fan_out)
            })
            .collect()
    }

    pub fn decoder_weight_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o).sum()
    }

    pub fn decoder_bias_count(&self) -> usize {
        self.layer_dims().iter().map(|(_, o)| o).sum()
    }

    /// Base decoder, per-part shape banks and per-part coefficient maps.
    pub fn bank_param_count(&self) -> usize {
        let base = self.decoder_weight_count() + self.decoder_bias_count();
        let shape = NUM_PARTS * self.rank * self.decoder_weight_count();
        let coef = NUM_PARTS * DECODER_LAYERS * (LATENT_DIM * self.rank + self.rank);
        base + shape + coef
    }
}

/// All trainable tensors of the model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub spec: DecoderSpec,
    pub encoder: EncoderWeights,
    pub bank: NbwBank,
}

/// A [`ModelParams`] recorded on a tape.
pub struct ModelVars {
    pub encoder: EncoderVars,
    pub bank: BankVars,
}

impl ModelParams {
    pub fn new<R: Rng + ?Sized>(spec: DecoderSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let encoder = EncoderWeights::new(rng);
        let bank = NbwBank::new(&spec, rng);
        Ok(Self {
            spec,
            encoder,
            bank,
        })
    }

    pub fn param_count(&self) -> usize {
        self.encoder.param_count() + self.bank.param_count()
    }

    /// Stable tensor names, in [`ModelParams::tensors`] order.
    pub fn tensor_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        let n_enc = self.encoder.layers().count();
        for i in 0..n_enc {
            names.push(format!("encoder.{i}.weight"));
            names.push(format!("encoder.{i}.bias"));
        }
        names.extend(self.bank.tensor_names());
        names
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = self
            .encoder
            .layers()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect();
        out.extend(self.bank.tensors());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = self
            .encoder
            .layers_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect();
        out.extend(self.bank.tensors_mut());
        out
    }

    pub fn record(&self, tape: &mut Tape, trainable: bool) -> ModelVars {
        ModelVars {
            encoder: self.encoder.record(tape, trainable),
            bank: self.bank.record(tape, trainable),
        }
    }

    /// `K × 128` latent codes of canonical part clouds.
    pub fn latents(&self, clouds: &[Vec<[f32; 3]>]) -> Result<Tensor> {
        Ok(stack_latents(&encode_body(clouds, &self.encoder)?))
    }

    /// Query shortcut: encode, prepare, evaluate distances.
    pub fn sdf(
        &self,
        clouds: &[Vec<[f32; 3]>],
        body: &crate::body::BodyState,
        points: &[Vec3],
    ) -> Result<Vec<f64>> {
        let latents = self.latents(clouds)?;
        let prepared = PreparedModel::new(self, &latents)?;
        Ok(prepared
            .query(body, points)?
            .into_iter()
            .map(|r| r.distance)
            .collect())
    }
}

impl ModelVars {
    /// Leaves in [`ModelParams::tensors`] order.
    pub fn leaves(&self) -> Vec<Var> {
        let mut out = self.encoder.leaves();
        out.extend(self.bank.leaves());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decoder_dimensions_and_counts() {
        let spec = DecoderSpec::default();
        assert_eq!(spec.input_dim(), 143);
        assert_eq!(
            spec.layer_dims(),
            vec![
                (143, 64),
                (64, 64),
                (207, 64),
                (64, 64),
                (64, 64),
                (64, 64),
                (64, 1)
            ]
        );
        assert_eq!(spec.decoder_weight_count(), 38_848);
        assert_eq!(spec.decoder_bias_count(), 385);
        let plain = DecoderSpec {
            use_gamma: false,
            ..spec
        };
        assert_eq!(plain.input_dim(), 131);
    }

    #[test]
    fn parameter_counts_grow_with_rank() {
        let base = DecoderSpec {
            rank: 0,
            ..Default::default()
        };
        let full = DecoderSpec::default();
        assert_eq!(base.bank_param_count(), 38_848 + 385);
        assert_eq!(
            full.bank_param_count() - base.bank_param_count(),
            15 * 80 * 38_848 + 105 * (128 * 80 + 80)
        );
        assert!(DecoderSpec { rank: 81, ..full }.validate().is_err());
    }

    #[test]
    fn tensor_names_align_with_tensors() {
        let spec = DecoderSpec {
            width: 8,
            rank: 2,
            use_gamma: true,
        };
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(1);
        let m = ModelParams::new(spec, &mut rng).unwrap();
        assert_eq!(m.tensor_names().len(), m.tensors().len());
        let counted: usize = m.tensors().iter().map(|t| t.len()).sum();
        assert_eq!(counted, m.param_count());
        assert_eq!(m.bank.param_count(), spec.bank_param_count());
    }
}
