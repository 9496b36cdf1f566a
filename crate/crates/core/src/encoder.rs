//! Shared point-cloud encoder: per-point residual MLP, one global max-pool,
//! then an output layer giving one latent code per part.

use rand::Rng;

use crate::body::NUM_PARTS;
use crate::error::{contract, invalid, Result};
use crate::numerics::{Linear, LinearVars, Tape, Tensor, Var};

pub const LATENT_DIM: usize = 128;
pub const ENCODER_BLOCKS: usize = 4;

/// 128-d code describing one canonicalized part.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentCode {
    pub z: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderWeights {
    pub input: Linear,
    pub blocks: Vec<[Linear; 2]>,
    pub output: Linear,
}

/// Encoder weights recorded on a tape.
#[derive(Clone, Debug)]
pub struct EncoderVars {
    input: LinearVars,
    blocks: Vec<[LinearVars; 2]>,
    output: LinearVars,
}

impl EncoderWeights {
    pub fn new<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let input = Linear::kaiming(3, LATENT_DIM, rng);
        let blocks = (0..ENCODER_BLOCKS)
            .map(|_| {
                [
                    Linear::kaiming(LATENT_DIM, LATENT_DIM, rng),
                    Linear::kaiming(LATENT_DIM, LATENT_DIM, rng),
                ]
            })
            .collect();
        let output = Linear::kaiming(LATENT_DIM, LATENT_DIM, rng);
        Self {
            input,
            blocks,
            output,
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers().map(Linear::param_count).sum()
    }

    /// Input layer, block layers in order, output layer.
    pub fn layers(&self) -> impl Iterator<Item = &Linear> {
        std::iter::once(&self.input)
            .chain(self.blocks.iter().flatten())
            .chain(std::iter::once(&self.output))
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut Linear> {
        std::iter::once(&mut self.input)
            .chain(self.blocks.iter_mut().flatten())
            .chain(std::iter::once(&mut self.output))
    }

    pub fn record(&self, tape: &mut Tape, trainable: bool) -> EncoderVars {
        EncoderVars {
            input: self.input.record(tape, trainable),
            blocks: self
                .blocks
                .iter()
                .map(|[a, b]| [a.record(tape, trainable), b.record(tape, trainable)])
                .collect(),
            output: self.output.record(tape, trainable),
        }
    }
}

impl EncoderVars {
    /// All leaf variables in [`EncoderWeights::layers`] order, weight before bias.
    pub fn leaves(&self) -> Vec<Var> {
        std::iter::once(&self.input)
            .chain(self.blocks.iter().flatten())
            .chain(std::iter::once(&self.output))
            .flat_map(|l| [l.weight, l.bias])
            .collect()
    }

    /// `clouds` holds `g` clouds of `n` points stacked row-wise (`g·n × 3`);
    /// returns `g × 128`.
    pub fn encode(&self, tape: &mut Tape, clouds: Var, n: usize) -> Result<Var> {
        let mut h = self.input.apply(tape, clouds)?;
        for [a, b] in &self.blocks {
            let t = a.apply(tape, h)?;
            let t = tape.relu(t);
            let t = b.apply(tape, t)?;
            let t = tape.add(t, h)?;
            h = tape.relu(t);
        }
        let pooled = tape.max_pool_groups(h, n)?;
        self.output.apply(tape, pooled)
    }
}

fn cloud_tensor(clouds: &[&[[f32; 3]]]) -> Result<Tensor> {
    let total: usize = clouds.iter().map(|c| c.len()).sum();
    let mut data = Vec::with_capacity(total * 3);
    for c in clouds {
        for p in *c {
            if p.iter().any(|v| !v.is_finite()) {
                return Err(invalid("cloud contains a non-finite point"));
            }
            data.extend_from_slice(p);
        }
    }
    Ok(Tensor::from_rows(total, 3, data))
}

pub fn encode_part(cloud: &[[f32; 3]], w: &EncoderWeights) -> Result<LatentCode> {
    if cloud.is_empty() {
        return Err(invalid("cannot encode an empty cloud"));
    }
    let mut tape = Tape::new();
    let vars = w.record(&mut tape, false);
    let x = tape.constant(cloud_tensor(&[cloud])?);
    let z = vars.encode(&mut tape, x, cloud.len())?;
    Ok(LatentCode {
        z: tape.value(z).data().to_vec(),
    })
}

/// Encodes all parts in one stacked forward pass (clouds of equal size) or
/// part by part otherwise.
pub fn encode_body(clouds: &[Vec<[f32; 3]>], w: &EncoderWeights) -> Result<Vec<LatentCode>> {
    if clouds.len() != NUM_PARTS {
        return Err(contract(format!(
            "expected {NUM_PARTS} part clouds, got {}",
            clouds.len()
        )));
    }
    let n = clouds[0].len();
    if n == 0 || clouds.iter().any(|c| c.len() != n) {
        return clouds.iter().map(|c| encode_part(c, w)).collect();
    }
    let t = latents_tensor_from(clouds, w)?;
    Ok((0..NUM_PARTS)
        .map(|k| LatentCode {
            z: t.row_slice(k).to_vec(),
        })
        .collect())
}

fn latents_tensor_from(clouds: &[Vec<[f32; 3]>], w: &EncoderWeights) -> Result<Tensor> {
    let mut tape = Tape::new();
    let vars = w.record(&mut tape, false);
    let refs: Vec<&[[f32; 3]]> = clouds.iter().map(|c| c.as_slice()).collect();
    let x = tape.constant(cloud_tensor(&refs)?);
    let z = vars.encode(&mut tape, x, clouds[0].len())?;
    Ok(tape.value(z).clone())
}

/// Stacks latent codes into a `K × 128` tensor.
pub fn stack_latents(latents: &[LatentCode]) -> Tensor {
    let data = latents.iter().flat_map(|l| l.z.iter().copied()).collect();
    Tensor::from_rows(latents.len(), LATENT_DIM, data)
}

/// Stacked equal-size clouds as one `K·n × 3` tensor.
pub fn stack_clouds(clouds: &[Vec<[f32; 3]>]) -> Result<Tensor> {
    let refs: Vec<&[[f32; 3]]> = clouds.iter().map(|c| c.as_slice()).collect();
    cloud_tensor(&refs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<[f32; 3]> {
        (0..n)
            .map(|_| {
                [
                    rng.gen_range(-0.3..0.3),
                    rng.gen_range(-0.3..0.3),
                    rng.gen_range(-0.3..0.3),
                ]
            })
            .collect()
    }

    #[test]
    fn permutation_and_duplication_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = EncoderWeights::new(&mut rng);
        let cloud = random_cloud(&mut rng, 64);
        let z = encode_part(&cloud, &w).unwrap();
        let mut shuffled = cloud.clone();
        shuffled.shuffle(&mut rng);
        assert_eq!(encode_part(&shuffled, &w).unwrap(), z);
        let doubled: Vec<_> = cloud.iter().flat_map(|p| [*p, *p]).collect();
        assert_eq!(encode_part(&doubled, &w).unwrap(), z);
    }

    #[test]
    fn single_point_cloud_skips_pooling() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let w = EncoderWeights::new(&mut rng);
        let p = [0.1f32, -0.2, 0.05];
        let z = encode_part(&[p], &w).unwrap();
        let lin = |l: &Linear, x: &[f32]| -> Vec<f32> {
            (0..l.fan_out())
                .map(|o| {
                    let dot: f32 = (0..l.fan_in()).map(|i| l.weight.at(o, i) * x[i]).sum();
                    dot + l.bias.data()[o]
                })
                .collect()
        };
        let relu = |v: Vec<f32>| v.into_iter().map(|x| x.max(0.0)).collect::<Vec<_>>();
        let mut h = lin(&w.input, &p);
        for [a, b] in &w.blocks {
            let t = lin(b, &relu(lin(a, &h)));
            h = relu(t.iter().zip(&h).map(|(x, y)| x + y).collect());
        }
        let want = lin(&w.output, &h);
        for (a, b) in z.z.iter().zip(&want) {
            assert!((a - b).abs() <= 1e-4 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn batched_body_equals_per_part_and_shares_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let w = EncoderWeights::new(&mut rng);
        let mut clouds: Vec<_> = (0..NUM_PARTS).map(|_| random_cloud(&mut rng, 40)).collect();
        clouds[9] = clouds[2].clone();
        let body = encode_body(&clouds, &w).unwrap();
        for (k, c) in clouds.iter().enumerate() {
            assert_eq!(body[k], encode_part(c, &w).unwrap(), "part {k}");
        }
        assert_eq!(body[2], body[9]);
        assert!(encode_body(&clouds[..14], &w).is_err());
    }

    #[test]
    fn rejects_non_finite_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let w = EncoderWeights::new(&mut rng);
        assert!(encode_part(&[[f32::NAN, 0.0, 0.0]], &w).is_err());
        assert!(encode_part(&[], &w).is_err());
    }

    /// `f64` forward of one cloud; relu and pooling winners go into `sig`.
    fn reference_z(w: &EncoderWeights, cloud: &[f64], sig: &mut Vec<usize>) -> Vec<f64> {
        let lin = |l: &Linear, x: &[f64]| -> Vec<f64> {
            (0..l.fan_out())
                .map(|o| {
                    l.bias.data()[o] as f64
                        + (0..l.fan_in())
                            .map(|i| l.weight.at(o, i) as f64 * x[i])
                            .sum::<f64>()
                })
                .collect()
        };
        let relu = |v: Vec<f64>, sig: &mut Vec<usize>| {
            v.into_iter()
                .map(|x| {
                    sig.push((x > 0.0) as usize);
                    x.max(0.0)
                })
                .collect::<Vec<_>>()
        };
        let mut pooled = vec![f64::NEG_INFINITY; LATENT_DIM];
        let mut arg = vec![0; LATENT_DIM];
        for (n, p) in cloud.chunks(3).enumerate() {
            let mut h = lin(&w.input, p);
            for [a, b] in &w.blocks {
                let t = relu(lin(a, &h), sig);
                let t = lin(b, &t);
                h = relu(t.iter().zip(&h).map(|(x, y)| x + y).collect(), sig);
            }
            for j in 0..LATENT_DIM {
                if h[j] > pooled[j] {
                    pooled[j] = h[j];
                    arg[j] = n;
                }
            }
        }
        sig.extend(arg);
        lin(&w.output, &pooled)
    }

    #[test]
    fn latent_gradient_stays_within_its_part() {
        use crate::numerics::{check_direction, mixed_direction};
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = EncoderWeights::new(&mut rng);
        let n = 6;
        let mut checked = 0;
        for _ in 0..40 {
            let clouds: Vec<_> = (0..NUM_PARTS).map(|_| random_cloud(&mut rng, n)).collect();
            let mut tape = Tape::new();
            let vars = w.record(&mut tape, false);
            let x = tape.var(stack_clouds(&clouds).unwrap());
            let z = vars.encode(&mut tape, x, n).unwrap();
            let z3 = tape.slice(z, crate::numerics::Axis::Rows, 3, 1).unwrap();
            let sq = tape.square(z3);
            let obj = tape.sum(sq);
            let g = tape.backward(obj).unwrap();
            let gx = g.get(x);
            assert!((0..NUM_PARTS * n)
                .filter(|r| r / n != 3)
                .all(|r| gx.row_slice(r).iter().all(|v| *v == 0.0)));
            let grad: Vec<f64> = (3 * n..4 * n)
                .flat_map(|r| {
                    gx.row_slice(r)
                        .iter()
                        .map(|&v| v as f64)
                        .collect::<Vec<_>>()
                })
                .collect();
            let x0: Vec<f64> = clouds[3].iter().flatten().map(|&v| v as f64).collect();
            let dir = mixed_direction(&grad, &mut rng);
            let f = |y: &[f64]| {
                let mut sig = Vec::new();
                let z = reference_z(&w, y, &mut sig);
                let h = sig.iter().fold(0u64, |acc, &b| {
                    acc.wrapping_mul(1_000_003).wrapping_add(b as u64)
                });
                Ok((z.iter().map(|v| v * v).sum(), h))
            };
            if let Some(c) = check_direction(f, &x0, &grad, &dir, 1e-5).unwrap() {
                assert!(c.rel_err() <= 1e-3, "{c:?}");
                checked += 1;
            }
        }
        assert!(checked >= 20, "{checked}");
    }

    #[test]
    fn parameter_count_is_fixed() {
        let w = EncoderWeights::new(&mut ChaCha8Rng::seed_from_u64(0));
        let lin = |i: usize, o: usize| i * o + o;
        assert_eq!(
            w.param_count(),
            lin(3, 128) + 8 * lin(128, 128) + lin(128, 128)
        );
    }
}
