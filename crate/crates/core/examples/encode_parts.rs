//! Samples canonical part clouds and encodes them into latent codes.
//!
//! cargo run --example encode_parts

use avsdf::body::{forward_kinematics, random_shape, Part, PoseParams};
use avsdf::encoder::{encode_body, encode_part, EncoderWeights};
use avsdf::oracle::{clouds_to_f32, sample_surface};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> avsdf::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let weights = EncoderWeights::new(&mut rng);
    println!("encoder parameters: {}", weights.param_count());

    let beta = random_shape(&mut rng);
    let body = forward_kinematics(&beta, &PoseParams::random(&mut rng, 0.9))?;
    let clouds = clouds_to_f32(&sample_surface(&body, 500, &mut rng)?);
    let codes = encode_body(&clouds, &weights)?;
    for (k, z) in codes.iter().enumerate().take(5) {
        let norm = z.z.iter().map(|v| v * v).sum::<f32>().sqrt();
        println!(
            "{:<16} |z| = {norm:.4}  z[..4] = {:.4?}",
            Part::ALL[k].name(),
            &z.z[..4]
        );
    }

    // Clouds are canonical, so the code ignores the pose and the point order.
    let other = forward_kinematics(&beta, &PoseParams::random(&mut rng, 0.9))?;
    let again = clouds_to_f32(&sample_surface(
        &other,
        500,
        &mut ChaCha8Rng::seed_from_u64(99),
    )?);
    let mut shuffled = again[Part::Head.index()].clone();
    shuffled.shuffle(&mut rng);
    let a = encode_part(&again[Part::Head.index()], &weights)?;
    let b = encode_part(&shuffled, &weights)?;
    println!("head code unchanged by shuffling: {}", a == b);
    Ok(())
}
