//! Pushes an interpenetrating point cloud out of the body with Adam steps on
//! the collision loss.
//!
//! cargo run --release --example collision_points [model.avsc]

use avsdf::body::{PoseParams, ShapeParams, Vec3};
use avsdf::interact::{collision_loss, BodyField};
use avsdf::numerics::{adam_step, AdamState, Tensor};
use avsdf::training::{fit, load_checkpoint, TrainBodies, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> avsdf::Result<()> {
    let ckpt = match std::env::args().nth(1) {
        Some(p) => load_checkpoint(p)?,
        None => {
            println!("no checkpoint given; fitting a small one");
            fit(
                TrainConfig {
                    batch_size: 1,
                    total_steps: 300,
                    rank: 4,
                    points_per_part: 100,
                    lr_start: 1e-3,
                    bodies: TrainBodies::FixedShape {
                        beta: ShapeParams::zero(),
                    },
                    ..TrainConfig::default()
                },
                |_| {},
            )?
        }
    };
    let mut field = BodyField::new(&ckpt.model, ShapeParams::zero(), PoseParams::rest());
    field.padding = ckpt.config.padding;
    field.cloud_points = ckpt.config.points_per_part;

    // A ball of points around the chest, half of them inside the torso.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 400;
    let cloud: Vec<f32> = (0..n)
        .flat_map(|_| {
            [
                rng.gen_range(-0.15..0.15f32),
                rng.gen_range(0.2..0.45f32),
                rng.gen_range(-0.15..0.15f32),
            ]
        })
        .collect();
    let mut params = [Tensor::from_rows(n, 3, cloud)];
    let mut adam = AdamState::new(&params);
    for it in 0..=60 {
        let pts: Vec<Vec3> = params[0]
            .data()
            .chunks(3)
            .map(|c| [c[0] as f64, c[1] as f64, c[2] as f64])
            .collect();
        let g = collision_loss(&field, &pts, 1.0)?;
        if it % 10 == 0 {
            let inside = g.distances.iter().filter(|d| **d < 0.0).count();
            println!(
                "iter {it:>3}  loss {:.5} m  points inside {inside}",
                g.value
            );
        }
        let grad = Tensor::from_rows(
            n,
            3,
            g.d_points.iter().flatten().map(|&v| v as f32).collect(),
        );
        adam_step(&mut params, &[grad], &mut adam, 5e-3)?;
    }
    Ok(())
}
