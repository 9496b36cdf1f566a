//! Fits a small model to one body shape over random poses, then reports
//! IoU and distance errors against the exact capsule distance.
//!
//! cargo run --release --example train_and_eval [steps] [out.avsc]

use avsdf::body::{PoseParams, ShapeParams};
use avsdf::training::{evaluate_model, fit, save_checkpoint, FitEvent, TrainBodies, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> avsdf::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: u64 = args
        .next()
        .map(|s| s.parse().expect("step count"))
        .unwrap_or(400);
    let config = TrainConfig {
        batch_size: 1,
        total_steps: steps,
        rank: 8,
        points_per_part: 100,
        lr_start: 1e-3,
        lr_end: 1e-4,
        joint_range: 1.2,
        bodies: TrainBodies::FixedShape {
            beta: ShapeParams::zero(),
        },
        ..TrainConfig::default()
    };
    let every = (steps / 10).max(1);
    let ckpt = fit(config.clone(), |ev| {
        if let FitEvent::Step(s) = ev {
            if s.step % every == 0 {
                println!("step {:>6}  loss {:.5}  lr {:.1e}", s.step, s.loss, s.lr);
            }
        }
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..3 {
        let theta = PoseParams::random(&mut rng, 0.9);
        let r = evaluate_model(
            &ckpt.model,
            &ShapeParams::zero(),
            &theta,
            config.padding,
            config.points_per_part,
            &mut rng,
        )?;
        println!(
            "IoU {:.2}% (surface {:.2}%, uniform {:.2}%)  SDF MSE {:.2e}  |SDF| MSE {:.2e}",
            r.iou_mean, r.iou_surf, r.iou_unif, r.mse_sdf, r.mse_abs_sdf
        );
    }
    if let Some(out) = args.next() {
        save_checkpoint(&out, &ckpt)?;
        println!("saved {out}");
    }
    Ok(())
}
