//! Queries a model in its three dispatch modes and times them on the
//! standard half-far, half-near point mix.
//!
//! cargo run --release --example hybrid_query [model.avsc]

use std::time::Instant;

use avsdf::body::{random_shape, PoseParams};
use avsdf::cli::bench_mix;
use avsdf::interact::BodyField;
use avsdf::training::{load_checkpoint, TrainConfig};
use avsdf::volsdf::{Branch, ModelParams, QueryMode};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> avsdf::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    // Timing and dispatch do not depend on training, so a fresh model will do.
    let (model, config) = match std::env::args().nth(1) {
        Some(p) => {
            let c = load_checkpoint(p)?;
            (c.model, c.config)
        }
        None => {
            let c = TrainConfig::default();
            (ModelParams::new(c.spec(), &mut rng)?, c)
        }
    };
    let mut field = BodyField::new(
        &model,
        random_shape(&mut rng),
        PoseParams::random(&mut rng, 0.9),
    );
    field.padding = config.padding;
    field.cloud_points = config.points_per_part;
    let (body, prepared) = field.prepare()?;
    let points = bench_mix(&body, 60_000, &mut rng)?;

    for mode in [QueryMode::Hybrid, QueryMode::FullK, QueryMode::ImplicitOnly] {
        prepared.query_with(&body, &points, mode)?;
        let t = Instant::now();
        let out = prepared.query_with(&body, &points, mode)?;
        let ms = t.elapsed().as_secs_f64() * 1e3;
        let analytic = out.iter().filter(|r| r.branch == Branch::Analytic).count();
        let clamped = out.iter().filter(|r| r.clamped).count();
        println!("{mode:?}: {ms:8.1} ms  analytic {analytic:>6}  clamped {clamped:>5}");
    }
    Ok(())
}
