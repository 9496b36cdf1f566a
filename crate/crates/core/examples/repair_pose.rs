//! Detects self-intersections on a shipped pose and repairs it by gradient
//! descent on the self-penetration loss.
//!
//! cargo run --release --example repair_pose <model.avsc> [pose.json] [prior weight] [lr]

use avsdf::body::Part;
use avsdf::cli::PoseFile;
use avsdf::interact::{detect_overlaps, resolve_selfpen, BodyField, RepairConfig};
use avsdf::training::load_checkpoint;

fn main() -> avsdf::Result<()> {
    let mut args = std::env::args().skip(1);
    let ckpt = load_checkpoint(
        args.next()
            .expect("usage: repair_pose <model.avsc> [pose.json] [prior] [lr]"),
    )?;
    let pose_path = args.next().unwrap_or_else(|| {
        concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/../../assets/poses/left_forearm_into_pelvis.json"
        )
        .to_string()
    });
    let d = RepairConfig::default();
    let cfg = RepairConfig {
        pose_prior_weight: args
            .next()
            .map(|s| s.parse().expect("prior weight"))
            .unwrap_or(d.pose_prior_weight),
        lr: args
            .next()
            .map(|s| s.parse().expect("learning rate"))
            .unwrap_or(d.lr),
        ..d
    };
    let pose = PoseFile::load(&pose_path)?;
    let mut field = BodyField::new(&ckpt.model, pose.shape()?, pose.theta);
    field.padding = ckpt.config.padding;
    field.cloud_points = ckpt.config.points_per_part;

    for r in detect_overlaps(&field.body()?) {
        println!(
            "overlap: {} / {}",
            Part::ALL[r.parts.0].name(),
            Part::ALL[r.parts.1].name()
        );
    }
    let (_, report) = resolve_selfpen(&field, &cfg)?;
    println!(
        "{:?} after {} iterations; |S| {:?} -> {:?}",
        report.status,
        report.iterations,
        report.sample_counts.first(),
        report.sample_counts.last()
    );
    println!(
        "capsule overlap {:.3e} -> {:.3e} m^3, largest joint change {:.4} rad",
        report.overlap_volume_initial, report.overlap_volume_final, report.max_joint_drift
    );
    Ok(())
}
