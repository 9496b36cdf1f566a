//! Poses the synthetic body and inspects its parts, boxes and distances.
//!
//! cargo run --example pose_body

use avsdf::body::{analytic_box_sdf, forward_kinematics, Part, PoseParams, ShapeParams, NUM_PARTS};
use avsdf::oracle::gt_sdf;

fn main() -> avsdf::Result<()> {
    let mut beta = [0.0; 10];
    beta[0] = 1.5;
    let mut theta = PoseParams::rest();
    theta.joint_rotations[Part::LeftForearm.index()] = [0.0, 0.0, 1.2];
    theta.joint_rotations[Part::RightThigh.index()] = [-0.6, 0.0, 0.0];
    let body = forward_kinematics(&ShapeParams::new(beta)?, &theta)?;

    println!(
        "{:<16} {:>8} {:>8}  world center",
        "part", "length", "radius"
    );
    let caps = body.world_capsules().expect("synthetic body");
    for (k, c) in caps.iter().enumerate() {
        let mid: Vec<String> = (0..3)
            .map(|i| format!("{:+.3}", 0.5 * (c.a[i] + c.b[i])))
            .collect();
        println!(
            "{:<16} {:>8.3} {:>8.3}  [{}]",
            Part::ALL[k].name(),
            c.length(),
            c.radius,
            mid.join(", ")
        );
    }

    let (lo, hi) = body.world_bounds();
    println!("\nworld bounds {lo:.3?} .. {hi:.3?}");
    for x in [
        [0.0, 0.0, 0.0],
        [0.0, 0.35, 0.05],
        [0.8, 0.0, 0.0],
        [0.0, 3.0, 0.0],
    ] {
        let b = analytic_box_sdf(x, &body);
        println!(
            "x = {x:?}: exact {:+.4} m, box bound {:+.4} m (part {}, inside box: {}), in {} boxes",
            gt_sdf(x, &body)?,
            b.distance,
            b.part,
            b.inside_box,
            body.containing_parts(x).len()
        );
    }
    println!(
        "\n{} kinematically adjacent pairs among {NUM_PARTS} parts",
        body.adjacency.len()
    );
    Ok(())
}
