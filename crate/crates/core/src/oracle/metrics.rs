use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{sample_in_box_union, sample_near_surface, CapsuleUnion, SURFACE_NOISE};
use crate::body::{BodyState, Vec3};
use crate::error::{contract, Result};

pub const EVAL_UNIFORM: usize = 30_000;
pub const EVAL_NEAR_PER_PART: usize = 2000;

/// Occupancy IoU (percent) and distance errors (m²) of a predicted field.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub iou_mean: f64,
    pub iou_surf: f64,
    pub iou_unif: f64,
    pub mse_sdf: f64,
    pub mse_abs_sdf: f64,
    /// Wall time of the prediction calls, milliseconds.
    pub query_time: f64,
    pub points_evaluated: usize,
}

/// IoU of the sets `{pred < 0}` and `{gt < 0}`, in percent; 100 when both
/// are empty.
pub fn iou(pred: &[f64], gt: &[f64]) -> f64 {
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&p, &g) in pred.iter().zip(gt) {
        let (a, b) = (p < 0.0, g < 0.0);
        inter += (a && b) as usize;
        union += (a || b) as usize;
    }
    if union == 0 {
        100.0
    } else {
        100.0 * inter as f64 / union as f64
    }
}

/// Scores a field on labeled uniform and near-surface samples.
pub fn evaluate_samples<F>(
    mut model_sdf: F,
    uniform: &[(Vec3, f64)],
    near: &[(Vec3, f64)],
) -> Result<EvalReport>
where
    F: FnMut(&[Vec3]) -> Result<Vec<f64>>,
{
    let mut elapsed = 0.0;
    let mut predict = |set: &[(Vec3, f64)]| -> Result<Vec<f64>> {
        let pts: Vec<Vec3> = set.iter().map(|s| s.0).collect();
        let t = Instant::now();
        let out = model_sdf(&pts)?;
        elapsed += t.elapsed().as_secs_f64() * 1e3;
        if out.len() != pts.len() {
            return Err(contract(format!(
                "field returned {} values for {} points",
                out.len(),
                pts.len()
            )));
        }
        Ok(out)
    };
    let pu = predict(uniform)?;
    let pn = predict(near)?;
    let gu: Vec<f64> = uniform.iter().map(|s| s.1).collect();
    let gn: Vec<f64> = near.iter().map(|s| s.1).collect();
    let iou_unif = iou(&pu, &gu);
    let iou_surf = iou(&pn, &gn);
    let n = uniform.len() + near.len();
    let (mut se, mut sa) = (0.0, 0.0);
    for (p, g) in pu.iter().chain(&pn).zip(gu.iter().chain(&gn)) {
        se += (p - g) * (p - g);
        sa += (p.abs() - g.abs()) * (p.abs() - g.abs());
    }
    let denom = n.max(1) as f64;
    Ok(EvalReport {
        iou_mean: 0.5 * (iou_surf + iou_unif),
        iou_surf,
        iou_unif,
        mse_sdf: se / denom,
        mse_abs_sdf: sa / denom,
        query_time: elapsed,
        points_evaluated: n,
    })
}

/// Labeled evaluation sets: uniform in the union of padded boxes, then
/// near-surface points spread evenly over parts.
pub fn eval_samples<R: Rng + ?Sized>(
    body: &BodyState,
    rng: &mut R,
) -> Result<(Vec<(Vec3, f64)>, Vec<(Vec3, f64)>)> {
    let gt = CapsuleUnion::from_body(body)?;
    let uniform = (0..EVAL_UNIFORM)
        .map(|_| {
            let x = sample_in_box_union(body, rng);
            (x, gt.sdf(x))
        })
        .collect();
    let mut near = Vec::with_capacity(EVAL_NEAR_PER_PART * body.num_parts());
    for k in 0..body.num_parts() {
        for _ in 0..EVAL_NEAR_PER_PART {
            let x = sample_near_surface(body, k, SURFACE_NOISE, rng)?;
            near.push((x, gt.sdf(x)));
        }
    }
    Ok((uniform, near))
}

/// 30k uniform plus 30k near-surface points against the exact distance.
pub fn evaluate<F, R>(model_sdf: F, body: &BodyState, rng: &mut R) -> Result<EvalReport>
where
    F: FnMut(&[Vec3]) -> Result<Vec<f64>>,
    R: Rng + ?Sized,
{
    let (uniform, near) = eval_samples(body, rng)?;
    evaluate_samples(model_sdf, &uniform, &near)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::{forward_kinematics, PoseParams, ShapeParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (BodyState, CapsuleUnion) {
        let body = forward_kinematics(
            &ShapeParams::zero(),
            &PoseParams::random(&mut ChaCha8Rng::seed_from_u64(1), 0.5),
        )
        .unwrap();
        let gt = CapsuleUnion::from_body(&body).unwrap();
        (body, gt)
    }

    #[test]
    fn iou_edge_cases() {
        assert_eq!(iou(&[1.0, 2.0], &[3.0, 4.0]), 100.0);
        assert_eq!(iou(&[-1.0, 2.0], &[-1.0, -2.0]), 50.0);
        assert_eq!(iou(&[1.0], &[-1.0]), 0.0);
    }

    #[test]
    fn self_comparison_is_perfect_and_deterministic() {
        let (body, gt) = setup();
        let field = |p: &[Vec3]| Ok(p.iter().map(|&x| gt.sdf(x)).collect());
        let r = evaluate(field, &body, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!((r.iou_mean, r.iou_surf, r.iou_unif), (100.0, 100.0, 100.0));
        assert_eq!((r.mse_sdf, r.mse_abs_sdf), (0.0, 0.0));
        assert_eq!(r.points_evaluated, 60_000);
        let again = evaluate(field, &body, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!((again.iou_mean, again.mse_sdf), (r.iou_mean, r.mse_sdf));
    }

    #[test]
    fn offset_and_sign_flip() {
        let (body, gt) = setup();
        let (u, n) = eval_samples(&body, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let shifted = evaluate_samples(
            |p| Ok(p.iter().map(|&x| gt.sdf(x) + 0.01).collect()),
            &u,
            &n,
        )
        .unwrap();
        assert!(
            (shifted.mse_sdf - 1e-4).abs() < 1e-12,
            "{}",
            shifted.mse_sdf
        );
        assert!(shifted.iou_mean < 100.0);
        let flipped =
            evaluate_samples(|p| Ok(p.iter().map(|&x| -gt.sdf(x)).collect()), &u, &n).unwrap();
        assert_eq!(flipped.mse_abs_sdf, 0.0);
        assert!(flipped.iou_mean < 50.0);
    }

    #[test]
    fn report_serializes_with_stable_names() {
        let r = EvalReport {
            iou_mean: 1.0,
            iou_surf: 1.0,
            iou_unif: 1.0,
            mse_sdf: 0.0,
            mse_abs_sdf: 0.0,
            query_time: 0.0,
            points_evaluated: 3,
        };
        let v: serde_json::Value = serde_json::to_value(r).unwrap();
        for key in [
            "iou_mean",
            "iou_surf",
            "iou_unif",
            "mse_sdf",
            "mse_abs_sdf",
            "query_time",
            "points_evaluated",
        ] {
            assert!(v.get(key).is_some(), "{key}");
        }
    }
}
