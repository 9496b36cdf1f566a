//! Randomized invariants across modules.

mod common;

use avsdf::body::{
    analytic_box_sdf, forward_kinematics, sub3, BodyState, Capsule, PoseParams, Rigid, ShapeParams,
    Vec3, BETA_LEN, NUM_PARTS,
};
use avsdf::encoder::{encode_part, EncoderWeights};
use avsdf::interact::{collision_loss, detect_overlaps, BodyField};
use avsdf::numerics::{Axis, Tape, Tensor};
use avsdf::oracle::{gt_sdf, sample_surface_detailed};
use avsdf::training::loss;
use avsdf::volsdf::{Branch, PreparedModel};
use common::small_model;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn body_from(beta: [f64; BETA_LEN], theta_seed: u64, padding: f64) -> BodyState {
    let theta = PoseParams::random(&mut ChaCha8Rng::seed_from_u64(theta_seed), 1.0);
    forward_kinematics(&ShapeParams::new(beta).unwrap(), &theta)
        .unwrap()
        .with_padding(padding)
        .unwrap()
}

fn beta() -> impl Strategy<Value = [f64; BETA_LEN]> {
    prop::array::uniform10(-2.5f64..2.5)
}

fn unit_point() -> impl Strategy<Value = Vec3> {
    prop::array::uniform3(-1.2f64..1.2)
}

/// Closest-point distance from `p` to a segment, written out independently.
fn segment_distance(c: &Capsule, p: Vec3) -> f64 {
    let ab = sub3(c.b, c.a);
    let ap = sub3(p, c.a);
    let len2: f64 = ab.iter().map(|v| v * v).sum();
    let t = if len2 == 0.0 {
        0.0
    } else {
        (ab.iter().zip(&ap).map(|(x, y)| x * y).sum::<f64>() / len2).clamp(0.0, 1.0)
    };
    (0..3)
        .map(|i| (ap[i] - t * ab[i]).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Segment-to-segment distance by dense parameter search; fine enough to
/// decide intersection with a margin.
fn segments_gap(a: &Capsule, b: &Capsule) -> f64 {
    (0..=200)
        .map(|i| {
            let t = i as f64 / 200.0;
            let p: Vec3 = std::array::from_fn(|k| a.a[k] + t * (a.b[k] - a.a[k]));
            segment_distance(b, p)
        })
        .fold(f64::INFINITY, f64::min)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    #[test]
    fn canonical_coordinates_ignore_global_motion(
        b in beta(), seed in any::<u64>(), w in prop::array::uniform3(-3.0f64..3.0),
        t in prop::array::uniform3(-2.0f64..2.0), x in unit_point(),
    ) {
        let body = body_from(b, seed, 0.125);
        let m = Rigid::from_axis_angle(w).compose(&Rigid::translation(t));
        let moved = body.moved(&m);
        let mx = m.apply(x);
        for k in 0..NUM_PARTS {
            let (p, q) = (body.canonicalize(k, x), moved.canonicalize(k, mx));
            for i in 0..3 {
                prop_assert!((p[i] - q[i]).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn surface_samples_sit_strictly_inside_their_box(b in beta(), seed in any::<u64>(), padding in 0.05f64..0.3) {
        let body = body_from(b, seed, padding);
        let clouds = sample_surface_detailed(&body, 64, &mut ChaCha8Rng::seed_from_u64(seed ^ 1)).unwrap();
        for (k, cloud) in clouds.iter().enumerate() {
            let bx = &body.boxes[k];
            for s in cloud {
                let p = s.point();
                prop_assert!((0..3).all(|i| p[i] > bx.min[i] && p[i] < bx.max[i]), "part {k} point {p:?}");
            }
        }
    }

    #[test]
    fn gt_sdf_is_one_lipschitz(b in beta(), seed in any::<u64>(), x in unit_point(), y in unit_point()) {
        let body = body_from(b, seed, 0.125);
        let gap = (gt_sdf(x, &body).unwrap() - gt_sdf(y, &body).unwrap()).abs();
        let dist = (0..3).map(|i| (x[i] - y[i]).powi(2)).sum::<f64>().sqrt();
        prop_assert!(gap <= dist + 1e-12);
    }

    #[test]
    fn gt_sign_matches_capsule_membership(b in beta(), seed in any::<u64>(), x in unit_point()) {
        let body = body_from(b, seed, 0.125);
        let inside = body.world_capsules().unwrap().iter().any(|c| segment_distance(c, x) < c.radius);
        let d = gt_sdf(x, &body).unwrap();
        // Points within rounding of a surface may legitimately disagree.
        prop_assume!(d.abs() > 1e-12);
        prop_assert_eq!(d < 0.0, inside);
    }

    #[test]
    fn box_distance_bounds_capsule_distance_outside_boxes(b in beta(), seed in any::<u64>(), x in prop::array::uniform3(-2.0f64..2.0)) {
        let body = body_from(b, seed, 0.125);
        let bd = analytic_box_sdf(x, &body);
        prop_assume!(!bd.inside_box);
        let gt = gt_sdf(x, &body).unwrap();
        let slack = body.boxes.iter().map(|bx| bx.half_extents().iter().map(|h| h * h).sum::<f64>().sqrt()).fold(0.0, f64::max);
        prop_assert!(bd.distance > 0.0);
        prop_assert!(bd.distance <= gt + 1e-12, "box {} gt {gt}", bd.distance);
        prop_assert!(gt - bd.distance <= 2.0 * slack);
    }

    #[test]
    fn overlap_detection_covers_intersecting_capsules(b in beta(), seed in any::<u64>()) {
        let body = body_from(b, seed, 0.125);
        let caps = body.world_capsules().unwrap();
        let reported: Vec<(usize, usize)> = detect_overlaps(&body).iter().map(|r| r.parts).collect();
        for i in 0..NUM_PARTS {
            for j in i + 1..NUM_PARTS {
                if body.is_adjacent(i, j) {
                    prop_assert!(!reported.contains(&(i, j)));
                } else if segments_gap(&caps[i], &caps[j]) < caps[i].radius + caps[j].radius - 1e-3 {
                    prop_assert!(reported.contains(&(i, j)), "pair ({i}, {j}) missed");
                }
            }
        }
    }

    #[test]
    fn training_loss_is_non_negative_and_zero_on_saturated_match(
        pred in prop::collection::vec(-0.5f64..0.5, 1..40), gt in prop::collection::vec(-0.5f64..0.5, 40),
    ) {
        let gt = &gt[..pred.len()];
        prop_assert!(loss(&pred, gt, 0.005).unwrap() >= 0.0);
        // tanh rounds to ±1 once |p|/τ exceeds ~19.
        let far: Vec<f64> = gt.iter().map(|g| if *g >= 0.0 { g + 0.1 } else { g - 0.1 }).collect();
        prop_assert_eq!(loss(&far, &far, 0.005).unwrap(), 0.0);
    }

    #[test]
    fn min_reduce_ignores_small_moves_of_losers(vals in prop::collection::vec(-1.0f32..1.0, 12), noise in prop::collection::vec(-1.0f32..1.0, 12)) {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::from_rows(3, 4, vals.clone()));
        let (m, idx) = tape.min_reduce(a, Axis::Rows).unwrap();
        let base = tape.value(m).data().to_vec();
        let mut moved = vals.clone();
        for j in 0..4 {
            let col: Vec<f32> = (0..3).map(|i| vals[i * 4 + j]).collect();
            let gap = (0..3).filter(|&i| i != idx[j]).map(|i| col[i] - col[idx[j]]).fold(f32::INFINITY, f32::min);
            prop_assume!(gap > 1e-4);
            for i in (0..3).filter(|&i| i != idx[j]) {
                moved[i * 4 + j] += 0.49 * gap * noise[i * 4 + j];
            }
        }
        let b = tape.constant(Tensor::from_rows(3, 4, moved));
        let (m2, idx2) = tape.min_reduce(b, Axis::Rows).unwrap();
        prop_assert_eq!(idx, idx2);
        prop_assert_eq!(base, tape.value(m2).data().to_vec());
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 16, ..ProptestConfig::default() })]

    #[test]
    fn encoder_ignores_order_and_repetition(seed in any::<u64>(), n in 1usize..40, rot in 0usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = EncoderWeights::new(&mut rng);
        let cloud: Vec<[f32; 3]> = (0..n).map(|i| {
            let t = (seed.wrapping_add(i as u64) % 1000) as f32 / 1000.0;
            [t - 0.5, (3.0 * t).sin() * 0.2, (7.0 * t).cos() * 0.1]
        }).collect();
        let z = encode_part(&cloud, &w).unwrap();
        let mut rotated = cloud.clone();
        rotated.rotate_left(rot % n);
        rotated.reverse();
        prop_assert_eq!(&encode_part(&rotated, &w).unwrap(), &z);
        let mut repeated = cloud.clone();
        repeated.extend(cloud.iter().take(rot % n + 1).copied());
        prop_assert_eq!(&encode_part(&repeated, &w).unwrap(), &z);
    }

    #[test]
    fn forward_is_deterministic(seed in any::<u64>(), x in unit_point()) {
        let model = small_model(16, 2, seed);
        let body = body_from([0.0; BETA_LEN], seed, 0.125);
        let clouds = avsdf::oracle::clouds_to_f32(&avsdf::oracle::sample_surface(&body, 8, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap());
        let run = || PreparedModel::new(&model, &model.latents(&clouds).unwrap()).unwrap().query(&body, &[x]).unwrap()[0];
        let (a, b) = (run(), run());
        prop_assert_eq!(a.distance.to_bits(), b.distance.to_bits());
        prop_assert_eq!(a.branch, b.branch);
    }

    #[test]
    fn collision_loss_is_non_negative(seed in any::<u64>(), pts in prop::collection::vec(unit_point(), 1..30)) {
        let model = small_model(16, 2, seed);
        let field = BodyField::new(&model, ShapeParams::zero(), PoseParams::random(&mut ChaCha8Rng::seed_from_u64(seed), 0.8));
        let g = collision_loss(&field, &pts, 1.0).unwrap();
        prop_assert!(g.value >= 0.0);
        let analytic_only = PreparedModel::new(&model, &field.latents().unwrap()).unwrap()
            .query(&field.body().unwrap(), &pts).unwrap().iter().all(|r| r.branch == Branch::Analytic);
        if analytic_only {
            prop_assert_eq!(g.value, 0.0);
        }
    }

    #[test]
    fn penetration_term_falls_as_points_move_outward(seed in any::<u64>(), pts in prop::collection::vec(unit_point(), 1..20)) {
        let model = small_model(16, 2, seed);
        let field = BodyField::new(&model, ShapeParams::zero(), PoseParams::random(&mut ChaCha8Rng::seed_from_u64(seed), 0.8));
        let latents = field.latents().unwrap();
        let tau = 0.01f32;
        let pen = field.with_grad_frozen(&pts, 1.0, &latents, |t, d| {
            let z = t.scale(d, -1.0 / tau);
            let s = t.sigmoid(z);
            Ok(t.sum(s))
        }).unwrap();
        let dist = field.with_grad_frozen(&pts, 1.0, &latents, |t, d| Ok(t.sum(d))).unwrap();
        // Per point, the penetration gradient is a non-positive multiple of ∇d.
        for (gp, gd) in pen.d_points.iter().zip(&dist.d_points) {
            let dot: f64 = (0..3).map(|i| gp[i] * gd[i]).sum();
            prop_assert!(dot <= 1e-12, "{gp:?} vs {gd:?}");
        }
    }
}
