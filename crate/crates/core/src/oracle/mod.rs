//! Exact ground truth for the synthetic body: the capsule-union distance,
//! surface and training-point sampling, evaluation metrics and grid dumps.

mod grid;
mod metrics;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

pub use grid::{
    decode_grid, encode_grid, export_grid, grid_points, read_grid, write_grid, Grid,
    GRID_HEADER_BYTES, GRID_MAGIC,
};
pub use metrics::{
    eval_samples, evaluate, evaluate_samples, iou, EvalReport, EVAL_NEAR_PER_PART, EVAL_UNIFORM,
};

use crate::body::{add3, cross3, dot3, norm3, scale3, sub3, BodyState, Capsule, Vec3};
use crate::error::{invalid, Result};

pub const DEFAULT_CLOUD_POINTS: usize = 1000;
pub const TRAIN_PER_PART: usize = 256;
pub const SURFACE_NOISE: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleKind {
    UniformInBox,
    NearSurface,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainSample {
    pub point: Vec3,
    pub gt_sdf: f64,
    pub kind: SampleKind,
    /// Part whose box or surface produced the sample.
    pub part: usize,
}

/// World-space capsules of a posed synthetic body.
#[derive(Clone, Debug)]
pub struct CapsuleUnion {
    pub capsules: Vec<Capsule>,
}

impl CapsuleUnion {
    pub fn from_body(body: &BodyState) -> Result<Self> {
        let capsules = body.world_capsules().ok_or_else(|| {
            invalid("body has no analytic geometry; ground truth must come from its sample block")
        })?;
        Ok(Self { capsules })
    }

    pub fn sdf(&self, x: Vec3) -> f64 {
        self.capsules
            .iter()
            .map(|c| c.sdf(x))
            .fold(f64::INFINITY, f64::min)
    }

    /// Number of capsules containing `x` (boundary counts as inside).
    pub fn depth(&self, x: Vec3) -> usize {
        self.capsules.iter().filter(|c| c.sdf(x) <= 0.0).count()
    }
}

pub fn gt_sdf(x: Vec3, body: &BodyState) -> Result<f64> {
    Ok(CapsuleUnion::from_body(body)?.sdf(x))
}

/// A surface point split as `axis + offset`: `axis` lies on the capsule
/// segment and scales with segment length, `offset` has norm `radius` and
/// scales with radius.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurfacePoint {
    pub axis: Vec3,
    pub offset: Vec3,
    /// The cylinder (rather than a cap) was chosen.
    pub on_cylinder: bool,
}

impl SurfacePoint {
    pub fn point(&self) -> Vec3 {
        add3(self.axis, self.offset)
    }
}

fn perpendicular_basis(n: Vec3) -> (Vec3, Vec3) {
    let helper = if n[0].abs() < 0.9 {
        [1.0, 0.0, 0.0]
    } else {
        [0.0, 1.0, 0.0]
    };
    let e1 = cross3(n, helper);
    let e1 = scale3(e1, 1.0 / norm3(e1));
    (e1, cross3(n, e1))
}

fn unit_gaussian<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    loop {
        let v: Vec3 = std::array::from_fn(|_| StandardNormal.sample(rng));
        let n = norm3(v);
        if n > 1e-12 {
            return scale3(v, 1.0 / n);
        }
    }
}

/// Area-uniform samples on a capsule: the cylinder with probability
/// `2πrL / (2πrL + 4πr²)`, otherwise a sphere direction assigned to the cap
/// it points out of.
pub fn sample_capsule_surface<R: Rng + ?Sized>(
    c: &Capsule,
    n: usize,
    rng: &mut R,
) -> Vec<SurfacePoint> {
    let ab = sub3(c.b, c.a);
    let len = norm3(ab);
    let (p_cyl, axis_dir) = if len > 0.0 {
        (len / (len + 2.0 * c.radius), scale3(ab, 1.0 / len))
    } else {
        (0.0, [0.0, 0.0, 1.0])
    };
    let (e1, e2) = perpendicular_basis(axis_dir);
    (0..n)
        .map(|_| {
            if rng.gen::<f64>() < p_cyl {
                let t: f64 = rng.gen();
                let phi = rng.gen_range(0.0..std::f64::consts::TAU);
                let dir = add3(scale3(e1, phi.cos()), scale3(e2, phi.sin()));
                SurfacePoint {
                    axis: add3(c.a, scale3(ab, t)),
                    offset: scale3(dir, c.radius),
                    on_cylinder: true,
                }
            } else {
                let u = unit_gaussian(rng);
                let end = if dot3(u, axis_dir) >= 0.0 { c.b } else { c.a };
                SurfacePoint {
                    axis: end,
                    offset: scale3(u, c.radius),
                    on_cylinder: false,
                }
            }
        })
        .collect()
}

fn canonical_capsules(body: &BodyState) -> Result<&[Capsule]> {
    body.capsules
        .as_deref()
        .ok_or_else(|| invalid("body has no analytic geometry"))
}

/// Canonical-frame surface samples of every part.
pub fn sample_surface_detailed<R: Rng + ?Sized>(
    body: &BodyState,
    n_per_part: usize,
    rng: &mut R,
) -> Result<Vec<Vec<SurfacePoint>>> {
    if n_per_part == 0 {
        return Err(invalid("n_per_part must be at least 1"));
    }
    Ok(canonical_capsules(body)?
        .iter()
        .map(|c| sample_capsule_surface(c, n_per_part, rng))
        .collect())
}

/// Canonical part clouds (`K × n × 3`).
pub fn sample_surface<R: Rng + ?Sized>(
    body: &BodyState,
    n_per_part: usize,
    rng: &mut R,
) -> Result<Vec<Vec<Vec3>>> {
    Ok(sample_surface_detailed(body, n_per_part, rng)?
        .into_iter()
        .map(|part| part.iter().map(SurfacePoint::point).collect())
        .collect())
}

pub fn clouds_to_f32(clouds: &[Vec<Vec3>]) -> Vec<Vec<[f32; 3]>> {
    clouds
        .iter()
        .map(|c| c.iter().map(|p| p.map(|v| v as f32)).collect())
        .collect()
}

/// World point drawn uniformly from part `k`'s padded box.
pub fn sample_in_box<R: Rng + ?Sized>(body: &BodyState, k: usize, rng: &mut R) -> Vec3 {
    let b = &body.boxes[k];
    let c: Vec3 = std::array::from_fn(|i| rng.gen_range(b.min[i]..=b.max[i]));
    body.transforms[k].apply(c)
}

/// World point on part `k`'s surface plus isotropic Gaussian noise.
pub fn sample_near_surface<R: Rng + ?Sized>(
    body: &BodyState,
    k: usize,
    sigma: f64,
    rng: &mut R,
) -> Result<Vec3> {
    let c = canonical_capsules(body)?[k];
    let s = sample_capsule_surface(&c, 1, rng)[0].point();
    let noise = Normal::new(0.0, sigma).map_err(|e| invalid(e.to_string()))?;
    let w = body.transforms[k].apply(s);
    Ok(std::array::from_fn(|i| w[i] + noise.sample(rng)))
}

/// Per part, `TRAIN_PER_PART` uniform in-box points then as many
/// near-surface points, labeled with the exact distance.
pub fn sample_training_points<R: Rng + ?Sized>(
    body: &BodyState,
    rng: &mut R,
) -> Result<Vec<TrainSample>> {
    let gt = CapsuleUnion::from_body(body)?;
    let mut out = Vec::with_capacity(body.num_parts() * 2 * TRAIN_PER_PART);
    for k in 0..body.num_parts() {
        for _ in 0..TRAIN_PER_PART {
            let point = sample_in_box(body, k, rng);
            out.push(TrainSample {
                point,
                gt_sdf: gt.sdf(point),
                kind: SampleKind::UniformInBox,
                part: k,
            });
        }
        for _ in 0..TRAIN_PER_PART {
            let point = sample_near_surface(body, k, SURFACE_NOISE, rng)?;
            out.push(TrainSample {
                point,
                gt_sdf: gt.sdf(point),
                kind: SampleKind::NearSurface,
                part: k,
            });
        }
    }
    Ok(out)
}

/// World point uniform in the union of padded part boxes (rejection from
/// the enclosing AABB).
pub fn sample_in_box_union<R: Rng + ?Sized>(body: &BodyState, rng: &mut R) -> Vec3 {
    let (lo, hi) = body.world_bounds();
    loop {
        let x: Vec3 = std::array::from_fn(|i| rng.gen_range(lo[i]..=hi[i]));
        if (0..body.num_parts()).any(|k| body.in_box(k, x)) {
            return x;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::{forward_kinematics, PoseParams, ShapeParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rest() -> BodyState {
        forward_kinematics(&ShapeParams::zero(), &PoseParams::rest()).unwrap()
    }

    #[test]
    fn capsule_distances_on_axis_and_radially() {
        let body = rest();
        let gt = CapsuleUnion::from_body(&body).unwrap();
        let hand = gt.capsules[5];
        let d = gt.sdf(hand.b);
        assert!((d + hand.radius).abs() < 1e-12, "{d}");
        // 0.5 m straight out in front of the hand tip: nearest surface is the hand.
        let x = add3(hand.b, [0.0, 0.5, 0.0]);
        let dist = gt.sdf(x);
        assert!((dist - (0.5 - hand.radius)).abs() < 1e-12, "{dist}");
    }

    #[test]
    fn gt_matches_dense_surface_oracle() {
        let body = forward_kinematics(
            &ShapeParams::zero(),
            &PoseParams::random(&mut ChaCha8Rng::seed_from_u64(3), 0.6),
        )
        .unwrap();
        let gt = CapsuleUnion::from_body(&body).unwrap();
        // Dense surface of each world capsule: parametric grid fine enough that
        // the chord error stays below 1e-3 m.
        let mut surface = Vec::new();
        for c in &gt.capsules {
            let ab = sub3(c.b, c.a);
            let len = norm3(ab);
            let n = if len > 0.0 {
                scale3(ab, 1.0 / len)
            } else {
                [0.0, 0.0, 1.0]
            };
            let (e1, e2) = perpendicular_basis(n);
            let rings = (len / 0.002).ceil() as usize + 1;
            let around = 320;
            for i in 0..rings {
                let t = i as f64 / (rings - 1).max(1) as f64;
                for j in 0..around {
                    let phi = j as f64 / around as f64 * std::f64::consts::TAU;
                    let d = add3(scale3(e1, phi.cos()), scale3(e2, phi.sin()));
                    surface.push(add3(add3(c.a, scale3(ab, t)), scale3(d, c.radius)));
                }
            }
            for i in 0..=80 {
                let polar = i as f64 / 80.0 * std::f64::consts::PI;
                for j in 0..around {
                    let phi = j as f64 / around as f64 * std::f64::consts::TAU;
                    let d = add3(
                        scale3(n, polar.cos()),
                        add3(
                            scale3(e1, polar.sin() * phi.cos()),
                            scale3(e2, polar.sin() * phi.sin()),
                        ),
                    );
                    let end = if polar.cos() >= 0.0 { c.b } else { c.a };
                    surface.push(add3(end, scale3(d, c.radius)));
                }
            }
        }
        let on_union: Vec<Vec3> = surface
            .into_iter()
            .filter(|&p: &Vec3| gt.sdf(p) >= -1e-9)
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (lo, hi) = body.world_bounds();
        for _ in 0..40 {
            let x: Vec3 = std::array::from_fn(|i| rng.gen_range(lo[i]..hi[i]));
            let brute = on_union
                .iter()
                .map(|&p| norm3(sub3(p, x)))
                .fold(f64::INFINITY, f64::min);
            let inside = gt.capsules.iter().any(|c| c.distance_to_axis(x) < c.radius);
            let d = gt.sdf(x);
            assert!((d.abs() - brute).abs() < 1e-3, "{d} vs {brute}");
            assert_eq!(d < 0.0, inside);
        }
    }

    #[test]
    fn gt_is_one_lipschitz() {
        let body = rest();
        let gt = CapsuleUnion::from_body(&body).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10_000 {
            let p: Vec3 = std::array::from_fn(|_| rng.gen_range(-1.2..1.2));
            let q: Vec3 = std::array::from_fn(|_| rng.gen_range(-1.2..1.2));
            assert!((gt.sdf(p) - gt.sdf(q)).abs() <= norm3(sub3(p, q)) + 1e-12);
        }
    }

    #[test]
    fn surface_samples_lie_on_capsules() {
        let body = rest();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let clouds = sample_surface(&body, 1000, &mut rng).unwrap();
        assert_eq!(clouds.len(), 15);
        let caps = body.capsules.as_ref().unwrap();
        for (cloud, c) in clouds.iter().zip(caps) {
            assert_eq!(cloud.len(), 1000);
            for p in cloud {
                assert!(c.sdf(*p).abs() < 1e-6);
            }
        }
        let again = sample_surface(&body, 1000, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        assert_eq!(clouds, again);
        assert!(sample_surface(&body, 0, &mut rng).is_err());
    }

    #[test]
    fn degenerate_capsule_samples_a_sphere() {
        let c = Capsule {
            a: [0.2, -0.1, 0.3],
            b: [0.2, -0.1, 0.3],
            radius: 0.1,
        };
        let pts = sample_capsule_surface(&c, 10_000, &mut ChaCha8Rng::seed_from_u64(7));
        let mut mean = [0.0; 3];
        for p in &pts {
            assert!(!p.on_cylinder);
            mean = add3(mean, scale3(p.point(), 1e-4));
        }
        assert!(norm3(sub3(mean, c.a)) < 0.02 * c.radius);
    }

    #[test]
    fn training_points_counts_and_labels() {
        let body = rest();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let samples = sample_training_points(&body, &mut rng).unwrap();
        assert_eq!(samples.len(), 15 * 512);
        let gt = CapsuleUnion::from_body(&body).unwrap();
        for k in 0..15 {
            let part: Vec<_> = samples.iter().filter(|s| s.part == k).collect();
            assert_eq!(
                part.iter()
                    .filter(|s| s.kind == SampleKind::UniformInBox)
                    .count(),
                256
            );
            assert_eq!(
                part.iter()
                    .filter(|s| s.kind == SampleKind::NearSurface)
                    .count(),
                256
            );
        }
        for s in &samples {
            assert!(s.gt_sdf.is_finite());
            assert_eq!(s.gt_sdf, gt.sdf(s.point));
            if s.kind == SampleKind::UniformInBox {
                assert!(body.in_box(s.part, s.point));
            }
        }
        // |d| ≤ |noise|, and a 3-d Gaussian beyond 5σ has probability ~1.5e-5.
        let far = samples
            .iter()
            .filter(|s| s.kind == SampleKind::NearSurface && s.gt_sdf.abs() > 5.0 * SURFACE_NOISE);
        assert!(far.count() <= 2);
    }

    #[test]
    fn uniform_box_samples_pass_chi_square() {
        let body = rest();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let k = 1;
        let b = body.boxes[k];
        let bins = 10;
        let n = 100_000;
        let mut counts = vec![[0usize; 3]; bins];
        let inv = body.transforms[k];
        for _ in 0..n {
            let c = inv.canonicalize(sample_in_box(&body, k, &mut rng));
            for i in 0..3 {
                let f = ((c[i] - b.min[i]) / (b.max[i] - b.min[i]) * bins as f64).floor() as usize;
                counts[f.min(bins - 1)][i] += 1;
            }
        }
        // 99th percentile of chi-square with 9 degrees of freedom.
        let critical = 21.666;
        let expected = n as f64 / bins as f64;
        for i in 0..3 {
            let chi: f64 = counts
                .iter()
                .map(|c| (c[i] as f64 - expected).powi(2) / expected)
                .sum();
            assert!(chi < critical, "axis {i}: {chi}");
        }
    }

    #[test]
    fn near_surface_mean_distance_tracks_half_normal() {
        let body = rest();
        let gt = CapsuleUnion::from_body(&body).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let n = 20_000;
        let mut acc = 0.0;
        for i in 0..n {
            acc += gt
                .sdf(sample_near_surface(&body, i % 15, SURFACE_NOISE, &mut rng).unwrap())
                .abs();
        }
        let c = acc / n as f64 / (SURFACE_NOISE * (2.0 / std::f64::consts::PI).sqrt());
        assert!((0.7..=1.3).contains(&c), "{c}");
    }
}
