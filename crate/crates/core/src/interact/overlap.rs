use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::body::{dot3, sub3, world_box_aabb, BodyState, Vec3};
use crate::error::Result;
use crate::volsdf::PreparedModel;

pub const REGION_SAMPLES: usize = 300;

/// Two non-adjacent parts whose oriented boxes intersect, with the world
/// AABB bounding that intersection.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlapRegion {
    pub parts: (usize, usize),
    pub min: Vec3,
    pub max: Vec3,
    pub budget: usize,
}

/// Points found inside at least two parts, at least two of them non-adjacent.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PenSampleSet {
    pub points: Vec<Vec3>,
    /// Parts whose decoder is negative at each point, ascending.
    pub inside: Vec<Vec<usize>>,
}

impl PenSampleSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

struct Obb {
    center: Vec3,
    axes: [Vec3; 3],
    half: Vec3,
}

fn obb(body: &BodyState, k: usize) -> Obb {
    let g = &body.transforms[k];
    let b = &body.boxes[k];
    Obb {
        center: g.apply(b.center()),
        axes: std::array::from_fn(|c| [g.rot[0][c], g.rot[1][c], g.rot[2][c]]),
        half: b.half_extents(),
    }
}

fn cross(a: Vec3, b: Vec3) -> Vec3 {
    crate::body::cross3(a, b)
}

/// Separating-axis test over the 3 + 3 face normals and 9 edge crossings.
fn obbs_intersect(a: &Obb, b: &Obb) -> bool {
    let t = sub3(b.center, a.center);
    let mut axes: Vec<Vec3> = a.axes.iter().chain(&b.axes).copied().collect();
    for u in &a.axes {
        for v in &b.axes {
            let c = cross(*u, *v);
            if dot3(c, c) > 1e-12 {
                axes.push(c);
            }
        }
    }
    axes.iter().all(|l| {
        let ra: f64 = (0..3).map(|i| a.half[i] * dot3(a.axes[i], *l).abs()).sum();
        let rb: f64 = (0..3).map(|i| b.half[i] * dot3(b.axes[i], *l).abs()).sum();
        dot3(t, *l).abs() <= ra + rb
    })
}

/// Non-adjacent part pairs with intersecting world boxes, ordered by pair.
pub fn detect_overlaps(body: &BodyState) -> Vec<OverlapRegion> {
    let k = body.num_parts();
    let boxes: Vec<Obb> = (0..k).map(|i| obb(body, i)).collect();
    let mut out = Vec::new();
    for i in 0..k {
        for j in i + 1..k {
            if body.is_adjacent(i, j) || !obbs_intersect(&boxes[i], &boxes[j]) {
                continue;
            }
            let (lo_i, hi_i) = world_box_aabb(&body.transforms[i], &body.boxes[i]);
            let (lo_j, hi_j) = world_box_aabb(&body.transforms[j], &body.boxes[j]);
            let min: Vec3 = std::array::from_fn(|a| lo_i[a].max(lo_j[a]));
            let max: Vec3 = std::array::from_fn(|a| hi_i[a].min(hi_j[a]));
            if (0..3).all(|a| min[a] < max[a]) {
                out.push(OverlapRegion {
                    parts: (i, j),
                    min,
                    max,
                    budget: REGION_SAMPLES,
                });
            }
        }
    }
    out
}

/// Draws each region's budget uniformly in its AABB, keeps draws inside
/// both boxes, and certifies membership by decoding every part whose box
/// contains the point.
pub fn sample_penetrating<R: Rng + ?Sized>(
    prepared: &PreparedModel,
    body: &BodyState,
    regions: &[OverlapRegion],
    rng: &mut R,
) -> Result<PenSampleSet> {
    let mut candidates = Vec::new();
    for r in regions {
        for _ in 0..r.budget {
            let x: Vec3 = std::array::from_fn(|a| rng.gen_range(r.min[a]..=r.max[a]));
            if body.in_box(r.parts.0, x) && body.in_box(r.parts.1, x) {
                candidates.push(x);
            }
        }
    }
    let k = body.num_parts();
    let mut per_part: Vec<(Vec<usize>, Vec<[f32; 3]>)> = vec![(Vec::new(), Vec::new()); k];
    for (i, &x) in candidates.iter().enumerate() {
        for p in body.containing_parts(x) {
            per_part[p].0.push(i);
            per_part[p]
                .1
                .push(body.canonicalize(p, x).map(|v| v as f32));
        }
    }
    let mut inside: Vec<Vec<usize>> = vec![Vec::new(); candidates.len()];
    for (p, (idx, pts)) in per_part.iter().enumerate() {
        if pts.is_empty() {
            continue;
        }
        for (&i, d) in idx.iter().zip(prepared.decode_part(p, pts)?) {
            if d < 0.0 {
                inside[i].push(p);
            }
        }
    }
    let mut seen = HashSet::new();
    let mut out = PenSampleSet::default();
    for (x, parts) in candidates.into_iter().zip(inside) {
        let crossing = parts
            .iter()
            .enumerate()
            .any(|(a, &i)| parts[a + 1..].iter().any(|&j| !body.is_adjacent(i, j)));
        if crossing && seen.insert(x.map(f64::to_bits)) {
            out.points.push(x);
            out.inside.push(parts);
        }
    }
    Ok(out)
}

/// Monte-Carlo volume (m³) where two non-adjacent capsules overlap, summed
/// over pairs; `samples` draws per pair inside the intersection of the two
/// capsules' AABBs.
pub fn overlap_volume(body: &BodyState, samples: usize, seed: u64) -> Result<f64> {
    let caps = crate::oracle::CapsuleUnion::from_body(body)?.capsules;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for i in 0..caps.len() {
        for j in i + 1..caps.len() {
            if body.is_adjacent(i, j) {
                continue;
            }
            let (lo_i, hi_i) = caps[i].aabb();
            let (lo_j, hi_j) = caps[j].aabb();
            let lo: Vec3 = std::array::from_fn(|a| lo_i[a].max(lo_j[a]));
            let hi: Vec3 = std::array::from_fn(|a| hi_i[a].min(hi_j[a]));
            if (0..3).any(|a| lo[a] >= hi[a]) {
                continue;
            }
            let vol: f64 = (0..3).map(|a| hi[a] - lo[a]).product();
            let hits = (0..samples)
                .filter(|_| {
                    let x: Vec3 = std::array::from_fn(|a| rng.gen_range(lo[a]..hi[a]));
                    caps[i].sdf(x) < 0.0 && caps[j].sdf(x) < 0.0
                })
                .count();
            total += vol * hits as f64 / samples as f64;
        }
    }
    Ok(total)
}
