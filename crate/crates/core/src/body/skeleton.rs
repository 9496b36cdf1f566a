//! The synthetic 15-part capsule body and its kinematic tree.

use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::dual::{Scalar, BETA_LEN, THETA_LEN};
use super::geometry::{Capsule, Rigid, Vec3};

pub const NUM_PARTS: usize = 15;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(usize)]
pub enum Part {
    Pelvis = 0,
    Spine,
    Head,
    LeftUpperArm,
    LeftForearm,
    LeftHand,
    RightUpperArm,
    RightForearm,
    RightHand,
    LeftThigh,
    LeftCalf,
    LeftFoot,
    RightThigh,
    RightCalf,
    RightFoot,
}

impl Part {
    pub const ALL: [Part; NUM_PARTS] = [
        Part::Pelvis,
        Part::Spine,
        Part::Head,
        Part::LeftUpperArm,
        Part::LeftForearm,
        Part::LeftHand,
        Part::RightUpperArm,
        Part::RightForearm,
        Part::RightHand,
        Part::LeftThigh,
        Part::LeftCalf,
        Part::LeftFoot,
        Part::RightThigh,
        Part::RightCalf,
        Part::RightFoot,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Part::Pelvis => "pelvis",
            Part::Spine => "spine",
            Part::Head => "head",
            Part::LeftUpperArm => "left_upper_arm",
            Part::LeftForearm => "left_forearm",
            Part::LeftHand => "left_hand",
            Part::RightUpperArm => "right_upper_arm",
            Part::RightForearm => "right_forearm",
            Part::RightHand => "right_hand",
            Part::LeftThigh => "left_thigh",
            Part::LeftCalf => "left_calf",
            Part::LeftFoot => "left_foot",
            Part::RightThigh => "right_thigh",
            Part::RightCalf => "right_calf",
            Part::RightFoot => "right_foot",
        }
    }
}

/// Rest geometry of one part, expressed in its canonical frame (origin at
/// the proximal joint, axes aligned with the world in the rest T-pose).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartSpec {
    pub parent: Option<usize>,
    /// Joint position relative to the parent joint, in the parent frame.
    pub offset: Vec3,
    pub capsule: Capsule,
}

/// Rest T-pose of the synthetic body, metres. z is up, +x is the body's left,
/// +y is forward.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RestSkeleton {
    pub parts: Vec<PartSpec>,
}

fn spec(parent: Option<usize>, offset: Vec3, a: Vec3, b: Vec3, radius: f64) -> PartSpec {
    PartSpec {
        parent,
        offset,
        capsule: Capsule { a, b, radius },
    }
}

fn mirror(p: &PartSpec, parent: Option<usize>) -> PartSpec {
    let fx = |v: Vec3| [-v[0], v[1], v[2]];
    PartSpec {
        parent,
        offset: fx(p.offset),
        capsule: Capsule {
            a: fx(p.capsule.a),
            b: fx(p.capsule.b),
            radius: p.capsule.radius,
        },
    }
}

impl Default for RestSkeleton {
    fn default() -> Self {
        let pelvis = spec(None, [0.0; 3], [-0.09, 0.0, 0.0], [0.09, 0.0, 0.0], 0.11);
        let spine = spec(
            Some(0),
            [0.0, 0.0, 0.10],
            [0.0, 0.0, 0.05],
            [0.0, 0.0, 0.35],
            0.13,
        );
        let head = spec(
            Some(1),
            [0.0, 0.0, 0.50],
            [0.0, 0.0, 0.12],
            [0.0, 0.0, 0.20],
            0.10,
        );
        let l_upper = spec(
            Some(1),
            [0.18, 0.0, 0.42],
            [0.04, 0.0, 0.0],
            [0.26, 0.0, 0.0],
            0.05,
        );
        let l_fore = spec(
            Some(3),
            [0.30, 0.0, 0.0],
            [0.03, 0.0, 0.0],
            [0.24, 0.0, 0.0],
            0.04,
        );
        let l_hand = spec(
            Some(4),
            [0.27, 0.0, 0.0],
            [0.02, 0.0, 0.0],
            [0.10, 0.0, 0.0],
            0.035,
        );
        let l_thigh = spec(
            Some(0),
            [0.10, 0.0, -0.08],
            [0.0, 0.0, -0.06],
            [0.0, 0.0, -0.38],
            0.07,
        );
        let l_calf = spec(
            Some(9),
            [0.0, 0.0, -0.44],
            [0.0, 0.0, -0.04],
            [0.0, 0.0, -0.36],
            0.05,
        );
        let l_foot = spec(
            Some(10),
            [0.0, 0.0, -0.42],
            [0.0, 0.0, -0.03],
            [0.0, 0.14, -0.03],
            0.035,
        );
        let parts = vec![
            pelvis,
            spine,
            head,
            l_upper,
            l_fore,
            l_hand,
            mirror(&l_upper, Some(1)),
            mirror(&l_fore, Some(6)),
            mirror(&l_hand, Some(7)),
            l_thigh,
            l_calf,
            l_foot,
            mirror(&l_thigh, Some(0)),
            mirror(&l_calf, Some(12)),
            mirror(&l_foot, Some(13)),
        ];
        Self { parts }
    }
}

impl RestSkeleton {
    /// Parent-child pairs `(parent, child)`.
    pub fn adjacency(&self) -> Vec<(usize, usize)> {
        self.parts
            .iter()
            .enumerate()
            .filter_map(|(k, p)| p.parent.map(|q| (q.min(k), q.max(k))))
            .collect()
    }
}

pub fn rest_skeleton() -> &'static RestSkeleton {
    static REST: OnceLock<RestSkeleton> = OnceLock::new();
    REST.get_or_init(RestSkeleton::default)
}

/// Per-part multiplicative scales of segment length and radius.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartScale {
    pub length: f64,
    pub radius: f64,
}

impl Default for PartScale {
    fn default() -> Self {
        Self {
            length: 1.0,
            radius: 1.0,
        }
    }
}

const SHAPE_BASIS_SEED: u64 = 42;
const SHAPE_GAIN: f64 = 0.5;

/// Fixed 30×10 shape basis with orthonormal columns (Gram–Schmidt over
/// Gaussian draws from a seeded generator).
pub fn shape_basis() -> &'static [[f64; BETA_LEN]; 2 * NUM_PARTS] {
    static BASIS: OnceLock<[[f64; BETA_LEN]; 2 * NUM_PARTS]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(SHAPE_BASIS_SEED);
        let rows = 2 * NUM_PARTS;
        let mut cols: Vec<Vec<f64>> = (0..BETA_LEN)
            .map(|_| (0..rows).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        for i in 0..BETA_LEN {
            for j in 0..i {
                let d: f64 = cols[i].iter().zip(&cols[j]).map(|(a, b)| a * b).sum();
                let prev = cols[j].clone();
                cols[i].iter_mut().zip(&prev).for_each(|(a, b)| *a -= d * b);
            }
            let n: f64 = cols[i].iter().map(|a| a * a).sum::<f64>().sqrt();
            cols[i].iter_mut().for_each(|a| *a /= n);
        }
        let mut out = [[0.0; BETA_LEN]; 2 * NUM_PARTS];
        for (r, row) in out.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = cols[c][r];
            }
        }
        out
    })
}

/// Shape coefficients → per-part (length, radius) scales, each in (0.5, 1.5).
pub fn scales_from_beta<S: Scalar>(beta: &[S; BETA_LEN]) -> Vec<(S, S)> {
    let basis = shape_basis();
    let squash = |row: &[f64; BETA_LEN]| {
        let mut u = S::cst(0.0);
        for (b, w) in beta.iter().zip(row) {
            u = u + *b * S::cst(*w);
        }
        S::cst(1.0) + S::cst(0.5) * (u * S::cst(SHAPE_GAIN)).tanh()
    };
    (0..NUM_PARTS)
        .map(|k| (squash(&basis[2 * k]), squash(&basis[2 * k + 1])))
        .collect()
}

/// Walks the kinematic tree. `theta` is laid out as root translation (3)
/// followed by one axis-angle triple per part; `scales` come from
/// [`scales_from_beta`] or are supplied directly.
pub fn fk_transforms<S: Scalar>(
    skel: &RestSkeleton,
    theta: &[S; THETA_LEN],
    scales: &[(S, S)],
) -> Vec<Rigid<S>> {
    let mut out: Vec<Rigid<S>> = Vec::with_capacity(skel.parts.len());
    for (k, part) in skel.parts.iter().enumerate() {
        let w = [theta[3 + 3 * k], theta[4 + 3 * k], theta[5 + 3 * k]];
        let rot = Rigid::from_axis_angle(w);
        let g = match part.parent {
            None => Rigid::translation([theta[0], theta[1], theta[2]]).compose(&rot),
            Some(p) => {
                let ls = scales[p].0;
                let off = [
                    ls * S::cst(part.offset[0]),
                    ls * S::cst(part.offset[1]),
                    ls * S::cst(part.offset[2]),
                ];
                out[p].compose(&Rigid::translation(off)).compose(&rot)
            }
        };
        out.push(g);
    }
    out
}

/// Canonical-frame capsule of a part after shape scaling.
pub fn scaled_capsule(spec: &PartSpec, scale: PartScale) -> Capsule {
    let c = spec.capsule;
    Capsule {
        a: [
            c.a[0] * scale.length,
            c.a[1] * scale.length,
            c.a[2] * scale.length,
        ],
        b: [
            c.b[0] * scale.length,
            c.b[1] * scale.length,
            c.b[2] * scale.length,
        ],
        radius: c.radius * scale.radius,
    }
}
