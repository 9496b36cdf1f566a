//! Articulated synthetic body: parameters, forward kinematics, per-part
//! canonical frames, padded part boxes and the analytic far-field distance.

mod dual;
pub mod external;
mod geometry;
mod skeleton;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use dual::{Dual, Scalar, BETA_LEN, N_BODY_PARAMS, THETA_LEN};
pub use external::{load_external_body, save_external_body, ExternalBody, GtSample};
pub use geometry::{
    add3, cross3, dot3, norm3, scale3, sub3, Capsule, PartBox, Rigid, RigidTransform, Vec3,
};
pub use skeleton::{
    fk_transforms, rest_skeleton, scaled_capsule, scales_from_beta, shape_basis, Part, PartScale,
    PartSpec, RestSkeleton, NUM_PARTS,
};

use crate::error::{invalid, Result};

pub const DEFAULT_PADDING: f64 = 0.125;
pub const BETA_CLAMP: f64 = 3.0;

/// Shape coefficients, clamped to `[-3, 3]` on construction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeParams {
    pub beta: [f64; BETA_LEN],
}

impl ShapeParams {
    pub fn new(beta: [f64; BETA_LEN]) -> Result<Self> {
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(invalid("shape coefficients must be finite"));
        }
        Ok(Self {
            beta: beta.map(|b| b.clamp(-BETA_CLAMP, BETA_CLAMP)),
        })
    }

    pub fn zero() -> Self {
        Self {
            beta: [0.0; BETA_LEN],
        }
    }

    pub fn part_scales(&self) -> Vec<PartScale> {
        scales_from_beta(&self.beta)
            .into_iter()
            .map(|(l, r)| PartScale {
                length: l,
                radius: r,
            })
            .collect()
    }
}

/// Root translation plus one axis-angle rotation per part (part 0 is the root).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseParams {
    pub root_translation: Vec3,
    pub joint_rotations: [Vec3; NUM_PARTS],
}

impl PoseParams {
    pub fn rest() -> Self {
        Self {
            root_translation: [0.0; 3],
            joint_rotations: [[0.0; 3]; NUM_PARTS],
        }
    }

    pub fn from_flat(theta: &[f64; THETA_LEN]) -> Self {
        let mut p = Self::rest();
        p.root_translation.copy_from_slice(&theta[..3]);
        for k in 0..NUM_PARTS {
            p.joint_rotations[k].copy_from_slice(&theta[3 + 3 * k..6 + 3 * k]);
        }
        p
    }

    pub fn to_flat(&self) -> [f64; THETA_LEN] {
        let mut out = [0.0; THETA_LEN];
        out[..3].copy_from_slice(&self.root_translation);
        for k in 0..NUM_PARTS {
            out[3 + 3 * k..6 + 3 * k].copy_from_slice(&self.joint_rotations[k]);
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.to_flat().iter().any(|v| !v.is_finite()) {
            return Err(invalid("pose parameters must be finite"));
        }
        Ok(())
    }

    /// Joint axis-angle components uniform in `[-joint_range, joint_range]`,
    /// root rotation components uniform in `[-π, π]`, root translation in
    /// `[-0.5, 0.5]` m.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, joint_range: f64) -> Self {
        let mut p = Self::rest();
        for t in p.root_translation.iter_mut() {
            *t = rng.gen_range(-0.5..=0.5);
        }
        for (k, rot) in p.joint_rotations.iter_mut().enumerate() {
            let range = if k == 0 {
                std::f64::consts::PI
            } else {
                joint_range
            };
            for c in rot.iter_mut() {
                *c = rng.gen_range(-range..=range);
            }
        }
        p
    }
}

/// Draws β ~ N(0, 1)¹⁰ (then clamped).
pub fn random_shape<R: Rng + ?Sized>(rng: &mut R) -> ShapeParams {
    let mut beta = [0.0; BETA_LEN];
    for b in beta.iter_mut() {
        *b = rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng);
    }
    ShapeParams::new(beta).expect("normal draws are finite")
}

/// A posed body. Immutable once built.
#[derive(Clone, Debug)]
pub struct BodyState {
    pub transforms: Vec<RigidTransform>,
    /// Canonical-frame capsules; absent for bodies loaded from file.
    pub capsules: Option<Vec<Capsule>>,
    pub boxes: Vec<PartBox>,
    /// Kinematically connected pairs `(i, j)` with `i < j`.
    pub adjacency: Vec<(usize, usize)>,
    pub scales: Option<Vec<PartScale>>,
    pub padding: f64,
    pub params: Option<(ShapeParams, PoseParams)>,
}

impl BodyState {
    pub fn num_parts(&self) -> usize {
        self.transforms.len()
    }

    pub fn canonicalize(&self, k: usize, x: Vec3) -> Vec3 {
        self.transforms[k].canonicalize(x)
    }

    pub fn world_capsule(&self, k: usize) -> Option<Capsule> {
        self.capsules
            .as_ref()
            .map(|c| c[k].transformed(&self.transforms[k]))
    }

    pub fn world_capsules(&self) -> Option<Vec<Capsule>> {
        (0..self.num_parts())
            .map(|k| self.world_capsule(k))
            .collect()
    }

    pub fn is_adjacent(&self, i: usize, j: usize) -> bool {
        let key = (i.min(j), i.max(j));
        self.adjacency.contains(&key)
    }

    pub fn in_box(&self, k: usize, x: Vec3) -> bool {
        self.boxes[k].contains(self.canonicalize(k, x))
    }

    /// Parts whose padded box contains `x`, in ascending order.
    pub fn containing_parts(&self, x: Vec3) -> Vec<usize> {
        (0..self.num_parts())
            .filter(|&k| self.in_box(k, x))
            .collect()
    }

    /// Same body with boxes recomputed at another padding.
    pub fn with_padding(&self, padding: f64) -> Result<Self> {
        let mut out = self.clone();
        out.boxes = compute_part_boxes(self, padding)?;
        out.padding = padding;
        Ok(out)
    }

    /// Applies a global rigid motion `M` to every part transform.
    pub fn moved(&self, m: &RigidTransform) -> Self {
        let mut out = self.clone();
        out.transforms = self.transforms.iter().map(|g| g.premultiply(m)).collect();
        out.params = None;
        out
    }

    /// World-space AABB enclosing every padded part box.
    pub fn world_bounds(&self) -> (Vec3, Vec3) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for k in 0..self.num_parts() {
            let (blo, bhi) = world_box_aabb(&self.transforms[k], &self.boxes[k]);
            for i in 0..3 {
                lo[i] = lo[i].min(blo[i]);
                hi[i] = hi[i].max(bhi[i]);
            }
        }
        (lo, hi)
    }
}

/// World AABB of an oriented part box.
pub fn world_box_aabb(g: &RigidTransform, b: &PartBox) -> (Vec3, Vec3) {
    let c = g.apply(b.center());
    let h = b.half_extents();
    let mut ext = [0.0; 3];
    for (i, e) in ext.iter_mut().enumerate() {
        *e = (0..3).map(|m| g.rot[i][m].abs() * h[m]).sum();
    }
    (sub3(c, ext), add3(c, ext))
}

fn check_params(beta: &ShapeParams, theta: &PoseParams) -> Result<()> {
    if beta.beta.iter().any(|b| !b.is_finite()) {
        return Err(invalid("shape coefficients must be finite"));
    }
    theta.validate()
}

/// Poses the synthetic body with default 12.5% box padding.
pub fn forward_kinematics(beta: &ShapeParams, theta: &PoseParams) -> Result<BodyState> {
    check_params(beta, theta)?;
    let scales = beta.part_scales();
    let mut body = forward_kinematics_scaled(&scales, theta)?;
    body.params = Some((*beta, *theta));
    Ok(body)
}

/// Poses the body with explicitly supplied per-part scales.
pub fn forward_kinematics_scaled(scales: &[PartScale], theta: &PoseParams) -> Result<BodyState> {
    theta.validate()?;
    let skel = rest_skeleton();
    if scales.len() != skel.parts.len() {
        return Err(invalid(format!(
            "expected {} part scales, got {}",
            skel.parts.len(),
            scales.len()
        )));
    }
    let pairs: Vec<(f64, f64)> = scales.iter().map(|s| (s.length, s.radius)).collect();
    let transforms = fk_transforms(skel, &theta.to_flat(), &pairs);
    let capsules: Vec<Capsule> = skel
        .parts
        .iter()
        .zip(scales)
        .map(|(p, s)| scaled_capsule(p, *s))
        .collect();
    let boxes = boxes_from_capsules(&capsules, DEFAULT_PADDING);
    Ok(BodyState {
        transforms,
        capsules: Some(capsules),
        boxes,
        adjacency: skel.adjacency(),
        scales: Some(scales.to_vec()),
        padding: DEFAULT_PADDING,
        params: None,
    })
}

/// Canonicalizes a world point into part `k`'s frame.
pub fn canonicalize(x: Vec3, g: &RigidTransform) -> Vec3 {
    g.canonicalize(x)
}

pub fn boxes_from_capsules(capsules: &[Capsule], padding: f64) -> Vec<PartBox> {
    capsules
        .iter()
        .map(|c| {
            let (lo, hi) = c.aabb();
            PartBox::padded(lo, hi, padding)
        })
        .collect()
}

/// Padded canonical AABB of each part's capsule.
pub fn compute_part_boxes(body: &BodyState, padding: f64) -> Result<Vec<PartBox>> {
    if !(padding >= 0.0 && padding.is_finite()) {
        return Err(invalid(format!(
            "padding must be non-negative, got {padding}"
        )));
    }
    let capsules = body
        .capsules
        .as_ref()
        .ok_or_else(|| invalid("body has no analytic part geometry; use boxes_from_clouds"))?;
    Ok(boxes_from_capsules(capsules, padding))
}

/// Padded AABB of canonical point clouds (for bodies supplied as clouds).
pub fn boxes_from_clouds(clouds: &[Vec<Vec3>], padding: f64) -> Result<Vec<PartBox>> {
    clouds
        .iter()
        .map(|cloud| {
            if cloud.is_empty() {
                return Err(invalid("empty part cloud"));
            }
            let mut lo = [f64::INFINITY; 3];
            let mut hi = [f64::NEG_INFINITY; 3];
            for p in cloud {
                for i in 0..3 {
                    lo[i] = lo[i].min(p[i]);
                    hi[i] = hi[i].max(p[i]);
                }
            }
            Ok(PartBox::padded(lo, hi, padding))
        })
        .collect()
}

/// Result of the box-based far-field distance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoxDistance {
    pub distance: f64,
    /// Nearest box by signed distance.
    pub part: usize,
    /// The point lies inside at least one box; the value is then a negative
    /// inside-box depth and must not be used as an SDF estimate.
    pub inside_box: bool,
}

/// Minimum over parts of the distance from the canonicalized point to the
/// part's padded box.
pub fn analytic_box_sdf(x: Vec3, body: &BodyState) -> BoxDistance {
    let mut best = BoxDistance {
        distance: f64::INFINITY,
        part: 0,
        inside_box: false,
    };
    for k in 0..body.num_parts() {
        let d = body.boxes[k].signed_distance(body.canonicalize(k, x));
        if d < best.distance {
            best.distance = d;
            best.part = k;
        }
    }
    best.inside_box = best.distance <= 0.0;
    best
}

/// Chains gradients on part `k`'s padded canonical box corners back to its
/// (length, radius) scales. Both corners are linear in the two scales.
pub fn box_scale_pullback(k: usize, padding: f64, d_min: Vec3, d_max: Vec3) -> (f64, f64) {
    let c = rest_skeleton().parts[k].capsule;
    let (mut dl, mut dr) = (0.0, 0.0);
    for i in 0..3 {
        let (lo, hi) = (c.a[i].min(c.b[i]), c.a[i].max(c.b[i]));
        let span = hi - lo;
        dl += d_min[i] * (lo - padding * span) + d_max[i] * (hi + padding * span);
        dr += (d_max[i] - d_min[i]) * c.radius * (1.0 + 2.0 * padding);
    }
    (dl, dr)
}

/// Derivatives of every part transform and scale with respect to the 58
/// body parameters (θ then β), evaluated by forward-mode differentiation.
pub struct FkJacobian {
    pub transforms: Vec<Rigid<Dual>>,
    pub scales: Vec<(Dual, Dual)>,
}

/// Cotangent of a scalar loss with respect to per-part transform entries and scales.
#[derive(Clone, Debug)]
pub struct BodyCotangent {
    pub rot: Vec<[[f64; 3]; 3]>,
    pub trans: Vec<Vec3>,
    pub length: Vec<f64>,
    pub radius: Vec<f64>,
}

impl BodyCotangent {
    pub fn zeros(k: usize) -> Self {
        Self {
            rot: vec![[[0.0; 3]; 3]; k],
            trans: vec![[0.0; 3]; k],
            length: vec![0.0; k],
            radius: vec![0.0; k],
        }
    }
}

impl FkJacobian {
    pub fn new(beta: &ShapeParams, theta: &PoseParams) -> Result<Self> {
        check_params(beta, theta)?;
        let flat = theta.to_flat();
        let theta_d: [Dual; THETA_LEN] = std::array::from_fn(|i| Dual::seed(flat[i], i));
        let beta_d: [Dual; BETA_LEN] =
            std::array::from_fn(|i| Dual::seed(beta.beta[i], THETA_LEN + i));
        let scales = scales_from_beta(&beta_d);
        let transforms = fk_transforms(rest_skeleton(), &theta_d, &scales);
        Ok(Self { transforms, scales })
    }

    /// Chains a cotangent back to `(dθ, dβ)`.
    pub fn pullback(&self, ct: &BodyCotangent) -> ([f64; THETA_LEN], [f64; BETA_LEN]) {
        let mut acc = [0.0; N_BODY_PARAMS];
        let mut add = |d: &Dual, w: f64| {
            if w != 0.0 {
                for (a, v) in acc.iter_mut().zip(d.d.iter()) {
                    *a += w * v;
                }
            }
        };
        for (k, g) in self.transforms.iter().enumerate() {
            for i in 0..3 {
                for j in 0..3 {
                    add(&g.rot[i][j], ct.rot[k][i][j]);
                }
                add(&g.trans[i], ct.trans[k][i]);
            }
            add(&self.scales[k].0, ct.length[k]);
            add(&self.scales[k].1, ct.radius[k]);
        }
        let mut dtheta = [0.0; THETA_LEN];
        let mut dbeta = [0.0; BETA_LEN];
        dtheta.copy_from_slice(&acc[..THETA_LEN]);
        dbeta.copy_from_slice(&acc[THETA_LEN..]);
        (dtheta, dbeta)
    }
}
