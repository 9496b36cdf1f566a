use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{detect_overlaps, overlap_volume, sample_penetrating, BodyField};
use crate::body::{norm3, sub3, PoseParams, NUM_PARTS, THETA_LEN};
use crate::error::{invalid, Result};
use crate::numerics::Tensor;
use crate::volsdf::PreparedModel;

pub const REPAIR_SCHEMA_VERSION: u32 = 1;
/// Monte-Carlo draws per capsule pair for the reported overlap volume.
pub const OVERLAP_SAMPLES: usize = 20_000;

/// Plain gradient descent on `selfpen_weight · Σσ(−d/τ_p) + pose_prior_weight · ‖θ − θ₀‖²`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RepairConfig {
    pub lr: f64,
    pub max_iters: usize,
    pub pose_prior_weight: f64,
    pub selfpen_weight: f64,
    pub tau_p: f64,
    /// Use `σ(+d/τ_p)` instead, which rewards penetration under negative-inside.
    pub literal_sign: bool,
    pub seed: u64,
}

impl Default for RepairConfig {
    fn default() -> Self {
        Self {
            lr: 1e-5,
            max_iters: 200,
            pose_prior_weight: 1e3,
            selfpen_weight: 0.1,
            tau_p: 0.01,
            literal_sign: false,
            seed: 0,
        }
    }
}

impl RepairConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.lr,
            self.pose_prior_weight,
            self.selfpen_weight,
            self.tau_p,
        ];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) || self.max_iters == 0 {
            return Err(invalid("repair hyperparameters must be positive"));
        }
        Ok(())
    }
}

/// Unweighted terms and the weighted total.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelfPenTerms {
    pub penetration: f64,
    pub prior: f64,
    pub total: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepairStatus {
    Resolved,
    /// `max_iters` reached with samples remaining; the best pose is returned.
    MaxItersReached,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepairReport {
    pub schema_version: u32,
    pub status: RepairStatus,
    pub config: RepairConfig,
    pub iterations: usize,
    /// |𝒮| at the start of each iteration.
    pub sample_counts: Vec<usize>,
    /// Loss terms of each gradient step, evaluated before the step.
    pub terms: Vec<SelfPenTerms>,
    pub theta_initial: Vec<f64>,
    pub theta_final: Vec<f64>,
    /// Largest per-joint axis-angle change, radians.
    pub max_joint_drift: f64,
    pub overlap_volume_initial: f64,
    pub overlap_volume_final: f64,
}

fn prior(theta: &PoseParams, theta0: &PoseParams) -> f64 {
    let (a, b) = (theta.to_flat(), theta0.to_flat());
    a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Self-penetration loss over a frozen sample set, with its θ gradient.
/// `latents` must belong to `field`'s body.
pub fn selfpen_loss(
    field: &BodyField,
    latents: &Tensor,
    samples: &[[f64; 3]],
    theta0: &PoseParams,
    cfg: &RepairConfig,
) -> Result<(SelfPenTerms, [f64; THETA_LEN])> {
    let prior_value = prior(&field.theta, theta0);
    let (penetration, mut grad) = if samples.is_empty() {
        (0.0, [0.0; THETA_LEN])
    } else {
        let sign = if cfg.literal_sign { 1.0 } else { -1.0 };
        let g = field.with_grad_frozen(samples, 1.0, latents, |tape, d| {
            let z = tape.scale(d, (sign / cfg.tau_p) as f32);
            let s = tape.sigmoid(z);
            Ok(tape.sum(s))
        })?;
        (g.value, g.d_theta.map(|v| cfg.selfpen_weight * v))
    };
    let (a, b) = (field.theta.to_flat(), theta0.to_flat());
    for i in 0..THETA_LEN {
        grad[i] += 2.0 * cfg.pose_prior_weight * (a[i] - b[i]);
    }
    let total = cfg.selfpen_weight * penetration + cfg.pose_prior_weight * prior_value;
    Ok((
        SelfPenTerms {
            penetration,
            prior: prior_value,
            total,
        },
        grad,
    ))
}

fn max_joint_drift(a: &PoseParams, b: &PoseParams) -> f64 {
    (0..NUM_PARTS)
        .map(|k| norm3(sub3(a.joint_rotations[k], b.joint_rotations[k])))
        .fold(0.0, f64::max)
}

/// Gradient descent from `field.theta`, resampling overlap regions and
/// penetrating points every iteration. Stops as soon as no sample is found;
/// otherwise returns the pose with the fewest samples seen.
pub fn resolve_selfpen(
    field: &BodyField,
    cfg: &RepairConfig,
) -> Result<(PoseParams, RepairReport)> {
    cfg.validate()?;
    field.theta.validate()?;
    let theta0 = field.theta;
    let latents = field.latents()?;
    let prepared = PreparedModel::new(field.model, &latents)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut theta = theta0;
    let mut counts = Vec::new();
    let mut terms = Vec::new();
    let mut best = (usize::MAX, theta0);
    let mut status = RepairStatus::MaxItersReached;
    for _ in 0..cfg.max_iters {
        let current = field.with_theta(theta);
        let body = current.body()?;
        let regions = detect_overlaps(&body);
        let set = sample_penetrating(&prepared, &body, &regions, &mut rng)?;
        counts.push(set.len());
        if set.len() < best.0 {
            best = (set.len(), theta);
        }
        if set.is_empty() {
            status = RepairStatus::Resolved;
            break;
        }
        let (t, grad) = selfpen_loss(&current, &latents, &set.points, &theta0, cfg)?;
        terms.push(t);
        let mut flat = theta.to_flat();
        for (v, g) in flat.iter_mut().zip(grad) {
            *v -= cfg.lr * g;
        }
        theta = PoseParams::from_flat(&flat);
    }
    let final_theta = best.1;
    let volume =
        |th: &PoseParams| overlap_volume(&field.with_theta(*th).body()?, OVERLAP_SAMPLES, cfg.seed);
    let report = RepairReport {
        schema_version: REPAIR_SCHEMA_VERSION,
        status,
        config: *cfg,
        iterations: counts.len(),
        sample_counts: counts,
        terms,
        theta_initial: theta0.to_flat().to_vec(),
        theta_final: final_theta.to_flat().to_vec(),
        max_joint_drift: max_joint_drift(&final_theta, &theta0),
        overlap_volume_initial: volume(&theta0)?,
        overlap_volume_final: volume(&final_theta)?,
    };
    Ok((final_theta, report))
}
