//! Differentiable interaction terms built on the query engine: collision
//! against point clouds, self-intersection detection and pose repair.

mod overlap;
mod repair;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use overlap::{
    detect_overlaps, overlap_volume, sample_penetrating, OverlapRegion, PenSampleSet,
    REGION_SAMPLES,
};
pub use repair::{
    resolve_selfpen, selfpen_loss, RepairConfig, RepairReport, RepairStatus, SelfPenTerms,
};

use crate::body::{
    box_scale_pullback, dot3, forward_kinematics, BodyCotangent, BodyState, FkJacobian, PoseParams,
    ShapeParams, Vec3, BETA_LEN, THETA_LEN,
};
use crate::encoder::stack_clouds;
use crate::error::{invalid, Result};
use crate::numerics::{Tape, Tensor, Var};
use crate::oracle::{sample_surface_detailed, SurfacePoint};
use crate::volsdf::{record_query, ModelParams, PreparedModel, RecordOptions};

/// A trained model attached to one parameterized body. Part clouds are
/// resampled from `cloud_seed` on every evaluation, so they follow β while
/// keeping the same random draws.
#[derive(Clone, Copy, Debug)]
pub struct BodyField<'a> {
    pub model: &'a ModelParams,
    pub beta: ShapeParams,
    pub theta: PoseParams,
    pub padding: f64,
    pub cloud_points: usize,
    pub cloud_seed: u64,
}

/// Value of a scalar objective with its gradients.
#[derive(Clone, Debug)]
pub struct FieldGrad {
    pub value: f64,
    /// Distances in world units at the query points.
    pub distances: Vec<f64>,
    pub d_points: Vec<Vec3>,
    pub d_theta: [f64; THETA_LEN],
    pub d_beta: [f64; BETA_LEN],
}

impl<'a> BodyField<'a> {
    pub fn new(model: &'a ModelParams, beta: ShapeParams, theta: PoseParams) -> Self {
        Self {
            model,
            beta,
            theta,
            padding: crate::body::DEFAULT_PADDING,
            cloud_points: crate::oracle::DEFAULT_CLOUD_POINTS,
            cloud_seed: 0,
        }
    }

    pub fn with_theta(&self, theta: PoseParams) -> Self {
        Self { theta, ..*self }
    }

    pub fn body(&self) -> Result<BodyState> {
        forward_kinematics(&self.beta, &self.theta)?.with_padding(self.padding)
    }

    pub fn cloud_samples(&self, body: &BodyState) -> Result<Vec<Vec<SurfacePoint>>> {
        sample_surface_detailed(
            body,
            self.cloud_points,
            &mut ChaCha8Rng::seed_from_u64(self.cloud_seed),
        )
    }

    fn clouds_f32(samples: &[Vec<SurfacePoint>]) -> Vec<Vec<[f32; 3]>> {
        samples
            .iter()
            .map(|c| c.iter().map(|s| s.point().map(|v| v as f32)).collect())
            .collect()
    }

    /// Posed body and a query engine with this body's latents.
    pub fn prepare(&self) -> Result<(BodyState, PreparedModel)> {
        let body = self.body()?;
        let clouds = Self::clouds_f32(&self.cloud_samples(&body)?);
        let prepared = PreparedModel::new(self.model, &self.model.latents(&clouds)?)?;
        Ok((body, prepared))
    }

    /// Latents of this body's part clouds.
    pub fn latents(&self) -> Result<Tensor> {
        let body = self.body()?;
        self.model
            .latents(&Self::clouds_f32(&self.cloud_samples(&body)?))
    }

    /// Evaluates `objective` on world distances `scale · d̃(x / scale)` and
    /// back-propagates to the points, θ and β.
    pub fn with_grad(
        &self,
        points: &[Vec3],
        scale: f64,
        objective: impl FnOnce(&mut Tape, Var) -> Result<Var>,
    ) -> Result<FieldGrad> {
        self.grad_impl(points, scale, None, objective)
    }

    /// As [`BodyField::with_grad`] with the latents held constant. Exact for
    /// θ since clouds live in canonical frames; `d_beta` then omits the
    /// encoder path.
    pub fn with_grad_frozen(
        &self,
        points: &[Vec3],
        scale: f64,
        latents: &Tensor,
        objective: impl FnOnce(&mut Tape, Var) -> Result<Var>,
    ) -> Result<FieldGrad> {
        self.grad_impl(points, scale, Some(latents), objective)
    }

    fn grad_impl(
        &self,
        points: &[Vec3],
        scale: f64,
        frozen: Option<&Tensor>,
        objective: impl FnOnce(&mut Tape, Var) -> Result<Var>,
    ) -> Result<FieldGrad> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(invalid("scale must be positive and finite"));
        }
        let body = self.body()?;
        let mut tape = Tape::new();
        let vars = self.model.record(&mut tape, false);
        let (latents, cloud) = match frozen {
            Some(l) => (tape.constant(l.clone()), None),
            None => {
                let samples = self.cloud_samples(&body)?;
                let cloud = tape.var(stack_clouds(&Self::clouds_f32(&samples))?);
                (
                    vars.encoder.encode(&mut tape, cloud, self.cloud_points)?,
                    Some((cloud, samples)),
                )
            }
        };
        let local: Vec<Vec3> = points.iter().map(|p| p.map(|v| v / scale)).collect();
        let graph = record_query(
            &mut tape,
            &self.model.spec,
            &vars.bank,
            latents,
            &body,
            &local,
            RecordOptions::default(),
        )?;
        let world = tape.scale(graph.values, scale as f32);
        let out = objective(&mut tape, world)?;
        let value = tape.value(out).item() as f64;
        let distances = tape.value(world).data().iter().map(|&v| v as f64).collect();
        let grads = tape.backward(out)?;
        let qct = graph.pullback(&grads, &body, &local);

        let k = body.num_parts();
        let mut ct = BodyCotangent::zeros(k);
        ct.rot = qct.rot;
        ct.trans = qct.trans;
        for part in 0..k {
            let (dl, dr) =
                box_scale_pullback(part, body.padding, qct.box_min[part], qct.box_max[part]);
            ct.length[part] += dl;
            ct.radius[part] += dr;
        }
        if let Some((cloud, samples)) = cloud {
            let scales = body.scales.as_ref().expect("synthetic bodies carry scales");
            let gc = grads.get(cloud);
            for (part, cloud_samples) in samples.iter().enumerate() {
                for (i, s) in cloud_samples.iter().enumerate() {
                    let row = gc.row_slice(part * self.cloud_points + i);
                    let g = [row[0] as f64, row[1] as f64, row[2] as f64];
                    ct.length[part] += dot3(g, s.axis) / scales[part].length;
                    ct.radius[part] += dot3(g, s.offset) / scales[part].radius;
                }
            }
        }
        let (d_theta, d_beta) = FkJacobian::new(&self.beta, &self.theta)?.pullback(&ct);
        let d_points = qct.points.iter().map(|g| g.map(|v| v / scale)).collect();
        Ok(FieldGrad {
            value,
            distances,
            d_points,
            d_theta,
            d_beta,
        })
    }
}

/// Mean `ReLU(−d)` of world distances `d = scale · d̃(x / scale)`, with
/// gradients. Zero for an empty cloud.
pub fn collision_loss(field: &BodyField, points: &[Vec3], scale: f64) -> Result<FieldGrad> {
    if points.is_empty() {
        return Ok(FieldGrad {
            value: 0.0,
            distances: Vec::new(),
            d_points: Vec::new(),
            d_theta: [0.0; THETA_LEN],
            d_beta: [0.0; BETA_LEN],
        });
    }
    field.with_grad(points, scale, |tape, d| {
        let neg = tape.scale(d, -1.0);
        let r = tape.relu(neg);
        Ok(tape.mean(r))
    })
}

/// Value-only collision loss through the prepared query path.
pub fn collision_loss_value(
    body: &BodyState,
    prepared: &PreparedModel,
    points: &[Vec3],
    scale: f64,
) -> Result<f64> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(invalid("scale must be positive and finite"));
    }
    if points.is_empty() {
        return Ok(0.0);
    }
    let local: Vec<Vec3> = points.iter().map(|p| p.map(|v| v / scale)).collect();
    let res = prepared.query(body, &local)?;
    let sum: f64 = res.iter().map(|r| (-(r.distance * scale)).max(0.0)).sum();
    Ok(sum / points.len() as f64)
}
