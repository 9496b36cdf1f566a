//! Fitting the encoder and decoder bank to exact distances of randomly posed
//! synthetic bodies, plus checkpoints and ablation sweeps.

mod ablation;
mod checkpoint;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use ablation::{ablation_matrix, mean_report, standard_sweeps, AblationEntry, AblationRow};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, load_checkpoint_for, save_checkpoint,
    Checkpoint, RngState, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};

use crate::body::{forward_kinematics, random_shape, BodyState, PoseParams, ShapeParams, Vec3};
use crate::error::{invalid, Error, Result};
use crate::numerics::{adam_step, AdamState, Tape, Tensor, Var};
use crate::oracle::{
    clouds_to_f32, evaluate, sample_surface, sample_training_points, EvalReport, TrainSample,
};
use crate::volsdf::{
    record_query, DecoderSpec, ModelParams, ModelVars, PreparedModel, RecordOptions,
};

/// Where training bodies come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum TrainBodies {
    /// Fresh β ~ N(0, 1) (clamped) and uniform joint angles every step.
    Random,
    /// A fixed pool of `count` bodies drawn from `seed`, sampled with replacement.
    Pool { count: usize, seed: u64 },
    /// One body for every step (overfit mode).
    Fixed {
        beta: ShapeParams,
        theta: PoseParams,
    },
    /// One shape in fresh uniform poses every step.
    FixedShape { beta: ShapeParams },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub total_steps: u64,
    pub seed: u64,
    pub rank: usize,
    pub width: usize,
    pub use_gamma: bool,
    pub padding: f64,
    pub points_per_part: usize,
    /// `τ_s` of the tanh sign surrogate, metres.
    pub sign_sharpness: f64,
    /// Half-width of the uniform per-joint axis-angle range, radians.
    pub joint_range: f64,
    pub bodies: TrainBodies,
    /// Steps between progress evaluations; 0 disables them.
    pub eval_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            lr_start: 1e-4,
            lr_end: 1e-5,
            total_steps: 50_000,
            seed: 0,
            rank: crate::volsdf::DEFAULT_RANK,
            width: crate::volsdf::DEFAULT_WIDTH,
            use_gamma: true,
            padding: crate::body::DEFAULT_PADDING,
            points_per_part: crate::oracle::DEFAULT_CLOUD_POINTS,
            sign_sharpness: 0.005,
            joint_range: 0.9,
            bodies: TrainBodies::Random,
            eval_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn spec(&self) -> DecoderSpec {
        DecoderSpec {
            width: self.width,
            rank: self.rank,
            use_gamma: self.use_gamma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.spec().validate()?;
        let positive = [
            self.lr_start,
            self.lr_end,
            self.sign_sharpness,
            self.joint_range,
        ];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(invalid(
                "learning rates, sign sharpness and joint range must be positive",
            ));
        }
        if self.lr_end > self.lr_start {
            return Err(invalid("lr_end must not exceed lr_start"));
        }
        if self.batch_size == 0 || self.total_steps == 0 || self.points_per_part == 0 {
            return Err(invalid(
                "batch size, step count and points per part must be positive",
            ));
        }
        if !(self.padding.is_finite() && self.padding >= 0.0) {
            return Err(invalid("padding must be non-negative"));
        }
        if let TrainBodies::Pool { count: 0, .. } = self.bodies {
            return Err(invalid("body pool is empty"));
        }
        Ok(())
    }

    /// Linear anneal: exactly `lr_start` at step 0, exactly `lr_end` at the
    /// final step.
    pub fn lr_at(&self, step: u64) -> f64 {
        if step + 1 >= self.total_steps {
            return if self.total_steps == 1 {
                self.lr_start
            } else {
                self.lr_end
            };
        }
        let t = step as f64 / (self.total_steps - 1) as f64;
        self.lr_start + (self.lr_end - self.lr_start) * t
    }
}

fn sign(d: f64) -> f64 {
    if d > 0.0 {
        1.0
    } else if d < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Mean of `(tanh(d̃/τ) − sgn d)² + (|d̃| − |d|)²`.
pub fn loss(pred: &[f64], gt: &[f64], tau: f64) -> Result<f64> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(invalid(
            "predictions and labels must be non-empty and aligned",
        ));
    }
    let sum: f64 = pred
        .iter()
        .zip(gt)
        .map(|(&p, &d)| (((p / tau).tanh() - sign(d)).powi(2)) + (p.abs() - d.abs()).powi(2))
        .sum();
    Ok(sum / pred.len() as f64)
}

/// The same decomposition with a hard sign on the prediction; reporting only.
pub fn hard_sign_loss(pred: &[f64], gt: &[f64]) -> Result<f64> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(invalid(
            "predictions and labels must be non-empty and aligned",
        ));
    }
    let sum: f64 = pred
        .iter()
        .zip(gt)
        .map(|(&p, &d)| (sign(p) - sign(d)).powi(2) + (p.abs() - d.abs()).powi(2))
        .sum();
    Ok(sum / pred.len() as f64)
}

/// Sum (not mean) of the per-sample loss terms, recorded on a tape.
pub fn record_loss_sum(tape: &mut Tape, pred: Var, gt: &[f64], tau: f64) -> Result<Var> {
    let n = gt.len();
    let sgn = tape.constant(Tensor::from_rows(
        n,
        1,
        gt.iter().map(|&d| sign(d) as f32).collect(),
    ));
    let abs_gt = tape.constant(Tensor::from_rows(
        n,
        1,
        gt.iter().map(|&d| d.abs() as f32).collect(),
    ));
    let scaled = tape.scale(pred, (1.0 / tau) as f32);
    let t = tape.tanh(scaled);
    let s = tape.sub(t, sgn)?;
    let s2 = tape.square(s);
    let a = tape.abs(pred);
    let a = tape.sub(a, abs_gt)?;
    let a2 = tape.square(a);
    let both = tape.add(s2, a2)?;
    Ok(tape.sum(both))
}

/// One body's training inputs.
#[derive(Clone, Debug)]
pub struct BodyExample {
    pub body: BodyState,
    pub clouds: Vec<Vec<[f32; 3]>>,
    /// Supervision samples inside at least one padded box.
    pub samples: Vec<TrainSample>,
}

/// Poses a body, samples its part clouds and in-box supervision points.
pub fn make_example(
    beta: &ShapeParams,
    theta: &PoseParams,
    padding: f64,
    points_per_part: usize,
    rng: &mut ChaCha8Rng,
) -> Result<BodyExample> {
    let body = forward_kinematics(beta, theta)?.with_padding(padding)?;
    let clouds = clouds_to_f32(&sample_surface(&body, points_per_part, rng)?);
    let samples = sample_training_points(&body, rng)?
        .into_iter()
        .filter(|s| !body.containing_parts(s.point).is_empty())
        .collect();
    Ok(BodyExample {
        body,
        clouds,
        samples,
    })
}

/// Records the summed loss of one example; returns it with its query values.
fn record_example(
    tape: &mut Tape,
    vars: &ModelVars,
    spec: &DecoderSpec,
    ex: &BodyExample,
    tau: f64,
) -> Result<(Var, Var)> {
    let n = ex.clouds[0].len();
    let cloud = tape.constant(crate::encoder::stack_clouds(&ex.clouds)?);
    let latents = vars.encoder.encode(tape, cloud, n)?;
    let points: Vec<Vec3> = ex.samples.iter().map(|s| s.point).collect();
    let opts = RecordOptions {
        clamp: false,
        require_implicit: true,
        track_points: false,
        ..Default::default()
    };
    let graph = record_query(tape, spec, &vars.bank, latents, &ex.body, &points, opts)?;
    let gt: Vec<f64> = ex.samples.iter().map(|s| s.gt_sdf).collect();
    Ok((record_loss_sum(tape, graph.values, &gt, tau)?, graph.values))
}

/// Mean loss over every sample of `batch`, plus each example's query values.
fn record_batch(
    tape: &mut Tape,
    vars: &ModelVars,
    spec: &DecoderSpec,
    batch: &[BodyExample],
    tau: f64,
) -> Result<(Var, Vec<Var>)> {
    let mut sums = Vec::with_capacity(batch.len());
    let mut values = Vec::with_capacity(batch.len());
    for ex in batch {
        let (s, v) = record_example(tape, vars, spec, ex, tau)?;
        sums.push(s);
        values.push(v);
    }
    let count: usize = batch.iter().map(|e| e.samples.len()).sum();
    let stacked = tape.concat(&sums, crate::numerics::Axis::Rows)?;
    let total = tape.sum(stacked);
    Ok((tape.scale(total, 1.0 / count as f32), values))
}

/// Mean training loss over `examples` with its gradient for every tensor,
/// in [`ModelParams::tensors`] order.
pub fn loss_and_grad(
    model: &ModelParams,
    examples: &[BodyExample],
    tau: f64,
) -> Result<(f64, Vec<Tensor>)> {
    if examples.is_empty() {
        return Err(invalid("no examples"));
    }
    let mut tape = Tape::new();
    let vars = model.record(&mut tape, true);
    let (mean, _) = record_batch(&mut tape, &vars, &model.spec, examples, tau)?;
    let grads = tape.backward(mean)?;
    Ok((
        tape.value(mean).item() as f64,
        vars.leaves().into_iter().map(|v| grads.get(v)).collect(),
    ))
}

/// Mean loss of a model over examples, without gradients.
pub fn examples_loss(model: &ModelParams, examples: &[BodyExample], tau: f64) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for ex in examples {
        let mut tape = Tape::new();
        let vars = model.record(&mut tape, false);
        let (sum, _) = record_example(&mut tape, &vars, &model.spec, ex, tau)?;
        total += tape.value(sum).item() as f64;
        count += ex.samples.len();
    }
    Ok(total / count.max(1) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    pub samples: usize,
}

#[derive(Clone, Debug)]
pub enum FitEvent {
    Step(StepStats),
    Eval { step: u64, report: EvalReport },
}

/// Optimizer loop state. The data generator is the only random source after
/// initialization, so restoring it resumes a run exactly.
pub struct Trainer {
    pub config: TrainConfig,
    pub model: ModelParams,
    pub adam: AdamState,
    pub rng: ChaCha8Rng,
    pub step: u64,
    pool: Vec<(ShapeParams, PoseParams)>,
}

fn body_pool(config: &TrainConfig) -> Vec<(ShapeParams, PoseParams)> {
    match config.bodies {
        TrainBodies::Pool { count, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..count)
                .map(|_| {
                    (
                        random_shape(&mut rng),
                        PoseParams::random(&mut rng, config.joint_range),
                    )
                })
                .collect()
        }
        _ => Vec::new(),
    }
}

/// Data stream of a run: same seed as initialization, separate stream.
pub fn data_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = ModelParams::new(config.spec(), &mut ChaCha8Rng::seed_from_u64(config.seed))?;
        let adam = AdamState::new(&model.tensors().into_iter().cloned().collect::<Vec<_>>());
        let pool = body_pool(&config);
        Ok(Self {
            rng: data_rng(config.seed),
            pool,
            config,
            model,
            adam,
            step: 0,
        })
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        ckpt.config.validate()?;
        let adam = match ckpt.optimizer {
            Some(a) => a,
            None => AdamState::new(
                &ckpt
                    .model
                    .tensors()
                    .into_iter()
                    .cloned()
                    .collect::<Vec<_>>(),
            ),
        };
        let rng = match ckpt.rng {
            Some(r) => r.restore(),
            None => data_rng(ckpt.config.seed),
        };
        let pool = body_pool(&ckpt.config);
        Ok(Self {
            pool,
            config: ckpt.config,
            model: ckpt.model,
            adam,
            rng,
            step: ckpt.step,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            model: self.model.clone(),
            optimizer: Some(self.adam.clone()),
            step: self.step,
            rng: Some(RngState::capture(&self.rng)),
        }
    }

    fn draw_params(&mut self) -> (ShapeParams, PoseParams) {
        use rand::Rng;
        match &self.config.bodies {
            TrainBodies::Random => (
                random_shape(&mut self.rng),
                PoseParams::random(&mut self.rng, self.config.joint_range),
            ),
            TrainBodies::Pool { .. } => self.pool[self.rng.gen_range(0..self.pool.len())],
            TrainBodies::Fixed { beta, theta } => (*beta, *theta),
            TrainBodies::FixedShape { beta } => (
                *beta,
                PoseParams::random(&mut self.rng, self.config.joint_range),
            ),
        }
    }

    pub fn draw_batch(&mut self) -> Result<Vec<BodyExample>> {
        (0..self.config.batch_size)
            .map(|_| {
                let (beta, theta) = self.draw_params();
                make_example(
                    &beta,
                    &theta,
                    self.config.padding,
                    self.config.points_per_part,
                    &mut self.rng,
                )
            })
            .collect()
    }

    /// One optimizer step on a freshly drawn batch.
    pub fn step(&mut self) -> Result<StepStats> {
        let batch = self.draw_batch()?;
        let tau = self.config.sign_sharpness;
        let mut tape = Tape::new();
        let vars = self.model.record(&mut tape, true);
        let (mean, values) = record_batch(&mut tape, &vars, &self.model.spec, &batch, tau)?;
        let count: usize = batch.iter().map(|e| e.samples.len()).sum();
        let loss = tape.value(mean).item() as f64;
        if !loss.is_finite() {
            return Err(self.divergence(&tape, &batch, &values));
        }
        let lr = self.config.lr_at(self.step);
        let grads = tape.backward(mean)?;
        let grads: Vec<Tensor> = vars.leaves().into_iter().map(|v| grads.get(v)).collect();
        adam_step(&mut self.model.tensors_mut(), &grads, &mut self.adam, lr)?;
        Ok(StepStats {
            step: self.step,
            loss,
            lr,
            samples: count,
        })
    }

    fn divergence(&self, tape: &Tape, batch: &[BodyExample], values: &[Var]) -> Error {
        for (ex, v) in batch.iter().zip(values) {
            for (s, p) in ex.samples.iter().zip(tape.value(*v).data()) {
                if !p.is_finite() {
                    return Error::Diverged(format!(
                        "step {}: prediction {p} at point {:?} (gt {}, part {})",
                        self.step, s.point, s.gt_sdf, s.part
                    ));
                }
            }
        }
        Error::Diverged(format!(
            "step {}: non-finite loss with finite predictions",
            self.step
        ))
    }
}

/// Trains from scratch for `config.total_steps`, reporting each step and the
/// periodic evaluations through `on_event`.
pub fn fit(config: TrainConfig, on_event: impl FnMut(FitEvent)) -> Result<Checkpoint> {
    let mut trainer = Trainer::new(config)?;
    run(&mut trainer, on_event)?;
    Ok(trainer.checkpoint())
}

/// Continues a trainer until `config.total_steps`.
pub fn run(trainer: &mut Trainer, mut on_event: impl FnMut(FitEvent)) -> Result<()> {
    while trainer.step < trainer.config.total_steps {
        let stats = trainer.step_and_advance()?;
        on_event(FitEvent::Step(stats));
        let every = trainer.config.eval_every;
        if every > 0 && trainer.step.is_multiple_of(every) {
            let report = progress_eval(&trainer.model, &trainer.config)?;
            on_event(FitEvent::Eval {
                step: trainer.step,
                report,
            });
        }
    }
    Ok(())
}

/// Scores a model on one held-out body drawn from `config.seed`.
pub fn progress_eval(model: &ModelParams, config: &TrainConfig) -> Result<EvalReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(2);
    let (beta, theta) = match &config.bodies {
        TrainBodies::Fixed { beta, theta } => (*beta, *theta),
        TrainBodies::FixedShape { beta } => {
            (*beta, PoseParams::random(&mut rng, config.joint_range))
        }
        _ => (
            random_shape(&mut rng),
            PoseParams::random(&mut rng, config.joint_range),
        ),
    };
    evaluate_model(
        model,
        &beta,
        &theta,
        config.padding,
        config.points_per_part,
        &mut rng,
    )
}

/// Full evaluation of a model on one body against the exact distance.
pub fn evaluate_model(
    model: &ModelParams,
    beta: &ShapeParams,
    theta: &PoseParams,
    padding: f64,
    points_per_part: usize,
    rng: &mut ChaCha8Rng,
) -> Result<EvalReport> {
    let body = forward_kinematics(beta, theta)?.with_padding(padding)?;
    let clouds = clouds_to_f32(&sample_surface(&body, points_per_part, rng)?);
    let prepared = PreparedModel::new(model, &model.latents(&clouds)?)?;
    evaluate(
        |p| {
            Ok(prepared
                .query(&body, p)?
                .into_iter()
                .map(|r| r.distance)
                .collect())
        },
        &body,
        rng,
    )
}

impl Trainer {
    /// [`Trainer::step`] followed by advancing the step counter.
    pub fn step_and_advance(&mut self) -> Result<StepStats> {
        let s = self.step()?;
        self.step += 1;
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(rank: usize) -> TrainConfig {
        TrainConfig {
            batch_size: 1,
            total_steps: 4,
            rank,
            width: 16,
            points_per_part: 64,
            lr_start: 1e-3,
            lr_end: 1e-4,
            ..Default::default()
        }
    }

    #[test]
    fn loss_examples() {
        let gt = [0.1, -0.2, 0.05];
        assert!(loss(&gt, &gt, 0.005).unwrap() <= 1e-6);
        let neg: Vec<f64> = gt.iter().map(|d| -d).collect();
        let l = loss(&neg, &gt, 0.005).unwrap();
        assert!((l - 4.0).abs() < 1e-6, "{l}");
        assert_eq!(hard_sign_loss(&neg, &gt).unwrap(), 4.0);
        assert!(loss(&[1.0], &[], 0.005).is_err());
    }

    #[test]
    fn recorded_loss_matches_scalar_loss_and_gradient() {
        use crate::numerics::{check_direction, mixed_direction};
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let tau = 0.005;
        let mut checked = 0;
        while checked < 100 {
            let gt: Vec<f64> = (0..4).map(|_| rng.gen_range(-0.1..0.1)).collect();
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-0.05..0.05)).collect();
            let mut tape = Tape::new();
            let p = tape.var(Tensor::from_rows(
                4,
                1,
                x.iter().map(|&v| v as f32).collect(),
            ));
            let s = record_loss_sum(&mut tape, p, &gt, tau).unwrap();
            let want = loss(
                &x.iter().map(|&v| v as f32 as f64).collect::<Vec<_>>(),
                &gt,
                tau,
            )
            .unwrap()
                * 4.0;
            assert!((tape.value(s).item() as f64 - want).abs() <= 1e-5 * want.max(1.0));
            let g: Vec<f64> = tape
                .backward(s)
                .unwrap()
                .get(p)
                .data()
                .iter()
                .map(|&v| v as f64)
                .collect();
            let dir = mixed_direction(&g, &mut rng);
            // The kink of |d̃| sits at zero; signature records its side.
            let f = |y: &[f64]| {
                let sig = y.iter().fold(0u64, |h, v| {
                    h * 3 + (v > &0.0) as u64 + 2 * (v < &0.0) as u64
                });
                Ok((loss(y, &gt, tau)? * 4.0, sig))
            };
            if let Some(c) = check_direction(f, &x, &g, &dir, 1e-5).unwrap() {
                assert!(c.rel_err() <= 1e-3, "{c:?}");
                checked += 1;
            }
        }
    }

    #[test]
    fn schedule_endpoints_are_exact() {
        let c = TrainConfig {
            total_steps: 11,
            ..Default::default()
        };
        assert_eq!(c.lr_at(0), 1e-4);
        assert_eq!(c.lr_at(10), 1e-5);
        assert!(c.lr_at(5) < 1e-4 && c.lr_at(5) > 1e-5);
        let bad = TrainConfig {
            lr_end: 1e-3,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn identical_seeds_give_identical_runs() {
        let mut a = Vec::new();
        let ca = fit(tiny(2), |e| {
            if let FitEvent::Step(s) = e {
                a.push(s.loss)
            }
        })
        .unwrap();
        let mut b = Vec::new();
        let cb = fit(tiny(2), |e| {
            if let FitEvent::Step(s) = e {
                b.push(s.loss)
            }
        })
        .unwrap();
        assert_eq!(a, b);
        assert_eq!(ca.model, cb.model);
        assert!(a.iter().all(|l| l.is_finite()));
    }

    #[test]
    fn initial_loss_does_not_depend_on_rank() {
        let losses: Vec<f64> = [0, 3, 8]
            .iter()
            .map(|&r| Trainer::new(tiny(r)).unwrap().step().unwrap().loss)
            .collect();
        for l in &losses {
            assert!((l - losses[0]).abs() <= 0.1 * losses[0], "{losses:?}");
        }
    }
}
