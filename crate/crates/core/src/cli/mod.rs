//! Batch entry points. Every command prints one JSON report on stdout that
//! carries `schema_version` and the effective settings; failures print a JSON
//! error on stderr and exit with 2 (bad input or contract) or 3 (I/O).

mod config;
mod files;

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

pub use config::RunConfig;
pub use files::{
    decode_points, decode_sdf_values, encode_points, encode_sdf, read_points, read_sdf_values,
    write_points, PoseFile, FILE_VERSION, POINTS_MAGIC, POSE_SCHEMA_VERSION, SDF_MAGIC,
};

use crate::body::{
    forward_kinematics, load_external_body, random_shape, save_external_body, BodyState,
    ExternalBody, GtSample, PoseParams, ShapeParams, Vec3,
};
use crate::error::{invalid, Result};
use crate::interact::{resolve_selfpen, BodyField, RepairConfig, RepairStatus};
use crate::oracle::{
    eval_samples, evaluate_samples, export_grid, gt_sdf, sample_near_surface, write_grid,
    EvalReport, EVAL_UNIFORM,
};
use crate::training::{
    evaluate_model, load_checkpoint, mean_report, run as run_training, save_checkpoint, FitEvent,
    TrainBodies, TrainConfig, Trainer,
};
use crate::volsdf::{ModelParams, PreparedModel, QueryMode};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
/// Version of the benchmark point mix; bump when [`bench_mix`] changes.
pub const BENCH_MIX_VERSION: u32 = 1;
/// Margin around the body's world bounds for the far half of the mix, metres.
pub const BENCH_FAR_MARGIN: f64 = 1.0;

#[derive(Debug, Parser)]
#[command(
    name = "avsdf",
    version,
    about = "Articulated volumetric SDF body model"
)]
pub struct Cli {
    /// Worker threads; 1 forces the deterministic serial path.
    #[arg(long, global = true, env = "AVSDF_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write random bodies with ground-truth samples as body files.
    GenData(GenDataArgs),
    /// Train a model and write a checkpoint plus a metrics file.
    Train(TrainArgs),
    /// Score a checkpoint against exact distances.
    Eval(EvalArgs),
    /// Evaluate the distance field at the points of a points file.
    Query(QueryArgs),
    /// Sample the distance field on a regular grid.
    ExportGrid(GridArgs),
    /// Remove self-intersections from a pose.
    ResolveSelfpen(RepairArgs),
    /// Time the hybrid and implicit-only query paths.
    Bench(BenchArgs),
}

macro_rules! flags {
    ($s:expr; $($f:ident),* $(,)?) => {
        vec![$((stringify!($f).replace('_', "-"), $s.$f.clone())),*]
    };
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// `key=value` settings file; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub count: Option<String>,
    #[arg(long)]
    pub points_per_part: Option<String>,
    #[arg(long)]
    pub padding: Option<String>,
    #[arg(long)]
    pub joint_range: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Continue from this checkpoint; only `total-steps` may be changed.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<String>,
    /// Metrics JSON path; defaults to the checkpoint path with `.json` appended.
    #[arg(long)]
    pub metrics: Option<String>,
    #[arg(long)]
    pub batch_size: Option<String>,
    #[arg(long)]
    pub lr_start: Option<String>,
    #[arg(long)]
    pub lr_end: Option<String>,
    #[arg(long)]
    pub total_steps: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub rank: Option<String>,
    #[arg(long)]
    pub width: Option<String>,
    #[arg(long)]
    pub use_gamma: Option<String>,
    #[arg(long)]
    pub padding: Option<String>,
    #[arg(long)]
    pub points_per_part: Option<String>,
    #[arg(long)]
    pub sign_sharpness: Option<String>,
    #[arg(long)]
    pub joint_range: Option<String>,
    /// `random`, `pool`, `fixed` or `fixed-shape`.
    #[arg(long)]
    pub bodies: Option<String>,
    #[arg(long)]
    pub pool_count: Option<String>,
    #[arg(long)]
    pub pool_seed: Option<String>,
    /// Body for `bodies=fixed` (shape only for `fixed-shape`); rest pose with β = 0 when absent.
    #[arg(long)]
    pub pose_file: Option<String>,
    #[arg(long)]
    pub eval_every: Option<String>,
    /// Steps averaged per logged loss.
    #[arg(long)]
    pub log_every: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub ckpt: Option<String>,
    /// Body files with ground-truth blocks; random bodies are drawn when empty.
    #[arg(long, num_args = 1..)]
    pub bodies: Vec<PathBuf>,
    #[arg(long)]
    pub count: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
}

/// Selects the body a field is evaluated on.
#[derive(Debug, Args)]
pub struct BodySource {
    /// Body file; its transforms, boxes and clouds are used verbatim.
    #[arg(long)]
    pub body: Option<String>,
    /// Pose file; rest pose with β = 0 when neither is given.
    #[arg(long)]
    pub pose_file: Option<String>,
    /// Seed of the synthetic part clouds.
    #[arg(long)]
    pub cloud_seed: Option<String>,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub ckpt: Option<String>,
    #[arg(long)]
    pub points_file: Option<String>,
    #[arg(long)]
    pub out: Option<String>,
    /// `hybrid`, `full-k` or `implicit-only`.
    #[arg(long)]
    pub mode: Option<String>,
    #[command(flatten)]
    pub source: BodySource,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub ckpt: Option<String>,
    #[arg(long)]
    pub out: Option<String>,
    #[arg(long)]
    pub resolution: Option<String>,
    #[command(flatten)]
    pub source: BodySource,
}

#[derive(Debug, Args)]
pub struct RepairArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub ckpt: Option<String>,
    #[arg(long)]
    pub pose_file: Option<String>,
    /// Also write the report here.
    #[arg(long)]
    pub out: Option<String>,
    #[arg(long)]
    pub lr: Option<String>,
    #[arg(long)]
    pub max_iters: Option<String>,
    #[arg(long)]
    pub pose_prior_weight: Option<String>,
    #[arg(long)]
    pub selfpen_weight: Option<String>,
    #[arg(long)]
    pub tau_p: Option<String>,
    /// Penalize `σ(+d/τ)` instead of `σ(−d/τ)`.
    #[arg(long)]
    pub literal_sign: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub cloud_seed: Option<String>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Checkpoint to time; a freshly initialized default model when absent.
    #[arg(long)]
    pub ckpt: Option<String>,
    #[arg(long)]
    pub points: Option<String>,
    /// `hybrid`, `implicit-only` or `both`.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub repeat: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
}

fn resolve(config: &Option<PathBuf>, flags: Vec<(String, Option<String>)>) -> Result<RunConfig> {
    let file = config.as_ref().map(RunConfig::load).transpose()?;
    RunConfig::resolve(file, flags)
}

fn required(cfg: &RunConfig, key: &str) -> Result<String> {
    cfg.raw(key)
        .map(str::to_string)
        .ok_or_else(|| invalid(format!("missing required setting `{key}`")))
}

fn parse_mode(s: &str) -> Result<QueryMode> {
    match s {
        "hybrid" => Ok(QueryMode::Hybrid),
        "full-k" => Ok(QueryMode::FullK),
        "implicit-only" => Ok(QueryMode::ImplicitOnly),
        _ => Err(invalid(format!("unknown query mode `{s}`"))),
    }
}

fn report(command: &str, effective: Value, body: Value) -> Value {
    let mut out = json!({ "schema_version": REPORT_SCHEMA_VERSION, "command": command, "effective": effective });
    if let (Some(o), Value::Object(b)) = (out.as_object_mut(), body) {
        o.extend(b);
    }
    out
}

fn write_json(path: impl AsRef<Path>, v: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Parses `args` (program name first) and runs the command.
pub fn execute_args<I, T>(args: I) -> Result<Value>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| invalid(e.to_string()))?;
    execute(cli)
}

pub fn execute(cli: Cli) -> Result<Value> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(invalid("--threads must be positive"));
        }
        // The global pool can be set once per process; later calls keep it.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    match cli.command {
        Command::GenData(a) => gen_data(&a),
        Command::Train(a) => train(&a),
        Command::Eval(a) => eval(&a),
        Command::Query(a) => query(&a),
        Command::ExportGrid(a) => grid(&a),
        Command::ResolveSelfpen(a) => repair(&a),
        Command::Bench(a) => bench(&a),
    }
}

/// Process entry: prints the report or a JSON error and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            let err = json!({ "error": "usage", "message": e.to_string() });
            eprintln!("{err}");
            return 2;
        }
    };
    match execute(cli) {
        Ok(v) => {
            println!(
                "{}",
                serde_json::to_string_pretty(&v).expect("reports serialize")
            );
            0
        }
        Err(e) => {
            eprintln!("{}", json!({ "error": e.kind(), "message": e.to_string() }));
            e.exit_code()
        }
    }
}

/// Rounds a point to f32 and labels it at the rounded position.
fn gt_sample(x: Vec3, body: &BodyState) -> Result<GtSample> {
    let point = x.map(|v| v as f32);
    let sdf = gt_sdf(point.map(f64::from), body)? as f32;
    Ok(GtSample { point, sdf })
}

/// A synthetic body with its uniform-then-near evaluation samples.
pub fn synthetic_body_file(
    beta: &ShapeParams,
    theta: &PoseParams,
    padding: f64,
    points_per_part: usize,
    rng: &mut ChaCha8Rng,
) -> Result<ExternalBody> {
    let body = forward_kinematics(beta, theta)?.with_padding(padding)?;
    let clouds =
        crate::oracle::clouds_to_f32(&crate::oracle::sample_surface(&body, points_per_part, rng)?);
    let (uniform, near) = eval_samples(&body, rng)?;
    let gt = uniform
        .iter()
        .chain(&near)
        .map(|(x, _)| gt_sample(*x, &body))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExternalBody {
        body,
        clouds,
        gt: Some(gt),
    })
}

fn body_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn gen_data(a: &GenDataArgs) -> Result<Value> {
    let cfg = resolve(
        &a.config,
        flags![a; out, seed, count, points_per_part, padding, joint_range],
    )?;
    let out = PathBuf::from(required(&cfg, "out")?);
    let seed: u64 = cfg.get_or("seed", 0)?;
    let count: usize = cfg.get_or("count", 1)?;
    let ppp: usize = cfg.get_or("points-per-part", crate::oracle::DEFAULT_CLOUD_POINTS)?;
    let padding: f64 = cfg.get_or("padding", crate::body::DEFAULT_PADDING)?;
    let joint_range: f64 = cfg.get_or("joint-range", 0.9)?;
    if ppp == 0 {
        return Err(invalid("points-per-part must be positive"));
    }
    std::fs::create_dir_all(&out)?;
    let mut written = Vec::new();
    for i in 0..count {
        let mut rng = body_rng(seed, i as u64);
        let beta = random_shape(&mut rng);
        let theta = PoseParams::random(&mut rng, joint_range);
        let file = synthetic_body_file(&beta, &theta, padding, ppp, &mut rng)?;
        let path = out.join(format!("body_{i:05}.avsb"));
        save_external_body(&path, &file)?;
        written.push(json!({ "path": path, "beta": beta.beta, "theta": theta }));
    }
    Ok(report(
        "gen-data",
        json!({ "out": out, "seed": seed, "count": count, "points_per_part": ppp, "padding": padding,
                "joint_range": joint_range }),
        json!({ "files": written }),
    ))
}

fn train_config(cfg: &RunConfig) -> Result<TrainConfig> {
    let d = TrainConfig::default();
    let seed = cfg.get_or("seed", d.seed)?;
    let bodies = match cfg.raw("bodies").unwrap_or("random") {
        "random" => TrainBodies::Random,
        "pool" => TrainBodies::Pool {
            count: cfg.get_or("pool-count", 200)?,
            seed: cfg.get_or("pool-seed", seed)?,
        },
        "fixed" => match cfg.raw("pose-file") {
            Some(p) => {
                let pose = PoseFile::load(p)?;
                TrainBodies::Fixed {
                    beta: pose.shape()?,
                    theta: pose.theta,
                }
            }
            None => TrainBodies::Fixed {
                beta: ShapeParams::zero(),
                theta: PoseParams::rest(),
            },
        },
        "fixed-shape" => match cfg.raw("pose-file") {
            Some(p) => TrainBodies::FixedShape {
                beta: PoseFile::load(p)?.shape()?,
            },
            None => TrainBodies::FixedShape {
                beta: ShapeParams::zero(),
            },
        },
        other => return Err(invalid(format!("unknown body source `{other}`"))),
    };
    let config = TrainConfig {
        batch_size: cfg.get_or("batch-size", d.batch_size)?,
        lr_start: cfg.get_or("lr-start", d.lr_start)?,
        lr_end: cfg.get_or("lr-end", d.lr_end)?,
        total_steps: cfg.get_or("total-steps", d.total_steps)?,
        seed,
        rank: cfg.get_or("rank", d.rank)?,
        width: cfg.get_or("width", d.width)?,
        use_gamma: cfg.get_or("use-gamma", d.use_gamma)?,
        padding: cfg.get_or("padding", d.padding)?,
        points_per_part: cfg.get_or("points-per-part", d.points_per_part)?,
        sign_sharpness: cfg.get_or("sign-sharpness", d.sign_sharpness)?,
        joint_range: cfg.get_or("joint-range", d.joint_range)?,
        bodies,
        eval_every: cfg.get_or("eval-every", d.eval_every)?,
    };
    config.validate()?;
    Ok(config)
}

fn train(a: &TrainArgs) -> Result<Value> {
    let cfg = resolve(
        &a.config,
        flags![a; out, metrics, batch_size, lr_start, lr_end, total_steps, seed, rank, width, use_gamma, padding,
               points_per_part, sign_sharpness, joint_range, bodies, pool_count, pool_seed, pose_file, eval_every,
               log_every],
    )?;
    let out = PathBuf::from(required(&cfg, "out")?);
    let metrics_path = cfg.raw("metrics").map(PathBuf::from).unwrap_or_else(|| {
        let mut p = out.clone().into_os_string();
        p.push(".json");
        PathBuf::from(p)
    });
    let log_every: u64 = cfg.get_or("log-every", 100)?.max(1);
    let mut trainer = match &a.resume {
        Some(path) => {
            const FIXED_BY_CHECKPOINT: [&str; 16] = [
                "batch-size",
                "lr-start",
                "lr-end",
                "seed",
                "rank",
                "width",
                "use-gamma",
                "padding",
                "points-per-part",
                "sign-sharpness",
                "joint-range",
                "bodies",
                "pool-count",
                "pool-seed",
                "pose-file",
                "eval-every",
            ];
            if let Some(k) = FIXED_BY_CHECKPOINT.iter().find(|k| cfg.raw(k).is_some()) {
                return Err(invalid(format!("`{k}` is fixed by the resumed checkpoint")));
            }
            let mut ckpt = load_checkpoint(path)?;
            if let Some(steps) = cfg.get("total-steps")? {
                ckpt.config.total_steps = steps;
                ckpt.config.validate()?;
            }
            Trainer::from_checkpoint(ckpt)?
        }
        None => Trainer::new(train_config(&cfg)?)?,
    };
    let start = Instant::now();
    let mut log = Vec::new();
    let mut evals = Vec::new();
    let (mut acc, mut n) = (0.0, 0u64);
    run_training(&mut trainer, |e| match e {
        FitEvent::Step(s) => {
            acc += s.loss;
            n += 1;
            if (s.step + 1) % log_every == 0 {
                let mean = acc / n as f64;
                eprintln!(
                    "step {} loss {mean:.6} lr {:.3e} ({:.1}s)",
                    s.step + 1,
                    s.lr,
                    start.elapsed().as_secs_f64()
                );
                log.push(json!({ "step": s.step + 1, "loss": mean, "lr": s.lr }));
                (acc, n) = (0.0, 0);
            }
        }
        FitEvent::Eval { step, report } => evals.push(json!({ "step": step, "report": report })),
    })?;
    save_checkpoint(&out, &trainer.checkpoint())?;
    let v = report(
        "train",
        json!({ "config": trainer.config, "out": out, "metrics": metrics_path, "log_every": log_every,
                "resume": a.resume }),
        json!({ "final_step": trainer.step, "param_count": trainer.model.param_count(), "losses": log,
                "evals": evals }),
    );
    write_json(&metrics_path, &v)?;
    Ok(v)
}

fn eval(a: &EvalArgs) -> Result<Value> {
    let cfg = resolve(&a.config, flags![a; ckpt, count, seed])?;
    let ckpt_path = required(&cfg, "ckpt")?;
    let ckpt = load_checkpoint(&ckpt_path)?;
    let count: usize = cfg.get_or("count", 10)?;
    let seed: u64 = cfg.get_or("seed", 0)?;
    let mut rows = Vec::new();
    let mut reports: Vec<EvalReport> = Vec::new();
    if a.bodies.is_empty() {
        for i in 0..count {
            let mut rng = body_rng(seed, i as u64);
            let beta = random_shape(&mut rng);
            let theta = PoseParams::random(&mut rng, ckpt.config.joint_range);
            let r = evaluate_model(
                &ckpt.model,
                &beta,
                &theta,
                ckpt.config.padding,
                ckpt.config.points_per_part,
                &mut rng,
            )?;
            rows.push(json!({ "source": format!("random:{seed}:{i}"), "report": r }));
            reports.push(r);
        }
    } else {
        for path in &a.bodies {
            let r = eval_external(&ckpt.model, &load_external_body(path)?)?;
            rows.push(json!({ "source": path, "report": r }));
            reports.push(r);
        }
    }
    Ok(report(
        "eval",
        json!({ "ckpt": ckpt_path, "bodies": a.bodies, "count": if a.bodies.is_empty() { count } else { a.bodies.len() },
                "seed": seed }),
        json!({ "bodies": rows, "mean": mean_report(&reports) }),
    ))
}

/// Scores a body file: the first 30k ground-truth samples are the uniform
/// set, the rest the near-surface set.
pub fn eval_external(model: &ModelParams, ext: &ExternalBody) -> Result<EvalReport> {
    let gt = ext
        .gt
        .as_ref()
        .ok_or_else(|| invalid("body file has no ground-truth block"))?;
    let prepared = PreparedModel::new(model, &model.latents(&ext.clouds)?)?;
    let labeled: Vec<(Vec3, f64)> = gt
        .iter()
        .map(|s| (s.point.map(f64::from), s.sdf as f64))
        .collect();
    let (uniform, near) = labeled.split_at(labeled.len().min(EVAL_UNIFORM));
    evaluate_samples(
        |p| {
            Ok(prepared
                .query(&ext.body, p)?
                .into_iter()
                .map(|r| r.distance)
                .collect())
        },
        uniform,
        near,
    )
}

/// The posed body and query engine named by a body source.
fn load_field(
    ckpt: &crate::training::Checkpoint,
    cfg: &RunConfig,
) -> Result<(BodyState, PreparedModel)> {
    if let Some(path) = cfg.raw("body") {
        if cfg.raw("pose-file").is_some() {
            return Err(invalid("give either `body` or `pose-file`, not both"));
        }
        let ext = load_external_body(path)?;
        let prepared = PreparedModel::new(&ckpt.model, &ckpt.model.latents(&ext.clouds)?)?;
        return Ok((ext.body, prepared));
    }
    let (beta, theta) = match cfg.raw("pose-file") {
        Some(p) => {
            let pose = PoseFile::load(p)?;
            (pose.shape()?, pose.theta)
        }
        None => (ShapeParams::zero(), PoseParams::rest()),
    };
    let mut field = BodyField::new(&ckpt.model, beta, theta);
    field.padding = ckpt.config.padding;
    field.cloud_points = ckpt.config.points_per_part;
    field.cloud_seed = cfg.get_or("cloud-seed", 0)?;
    field.prepare()
}

fn query(a: &QueryArgs) -> Result<Value> {
    let s = &a.source;
    let mut flags = flags![a; ckpt, points_file, out, mode];
    flags.extend(flags![s; body, pose_file, cloud_seed]);
    let cfg = resolve(&a.config, flags)?;
    let ckpt_path = required(&cfg, "ckpt")?;
    let points_path = required(&cfg, "points-file")?;
    let out = required(&cfg, "out")?;
    let mode = parse_mode(cfg.raw("mode").unwrap_or("hybrid"))?;
    let ckpt = load_checkpoint(&ckpt_path)?;
    let (body, prepared) = load_field(&ckpt, &cfg)?;
    let points: Vec<Vec3> = read_points(&points_path)?
        .into_iter()
        .map(|p| p.map(f64::from))
        .collect();
    let res = prepared.query_with(&body, &points, mode)?;
    let values: Vec<f32> = res.iter().map(|r| r.distance as f32).collect();
    std::fs::write(&out, encode_sdf(&values))?;
    let implicit = res
        .iter()
        .filter(|r| r.branch == crate::volsdf::Branch::Implicit)
        .count();
    Ok(report(
        "query",
        json!({ "ckpt": ckpt_path, "points_file": points_path, "out": out, "mode": mode, "body": cfg.raw("body"),
                "pose_file": cfg.raw("pose-file"), "cloud_seed": cfg.get_or("cloud-seed", 0u64)? }),
        json!({ "count": res.len(), "implicit": implicit, "analytic": res.len() - implicit,
                "clamped": res.iter().filter(|r| r.clamped).count() }),
    ))
}

fn grid(a: &GridArgs) -> Result<Value> {
    let s = &a.source;
    let mut flags = flags![a; ckpt, out, resolution];
    flags.extend(flags![s; body, pose_file, cloud_seed]);
    let cfg = resolve(&a.config, flags)?;
    let ckpt_path = required(&cfg, "ckpt")?;
    let out = required(&cfg, "out")?;
    let resolution: usize = cfg.get_or("resolution", 64)?;
    let ckpt = load_checkpoint(&ckpt_path)?;
    let (body, prepared) = load_field(&ckpt, &cfg)?;
    let g = export_grid(
        |p| {
            Ok(prepared
                .query(&body, p)?
                .into_iter()
                .map(|r| r.distance)
                .collect())
        },
        &body,
        resolution,
    )?;
    write_grid(&out, &g)?;
    Ok(report(
        "export-grid",
        json!({ "ckpt": ckpt_path, "out": out, "resolution": resolution, "body": cfg.raw("body"),
                "pose_file": cfg.raw("pose-file"), "cloud_seed": cfg.get_or("cloud-seed", 0u64)? }),
        json!({ "min": g.min, "max": g.max, "inside": g.values.iter().filter(|v| **v < 0.0).count() }),
    ))
}

fn repair(a: &RepairArgs) -> Result<Value> {
    let cfg = resolve(
        &a.config,
        flags![a; ckpt, pose_file, out, lr, max_iters, pose_prior_weight, selfpen_weight, tau_p, literal_sign, seed,
               cloud_seed],
    )?;
    let ckpt_path = required(&cfg, "ckpt")?;
    let pose_path = required(&cfg, "pose-file")?;
    let d = RepairConfig::default();
    let rc = RepairConfig {
        lr: cfg.get_or("lr", d.lr)?,
        max_iters: cfg.get_or("max-iters", d.max_iters)?,
        pose_prior_weight: cfg.get_or("pose-prior-weight", d.pose_prior_weight)?,
        selfpen_weight: cfg.get_or("selfpen-weight", d.selfpen_weight)?,
        tau_p: cfg.get_or("tau-p", d.tau_p)?,
        literal_sign: cfg.get_or("literal-sign", d.literal_sign)?,
        seed: cfg.get_or("seed", d.seed)?,
    };
    let ckpt = load_checkpoint(&ckpt_path)?;
    let pose = PoseFile::load(&pose_path)?;
    let mut field = BodyField::new(&ckpt.model, pose.shape()?, pose.theta);
    field.padding = ckpt.config.padding;
    field.cloud_points = ckpt.config.points_per_part;
    field.cloud_seed = cfg.get_or("cloud-seed", 0)?;
    let (theta, rep) = resolve_selfpen(&field, &rc)?;
    if rep.status == RepairStatus::MaxItersReached {
        eprintln!(
            "{}",
            json!({ "warning": "max_iters_reached", "remaining_samples": rep.sample_counts.iter().min() })
        );
    }
    let v = report(
        "resolve-selfpen",
        json!({ "ckpt": ckpt_path, "pose_file": pose_path, "out": cfg.raw("out"), "repair": rc,
                "cloud_seed": field.cloud_seed }),
        json!({ "pose": pose.name, "repair": rep, "theta": theta }),
    );
    if let Some(out) = cfg.raw("out") {
        write_json(out, &v)?;
    }
    Ok(v)
}

/// The standardized benchmark mix: `n − n/2` points uniform in the body's
/// world bounds grown by [`BENCH_FAR_MARGIN`], then `n/2` near-surface points
/// cycling over parts.
pub fn bench_mix(body: &BodyState, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Vec3>> {
    let (lo, hi) = body.world_bounds();
    let near = n / 2;
    let mut out: Vec<Vec3> = (0..n - near)
        .map(|_| {
            std::array::from_fn(|a| {
                rng.gen_range(lo[a] - BENCH_FAR_MARGIN..hi[a] + BENCH_FAR_MARGIN)
            })
        })
        .collect();
    for i in 0..near {
        out.push(sample_near_surface(
            body,
            i % body.num_parts(),
            crate::oracle::SURFACE_NOISE,
            rng,
        )?);
    }
    Ok(out)
}

fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn bench(a: &BenchArgs) -> Result<Value> {
    let cfg = resolve(&a.config, flags![a; ckpt, points, mode, repeat, seed])?;
    let n: usize = cfg.get_or("points", 60_000)?;
    let repeat: usize = cfg.get_or("repeat", 5)?;
    let seed: u64 = cfg.get_or("seed", 0)?;
    let mode = cfg.raw("mode").unwrap_or("both").to_string();
    let modes: Vec<QueryMode> = match mode.as_str() {
        "both" => vec![QueryMode::Hybrid, QueryMode::ImplicitOnly],
        m => vec![parse_mode(m)?],
    };
    if repeat == 0 {
        return Err(invalid("repeat must be positive"));
    }
    let (model, config) = match cfg.raw("ckpt") {
        Some(p) => {
            let c = load_checkpoint(p)?;
            (c.model, c.config)
        }
        None => {
            let config = TrainConfig {
                seed,
                ..TrainConfig::default()
            };
            (
                ModelParams::new(config.spec(), &mut ChaCha8Rng::seed_from_u64(seed))?,
                config,
            )
        }
    };
    let mut rng = body_rng(seed, 0);
    let beta = random_shape(&mut rng);
    let theta = PoseParams::random(&mut rng, config.joint_range);
    let mut field = BodyField::new(&model, beta, theta);
    field.padding = config.padding;
    field.cloud_points = config.points_per_part;
    let (body, prepared) = field.prepare()?;
    let points = bench_mix(&body, n, &mut rng)?;
    let mut rows = Vec::new();
    let mut medians = Vec::new();
    for m in &modes {
        prepared.query_with(&body, &points, *m)?;
        let samples: Vec<f64> = (0..repeat)
            .map(|_| {
                let t = Instant::now();
                prepared
                    .query_with(&body, &points, *m)
                    .map(|_| t.elapsed().as_secs_f64() * 1e3)
            })
            .collect::<Result<_>>()?;
        let med = median(&samples);
        medians.push(med);
        rows.push(json!({ "mode": m, "samples_ms": samples, "median_ms": med }));
    }
    let speedup = (medians.len() == 2 && medians[0] > 0.0).then(|| medians[1] / medians[0]);
    Ok(report(
        "bench",
        json!({ "ckpt": cfg.raw("ckpt"), "points": n, "mode": mode, "repeat": repeat, "seed": seed,
                "mix_version": BENCH_MIX_VERSION, "threads": rayon::current_num_threads() }),
        json!({ "results": rows, "speedup": speedup }),
    ))
}
