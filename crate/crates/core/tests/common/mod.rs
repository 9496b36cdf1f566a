//! Shared fixtures and plain `f64` reference forwards for the integration
//! tests. The references re-derive every layer from the stored tensors
//! (full, unfolded decoder matrices; per-point encoder loops) so they share
//! no code with the tape engine.

#![allow(dead_code)]

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, MutexGuard, OnceLock};

use avsdf::body::{BodyState, PoseParams, ShapeParams, Vec3};
use avsdf::numerics::{Linear, Tensor};
use avsdf::training::{
    fit, load_checkpoint, save_checkpoint, Checkpoint, TrainBodies, TrainConfig,
};
use avsdf::volsdf::{DecoderSpec, ModelParams, SKIP_LAYER};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn assets() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../assets")
}

pub fn pose_files() -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(assets().join("poses"))
        .expect("shipped poses")
        .map(|e| e.expect("dir entry").path())
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    v.sort();
    v
}

/// One test at a time for suites whose timing or thread pool matters.
pub fn serial() -> MutexGuard<'static, ()> {
    static LOCK: Mutex<()> = Mutex::new(());
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

/// Small model with non-zero blend coefficients, so every NBW path is live.
pub fn small_model(width: usize, rank: usize, seed: u64) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = ModelParams::new(
        DecoderSpec {
            width,
            rank,
            use_gamma: true,
        },
        &mut rng,
    )
    .expect("valid spec");
    for row in m.bank.coef.iter_mut() {
        for c in row.iter_mut() {
            *c = Linear {
                weight: Tensor::uniform(&[rank, 128], 0.05, &mut rng),
                bias: Tensor::uniform(&[1, rank], 0.5, &mut rng),
            };
        }
    }
    m
}

/// Trained single-shape model shared by the repair tests: β = 0, fresh
/// random poses every step. Cached on disk under the target directory and
/// keyed by its configuration, so it is trained once per build tree.
pub fn fixture_config() -> TrainConfig {
    TrainConfig {
        batch_size: 1,
        total_steps: 3000,
        rank: 8,
        points_per_part: 100,
        lr_start: 1e-3,
        lr_end: 1e-4,
        joint_range: 1.2,
        bodies: TrainBodies::FixedShape {
            beta: ShapeParams::zero(),
        },
        ..TrainConfig::default()
    }
}

pub fn fixture() -> &'static Checkpoint {
    static CKPT: OnceLock<Checkpoint> = OnceLock::new();
    CKPT.get_or_init(|| {
        let config = fixture_config();
        let mut h = DefaultHasher::new();
        serde_json::to_string(&config)
            .expect("config serializes")
            .hash(&mut h);
        let dir = Path::new(env!("CARGO_TARGET_TMPDIR"));
        let path = dir.join(format!("fixture-{:016x}.avsc", h.finish()));
        if let Ok(c) = load_checkpoint(&path) {
            return c;
        }
        let mut ckpt = fit(config, |_| {}).expect("fixture trains");
        ckpt.optimizer = None;
        ckpt.rng = None;
        let tmp = dir.join(format!("fixture-{}.partial", std::process::id()));
        save_checkpoint(&tmp, &ckpt).expect("fixture saves");
        std::fs::rename(&tmp, &path).expect("fixture lands");
        ckpt
    })
}

pub fn fixture_path() -> PathBuf {
    let ckpt = fixture();
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR"));
    let path = dir.join("fixture-current.avsc");
    if !path.exists() {
        let tmp = dir.join(format!("fixture-current-{}.partial", std::process::id()));
        save_checkpoint(&tmp, ckpt).expect("fixture saves");
        std::fs::rename(&tmp, &path).expect("fixture lands");
    }
    path
}

pub fn rest_pose() -> PoseParams {
    PoseParams::rest()
}

/// Hash of the branches a reference forward took.
#[derive(Default)]
pub struct Sig(DefaultHasher);

impl Sig {
    pub fn bit(&mut self, b: bool) {
        b.hash(&mut self.0);
    }

    pub fn idx(&mut self, i: usize) {
        i.hash(&mut self.0);
    }

    pub fn finish(&self) -> u64 {
        self.0.finish()
    }
}

fn t64(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64).collect()
}

/// Every model tensor in `f64`, addressed by its stable name.
#[derive(Clone)]
pub struct RefModel {
    pub spec: DecoderSpec,
    names: Vec<String>,
    values: Vec<Vec<f64>>,
}

impl RefModel {
    pub fn new(model: &ModelParams) -> Self {
        Self {
            spec: model.spec,
            names: model.tensor_names(),
            values: model.tensors().into_iter().map(t64).collect(),
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.values.concat()
    }

    /// Same layout with values taken from a flat vector.
    pub fn with_flat(&self, flat: &[f64]) -> Self {
        let mut off = 0;
        let values = self
            .values
            .iter()
            .map(|v| {
                off += v.len();
                flat[off - v.len()..off].to_vec()
            })
            .collect();
        Self {
            spec: self.spec,
            names: self.names.clone(),
            values,
        }
    }

    fn get(&self, name: &str) -> &[f64] {
        let i = self
            .names
            .iter()
            .position(|n| n == name)
            .unwrap_or_else(|| panic!("no tensor {name}"));
        &self.values[i]
    }

    fn rank(&self) -> usize {
        self.spec.rank
    }
}

/// `y = W x + b` with `W` stored row-major `out × in`.
fn affine(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let n = x.len();
    b.iter()
        .enumerate()
        .map(|(o, bo)| {
            bo + w[o * n..(o + 1) * n]
                .iter()
                .zip(x)
                .map(|(a, c)| a * c)
                .sum::<f64>()
        })
        .collect()
}

fn relu(v: &mut [f64], sig: &mut Sig) {
    for x in v {
        sig.bit(*x > 0.0);
        *x = x.max(0.0);
    }
}

/// Residual point MLP, max-pool over points, output layer.
pub fn ref_encode(m: &RefModel, cloud: &[Vec3], sig: &mut Sig) -> Vec<f64> {
    let n_layers = m
        .names
        .iter()
        .filter(|n| n.starts_with("encoder.") && n.ends_with(".weight"))
        .count();
    let layers: Vec<(&[f64], &[f64])> = (0..n_layers)
        .map(|i| {
            (
                m.get(&format!("encoder.{i}.weight")),
                m.get(&format!("encoder.{i}.bias")),
            )
        })
        .collect();
    let layer = |i: usize| layers[i];
    let mut pooled = vec![f64::NEG_INFINITY; 128];
    let mut arg = vec![0usize; 128];
    for (i, p) in cloud.iter().enumerate() {
        let (w, b) = layer(0);
        let mut h = affine(w, b, p);
        for blk in 0..(n_layers - 2) / 2 {
            let (wa, ba) = layer(1 + 2 * blk);
            let (wb, bb) = layer(2 + 2 * blk);
            let mut t = affine(wa, ba, &h);
            relu(&mut t, sig);
            let t = affine(wb, bb, &t);
            h = t.iter().zip(&h).map(|(x, y)| x + y).collect();
            relu(&mut h, sig);
        }
        for j in 0..128 {
            if h[j] > pooled[j] {
                pooled[j] = h[j];
                arg[j] = i;
            }
        }
    }
    arg.iter().for_each(|&a| sig.idx(a));
    let (w, b) = layer(n_layers - 1);
    affine(w, b, &pooled)
}

/// One part's decoder with its blended weights, input `[γ(x), z]`.
pub struct RefDecoder {
    layers: Vec<(Vec<f64>, Vec<f64>)>,
    z: Vec<f64>,
    use_gamma: bool,
}

pub fn ref_compose(m: &RefModel, k: usize, z: &[f64]) -> RefDecoder {
    let layers = (0..avsdf::volsdf::DECODER_LAYERS)
        .map(|l| {
            let mut w = m.get(&format!("base.{l}.weight")).to_vec();
            if m.rank() > 0 {
                let pre = format!("part{k}.layer{l}");
                let v = affine(
                    m.get(&format!("{pre}.coef.weight")),
                    m.get(&format!("{pre}.coef.bias")),
                    z,
                );
                let shape = m.get(&format!("{pre}.shape"));
                let len = w.len();
                for (r, vr) in v.iter().enumerate() {
                    for (wi, s) in w.iter_mut().zip(&shape[r * len..(r + 1) * len]) {
                        *wi += vr * s;
                    }
                }
            }
            (w, m.get(&format!("base.{l}.bias")).to_vec())
        })
        .collect();
    RefDecoder {
        layers,
        z: z.to_vec(),
        use_gamma: m.spec.use_gamma,
    }
}

pub fn ref_decode(dec: &RefDecoder, x: Vec3, sig: &mut Sig) -> f64 {
    use std::f64::consts::PI;
    let mut g = x.to_vec();
    if dec.use_gamma {
        for s in [PI, 2.0 * PI] {
            g.extend(x.iter().map(|v| (v * s).sin()));
            g.extend(x.iter().map(|v| (v * s).cos()));
        }
    }
    let input: Vec<f64> = g.into_iter().chain(dec.z.iter().copied()).collect();
    let mut h: Vec<f64> = Vec::new();
    let last = dec.layers.len() - 1;
    for (l, (w, b)) in dec.layers.iter().enumerate() {
        let inp: Vec<f64> = if l == 0 {
            input.clone()
        } else if l + 1 == SKIP_LAYER {
            h.iter().chain(&input).copied().collect()
        } else {
            h.clone()
        };
        h = affine(w, b, &inp);
        if l < last {
            relu(&mut h, sig);
        }
    }
    h[0]
}

pub fn ref_decoders(model: &RefModel, latents: &[Vec<f64>]) -> Vec<RefDecoder> {
    latents
        .iter()
        .enumerate()
        .map(|(k, z)| ref_compose(model, k, z))
        .collect()
}

pub fn latent_rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows())
        .map(|r| t.row_slice(r).iter().map(|&v| v as f64).collect())
        .collect()
}

fn canon(body: &BodyState, k: usize, x: Vec3) -> Vec3 {
    let g = &body.transforms[k];
    let d = [x[0] - g.trans[0], x[1] - g.trans[1], x[2] - g.trans[2]];
    std::array::from_fn(|j| (0..3).map(|i| g.rot[i][j] * d[i]).sum())
}

/// Box distance of a point outside the box, with its kinks recorded.
fn box_dist(min: Vec3, max: Vec3, p: Vec3, sig: &mut Sig) -> f64 {
    let mut out = 0.0;
    let mut inner = f64::NEG_INFINITY;
    for i in 0..3 {
        let c = 0.5 * (min[i] + max[i]);
        let h = 0.5 * (max[i] - min[i]);
        sig.bit(p[i] > c);
        let q = (p[i] - c).abs() - h;
        sig.bit(q > 0.0);
        out += q.max(0.0).powi(2);
        inner = inner.max(q);
    }
    out.sqrt() + inner.min(0.0)
}

/// Hybrid query: box distance outside every box, candidate-decoder minimum
/// inside, optionally bounded by the nearest non-containing box.
pub fn ref_query(
    body: &BodyState,
    decs: &[RefDecoder],
    x: Vec3,
    clamp: bool,
    sig: &mut Sig,
) -> f64 {
    let k = body.transforms.len();
    let mut cand = Vec::new();
    let mut bound: Option<(f64, usize)> = None;
    for j in 0..k {
        let c = canon(body, j, x);
        let b = &body.boxes[j];
        let inside = (0..3).all(|i| c[i] >= b.min[i] && c[i] <= b.max[i]);
        sig.bit(inside);
        if inside {
            cand.push((j, c));
        } else {
            let d = box_dist(b.min, b.max, c, sig);
            if bound.is_none_or(|(v, _)| d < v) {
                bound = Some((d, j));
            }
        }
    }
    if let Some((_, j)) = bound {
        sig.idx(j);
    }
    if cand.is_empty() {
        return bound.expect("some box is nearest").0;
    }
    let mut best = (f64::INFINITY, 0);
    for (j, c) in cand {
        let v = ref_decode(&decs[j], c, sig);
        if v < best.0 {
            best = (v, j);
        }
    }
    sig.idx(best.1);
    match bound {
        Some((b, _)) if clamp && best.0 > b => {
            sig.bit(true);
            b
        }
        _ => {
            sig.bit(false);
            best.0
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}
