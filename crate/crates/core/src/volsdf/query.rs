//! Hybrid query engine.
//!
//! A point outside every padded part box gets the box distance. A point
//! inside at least one box is decoded by every part whose box contains it
//! (the candidate set) and the minimum is taken; if that minimum exceeds the
//! distance to the nearest box that does not contain the point, the box
//! distance is returned instead, since that part cannot be closer.
//!
//! Canonicalization runs in `f64`; decoders run in `f32`. All (point, part)
//! pairs of one part are decoded in one batched pass.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::decoder::{compose_part, decode_on_tape, PartWeights};
use super::nbw::BankVars;
use super::{DecoderSpec, ModelParams};
use crate::body::{BodyState, Vec3, NUM_PARTS};
use crate::error::{contract, invalid, Result};
use crate::numerics::{Axis, Gradients, Tape, Tensor, Var};

const DECODE_CHUNK: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Analytic,
    Implicit,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SdfResult {
    pub distance: f64,
    pub branch: Branch,
    /// Winning decoder, or the box that bounded the value when `clamped`;
    /// `None` on the analytic branch.
    pub part: Option<usize>,
    /// The decoded minimum was replaced by a non-candidate box distance.
    pub clamped: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QueryMode {
    /// Box distance outside all boxes, candidate decoders inside.
    #[default]
    Hybrid,
    /// Like `Hybrid`, but every decoder is evaluated for in-box points.
    FullK,
    /// Every decoder for every point, plain minimum, no box distances.
    ImplicitOnly,
}

/// Per-point routing decided from box membership alone.
#[derive(Clone, Debug)]
struct Dispatch {
    canon: Vec<Vec3>,
    /// Parts to decode, ascending.
    candidates: Vec<usize>,
    /// Nearest box (by signed distance) not in the candidate set.
    bound: Option<(f64, usize)>,
}

fn box_gradient(b: &crate::body::PartBox, p: Vec3) -> Vec3 {
    let c = b.center();
    let h = b.half_extents();
    let mut q = [0.0; 3];
    for i in 0..3 {
        q[i] = ((p[i] - c[i]).abs() - h[i]).max(0.0);
    }
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2]).sqrt();
    if n == 0.0 {
        return [0.0; 3];
    }
    std::array::from_fn(|i| (p[i] - c[i]).signum() * q[i] / n)
}

fn check_inputs(body: &BodyState, points: &[Vec3]) -> Result<()> {
    if body.num_parts() != NUM_PARTS {
        return Err(contract(format!(
            "model has {NUM_PARTS} part decoders, body has {} parts",
            body.num_parts()
        )));
    }
    if let Some(i) = points.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
        return Err(invalid(format!("query point {i} is not finite")));
    }
    Ok(())
}

fn dispatch(body: &BodyState, x: Vec3, mode: QueryMode) -> Dispatch {
    let k = body.num_parts();
    let canon: Vec<Vec3> = (0..k).map(|j| body.canonicalize(j, x)).collect();
    let inside: Vec<bool> = (0..k).map(|j| body.boxes[j].contains(canon[j])).collect();
    let any_inside = inside.iter().any(|&b| b);
    let candidates: Vec<usize> = match mode {
        QueryMode::Hybrid => (0..k).filter(|&j| inside[j]).collect(),
        QueryMode::FullK if any_inside => (0..k).collect(),
        QueryMode::FullK => Vec::new(),
        QueryMode::ImplicitOnly => (0..k).collect(),
    };
    let bound = if mode == QueryMode::ImplicitOnly {
        None
    } else {
        let mut best: Option<(f64, usize)> = None;
        for j in (0..k).filter(|&j| !inside[j]) {
            let d = body.boxes[j].signed_distance(canon[j]);
            if best.is_none_or(|(b, _)| d < b) {
                best = Some((d, j));
            }
        }
        best
    };
    Dispatch {
        canon,
        candidates,
        bound,
    }
}

fn to_f32(p: Vec3) -> [f32; 3] {
    [p[0] as f32, p[1] as f32, p[2] as f32]
}

/// Minimum over candidates (lowest part on ties), then the conservative clamp.
fn combine(d: &Dispatch, decoded: &[(usize, f32)], clamp: bool) -> SdfResult {
    let mut best: Option<(f32, usize)> = None;
    for &(part, v) in decoded {
        if best.is_none_or(|(b, _)| v < b) {
            best = Some((v, part));
        }
    }
    let (v, part) = best.expect("implicit branch has candidates");
    let v = v as f64;
    match d.bound {
        Some((b, bp)) if clamp && v > b => SdfResult {
            distance: b,
            branch: Branch::Implicit,
            part: Some(bp),
            clamped: true,
        },
        _ => SdfResult {
            distance: v,
            branch: Branch::Implicit,
            part: Some(part),
            clamped: false,
        },
    }
}

fn analytic(d: &Dispatch) -> SdfResult {
    let (dist, _) = d
        .bound
        .expect("a point outside every box has a nearest box");
    SdfResult {
        distance: dist,
        branch: Branch::Analytic,
        part: None,
        clamped: false,
    }
}

/// Decoder weights of all parts with the body's latents folded in.
#[derive(Clone, Debug)]
pub struct PreparedModel {
    pub spec: DecoderSpec,
    pub parts: Vec<PartWeights<Tensor>>,
}

impl PreparedModel {
    /// `latents` is `K × 128`.
    pub fn new(model: &ModelParams, latents: &Tensor) -> Result<Self> {
        if latents.shape() != [NUM_PARTS, crate::encoder::LATENT_DIM] {
            return Err(contract(format!(
                "latents must be {NUM_PARTS} × 128, got {:?}",
                latents.shape()
            )));
        }
        let mut tape = Tape::new();
        let bank = model.bank.record(&mut tape, false);
        let lat = tape.constant(latents.clone());
        let mut parts = Vec::with_capacity(NUM_PARTS);
        for k in 0..NUM_PARTS {
            let z = tape.slice(lat, Axis::Rows, k, 1)?;
            let pw = compose_part(&mut tape, &model.spec, &bank, k, z)?;
            parts.push(pw.map(|v| tape.value(*v).clone()));
        }
        Ok(Self {
            spec: model.spec,
            parts,
        })
    }

    /// Decodes canonical points with part `k`'s decoder.
    pub fn decode_part(&self, k: usize, pts: &[[f32; 3]]) -> Result<Vec<f32>> {
        let mut out = Vec::with_capacity(pts.len());
        for chunk in pts.chunks(DECODE_CHUNK) {
            let mut tape = Tape::new();
            let pw = self.parts[k].map(|t| tape.constant(t.clone()));
            let x = tape.constant(Tensor::from_rows(
                chunk.len(),
                3,
                chunk.iter().flatten().copied().collect(),
            ));
            let y = decode_on_tape(&mut tape, &pw, x)?;
            out.extend_from_slice(tape.value(y).data());
        }
        Ok(out)
    }

    pub fn query(&self, body: &BodyState, points: &[Vec3]) -> Result<Vec<SdfResult>> {
        self.query_with(body, points, QueryMode::Hybrid)
    }

    pub fn query_with(
        &self,
        body: &BodyState,
        points: &[Vec3],
        mode: QueryMode,
    ) -> Result<Vec<SdfResult>> {
        check_inputs(body, points)?;
        let dispatches: Vec<Dispatch> = points
            .par_iter()
            .map(|&x| dispatch(body, x, mode))
            .collect();
        let mut per_part: Vec<(Vec<usize>, Vec<[f32; 3]>)> =
            vec![(Vec::new(), Vec::new()); NUM_PARTS];
        for (i, d) in dispatches.iter().enumerate() {
            for &k in &d.candidates {
                per_part[k].0.push(i);
                per_part[k].1.push(to_f32(d.canon[k]));
            }
        }
        let decoded: Vec<Vec<f32>> = per_part
            .par_iter()
            .enumerate()
            .map(|(k, (_, pts))| {
                if pts.is_empty() {
                    Ok(Vec::new())
                } else {
                    self.decode_part(k, pts)
                }
            })
            .collect::<Result<_>>()?;
        let mut per_point: Vec<Vec<(usize, f32)>> = vec![Vec::new(); points.len()];
        for (k, ((idx, _), vals)) in per_part.iter().zip(&decoded).enumerate() {
            for (&i, &v) in idx.iter().zip(vals) {
                per_point[i].push((k, v));
            }
        }
        let clamp = mode != QueryMode::ImplicitOnly;
        Ok(dispatches
            .iter()
            .zip(&per_point)
            .map(|(d, dec)| {
                if d.candidates.is_empty() {
                    analytic(d)
                } else {
                    combine(d, dec, clamp)
                }
            })
            .collect())
    }

    /// Candidate-set minimum for a point inside at least one box.
    pub fn implicit_sdf(&self, body: &BodyState, x: Vec3) -> Result<(f64, usize)> {
        check_inputs(body, &[x])?;
        let d = dispatch(body, x, QueryMode::Hybrid);
        if d.candidates.is_empty() {
            return Err(contract(
                "implicit_sdf called for a point outside every part box",
            ));
        }
        let decoded = d
            .candidates
            .iter()
            .map(|&k| Ok((k, self.decode_part(k, &[to_f32(d.canon[k])])?[0])))
            .collect::<Result<Vec<_>>>()?;
        let r = combine(&d, &decoded, true);
        Ok((r.distance, r.part.expect("implicit result has a part")))
    }
}

/// Hybrid query of world points against a posed body.
pub fn query(
    points: &[Vec3],
    body: &BodyState,
    latents: &Tensor,
    model: &ModelParams,
) -> Result<Vec<SdfResult>> {
    query_with(points, body, latents, model, QueryMode::Hybrid)
}

pub fn query_with(
    points: &[Vec3],
    body: &BodyState,
    latents: &Tensor,
    model: &ModelParams,
    mode: QueryMode,
) -> Result<Vec<SdfResult>> {
    PreparedModel::new(model, latents)?.query_with(body, points, mode)
}

pub fn implicit_sdf(
    x: Vec3,
    body: &BodyState,
    latents: &Tensor,
    model: &ModelParams,
) -> Result<(f64, usize)> {
    PreparedModel::new(model, latents)?.implicit_sdf(body, x)
}

/// Options for [`record_query`].
#[derive(Clone, Copy, Debug)]
pub struct RecordOptions {
    pub mode: QueryMode,
    /// Apply the conservative box clamp.
    pub clamp: bool,
    /// Every point must be inside some box (training supervision).
    pub require_implicit: bool,
    /// Track gradients with respect to canonical inputs (needed for point
    /// and pose gradients).
    pub track_points: bool,
}

impl Default for RecordOptions {
    fn default() -> Self {
        Self {
            mode: QueryMode::Hybrid,
            clamp: true,
            require_implicit: false,
            track_points: true,
        }
    }
}

struct PartInput {
    part: usize,
    points: Vec<usize>,
    canon: Var,
}

struct AnalyticRoute {
    point: usize,
    part: usize,
    grad_canon: Vec3,
}

/// A query recorded on a tape, with what is needed to map gradients on
/// canonical inputs back to world points and part transforms.
pub struct QueryGraph {
    /// `N × 1` distances.
    pub values: Var,
    pub results: Vec<SdfResult>,
    part_inputs: Vec<PartInput>,
    analytic: Option<(Var, Vec<AnalyticRoute>)>,
}

/// Gradient of a scalar with respect to query points and part transforms.
#[derive(Clone, Debug)]
pub struct QueryCotangent {
    pub points: Vec<Vec3>,
    pub rot: Vec<[[f64; 3]; 3]>,
    pub trans: Vec<Vec3>,
    /// Gradients on each part box's canonical corners (box-bounded values only).
    pub box_min: Vec<Vec3>,
    pub box_max: Vec<Vec3>,
}

/// Records a differentiable query. `latents` is a `K × 128` variable.
pub fn record_query(
    tape: &mut Tape,
    spec: &DecoderSpec,
    bank: &BankVars,
    latents: Var,
    body: &BodyState,
    points: &[Vec3],
    opts: RecordOptions,
) -> Result<QueryGraph> {
    check_inputs(body, points)?;
    if points.is_empty() {
        return Err(contract("cannot record an empty query"));
    }
    let dispatches: Vec<Dispatch> = points
        .iter()
        .map(|&x| dispatch(body, x, opts.mode))
        .collect();
    if opts.require_implicit {
        if let Some(i) = dispatches.iter().position(|d| d.candidates.is_empty()) {
            return Err(contract(format!(
                "supervision point {i} lies outside every part box"
            )));
        }
    }
    let mut per_part: Vec<(Vec<usize>, Vec<f32>)> = vec![(Vec::new(), Vec::new()); NUM_PARTS];
    for (i, d) in dispatches.iter().enumerate() {
        for &k in &d.candidates {
            per_part[k].0.push(i);
            per_part[k].1.extend_from_slice(&to_f32(d.canon[k]));
        }
    }
    let mut pieces = Vec::new();
    let mut part_inputs = Vec::new();
    // Row of each (point, part) pair within the stacked decoder outputs.
    let mut pair_rows: Vec<Vec<(usize, usize)>> = vec![Vec::new(); points.len()];
    let mut decoded: Vec<Vec<(usize, f32)>> = vec![Vec::new(); points.len()];
    let mut row = 0;
    for (k, (idx, flat)) in per_part.into_iter().enumerate() {
        if idx.is_empty() {
            continue;
        }
        let z = tape.slice(latents, Axis::Rows, k, 1)?;
        let pw = compose_part(tape, spec, bank, k, z)?;
        let pts = Tensor::from_rows(idx.len(), 3, flat);
        let canon = if opts.track_points {
            tape.var(pts)
        } else {
            tape.constant(pts)
        };
        let out = decode_on_tape(tape, &pw, canon)?;
        for (r, (&i, &v)) in idx.iter().zip(tape.value(out).data()).enumerate() {
            pair_rows[i].push((k, row + r));
            decoded[i].push((k, v));
        }
        row += idx.len();
        pieces.push(out);
        part_inputs.push(PartInput {
            part: k,
            points: idx,
            canon,
        });
    }
    let mut results = Vec::with_capacity(points.len());
    let mut gather = Vec::with_capacity(points.len());
    let mut routes = Vec::new();
    let mut analytic_vals = Vec::new();
    for (i, d) in dispatches.iter().enumerate() {
        let r = if d.candidates.is_empty() {
            analytic(d)
        } else {
            combine(d, &decoded[i], opts.clamp)
        };
        let bounded = r.branch == Branch::Analytic || r.clamped;
        if bounded {
            let (dist, part) = d.bound.expect("bounded result has a box");
            let grad_canon = box_gradient(&body.boxes[part], d.canon[part]);
            gather.push(row + routes.len());
            routes.push(AnalyticRoute {
                point: i,
                part,
                grad_canon,
            });
            analytic_vals.push(dist as f32);
        } else {
            let part = r.part.expect("implicit result has a part");
            let &(_, pr) = pair_rows[i]
                .iter()
                .find(|(k, _)| *k == part)
                .expect("winning part was decoded");
            gather.push(pr);
        }
        results.push(r);
    }
    let analytic = if routes.is_empty() {
        None
    } else {
        let v = tape.var(Tensor::from_rows(analytic_vals.len(), 1, analytic_vals));
        pieces.push(v);
        Some((v, routes))
    };
    let stacked = tape.concat(&pieces, Axis::Rows)?;
    let values = tape.gather_rows(stacked, &gather)?;
    Ok(QueryGraph {
        values,
        results,
        part_inputs,
        analytic,
    })
}

impl QueryGraph {
    /// Chains gradients on canonical inputs and box distances back to world
    /// points and to each part's rotation and translation.
    pub fn pullback(&self, grads: &Gradients, body: &BodyState, points: &[Vec3]) -> QueryCotangent {
        let k = body.num_parts();
        let mut ct = QueryCotangent {
            points: vec![[0.0; 3]; points.len()],
            rot: vec![[[0.0; 3]; 3]; k],
            trans: vec![[0.0; 3]; k],
            box_min: vec![[0.0; 3]; k],
            box_max: vec![[0.0; 3]; k],
        };
        let mut chain = |i: usize, part: usize, gc: Vec3| {
            let g = &body.transforms[part];
            let x = points[i];
            let d = [x[0] - g.trans[0], x[1] - g.trans[1], x[2] - g.trans[2]];
            let dx = g.apply_vec(gc);
            for a in 0..3 {
                ct.points[i][a] += dx[a];
                ct.trans[part][a] -= dx[a];
                for b in 0..3 {
                    ct.rot[part][a][b] += d[a] * gc[b];
                }
            }
        };
        for input in &self.part_inputs {
            let g = grads.get(input.canon);
            for (r, &i) in input.points.iter().enumerate() {
                let row = g.row_slice(r);
                chain(i, input.part, [row[0] as f64, row[1] as f64, row[2] as f64]);
            }
        }
        if let Some((var, routes)) = &self.analytic {
            let g = grads.get(*var);
            for (a, route) in routes.iter().enumerate() {
                let s = g.data()[a] as f64;
                chain(route.point, route.part, route.grad_canon.map(|v| v * s));
                // Outside a box, moving a corner shifts the centre by half and
                // shrinks the half-extent by half.
                for i in 0..3 {
                    let gi = route.grad_canon[i];
                    ct.box_min[route.part][i] += 0.5 * s * (gi.abs() - gi);
                    ct.box_max[route.part][i] -= 0.5 * s * (gi.abs() + gi);
                }
            }
        }
        ct
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::{forward_kinematics, PoseParams, ShapeParams};
    use crate::volsdf::DecoderSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(rank: usize) -> (ModelParams, Tensor, BodyState) {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let model = ModelParams::new(
            DecoderSpec {
                width: 16,
                rank,
                use_gamma: true,
            },
            &mut rng,
        )
        .unwrap();
        let latents = Tensor::uniform(&[NUM_PARTS, 128], 1.0, &mut rng);
        let body =
            forward_kinematics(&ShapeParams::zero(), &PoseParams::random(&mut rng, 0.5)).unwrap();
        (model, latents, body)
    }

    fn random_points(body: &BodyState, n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec3> {
        let (lo, hi) = body.world_bounds();
        (0..n)
            .map(|_| std::array::from_fn(|i| rng.gen_range(lo[i] - 0.2..hi[i] + 0.2)))
            .collect()
    }

    #[test]
    fn far_points_take_the_analytic_branch() {
        let (model, latents, body) = setup(2);
        let (lo, hi) = body.world_bounds();
        let c: Vec3 = std::array::from_fn(|i| 0.5 * (lo[i] + hi[i]));
        let far = [c[0] + 10.0, c[1], c[2]];
        let r = query(&[far], &body, &latents, &model).unwrap()[0];
        assert_eq!(r.branch, Branch::Analytic);
        assert!(r.distance >= 9.0);
    }

    #[test]
    fn non_finite_points_are_rejected() {
        let (model, latents, body) = setup(0);
        assert!(query(&[[f64::NAN, 0.0, 0.0]], &body, &latents, &model).is_err());
    }

    #[test]
    fn batched_equals_pointwise() {
        let (model, latents, body) = setup(3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts = random_points(&body, 300, &mut rng);
        let prepared = PreparedModel::new(&model, &latents).unwrap();
        let batch = prepared.query(&body, &pts).unwrap();
        for (p, r) in pts.iter().zip(&batch) {
            assert_eq!(prepared.query(&body, &[*p]).unwrap()[0], *r);
        }
        let implicit = batch
            .iter()
            .filter(|r| r.branch == Branch::Implicit)
            .count();
        assert!(implicit > 0 && implicit < pts.len());
    }

    #[test]
    fn implicit_sdf_requires_a_box() {
        let (model, latents, body) = setup(1);
        let prepared = PreparedModel::new(&model, &latents).unwrap();
        assert!(prepared.implicit_sdf(&body, [50.0, 0.0, 0.0]).is_err());
        let pelvis = body.transforms[0].trans;
        let (d, part) = prepared.implicit_sdf(&body, pelvis).unwrap();
        let r = prepared.query(&body, &[pelvis]).unwrap()[0];
        assert_eq!((d, Some(part)), (r.distance, r.part));
    }

    #[test]
    fn recorded_query_matches_prepared_query() {
        let (model, latents, body) = setup(2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts = random_points(&body, 200, &mut rng);
        let want = query(&pts, &body, &latents, &model).unwrap();
        let mut tape = Tape::new();
        let bank = model.bank.record(&mut tape, false);
        let lat = tape.constant(latents.clone());
        let g = record_query(
            &mut tape,
            &model.spec,
            &bank,
            lat,
            &body,
            &pts,
            RecordOptions::default(),
        )
        .unwrap();
        assert_eq!(g.results, want);
        for (v, r) in tape.value(g.values).data().iter().zip(&want) {
            assert_eq!(*v, r.distance as f32);
        }
    }

    #[test]
    fn rigid_motion_leaves_implicit_distances_unchanged() {
        let (model, latents, body) = setup(2);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let pts = random_points(&body, 200, &mut rng);
        let m = crate::body::Rigid::from_axis_angle([0.3, -0.2, 0.9])
            .compose(&crate::body::Rigid::translation([0.4, 1.0, -0.3]));
        let moved = body.moved(&m);
        let moved_pts: Vec<Vec3> = pts.iter().map(|&p| m.apply(p)).collect();
        let a = query(&pts, &body, &latents, &model).unwrap();
        let b = query(&moved_pts, &moved, &latents, &model).unwrap();
        let mut same = 0;
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.branch, y.branch);
            if x.branch == Branch::Implicit {
                assert!((x.distance - y.distance).abs() < 1e-5);
                same += (x.distance == y.distance) as usize;
            }
        }
        assert!(same > 0);
    }
}
