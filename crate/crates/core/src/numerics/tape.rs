//! Reverse-mode differentiation over a linear tape.
//!
//! Every operation appends a node holding its forward value; `backward`
//! walks the nodes in reverse insertion order, which is a valid reverse
//! topological order because operands always precede their results.
//!
//! Conventions: ReLU and `|x|` have zero derivative at 0; min/max
//! reductions route the gradient to the winning element only, ties going
//! to the lowest index.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use super::tensor::{matmul, Tensor};
use crate::error::{contract, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// Reduce over rows, keeping columns.
    Rows,
    /// Reduce over columns, keeping rows.
    Cols,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, ta: bool, b: Var, tb: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow { a: Var, row: Var },
    Scale(Var, f32),
    AddScalar(Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Sin(Var),
    Cos(Var),
    Abs(Var),
    Square(Var),
    Sqrt(Var),
    Sum(Var),
    Mean(Var),
    SumAxis { a: Var, axis: Axis },
    Extremum { a: Var, axis: Axis, idx: Vec<usize> },
    PoolGroups { a: Var, idx: Vec<usize> },
    Concat { parts: Vec<Var>, axis: Axis },
    Slice { a: Var, axis: Axis, start: usize },
    Gather { a: Var, idx: Vec<usize> },
    RepeatRows(Var),
    Reshape(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Recorded forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the output with respect to `v`; zeros if `v` did not
    /// participate.
    pub fn get(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        match self.grads[v.0].take() {
            Some(g) => g,
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }
}

fn check_finite(t: &Tensor, what: &str) {
    debug_assert!(t.is_finite(), "non-finite value produced by {what}");
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf whose gradient is tracked.
    pub fn var(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn dims(&self, v: Var) -> Result<(usize, usize)> {
        let s = self.shape(v);
        if s.len() != 2 {
            return Err(contract(format!("expected a 2-D tensor, got {s:?}")));
        }
        Ok((s[0], s[1]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, false, b, false)
    }

    /// `op(a) · op(b)` with optional transposes on either operand.
    pub fn matmul_t(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Result<Var> {
        let out = matmul(self.value(a), ta, self.value(b), tb)?;
        check_finite(&out, "matmul");
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::MatMul { a, ta, b, tb }, ng))
    }

    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(contract(format!(
                "{op}: shapes differ {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        check_finite(&out, "add");
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        check_finite(&out, "sub");
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        check_finite(&out, "mul");
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    /// Adds a `1 × c` row to every row of an `r × c` tensor (bias add).
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (r, c) = self.dims(a)?;
        if self.value(row).len() != c {
            return Err(contract(format!(
                "add_row: row of {} values for {c} columns",
                self.value(row).len()
            )));
        }
        let rv = self.value(row).data().to_vec();
        let mut out = self.value(a).data().to_vec();
        for i in 0..r {
            for (o, b) in out[i * c..(i + 1) * c].iter_mut().zip(&rv) {
                *o += *b;
            }
        }
        let out = Tensor::from_rows(r, c, out);
        check_finite(&out, "add_row");
        let ng = self.ng(a) || self.ng(row);
        Ok(self.push(out, Op::AddRow { a, row }, ng))
    }

    pub fn scale(&mut self, a: Var, c: f32) -> Var {
        let out = self.value(a).map(|x| x * c);
        check_finite(&out, "scale");
        let ng = self.ng(a);
        self.push(out, Op::Scale(a, c), ng)
    }

    pub fn add_scalar(&mut self, a: Var, c: f32) -> Var {
        let out = self.value(a).map(|x| x + c);
        let ng = self.ng(a);
        self.push(out, Op::AddScalar(a), ng)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f32) -> f32, op: Op, name: &str) -> Var {
        let out = self.value(a).map(f);
        check_finite(&out, name);
        let ng = self.ng(a);
        self.push(out, op, ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu(a), "relu")
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f32::tanh, Op::Tanh(a), "tanh")
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a), "sigmoid")
    }

    pub fn sin(&mut self, a: Var) -> Var {
        self.unary(a, f32::sin, Op::Sin(a), "sin")
    }

    pub fn cos(&mut self, a: Var) -> Var {
        self.unary(a, f32::cos, Op::Cos(a), "cos")
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, f32::abs, Op::Abs(a), "abs")
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a), "square")
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0).sqrt(), Op::Sqrt(a), "sqrt")
    }

    /// Sum of all entries (f64 accumulation) as a `1 × 1` tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum_f64() as f32;
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1);
        let s = (self.value(a).sum_f64() / n as f64) as f32;
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Mean(a), ng)
    }

    /// Sums along `axis` (f64 accumulation). `Rows` gives `1 × c`, `Cols` gives `r × 1`.
    pub fn sum_axis(&mut self, a: Var, axis: Axis) -> Result<Var> {
        let (r, c) = self.dims(a)?;
        let x = self.value(a).data();
        let out = match axis {
            Axis::Rows => {
                let mut acc = vec![0.0f64; c];
                for i in 0..r {
                    for (s, v) in acc.iter_mut().zip(&x[i * c..(i + 1) * c]) {
                        *s += *v as f64;
                    }
                }
                Tensor::from_rows(1, c, acc.into_iter().map(|v| v as f32).collect())
            }
            Axis::Cols => {
                let data = (0..r)
                    .map(|i| x[i * c..(i + 1) * c].iter().map(|&v| v as f64).sum::<f64>() as f32)
                    .collect();
                Tensor::from_rows(r, 1, data)
            }
        };
        let ng = self.ng(a);
        Ok(self.push(out, Op::SumAxis { a, axis }, ng))
    }

    fn extremum(&mut self, a: Var, axis: Axis, take_min: bool) -> Result<(Var, Vec<usize>)> {
        let (r, c) = self.dims(a)?;
        let x = self.value(a).data();
        let better = |cand: f32, best: f32| if take_min { cand < best } else { cand > best };
        let (vals, idx, shape) = match axis {
            Axis::Rows => {
                if r == 0 {
                    return Err(contract("reduction over zero rows"));
                }
                let mut vals = x[..c].to_vec();
                let mut idx = vec![0usize; c];
                for i in 1..r {
                    for j in 0..c {
                        let v = x[i * c + j];
                        if better(v, vals[j]) {
                            vals[j] = v;
                            idx[j] = i;
                        }
                    }
                }
                (vals, idx, (1, c))
            }
            Axis::Cols => {
                if c == 0 {
                    return Err(contract("reduction over zero columns"));
                }
                let mut vals = Vec::with_capacity(r);
                let mut idx = Vec::with_capacity(r);
                for i in 0..r {
                    let row = &x[i * c..(i + 1) * c];
                    let mut best = 0;
                    for j in 1..c {
                        if better(row[j], row[best]) {
                            best = j;
                        }
                    }
                    vals.push(row[best]);
                    idx.push(best);
                }
                (vals, idx, (r, 1))
            }
        };
        let out = Tensor::from_rows(shape.0, shape.1, vals);
        let ng = self.ng(a);
        let v = self.push(
            out,
            Op::Extremum {
                a,
                axis,
                idx: idx.clone(),
            },
            ng,
        );
        Ok((v, idx))
    }

    /// Minimum along `axis` with the index of the winner (lowest index on ties).
    pub fn min_reduce(&mut self, a: Var, axis: Axis) -> Result<(Var, Vec<usize>)> {
        self.extremum(a, axis, true)
    }

    pub fn max_reduce(&mut self, a: Var, axis: Axis) -> Result<(Var, Vec<usize>)> {
        self.extremum(a, axis, false)
    }

    /// Column-wise max over consecutive blocks of `group` rows:
    /// `(g·group) × c → g × c`.
    pub fn max_pool_groups(&mut self, a: Var, group: usize) -> Result<Var> {
        let (r, c) = self.dims(a)?;
        if group == 0 || r % group != 0 {
            return Err(contract(format!(
                "max_pool_groups: {r} rows not divisible into groups of {group}"
            )));
        }
        let g = r / group;
        let x = self.value(a).data();
        let mut vals = vec![0.0f32; g * c];
        let mut idx = vec![0usize; g * c];
        for gi in 0..g {
            let base = gi * group;
            let out = &mut vals[gi * c..(gi + 1) * c];
            let oi = &mut idx[gi * c..(gi + 1) * c];
            out.copy_from_slice(&x[base * c..(base + 1) * c]);
            oi.iter_mut().for_each(|v| *v = base);
            for i in base + 1..base + group {
                let row = &x[i * c..(i + 1) * c];
                for j in 0..c {
                    if row[j] > out[j] {
                        out[j] = row[j];
                        oi[j] = i;
                    }
                }
            }
        }
        let ng = self.ng(a);
        Ok(self.push(Tensor::from_rows(g, c, vals), Op::PoolGroups { a, idx }, ng))
    }

    pub fn concat(&mut self, parts: &[Var], axis: Axis) -> Result<Var> {
        if parts.is_empty() {
            return Err(contract("concat of nothing"));
        }
        let dims: Vec<(usize, usize)> =
            parts.iter().map(|&p| self.dims(p)).collect::<Result<_>>()?;
        let out = match axis {
            Axis::Rows => {
                let c = dims[0].1;
                if dims.iter().any(|d| d.1 != c) {
                    return Err(contract(format!(
                        "concat rows: column counts differ {dims:?}"
                    )));
                }
                let mut data = Vec::with_capacity(dims.iter().map(|d| d.0 * c).sum());
                for &p in parts {
                    data.extend_from_slice(self.value(p).data());
                }
                let r = dims.iter().map(|d| d.0).sum();
                Tensor::from_rows(r, c, data)
            }
            Axis::Cols => {
                let r = dims[0].0;
                if dims.iter().any(|d| d.0 != r) {
                    return Err(contract(format!("concat cols: row counts differ {dims:?}")));
                }
                let c: usize = dims.iter().map(|d| d.1).sum();
                let mut data = Vec::with_capacity(r * c);
                for i in 0..r {
                    for &p in parts {
                        data.extend_from_slice(self.value(p).row_slice(i));
                    }
                }
                Tensor::from_rows(r, c, data)
            }
        };
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(
            out,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            ng,
        ))
    }

    /// `len` rows (or columns) starting at `start`.
    pub fn slice(&mut self, a: Var, axis: Axis, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims(a)?;
        let x = self.value(a).data();
        let out = match axis {
            Axis::Rows => {
                if start + len > r {
                    return Err(contract(format!(
                        "row slice {start}..{} of {r}",
                        start + len
                    )));
                }
                Tensor::from_rows(len, c, x[start * c..(start + len) * c].to_vec())
            }
            Axis::Cols => {
                if start + len > c {
                    return Err(contract(format!(
                        "column slice {start}..{} of {c}",
                        start + len
                    )));
                }
                let mut data = Vec::with_capacity(r * len);
                for i in 0..r {
                    data.extend_from_slice(&x[i * c + start..i * c + start + len]);
                }
                Tensor::from_rows(r, len, data)
            }
        };
        let ng = self.ng(a);
        Ok(self.push(out, Op::Slice { a, axis, start }, ng))
    }

    /// Selects rows by index (repeats allowed).
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let (r, c) = self.dims(a)?;
        let x = self.value(a).data();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            if i >= r {
                return Err(contract(format!("gather index {i} out of {r} rows")));
            }
            data.extend_from_slice(&x[i * c..(i + 1) * c]);
        }
        let out = Tensor::from_rows(idx.len(), c, data);
        let ng = self.ng(a);
        Ok(self.push(
            out,
            Op::Gather {
                a,
                idx: idx.to_vec(),
            },
            ng,
        ))
    }

    /// Tiles a `1 × c` row `n` times.
    pub fn repeat_rows(&mut self, a: Var, n: usize) -> Result<Var> {
        let (r, c) = self.dims(a)?;
        if r != 1 {
            return Err(contract(format!("repeat_rows expects one row, got {r}")));
        }
        let row = self.value(a).data();
        let mut data = Vec::with_capacity(n * c);
        for _ in 0..n {
            data.extend_from_slice(row);
        }
        let ng = self.ng(a);
        Ok(self.push(Tensor::from_rows(n, c, data), Op::RepeatRows(a), ng))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        let ng = self.ng(a);
        Ok(self.push(out, Op::Reshape(a), ng))
    }

    /// Hash of every piecewise branch taken in the recorded forward pass
    /// (ReLU masks, |x| signs, arg-extremum choices). Two evaluations with
    /// equal signatures lie on the same smooth piece.
    pub fn kink_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(a) | Op::Abs(a) => {
                    for &v in self.nodes[a.0].value.data() {
                        (v > 0.0, v < 0.0).hash(&mut h);
                    }
                }
                Op::Extremum { idx, .. } | Op::PoolGroups { idx, .. } => idx.hash(&mut h),
                _ => {}
            }
        }
        h.finish()
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if !self.value(output).is_scalar() {
            return Err(contract(format!(
                "backward needs a scalar output, got shape {:?}",
                self.shape(output)
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor>> = vec![None; n];
        grads[output.0] = Some(Tensor::full(self.shape(output), 1.0));

        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(i, &g, &mut grads)?;
        }
        let shapes = self
            .nodes
            .iter()
            .map(|n| n.value.shape().to_vec())
            .collect();
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[i];
        let y = &node.value;
        let val = |v: &Var| &self.nodes[v.0].value;
        let mut acc = |v: Var, t: Tensor| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, ta, b, tb } => {
                let (av, bv) = (val(a), val(b));
                if self.ng(*a) {
                    let da = if *ta {
                        matmul(bv, *tb, g, true)?
                    } else {
                        matmul(g, false, bv, !*tb)?
                    };
                    acc(*a, da);
                }
                if self.ng(*b) {
                    let db = if *tb {
                        matmul(g, true, av, *ta)?
                    } else {
                        matmul(av, !*ta, g, false)?
                    };
                    acc(*b, db);
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(a).clone(), val(b).clone());
                acc(*a, g.zip_map(&bv, |x, y| x * y));
                acc(*b, g.zip_map(&av, |x, y| x * y));
            }
            Op::AddRow { a, row } => {
                acc(*a, g.clone());
                if self.ng(*row) {
                    let (r, c) = (g.rows(), g.cols());
                    let mut s = vec![0.0f64; c];
                    for ri in 0..r {
                        for (acc_j, v) in s.iter_mut().zip(g.row_slice(ri)) {
                            *acc_j += *v as f64;
                        }
                    }
                    let s: Vec<f32> = s.into_iter().map(|v| v as f32).collect();
                    acc(*row, Tensor::new(val(row).shape(), s)?);
                }
            }
            Op::Scale(a, c) => acc(*a, g.map(|v| v * c)),
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::Relu(a) => acc(
                *a,
                g.zip_map(val(a), |gv, x| if x > 0.0 { gv } else { 0.0 }),
            ),
            Op::Tanh(a) => acc(*a, g.zip_map(y, |gv, t| gv * (1.0 - t * t))),
            Op::Sigmoid(a) => acc(*a, g.zip_map(y, |gv, s| gv * s * (1.0 - s))),
            Op::Sin(a) => acc(*a, g.zip_map(val(a), |gv, x| gv * x.cos())),
            Op::Cos(a) => acc(*a, g.zip_map(val(a), |gv, x| -gv * x.sin())),
            Op::Abs(a) => acc(
                *a,
                g.zip_map(val(a), |gv, x| {
                    if x > 0.0 {
                        gv
                    } else if x < 0.0 {
                        -gv
                    } else {
                        0.0
                    }
                }),
            ),
            Op::Square(a) => acc(*a, g.zip_map(val(a), |gv, x| 2.0 * x * gv)),
            Op::Sqrt(a) => acc(
                *a,
                g.zip_map(y, |gv, s| if s > 0.0 { gv / (2.0 * s) } else { 0.0 }),
            ),
            Op::Sum(a) => acc(*a, Tensor::full(val(a).shape(), g.item())),
            Op::Mean(a) => {
                let n = val(a).len().max(1) as f32;
                acc(*a, Tensor::full(val(a).shape(), g.item() / n));
            }
            Op::SumAxis { a, axis } => {
                let (r, c) = (val(a).rows(), val(a).cols());
                let mut out = vec![0.0f32; r * c];
                for ri in 0..r {
                    for ci in 0..c {
                        out[ri * c + ci] = match axis {
                            Axis::Rows => g.data()[ci],
                            Axis::Cols => g.data()[ri],
                        };
                    }
                }
                acc(*a, Tensor::from_rows(r, c, out));
            }
            Op::Extremum { a, axis, idx } => {
                let (r, c) = (val(a).rows(), val(a).cols());
                let mut out = vec![0.0f32; r * c];
                match axis {
                    Axis::Rows => {
                        for (j, &ri) in idx.iter().enumerate() {
                            out[ri * c + j] += g.data()[j];
                        }
                    }
                    Axis::Cols => {
                        for (ri, &j) in idx.iter().enumerate() {
                            out[ri * c + j] += g.data()[ri];
                        }
                    }
                }
                acc(*a, Tensor::from_rows(r, c, out));
            }
            Op::PoolGroups { a, idx } => {
                let (r, c) = (val(a).rows(), val(a).cols());
                let mut out = vec![0.0f32; r * c];
                for (k, &ri) in idx.iter().enumerate() {
                    out[ri * c + k % c] += g.data()[k];
                }
                acc(*a, Tensor::from_rows(r, c, out));
            }
            Op::Concat { parts, axis } => {
                let mut offset = 0;
                for &p in parts {
                    let (pr, pc) = (val(&p).rows(), val(&p).cols());
                    let piece = match axis {
                        Axis::Rows => {
                            let c = g.cols();
                            Tensor::from_rows(
                                pr,
                                pc,
                                g.data()[offset * c..(offset + pr) * c].to_vec(),
                            )
                        }
                        Axis::Cols => {
                            let c = g.cols();
                            let mut d = Vec::with_capacity(pr * pc);
                            for ri in 0..pr {
                                d.extend_from_slice(
                                    &g.data()[ri * c + offset..ri * c + offset + pc],
                                );
                            }
                            Tensor::from_rows(pr, pc, d)
                        }
                    };
                    offset += match axis {
                        Axis::Rows => pr,
                        Axis::Cols => pc,
                    };
                    acc(p, piece);
                }
            }
            Op::Slice { a, axis, start } => {
                let (r, c) = (val(a).rows(), val(a).cols());
                let mut out = vec![0.0f32; r * c];
                match axis {
                    Axis::Rows => out[start * c..start * c + g.len()].copy_from_slice(g.data()),
                    Axis::Cols => {
                        let len = g.cols();
                        for ri in 0..r {
                            out[ri * c + start..ri * c + start + len]
                                .copy_from_slice(g.row_slice(ri));
                        }
                    }
                }
                acc(*a, Tensor::from_rows(r, c, out));
            }
            Op::Gather { a, idx } => {
                let (r, c) = (val(a).rows(), val(a).cols());
                let mut out = vec![0.0f32; r * c];
                for (k, &ri) in idx.iter().enumerate() {
                    for (o, v) in out[ri * c..(ri + 1) * c].iter_mut().zip(g.row_slice(k)) {
                        *o += *v;
                    }
                }
                acc(*a, Tensor::from_rows(r, c, out));
            }
            Op::RepeatRows(a) => {
                let c = g.cols();
                let mut s = vec![0.0f64; c];
                for ri in 0..g.rows() {
                    for (sj, v) in s.iter_mut().zip(g.row_slice(ri)) {
                        *sj += *v as f64;
                    }
                }
                acc(
                    *a,
                    Tensor::from_rows(1, c, s.into_iter().map(|v| v as f32).collect()),
                );
            }
            Op::Reshape(a) => acc(*a, g.reshape(val(a).shape())?),
        }
        Ok(())
    }
}

pub fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
