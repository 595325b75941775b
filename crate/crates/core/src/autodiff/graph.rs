//! Dynamic computation graph with reverse-mode differentiation.
//!
//! A [`Graph`] is built fresh for every example. Each operation appends a
//! node holding its forward value and enough saved state to run its
//! backward rule. Parameters live outside the graph in a [`ParamStore`];
//! nodes only remember the [`ParamId`] they were read from, and
//! [`Graph::backward`] accumulates into the store's gradient buffers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Variable,
    Param(ParamId),
    GatherParam {
        param: ParamId,
        rows: Vec<usize>,
    },
    Reshape(Var),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    SliceCols {
        input: Var,
        start: usize,
    },
    Rows {
        input: Var,
        rows: Vec<usize>,
    },
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    MeanPool {
        input: Var,
        ranges: Vec<(usize, usize)>,
    },
    Dropout {
        input: Var,
        mask: Vec<f64>,
    },
    Sum(Var),
    SoftmaxNll {
        logits: Var,
        gold: Vec<usize>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Records operations for one forward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    dropout_rng: Option<ChaCha8Rng>,
    trace: Option<Vec<u64>>,
}

impl Graph {
    /// Inference graph: dropout is the identity.
    pub fn new() -> Self {
        Self::default()
    }

    /// Training graph: dropout masks are drawn from a generator seeded
    /// with `seed`.
    pub fn training(seed: u64) -> Self {
        Graph {
            dropout_rng: Some(ChaCha8Rng::seed_from_u64(seed)),
            ..Self::default()
        }
    }

    /// Enables recording of every data-dependent branch (ReLU signs, pooling
    /// argmax, anything passed to [`Graph::note_branch`]). Finite-difference
    /// checks use it to detect perturbations that cross a kink.
    pub fn with_branch_trace(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    pub fn branch_trace(&self) -> Option<&[u64]> {
        self.trace.as_deref()
    }

    pub fn note_branch(&mut self, keys: impl IntoIterator<Item = u64>) {
        if let Some(trace) = &mut self.trace {
            trace.extend(keys);
        }
    }

    pub fn is_training(&self) -> bool {
        self.dropout_rng.is_some()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient accumulated by the last [`Graph::backward`] call, if the
    /// node participates in differentiation.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// Differentiable leaf not backed by a parameter.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Variable, true)
    }

    /// Copy of a parameter as a differentiable leaf.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id), true)
    }

    /// Selected rows of a 2-D parameter (embedding lookup).
    pub fn gather_param(&mut self, store: &ParamStore, id: ParamId, rows: &[usize]) -> Result<Var> {
        let table = store.value(id);
        if table.ndim() != 2 {
            return Err(Error::dim("gather_param", table.shape(), &[0, 0]));
        }
        let (n, d) = (table.shape()[0], table.shape()[1]);
        let mut values = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            if r >= n {
                return Err(Error::Index {
                    what: "embedding table",
                    index: r,
                    len: n,
                });
            }
            values.extend_from_slice(table.row(r));
        }
        let value = Tensor::new(vec![rows.len(), d], values)?;
        Ok(self.push(
            value,
            Op::GatherParam {
                param: id,
                rows: rows.to_vec(),
            },
            true,
        ))
    }

    /// Detached copy: same value, no gradient flows back through it.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    pub fn reshape(&mut self, v: Var, shape: Vec<usize>) -> Result<Var> {
        let src = &self.nodes[v.0].value;
        if shape.iter().product::<usize>() != src.len() {
            return Err(Error::dim("reshape", src.shape(), &shape));
        }
        let value = Tensor::new(shape, src.values().to_vec())?;
        let rg = self.rg(&[v]);
        Ok(self.push(value, Op::Reshape(v), rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if av.ndim() != 2 || bv.ndim() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(Error::dim("matmul", av.shape(), bv.shape()));
        }
        let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let out = matmul_raw(av.values(), bv.values(), m, k, n);
        let value = Tensor::new(vec![m, n], out)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_same("add", a, b, |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_same("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    fn zip_same(&self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if av.shape() != bv.shape() {
            return Err(Error::dim(op, av.shape(), bv.shape()));
        }
        let values = av.values().iter().zip(bv.values()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::new(av.shape().to_vec(), values)
    }

    /// Adds a bias vector to every row of a matrix.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[bias.0].value);
        if av.ndim() != 2 || bv.len() != av.shape()[1] {
            return Err(Error::dim("add_row", av.shape(), bv.shape()));
        }
        let cols = av.shape()[1];
        let mut values = av.values().to_vec();
        for row in values.chunks_mut(cols.max(1)) {
            row.iter_mut().zip(bv.values()).for_each(|(x, b)| *x += b);
        }
        let value = Tensor::new(av.shape().to_vec(), values)?;
        let rg = self.rg(&[a, bias]);
        Ok(self.push(value, Op::AddRow(a, bias), rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.map(a, |x| x * factor);
        let rg = self.rg(&[a]);
        self.push(value, Op::Scale(a, factor), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        if let Some(trace) = &mut self.trace {
            trace.extend(self.nodes[a.0].value.values().iter().map(|x| (*x > 0.0) as u64));
        }
        // NaN propagates rather than being clamped to zero
        let value = self.map(a, |x| if x < 0.0 { 0.0 } else { x });
        let rg = self.rg(&[a]);
        self.push(value, Op::Relu(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.map(a, f64::tanh);
        let rg = self.rg(&[a]);
        self.push(value, Op::Tanh(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.map(a, sigmoid);
        let rg = self.rg(&[a]);
        self.push(value, Op::Sigmoid(a), rg)
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let av = &self.nodes[a.0].value;
        let values = av.values().iter().map(|x| f(*x)).collect();
        Tensor::new(av.shape().to_vec(), values).expect("shape preserved")
    }

    /// Concatenates tensors along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = match inputs.first() {
            Some(v) => self.nodes[v.0].value.shape().to_vec(),
            None => return Err(Error::Input("concat of zero tensors".into())),
        };
        if axis >= first.len() {
            return Err(Error::dim("concat", &first, &[axis]));
        }
        let mut out_shape = first.clone();
        out_shape[axis] = 0;
        for v in inputs {
            let s = self.nodes[v.0].value.shape();
            let compatible =
                s.len() == first.len() && s.iter().zip(&first).enumerate().all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(Error::dim("concat", &first, s));
            }
            out_shape[axis] += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut values = Vec::with_capacity(out_shape.iter().product());
        for o in 0..outer {
            for v in inputs {
                let t = &self.nodes[v.0].value;
                let chunk = t.shape()[axis] * inner;
                values.extend_from_slice(&t.values()[o * chunk..(o + 1) * chunk]);
            }
        }
        let value = Tensor::new(out_shape, values)?;
        let rg = self.rg(inputs);
        Ok(self.push(
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Columns `start..start + width` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Result<Var> {
        let av = &self.nodes[a.0].value;
        if av.ndim() != 2 || start + width > av.shape()[1] {
            return Err(Error::dim("slice_cols", av.shape(), &[start, width]));
        }
        let rows = av.shape()[0];
        let mut values = Vec::with_capacity(rows * width);
        for r in 0..rows {
            values.extend_from_slice(&av.row(r)[start..start + width]);
        }
        let value = Tensor::new(vec![rows, width], values)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::SliceCols { input: a, start }, rg))
    }

    /// Selected rows of a matrix, in the given order (repeats allowed).
    pub fn rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let av = &self.nodes[a.0].value;
        if av.ndim() != 2 {
            return Err(Error::dim("rows", av.shape(), &[0, 0]));
        }
        let (n, d) = (av.shape()[0], av.shape()[1]);
        let mut values = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            if r >= n {
                return Err(Error::Index {
                    what: "matrix rows",
                    index: r,
                    len: n,
                });
            }
            values.extend_from_slice(av.row(r));
        }
        let value = Tensor::new(vec![rows.len(), d], values)?;
        let rg = self.rg(&[a]);
        Ok(self.push(
            value,
            Op::Rows {
                input: a,
                rows: rows.to_vec(),
            },
            rg,
        ))
    }

    fn check_ranges(&self, a: Var, ranges: &[(usize, usize)]) -> Result<(usize, usize)> {
        let av = &self.nodes[a.0].value;
        if av.ndim() != 2 {
            return Err(Error::dim("pool", av.shape(), &[0, 0]));
        }
        let (n, d) = (av.shape()[0], av.shape()[1]);
        for &(s, e) in ranges {
            if s > e || e >= n {
                return Err(Error::Index {
                    what: "pool range end",
                    index: e.max(s),
                    len: n,
                });
            }
        }
        Ok((n, d))
    }

    /// Element-wise maximum over each inclusive row range; one output row
    /// per range.
    pub fn max_pool(&mut self, a: Var, ranges: &[(usize, usize)]) -> Result<Var> {
        let (_, d) = self.check_ranges(a, ranges)?;
        let av = &self.nodes[a.0].value;
        let mut values = Vec::with_capacity(ranges.len() * d);
        let mut argmax = Vec::with_capacity(ranges.len() * d);
        for &(s, e) in ranges {
            for c in 0..d {
                let mut best = s;
                for r in s + 1..=e {
                    if av.row(r)[c] > av.row(best)[c] {
                        best = r;
                    }
                }
                values.push(av.row(best)[c]);
                argmax.push(best);
            }
        }
        if let Some(trace) = &mut self.trace {
            trace.extend(argmax.iter().map(|&r| r as u64));
        }
        let value = Tensor::new(vec![ranges.len(), d], values)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::MaxPool { input: a, argmax }, rg))
    }

    /// Element-wise mean over each inclusive row range.
    pub fn mean_pool(&mut self, a: Var, ranges: &[(usize, usize)]) -> Result<Var> {
        let (_, d) = self.check_ranges(a, ranges)?;
        let av = &self.nodes[a.0].value;
        let mut values = vec![0.0; ranges.len() * d];
        for (o, &(s, e)) in ranges.iter().enumerate() {
            let out = &mut values[o * d..(o + 1) * d];
            for r in s..=e {
                out.iter_mut().zip(av.row(r)).for_each(|(x, y)| *x += y);
            }
            let count = (e - s + 1) as f64;
            out.iter_mut().for_each(|x| *x /= count);
        }
        let value = Tensor::new(vec![ranges.len(), d], values)?;
        let rg = self.rg(&[a]);
        Ok(self.push(
            value,
            Op::MeanPool {
                input: a,
                ranges: ranges.to_vec(),
            },
            rg,
        ))
    }

    /// Inverted dropout. The identity on inference graphs or when `p == 0`.
    pub fn dropout(&mut self, a: Var, p: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout probability {p} outside [0, 1)")));
        }
        let Some(rng) = self.dropout_rng.as_mut() else {
            return Ok(a);
        };
        if p == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - p);
        let len = self.nodes[a.0].value.len();
        let mask: Vec<f64> = (0..len)
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let av = &self.nodes[a.0].value;
        let values = av.values().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let value = Tensor::new(av.shape().to_vec(), values)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Dropout { input: a, mask }, rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.nodes[a.0].value.values().iter().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(total), Op::Sum(a), rg)
    }

    /// Summed negative log-likelihood of `gold` under a row-wise softmax.
    ///
    /// `logits` is either a vector of class scores (one gold index) or a
    /// matrix with one row per example. The log-sum-exp is shifted by the
    /// row maximum.
    pub fn softmax_nll(&mut self, logits: Var, gold: &[usize]) -> Result<Var> {
        let lv = &self.nodes[logits.0].value;
        let (rows, classes) = match lv.ndim() {
            1 => (1, lv.shape()[0]),
            2 => (lv.shape()[0], lv.shape()[1]),
            _ => return Err(Error::dim("softmax_nll", lv.shape(), &[0, 0])),
        };
        if gold.len() != rows {
            return Err(Error::dim("softmax_nll", lv.shape(), &[gold.len()]));
        }
        let mut probs = Vec::with_capacity(rows * classes);
        let mut total = 0.0;
        for (r, &g) in gold.iter().enumerate() {
            if g >= classes {
                return Err(Error::Index {
                    what: "gold class",
                    index: g,
                    len: classes,
                });
            }
            let row = &lv.values()[r * classes..(r + 1) * classes];
            let (p, lse) = softmax_with_lse(row);
            total += lse - row[g];
            probs.extend(p);
        }
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(total),
            Op::SoftmaxNll {
                logits,
                gold: gold.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Propagates d`loss`/d(node) to every node and accumulates parameter
    /// gradients into `store`. `loss` must hold a single value.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore) -> Result<()> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::dim("backward", self.nodes[loss.0].value.shape(), &[1]));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let (head, tail) = self.nodes.split_at_mut(i);
            let node = &tail[0];
            let Some(dy) = node.grad.as_deref() else {
                continue;
            };
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Constant | Op::Variable => {}
                Op::Param(id) => {
                    let buf = store.get_mut(*id).grad_buffer();
                    buf.iter_mut().zip(dy).for_each(|(g, d)| *g += d);
                }
                Op::GatherParam { param, rows } => {
                    let d = node.value.cols();
                    let buf = store.get_mut(*param).grad_buffer();
                    for (o, &r) in rows.iter().enumerate() {
                        let src = &dy[o * d..(o + 1) * d];
                        buf[r * d..(r + 1) * d].iter_mut().zip(src).for_each(|(g, s)| *g += s);
                    }
                }
                Op::Reshape(a) => accumulate(head, *a, dy),
                Op::MatMul(a, b) => {
                    let (av, bv) = (&head[a.0].value, &head[b.0].value);
                    let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                    let da = head[a.0].requires_grad.then(|| matmul_bt(dy, bv.values(), m, n, k));
                    let db = head[b.0].requires_grad.then(|| matmul_at(av.values(), dy, m, k, n));
                    if let Some(da) = da {
                        accumulate(head, *a, &da);
                    }
                    if let Some(db) = db {
                        accumulate(head, *b, &db);
                    }
                }
                Op::Add(a, b) => {
                    accumulate(head, *a, dy);
                    accumulate(head, *b, dy);
                }
                Op::AddRow(a, bias) => {
                    accumulate(head, *a, dy);
                    let cols = head[bias.0].value.len();
                    let mut db = vec![0.0; cols];
                    for row in dy.chunks(cols.max(1)) {
                        db.iter_mut().zip(row).for_each(|(g, d)| *g += d);
                    }
                    accumulate(head, *bias, &db);
                }
                Op::Mul(a, b) => {
                    let da: Vec<f64> = dy.iter().zip(head[b.0].value.values()).map(|(d, y)| d * y).collect();
                    let db: Vec<f64> = dy.iter().zip(head[a.0].value.values()).map(|(d, x)| d * x).collect();
                    accumulate(head, *a, &da);
                    accumulate(head, *b, &db);
                }
                Op::Scale(a, s) => {
                    let da: Vec<f64> = dy.iter().map(|d| d * s).collect();
                    accumulate(head, *a, &da);
                }
                Op::Relu(a) => {
                    let da: Vec<f64> = dy
                        .iter()
                        .zip(head[a.0].value.values())
                        .map(|(d, x)| if *x > 0.0 { *d } else { 0.0 })
                        .collect();
                    accumulate(head, *a, &da);
                }
                Op::Tanh(a) => {
                    let da: Vec<f64> = dy
                        .iter()
                        .zip(node.value.values())
                        .map(|(d, y)| d * (1.0 - y * y))
                        .collect();
                    accumulate(head, *a, &da);
                }
                Op::Sigmoid(a) => {
                    let da: Vec<f64> = dy
                        .iter()
                        .zip(node.value.values())
                        .map(|(d, y)| d * y * (1.0 - y))
                        .collect();
                    accumulate(head, *a, &da);
                }
                Op::Concat { inputs, axis } => {
                    let shape = node.value.shape();
                    let outer: usize = shape[..*axis].iter().product();
                    let inner: usize = shape[axis + 1..].iter().product();
                    let total = shape[*axis] * inner;
                    let mut offset = 0;
                    for v in inputs {
                        let chunk = head[v.0].value.shape()[*axis] * inner;
                        if head[v.0].requires_grad {
                            let mut dv = Vec::with_capacity(outer * chunk);
                            for o in 0..outer {
                                let base = o * total + offset;
                                dv.extend_from_slice(&dy[base..base + chunk]);
                            }
                            accumulate(head, *v, &dv);
                        }
                        offset += chunk;
                    }
                }
                Op::SliceCols { input, start } => {
                    let width = node.value.cols();
                    let src_cols = head[input.0].value.cols();
                    let mut da = vec![0.0; head[input.0].value.len()];
                    for (r, row) in dy.chunks(width.max(1)).enumerate() {
                        da[r * src_cols + start..r * src_cols + start + width].copy_from_slice(row);
                    }
                    accumulate(head, *input, &da);
                }
                Op::Rows { input, rows } => {
                    let d = node.value.cols();
                    let mut da = vec![0.0; head[input.0].value.len()];
                    for (o, &r) in rows.iter().enumerate() {
                        da[r * d..(r + 1) * d]
                            .iter_mut()
                            .zip(&dy[o * d..(o + 1) * d])
                            .for_each(|(g, s)| *g += s);
                    }
                    accumulate(head, *input, &da);
                }
                Op::MaxPool { input, argmax } => {
                    let d = node.value.cols();
                    let mut da = vec![0.0; head[input.0].value.len()];
                    for (idx, (&src, g)) in argmax.iter().zip(dy).enumerate() {
                        da[src * d + idx % d] += g;
                    }
                    accumulate(head, *input, &da);
                }
                Op::MeanPool { input, ranges } => {
                    let d = node.value.cols();
                    let mut da = vec![0.0; head[input.0].value.len()];
                    for (o, &(s, e)) in ranges.iter().enumerate() {
                        let count = (e - s + 1) as f64;
                        for r in s..=e {
                            da[r * d..(r + 1) * d]
                                .iter_mut()
                                .zip(&dy[o * d..(o + 1) * d])
                                .for_each(|(g, x)| *g += x / count);
                        }
                    }
                    accumulate(head, *input, &da);
                }
                Op::Dropout { input, mask } => {
                    let da: Vec<f64> = dy.iter().zip(mask).map(|(d, m)| d * m).collect();
                    accumulate(head, *input, &da);
                }
                Op::Sum(a) => {
                    let da = vec![dy[0]; head[a.0].value.len()];
                    accumulate(head, *a, &da);
                }
                Op::SoftmaxNll { logits, gold, probs } => {
                    let classes = probs.len() / gold.len().max(1);
                    let mut da: Vec<f64> = probs.iter().map(|p| p * dy[0]).collect();
                    for (r, &g) in gold.iter().enumerate() {
                        da[r * classes + g] -= dy[0];
                    }
                    accumulate(head, *logits, &da);
                }
            }
        }
        Ok(())
    }
}

fn accumulate(head: &mut [Node], v: Var, delta: &[f64]) {
    let node = &mut head[v.0];
    if !node.requires_grad {
        return;
    }
    let len = node.value.len();
    let buf = node.grad.get_or_insert_with(|| vec![0.0; len]);
    buf.iter_mut().zip(delta).for_each(|(g, d)| *g += d);
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    softmax_with_lse(logits).0
}

fn softmax_with_lse(logits: &[f64]) -> (Vec<f64>, f64) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    (exps.iter().map(|e| e / z).collect(), max + z.ln())
}

/// `[m×k]·[k×n]`.
fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let x = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            row.iter_mut().zip(brow).for_each(|(o, y)| *o += x * y);
        }
    }
    out
}

/// `dy[m×n] · bᵀ` where `b` is `[k×n]`.
fn matmul_bt(dy: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        let drow = &dy[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            out[i * k + p] = drow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `aᵀ · dy` where `a` is `[m×k]` and `dy` is `[m×n]`.
fn matmul_at(a: &[f64], dy: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let drow = &dy[i * n..(i + 1) * n];
        for p in 0..k {
            let x = a[i * k + p];
            out[p * n..(p + 1) * n]
                .iter_mut()
                .zip(drow)
                .for_each(|(o, d)| *o += x * d);
        }
    }
    out
}
