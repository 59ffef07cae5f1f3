//! Define-by-run compute graph with reverse-mode differentiation.
//!
//! Every operation appends a node to the tape; node inputs always have
//! smaller indices than the node itself, so a single reverse sweep over the
//! tape visits operations in a valid topological order. A graph is built per
//! forward pass and dropped afterwards.
//!
//! Masks passed to [`Graph::softmax`], [`Graph::cross_entropy`] and the
//! attention helpers use `true` for a *valid* position and `false` for a
//! padded one.

use alloc::borrow::Cow;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::kernels;
use crate::tensor::{numel, Precision, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Unary {
    Sigmoid,
    Tanh,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Binary(Binary, Var, Var),
    Unary(Unary, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    Linear { w: Var, x: Var, b: Option<Var> },
    RowsLinear { x: Var, w: Var },
    AddRowwise { m: Var, v: Var },
    MatVec { m: Var, v: Var },
    VecMat { v: Var, m: Var },
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    Row { x: Var, index: usize },
    StackRows(Vec<Var>),
    Gather { table: Var, index: usize },
    Softmax { x: Var },
    CrossEntropy { logits: Var, targets: Vec<usize>, valid: Vec<bool>, count: usize },
    Sum(Var),
    LstmCell { z: Var, c: Var },
}

struct Node<'a> {
    shape: Vec<usize>,
    value: Cow<'a, [f64]>,
    op: Op,
    requires_grad: bool,
    /// Forward quantities the adjoint needs (softmax outputs, gate values).
    aux: Vec<f64>,
}

/// Tape of executed operations. Leaves may borrow parameter storage for the
/// lifetime `'a`.
pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
    grads: Vec<Option<Vec<f64>>>,
    precision: Precision,
    grad_enabled: bool,
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Self::with_precision(Precision::Float64)
    }

    pub fn with_precision(precision: Precision) -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
            precision,
            grad_enabled: true,
        }
    }

    /// A graph that never records gradient requirements; used for decoding.
    pub fn inference() -> Self {
        Self::inference_with_precision(Precision::Float64)
    }

    pub fn inference_with_precision(precision: Precision) -> Self {
        let mut g = Self::with_precision(precision);
        g.grad_enabled = false;
        g
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    // ---------------------------------------------------------------- leaves

    /// Registers a tensor without copying its values.
    pub fn leaf(&mut self, t: &'a Tensor) -> Var {
        let rg = self.grad_enabled && t.requires_grad();
        self.push_raw(t.shape().to_vec(), Cow::Borrowed(t.values()), Op::Leaf, rg, Vec::new())
    }

    /// Registers an owned tensor (copied into the tape).
    pub fn input(&mut self, t: Tensor) -> Var {
        let rg = self.grad_enabled && t.requires_grad();
        let shape = t.shape().to_vec();
        self.push_raw(shape, Cow::Owned(t.into_values()), Op::Leaf, rg, Vec::new())
    }

    /// A constant that never receives a gradient.
    pub fn constant(&mut self, shape: &[usize], values: Vec<f64>) -> Result<Var> {
        if numel(shape) != values.len() {
            return Err(Error::shape("constant", shape, &[values.len()]));
        }
        Ok(self.push_raw(shape.to_vec(), Cow::Owned(values), Op::Leaf, false, Vec::new()))
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.push_raw(Vec::new(), Cow::Owned(vec![value]), Op::Leaf, false, Vec::new())
    }

    pub fn zeros(&mut self, shape: &[usize]) -> Var {
        self.push_raw(shape.to_vec(), Cow::Owned(vec![0.0; numel(shape)]), Op::Leaf, false, Vec::new())
    }

    // -------------------------------------------------------------- accessors

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.to_vec())
            .unwrap_or_else(|_| Tensor::scalar(n.value[0]))
    }

    /// Gradient of the last backward pass with respect to `v`, if any flowed.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    // ------------------------------------------------------------ elementwise

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(Unary::Sigmoid, x)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(Unary::Tanh, x)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out: Vec<f64> = self.value(x).iter().map(|v| v * c).collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, out, Op::Scale(x, c), &[x], Vec::new())
    }

    /// Concatenation along the last axis. All operands must share the
    /// leading dimensions.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::contract("concat of zero operands"))?;
        let lead = leading(self.shape(first)).to_vec();
        let outer = numel(&lead);
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.is_empty() || leading(s) != lead.as_slice() {
                return Err(Error::shape("concat", self.shape(first), s));
            }
            total += s[s.len() - 1];
        }
        let mut out = Vec::with_capacity(outer * total);
        for r in 0..outer {
            for &p in parts {
                let w = *self.shape(p).last().unwrap();
                out.extend_from_slice(&self.value(p)[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        Ok(self.push(shape, out, Op::Concat(parts.to_vec()), parts, Vec::new()))
    }

    /// `x[start..start + len]` of a vector.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 1 || start + len > s[0] || len == 0 {
            return Err(Error::shape("slice", s, &[start, len]));
        }
        let out = self.value(x)[start..start + len].to_vec();
        Ok(self.push(vec![len], out, Op::Slice { x, start }, &[x], Vec::new()))
    }

    /// Element `index` of a vector, as a scalar.
    pub fn pick(&mut self, x: Var, index: usize) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 1 {
            return Err(Error::shape("pick", s, &[index]));
        }
        if index >= s[0] {
            return Err(Error::Index { what: "element", index, bound: s[0] });
        }
        let out = vec![self.value(x)[index]];
        Ok(self.push(Vec::new(), out, Op::Slice { x, start: index }, &[x], Vec::new()))
    }

    /// Row `index` of a matrix, as a vector.
    pub fn row(&mut self, x: Var, index: usize) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(Error::shape("row", s, &[index]));
        }
        if index >= s[0] {
            return Err(Error::Index { what: "row", index, bound: s[0] });
        }
        let c = s[1];
        let out = self.value(x)[index * c..(index + 1) * c].to_vec();
        Ok(self.push(vec![c], out, Op::Row { x, index }, &[x], Vec::new()))
    }

    /// Stacks equal-length vectors into a `[rows.len() x n]` matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        let first = *rows
            .first()
            .ok_or_else(|| Error::contract("stack of zero rows"))?;
        let n = self.shape(first).to_vec();
        if n.len() != 1 {
            return Err(Error::shape("stack_rows", &n, &[]));
        }
        let mut out = Vec::with_capacity(rows.len() * n[0]);
        for &r in rows {
            if self.shape(r) != n.as_slice() {
                return Err(Error::shape("stack_rows", &n, self.shape(r)));
            }
            out.extend_from_slice(self.value(r));
        }
        Ok(self.push(vec![rows.len(), n[0]], out, Op::StackRows(rows.to_vec()), rows, Vec::new()))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).iter().sum();
        self.push(Vec::new(), vec![s], Op::Sum(x), &[x], Vec::new())
    }

    // ----------------------------------------------------------------- linear

    /// Matrix product `[m x k] . [k x n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                kernels::axpy(av[i * k + p], &bv[p * n..(p + 1) * n], orow);
            }
        }
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b), &[a, b], Vec::new()))
    }

    /// `W x + b` for `W: [out x in]`, `x: [in]`, `b: [out]`.
    pub fn linear(&mut self, w: Var, x: Var, b: Option<Var>) -> Result<Var> {
        let (sw, sx) = (self.shape(w), self.shape(x));
        if sw.len() != 2 || sx.len() != 1 || sw[1] != sx[0] {
            return Err(Error::shape("linear", sw, sx));
        }
        let rows = sw[0];
        if let Some(b) = b {
            if self.shape(b) != [rows] {
                return Err(Error::shape("linear bias", &[rows], self.shape(b)));
            }
        }
        let mut out = vec![0.0; rows];
        kernels::matvec(self.value(w), self.value(x), &mut out);
        if let Some(b) = b {
            out.iter_mut().zip(self.value(b)).for_each(|(o, bb)| *o += bb);
        }
        let inputs: &[Var] = match b {
            Some(b) => &[w, x, b],
            None => &[w, x],
        };
        let inputs = inputs.to_vec();
        Ok(self.push(vec![rows], out, Op::Linear { w, x, b }, &inputs, Vec::new()))
    }

    /// `X W^T` for `X: [T x in]`, `W: [out x in]`.
    pub fn rows_linear(&mut self, x: Var, w: Var) -> Result<Var> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sx.len() != 2 || sw.len() != 2 || sx[1] != sw[1] {
            return Err(Error::shape("rows_linear", sx, sw));
        }
        let (t, i, o) = (sx[0], sx[1], sw[0]);
        let (xv, wv) = (self.value(x), self.value(w));
        let mut out = vec![0.0; t * o];
        for r in 0..t {
            kernels::matvec(wv, &xv[r * i..(r + 1) * i], &mut out[r * o..(r + 1) * o]);
        }
        Ok(self.push(vec![t, o], out, Op::RowsLinear { x, w }, &[x, w], Vec::new()))
    }

    /// Adds vector `v: [A]` to every row of `m: [U x A]`.
    pub fn add_rowwise(&mut self, m: Var, v: Var) -> Result<Var> {
        let (sm, sv) = (self.shape(m), self.shape(v));
        if sm.len() != 2 || sv.len() != 1 || sm[1] != sv[0] {
            return Err(Error::shape("add_rowwise", sm, sv));
        }
        let a = sv[0];
        let vv = self.value(v);
        let out: Vec<f64> = self
            .value(m)
            .iter()
            .enumerate()
            .map(|(i, x)| x + vv[i % a])
            .collect();
        let shape = sm.to_vec();
        Ok(self.push(shape, out, Op::AddRowwise { m, v }, &[m, v], Vec::new()))
    }

    /// `m v` for `m: [U x A]`, `v: [A]`.
    pub fn matvec(&mut self, m: Var, v: Var) -> Result<Var> {
        let (sm, sv) = (self.shape(m), self.shape(v));
        if sm.len() != 2 || sv.len() != 1 || sm[1] != sv[0] {
            return Err(Error::shape("matvec", sm, sv));
        }
        let mut out = vec![0.0; sm[0]];
        kernels::matvec(self.value(m), self.value(v), &mut out);
        let u = sm[0];
        Ok(self.push(vec![u], out, Op::MatVec { m, v }, &[m, v], Vec::new()))
    }

    /// `v^T m` for `v: [U]`, `m: [U x E]`.
    pub fn vecmat(&mut self, v: Var, m: Var) -> Result<Var> {
        let (sv, sm) = (self.shape(v), self.shape(m));
        if sm.len() != 2 || sv.len() != 1 || sm[0] != sv[0] {
            return Err(Error::shape("vecmat", sv, sm));
        }
        let e = sm[1];
        let mut out = vec![0.0; e];
        let mv = self.value(m);
        for (u, &a) in self.value(v).iter().enumerate() {
            kernels::axpy(a, &mv[u * e..(u + 1) * e], &mut out);
        }
        Ok(self.push(vec![e], out, Op::VecMat { v, m }, &[v, m], Vec::new()))
    }

    /// Row `index` of an embedding table `[V x K]`.
    pub fn gather(&mut self, table: Var, index: usize) -> Result<Var> {
        let s = self.shape(table);
        if s.len() != 2 {
            return Err(Error::shape("gather", s, &[index]));
        }
        if index >= s[0] {
            return Err(Error::Index { what: "token id", index, bound: s[0] });
        }
        let k = s[1];
        let out = self.value(table)[index * k..(index + 1) * k].to_vec();
        Ok(self.push(vec![k], out, Op::Gather { table, index }, &[table], Vec::new()))
    }

    // ------------------------------------------------------------ probability

    /// Softmax over the last axis with max subtraction. `valid`, when given,
    /// applies to every last-axis slice; invalid positions get probability 0.
    pub fn softmax(&mut self, x: Var, valid: Option<&[bool]>) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let v = *s.last().ok_or_else(|| Error::shape("softmax", &s, &[]))?;
        if let Some(m) = valid {
            if m.len() != v {
                return Err(Error::shape("softmax mask", &s, &[m.len()]));
            }
            if !m.iter().any(|&b| b) {
                return Err(Error::contract("softmax with every position masked"));
            }
        }
        let xv = self.value(x);
        if !xv.iter().all(|a| a.is_finite()) {
            return Err(Error::NonFinite("softmax input"));
        }
        let mut out = vec![0.0; xv.len()];
        for (xr, or) in xv.chunks_exact(v).zip(out.chunks_exact_mut(v)) {
            let lse = kernels::log_sum_exp(xr, valid);
            for (i, (o, &a)) in or.iter_mut().zip(xr).enumerate() {
                if valid.map_or(true, |m| m[i]) {
                    *o = libm::exp(a - lse);
                }
            }
        }
        Ok(self.push(s, out, Op::Softmax { x }, &[x], Vec::new()))
    }

    /// Mean over valid steps of `-log softmax(logits[t])[targets[t]]`.
    /// With no valid step the loss is 0 and no gradient flows.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], valid: &[bool]) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[0] != targets.len() || s[0] != valid.len() {
            return Err(Error::shape("cross_entropy", &s, &[targets.len(), valid.len()]));
        }
        let (t_len, v) = (s[0], s[1]);
        for &t in targets {
            if t >= v {
                return Err(Error::Index { what: "target id", index: t, bound: v });
            }
        }
        let lv = self.value(logits);
        if !lv.iter().all(|a| a.is_finite()) {
            return Err(Error::NonFinite("cross_entropy logits"));
        }
        let count = valid.iter().filter(|&&b| b).count();
        let need_aux = self.nodes[logits.0].requires_grad;
        let mut aux = if need_aux { vec![0.0; t_len * v] } else { Vec::new() };
        let mut total = 0.0;
        for t in 0..t_len {
            if !valid[t] {
                continue;
            }
            let row = &lv[t * v..(t + 1) * v];
            let lse = kernels::log_sum_exp(row, None);
            total += lse - row[targets[t]];
            if need_aux {
                for (p, &a) in aux[t * v..(t + 1) * v].iter_mut().zip(row) {
                    *p = libm::exp(a - lse);
                }
            }
        }
        let loss = if count == 0 { 0.0 } else { total / count as f64 };
        let op = Op::CrossEntropy {
            logits,
            targets: targets.to_vec(),
            valid: valid.to_vec(),
            count,
        };
        Ok(self.push(Vec::new(), vec![loss], op, &[logits], aux))
    }

    // ------------------------------------------------------------------ fused

    /// LSTM cell nonlinearity. `z` holds the stacked pre-activations of the
    /// input, forget, cell and output gates (in that order); returns
    /// `[h; c]` as one `2H` vector.
    pub fn lstm_cell(&mut self, z: Var, c_prev: Var) -> Result<Var> {
        let (sz, sc) = (self.shape(z), self.shape(c_prev));
        if sz.len() != 1 || sc.len() != 1 || sz[0] != 4 * sc[0] {
            return Err(Error::shape("lstm_cell", sz, sc));
        }
        let h = sc[0];
        let need_aux = self.nodes[z.0].requires_grad || self.nodes[c_prev.0].requires_grad;
        let zv = self.value(z);
        let cv = self.value(c_prev);
        let mut out = vec![0.0; 2 * h];
        let mut aux = if need_aux { vec![0.0; 5 * h] } else { Vec::new() };
        for j in 0..h {
            let i = kernels::sigmoid(zv[j]);
            let f = kernels::sigmoid(zv[h + j]);
            let g = kernels::tanh(zv[2 * h + j]);
            let o = kernels::sigmoid(zv[3 * h + j]);
            let c = f * cv[j] + i * g;
            let tc = kernels::tanh(c);
            out[j] = o * tc;
            out[h + j] = c;
            if need_aux {
                aux[j] = i;
                aux[h + j] = f;
                aux[2 * h + j] = g;
                aux[3 * h + j] = o;
                aux[4 * h + j] = tc;
            }
        }
        Ok(self.push(vec![2 * h], out, Op::LstmCell { z, c: c_prev }, &[z, c_prev], aux))
    }

    // --------------------------------------------------------------- backward

    /// Reverse sweep from a scalar `loss`. Every node that requires a gradient
    /// and is reachable from `loss` receives one; gradients of a previous
    /// sweep are discarded.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::contract("backward needs a scalar loss"));
        }
        self.grads.clear();
        self.grads.resize_with(self.nodes.len(), || None);
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(dy) = self.grads[idx].take() else {
                continue;
            };
            if self.nodes[idx].requires_grad {
                self.backprop_node(idx, &dy);
            }
            self.grads[idx] = Some(dy);
        }
        Ok(())
    }

    fn backprop_node(&mut self, idx: usize, dy: &[f64]) {
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        let node = &nodes[idx];
        let val = |v: Var| -> &[f64] { &nodes[v.0].value };
        let rg = |v: Var| nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Binary(kind, a, b) => {
                let (a, b) = (*a, *b);
                let (av, bv) = (val(a), val(b));
                let a_scalar = av.len() == 1 && dy.len() != 1;
                let b_scalar = bv.len() == 1 && dy.len() != 1;
                let at = |v: &[f64], i: usize| if v.len() == 1 { v[0] } else { v[i] };
                if rg(a) {
                    let ga = acc(grads, a, av.len());
                    for (i, &d) in dy.iter().enumerate() {
                        let contrib = match kind {
                            Binary::Add | Binary::Sub => d,
                            Binary::Mul => d * at(bv, i),
                        };
                        if a_scalar {
                            ga[0] += contrib;
                        } else {
                            ga[i] += contrib;
                        }
                    }
                }
                if rg(b) {
                    let gb = acc(grads, b, bv.len());
                    for (i, &d) in dy.iter().enumerate() {
                        let contrib = match kind {
                            Binary::Add => d,
                            Binary::Sub => -d,
                            Binary::Mul => d * at(av, i),
                        };
                        if b_scalar {
                            gb[0] += contrib;
                        } else {
                            gb[i] += contrib;
                        }
                    }
                }
            }
            Op::Unary(kind, x) => {
                let x = *x;
                if rg(x) {
                    let y = &node.value;
                    let gx = acc(grads, x, y.len());
                    for ((g, &d), &yv) in gx.iter_mut().zip(dy).zip(y.iter()) {
                        *g += match kind {
                            Unary::Sigmoid => d * yv * (1.0 - yv),
                            Unary::Tanh => d * (1.0 - yv * yv),
                        };
                    }
                }
            }
            Op::Scale(x, c) => {
                if rg(*x) {
                    kernels::axpy(*c, dy, acc(grads, *x, dy.len()));
                }
            }
            Op::MatMul(a, b) => {
                let (a, b) = (*a, *b);
                let (sa, sb) = (&nodes[a.0].shape, &nodes[b.0].shape);
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (av, bv) = (val(a), val(b));
                if rg(a) {
                    let ga = acc(grads, a, m * k);
                    for i in 0..m {
                        for p in 0..k {
                            ga[i * k + p] += kernels::dot(&dy[i * n..(i + 1) * n], &bv[p * n..(p + 1) * n]);
                        }
                    }
                }
                if rg(b) {
                    let gb = acc(grads, b, k * n);
                    for i in 0..m {
                        for p in 0..k {
                            kernels::axpy(av[i * k + p], &dy[i * n..(i + 1) * n], &mut gb[p * n..(p + 1) * n]);
                        }
                    }
                }
            }
            Op::Linear { w, x, b } => {
                let (w, x) = (*w, *x);
                if rg(w) {
                    let n = val(w).len();
                    kernels::outer_acc(dy, val(x), acc(grads, w, n));
                }
                if rg(x) {
                    let n = val(x).len();
                    kernels::matvec_t_acc(val(w), dy, acc(grads, x, n));
                }
                if let Some(b) = *b {
                    if rg(b) {
                        kernels::axpy(1.0, dy, acc(grads, b, dy.len()));
                    }
                }
            }
            Op::RowsLinear { x, w } => {
                let (x, w) = (*x, *w);
                let sx = &nodes[x.0].shape;
                let (t, i) = (sx[0], sx[1]);
                let o = nodes[w.0].shape[0];
                if rg(x) {
                    let gx = acc(grads, x, t * i);
                    for r in 0..t {
                        kernels::matvec_t_acc(val(w), &dy[r * o..(r + 1) * o], &mut gx[r * i..(r + 1) * i]);
                    }
                }
                if rg(w) {
                    let gw = acc(grads, w, o * i);
                    let xv = val(x);
                    for r in 0..t {
                        kernels::outer_acc(&dy[r * o..(r + 1) * o], &xv[r * i..(r + 1) * i], gw);
                    }
                }
            }
            Op::AddRowwise { m, v } => {
                let (m, v) = (*m, *v);
                if rg(m) {
                    kernels::axpy(1.0, dy, acc(grads, m, dy.len()));
                }
                if rg(v) {
                    let a = val(v).len();
                    let gv = acc(grads, v, a);
                    for row in dy.chunks_exact(a) {
                        kernels::axpy(1.0, row, gv);
                    }
                }
            }
            Op::MatVec { m, v } => {
                let (m, v) = (*m, *v);
                let a = val(v).len();
                if rg(m) {
                    let gm = acc(grads, m, dy.len() * a);
                    kernels::outer_acc(dy, val(v), gm);
                }
                if rg(v) {
                    kernels::matvec_t_acc(val(m), dy, acc(grads, v, a));
                }
            }
            Op::VecMat { v, m } => {
                let (v, m) = (*v, *m);
                let e = dy.len();
                let u = val(v).len();
                if rg(v) {
                    let mv = val(m);
                    let gv = acc(grads, v, u);
                    for (r, g) in gv.iter_mut().enumerate() {
                        *g += kernels::dot(&mv[r * e..(r + 1) * e], dy);
                    }
                }
                if rg(m) {
                    kernels::outer_acc(val(v), dy, acc(grads, m, u * e));
                }
            }
            Op::Concat(parts) => {
                let outer = numel(leading(&node.shape));
                let total = *node.shape.last().unwrap();
                let mut off = 0;
                for &p in parts {
                    let w = *nodes[p.0].shape.last().unwrap();
                    if rg(p) {
                        let gp = acc(grads, p, outer * w);
                        for r in 0..outer {
                            kernels::axpy(1.0, &dy[r * total + off..r * total + off + w], &mut gp[r * w..(r + 1) * w]);
                        }
                    }
                    off += w;
                }
            }
            Op::Slice { x, start } => {
                if rg(*x) {
                    let n = val(*x).len();
                    let gx = acc(grads, *x, n);
                    kernels::axpy(1.0, dy, &mut gx[*start..*start + dy.len()]);
                }
            }
            Op::Row { x, index } => {
                if rg(*x) {
                    let n = val(*x).len();
                    let c = dy.len();
                    let gx = acc(grads, *x, n);
                    kernels::axpy(1.0, dy, &mut gx[index * c..(index + 1) * c]);
                }
            }
            Op::StackRows(rows) => {
                let n = node.shape[1];
                for (r, &p) in rows.iter().enumerate() {
                    if rg(p) {
                        kernels::axpy(1.0, &dy[r * n..(r + 1) * n], acc(grads, p, n));
                    }
                }
            }
            Op::Gather { table, index } => {
                if rg(*table) {
                    let n = val(*table).len();
                    let k = dy.len();
                    let gt = acc(grads, *table, n);
                    kernels::axpy(1.0, dy, &mut gt[index * k..(index + 1) * k]);
                }
            }
            Op::Softmax { x } => {
                if rg(*x) {
                    let v = *node.shape.last().unwrap();
                    let y = &node.value;
                    let gx = acc(grads, *x, y.len());
                    for ((yr, dr), gr) in y.chunks_exact(v).zip(dy.chunks_exact(v)).zip(gx.chunks_exact_mut(v)) {
                        let s = kernels::dot(yr, dr);
                        for j in 0..v {
                            gr[j] += yr[j] * (dr[j] - s);
                        }
                    }
                }
            }
            Op::CrossEntropy { logits, targets, valid, count } => {
                if rg(*logits) && *count > 0 {
                    let v = nodes[logits.0].shape[1];
                    let scale = dy[0] / *count as f64;
                    let probs = &node.aux;
                    let gl = acc(grads, *logits, targets.len() * v);
                    for (t, &tok) in targets.iter().enumerate() {
                        if !valid[t] {
                            continue;
                        }
                        let row = &mut gl[t * v..(t + 1) * v];
                        kernels::axpy(scale, &probs[t * v..(t + 1) * v], row);
                        row[tok] -= scale;
                    }
                }
            }
            Op::Sum(x) => {
                if rg(*x) {
                    let n = val(*x).len();
                    acc(grads, *x, n).iter_mut().for_each(|g| *g += dy[0]);
                }
            }
            Op::LstmCell { z, c } => {
                let (z, c) = (*z, *c);
                let h = node.shape[0] / 2;
                let aux = &node.aux;
                let cprev = val(c);
                let (dh, dc_out) = dy.split_at(h);
                let mut dz = vec![0.0; 4 * h];
                let mut dcp = vec![0.0; h];
                for j in 0..h {
                    let (i, f, g, o, tc) = (aux[j], aux[h + j], aux[2 * h + j], aux[3 * h + j], aux[4 * h + j]);
                    let dc = dc_out[j] + dh[j] * o * (1.0 - tc * tc);
                    let d_o = dh[j] * tc;
                    dz[j] = dc * g * i * (1.0 - i);
                    dz[h + j] = dc * cprev[j] * f * (1.0 - f);
                    dz[2 * h + j] = dc * i * (1.0 - g * g);
                    dz[3 * h + j] = d_o * o * (1.0 - o);
                    dcp[j] = dc * f;
                }
                if rg(z) {
                    kernels::axpy(1.0, &dz, acc(grads, z, 4 * h));
                }
                if rg(c) {
                    kernels::axpy(1.0, &dcp, acc(grads, c, h));
                }
            }
        }
    }

    // -------------------------------------------------------------- internals

    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let shape = if sa == sb {
            sa.to_vec()
        } else if sb.is_empty() {
            sa.to_vec()
        } else if sa.is_empty() {
            sb.to_vec()
        } else {
            return Err(Error::shape(
                match kind {
                    Binary::Add => "add",
                    Binary::Sub => "sub",
                    Binary::Mul => "mul",
                },
                sa,
                sb,
            ));
        };
        let (av, bv) = (self.value(a), self.value(b));
        let n = numel(&shape);
        let at = |v: &[f64], i: usize| if v.len() == 1 { v[0] } else { v[i] };
        let out: Vec<f64> = (0..n)
            .map(|i| {
                let (x, y) = (at(av, i), at(bv, i));
                match kind {
                    Binary::Add => x + y,
                    Binary::Sub => x - y,
                    Binary::Mul => x * y,
                }
            })
            .collect();
        Ok(self.push(shape, out, Op::Binary(kind, a, b), &[a, b], Vec::new()))
    }

    fn unary(&mut self, kind: Unary, x: Var) -> Var {
        let out: Vec<f64> = self
            .value(x)
            .iter()
            .map(|&v| match kind {
                Unary::Sigmoid => kernels::sigmoid(v),
                Unary::Tanh => kernels::tanh(v),
            })
            .collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, out, Op::Unary(kind, x), &[x], Vec::new())
    }

    fn push(&mut self, shape: Vec<usize>, mut out: Vec<f64>, op: Op, inputs: &[Var], aux: Vec<f64>) -> Var {
        if self.precision == Precision::Float32 {
            out.iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
        let rg = self.grad_enabled && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push_raw(shape, Cow::Owned(out), op, rg, aux)
    }

    fn push_raw(&mut self, shape: Vec<usize>, value: Cow<'a, [f64]>, op: Op, requires_grad: bool, aux: Vec<f64>) -> Var {
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
            aux,
        });
        Var(self.nodes.len() - 1)
    }
}

fn leading(shape: &[usize]) -> &[usize] {
    if shape.is_empty() {
        shape
    } else {
        &shape[..shape.len() - 1]
    }
}

fn acc(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}
