use std::cell::{Ref, RefCell};

use super::tensor::gemm;
use super::{AutodiffError, ParamId, ParamStore, Tensor};

/// Unary elementwise kinds. `Scale` multiplies by a constant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum UnaryKind {
    Relu,
    /// `softplus(beta·x)/beta`; `beta = 1` is the plain softplus.
    Softplus {
        beta: f64,
    },
    Tanh,
    Sin,
    Cos,
    Sigmoid,
    Scale(f64),
    /// Elementwise clamp; gradient passes inside the closed interval.
    Clamp {
        lo: f64,
        hi: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    Same,
    /// Right operand is one row repeated over every row of the left.
    Row,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf { param: Option<ParamId> },
    MatMul(usize, usize),
    /// `x·W + b` with `b` broadcast over rows.
    Affine(usize, usize, usize),
    Binary(BinaryKind, usize, usize, Broadcast),
    Unary(UnaryKind, usize),
    Sum(usize),
    L1Mean(usize, usize),
    ConcatCols(Vec<usize>),
    GatherRows(usize, Vec<usize>),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of one forward pass.
///
/// Nodes are pushed in evaluation order, so every node's inputs precede it and
/// `backward` is a single reverse sweep.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var(#{} {:?})", self.id, self.shape())
    }
}

/// Leaf gradients returned by [`Tape::gradients`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the root w.r.t. a leaf; zero when the leaf is unreachable.
    pub fn wrt(&self, var: Var<'_>) -> Tensor {
        let shape = self.shapes[var.id].clone();
        match &self.grads[var.id] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(&shape),
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// A leaf that takes no gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf { param: None }, false)
    }

    /// A free leaf that takes gradient but is not bound to a parameter.
    pub fn variable(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf { param: None }, true)
    }

    /// A leaf bound to a stored parameter; `backward` accumulates into it.
    pub fn param(&self, store: &ParamStore, id: ParamId) -> Var<'_> {
        let p = store.get(id);
        self.push(p.value.clone(), Op::Leaf { param: Some(id) }, p.requires_grad)
    }

    fn record(&self, op: Op) -> Result<Var<'_>, AutodiffError> {
        let (value, requires_grad) = {
            let nodes = self.nodes.borrow();
            let value = evaluate(&op, &nodes)?;
            let requires_grad = inputs_of(&op).iter().any(|&i| nodes[i].requires_grad);
            (value, requires_grad)
        };
        Ok(self.push(value, op, requires_grad))
    }

    pub fn elementwise(&self, kind: UnaryKind, x: Var<'_>) -> Var<'_> {
        self.record(Op::Unary(kind, x.id))
            .expect("unary ops cannot fail")
    }

    pub fn binary<'t>(
        &'t self,
        kind: BinaryKind,
        a: Var<'t>,
        b: Var<'t>,
    ) -> Result<Var<'t>, AutodiffError> {
        let bc = {
            let nodes = self.nodes.borrow();
            broadcast_mode(kind, &nodes[a.id].value, &nodes[b.id].value)?
        };
        self.record(Op::Binary(kind, a.id, b.id, bc))
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols<'t>(&'t self, parts: &[Var<'t>]) -> Result<Var<'t>, AutodiffError> {
        if parts.is_empty() {
            return Err(AutodiffError::Invalid("concat of zero tensors".into()));
        }
        self.record(Op::ConcatCols(parts.iter().map(|v| v.id).collect()))
    }

    /// Verifies every recorded value against a fresh recomputation from its
    /// recorded inputs. Returns the first mismatching node, if any.
    pub fn replay_mismatch(&self) -> Option<usize> {
        let nodes = self.nodes.borrow();
        for (i, node) in nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf { .. }) {
                continue;
            }
            let fresh = match evaluate(&node.op, &nodes[..i]) {
                Ok(v) => v,
                Err(_) => return Some(i),
            };
            let same = fresh.shape() == node.value.shape()
                && fresh
                    .data()
                    .iter()
                    .zip(node.value.data())
                    .all(|(a, b)| a.to_bits() == b.to_bits());
            if !same {
                return Some(i);
            }
        }
        None
    }

    /// Reverse sweep from a scalar root; returns gradients of all leaves.
    pub fn gradients(&self, root: Var<'_>) -> Result<Gradients, AutodiffError> {
        let nodes = self.nodes.borrow();
        let root_value = &nodes[root.id].value;
        if !root_value.is_scalar() {
            return Err(AutodiffError::NonScalarRoot(root_value.shape().to_vec()));
        }
        let n = root.id + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[root.id] = Some(vec![1.0]);
        for i in (0..n).rev() {
            let node = &nodes[i];
            if matches!(node.op, Op::Leaf { .. }) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if !node.requires_grad {
                continue;
            }
            propagate(&nodes, i, &g, &mut grads);
        }
        // Only leaves carry gradient past this point.
        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    /// Runs the reverse sweep and writes parameter gradients into `store`.
    ///
    /// Every parameter that requires grad ends with a gradient; parameters the
    /// root does not reach get zeros. Repeated uses of one parameter on the
    /// tape accumulate.
    pub fn backward(
        &self,
        root: Var<'_>,
        store: &mut ParamStore,
    ) -> Result<Gradients, AutodiffError> {
        let grads = self.gradients(root)?;
        let ids: Vec<ParamId> = store.ids().collect();
        for id in ids {
            let p = store.get_mut(id);
            if p.requires_grad {
                p.grad = Some(Tensor::zeros(p.value.shape()));
            }
        }
        let nodes = self.nodes.borrow();
        for (i, node) in nodes.iter().enumerate() {
            if let Op::Leaf { param: Some(pid) } = node.op {
                if let Some(g) = &grads.grads[i] {
                    let p = store.get_mut(pid);
                    if let Some(acc) = p.grad.as_mut() {
                        for (a, b) in acc.data_mut().iter_mut().zip(g) {
                            *a += b;
                        }
                    }
                }
            }
        }
        Ok(grads)
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    fn node(&self) -> Ref<'t, Node> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id])
    }

    pub fn value(&self) -> Tensor {
        self.node().value.clone()
    }

    pub fn with_value<R>(&self, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.node().value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.node().value.shape().to_vec()
    }

    pub fn item(&self) -> f64 {
        self.node().value.data()[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.node().requires_grad
    }

    pub fn matmul(self, rhs: Var<'t>) -> Result<Var<'t>, AutodiffError> {
        self.tape.record(Op::MatMul(self.id, rhs.id))
    }

    /// `self·weight + bias`, the bias row broadcast over every row.
    pub fn affine(self, weight: Var<'t>, bias: Var<'t>) -> Result<Var<'t>, AutodiffError> {
        self.tape.record(Op::Affine(self.id, weight.id, bias.id))
    }

    pub fn add(self, rhs: Var<'t>) -> Result<Var<'t>, AutodiffError> {
        self.tape.binary(BinaryKind::Add, self, rhs)
    }

    pub fn sub(self, rhs: Var<'t>) -> Result<Var<'t>, AutodiffError> {
        self.tape.binary(BinaryKind::Sub, self, rhs)
    }

    pub fn mul(self, rhs: Var<'t>) -> Result<Var<'t>, AutodiffError> {
        self.tape.binary(BinaryKind::Mul, self, rhs)
    }

    pub fn relu(self) -> Var<'t> {
        self.tape.elementwise(UnaryKind::Relu, self)
    }

    pub fn softplus(self) -> Var<'t> {
        self.tape.elementwise(UnaryKind::Softplus { beta: 1.0 }, self)
    }

    pub fn softplus_beta(self, beta: f64) -> Var<'t> {
        self.tape.elementwise(UnaryKind::Softplus { beta }, self)
    }

    pub fn tanh(self) -> Var<'t> {
        self.tape.elementwise(UnaryKind::Tanh, self)
    }

    pub fn sin(self) -> Var<'t> {
        self.tape.elementwise(UnaryKind::Sin, self)
    }

    pub fn cos(self) -> Var<'t> {
        self.tape.elementwise(UnaryKind::Cos, self)
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.tape.elementwise(UnaryKind::Sigmoid, self)
    }

    pub fn scale(self, s: f64) -> Var<'t> {
        self.tape.elementwise(UnaryKind::Scale(s), self)
    }

    pub fn clamp(self, lo: f64, hi: f64) -> Var<'t> {
        self.tape.elementwise(UnaryKind::Clamp { lo, hi }, self)
    }

    /// Sum of all elements as a scalar.
    pub fn sum(self) -> Var<'t> {
        self.tape.record(Op::Sum(self.id)).expect("sum cannot fail")
    }

    /// Mean over rows of the per-row L1 error: `(1/n)·Σᵢ ‖predᵢ − targetᵢ‖₁`.
    ///
    /// The subgradient at an exact tie is 0.
    pub fn l1_mean(self, target: Var<'t>) -> Result<Var<'t>, AutodiffError> {
        self.tape.record(Op::L1Mean(self.id, target.id))
    }

    /// `out[i] = self[indices[i]]`, row-wise.
    pub fn gather_rows(self, indices: &[usize]) -> Result<Var<'t>, AutodiffError> {
        self.tape.record(Op::GatherRows(self.id, indices.to_vec()))
    }
}

fn inputs_of(op: &Op) -> Vec<usize> {
    match op {
        Op::Leaf { .. } => vec![],
        Op::MatMul(a, b) | Op::Binary(_, a, b, _) | Op::L1Mean(a, b) => vec![*a, *b],
        Op::Affine(x, w, b) => vec![*x, *w, *b],
        Op::Unary(_, a) | Op::Sum(a) | Op::GatherRows(a, _) => vec![*a],
        Op::ConcatCols(parts) => parts.clone(),
    }
}

fn broadcast_mode(kind: BinaryKind, a: &Tensor, b: &Tensor) -> Result<Broadcast, AutodiffError> {
    if a.shape() == b.shape() {
        return Ok(Broadcast::Same);
    }
    let b_is_row = b.shape().len() <= 1 || b.shape()[0] == 1;
    if a.shape().len() == 2 && b_is_row && b.len() == a.cols() {
        return Ok(Broadcast::Row);
    }
    let op = match kind {
        BinaryKind::Add => "add",
        BinaryKind::Sub => "sub",
        BinaryKind::Mul => "mul",
    };
    Err(AutodiffError::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    })
}

/// Beyond this magnitude `exp(-|x|) < 2⁻⁵⁴`, so `ln_1p` of it is the
/// identity and `1 + exp(-|x|)` rounds to 1.
const SOFTPLUS_TAIL: f64 = 38.0;

#[inline]
fn softplus(x: f64) -> f64 {
    if x >= SOFTPLUS_TAIL {
        x
    } else if x <= -SOFTPLUS_TAIL {
        x.exp()
    } else {
        x.max(0.0) + (-x.abs()).exp().ln_1p()
    }
}

/// `σ(βx)` from `y = softplus_β(x)` as `1 − exp(−βy)`.
#[inline]
fn softplus_slope(beta: f64, y: f64) -> f64 {
    let v = beta * y;
    if v >= SOFTPLUS_TAIL {
        1.0
    } else if v < f64::EPSILON * f64::EPSILON {
        v
    } else {
        -(-v).exp_m1()
    }
}

#[inline]
fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn unary_forward(kind: UnaryKind, x: f64) -> f64 {
    match kind {
        UnaryKind::Relu => x.max(0.0),
        UnaryKind::Softplus { beta } => softplus(beta * x) / beta,
        UnaryKind::Tanh => x.tanh(),
        UnaryKind::Sin => x.sin(),
        UnaryKind::Cos => x.cos(),
        UnaryKind::Sigmoid => logistic(x),
        UnaryKind::Scale(s) => s * x,
        UnaryKind::Clamp { lo, hi } => x.clamp(lo, hi),
    }
}

/// Local derivative given input `x` and output `y`.
fn unary_derivative(kind: UnaryKind, x: f64, y: f64) -> f64 {
    match kind {
        UnaryKind::Relu => {
            if x > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        UnaryKind::Softplus { beta } => softplus_slope(beta, y),
        UnaryKind::Tanh => 1.0 - y * y,
        UnaryKind::Sin => x.cos(),
        UnaryKind::Cos => -x.sin(),
        UnaryKind::Sigmoid => y * (1.0 - y),
        UnaryKind::Scale(s) => s,
        UnaryKind::Clamp { lo, hi } => {
            if x >= lo && x <= hi {
                1.0
            } else {
                0.0
            }
        }
    }
}

fn evaluate(op: &Op, nodes: &[Node]) -> Result<Tensor, AutodiffError> {
    match op {
        Op::Leaf { .. } => unreachable!("leaves are not evaluated"),
        Op::MatMul(a, b) => {
            let (a, b) = (&nodes[*a].value, &nodes[*b].value);
            let (m, k) = a.require_matrix("matmul")?;
            let (k2, n) = b.require_matrix("matmul")?;
            if k != k2 {
                return Err(AutodiffError::Shape {
                    op: "matmul",
                    lhs: a.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                });
            }
            let mut out = vec![0.0; m * n];
            gemm(m, k, n, a.data(), false, b.data(), false, &mut out, 0.0);
            Tensor::new(vec![m, n], out)
        }
        Op::Affine(x, w, b) => {
            let (x, w, b) = (&nodes[*x].value, &nodes[*w].value, &nodes[*b].value);
            let (m, k) = x.require_matrix("affine")?;
            let (k2, n) = w.require_matrix("affine")?;
            if k != k2 {
                return Err(AutodiffError::Shape {
                    op: "affine",
                    lhs: x.shape().to_vec(),
                    rhs: w.shape().to_vec(),
                });
            }
            if b.len() != n || (b.shape().len() == 2 && b.shape()[0] != 1) {
                return Err(AutodiffError::Shape {
                    op: "affine bias",
                    lhs: w.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                });
            }
            let mut out = Vec::with_capacity(m * n);
            for _ in 0..m {
                out.extend_from_slice(b.data());
            }
            gemm(m, k, n, x.data(), false, w.data(), false, &mut out, 1.0);
            Tensor::new(vec![m, n], out)
        }
        Op::Binary(kind, a, b, bc) => {
            let (a, b) = (&nodes[*a].value, &nodes[*b].value);
            let f = match kind {
                BinaryKind::Add => |x: f64, y: f64| x + y,
                BinaryKind::Sub => |x: f64, y: f64| x - y,
                BinaryKind::Mul => |x: f64, y: f64| x * y,
            };
            let data = match bc {
                Broadcast::Same => a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
                Broadcast::Row => {
                    let c = a.cols();
                    a.data()
                        .chunks_exact(c)
                        .flat_map(|row| row.iter().zip(b.data()).map(|(&x, &y)| f(x, y)))
                        .collect()
                }
            };
            Tensor::new(a.shape().to_vec(), data)
        }
        Op::Unary(kind, a) => Ok(nodes[*a].value.map(|x| unary_forward(*kind, x))),
        Op::Sum(a) => Ok(Tensor::scalar(nodes[*a].value.data().iter().sum())),
        Op::L1Mean(p, t) => {
            let (p, t) = (&nodes[*p].value, &nodes[*t].value);
            if p.shape() != t.shape() {
                return Err(AutodiffError::Shape {
                    op: "l1_mean",
                    lhs: p.shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            let rows = p.rows();
            if p.is_empty() || rows == 0 {
                return Err(AutodiffError::EmptyBatch("l1_mean"));
            }
            let total: f64 = p.data().iter().zip(t.data()).map(|(a, b)| (a - b).abs()).sum();
            Ok(Tensor::scalar(total / rows as f64))
        }
        Op::ConcatCols(parts) => {
            let tensors: Vec<&Tensor> = parts.iter().map(|&i| &nodes[i].value).collect();
            let rows = tensors[0].require_matrix("concat_cols")?.0;
            for t in &tensors {
                let (r, _) = t.require_matrix("concat_cols")?;
                if r != rows {
                    return Err(AutodiffError::Shape {
                        op: "concat_cols",
                        lhs: tensors[0].shape().to_vec(),
                        rhs: t.shape().to_vec(),
                    });
                }
            }
            let total_cols: usize = tensors.iter().map(|t| t.cols()).sum();
            let mut data = Vec::with_capacity(rows * total_cols);
            for r in 0..rows {
                for t in &tensors {
                    data.extend_from_slice(t.row(r));
                }
            }
            Tensor::new(vec![rows, total_cols], data)
        }
        Op::GatherRows(a, idx) => {
            let a = &nodes[*a].value;
            let (rows, cols) = a.require_matrix("gather_rows")?;
            let mut data = Vec::with_capacity(idx.len() * cols);
            for &i in idx {
                if i >= rows {
                    return Err(AutodiffError::Invalid(format!(
                        "gather index {i} out of range for {rows} rows"
                    )));
                }
                data.extend_from_slice(a.row(i));
            }
            Tensor::new(vec![idx.len(), cols], data)
        }
    }
}

fn accumulate(
    nodes: &[Node],
    grads: &mut [Option<Vec<f64>>],
    id: usize,
    f: impl FnOnce(&mut [f64]),
) {
    if !nodes[id].requires_grad {
        return;
    }
    let slot = grads[id].get_or_insert_with(|| vec![0.0; nodes[id].value.len()]);
    f(slot);
}

fn propagate(nodes: &[Node], i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let node = &nodes[i];
    match &node.op {
        Op::Leaf { .. } => {}
        Op::MatMul(a, b) => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            let (m, k) = (av.shape()[0], av.shape()[1]);
            let n = bv.shape()[1];
            // dA = dC·Bᵀ, dB = Aᵀ·dC
            accumulate(nodes, grads, *a, |ga| gemm(m, n, k, g, false, bv.data(), true, ga, 1.0));
            accumulate(nodes, grads, *b, |gb| gemm(k, m, n, av.data(), true, g, false, gb, 1.0));
        }
        Op::Affine(x, w, b) => {
            let (xv, wv) = (&nodes[*x].value, &nodes[*w].value);
            let (m, k) = (xv.shape()[0], xv.shape()[1]);
            let n = wv.shape()[1];
            accumulate(nodes, grads, *x, |gx| gemm(m, n, k, g, false, wv.data(), true, gx, 1.0));
            accumulate(nodes, grads, *w, |gw| gemm(k, m, n, xv.data(), true, g, false, gw, 1.0));
            accumulate(nodes, grads, *b, |gb| {
                for row in g.chunks_exact(n) {
                    gb.iter_mut().zip(row).for_each(|(acc, y)| *acc += y);
                }
            });
        }
        Op::Binary(kind, a, b, bc) => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            let cols = av.cols();
            match kind {
                BinaryKind::Add | BinaryKind::Sub => {
                    let sign = if *kind == BinaryKind::Add { 1.0 } else { -1.0 };
                    accumulate(nodes, grads, *a, |ga| {
                        ga.iter_mut().zip(g).for_each(|(x, y)| *x += y)
                    });
                    accumulate(nodes, grads, *b, |gb| match bc {
                        Broadcast::Same => gb.iter_mut().zip(g).for_each(|(x, y)| *x += sign * y),
                        Broadcast::Row => {
                            for row in g.chunks_exact(cols) {
                                gb.iter_mut().zip(row).for_each(|(x, y)| *x += sign * y);
                            }
                        }
                    });
                }
                BinaryKind::Mul => {
                    accumulate(nodes, grads, *a, |ga| match bc {
                        Broadcast::Same => ga
                            .iter_mut()
                            .zip(g.iter().zip(bv.data()))
                            .for_each(|(x, (y, w))| *x += y * w),
                        Broadcast::Row => {
                            for (ga_row, g_row) in ga.chunks_exact_mut(cols).zip(g.chunks_exact(cols)) {
                                for ((x, y), w) in ga_row.iter_mut().zip(g_row).zip(bv.data()) {
                                    *x += y * w;
                                }
                            }
                        }
                    });
                    accumulate(nodes, grads, *b, |gb| match bc {
                        Broadcast::Same => gb
                            .iter_mut()
                            .zip(g.iter().zip(av.data()))
                            .for_each(|(x, (y, w))| *x += y * w),
                        Broadcast::Row => {
                            for (g_row, a_row) in g.chunks_exact(cols).zip(av.data().chunks_exact(cols)) {
                                for ((x, y), w) in gb.iter_mut().zip(g_row).zip(a_row) {
                                    *x += y * w;
                                }
                            }
                        }
                    });
                }
            }
        }
        Op::Unary(kind, a) => {
            let (xv, yv) = (nodes[*a].value.data(), node.value.data());
            accumulate(nodes, grads, *a, |ga| {
                for (((acc, gi), &x), &y) in ga.iter_mut().zip(g).zip(xv).zip(yv) {
                    *acc += gi * unary_derivative(*kind, x, y);
                }
            });
        }
        Op::Sum(a) => {
            let s = g[0];
            accumulate(nodes, grads, *a, |ga| ga.iter_mut().for_each(|x| *x += s));
        }
        Op::L1Mean(p, t) => {
            let (pv, tv) = (&nodes[*p].value, &nodes[*t].value);
            let scale = g[0] / pv.rows() as f64;
            let sign = |a: f64, b: f64| {
                let d = a - b;
                if d > 0.0 {
                    1.0
                } else if d < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            };
            accumulate(nodes, grads, *p, |gp| {
                for ((acc, &a), &b) in gp.iter_mut().zip(pv.data()).zip(tv.data()) {
                    *acc += scale * sign(a, b);
                }
            });
            accumulate(nodes, grads, *t, |gt| {
                for ((acc, &a), &b) in gt.iter_mut().zip(pv.data()).zip(tv.data()) {
                    *acc -= scale * sign(a, b);
                }
            });
        }
        Op::ConcatCols(parts) => {
            let total = node.value.cols();
            let mut offset = 0;
            for &part in parts {
                let c = nodes[part].value.cols();
                accumulate(nodes, grads, part, |gp| {
                    for (dst, src) in gp.chunks_exact_mut(c).zip(g.chunks_exact(total)) {
                        dst.iter_mut()
                            .zip(&src[offset..offset + c])
                            .for_each(|(x, y)| *x += y);
                    }
                });
                offset += c;
            }
        }
        Op::GatherRows(a, idx) => {
            let cols = nodes[*a].value.cols();
            accumulate(nodes, grads, *a, |ga| {
                for (r, &src) in idx.iter().enumerate() {
                    let dst = &mut ga[src * cols..(src + 1) * cols];
                    dst.iter_mut()
                        .zip(&g[r * cols..(r + 1) * cols])
                        .for_each(|(x, y)| *x += y);
                }
            });
        }
    }
}
