use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use super::kernels::gemm;
use super::{ParamId, ParamStore, Real, Tensor};
use crate::error::{Error, Result};

/// Records a forward computation so it can be differentiated afterwards.
///
/// Nodes are appended in evaluation order, which is already a topological
/// order: the reverse sweep walks the node list backwards and visits every
/// node once, after all of its consumers.
pub struct Tape<F: Real> {
    nodes: RefCell<Vec<Node<F>>>,
    params: RefCell<HashMap<ParamId, usize>>,
}

struct Node<F> {
    value: Arc<Tensor<F>>,
    op: Op<F>,
    requires_grad: bool,
}

enum Op<F> {
    Leaf,
    Param(ParamId),
    MatMul {
        a: usize,
        b: usize,
        ta: bool,
        tb: bool,
    },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    MulRows(usize, usize),
    Affine(usize, F),
    Sigmoid(usize),
    Relu(usize),
    Log(usize, F),
    Softmax {
        a: usize,
        mask: Option<Arc<[bool]>>,
        scale: Option<usize>,
        row_min: Vec<(usize, F)>,
    },
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        eps: F,
    },
    Gather(usize, Vec<usize>),
    SliceRows(usize, usize),
    SliceCols(usize, usize),
    ConcatRows(Vec<usize>),
    ConcatCols(Vec<usize>),
    Transpose(usize),
    Sum(usize),
    Mean(usize),
    Pick(usize, Vec<usize>),
    Reshape(usize),
}

/// A handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, F: Real> {
    tape: &'t Tape<F>,
    id: usize,
}

impl<F: Real> fmt::Debug for Var<'_, F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{} {:?}", self.id, self.value())
    }
}

/// Gradients produced by one reverse sweep.
pub struct Gradients<F> {
    grads: Vec<Option<Tensor<F>>>,
    params: Vec<(ParamId, usize)>,
}

impl<F: Real> Gradients<F> {
    /// Gradient of `var`, or `None` when it does not influence the loss.
    pub fn get(&self, var: Var<'_, F>) -> Option<&Tensor<F>> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    /// Gradient of `var`, zero-filled when it does not influence the loss.
    pub fn get_or_zeros(&self, var: Var<'_, F>) -> Tensor<F> {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(var.value().shape()))
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<F>> {
        self.params
            .iter()
            .find(|(p, _)| *p == id)
            .and_then(|(_, node)| self.grads[*node].as_ref())
    }

    /// Parameter gradients reached by the sweep.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor<F>)> {
        self.params
            .iter()
            .filter_map(|(p, node)| self.grads[*node].as_ref().map(|g| (*p, g)))
    }
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

fn is_suffix(small: &[usize], big: &[usize]) -> bool {
    small.len() <= big.len() && big[big.len() - small.len()..] == *small
}

fn stable_sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            params: RefCell::new(HashMap::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<F>, op: Op<F>, requires_grad: bool) -> Var<'_, F> {
        self.push_shared(Arc::new(value), op, requires_grad)
    }

    fn push_shared(&self, value: Arc<Tensor<F>>, op: Op<F>, requires_grad: bool) -> Var<'_, F> {
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

    fn value_of(&self, id: usize) -> Arc<Tensor<F>> {
        Arc::clone(&self.nodes.borrow()[id].value)
    }

    fn grad_flag(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    /// A value that never receives a gradient.
    pub fn constant(&self, value: Tensor<F>) -> Var<'_, F> {
        self.push(value, Op::Leaf, false)
    }

    /// A free leaf that receives a gradient.
    pub fn leaf(&self, value: Tensor<F>) -> Var<'_, F> {
        self.push(value, Op::Leaf, true)
    }

    /// Loads a parameter; repeated loads of the same id return the same node.
    pub fn param(&self, store: &ParamStore<F>, id: ParamId) -> Var<'_, F> {
        if let Some(&node) = self.params.borrow().get(&id) {
            return Var { tape: self, id: node };
        }
        let var = self.push_shared(store.shared(id), Op::Param(id), true);
        self.params.borrow_mut().insert(id, var.id);
        var
    }

    /// Same value as `var`, cut off from the gradient flow.
    pub fn detach(&self, var: Var<'_, F>) -> Var<'_, F> {
        self.push_shared(self.value_of(var.id), Op::Leaf, false)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_, F>) -> Result<Gradients<F>> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<F>>> = (0..nodes.len()).map(|_| None).collect();
        let mut params = Vec::new();
        grads[loss.id] = Some(Tensor::full(root.value.shape(), F::one()));
        for i in (0..=loss.id).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            if node.requires_grad {
                if let Op::Param(p) = node.op {
                    params.push((p, i));
                }
                propagate(&nodes, i, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        // Nodes that do not require a gradient carry no meaningful one.
        for (i, node) in nodes.iter().enumerate() {
            if !node.requires_grad {
                grads[i] = None;
            }
        }
        Ok(Gradients { grads, params })
    }
}

/// Zero-initialised gradient slot for node `id`, or `None` if it takes no gradient.
fn slot<'g, F: Real>(
    nodes: &[Node<F>],
    grads: &'g mut [Option<Tensor<F>>],
    id: usize,
) -> Option<&'g mut [F]> {
    if !nodes[id].requires_grad {
        return None;
    }
    let shape = nodes[id].value.shape();
    Some(
        grads[id]
            .get_or_insert_with(|| Tensor::zeros(shape))
            .data_mut(),
    )
}

fn propagate<F: Real>(nodes: &[Node<F>], i: usize, g: &Tensor<F>, grads: &mut [Option<Tensor<F>>]) {
    let out = &nodes[i].value;
    let gd = g.data();
    match &nodes[i].op {
        Op::Leaf | Op::Param(_) => {}
        Op::MatMul { a, b, ta, tb } => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            let (m, n) = (out.shape()[0], out.shape()[1]);
            let k = if *ta { av.shape()[0] } else { av.shape()[1] };
            if let Some(da) = slot(nodes, grads, *a) {
                match (*ta, *tb) {
                    (false, false) => gemm(false, true, m, k, n, gd, bv.data(), da),
                    (false, true) => gemm(false, false, m, k, n, gd, bv.data(), da),
                    (true, false) => gemm(false, true, k, m, n, bv.data(), gd, da),
                    (true, true) => gemm(true, true, k, m, n, bv.data(), gd, da),
                }
            }
            if let Some(db) = slot(nodes, grads, *b) {
                match (*ta, *tb) {
                    (false, false) => gemm(true, false, k, n, m, av.data(), gd, db),
                    (true, false) => gemm(false, false, k, n, m, av.data(), gd, db),
                    (false, true) => gemm(true, false, n, k, m, gd, av.data(), db),
                    (true, true) => gemm(true, true, n, k, m, gd, av.data(), db),
                }
            }
        }
        Op::Add(a, b) | Op::Sub(a, b) => {
            let sign = if matches!(nodes[i].op, Op::Sub(..)) {
                -F::one()
            } else {
                F::one()
            };
            if let Some(da) = slot(nodes, grads, *a) {
                for (x, &y) in da.iter_mut().zip(gd) {
                    *x += y;
                }
            }
            if let Some(db) = slot(nodes, grads, *b) {
                let nb = db.len();
                for (j, &y) in gd.iter().enumerate() {
                    db[j % nb] += sign * y;
                }
            }
        }
        Op::Mul(a, b) => {
            let (av, bv) = (nodes[*a].value.data(), nodes[*b].value.data());
            let nb = bv.len();
            if let Some(da) = slot(nodes, grads, *a) {
                for (j, x) in da.iter_mut().enumerate() {
                    *x += gd[j] * bv[j % nb];
                }
            }
            if let Some(db) = slot(nodes, grads, *b) {
                for (j, &y) in gd.iter().enumerate() {
                    db[j % nb] += y * av[j];
                }
            }
        }
        Op::MulRows(a, v) => {
            let (av, vv) = (&nodes[*a].value, nodes[*v].value.data());
            let c = av.cols();
            if let Some(da) = slot(nodes, grads, *a) {
                for (j, x) in da.iter_mut().enumerate() {
                    *x += gd[j] * vv[j / c];
                }
            }
            if let Some(dv) = slot(nodes, grads, *v) {
                for (j, &y) in gd.iter().enumerate() {
                    dv[j / c] += y * av.data()[j];
                }
            }
        }
        Op::Affine(a, scale) => {
            if let Some(da) = slot(nodes, grads, *a) {
                for (x, &y) in da.iter_mut().zip(gd) {
                    *x += *scale * y;
                }
            }
        }
        Op::Sigmoid(a) => {
            if let Some(da) = slot(nodes, grads, *a) {
                for ((x, &y), &s) in da.iter_mut().zip(gd).zip(out.data()) {
                    *x += y * s * (F::one() - s);
                }
            }
        }
        Op::Relu(a) => {
            let av = nodes[*a].value.data();
            if let Some(da) = slot(nodes, grads, *a) {
                for (j, x) in da.iter_mut().enumerate() {
                    if av[j] > F::zero() {
                        *x += gd[j];
                    }
                }
            }
        }
        Op::Log(a, floor) => {
            let av = nodes[*a].value.data();
            if let Some(da) = slot(nodes, grads, *a) {
                for (j, x) in da.iter_mut().enumerate() {
                    if av[j] > *floor {
                        *x += gd[j] / av[j];
                    }
                }
            }
        }
        Op::Softmax {
            a,
            mask,
            scale,
            row_min,
        } => {
            let ev = nodes[*a].value.data();
            let y = out.data();
            let c = out.cols();
            let rows = out.rows();
            let sv = scale.map(|s| Arc::clone(&nodes[s].value));
            let mut gz = vec![F::zero(); c];
            let mut ge_rows = vec![F::zero(); y.len()];
            let mut gs = vec![F::zero(); c];
            let live = |j: usize| mask.as_ref().is_none_or(|m| !m[j]);
            for r in 0..rows {
                let o = r * c;
                let mut dot = F::zero();
                for j in 0..c {
                    if live(o + j) {
                        dot += y[o + j] * gd[o + j];
                    }
                }
                for j in 0..c {
                    gz[j] = if live(o + j) {
                        y[o + j] * (gd[o + j] - dot)
                    } else {
                        F::zero()
                    };
                }
                match &sv {
                    None => ge_rows[o..o + c].copy_from_slice(&gz),
                    Some(s) => {
                        let s = s.data();
                        let (argmin, min) = row_min[r];
                        let mut total = F::zero();
                        for j in 0..c {
                            let t = gz[j] * s[j];
                            ge_rows[o + j] = t;
                            total += t;
                            if live(o + j) {
                                gs[j] += gz[j] * (ev[o + j] - min);
                            }
                        }
                        ge_rows[o + argmin] -= total;
                    }
                }
            }
            if let Some(da) = slot(nodes, grads, *a) {
                for (x, &y) in da.iter_mut().zip(&ge_rows) {
                    *x += y;
                }
            }
            if let Some(s) = scale {
                if let Some(ds) = slot(nodes, grads, *s) {
                    for (x, &y) in ds.iter_mut().zip(&gs) {
                        *x += y;
                    }
                }
            }
        }
        Op::LayerNorm { x, gain, bias, eps } => {
            let xv = &nodes[*x].value;
            let gv = nodes[*gain].value.data();
            let c = xv.cols();
            let n = F::of(c as f64);
            let mut dx = vec![F::zero(); xv.len()];
            let mut dg = vec![F::zero(); c];
            let mut db = vec![F::zero(); c];
            let mut xhat = vec![F::zero(); c];
            let mut gxhat = vec![F::zero(); c];
            for r in 0..xv.rows() {
                let row = xv.row(r);
                let (mean, rstd) = row_stats(row, *eps);
                let grow = &gd[r * c..(r + 1) * c];
                let mut sum_g = F::zero();
                let mut sum_gx = F::zero();
                for j in 0..c {
                    xhat[j] = (row[j] - mean) * rstd;
                    gxhat[j] = grow[j] * gv[j];
                    sum_g += gxhat[j];
                    sum_gx += gxhat[j] * xhat[j];
                    dg[j] += grow[j] * xhat[j];
                    db[j] += grow[j];
                }
                for j in 0..c {
                    dx[r * c + j] = rstd * (gxhat[j] - sum_g / n - xhat[j] * sum_gx / n);
                }
            }
            for (id, buf) in [(*x, dx), (*gain, dg), (*bias, db)] {
                if let Some(d) = slot(nodes, grads, id) {
                    for (t, v) in d.iter_mut().zip(buf) {
                        *t += v;
                    }
                }
            }
        }
        Op::Gather(table, idx) => {
            let d = out.cols();
            if let Some(dt) = slot(nodes, grads, *table) {
                for (r, &ix) in idx.iter().enumerate() {
                    for j in 0..d {
                        dt[ix * d + j] += gd[r * d + j];
                    }
                }
            }
        }
        Op::SliceRows(a, start) => {
            let inner: usize = out.shape()[1..].iter().product();
            if let Some(da) = slot(nodes, grads, *a) {
                let o = start * inner;
                for (x, &y) in da[o..o + gd.len()].iter_mut().zip(gd) {
                    *x += y;
                }
            }
        }
        Op::SliceCols(a, start) => {
            let c_in = nodes[*a].value.cols();
            let c_out = out.cols();
            if let Some(da) = slot(nodes, grads, *a) {
                for r in 0..out.rows() {
                    for j in 0..c_out {
                        da[r * c_in + start + j] += gd[r * c_out + j];
                    }
                }
            }
        }
        Op::ConcatRows(parts) => {
            let mut o = 0;
            for &p in parts {
                let n = nodes[p].value.len();
                if let Some(dp) = slot(nodes, grads, p) {
                    for (x, &y) in dp.iter_mut().zip(&gd[o..o + n]) {
                        *x += y;
                    }
                }
                o += n;
            }
        }
        Op::ConcatCols(parts) => {
            let c_out = out.cols();
            let mut off = 0;
            for &p in parts {
                let c = nodes[p].value.cols();
                if let Some(dp) = slot(nodes, grads, p) {
                    for r in 0..out.rows() {
                        for j in 0..c {
                            dp[r * c + j] += gd[r * c_out + off + j];
                        }
                    }
                }
                off += c;
            }
        }
        Op::Transpose(a) => {
            let (r, c) = (out.shape()[0], out.shape()[1]);
            if let Some(da) = slot(nodes, grads, *a) {
                for i in 0..r {
                    for j in 0..c {
                        da[j * r + i] += gd[i * c + j];
                    }
                }
            }
        }
        Op::Sum(a) | Op::Mean(a) => {
            let n = nodes[*a].value.len();
            let k = if matches!(nodes[i].op, Op::Mean(_)) {
                gd[0] / F::of(n as f64)
            } else {
                gd[0]
            };
            if let Some(da) = slot(nodes, grads, *a) {
                for x in da.iter_mut() {
                    *x += k;
                }
            }
        }
        Op::Pick(a, idx) => {
            let c = nodes[*a].value.cols();
            if let Some(da) = slot(nodes, grads, *a) {
                for (r, &ix) in idx.iter().enumerate() {
                    da[r * c + ix] += gd[r];
                }
            }
        }
        Op::Reshape(a) => {
            if let Some(da) = slot(nodes, grads, *a) {
                for (x, &y) in da.iter_mut().zip(gd) {
                    *x += y;
                }
            }
        }
    }
}

fn row_stats<F: Real>(row: &[F], eps: F) -> (F, F) {
    let n = F::of(row.len() as f64);
    let mean = row.iter().copied().sum::<F>() / n;
    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / n;
    (mean, F::one() / (var + eps).sqrt())
}

impl<'t, F: Real> Var<'t, F> {
    pub fn tape(&self) -> &'t Tape<F> {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Arc<Tensor<F>> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.grad_flag(&[self.id])
    }

    fn same_tape(&self, other: &Var<'t, F>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "vars recorded on different tapes"
        );
    }

    fn unary(&self, value: Tensor<F>, op: Op<F>) -> Var<'t, F> {
        let rg = self.requires_grad();
        self.tape.push(value, op, rg)
    }

    fn binary(&self, other: &Var<'t, F>, value: Tensor<F>, op: Op<F>) -> Var<'t, F> {
        self.same_tape(other);
        let rg = self.tape.grad_flag(&[self.id, other.id]);
        self.tape.push(value, op, rg)
    }

    fn mm(self, other: Var<'t, F>, ta: bool, tb: bool) -> Result<Var<'t, F>> {
        let (a, b) = (self.value(), other.value());
        if a.rank() != 2 || b.rank() != 2 {
            return Err(Error::shape(format!(
                "matmul needs matrices, got {:?} and {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let (m, ka) = if ta {
            (a.shape()[1], a.shape()[0])
        } else {
            (a.shape()[0], a.shape()[1])
        };
        let (kb, n) = if tb {
            (b.shape()[1], b.shape()[0])
        } else {
            (b.shape()[0], b.shape()[1])
        };
        if ka != kb {
            return Err(Error::shape(format!(
                "matmul inner dimensions differ: {:?}{} x {:?}{}",
                a.shape(),
                if ta { "^T" } else { "" },
                b.shape(),
                if tb { "^T" } else { "" }
            )));
        }
        let mut c = vec![F::zero(); m * n];
        gemm(ta, tb, m, n, ka, a.data(), b.data(), &mut c);
        let value = Tensor::new(&[m, n], c)?;
        Ok(self.binary(
            &other,
            value,
            Op::MatMul {
                a: self.id,
                b: other.id,
                ta,
                tb,
            },
        ))
    }

    /// `self · other`.
    pub fn matmul(self, other: Var<'t, F>) -> Result<Var<'t, F>> {
        self.mm(other, false, false)
    }

    /// `self · otherᵀ`.
    pub fn matmul_nt(self, other: Var<'t, F>) -> Result<Var<'t, F>> {
        self.mm(other, false, true)
    }

    /// `selfᵀ · other`.
    pub fn matmul_tn(self, other: Var<'t, F>) -> Result<Var<'t, F>> {
        self.mm(other, true, false)
    }

    fn broadcast(
        self,
        other: Var<'t, F>,
        name: &str,
        f: impl Fn(F, F) -> F,
    ) -> Result<(Tensor<F>, Var<'t, F>, Var<'t, F>)> {
        let (mut a, mut b) = (self, other);
        let (mut av, mut bv) = (a.value(), b.value());
        if !is_suffix(bv.shape(), av.shape()) {
            if name != "sub" && is_suffix(av.shape(), bv.shape()) {
                std::mem::swap(&mut a, &mut b);
                std::mem::swap(&mut av, &mut bv);
            } else {
                return Err(Error::shape(format!(
                    "cannot broadcast {:?} against {:?} in {name}",
                    bv.shape(),
                    av.shape()
                )));
            }
        }
        let nb = bv.len().max(1);
        let data = av
            .data()
            .iter()
            .enumerate()
            .map(|(j, &x)| f(x, bv.data()[j % nb]))
            .collect();
        Ok((Tensor::new(av.shape(), data)?, a, b))
    }

    /// Elementwise sum; the smaller operand may repeat over leading axes.
    pub fn add(self, other: Var<'t, F>) -> Result<Var<'t, F>> {
        let (v, a, b) = self.broadcast(other, "add", |x, y| x + y)?;
        Ok(a.binary(&b, v, Op::Add(a.id, b.id)))
    }

    /// Elementwise difference; `other` may repeat over leading axes.
    pub fn sub(self, other: Var<'t, F>) -> Result<Var<'t, F>> {
        let (v, a, b) = self.broadcast(other, "sub", |x, y| x - y)?;
        Ok(a.binary(&b, v, Op::Sub(a.id, b.id)))
    }

    /// Elementwise product; the smaller operand may repeat over leading axes.
    pub fn mul(self, other: Var<'t, F>) -> Result<Var<'t, F>> {
        let (v, a, b) = self.broadcast(other, "mul", |x, y| x * y)?;
        Ok(a.binary(&b, v, Op::Mul(a.id, b.id)))
    }

    /// Scales row `r` (all but the last axis) by `factors[r]`.
    pub fn mul_rows(self, factors: Var<'t, F>) -> Result<Var<'t, F>> {
        let (a, v) = (self.value(), factors.value());
        if v.len() != a.rows() {
            return Err(Error::shape(format!(
                "mul_rows: {} factors for {} rows",
                v.len(),
                a.rows()
            )));
        }
        let c = a.cols();
        let data = a
            .data()
            .iter()
            .enumerate()
            .map(|(j, &x)| x * v.data()[j / c])
            .collect();
        let value = Tensor::new(a.shape(), data)?;
        Ok(self.binary(&factors, value, Op::MulRows(self.id, factors.id)))
    }

    /// `scale * self + shift`.
    pub fn affine(self, scale: f64, shift: f64) -> Var<'t, F> {
        let (k, s) = (F::of(scale), F::of(shift));
        let a = self.value();
        let data = a.data().iter().map(|&x| k * x + s).collect();
        let value = Tensor {
            shape: a.shape().to_vec(),
            data,
        };
        self.unary(value, Op::Affine(self.id, k))
    }

    pub fn scale(self, k: f64) -> Var<'t, F> {
        self.affine(k, 0.0)
    }

    pub fn sigmoid(self) -> Var<'t, F> {
        let a = self.value();
        let data = a.data().iter().map(|&x| stable_sigmoid(x)).collect();
        let value = Tensor {
            shape: a.shape().to_vec(),
            data,
        };
        self.unary(value, Op::Sigmoid(self.id))
    }

    pub fn relu(self) -> Var<'t, F> {
        let a = self.value();
        let data = a.data().iter().map(|&x| x.max(F::zero())).collect();
        let value = Tensor {
            shape: a.shape().to_vec(),
            data,
        };
        self.unary(value, Op::Relu(self.id))
    }

    /// Natural log of `max(self, floor)`; no gradient flows through clamped entries.
    pub fn log_floor(self, floor: f64) -> Result<Var<'t, F>> {
        let a = self.value();
        let fl = F::of(floor);
        if a.data().iter().any(|x| x.is_nan()) {
            return Err(Error::Numeric("log of NaN".into()));
        }
        let data = a.data().iter().map(|&x| x.max(fl).ln()).collect();
        let value = Tensor {
            shape: a.shape().to_vec(),
            data,
        };
        Ok(self.unary(value, Op::Log(self.id, fl)))
    }

    pub fn log(self) -> Result<Var<'t, F>> {
        self.log_floor(0.0)
    }

    /// Softmax over the last axis.
    pub fn softmax(self) -> Result<Var<'t, F>> {
        self.softmax_masked(None, None)
    }

    /// Softmax over the last axis restricted to entries whose `mask` flag is
    /// false; excluded entries get weight zero.
    ///
    /// With `scale` (one factor per column) each row is first shifted by its
    /// minimum over live entries and multiplied by the factors, which keeps the
    /// scaled energies non-negative. When every factor is exactly one the
    /// shift is skipped: softmax is shift invariant, and the result is then
    /// bitwise identical to the unscaled softmax.
    pub fn softmax_masked(
        self,
        mask: Option<Arc<[bool]>>,
        scale: Option<Var<'t, F>>,
    ) -> Result<Var<'t, F>> {
        let e = self.value();
        let c = e.cols();
        if let Some(m) = &mask {
            if m.len() != e.len() {
                return Err(Error::shape(format!(
                    "softmax mask has {} entries for {} values",
                    m.len(),
                    e.len()
                )));
            }
        }
        let sv = match scale {
            Some(s) => {
                self.same_tape(&s);
                let v = s.value();
                if v.len() != c {
                    return Err(Error::shape(format!(
                        "scale vector has {} entries for {} columns",
                        v.len(),
                        c
                    )));
                }
                Some(v)
            }
            None => None,
        };
        let uniform = sv
            .as_ref()
            .is_some_and(|s| s.data().iter().all(|&x| x == F::one()));
        let live = |j: usize| mask.as_ref().is_none_or(|m| !m[j]);
        let mut out = vec![F::zero(); e.len()];
        let mut row_min = Vec::new();
        let mut z = vec![F::zero(); c];
        for r in 0..e.rows() {
            let o = r * c;
            let row = &e.data()[o..o + c];
            if row.iter().any(|x| x.is_nan()) {
                return Err(Error::Numeric("softmax input contains NaN".into()));
            }
            let mut min: Option<(usize, F)> = None;
            for (j, &x) in row.iter().enumerate() {
                if live(o + j) && min.is_none_or(|(_, m)| x < m) {
                    min = Some((j, x));
                }
            }
            let Some((argmin, minv)) = min else {
                return Err(Error::contract(format!(
                    "softmax row {r} has no unmasked entries"
                )));
            };
            match &sv {
                Some(s) if !uniform => {
                    for j in 0..c {
                        z[j] = (row[j] - minv) * s.data()[j];
                    }
                }
                _ => z.copy_from_slice(row),
            }
            if sv.is_some() {
                row_min.push((argmin, minv));
            }
            let mut mx = F::neg_infinity();
            for j in 0..c {
                if live(o + j) && z[j] > mx {
                    mx = z[j];
                }
            }
            let mut sum = F::zero();
            for j in 0..c {
                if live(o + j) {
                    let w = (z[j] - mx).exp();
                    out[o + j] = w;
                    sum += w;
                }
            }
            for v in &mut out[o..o + c] {
                *v /= sum;
            }
        }
        let value = Tensor::new(e.shape(), out)?;
        let op = Op::Softmax {
            a: self.id,
            mask,
            scale: scale.map(|s| s.id),
            row_min,
        };
        Ok(match scale {
            Some(s) => self.binary(&s, value, op),
            None => self.unary(value, op),
        })
    }

    /// Row-wise layer normalisation over the last axis followed by `gain` and `bias`.
    pub fn layer_norm(self, gain: Var<'t, F>, bias: Var<'t, F>, eps: f64) -> Result<Var<'t, F>> {
        let x = self.value();
        let c = x.cols();
        let (g, b) = (gain.value(), bias.value());
        if g.len() != c || b.len() != c {
            return Err(Error::shape(format!(
                "layer_norm over {c} columns with gain {:?} and bias {:?}",
                g.shape(),
                b.shape()
            )));
        }
        let eps = F::of(eps);
        let mut out = vec![F::zero(); x.len()];
        for r in 0..x.rows() {
            let row = x.row(r);
            let (mean, rstd) = row_stats(row, eps);
            for j in 0..c {
                out[r * c + j] = (row[j] - mean) * rstd * g.data()[j] + b.data()[j];
            }
        }
        let value = Tensor::new(x.shape(), out)?;
        let rg = self.tape.grad_flag(&[self.id, gain.id, bias.id]);
        Ok(self.tape.push(
            value,
            Op::LayerNorm {
                x: self.id,
                gain: gain.id,
                bias: bias.id,
                eps,
            },
            rg,
        ))
    }

    /// Gathers rows of a `[V, d]` table.
    pub fn gather_rows(self, indices: &[usize]) -> Result<Var<'t, F>> {
        let t = self.value();
        if t.rank() != 2 {
            return Err(Error::shape("gather_rows needs a matrix table"));
        }
        let (v, d) = (t.shape()[0], t.shape()[1]);
        let mut data = Vec::with_capacity(indices.len() * d);
        for &ix in indices {
            if ix >= v {
                return Err(Error::Index { index: ix, size: v });
            }
            data.extend_from_slice(t.row(ix));
        }
        let value = Tensor::new(&[indices.len(), d], data)?;
        Ok(self.unary(value, Op::Gather(self.id, indices.to_vec())))
    }

    /// Rows `start..start + len` along the first axis.
    pub fn slice_rows(self, start: usize, len: usize) -> Result<Var<'t, F>> {
        let a = self.value();
        if a.rank() == 0 || start + len > a.shape()[0] {
            return Err(Error::shape(format!(
                "slice_rows {start}..{} of {:?}",
                start + len,
                a.shape()
            )));
        }
        let inner: usize = a.shape()[1..].iter().product();
        let mut shape = a.shape().to_vec();
        shape[0] = len;
        let data = a.data()[start * inner..(start + len) * inner].to_vec();
        Ok(self.unary(Tensor::new(&shape, data)?, Op::SliceRows(self.id, start)))
    }

    /// Columns `start..start + len` along the last axis.
    pub fn slice_cols(self, start: usize, len: usize) -> Result<Var<'t, F>> {
        let a = self.value();
        let c = a.cols();
        if a.rank() == 0 || start + len > c {
            return Err(Error::shape(format!(
                "slice_cols {start}..{} of {:?}",
                start + len,
                a.shape()
            )));
        }
        let mut data = Vec::with_capacity(a.rows() * len);
        for r in 0..a.rows() {
            data.extend_from_slice(&a.row(r)[start..start + len]);
        }
        let mut shape = a.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        Ok(self.unary(Tensor::new(&shape, data)?, Op::SliceCols(self.id, start)))
    }

    pub fn transpose(self) -> Result<Var<'t, F>> {
        let a = self.value();
        if a.rank() != 2 {
            return Err(Error::shape("transpose needs a matrix"));
        }
        let (r, c) = (a.shape()[0], a.shape()[1]);
        let mut data = vec![F::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = a.data()[i * c + j];
            }
        }
        Ok(self.unary(Tensor::new(&[c, r], data)?, Op::Transpose(self.id)))
    }

    pub fn sum(self) -> Var<'t, F> {
        let v = Tensor::scalar(self.value().sum());
        self.unary(v, Op::Sum(self.id))
    }

    pub fn mean(self) -> Var<'t, F> {
        let a = self.value();
        let v = Tensor::scalar(a.sum() / F::of(a.len() as f64));
        self.unary(v, Op::Mean(self.id))
    }

    /// `out[r] = self[r, indices[r]]` for a matrix.
    pub fn pick(self, indices: &[usize]) -> Result<Var<'t, F>> {
        let a = self.value();
        if a.rank() != 2 || indices.len() != a.shape()[0] {
            return Err(Error::shape(format!(
                "pick {} indices from {:?}",
                indices.len(),
                a.shape()
            )));
        }
        let c = a.cols();
        let mut data = Vec::with_capacity(indices.len());
        for (r, &ix) in indices.iter().enumerate() {
            if ix >= c {
                return Err(Error::Index { index: ix, size: c });
            }
            data.push(a.data()[r * c + ix]);
        }
        let value = Tensor::new(&[indices.len()], data)?;
        Ok(self.unary(value, Op::Pick(self.id, indices.to_vec())))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, F>> {
        let v = (*self.value()).clone().reshaped(shape)?;
        Ok(self.unary(v, Op::Reshape(self.id)))
    }

    /// Concatenates along the first axis.
    pub fn concat_rows(parts: &[Var<'t, F>]) -> Result<Var<'t, F>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat of nothing"))?;
        let tape = first.tape;
        let f = first.value();
        if f.rank() == 0 {
            return Err(Error::shape("cannot concat scalars"));
        }
        let mut shape = f.shape().to_vec();
        shape[0] = 0;
        let mut data = Vec::new();
        for p in parts {
            first.same_tape(p);
            let v = p.value();
            if v.rank() != f.rank() || v.shape()[1..] != f.shape()[1..] {
                return Err(Error::shape(format!(
                    "concat_rows of {:?} and {:?}",
                    f.shape(),
                    v.shape()
                )));
            }
            shape[0] += v.shape()[0];
            data.extend_from_slice(v.data());
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let rg = tape.grad_flag(&ids);
        Ok(tape.push(Tensor::new(&shape, data)?, Op::ConcatRows(ids), rg))
    }

    /// Concatenates along the last axis.
    pub fn concat_cols(parts: &[Var<'t, F>]) -> Result<Var<'t, F>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat of nothing"))?;
        let tape = first.tape;
        let rows = first.value().rows();
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        if values.iter().any(|v| v.rows() != rows || v.rank() == 0) {
            return Err(Error::shape("concat_cols needs equal row counts"));
        }
        let total: usize = values.iter().map(|v| v.cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for v in &values {
                data.extend_from_slice(v.row(r));
            }
        }
        let mut shape = values[0].shape().to_vec();
        *shape.last_mut().unwrap() = total;
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let rg = tape.grad_flag(&ids);
        Ok(tape.push(Tensor::new(&shape, data)?, Op::ConcatCols(ids), rg))
    }
}
