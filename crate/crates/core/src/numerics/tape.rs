use alloc::vec;
use alloc::vec::Vec;

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::math;

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

// sqrt(2/pi) and the cubic coefficient of the tanh approximation of GELU:
//   gelu(x) = 0.5 x (1 + tanh(GELU_C (x + GELU_A x^3)))
const GELU_C: f64 = 0.797_884_560_802_865_4;
const GELU_A: f64 = 0.044_715;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Exp(usize),
    Log(usize),
    Sqrt(usize),
    Gelu(usize),
    Reshape(usize),
    /// `src[i]` is the input offset copied to output offset `i`.
    Permute(usize, Vec<usize>),
    Concat(Vec<usize>, usize),
    Embedding { table: usize, ids: Vec<usize> },
    SumAxis(usize, usize),
    MeanAxis(usize, usize),
    SumAll(usize),
    MeanAll(usize),
    L2Norm(usize),
    StopGradient,
    Softmax(usize),
    LogSoftmax(usize),
    Pick(usize, Vec<usize>),
    MatMul(usize, usize),
    AddRow(usize, usize),
    MulRow(usize, usize),
    DivRows(usize, usize),
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    PowerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        inv_psi: Vec<f64>,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Append-only record of tensor operations for reverse-mode
/// differentiation.
///
/// Nodes are pushed in evaluation order, so every node's inputs precede it
/// and [`Tape::backward`] visits each node once in reverse. Every op checks
/// its output and fails with [`Error::NonFinite`] instead of propagating a
/// NaN or infinity.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one backward pass, indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of `v`, or `None` if no gradient reached it.
    pub fn get(&self, v: Var) -> Option<Tensor> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Some(Tensor::new(self.shapes[v.0].clone(), g.clone()).expect("gradient shape"))
    }

    /// Gradient of `v`, zeros if none reached it.
    pub fn get_or_zeros(&self, v: Var) -> Tensor {
        self.get(v)
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + math::tanh(GELU_C * (x + GELU_A * x * x * x)))
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = math::tanh(u);
    let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[k x n] += a[m x k]^T * g[m x n]`
fn matmul_at_b(a: &[f64], g: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
}

/// `out[m x k] += g[m x n] * b[k x n]^T`
fn matmul_a_bt(g: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            out[i * k + p] += math::dot(grow, brow);
        }
    }
}

fn softmax_row(x: &[f64], out: &mut [f64]) {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for (o, &v) in out.iter_mut().zip(x) {
        *o = math::exp(v - m);
        s += *o;
    }
    for o in out.iter_mut() {
        *o /= s;
    }
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool, name: &'static str) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite(name));
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn needs(&self, vars: &[usize]) -> bool {
        vars.iter().any(|&i| self.nodes[i].needs_grad)
    }

    /// Differentiable leaf (a parameter or input we want gradients for).
    pub fn param(&mut self, t: Tensor) -> Result<Var> {
        self.push(t, Op::Leaf, true, "param")
    }

    /// Leaf that never receives gradients.
    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        self.push(t, Op::Leaf, false, "constant")
    }

    fn binary_same_shape(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if va.shape() != vb.shape() {
            return Err(Error::shape(name, va.shape(), vb.shape()));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::new(va.shape().to_vec(), data)?;
        let needs = self.needs(&[a.0, b.0]);
        self.push(t, op, needs, name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "add", |x, y| x + y, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "sub", |x, y| x - y, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "mul", |x, y| x * y, Op::Mul(a.0, b.0))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "div", |x, y| x / y, Op::Div(a.0, b.0))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let t = self.nodes[a.0].value.map(|x| x * c);
        let needs = self.needs(&[a.0]);
        self.push(t, Op::Scale(a.0, c), needs, "scale")
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let t = self.nodes[a.0].value.map(|x| x + c);
        let needs = self.needs(&[a.0]);
        self.push(t, Op::AddScalar(a.0), needs, "add_scalar")
    }

    fn unary(&mut self, a: Var, name: &'static str, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let t = self.nodes[a.0].value.map(f);
        let needs = self.needs(&[a.0]);
        self.push(t, op, needs, name)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "exp", math::exp, Op::Exp(a.0))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "log", math::ln, Op::Log(a.0))
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "sqrt", math::sqrt, Op::Sqrt(a.0))
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "gelu", gelu, Op::Gelu(a.0))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let src = &self.nodes[a.0].value;
        if shape.iter().product::<usize>() != src.len() {
            return Err(Error::shape("reshape", src.shape(), shape));
        }
        let t = src.reshaped(shape)?;
        let needs = self.needs(&[a.0]);
        self.push(t, Op::Reshape(a.0), needs, "reshape")
    }

    /// General axis permutation: output axis `j` is input axis `perm[j]`.
    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let src = &self.nodes[a.0].value;
        let rank = src.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || core::mem::replace(&mut seen[p], true)) {
            return Err(Error::shape("permute", src.shape(), perm));
        }
        let in_shape = src.shape();
        let mut in_strides = vec![1usize; rank];
        for d in (0..rank.saturating_sub(1)).rev() {
            in_strides[d] = in_strides[d + 1] * in_shape[d + 1];
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
        let total = src.len();
        let mut map = Vec::with_capacity(total);
        let mut idx = vec![0usize; rank];
        for _ in 0..total {
            map.push(idx.iter().zip(perm).map(|(&i, &p)| i * in_strides[p]).sum());
            for d in (0..rank).rev() {
                idx[d] += 1;
                if idx[d] < out_shape[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        let data = map.iter().map(|&s| src.data()[s]).collect();
        let t = Tensor::new(out_shape, data)?;
        let needs = self.needs(&[a.0]);
        self.push(t, Op::Permute(a.0, map), needs, "permute")
    }

    /// Swap the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let rank = self.nodes[a.0].value.rank();
        if rank < 2 {
            return Err(Error::shape("transpose", self.shape(a), &[2]));
        }
        let mut perm: Vec<usize> = (0..rank).collect();
        perm.swap(rank - 2, rank - 1);
        self.permute(a, &perm)
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts.first().ok_or(Error::EmptyInput("concat"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::shape("concat", &base, &[axis]));
        }
        let mut total_axis = 0;
        for &p in parts {
            let s = self.shape(p);
            let same = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(d, (x, y))| d == axis || x == y);
            if !same {
                return Err(Error::shape("concat", &base, s));
            }
            total_axis += s[axis];
        }
        let (outer, _, inner) = axis_split(&base, axis);
        let mut out_shape = base.clone();
        out_shape[axis] = total_axis;
        let mut data = Vec::with_capacity(outer * total_axis * inner);
        for o in 0..outer {
            for &p in parts {
                let v = &self.nodes[p.0].value;
                let chunk = v.shape()[axis] * inner;
                data.extend_from_slice(&v.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let t = Tensor::new(out_shape, data)?;
        let idx: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let needs = self.needs(&idx);
        self.push(t, Op::Concat(idx, axis), needs, "concat")
    }

    /// Row lookup `table[ids[i]]`; the backward pass scatter-adds into the
    /// table.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = &self.nodes[table.0].value;
        if tv.rank() != 2 {
            return Err(Error::shape("embedding", tv.shape(), &[2]));
        }
        let (rows, d) = (tv.shape()[0], tv.shape()[1]);
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= rows {
                return Err(Error::Vocabulary { id, size: rows });
            }
            data.extend_from_slice(tv.row(id));
        }
        let t = Tensor::new(vec![ids.len(), d], data)?;
        let needs = self.needs(&[table.0]);
        self.push(
            t,
            Op::Embedding {
                table: table.0,
                ids: ids.to_vec(),
            },
            needs,
            "embedding",
        )
    }

    fn reduce_axis(&mut self, a: Var, axis: usize, mean: bool) -> Result<Var> {
        let v = &self.nodes[a.0].value;
        if axis >= v.rank() {
            return Err(Error::shape("reduce_axis", v.shape(), &[axis]));
        }
        let (outer, n, inner) = axis_split(v.shape(), axis);
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..n {
                for k in 0..inner {
                    data[o * inner + k] += v.data()[(o * n + i) * inner + k];
                }
            }
        }
        if mean {
            let inv = 1.0 / n as f64;
            data.iter_mut().for_each(|x| *x *= inv);
        }
        let mut shape = v.shape().to_vec();
        shape.remove(axis);
        let t = Tensor::new(shape, data)?;
        let needs = self.needs(&[a.0]);
        if mean {
            self.push(t, Op::MeanAxis(a.0, axis), needs, "mean_axis")
        } else {
            self.push(t, Op::SumAxis(a.0, axis), needs, "sum_axis")
        }
    }

    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(a, axis, false)
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(a, axis, true)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.nodes[a.0].value.data().iter().sum();
        let needs = self.needs(&[a.0]);
        self.push(Tensor::scalar(s), Op::SumAll(a.0), needs, "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = &self.nodes[a.0].value;
        if v.is_empty() {
            return Err(Error::EmptyInput("mean"));
        }
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        let needs = self.needs(&[a.0]);
        self.push(Tensor::scalar(s), Op::MeanAll(a.0), needs, "mean")
    }

    /// Euclidean norm over the last axis.
    pub fn l2_norm(&mut self, a: Var) -> Result<Var> {
        let v = &self.nodes[a.0].value;
        let mut norms = Vec::with_capacity(v.len() / v.last_dim().max(1));
        for r in v.rows() {
            let n = math::norm(r);
            if n == 0.0 {
                return Err(Error::DegenerateVector("l2_norm"));
            }
            norms.push(n);
        }
        let shape = v.shape()[..v.rank().saturating_sub(1)].to_vec();
        let t = Tensor::new(shape, norms)?;
        let needs = self.needs(&[a.0]);
        self.push(t, Op::L2Norm(a.0), needs, "l2_norm")
    }

    /// Forwards `a` unchanged; no gradient ever flows back through it.
    pub fn stop_gradient(&mut self, a: Var) -> Result<Var> {
        let t = self.nodes[a.0].value.clone();
        self.push(t, Op::StopGradient, false, "stop_gradient")
    }

    /// Softmax over the last axis, computed with max-subtraction.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let v = &self.nodes[a.0].value;
        if v.last_dim() == 0 {
            return Err(Error::EmptyInput("softmax"));
        }
        let n = v.last_dim();
        let mut out = vec![0.0; v.len()];
        for (r, o) in v.rows().zip(out.chunks_mut(n)) {
            softmax_row(r, o);
        }
        let t = Tensor::new(v.shape().to_vec(), out)?;
        let needs = self.needs(&[a.0]);
        self.push(t, Op::Softmax(a.0), needs, "softmax")
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let v = &self.nodes[a.0].value;
        if v.last_dim() == 0 {
            return Err(Error::EmptyInput("log_softmax"));
        }
        let mut out = Vec::with_capacity(v.len());
        for r in v.rows() {
            let lse = math::log_sum_exp(r);
            out.extend(r.iter().map(|&x| x - lse));
        }
        let t = Tensor::new(v.shape().to_vec(), out)?;
        let needs = self.needs(&[a.0]);
        self.push(t, Op::LogSoftmax(a.0), needs, "log_softmax")
    }

    /// `out[i] = a[i, ids[i]]` for a 2D input.
    pub fn pick(&mut self, a: Var, ids: &[usize]) -> Result<Var> {
        let v = &self.nodes[a.0].value;
        if v.rank() != 2 || v.shape()[0] != ids.len() {
            return Err(Error::shape("pick", v.shape(), &[ids.len()]));
        }
        let n = v.shape()[1];
        let mut out = Vec::with_capacity(ids.len());
        for (i, &id) in ids.iter().enumerate() {
            if id >= n {
                return Err(Error::Vocabulary { id, size: n });
            }
            out.push(v.data()[i * n + id]);
        }
        let needs = self.needs(&[a.0]);
        self.push(Tensor::vector(out), Op::Pick(a.0, ids.to_vec()), needs, "pick")
    }

    /// `[m x k] * [k x n]`, or batched `[b x m x k] * [b x k x n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (batch, m, k, n) = match (va.shape(), vb.shape()) {
            ([m, k], [k2, n]) if k == k2 => (1, *m, *k, *n),
            ([b1, m, k], [b2, k2, n]) if b1 == b2 && k == k2 => (*b1, *m, *k, *n),
            _ => return Err(Error::shape("matmul", va.shape(), vb.shape())),
        };
        let mut out = vec![0.0; batch * m * n];
        for bi in 0..batch {
            matmul_into(
                &va.data()[bi * m * k..(bi + 1) * m * k],
                &vb.data()[bi * k * n..(bi + 1) * k * n],
                &mut out[bi * m * n..(bi + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let shape = if va.rank() == 2 { vec![m, n] } else { vec![batch, m, n] };
        let t = Tensor::new(shape, out)?;
        let needs = self.needs(&[a.0, b.0]);
        self.push(t, Op::MatMul(a.0, b.0), needs, "matmul")
    }

    /// Adds a `[n]` vector to every last-axis row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[bias.0].value);
        if vb.rank() != 1 || va.last_dim() != vb.len() {
            return Err(Error::shape("add_row", va.shape(), vb.shape()));
        }
        let n = vb.len();
        let mut data = va.data().to_vec();
        for row in data.chunks_mut(n) {
            for (x, b) in row.iter_mut().zip(vb.data()) {
                *x += b;
            }
        }
        let t = Tensor::new(va.shape().to_vec(), data)?;
        let needs = self.needs(&[a.0, bias.0]);
        self.push(t, Op::AddRow(a.0, bias.0), needs, "add_row")
    }

    /// Multiplies every last-axis row of `a` elementwise by a `[n]` vector.
    pub fn mul_row(&mut self, a: Var, scale: Var) -> Result<Var> {
        let (va, vs) = (&self.nodes[a.0].value, &self.nodes[scale.0].value);
        if vs.rank() != 1 || va.last_dim() != vs.len() {
            return Err(Error::shape("mul_row", va.shape(), vs.shape()));
        }
        let n = vs.len();
        let mut data = va.data().to_vec();
        for row in data.chunks_mut(n) {
            for (x, s) in row.iter_mut().zip(vs.data()) {
                *x *= s;
            }
        }
        let t = Tensor::new(va.shape().to_vec(), data)?;
        let needs = self.needs(&[a.0, scale.0]);
        self.push(t, Op::MulRow(a.0, scale.0), needs, "mul_row")
    }

    /// Divides last-axis row `r` of `a` by `s[r]`; `s` has the shape of `a`
    /// without its last axis.
    pub fn div_rows(&mut self, a: Var, s: Var) -> Result<Var> {
        let (va, vs) = (&self.nodes[a.0].value, &self.nodes[s.0].value);
        if va.rank() == 0 || vs.shape() != &va.shape()[..va.rank() - 1] {
            return Err(Error::shape("div_rows", va.shape(), vs.shape()));
        }
        let n = va.last_dim();
        let mut data = va.data().to_vec();
        for (row, &d) in data.chunks_mut(n.max(1)).zip(vs.data()) {
            row.iter_mut().for_each(|x| *x /= d);
        }
        let t = Tensor::new(va.shape().to_vec(), data)?;
        let needs = self.needs(&[a.0, s.0]);
        self.push(t, Op::DivRows(a.0, s.0), needs, "div_rows")
    }

    /// Layer normalization over the last axis followed by the affine map
    /// `gamma * xhat + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let vx = &self.nodes[x.0].value;
        let d = vx.last_dim();
        let (vg, vb) = (&self.nodes[gamma.0].value, &self.nodes[beta.0].value);
        if vg.shape() != [d] || vb.shape() != [d] {
            return Err(Error::shape("layer_norm", vx.shape(), vg.shape()));
        }
        let rows = vx.len() / d.max(1);
        let mut xhat = Vec::with_capacity(vx.len());
        let mut rstd = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(vx.len());
        for r in vx.rows() {
            let mu = r.iter().sum::<f64>() / d as f64;
            let var = r.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
            let rs = 1.0 / math::sqrt(var + eps);
            rstd.push(rs);
            for (j, &v) in r.iter().enumerate() {
                let h = (v - mu) * rs;
                xhat.push(h);
                out.push(vg.data()[j] * h + vb.data()[j]);
            }
        }
        let t = Tensor::new(vx.shape().to_vec(), out)?;
        let needs = self.needs(&[x.0, gamma.0, beta.0]);
        self.push(
            t,
            Op::LayerNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                xhat,
                rstd,
            },
            needs,
            "layer_norm",
        )
    }

    /// Power normalization with a frozen per-feature divisor:
    /// `gamma * x / psi + beta`, where `psi` is treated as a constant in the
    /// backward pass.
    pub fn power_norm(&mut self, x: Var, gamma: Var, beta: Var, psi: &[f64]) -> Result<Var> {
        let vx = &self.nodes[x.0].value;
        let d = vx.last_dim();
        let (vg, vb) = (&self.nodes[gamma.0].value, &self.nodes[beta.0].value);
        if vg.shape() != [d] || vb.shape() != [d] || psi.len() != d {
            return Err(Error::shape("power_norm", vx.shape(), vg.shape()));
        }
        let inv_psi: Vec<f64> = psi.iter().map(|p| 1.0 / p).collect();
        let mut out = Vec::with_capacity(vx.len());
        for r in vx.rows() {
            for (j, &v) in r.iter().enumerate() {
                out.push(vg.data()[j] * v * inv_psi[j] + vb.data()[j]);
            }
        }
        let t = Tensor::new(vx.shape().to_vec(), out)?;
        let needs = self.needs(&[x.0, gamma.0, beta.0]);
        self.push(
            t,
            Op::PowerNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                inv_psi,
            },
            needs,
            "power_norm",
        )
    }

    /// Reverse pass from `root`, seeded with ones (the gradient of
    /// `sum(root)`).
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let n = root.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        if self.nodes[root.0].needs_grad {
            grads[root.0] = Some(vec![1.0; self.nodes[root.0].value.len()]);
        }
        for idx in (0..n).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
        }
        if grads.iter().flatten().flatten().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("backward"));
        }
        Ok(Gradients { grads, shapes })
    }

    fn acc<'a>(&self, grads: &'a mut [Option<Vec<f64>>], i: usize) -> Option<&'a mut Vec<f64>> {
        if !self.nodes[i].needs_grad {
            return None;
        }
        let len = self.nodes[i].value.len();
        Some(grads[i].get_or_insert_with(|| vec![0.0; len]))
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = node.value.data();
        match &node.op {
            Op::Leaf | Op::StopGradient => {}
            Op::Add(a, b) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    gb.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    gb.iter_mut().zip(g).for_each(|(x, y)| *x -= y);
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.nodes[*a].value.data(), self.nodes[*b].value.data());
                if let Some(ga) = self.acc(grads, *a) {
                    for ((x, gy), bv) in ga.iter_mut().zip(g).zip(vb) {
                        *x += gy * bv;
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for ((x, gy), av) in gb.iter_mut().zip(g).zip(va) {
                        *x += gy * av;
                    }
                }
            }
            Op::Div(a, b) => {
                let vb = self.nodes[*b].value.data();
                if let Some(ga) = self.acc(grads, *a) {
                    for ((x, gy), bv) in ga.iter_mut().zip(g).zip(vb) {
                        *x += gy / bv;
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for (((x, gy), bv), o) in gb.iter_mut().zip(g).zip(vb).zip(out) {
                        *x -= gy * o / bv;
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += c * y);
                }
            }
            Op::AddScalar(a) | Op::Reshape(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
            }
            Op::Exp(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    for ((x, gy), o) in ga.iter_mut().zip(g).zip(out) {
                        *x += gy * o;
                    }
                }
            }
            Op::Log(a) => {
                let va = self.nodes[*a].value.data();
                if let Some(ga) = self.acc(grads, *a) {
                    for ((x, gy), v) in ga.iter_mut().zip(g).zip(va) {
                        *x += gy / v;
                    }
                }
            }
            Op::Sqrt(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    for ((x, gy), o) in ga.iter_mut().zip(g).zip(out) {
                        *x += gy * 0.5 / o;
                    }
                }
            }
            Op::Gelu(a) => {
                let va = self.nodes[*a].value.data();
                if let Some(ga) = self.acc(grads, *a) {
                    for ((x, gy), v) in ga.iter_mut().zip(g).zip(va) {
                        *x += gy * gelu_grad(*v);
                    }
                }
            }
            Op::Permute(a, map) => {
                if let Some(ga) = self.acc(grads, *a) {
                    for (gy, &src) in g.iter().zip(map) {
                        ga[src] += gy;
                    }
                }
            }
            Op::Concat(parts, axis) => {
                let (outer, total, inner) = axis_split(node.value.shape(), *axis);
                let mut offset = 0;
                for &p in parts {
                    let width = self.nodes[p].value.shape()[*axis];
                    if let Some(gp) = self.acc(grads, p) {
                        for o in 0..outer {
                            let src = &g[(o * total + offset) * inner..(o * total + offset + width) * inner];
                            let dst = &mut gp[o * width * inner..(o + 1) * width * inner];
                            dst.iter_mut().zip(src).for_each(|(x, y)| *x += y);
                        }
                    }
                    offset += width;
                }
            }
            Op::Embedding { table, ids } => {
                let d = node.value.last_dim();
                if let Some(gt) = self.acc(grads, *table) {
                    for (i, &id) in ids.iter().enumerate() {
                        let dst = &mut gt[id * d..(id + 1) * d];
                        dst.iter_mut().zip(&g[i * d..(i + 1) * d]).for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::SumAxis(a, axis) | Op::MeanAxis(a, axis) => {
                let (outer, n, inner) = axis_split(self.nodes[*a].value.shape(), *axis);
                let f = if matches!(node.op, Op::MeanAxis(..)) { 1.0 / n as f64 } else { 1.0 };
                if let Some(ga) = self.acc(grads, *a) {
                    for o in 0..outer {
                        for i in 0..n {
                            for k in 0..inner {
                                ga[(o * n + i) * inner + k] += f * g[o * inner + k];
                            }
                        }
                    }
                }
            }
            Op::SumAll(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().for_each(|x| *x += g[0]);
                }
            }
            Op::MeanAll(a) => {
                let inv = 1.0 / self.nodes[*a].value.len() as f64;
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().for_each(|x| *x += g[0] * inv);
                }
            }
            Op::L2Norm(a) => {
                let va = &self.nodes[*a].value;
                let d = va.last_dim();
                if let Some(ga) = self.acc(grads, *a) {
                    for (r, (gy, nrm)) in g.iter().zip(out).enumerate() {
                        for j in 0..d {
                            ga[r * d + j] += gy * va.data()[r * d + j] / nrm;
                        }
                    }
                }
            }
            Op::Softmax(a) => {
                let n = node.value.last_dim();
                if let Some(ga) = self.acc(grads, *a) {
                    for ((gr, yr), dst) in g.chunks(n).zip(out.chunks(n)).zip(ga.chunks_mut(n)) {
                        let s = math::dot(gr, yr);
                        for ((x, gy), y) in dst.iter_mut().zip(gr).zip(yr) {
                            *x += y * (gy - s);
                        }
                    }
                }
            }
            Op::LogSoftmax(a) => {
                let n = node.value.last_dim();
                if let Some(ga) = self.acc(grads, *a) {
                    for ((gr, yr), dst) in g.chunks(n).zip(out.chunks(n)).zip(ga.chunks_mut(n)) {
                        let s: f64 = gr.iter().sum();
                        for ((x, gy), y) in dst.iter_mut().zip(gr).zip(yr) {
                            *x += gy - math::exp(*y) * s;
                        }
                    }
                }
            }
            Op::Pick(a, ids) => {
                let n = self.nodes[*a].value.shape()[1];
                if let Some(ga) = self.acc(grads, *a) {
                    for (i, (&id, gy)) in ids.iter().zip(g).enumerate() {
                        ga[i * n + id] += gy;
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (va, vb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                let r = va.rank();
                let (m, k) = (va.shape()[r - 2], va.shape()[r - 1]);
                let n = vb.shape()[r - 1];
                let batch = if r == 3 { va.shape()[0] } else { 1 };
                if let Some(ga) = self.acc(grads, *a) {
                    for bi in 0..batch {
                        matmul_a_bt(
                            &g[bi * m * n..(bi + 1) * m * n],
                            &vb.data()[bi * k * n..(bi + 1) * k * n],
                            &mut ga[bi * m * k..(bi + 1) * m * k],
                            m,
                            k,
                            n,
                        );
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for bi in 0..batch {
                        matmul_at_b(
                            &va.data()[bi * m * k..(bi + 1) * m * k],
                            &g[bi * m * n..(bi + 1) * m * n],
                            &mut gb[bi * k * n..(bi + 1) * k * n],
                            m,
                            k,
                            n,
                        );
                    }
                }
            }
            Op::AddRow(a, b) => {
                let n = self.nodes[*b].value.len();
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for row in g.chunks(n) {
                        gb.iter_mut().zip(row).for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::MulRow(a, s) => {
                let n = self.nodes[*s].value.len();
                let vs = self.nodes[*s].value.data();
                let va = self.nodes[*a].value.data();
                if let Some(ga) = self.acc(grads, *a) {
                    for (dst, row) in ga.chunks_mut(n).zip(g.chunks(n)) {
                        for ((x, gy), sv) in dst.iter_mut().zip(row).zip(vs) {
                            *x += gy * sv;
                        }
                    }
                }
                if let Some(gs) = self.acc(grads, *s) {
                    for (row, arow) in g.chunks(n).zip(va.chunks(n)) {
                        for ((x, gy), av) in gs.iter_mut().zip(row).zip(arow) {
                            *x += gy * av;
                        }
                    }
                }
            }
            Op::DivRows(a, s) => {
                let n = node.value.last_dim().max(1);
                let vs = self.nodes[*s].value.data();
                let va = self.nodes[*a].value.data();
                if let Some(ga) = self.acc(grads, *a) {
                    for ((dst, row), sv) in ga.chunks_mut(n).zip(g.chunks(n)).zip(vs) {
                        dst.iter_mut().zip(row).for_each(|(x, gy)| *x += gy / sv);
                    }
                }
                if let Some(gs) = self.acc(grads, *s) {
                    for (((x, row), arow), sv) in gs.iter_mut().zip(g.chunks(n)).zip(va.chunks(n)).zip(vs) {
                        *x -= math::dot(row, arow) / (sv * sv);
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let d = node.value.last_dim();
                let vg = self.nodes[*gamma].value.data();
                if let Some(gg) = self.acc(grads, *gamma) {
                    for (row, hrow) in g.chunks(d).zip(xhat.chunks(d)) {
                        for ((x, gy), h) in gg.iter_mut().zip(row).zip(hrow) {
                            *x += gy * h;
                        }
                    }
                }
                if let Some(gb) = self.acc(grads, *beta) {
                    for row in g.chunks(d) {
                        gb.iter_mut().zip(row).for_each(|(x, y)| *x += y);
                    }
                }
                if let Some(gx) = self.acc(grads, *x) {
                    let inv_d = 1.0 / d as f64;
                    for (r, ((dst, row), hrow)) in gx.chunks_mut(d).zip(g.chunks(d)).zip(xhat.chunks(d)).enumerate() {
                        let dh: Vec<f64> = row.iter().zip(vg).map(|(gy, gm)| gy * gm).collect();
                        let mean_dh = dh.iter().sum::<f64>() * inv_d;
                        let mean_dh_h = math::dot(&dh, hrow) * inv_d;
                        for ((x, dhj), h) in dst.iter_mut().zip(&dh).zip(hrow) {
                            *x += rstd[r] * (dhj - mean_dh - h * mean_dh_h);
                        }
                    }
                }
            }
            Op::PowerNorm {
                x,
                gamma,
                beta,
                inv_psi,
            } => {
                let vx = self.nodes[*x].value.data();
                let vg = self.nodes[*gamma].value.data();
                let d = inv_psi.len();
                let (dx, dg, db) = crate::model::powernorm::frozen_backward(vx, vg, inv_psi, g, d);
                if let Some(gx) = self.acc(grads, *x) {
                    gx.iter_mut().zip(&dx).for_each(|(a, b)| *a += b);
                }
                if let Some(gg) = self.acc(grads, *gamma) {
                    gg.iter_mut().zip(&dg).for_each(|(a, b)| *a += b);
                }
                if let Some(gb) = self.acc(grads, *beta) {
                    gb.iter_mut().zip(&db).for_each(|(a, b)| *a += b);
                }
            }
        }
    }
}
