use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)] // float methods come from std when it is linked
use num_traits::Float;

use super::optim::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::math::{self, dot};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Unary {
    Neg,
    Exp,
    Log,
    Tanh,
    Sigmoid,
    Softplus,
    Mish,
    Silu,
    Elu,
    Square,
    Sqrt,
}

impl Unary {
    fn name(self) -> &'static str {
        match self {
            Unary::Neg => "neg",
            Unary::Exp => "exp",
            Unary::Log => "log",
            Unary::Tanh => "tanh",
            Unary::Sigmoid => "sigmoid",
            Unary::Softplus => "softplus",
            Unary::Mish => "mish",
            Unary::Silu => "silu",
            Unary::Elu => "elu",
            Unary::Square => "square",
            Unary::Sqrt => "sqrt",
        }
    }

    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Neg => -x,
            Unary::Exp => x.exp(),
            Unary::Log => x.ln(),
            Unary::Tanh => x.tanh(),
            Unary::Sigmoid => math::sigmoid(x),
            Unary::Softplus => math::softplus(x),
            Unary::Mish => x * math::softplus(x).tanh(),
            Unary::Silu => x * math::sigmoid(x),
            Unary::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
            Unary::Square => x * x,
            Unary::Sqrt => x.sqrt(),
        }
    }

    /// `dy/dx` given input `x` and output `y`.
    #[inline]
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Neg => -1.0,
            Unary::Exp => y,
            Unary::Log => 1.0 / x,
            Unary::Tanh => 1.0 - y * y,
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Softplus => {
                if x > 30.0 {
                    1.0
                } else {
                    math::sigmoid(x)
                }
            }
            Unary::Mish => {
                let sp = math::softplus(x);
                let t = sp.tanh();
                let dsp = if x > 30.0 { 1.0 } else { math::sigmoid(x) };
                t + x * (1.0 - t * t) * dsp
            }
            Unary::Silu => {
                let s = math::sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            Unary::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    y + 1.0
                }
            }
            Unary::Square => 2.0 * x,
            Unary::Sqrt => 0.5 / y,
        }
    }
}

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Leaf,
    Param,
    Binary(Binary, Var, Var),
    Unary(Unary, Var),
    AddScalar(Var),
    MulScalar(Var, f64),
    MatMul(Var, Var),
    Sum(Var),
    SumAxis {
        x: Var,
        axis: usize,
    },
    Reshape(Var),
    Transpose(Var),
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    RepeatRows {
        x: Var,
        times: usize,
    },
    LogSoftmax(Var),
    /// Row-wise scalar function with a precomputed Jacobian `[n, d]`.
    RowFunction {
        x: Var,
        jacobian: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Reverse-mode gradient tape. Build one per training step.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(ParamId, Var)>,
}

/// Gradient buffers produced by [`Tape::gradients`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

/// Splits `shape` around `axis` into `(outer, extent, inner)`.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank {
            a[i + a.len() - rank]
        } else {
            1
        };
        let db = if i + b.len() >= rank {
            b[i + b.len() - rank]
        } else {
            1
        };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// For every element of the broadcast output, the linear index into an
/// operand of shape `src`.
fn broadcast_index(src: &[usize], out: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let offset = rank - src.len();
    let mut strides = vec![0usize; rank];
    let mut s = 1;
    for i in (0..src.len()).rev() {
        strides[i + offset] = if src[i] == 1 { 0 } else { s };
        s *= src[i];
    }
    let n: usize = out.iter().product();
    let mut idx = Vec::with_capacity(n);
    let mut counter = vec![0usize; rank];
    let mut lin = 0usize;
    for _ in 0..n {
        idx.push(lin);
        for d in (0..rank).rev() {
            counter[d] += 1;
            lin += strides[d];
            if counter[d] < out[d] {
                break;
            }
            lin -= strides[d] * out[d];
            counter[d] = 0;
        }
    }
    idx
}

fn check_finite(op: &str, t: &Tensor) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(String::from(op)))
    }
}

/// `out[n,m] += a[n,k] · b[k,m]`
fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let orow = &mut out[i * m..(i + 1) * m];
        let arow = &a[i * k..(i + 1) * k];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
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

    pub fn clear(&mut self) {
        self.nodes.clear();
        self.params.clear();
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn checked(&mut self, name: &str, value: Tensor, op: Op, requires_grad: bool) -> Result<Var> {
        check_finite(name, &value)?;
        Ok(self.push(value, op, requires_grad))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Data that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// Input whose gradient is tracked (used for input-sensitivity checks).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Places a parameter on the tape, reusing the node if it is already there.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&(_, v)) = self.params.iter().find(|(p, _)| *p == id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Param, true);
        self.params.push((id, v));
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    pub fn item(&self, v: Var) -> Result<f64> {
        self.nodes[v.0].value.item()
    }

    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let name = match kind {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
            Binary::Div => "div",
        };
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let f = |x: f64, y: f64| match kind {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
            Binary::Div => x / y,
        };
        let (da, db) = (self.data(a), self.data(b));
        let (shape, data) = if sa == sb {
            (sa, da.iter().zip(db).map(|(&x, &y)| f(x, y)).collect())
        } else {
            let out = broadcast_shape(&sa, &sb)
                .ok_or_else(|| Error::shape(name, format!("{sa:?} vs {sb:?}")))?;
            let ia = broadcast_index(&sa, &out);
            let ib = broadcast_index(&sb, &out);
            let data = ia.iter().zip(&ib).map(|(&i, &j)| f(da[i], db[j])).collect();
            (out, data)
        };
        let rg = self.rg(a) || self.rg(b);
        self.checked(name, Tensor::new(shape, data)?, Op::Binary(kind, a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Div, a, b)
    }

    fn unary(&mut self, kind: Unary, x: Var) -> Result<Var> {
        let xs = self.value(x);
        if matches!(kind, Unary::Log | Unary::Sqrt) {
            if let Some(bad) = xs
                .data()
                .iter()
                .find(|&&v| v <= 0.0 && !(kind == Unary::Sqrt && v == 0.0))
            {
                return Err(Error::domain(kind.name(), format!("argument {bad}")));
            }
        }
        let data = xs.data().iter().map(|&v| kind.apply(v)).collect();
        let value = Tensor::new(xs.shape().to_vec(), data)?;
        let rg = self.rg(x);
        self.checked(kind.name(), value, Op::Unary(kind, x), rg)
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Neg, x)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Exp, x)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Log, x)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Tanh, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Sigmoid, x)
    }

    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Softplus, x)
    }

    /// `x · tanh(softplus(x))`
    pub fn mish(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Mish, x)
    }

    /// `x · sigmoid(x)`
    pub fn silu(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Silu, x)
    }

    pub fn elu(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Elu, x)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Square, x)
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Sqrt, x)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        let xs = self.value(x);
        let value = Tensor::new(
            xs.shape().to_vec(),
            xs.data().iter().map(|v| v + c).collect(),
        )?;
        let rg = self.rg(x);
        self.checked("add_scalar", value, Op::AddScalar(x), rg)
    }

    pub fn mul_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        let xs = self.value(x);
        let value = Tensor::new(
            xs.shape().to_vec(),
            xs.data().iter().map(|v| v * c).collect(),
        )?;
        let rg = self.rg(x);
        self.checked("mul_scalar", value, Op::MulScalar(x, c), rg)
    }

    /// `[n,k] · [k,m] -> [n,m]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (n, k, m) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; n * m];
        matmul_into(self.data(a), self.data(b), &mut out, n, k, m);
        let rg = self.rg(a) || self.rg(b);
        self.checked(
            "matmul",
            Tensor::new(vec![n, m], out)?,
            Op::MatMul(a, b),
            rg,
        )
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: f64 = self.data(x).iter().sum();
        let rg = self.rg(x);
        self.checked("sum", Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel() as f64;
        let s = self.sum(x)?;
        self.mul_scalar(s, 1.0 / n)
    }

    /// Sum along `axis`, removing it.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::shape(
                "sum_axis",
                format!("axis {axis} of {shape:?}"),
            ));
        }
        let (outer, n, inner) = axis_split(&shape, axis);
        let d = self.data(x);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            let dst = &mut out[o * inner..(o + 1) * inner];
            for j in 0..n {
                let src = &d[(o * n + j) * inner..(o * n + j + 1) * inner];
                for (t, &s) in dst.iter_mut().zip(src) {
                    *t += s;
                }
            }
        }
        let mut oshape = shape.clone();
        oshape.remove(axis);
        let rg = self.rg(x);
        self.checked(
            "sum_axis",
            Tensor::new(oshape, out)?,
            Op::SumAxis { x, axis },
            rg,
        )
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let n = *self
            .shape(x)
            .get(axis)
            .ok_or_else(|| Error::shape("mean_axis", format!("axis {axis}")))?;
        let s = self.sum_axis(x, axis)?;
        self.mul_scalar(s, 1.0 / n as f64)
    }

    /// Variance along `axis` with divisor `n - ddof`.
    pub fn variance_axis(&mut self, x: Var, axis: usize, ddof: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let n = *shape
            .get(axis)
            .ok_or_else(|| Error::shape("variance_axis", format!("axis {axis}")))?;
        if n <= ddof {
            return Err(Error::usage(format!(
                "variance over {n} values with ddof {ddof}"
            )));
        }
        let m = self.mean_axis(x, axis)?;
        let mut kshape = shape.clone();
        kshape[axis] = 1;
        let m = self.reshape(m, &kshape)?;
        let centered = self.sub(x, m)?;
        let sq = self.square(centered)?;
        let s = self.sum_axis(sq, axis)?;
        self.mul_scalar(s, 1.0 / (n - ddof) as f64)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// Transpose of a matrix.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(Error::shape("transpose", format!("{s:?}")));
        }
        let (r, c) = (s[0], s[1]);
        let d = self.data(x);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = d[i * c + j];
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![c, r], out)?, Op::Transpose(x), rg))
    }

    /// Concatenation along `axis`; all other extents must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::usage("concat of nothing"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::shape("concat", format!("axis {axis} of {base:?}")));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let ok = s.len() == base.len()
                && s.iter()
                    .enumerate()
                    .all(|(i, &e)| i == axis || e == base[i]);
            if !ok {
                return Err(Error::shape("concat", format!("{base:?} vs {s:?}")));
            }
            total += s[axis];
        }
        let mut oshape = base.clone();
        oshape[axis] = total;
        let (outer, _, inner) = axis_split(&oshape, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let w = self.shape(v)[axis] * inner;
                out.extend_from_slice(&self.data(v)[o * w..(o + 1) * w]);
            }
        }
        let rg = inputs.iter().any(|&v| self.rg(v));
        Ok(self.push(
            Tensor::new(oshape, out)?,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// `len` entries starting at `start` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::shape(
                "slice",
                format!("{start}+{len} on axis {axis} of {shape:?}"),
            ));
        }
        let (outer, n, inner) = axis_split(&shape, axis);
        let d = self.data(x);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&d[(o * n + start) * inner..(o * n + start + len) * inner]);
        }
        let mut oshape = shape;
        oshape[axis] = len;
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(oshape, out)?, Op::Slice { x, axis, start }, rg))
    }

    /// Repeats each row of a matrix `times` times consecutively.
    pub fn repeat_rows(&mut self, x: Var, times: usize) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(Error::shape("repeat_rows", format!("{s:?}")));
        }
        let (r, c) = (s[0], s[1]);
        let d = self.data(x);
        let mut out = Vec::with_capacity(r * times * c);
        for i in 0..r {
            for _ in 0..times {
                out.extend_from_slice(&d[i * c..(i + 1) * c]);
            }
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(vec![r * times, c], out)?,
            Op::RepeatRows { x, times },
            rg,
        ))
    }

    /// Log-softmax over the last axis of a matrix.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(Error::shape("log_softmax", format!("{s:?}")));
        }
        let (r, c) = (s[0], s[1]);
        let d = self.data(x);
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            let row = &d[i * c..(i + 1) * c];
            let lse = math::log_sum_exp(row);
            out.extend(row.iter().map(|v| v - lse));
        }
        let rg = self.rg(x);
        self.checked(
            "log_softmax",
            Tensor::new(vec![r, c], out)?,
            Op::LogSoftmax(x),
            rg,
        )
    }

    /// Applies an external scalar function to each row of `x` (`[n, d]` ->
    /// `[n]`), given its values and gradients.
    pub fn row_function(&mut self, x: Var, values: Vec<f64>, jacobian: Vec<f64>) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 || values.len() != s[0] || jacobian.len() != s[0] * s[1] {
            return Err(Error::shape(
                "row_function",
                format!(
                    "{s:?} with {} values and {} gradients",
                    values.len(),
                    jacobian.len()
                ),
            ));
        }
        let rg = self.rg(x);
        let value = Tensor::vector(values);
        self.checked("row_function", value, Op::RowFunction { x, jacobian }, rg)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn gradients(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        check_finite("loss", self.value(loss))?;
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.numel()]);
        f(slot);
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Constant | Op::Leaf | Op::Param => {}
            Op::Binary(kind, a, b) => {
                let (a, b) = (*a, *b);
                let (va, vb) = (self.data(a), self.data(b));
                let (sa, sb) = (self.shape(a), self.shape(b));
                let out = node.value.shape();
                let same = sa == sb;
                let ia = if same {
                    Vec::new()
                } else {
                    broadcast_index(sa, out)
                };
                let ib = if same {
                    Vec::new()
                } else {
                    broadcast_index(sb, out)
                };
                let at = |k: usize| if same { k } else { ia[k] };
                let bt = |k: usize| if same { k } else { ib[k] };
                self.accumulate(grads, a, |ga| {
                    for (k, &gk) in g.iter().enumerate() {
                        ga[at(k)] += match kind {
                            Binary::Add | Binary::Sub => gk,
                            Binary::Mul => gk * vb[bt(k)],
                            Binary::Div => gk / vb[bt(k)],
                        };
                    }
                });
                self.accumulate(grads, b, |gb| {
                    for (k, &gk) in g.iter().enumerate() {
                        gb[bt(k)] += match kind {
                            Binary::Add => gk,
                            Binary::Sub => -gk,
                            Binary::Mul => gk * va[at(k)],
                            Binary::Div => {
                                let y = vb[bt(k)];
                                -gk * va[at(k)] / (y * y)
                            }
                        };
                    }
                });
            }
            Op::Unary(kind, x) => {
                let xv = self.data(*x);
                let yv = node.value.data();
                self.accumulate(grads, *x, |gx| {
                    for k in 0..g.len() {
                        gx[k] += g[k] * kind.derivative(xv[k], yv[k]);
                    }
                });
            }
            Op::AddScalar(x) => self.accumulate(grads, *x, |gx| {
                for (t, &s) in gx.iter_mut().zip(g) {
                    *t += s;
                }
            }),
            Op::MulScalar(x, c) => self.accumulate(grads, *x, |gx| {
                for (t, &s) in gx.iter_mut().zip(g) {
                    *t += s * c;
                }
            }),
            Op::MatMul(a, b) => {
                let (a, b) = (*a, *b);
                let (n, k) = (self.shape(a)[0], self.shape(a)[1]);
                let m = self.shape(b)[1];
                let (va, vb) = (self.data(a), self.data(b));
                // dA = G · Bᵀ
                self.accumulate(grads, a, |ga| {
                    for r in 0..n {
                        let grow = &g[r * m..(r + 1) * m];
                        for p in 0..k {
                            ga[r * k + p] += dot(grow, &vb[p * m..(p + 1) * m]);
                        }
                    }
                });
                // dB = Aᵀ · G
                self.accumulate(grads, b, |gb| {
                    for r in 0..n {
                        let grow = &g[r * m..(r + 1) * m];
                        for p in 0..k {
                            let av = va[r * k + p];
                            if av == 0.0 {
                                continue;
                            }
                            for (t, &s) in gb[p * m..(p + 1) * m].iter_mut().zip(grow) {
                                *t += av * s;
                            }
                        }
                    }
                });
            }
            Op::Sum(x) => self.accumulate(grads, *x, |gx| {
                for t in gx.iter_mut() {
                    *t += g[0];
                }
            }),
            Op::SumAxis { x, axis } => {
                let (outer, n, inner) = axis_split(self.shape(*x), *axis);
                self.accumulate(grads, *x, |gx| {
                    for o in 0..outer {
                        let src = &g[o * inner..(o + 1) * inner];
                        for j in 0..n {
                            let dst = &mut gx[(o * n + j) * inner..(o * n + j + 1) * inner];
                            for (t, &s) in dst.iter_mut().zip(src) {
                                *t += s;
                            }
                        }
                    }
                });
            }
            Op::Reshape(x) => self.accumulate(grads, *x, |gx| {
                for (t, &s) in gx.iter_mut().zip(g) {
                    *t += s;
                }
            }),
            Op::Transpose(x) => {
                let (r, c) = (self.shape(*x)[0], self.shape(*x)[1]);
                self.accumulate(grads, *x, |gx| {
                    for i in 0..r {
                        for j in 0..c {
                            gx[i * c + j] += g[j * r + i];
                        }
                    }
                });
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = axis_split(node.value.shape(), *axis);
                let mut offset = 0;
                for &v in inputs {
                    let n = self.shape(v)[*axis];
                    self.accumulate(grads, v, |gv| {
                        for o in 0..outer {
                            let src =
                                &g[(o * total + offset) * inner..(o * total + offset + n) * inner];
                            for (t, &s) in
                                gv[o * n * inner..(o + 1) * n * inner].iter_mut().zip(src)
                            {
                                *t += s;
                            }
                        }
                    });
                    offset += n;
                }
            }
            Op::Slice { x, axis, start } => {
                let (outer, n, inner) = axis_split(self.shape(*x), *axis);
                let len = node.value.shape()[*axis];
                self.accumulate(grads, *x, |gx| {
                    for o in 0..outer {
                        let dst = &mut gx[(o * n + start) * inner..(o * n + start + len) * inner];
                        for (t, &s) in dst
                            .iter_mut()
                            .zip(&g[o * len * inner..(o + 1) * len * inner])
                        {
                            *t += s;
                        }
                    }
                });
            }
            Op::RepeatRows { x, times } => {
                let (r, c) = (self.shape(*x)[0], self.shape(*x)[1]);
                self.accumulate(grads, *x, |gx| {
                    for i in 0..r {
                        for t in 0..*times {
                            let src = &g[(i * times + t) * c..(i * times + t + 1) * c];
                            for (d, &s) in gx[i * c..(i + 1) * c].iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                    }
                });
            }
            Op::LogSoftmax(x) => {
                let (r, c) = (node.value.shape()[0], node.value.shape()[1]);
                let y = node.value.data();
                self.accumulate(grads, *x, |gx| {
                    for i in 0..r {
                        let gs: f64 = g[i * c..(i + 1) * c].iter().sum();
                        for j in 0..c {
                            gx[i * c + j] += g[i * c + j] - y[i * c + j].exp() * gs;
                        }
                    }
                });
            }
            Op::RowFunction { x, jacobian } => {
                let d = self.shape(*x)[1];
                self.accumulate(grads, *x, |gx| {
                    for (r, &gr) in g.iter().enumerate() {
                        for j in 0..d {
                            gx[r * d + j] += gr * jacobian[r * d + j];
                        }
                    }
                });
            }
        }
    }

    /// Writes `∂loss/∂param` for every parameter of `store` (zero for
    /// parameters absent from the tape) and clears the tape.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let grads = self.gradients(loss)?;
        let mut fresh: Vec<Option<Vec<f64>>> = (0..store.len()).map(|_| None).collect();
        for &(id, v) in &self.params {
            if let Some(g) = grads.get(v) {
                if let Some(k) = g.iter().position(|x| !x.is_finite()) {
                    let name = String::from(store.name(id));
                    self.clear();
                    return Err(Error::NonFinite(format!(
                        "gradient of parameter {name}[{k}]"
                    )));
                }
                fresh[id.index()] = Some(g.to_vec());
            }
        }
        for (i, g) in fresh.into_iter().enumerate() {
            let id = ParamId::from_index(i);
            let g = g.unwrap_or_else(|| vec![0.0; store.value(id).numel()]);
            store.set_grad(id, g);
        }
        self.clear();
        Ok(())
    }
}
