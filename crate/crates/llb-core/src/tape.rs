//! Reverse-mode autodiff over a flat tape.
//!
//! A [`Ctx`] either records every operation (training) or evaluates eagerly
//! with zero bookkeeping (inference). [`Var`] is a tensor handle valid in
//! both modes, so model code is written once.

use std::cell::RefCell;
use std::rc::Rc;

use crate::kernels;
use crate::tensor::Tensor;

#[derive(Clone)]
pub struct Var {
    val: Tensor,
    id: Option<usize>,
}

impl Var {
    pub fn value(&self) -> &Tensor {
        &self.val
    }

    pub fn shape(&self) -> &[usize] {
        self.val.shape()
    }

    /// Detach from the tape: same value, no gradient path.
    pub fn detach(&self) -> Var {
        Var { val: self.val.clone(), id: None }
    }
}

enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Neg(usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, f64),
    Offset(usize),
    Relu(usize),
    Sigmoid(usize),
    Softplus(usize),
    Abs(usize),
    Sqrt(usize),
    Dot(usize, usize),
    SumAll(usize),
    MeanAll(usize),
    SumLast(usize),
    MulChan(usize, usize),
    AddChan(usize, usize),
    ScaleVar(usize, usize),
    InstNorm(usize, f64),
    MatMul(usize, usize),
    Transpose(usize),
    SoftmaxRows(usize),
    Conv2d { x: usize, w: usize, stride: usize, pad: usize },
    ConvWeightGrad { x: usize, u: usize, pad: usize },
    ConcatLast(usize, usize),
    ConcatRows(usize, usize),
    SliceCols { x: usize, start: usize, len: usize },
    Reshape(usize),
    ResizeBilinear(usize),
    BceWithLogits { z: usize, target: Tensor },
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Clone)]
pub struct Ctx {
    tape: Option<Rc<RefCell<Vec<Node>>>>,
}

impl Ctx {
    /// Recording context: every op becomes a tape node.
    pub fn train() -> Self {
        Ctx { tape: Some(Rc::new(RefCell::new(Vec::new()))) }
    }

    /// Eager context: ops evaluate and record nothing.
    pub fn eval() -> Self {
        Ctx { tape: None }
    }

    pub fn is_recording(&self) -> bool {
        self.tape.is_some()
    }

    pub fn num_nodes(&self) -> usize {
        self.tape.as_ref().map_or(0, |t| t.borrow().len())
    }

    fn push(&self, value: Tensor, op: Op) -> Var {
        match &self.tape {
            None => Var { val: value, id: None },
            Some(t) => {
                let mut tape = t.borrow_mut();
                let id = tape.len();
                tape.push(Node { value: value.clone(), op });
                Var { val: value, id: Some(id) }
            }
        }
    }

    fn ensure(&self, v: &Var) -> usize {
        if let Some(id) = v.id {
            return id;
        }
        let t = self.tape.as_ref().expect("ensure only called when recording");
        let mut tape = t.borrow_mut();
        let id = tape.len();
        tape.push(Node { value: v.val.clone(), op: Op::Leaf });
        id
    }

    fn unary(&self, value: Tensor, a: &Var, op: impl FnOnce(usize) -> Op) -> Var {
        if self.tape.is_none() {
            return Var { val: value, id: None };
        }
        let ia = self.ensure(a);
        self.push(value, op(ia))
    }

    fn binary(&self, value: Tensor, a: &Var, b: &Var, op: impl FnOnce(usize, usize) -> Op) -> Var {
        if self.tape.is_none() {
            return Var { val: value, id: None };
        }
        let ia = self.ensure(a);
        let ib = self.ensure(b);
        self.push(value, op(ia, ib))
    }

    /// Tracked input; gradients can be queried for it after `backward`.
    pub fn leaf(&self, t: Tensor) -> Var {
        match &self.tape {
            None => Var { val: t, id: None },
            Some(_) => self.push(t, Op::Leaf),
        }
    }

    pub fn constant(&self, t: Tensor) -> Var {
        self.leaf(t)
    }

    // ---- elementwise ----

    pub fn add(&self, a: &Var, b: &Var) -> Var {
        self.binary(a.val.zip_map(&b.val, |x, y| x + y), a, b, Op::Add)
    }

    pub fn sub(&self, a: &Var, b: &Var) -> Var {
        self.binary(a.val.zip_map(&b.val, |x, y| x - y), a, b, Op::Sub)
    }

    pub fn neg(&self, a: &Var) -> Var {
        self.unary(a.val.map(|x| -x), a, Op::Neg)
    }

    pub fn mul(&self, a: &Var, b: &Var) -> Var {
        self.binary(a.val.zip_map(&b.val, |x, y| x * y), a, b, Op::Mul)
    }

    pub fn div(&self, a: &Var, b: &Var) -> Var {
        self.binary(a.val.zip_map(&b.val, |x, y| x / y), a, b, Op::Div)
    }

    pub fn scale(&self, a: &Var, c: f64) -> Var {
        self.unary(a.val.map(|x| c * x), a, |i| Op::Scale(i, c))
    }

    pub fn offset(&self, a: &Var, c: f64) -> Var {
        self.unary(a.val.map(|x| x + c), a, Op::Offset)
    }

    pub fn relu(&self, a: &Var) -> Var {
        self.unary(a.val.map(|x| x.max(0.0)), a, Op::Relu)
    }

    pub fn sigmoid(&self, a: &Var) -> Var {
        self.unary(a.val.map(sigmoid), a, Op::Sigmoid)
    }

    pub fn softplus(&self, a: &Var) -> Var {
        // ln(1+e^x) in its overflow-safe form
        self.unary(a.val.map(|x| x.max(0.0) + (-x.abs()).exp().ln_1p()), a, Op::Softplus)
    }

    pub fn abs(&self, a: &Var) -> Var {
        self.unary(a.val.map(f64::abs), a, Op::Abs)
    }

    pub fn sqrt(&self, a: &Var) -> Var {
        self.unary(a.val.map(f64::sqrt), a, Op::Sqrt)
    }

    // ---- reductions ----

    pub fn dot(&self, a: &Var, b: &Var) -> Var {
        assert_eq!(a.val.numel(), b.val.numel(), "dot length mismatch");
        let v = crate::par::dot(a.val.data(), b.val.data());
        self.binary(Tensor::scalar(v), a, b, Op::Dot)
    }

    pub fn sum_all(&self, a: &Var) -> Var {
        self.unary(Tensor::scalar(a.val.sum()), a, Op::SumAll)
    }

    pub fn mean_all(&self, a: &Var) -> Var {
        self.unary(Tensor::scalar(a.val.mean()), a, Op::MeanAll)
    }

    /// Sum over the trailing (channel) axis: `[.., C] -> [..]`.
    pub fn sum_last(&self, a: &Var) -> Var {
        let shape = a.val.shape();
        let c = *shape.last().expect("sum_last needs at least one axis");
        let out_shape: Vec<usize> = shape[..shape.len() - 1].to_vec();
        let rows = a.val.numel() / c;
        let d = a.val.data();
        let mut out = vec![0.0; rows];
        for (r, o) in out.iter_mut().enumerate() {
            *o = d[r * c..(r + 1) * c].iter().sum();
        }
        self.unary(Tensor::from_vec(&out_shape, out), a, Op::SumLast)
    }

    // ---- per-channel affine (broadcast over leading axes) ----

    pub fn mul_chan(&self, x: &Var, w: &Var) -> Var {
        let c = *x.val.shape().last().unwrap();
        assert_eq!(w.val.numel(), c, "per-channel weight length mismatch");
        let wd = w.val.data();
        let val = Tensor::from_fn(x.val.shape(), |i| x.val.at(i) * wd[i % c]);
        self.binary(val, x, w, Op::MulChan)
    }

    pub fn add_chan(&self, x: &Var, b: &Var) -> Var {
        let c = *x.val.shape().last().unwrap();
        assert_eq!(b.val.numel(), c, "per-channel bias length mismatch");
        let bd = b.val.data();
        let val = Tensor::from_fn(x.val.shape(), |i| x.val.at(i) + bd[i % c]);
        self.binary(val, x, b, Op::AddChan)
    }

    /// Tensor times a scalar-valued variable (`s` has one element).
    pub fn scale_var(&self, t: &Var, s: &Var) -> Var {
        assert_eq!(s.val.numel(), 1, "scale_var expects a scalar");
        let sv = s.val.at(0);
        self.binary(t.val.map(|x| x * sv), t, s, Op::ScaleVar)
    }

    // ---- structured ops ----

    pub fn instnorm(&self, x: &Var, eps: f64) -> Var {
        self.unary(kernels::instnorm(&x.val, eps), x, |i| Op::InstNorm(i, eps))
    }

    pub fn matmul(&self, a: &Var, b: &Var) -> Var {
        self.binary(kernels::matmul(&a.val, &b.val), a, b, Op::MatMul)
    }

    pub fn transpose(&self, a: &Var) -> Var {
        self.unary(kernels::transpose2(&a.val), a, Op::Transpose)
    }

    pub fn softmax_rows(&self, a: &Var) -> Var {
        self.unary(kernels::softmax_rows(&a.val), a, Op::SoftmaxRows)
    }

    pub fn conv2d(&self, x: &Var, w: &Var, stride: usize, pad: usize) -> Var {
        let val = kernels::conv2d(&x.val, &w.val, stride, pad);
        if self.tape.is_none() {
            return Var { val, id: None };
        }
        let ix = self.ensure(x);
        let iw = self.ensure(w);
        self.push(val, Op::Conv2d { x: ix, w: iw, stride, pad })
    }

    /// Correlation of an activation with a co-activation, producing a
    /// `[K, K, Cin, Cout]` kernel-shaped tensor (stride 1). This is the
    /// weight-gradient of `conv2d` exposed as a differentiable forward op.
    pub fn conv2d_weight_grad(&self, x: &Var, u: &Var, k: usize, pad: usize) -> Var {
        let val = kernels::conv2d_weight_grad(&x.val, &u.val, k, 1, pad);
        if self.tape.is_none() {
            return Var { val, id: None };
        }
        let ix = self.ensure(x);
        let iu = self.ensure(u);
        self.push(val, Op::ConvWeightGrad { x: ix, u: iu, pad })
    }

    /// Concatenate along the trailing (channel) axis.
    pub fn concat_last(&self, a: &Var, b: &Var) -> Var {
        let (sa, sb) = (a.val.shape(), b.val.shape());
        assert_eq!(&sa[..sa.len() - 1], &sb[..sb.len() - 1], "concat_last leading dims differ");
        let (ca, cb) = (*sa.last().unwrap(), *sb.last().unwrap());
        let rows = a.val.numel() / ca;
        let mut out = Vec::with_capacity(rows * (ca + cb));
        let (da, db) = (a.val.data(), b.val.data());
        for r in 0..rows {
            out.extend_from_slice(&da[r * ca..(r + 1) * ca]);
            out.extend_from_slice(&db[r * cb..(r + 1) * cb]);
        }
        let mut shape = sa.to_vec();
        *shape.last_mut().unwrap() = ca + cb;
        self.binary(Tensor::from_vec(&shape, out), a, b, Op::ConcatLast)
    }

    /// Concatenate two `[rows, C]` matrices along rows.
    pub fn concat_rows(&self, a: &Var, b: &Var) -> Var {
        assert_eq!(a.val.shape()[1], b.val.shape()[1], "concat_rows widths differ");
        let mut out = a.val.data().to_vec();
        out.extend_from_slice(b.val.data());
        let shape = [a.val.shape()[0] + b.val.shape()[0], a.val.shape()[1]];
        self.binary(Tensor::from_vec(&shape, out), a, b, Op::ConcatRows)
    }

    /// Column slice of a `[rows, C]` matrix.
    pub fn slice_cols(&self, x: &Var, start: usize, len: usize) -> Var {
        let (rows, c) = (x.val.shape()[0], x.val.shape()[1]);
        assert!(start + len <= c, "slice_cols out of range");
        let d = x.val.data();
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&d[r * c + start..r * c + start + len]);
        }
        let val = Tensor::from_vec(&[rows, len], out);
        if self.tape.is_none() {
            return Var { val, id: None };
        }
        let ix = self.ensure(x);
        self.push(val, Op::SliceCols { x: ix, start, len })
    }

    pub fn reshape(&self, x: &Var, shape: &[usize]) -> Var {
        self.unary(x.val.reshape(shape), x, Op::Reshape)
    }

    pub fn resize_bilinear(&self, x: &Var, oh: usize, ow: usize) -> Var {
        self.unary(kernels::resize_bilinear(&x.val, oh, ow), x, Op::ResizeBilinear)
    }

    /// Mean binary cross-entropy on logits against a constant target.
    pub fn bce_with_logits(&self, z: &Var, target: &Tensor) -> Var {
        assert_eq!(z.val.numel(), target.numel(), "bce target size mismatch");
        let zd = z.val.data();
        let td = target.data();
        let mut total = 0.0;
        for i in 0..zd.len() {
            let x = zd[i];
            total += x.max(0.0) - x * td[i] + (-x.abs()).exp().ln_1p();
        }
        let val = Tensor::scalar(total / zd.len() as f64);
        if self.tape.is_none() {
            return Var { val, id: None };
        }
        let iz = self.ensure(z);
        self.push(val, Op::BceWithLogits { z: iz, target: target.clone() })
    }

    // ---- backward ----

    /// Reverse sweep from a scalar loss. Returns per-node gradients.
    pub fn backward(&self, loss: &Var) -> Gradients {
        let tape = self.tape.as_ref().expect("backward requires a recording context");
        let nodes = tape.borrow();
        let lid = loss.id.expect("loss is not on this tape");
        assert_eq!(nodes[lid].value.numel(), 1, "backward expects a scalar loss");
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[lid] = Some(Tensor::scalar(1.0));
        for id in (0..=lid).rev() {
            let Some(g) = grads[id].take() else { continue };
            apply_backward(&nodes, id, &g, &mut grads);
            // keep the gradient available for leaf queries
            grads[id] = Some(g);
        }
        Gradients { grads }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn acc(grads: &mut [Option<Tensor>], id: usize, t: Tensor) {
    match &mut grads[id] {
        Some(g) => *g = g.zip_map(&t, |a, b| a + b),
        slot @ None => *slot = Some(t),
    }
}

fn apply_backward(nodes: &[Node], id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
    let val = |i: usize| -> &Tensor { &nodes[i].value };
    match &nodes[id].op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            acc(grads, *a, g.clone());
            acc(grads, *b, g.clone());
        }
        Op::Sub(a, b) => {
            acc(grads, *a, g.clone());
            acc(grads, *b, g.map(|x| -x));
        }
        Op::Neg(a) => acc(grads, *a, g.map(|x| -x)),
        Op::Mul(a, b) => {
            acc(grads, *a, g.zip_map(val(*b), |gv, bv| gv * bv));
            acc(grads, *b, g.zip_map(val(*a), |gv, av| gv * av));
        }
        Op::Div(a, b) => {
            let y = &nodes[id].value;
            acc(grads, *a, g.zip_map(val(*b), |gv, bv| gv / bv));
            let gb = Tensor::from_fn(g.shape(), |i| -g.at(i) * y.at(i) / val(*b).at(i));
            acc(grads, *b, gb);
        }
        Op::Scale(a, c) => acc(grads, *a, g.map(|x| c * x)),
        Op::Offset(a) => acc(grads, *a, g.clone()),
        Op::Relu(a) => acc(grads, *a, g.zip_map(val(*a), |gv, x| if x > 0.0 { gv } else { 0.0 })),
        Op::Sigmoid(a) => {
            let y = &nodes[id].value;
            acc(grads, *a, g.zip_map(y, |gv, yv| gv * yv * (1.0 - yv)));
        }
        Op::Softplus(a) => acc(grads, *a, g.zip_map(val(*a), |gv, x| gv * sigmoid(x))),
        Op::Abs(a) => acc(grads, *a, g.zip_map(val(*a), |gv, x| gv * sign0(x))),
        Op::Sqrt(a) => {
            let y = &nodes[id].value;
            acc(grads, *a, g.zip_map(y, |gv, yv| gv * 0.5 / yv));
        }
        Op::Dot(a, b) => {
            let gv = g.at(0);
            acc(grads, *a, val(*b).map(|x| gv * x));
            acc(grads, *b, val(*a).map(|x| gv * x));
        }
        Op::SumAll(a) => {
            let gv = g.at(0);
            acc(grads, *a, Tensor::full(val(*a).shape(), gv));
        }
        Op::MeanAll(a) => {
            let gv = g.at(0) / val(*a).numel() as f64;
            acc(grads, *a, Tensor::full(val(*a).shape(), gv));
        }
        Op::SumLast(a) => {
            let xs = val(*a).shape();
            let c = *xs.last().unwrap();
            acc(grads, *a, Tensor::from_fn(xs, |i| g.at(i / c)));
        }
        Op::MulChan(x, w) => {
            let c = *val(*x).shape().last().unwrap();
            let wd = val(*w).data();
            acc(grads, *x, Tensor::from_fn(val(*x).shape(), |i| g.at(i) * wd[i % c]));
            let xd = val(*x).data();
            let gd = g.data();
            let mut gw = vec![0.0; c];
            for i in 0..gd.len() {
                gw[i % c] += gd[i] * xd[i];
            }
            acc(grads, *w, Tensor::from_vec(val(*w).shape(), gw));
        }
        Op::AddChan(x, b) => {
            acc(grads, *x, g.clone());
            let c = *val(*x).shape().last().unwrap();
            let gd = g.data();
            let mut gb = vec![0.0; c];
            for i in 0..gd.len() {
                gb[i % c] += gd[i];
            }
            acc(grads, *b, Tensor::from_vec(val(*b).shape(), gb));
        }
        Op::ScaleVar(t, s) => {
            let sv = val(*s).at(0);
            acc(grads, *t, g.map(|x| x * sv));
            let gs = crate::par::dot(g.data(), val(*t).data());
            acc(grads, *s, Tensor::scalar(gs));
        }
        Op::InstNorm(x, eps) => {
            acc(grads, *x, kernels::instnorm_backward(val(*x), g, *eps));
        }
        Op::MatMul(a, b) => {
            let bt = kernels::transpose2(val(*b));
            acc(grads, *a, kernels::matmul(g, &bt));
            let at = kernels::transpose2(val(*a));
            acc(grads, *b, kernels::matmul(&at, g));
        }
        Op::Transpose(a) => acc(grads, *a, kernels::transpose2(g)),
        Op::SoftmaxRows(a) => {
            let y = &nodes[id].value;
            let (m, n) = (y.shape()[0], y.shape()[1]);
            let yd = y.data();
            let gd = g.data();
            let mut gx = vec![0.0; m * n];
            for r in 0..m {
                let ys = &yd[r * n..(r + 1) * n];
                let gs = &gd[r * n..(r + 1) * n];
                let dotv: f64 = ys.iter().zip(gs.iter()).map(|(y, gg)| y * gg).sum();
                for j in 0..n {
                    gx[r * n + j] = ys[j] * (gs[j] - dotv);
                }
            }
            acc(grads, *a, Tensor::from_vec(&[m, n], gx));
        }
        Op::Conv2d { x, w, stride, pad } => {
            let xs = val(*x).shape();
            acc(grads, *x, kernels::conv2d_input_grad(g, val(*w), *stride, *pad, xs[0], xs[1]));
            let k = val(*w).shape()[0];
            acc(grads, *w, kernels::conv2d_weight_grad(val(*x), g, k, *stride, *pad));
        }
        Op::ConvWeightGrad { x, u, pad } => {
            let xs = val(*x).shape();
            acc(grads, *x, kernels::conv2d_input_grad(val(*u), g, 1, *pad, xs[0], xs[1]));
            acc(grads, *u, kernels::conv2d(val(*x), g, 1, *pad));
        }
        Op::ConcatLast(a, b) => {
            let (ca, cb) = (*val(*a).shape().last().unwrap(), *val(*b).shape().last().unwrap());
            let rows = val(*a).numel() / ca;
            let gd = g.data();
            let mut ga = Vec::with_capacity(rows * ca);
            let mut gb = Vec::with_capacity(rows * cb);
            for r in 0..rows {
                let base = r * (ca + cb);
                ga.extend_from_slice(&gd[base..base + ca]);
                gb.extend_from_slice(&gd[base + ca..base + ca + cb]);
            }
            acc(grads, *a, Tensor::from_vec(val(*a).shape(), ga));
            acc(grads, *b, Tensor::from_vec(val(*b).shape(), gb));
        }
        Op::ConcatRows(a, b) => {
            let na = val(*a).numel();
            let gd = g.data();
            acc(grads, *a, Tensor::from_vec(val(*a).shape(), gd[..na].to_vec()));
            acc(grads, *b, Tensor::from_vec(val(*b).shape(), gd[na..].to_vec()));
        }
        Op::SliceCols { x, start, len } => {
            let (rows, c) = (val(*x).shape()[0], val(*x).shape()[1]);
            let gd = g.data();
            let mut gx = vec![0.0; rows * c];
            for r in 0..rows {
                gx[r * c + start..r * c + start + len].copy_from_slice(&gd[r * len..(r + 1) * len]);
            }
            acc(grads, *x, Tensor::from_vec(val(*x).shape(), gx));
        }
        Op::Reshape(a) => acc(grads, *a, g.reshape(val(*a).shape())),
        Op::ResizeBilinear(a) => {
            let xs = val(*a).shape();
            acc(grads, *a, kernels::resize_bilinear_backward(g, xs[0], xs[1]));
        }
        Op::BceWithLogits { z, target } => {
            let n = val(*z).numel() as f64;
            let gv = g.at(0);
            let gz = val(*z).zip_map(target, |x, t| gv * (sigmoid(x) - t) / n);
            acc(grads, *z, gz);
        }
    }
}

fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: &Var) -> Option<&Tensor> {
        v.id.and_then(|i| self.grads.get(i).and_then(|g| g.as_ref()))
    }

    /// Gradient of a tracked leaf, zeros when the loss never touched it.
    pub fn of(&self, v: &Var) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(v.value().shape()))
    }
}
