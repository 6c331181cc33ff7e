use std::cell::RefCell;
use std::rc::Rc;

use super::Tensor;
use crate::error::{Error, Result};

/// Shape information for a periodic (wrap-around) 2-D convolution.
///
/// Inputs are laid out `[batch, in_ch * height * width]`, channel-major; the
/// kernel is `[out_ch, in_ch, kh, kw]`. Padding wraps so the spatial shape is
/// preserved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dGeometry {
    pub batch: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Constant,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    /// `a @ b` or `a @ b^T` when `bt` is set.
    MatMul { a: usize, b: usize, bt: bool },
    AddRow(usize, usize),
    Tanh(usize),
    Relu(usize),
    PRelu(usize, f64),
    Softplus(usize),
    Sigmoid(usize),
    LogCosh(usize),
    Abs(usize),
    Sum(usize),
    Mean(usize),
    ConcatCols(Vec<usize>),
    SliceCols { src: usize, start: usize },
    Reshape(usize),
    /// `base + sum(c_i * v_i)`.
    LinComb { base: usize, terms: Vec<(f64, usize)> },
    Conv2d {
        x: usize,
        kernel: usize,
        bias: usize,
        geom: Conv2dGeometry,
    },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Rc<[f64]>,
    op: Op,
    requires_grad: bool,
}

/// Records operations for reverse-mode differentiation.
///
/// One tape serves one forward/backward pass. Nodes are appended in
/// evaluation order, so inputs always precede the nodes that consume them.
#[derive(Debug, Default)]
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
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

/// Leaf gradients produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    sizes: Vec<usize>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`; zeros when the loss does
    /// not depend on it.
    pub fn wrt(&self, var: Var<'_>) -> Vec<f64> {
        match self.grads.get(var.id).and_then(|g| g.as_ref()) {
            Some(g) => g.clone(),
            None => vec![0.0; self.sizes.get(var.id).copied().unwrap_or_else(|| var.numel())],
        }
    }

    /// Adds the gradient for `var` into `tensor`'s gradient buffer.
    pub fn accumulate_into(&self, var: Var<'_>, tensor: &mut Tensor) -> Result<()> {
        if !tensor.requires_grad() {
            return Ok(());
        }
        tensor.accumulate_grad(&self.wrt(var))
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
        self.len() == 0
    }

    fn push(&self, shape: Vec<usize>, value: Vec<f64>, op: Op, requires_grad: bool) -> Var<'_> {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            shape,
            value: value.into(),
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Records `tensor` as a leaf; it participates in gradients when the
    /// tensor has `requires_grad` set.
    pub fn leaf(&self, tensor: &Tensor) -> Var<'_> {
        self.push(
            tensor.shape().to_vec(),
            tensor.data().to_vec(),
            Op::Leaf,
            tensor.requires_grad(),
        )
    }

    pub fn constant(&self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var<'_>> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::shape("constant", &shape, &[data.len()]));
        }
        Ok(self.push(shape, data, Op::Constant, false))
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.push(Vec::new(), vec![value], Op::Constant, false)
    }

    /// Back-propagates from the scalar `loss`, returning gradients for every
    /// leaf that requires them. Each node is visited once, in reverse order.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(Error::DetachedTensor);
        }
        let nodes = self.nodes.borrow();
        let root = nodes.get(loss.id).ok_or(Error::DetachedTensor)?;
        if !root.shape.is_empty() {
            return Err(Error::NotScalar(root.shape.clone()));
        }
        let count = loss.id + 1;
        let sizes: Vec<usize> = nodes.iter().map(|n| n.value.len()).collect();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; count];
        if root.requires_grad {
            grads[loss.id] = Some(vec![1.0]);
        }
        let mut leaves: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];

        for id in (0..count).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            match &node.op {
                Op::Leaf => {
                    leaves[id] = Some(g);
                }
                Op::Constant => {}
                Op::Add(a, b) => {
                    accumulate(&mut grads, &nodes, *a, |ga| add_into(ga, &g));
                    accumulate(&mut grads, &nodes, *b, |gb| add_into(gb, &g));
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, &nodes, *a, |ga| add_into(ga, &g));
                    accumulate(&mut grads, &nodes, *b, |gb| {
                        gb.iter_mut().zip(&g).for_each(|(x, d)| *x -= d)
                    });
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (nodes[*a].value.clone(), nodes[*b].value.clone());
                    accumulate(&mut grads, &nodes, *a, |ga| {
                        for i in 0..ga.len() {
                            ga[i] += g[i] * vb[i];
                        }
                    });
                    accumulate(&mut grads, &nodes, *b, |gb| {
                        for i in 0..gb.len() {
                            gb[i] += g[i] * va[i];
                        }
                    });
                }
                Op::Scale(a, c) => {
                    accumulate(&mut grads, &nodes, *a, |ga| {
                        ga.iter_mut().zip(&g).for_each(|(x, d)| *x += c * d)
                    });
                }
                Op::AddScalar(a) | Op::Reshape(a) => {
                    accumulate(&mut grads, &nodes, *a, |ga| add_into(ga, &g));
                }
                Op::MatMul { a, b, bt } => {
                    let (sa, sb) = (&nodes[*a].shape, &nodes[*b].shape);
                    let (m, k) = (sa[0], sa[1]);
                    let n = if *bt { sb[0] } else { sb[1] };
                    let (va, vb) = (nodes[*a].value.clone(), nodes[*b].value.clone());
                    accumulate(&mut grads, &nodes, *a, |ga| {
                        // dA = dC @ B^T  (or dC @ B when C = A @ B^T)
                        gemm(m, n, k, &g, false, &vb, !*bt, ga, 1.0);
                    });
                    accumulate(&mut grads, &nodes, *b, |gb| {
                        if *bt {
                            // dB = dC^T @ A, B is n x k
                            gemm(n, m, k, &g, true, &va, false, gb, 1.0);
                        } else {
                            // dB = A^T @ dC, B is k x n
                            gemm(k, m, n, &va, true, &g, false, gb, 1.0);
                        }
                    });
                }
                Op::AddRow(a, row) => {
                    accumulate(&mut grads, &nodes, *a, |ga| add_into(ga, &g));
                    let cols = nodes[*row].value.len();
                    accumulate(&mut grads, &nodes, *row, |gr| {
                        for chunk in g.chunks(cols) {
                            add_into(gr, chunk);
                        }
                    });
                }
                Op::Tanh(a) => {
                    let y = node.value.clone();
                    accumulate(&mut grads, &nodes, *a, |ga| {
                        for i in 0..ga.len() {
                            ga[i] += g[i] * (1.0 - y[i] * y[i]);
                        }
                    });
                }
                Op::Relu(a) => {
                    let x = nodes[*a].value.clone();
                    accumulate(&mut grads, &nodes, *a, |ga| {
                        for i in 0..ga.len() {
                            if x[i] > 0.0 {
                                ga[i] += g[i];
                            }
                        }
                    });
                }
                Op::PRelu(a, slope) => {
                    let x = nodes[*a].value.clone();
                    accumulate(&mut grads, &nodes, *a, |ga| {
                        for i in 0..ga.len() {
                            ga[i] += if x[i] > 0.0 { g[i] } else { slope * g[i] };
                        }
                    });
                }
                Op::Softplus(a) => {
                    let x = nodes[*a].value.clone();
                    accumulate(&mut grads, &nodes, *a, |ga| {
                        for i in 0..ga.len() {
                            ga[i] += g[i] * sigmoid(x[i]);
                        }
                    });
                }
                Op::Sigmoid(a) => {
                    let y = node.value.clone();
                    accumulate(&mut grads, &nodes, *a, |ga| {
                        for i in 0..ga.len() {
                            ga[i] += g[i] * y[i] * (1.0 - y[i]);
                        }
                    });
                }
                Op::LogCosh(a) => {
                    let x = nodes[*a].value.clone();
                    accumulate(&mut grads, &nodes, *a, |ga| {
                        for i in 0..ga.len() {
                            ga[i] += g[i] * x[i].tanh();
                        }
                    });
                }
                Op::Abs(a) => {
                    let x = nodes[*a].value.clone();
                    accumulate(&mut grads, &nodes, *a, |ga| {
                        for i in 0..ga.len() {
                            ga[i] += g[i] * sign(x[i]);
                        }
                    });
                }
                Op::Sum(a) => {
                    accumulate(&mut grads, &nodes, *a, |ga| ga.iter_mut().for_each(|x| *x += g[0]));
                }
                Op::Mean(a) => {
                    let scale = g[0] / sizes[*a] as f64;
                    accumulate(&mut grads, &nodes, *a, |ga| ga.iter_mut().for_each(|x| *x += scale));
                }
                Op::ConcatCols(parts) => {
                    let rows = node.shape[0];
                    let total = node.shape[1];
                    let mut offset = 0;
                    for &p in parts {
                        let cols = nodes[p].shape[1];
                        accumulate(&mut grads, &nodes, p, |gp| {
                            for r in 0..rows {
                                add_into(
                                    &mut gp[r * cols..(r + 1) * cols],
                                    &g[r * total + offset..r * total + offset + cols],
                                );
                            }
                        });
                        offset += cols;
                    }
                }
                Op::SliceCols { src, start } => {
                    let rows = node.shape[0];
                    let cols = node.shape[1];
                    let total = nodes[*src].shape[1];
                    accumulate(&mut grads, &nodes, *src, |gs| {
                        for r in 0..rows {
                            add_into(
                                &mut gs[r * total + start..r * total + start + cols],
                                &g[r * cols..(r + 1) * cols],
                            );
                        }
                    });
                }
                Op::LinComb { base, terms } => {
                    accumulate(&mut grads, &nodes, *base, |gb| add_into(gb, &g));
                    for &(c, t) in terms {
                        accumulate(&mut grads, &nodes, t, |gt| {
                            gt.iter_mut().zip(&g).for_each(|(x, d)| *x += c * d)
                        });
                    }
                }
                Op::Conv2d {
                    x,
                    kernel,
                    bias,
                    geom,
                } => {
                    let (vx, vk) = (nodes[*x].value.clone(), nodes[*kernel].value.clone());
                    accumulate(&mut grads, &nodes, *x, |gx| conv2d_backward_input(geom, &vk, &g, gx));
                    accumulate(&mut grads, &nodes, *kernel, |gk| {
                        conv2d_backward_kernel(geom, &vx, &g, gk)
                    });
                    accumulate(&mut grads, &nodes, *bias, |gb| {
                        let plane = geom.height * geom.width;
                        for b in 0..geom.batch {
                            for o in 0..geom.out_ch {
                                let base = (b * geom.out_ch + o) * plane;
                                gb[o] += g[base..base + plane].iter().sum::<f64>();
                            }
                        }
                    });
                }
            }
        }
        Ok(Gradients {
            grads: leaves,
            sizes,
        })
    }
}

fn accumulate(
    grads: &mut [Option<Vec<f64>>],
    nodes: &[Node],
    id: usize,
    f: impl FnOnce(&mut [f64]),
) {
    if !nodes[id].requires_grad {
        return;
    }
    let buf = grads[id].get_or_insert_with(|| vec![0.0; nodes[id].value.len()]);
    f(buf);
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `ln(cosh(x))` without overflow: `|x| + ln((1 + exp(-2|x|)) / 2)`.
pub(crate) fn logcosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

/// `C = op(A) @ op(B) + beta * C`, where `op(A)` is `m x k` and `op(B)` is
/// `k x n`. A transposed operand is stored row-major in its untransposed
/// shape.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    c: &mut [f64],
    beta: f64,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slices hold exactly m*k, k*n and m*n elements and the
    // strides above address them within bounds.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn wrap(i: usize, d: usize, pad: usize, size: usize) -> usize {
    (i + d + size - pad % size) % size
}

/// `out[j] += w * x[(j + shift) % len]` as two contiguous runs.
fn shifted_axpy(out: &mut [f64], w: f64, x: &[f64], shift: usize) {
    let split = out.len() - shift;
    for (o, v) in out[..split].iter_mut().zip(&x[shift..]) {
        *o += w * v;
    }
    for (o, v) in out[split..].iter_mut().zip(&x[..shift]) {
        *o += w * v;
    }
}

/// `sum_j g[j] * x[(j + shift) % len]`.
fn shifted_dot(g: &[f64], x: &[f64], shift: usize) -> f64 {
    let split = g.len() - shift;
    let a: f64 = g[..split].iter().zip(&x[shift..]).map(|(p, q)| p * q).sum();
    let b: f64 = g[split..].iter().zip(&x[..shift]).map(|(p, q)| p * q).sum();
    a + b
}

fn conv2d_forward(geom: &Conv2dGeometry, x: &[f64], k: &[f64], bias: &[f64]) -> Vec<f64> {
    let Conv2dGeometry {
        batch,
        in_ch,
        out_ch,
        height,
        width,
        kh,
        kw,
    } = *geom;
    let plane = height * width;
    let (ph, pw) = (kh / 2, kw / 2);
    let mut out = vec![0.0; batch * out_ch * plane];
    for b in 0..batch {
        for o in 0..out_ch {
            let obase = (b * out_ch + o) * plane;
            out[obase..obase + plane].iter_mut().for_each(|v| *v = bias[o]);
            for c in 0..in_ch {
                let xbase = (b * in_ch + c) * plane;
                for di in 0..kh {
                    for dj in 0..kw {
                        let w = k[((o * in_ch + c) * kh + di) * kw + dj];
                        if w == 0.0 {
                            continue;
                        }
                        let sj = wrap(0, dj, pw, width);
                        for i in 0..height {
                            let si = wrap(i, di, ph, height);
                            let row = obase + i * width;
                            let src = xbase + si * width;
                            shifted_axpy(&mut out[row..row + width], w, &x[src..src + width], sj);
                        }
                    }
                }
            }
        }
    }
    out
}

fn conv2d_backward_input(geom: &Conv2dGeometry, k: &[f64], g: &[f64], gx: &mut [f64]) {
    let (height, width) = (geom.height, geom.width);
    let plane = height * width;
    let (ph, pw) = (geom.kh / 2, geom.kw / 2);
    for b in 0..geom.batch {
        for o in 0..geom.out_ch {
            let obase = (b * geom.out_ch + o) * plane;
            for c in 0..geom.in_ch {
                let xbase = (b * geom.in_ch + c) * plane;
                for di in 0..geom.kh {
                    for dj in 0..geom.kw {
                        let w = k[((o * geom.in_ch + c) * geom.kh + di) * geom.kw + dj];
                        // gx[(j + s) % W] += w g[j]  <=>  gx[m] += w g[(m + W - s) % W].
                        let back = (width - wrap(0, dj, pw, width)) % width;
                        for i in 0..height {
                            let si = wrap(i, di, ph, height);
                            let dst = xbase + si * width;
                            let row = obase + i * width;
                            shifted_axpy(&mut gx[dst..dst + width], w, &g[row..row + width], back);
                        }
                    }
                }
            }
        }
    }
}

fn conv2d_backward_kernel(geom: &Conv2dGeometry, x: &[f64], g: &[f64], gk: &mut [f64]) {
    let (height, width) = (geom.height, geom.width);
    let plane = height * width;
    let (ph, pw) = (geom.kh / 2, geom.kw / 2);
    for b in 0..geom.batch {
        for o in 0..geom.out_ch {
            let obase = (b * geom.out_ch + o) * plane;
            for c in 0..geom.in_ch {
                let xbase = (b * geom.in_ch + c) * plane;
                for di in 0..geom.kh {
                    for dj in 0..geom.kw {
                        let sj = wrap(0, dj, pw, width);
                        let mut acc = 0.0;
                        for i in 0..height {
                            let si = wrap(i, di, ph, height);
                            let row = obase + i * width;
                            let src = xbase + si * width;
                            acc += shifted_dot(&g[row..row + width], &x[src..src + width], sj);
                        }
                        gk[((o * geom.in_ch + c) * geom.kh + di) * geom.kw + dj] += acc;
                    }
                }
            }
        }
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.tape.nodes.borrow()[self.id].value.len()
    }

    /// Shared handle to the recorded value.
    pub fn value(&self) -> Rc<[f64]> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.value().to_vec()
    }

    /// Value of a single-element variable.
    pub fn item(&self) -> f64 {
        self.tape.nodes.borrow()[self.id].value[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    fn same_tape(&self, other: &Var<'_>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::DetachedTensor)
        }
    }

    fn unary(&self, op: Op, f: impl Fn(f64) -> f64) -> Var<'t> {
        let (shape, value, rg) = {
            let nodes = self.tape.nodes.borrow();
            let n = &nodes[self.id];
            (n.shape.clone(), n.value.iter().map(|&v| f(v)).collect(), n.requires_grad)
        };
        self.tape.push(shape, value, op, rg)
    }

    fn elementwise(
        &self,
        other: Var<'t>,
        name: &'static str,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var<'t>> {
        self.same_tape(&other)?;
        let (shape, value, rg) = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id], &nodes[other.id]);
            if a.shape != b.shape {
                return Err(Error::shape(name, &a.shape, &b.shape));
            }
            let value = a.value.iter().zip(b.value.iter()).map(|(&x, &y)| f(x, y)).collect();
            (a.shape.clone(), value, a.requires_grad || b.requires_grad)
        };
        Ok(self.tape.push(shape, value, op, rg))
    }

    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.elementwise(other, "add", Op::Add(self.id, other.id), |a, b| a + b)
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.elementwise(other, "sub", Op::Sub(self.id, other.id), |a, b| a - b)
    }

    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.elementwise(other, "mul", Op::Mul(self.id, other.id), |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Var<'t> {
        self.unary(Op::Scale(self.id, c), |v| c * v)
    }

    pub fn add_scalar(&self, c: f64) -> Var<'t> {
        self.unary(Op::AddScalar(self.id), |v| v + c)
    }

    pub fn neg(&self) -> Var<'t> {
        self.scale(-1.0)
    }

    pub fn square(&self) -> Var<'t> {
        self.mul(*self).expect("identical shapes")
    }

    fn matmul_impl(&self, other: Var<'t>, bt: bool, name: &'static str) -> Result<Var<'t>> {
        self.same_tape(&other)?;
        let (shape, value, rg) = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id], &nodes[other.id]);
            if a.shape.len() != 2 || b.shape.len() != 2 {
                return Err(Error::shape(name, &a.shape, &b.shape));
            }
            let (m, k) = (a.shape[0], a.shape[1]);
            let (kb, n) = if bt {
                (b.shape[1], b.shape[0])
            } else {
                (b.shape[0], b.shape[1])
            };
            if k != kb {
                return Err(Error::shape(name, &a.shape, &b.shape));
            }
            let mut out = vec![0.0; m * n];
            gemm(m, k, n, &a.value, false, &b.value, bt, &mut out, 0.0);
            (vec![m, n], out, a.requires_grad || b.requires_grad)
        };
        Ok(self.tape.push(
            shape,
            value,
            Op::MatMul {
                a: self.id,
                b: other.id,
                bt,
            },
            rg,
        ))
    }

    /// Matrix product `self @ other`.
    pub fn matmul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.matmul_impl(other, false, "matmul")
    }

    /// Matrix product with the right operand transposed: `self @ other^T`.
    pub fn matmul_bt(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.matmul_impl(other, true, "matmul_bt")
    }

    /// Adds a length-`cols` vector to every row of a `[rows, cols]` matrix.
    pub fn add_row(&self, row: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&row)?;
        let (shape, value, rg) = {
            let nodes = self.tape.nodes.borrow();
            let (a, r) = (&nodes[self.id], &nodes[row.id]);
            if a.shape.len() != 2 || r.value.len() != a.shape[1] {
                return Err(Error::shape("add_row", &a.shape, &r.shape));
            }
            let cols = a.shape[1];
            let mut out = a.value.to_vec();
            for chunk in out.chunks_mut(cols) {
                add_into(chunk, &r.value);
            }
            (a.shape.clone(), out, a.requires_grad || r.requires_grad)
        };
        Ok(self.tape.push(shape, value, Op::AddRow(self.id, row.id), rg))
    }

    pub fn tanh(&self) -> Var<'t> {
        self.unary(Op::Tanh(self.id), f64::tanh)
    }

    pub fn relu(&self) -> Var<'t> {
        self.unary(Op::Relu(self.id), |v| v.max(0.0))
    }

    pub fn prelu(&self, slope: f64) -> Var<'t> {
        self.unary(Op::PRelu(self.id, slope), move |v| if v > 0.0 { v } else { slope * v })
    }

    pub fn softplus(&self) -> Var<'t> {
        self.unary(Op::Softplus(self.id), softplus)
    }

    pub fn sigmoid(&self) -> Var<'t> {
        self.unary(Op::Sigmoid(self.id), sigmoid)
    }

    pub fn logcosh(&self) -> Var<'t> {
        self.unary(Op::LogCosh(self.id), logcosh)
    }

    pub fn abs(&self) -> Var<'t> {
        self.unary(Op::Abs(self.id), f64::abs)
    }

    pub fn sum(&self) -> Var<'t> {
        let (total, rg) = {
            let nodes = self.tape.nodes.borrow();
            let n = &nodes[self.id];
            (n.value.iter().sum::<f64>(), n.requires_grad)
        };
        self.tape.push(Vec::new(), vec![total], Op::Sum(self.id), rg)
    }

    pub fn mean(&self) -> Var<'t> {
        let (mean, rg) = {
            let nodes = self.tape.nodes.borrow();
            let n = &nodes[self.id];
            (n.value.iter().sum::<f64>() / n.value.len().max(1) as f64, n.requires_grad)
        };
        self.tape.push(Vec::new(), vec![mean], Op::Mean(self.id), rg)
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Var<'t>> {
        let (value, rg) = {
            let nodes = self.tape.nodes.borrow();
            let n = &nodes[self.id];
            if shape.iter().product::<usize>() != n.value.len() {
                return Err(Error::shape("reshape", &n.shape, &shape));
            }
            (n.value.to_vec(), n.requires_grad)
        };
        Ok(self.tape.push(shape, value, Op::Reshape(self.id), rg))
    }

    /// Columns `start..end` of a `[rows, cols]` matrix.
    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Var<'t>> {
        let (shape, value, rg) = {
            let nodes = self.tape.nodes.borrow();
            let n = &nodes[self.id];
            if n.shape.len() != 2 || start > end || end > n.shape[1] {
                return Err(Error::shape("slice_cols", &n.shape, &[start, end]));
            }
            let (rows, total) = (n.shape[0], n.shape[1]);
            let cols = end - start;
            let mut out = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                out.extend_from_slice(&n.value[r * total + start..r * total + end]);
            }
            (vec![rows, cols], out, n.requires_grad)
        };
        Ok(self.tape.push(shape, value, Op::SliceCols { src: self.id, start }, rg))
    }

    /// Concatenates `[rows, c_i]` matrices along columns.
    pub fn concat_cols(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = parts.first().ok_or(Error::EmptySet)?;
        for p in parts {
            first.same_tape(p)?;
        }
        let tape = first.tape;
        let (shape, value, rg) = {
            let nodes = tape.nodes.borrow();
            let rows = nodes[first.id].shape.first().copied().unwrap_or(0);
            let mut total = 0;
            let mut rg = false;
            for p in parts {
                let s = &nodes[p.id].shape;
                if s.len() != 2 || s[0] != rows {
                    return Err(Error::shape("concat_cols", &nodes[first.id].shape, s));
                }
                total += s[1];
                rg |= nodes[p.id].requires_grad;
            }
            let mut out = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for p in parts {
                    let n = &nodes[p.id];
                    let c = n.shape[1];
                    out.extend_from_slice(&n.value[r * c..(r + 1) * c]);
                }
            }
            (vec![rows, total], out, rg)
        };
        Ok(tape.push(
            shape,
            value,
            Op::ConcatCols(parts.iter().map(|p| p.id).collect()),
            rg,
        ))
    }

    /// `self + sum(c_i * v_i)` as one recorded node.
    pub fn lincomb(&self, terms: &[(f64, Var<'t>)]) -> Result<Var<'t>> {
        for (_, v) in terms {
            self.same_tape(v)?;
        }
        let (shape, value, rg) = {
            let nodes = self.tape.nodes.borrow();
            let base = &nodes[self.id];
            let mut out = base.value.to_vec();
            let mut rg = base.requires_grad;
            for (c, v) in terms {
                let n = &nodes[v.id];
                if n.shape != base.shape {
                    return Err(Error::shape("lincomb", &base.shape, &n.shape));
                }
                rg |= n.requires_grad;
                out.iter_mut().zip(n.value.iter()).for_each(|(o, x)| *o += c * x);
            }
            (base.shape.clone(), out, rg)
        };
        Ok(self.tape.push(
            shape,
            value,
            Op::LinComb {
                base: self.id,
                terms: terms.iter().map(|(c, v)| (*c, v.id)).collect(),
            },
            rg,
        ))
    }

    /// Periodic 2-D convolution of `self` (`[batch, in_ch*h*w]`) with
    /// `kernel` (`[out_ch, in_ch, kh, kw]`) plus per-channel `bias`.
    pub fn conv2d_periodic(&self, kernel: Var<'t>, bias: Var<'t>, geom: Conv2dGeometry) -> Result<Var<'t>> {
        self.same_tape(&kernel)?;
        self.same_tape(&bias)?;
        let (value, rg) = {
            let nodes = self.tape.nodes.borrow();
            let (x, k, b) = (&nodes[self.id], &nodes[kernel.id], &nodes[bias.id]);
            let plane = geom.height * geom.width;
            let expected_x = [geom.batch, geom.in_ch * plane];
            if x.shape != expected_x {
                return Err(Error::shape("conv2d", &x.shape, &expected_x));
            }
            let expected_k = [geom.out_ch, geom.in_ch, geom.kh, geom.kw];
            if k.shape != expected_k {
                return Err(Error::shape("conv2d", &k.shape, &expected_k));
            }
            if b.value.len() != geom.out_ch {
                return Err(Error::shape("conv2d", &b.shape, &[geom.out_ch]));
            }
            (
                conv2d_forward(&geom, &x.value, &k.value, &b.value),
                x.requires_grad || k.requires_grad || b.requires_grad,
            )
        };
        Ok(self.tape.push(
            vec![geom.batch, geom.out_ch * geom.height * geom.width],
            value,
            Op::Conv2d {
                x: self.id,
                kernel: kernel.id,
                bias: bias.id,
                geom,
            },
            rg,
        ))
    }

    pub fn is_finite(&self) -> bool {
        self.tape.nodes.borrow()[self.id].value.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_selects_first_column() {
        let tape = Tape::new();
        let a = tape.constant(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = tape.constant(vec![2, 1], vec![1.0, 0.0]).unwrap();
        assert_eq!(a.matmul(b).unwrap().to_vec(), vec![1.0, 3.0]);
    }

    #[test]
    fn add_zero_is_identity() {
        let tape = Tape::new();
        let x = tape.constant(vec![3], vec![1.5, -2.0, 7.25]).unwrap();
        assert_eq!(x.add_scalar(0.0).to_vec(), x.to_vec());
        let zero = tape.constant(vec![3], vec![0.0; 3]).unwrap();
        assert_eq!(x.add(zero).unwrap().to_vec(), x.to_vec());
    }

    #[test]
    fn shape_mismatch_reports_both_shapes() {
        let tape = Tape::new();
        let a = tape.constant(vec![2, 3], vec![0.0; 6]).unwrap();
        let b = tape.constant(vec![2, 3], vec![0.0; 6]).unwrap();
        let err = a.matmul(b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "{err}");
        let c = tape.constant(vec![3], vec![0.0; 3]).unwrap();
        let err = a.add(c).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { .. }));
    }

    #[test]
    fn activations_at_known_points() {
        let tape = Tape::new();
        let x = tape.constant(vec![2], vec![-2.5, 3.0]).unwrap();
        assert_eq!(x.relu().to_vec(), vec![0.0, 3.0]);
        let z = tape.scalar(0.0);
        assert_eq!(z.tanh().item(), 0.0);
        assert_eq!(z.logcosh().item(), 0.0);
        // overflow-safe for large arguments
        let big = tape.scalar(800.0);
        assert!((big.logcosh().item() - (800.0 - std::f64::consts::LN_2)).abs() < 1e-12);
    }

    #[test]
    fn grad_of_sum_of_squares() {
        let tape = Tape::new();
        let w = tape.leaf(&Tensor::vector(vec![1.0, 2.0, 3.0]).with_grad());
        let loss = w.mul(w).unwrap().sum();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(w), vec![2.0, 4.0, 6.0]);
    }

    #[test]
    fn independent_leaf_gets_zero_grad() {
        let tape = Tape::new();
        let w = tape.leaf(&Tensor::vector(vec![1.0, 2.0]).with_grad());
        let v = tape.leaf(&Tensor::vector(vec![5.0, 6.0]).with_grad());
        let loss = w.square().sum();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(v), vec![0.0, 0.0]);
    }

    #[test]
    fn logcosh_derivative_is_tanh() {
        let tape = Tape::new();
        let x = tape.leaf(&Tensor::vector(vec![-1.3, 0.0, 0.7, 25.0]).with_grad());
        let g = tape.backward(x.logcosh().sum()).unwrap();
        for (gi, xi) in g.wrt(x).iter().zip([-1.3f64, 0.0, 0.7, 25.0]) {
            assert!((gi - xi.tanh()).abs() < 1e-15);
        }
    }

    #[test]
    fn backward_rejects_non_scalar_and_foreign_loss() {
        let tape = Tape::new();
        let w = tape.leaf(&Tensor::vector(vec![1.0, 2.0]).with_grad());
        assert!(matches!(tape.backward(w), Err(Error::NotScalar(_))));
        let other = Tape::new();
        let loss = other.scalar(1.0);
        assert!(matches!(tape.backward(loss), Err(Error::DetachedTensor)));
    }

    #[test]
    fn accumulate_into_adds_across_passes() {
        let mut t = Tensor::vector(vec![1.0, -1.0]).with_grad();
        for _ in 0..2 {
            let tape = Tape::new();
            let w = tape.leaf(&t);
            let g = tape.backward(w.sum()).unwrap();
            g.accumulate_into(w, &mut t).unwrap();
        }
        assert_eq!(t.grad().unwrap(), &[2.0, 2.0]);
        t.zero_grad();
        assert_eq!(t.grad().unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn conv_unit_kernel_adds_bias() {
        let tape = Tape::new();
        let geom = Conv2dGeometry {
            batch: 1,
            in_ch: 1,
            out_ch: 1,
            height: 2,
            width: 3,
            kh: 1,
            kw: 1,
        };
        let field: Vec<f64> = (0..6).map(|v| v as f64).collect();
        let x = tape.constant(vec![1, 6], field.clone()).unwrap();
        let k = tape.constant(vec![1, 1, 1, 1], vec![1.0]).unwrap();
        let b = tape.constant(vec![1], vec![0.5]).unwrap();
        let y = x.conv2d_periodic(k, b, geom).unwrap();
        let expected: Vec<f64> = field.iter().map(|v| v + 0.5).collect();
        assert_eq!(y.to_vec(), expected);
    }
}
