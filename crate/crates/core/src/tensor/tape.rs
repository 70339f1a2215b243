use super::ops::{self, Activation};
use super::{Element, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Binary(Binary, Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    MatMul {
        a: Var,
        b: Var,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        b_shared: bool,
    },
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Sum(Var, Option<usize>),
    Mean(Var, Option<usize>),
    Act(Var, Activation),
    Softmax(Var, usize),
    LayerNorm {
        x: Var,
        gain: Var,
        shift: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    BceWithLogits(Var, Var),
    Mse(Var, Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    requires_grad: bool,
    op: Op<T>,
    grad: Option<Tensor<T>>,
}

/// Define-by-run recording of one forward pass.
///
/// Nodes are appended in execution order, so every node's inputs precede it
/// and a single reverse sweep visits each node once.
#[derive(Debug, Default)]
pub struct Tape<T: Element = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    /// A leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<T>> {
        self.nodes[v.0].grad.take()
    }

    fn push(&mut self, value: Tensor<T>, requires_grad: bool, op: Op<T>) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn unary(&mut self, a: Var, value: Tensor<T>, op: Op<T>) -> Var {
        let rg = self.requires_grad(a);
        self.push(value, rg, op)
    }

    fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    // ---- elementwise ----------------------------------------------------

    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if !ops::broadcastable(sa, sb) {
            return Err(TensorError::ShapeMismatch {
                op: "elementwise",
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        let shape = sa.to_vec();
        let (ad, bd) = (self.data(a), self.data(b));
        let data = match kind {
            Binary::Add => broadcast_zip(ad, bd, |x, y| x + y),
            Binary::Sub => broadcast_zip(ad, bd, |x, y| x - y),
            Binary::Mul => broadcast_zip(ad, bd, |x, y| x * y),
            Binary::Div => broadcast_zip(ad, bd, |x, y| x / ops::guarded(y)),
        };
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(Tensor::new(shape, data)?, rg, Op::Binary(kind, a, b)))
    }

    /// `a + b`, with `b` broadcast over leading dimensions of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(Binary::Mul, a, b)
    }

    /// `a / (b ± 1e-8)`, the guard taking the sign of `b`.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(Binary::Div, a, b)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let c = T::from_f64(c);
        let value = self.value(a).map(|x| x * c);
        self.unary(a, value, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let c = T::from_f64(c);
        let value = self.value(a).map(|x| x + c);
        self.unary(a, value, Op::AddScalar(a))
    }

    // ---- linear algebra -------------------------------------------------

    /// Matrix product over the last two dims. `a` is `[.., m, k]`; `b` is
    /// either `[k, n]` (shared by every batch entry) or `[.., k, n]` with the
    /// same leading dims as `a`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let mismatch = || TensorError::ShapeMismatch {
            op: "matmul",
            left: sa.clone(),
            right: sb.clone(),
        };
        if sa.len() < 2 || sb.len() < 2 {
            return Err(mismatch());
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (kb, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != kb {
            return Err(mismatch());
        }
        let b_shared = sb.len() == 2;
        if !b_shared && sb[..sb.len() - 2] != sa[..sa.len() - 2] {
            return Err(mismatch());
        }
        let batch: usize = sa[..sa.len() - 2].iter().product();
        let data = ops::matmul_kernel(self.data(a), self.data(b), batch, m, k, n, b_shared);
        let mut shape = sa[..sa.len() - 2].to_vec();
        shape.extend([m, n]);
        let rg = self.requires_grad(a) || self.requires_grad(b);
        let op = Op::MatMul {
            a,
            b,
            batch,
            m,
            k,
            n,
            b_shared,
        };
        Ok(self.push(Tensor::new(shape, data)?, rg, op))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let value = self.value(a).clone().reshaped(shape)?;
        Ok(self.unary(a, value, Op::Reshape(a)))
    }

    /// Reorders dimensions: output dim `i` is input dim `perm[i]`.
    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var, TensorError> {
        let shape = self.shape(a).to_vec();
        let mut seen = vec![false; shape.len()];
        let valid = perm.len() == shape.len()
            && perm.iter().all(|&p| p < shape.len() && !std::mem::replace(&mut seen[p], true));
        if !valid {
            return Err(TensorError::ShapeMismatch {
                op: "permute",
                left: shape,
                right: perm.to_vec(),
            });
        }
        let map = ops::permute_map(&shape, perm);
        let src = self.data(a);
        let data = map.iter().map(|&i| src[i]).collect();
        let out_shape = perm.iter().map(|&p| shape[p]).collect();
        let value = Tensor::new(out_shape, data)?;
        Ok(self.unary(a, value, Op::Permute(a, perm.to_vec())))
    }

    /// Swaps the last two dimensions.
    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        let r = self.shape(a).len();
        if r < 2 {
            return Err(TensorError::AxisOutOfRange { axis: 1, rank: r });
        }
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(r - 2, r - 1);
        self.permute(a, &perm)
    }

    // ---- reductions -----------------------------------------------------

    fn reduce(&mut self, a: Var, axis: Option<usize>, mean: bool) -> Result<Var, TensorError> {
        let shape = self.shape(a).to_vec();
        let src = self.data(a);
        let (value, op_axis) = match axis {
            None => {
                let s: f64 = src.iter().map(|x| x.as_f64()).sum();
                let v = if mean && !src.is_empty() {
                    s / src.len() as f64
                } else {
                    s
                };
                (Tensor::scalar(T::from_f64(v)), None)
            }
            Some(ax) => {
                ops::check_axis(ax, shape.len())?;
                let (outer, n, inner) = ops::split_axis(&shape, ax);
                let mut out = Vec::with_capacity(outer * inner);
                for o in 0..outer {
                    for i in 0..inner {
                        let s: f64 = (0..n).map(|j| src[(o * n + j) * inner + i].as_f64()).sum();
                        out.push(T::from_f64(if mean { s / n as f64 } else { s }));
                    }
                }
                let mut out_shape = shape.clone();
                out_shape.remove(ax);
                (Tensor::new(out_shape, out)?, Some(ax))
            }
        };
        let op = if mean {
            Op::Mean(a, op_axis)
        } else {
            Op::Sum(a, op_axis)
        };
        Ok(self.unary(a, value, op))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        self.reduce(a, None, false).expect("full reduction has no axis")
    }

    pub fn mean(&mut self, a: Var) -> Var {
        self.reduce(a, None, true).expect("full reduction has no axis")
    }

    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var, TensorError> {
        self.reduce(a, Some(axis), false)
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var, TensorError> {
        self.reduce(a, Some(axis), true)
    }

    // ---- nonlinearities -------------------------------------------------

    pub fn activation(&mut self, a: Var, act: Activation) -> Var {
        let value = self.value(a).map(|x| act.forward(x));
        self.unary(a, value, Op::Act(a, act))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Relu)
    }

    pub fn leaky_relu(&mut self, a: Var) -> Var {
        self.activation(a, Activation::LeakyRelu)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Tanh)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Gelu)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Exp)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Log)
    }

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var, TensorError> {
        let shape = self.shape(a).to_vec();
        ops::check_axis(axis, shape.len())?;
        let (outer, n, inner) = ops::split_axis(&shape, axis);
        let src = self.data(a);
        let mut out = vec![T::zero(); src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * n + j) * inner + i;
                let max = (0..n).map(|j| src[idx(j)]).fold(T::neg_infinity(), T::max);
                let mut total = 0.0f64;
                for j in 0..n {
                    let e = (src[idx(j)] - max).exp();
                    out[idx(j)] = e;
                    total += e.as_f64();
                }
                let inv = T::from_f64(1.0 / total);
                for j in 0..n {
                    out[idx(j)] = out[idx(j)] * inv;
                }
            }
        }
        let value = Tensor::new(shape, out)?;
        Ok(self.unary(a, value, Op::Softmax(a, axis)))
    }

    /// Per-row normalization over the last dimension followed by an affine map.
    pub fn layer_norm(&mut self, x: Var, gain: Var, shift: Var, eps: f64) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().ok_or(TensorError::AxisOutOfRange { axis: 0, rank: 0 })?;
        for p in [gain, shift] {
            if self.shape(p) != [d] {
                return Err(TensorError::ShapeMismatch {
                    op: "layer_norm",
                    left: shape.clone(),
                    right: self.shape(p).to_vec(),
                });
            }
        }
        let src = self.data(x);
        let (g, s) = (self.data(gain), self.data(shift));
        let rows = src.len() / d.max(1);
        let mut xhat = Vec::with_capacity(src.len());
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(src.len());
        for r in 0..rows {
            let row = &src[r * d..(r + 1) * d];
            let mean = row.iter().map(|v| v.as_f64()).sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std.push(T::from_f64(inv));
            for (j, v) in row.iter().enumerate() {
                let h = T::from_f64((v.as_f64() - mean) * inv);
                xhat.push(h);
                out.push(h * g[j] + s[j]);
            }
        }
        let rg = self.requires_grad(x) || self.requires_grad(gain) || self.requires_grad(shift);
        let op = Op::LayerNorm {
            x,
            gain,
            shift,
            xhat,
            inv_std,
        };
        Ok(self.push(Tensor::new(shape, out)?, rg, op))
    }

    // ---- losses ---------------------------------------------------------

    fn check_same(&self, op: &'static str, a: Var, b: Var) -> Result<(), TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::ShapeMismatch {
                op,
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    /// Mean binary cross-entropy computed from logits.
    pub fn bce_with_logits(&mut self, logits: Var, target: Var) -> Result<Var, TensorError> {
        self.check_same("bce_with_logits", logits, target)?;
        let (z, y) = (self.data(logits), self.data(target));
        let total: f64 = z
            .iter()
            .zip(y)
            .map(|(&z, &y)| {
                let (z, y) = (z.as_f64(), y.as_f64());
                ops::softplus(z) - z * y
            })
            .sum();
        let n = z.len().max(1) as f64;
        let value = Tensor::scalar(T::from_f64(total / n));
        let rg = self.requires_grad(logits) || self.requires_grad(target);
        Ok(self.push(value, rg, Op::BceWithLogits(logits, target)))
    }

    /// Mean squared error.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var, TensorError> {
        self.check_same("mse", pred, target)?;
        let (p, t) = (self.data(pred), self.data(target));
        let total: f64 = p
            .iter()
            .zip(t)
            .map(|(&p, &t)| (p.as_f64() - t.as_f64()).powi(2))
            .sum();
        let n = p.len().max(1) as f64;
        let value = Tensor::scalar(T::from_f64(total / n));
        let rg = self.requires_grad(pred) || self.requires_grad(target);
        Ok(self.push(value, rg, Op::Mse(pred, target)))
    }

    // ---- reverse sweep --------------------------------------------------

    /// Populates `grad` on every node that requires a gradient and lies on a
    /// path to `loss`. Earlier gradients are discarded.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        let shape = self.shape(loss);
        if shape.iter().product::<usize>() != 1 {
            return Err(TensorError::NotScalar(shape.to_vec()));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        let seed = Tensor::ones_like(self.value(loss));
        self.nodes[loss.0].grad = Some(seed);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = self.nodes[idx].grad.take() else {
                continue;
            };
            self.propagate(idx, g.data());
            self.nodes[idx].grad = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, f: impl FnOnce(&mut [T], &Self)) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let mut buf = match self.nodes[v.0].grad.take() {
            Some(t) => t,
            None => Tensor::zeros_like(&self.nodes[v.0].value),
        };
        f(buf.data_mut(), self);
        self.nodes[v.0].grad = Some(buf);
    }

    fn propagate(&mut self, idx: usize, g: &[T]) {
        // The op is swapped out while its inputs are updated, then restored.
        let op = std::mem::replace(&mut self.nodes[idx].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::Binary(kind, a, b) => {
                let (a, b) = (*a, *b);
                let bl = self.nodes[b.0].value.len().max(1);
                match kind {
                    Binary::Add | Binary::Sub => {
                        let sign = if matches!(kind, Binary::Sub) { -T::one() } else { T::one() };
                        self.accumulate(a, |ga, _| ga.iter_mut().zip(g).for_each(|(x, &g)| *x += g));
                        self.accumulate(b, |gb, _| {
                            for gc in g.chunks(bl) {
                                gb.iter_mut().zip(gc).for_each(|(x, &gi)| *x += sign * gi);
                            }
                        });
                    }
                    Binary::Mul => {
                        self.accumulate(a, |ga, t| {
                            let bd = t.data(b);
                            for (gac, gc) in ga.chunks_mut(bl).zip(g.chunks(bl)) {
                                for ((x, &gi), &y) in gac.iter_mut().zip(gc).zip(bd) {
                                    *x += gi * y;
                                }
                            }
                        });
                        self.accumulate(b, |gb, t| {
                            let ad = t.data(a);
                            for (gc, ac) in g.chunks(bl).zip(ad.chunks(bl)) {
                                for ((x, &gi), &y) in gb.iter_mut().zip(gc).zip(ac) {
                                    *x += gi * y;
                                }
                            }
                        });
                    }
                    Binary::Div => {
                        self.accumulate(a, |ga, t| {
                            let bd = t.data(b);
                            for (gac, gc) in ga.chunks_mut(bl).zip(g.chunks(bl)) {
                                for ((x, &gi), &y) in gac.iter_mut().zip(gc).zip(bd) {
                                    *x += gi / ops::guarded(y);
                                }
                            }
                        });
                        self.accumulate(b, |gb, t| {
                            let (ad, bd) = (t.data(a), t.data(b));
                            for (gc, ac) in g.chunks(bl).zip(ad.chunks(bl)) {
                                for (((x, &gi), &av), &y) in gb.iter_mut().zip(gc).zip(ac).zip(bd) {
                                    let d = ops::guarded(y);
                                    *x += -gi * av / (d * d);
                                }
                            }
                        });
                    }
                }
            }
            Op::Scale(a, c) => {
                let c = *c;
                self.accumulate(*a, |ga, _| ga.iter_mut().zip(g).for_each(|(x, &g)| *x += g * c));
            }
            Op::AddScalar(a) | Op::Reshape(a) => {
                self.accumulate(*a, |ga, _| ga.iter_mut().zip(g).for_each(|(x, &g)| *x += g));
            }
            Op::MatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
                b_shared,
            } => {
                let (a, b, batch, m, k, n, shared) = (*a, *b, *batch, *m, *k, *n, *b_shared);
                self.accumulate(a, |ga, t| {
                    // ga = g * b^T, with b^T laid out so the inner loop is an axpy.
                    let bd = t.data(b);
                    let nb = if shared { 1 } else { batch };
                    let mut bt = vec![T::zero(); nb * k * n];
                    for bb in 0..nb {
                        for p in 0..k {
                            for j in 0..n {
                                bt[bb * k * n + j * k + p] = bd[bb * k * n + p * n + j];
                            }
                        }
                    }
                    for bi in 0..batch {
                        let boff = if shared { 0 } else { bi * k * n };
                        for i in 0..m {
                            let g_row = &g[bi * m * n + i * n..bi * m * n + (i + 1) * n];
                            let ga_row = &mut ga[bi * m * k + i * k..bi * m * k + (i + 1) * k];
                            for (j, &gv) in g_row.iter().enumerate() {
                                if gv == T::zero() {
                                    continue;
                                }
                                let bt_row = &bt[boff + j * k..boff + (j + 1) * k];
                                for (x, &bv) in ga_row.iter_mut().zip(bt_row) {
                                    *x += gv * bv;
                                }
                            }
                        }
                    }
                });
                self.accumulate(b, |gb, t| {
                    let ad = t.data(a);
                    for bi in 0..batch {
                        let boff = if shared { 0 } else { bi * k * n };
                        for i in 0..m {
                            let g_row = &g[bi * m * n + i * n..bi * m * n + (i + 1) * n];
                            for p in 0..k {
                                let av = ad[bi * m * k + i * k + p];
                                let gb_row = &mut gb[boff + p * n..boff + (p + 1) * n];
                                for (x, &gv) in gb_row.iter_mut().zip(g_row) {
                                    *x += av * gv;
                                }
                            }
                        }
                    }
                });
            }
            Op::Permute(a, perm) => {
                let a = *a;
                let map = ops::permute_map(self.shape(a), perm);
                self.accumulate(a, |ga, _| {
                    for (o, &i) in map.iter().enumerate() {
                        ga[i] += g[o];
                    }
                });
            }
            Op::Sum(a, axis) | Op::Mean(a, axis) => {
                let is_mean = matches!(op, Op::Mean(..));
                let a = *a;
                let shape = self.shape(a).to_vec();
                match axis {
                    None => {
                        let n = shape.iter().product::<usize>().max(1);
                        let scale = if is_mean { T::from_f64(1.0 / n as f64) } else { T::one() };
                        self.accumulate(a, |ga, _| ga.iter_mut().for_each(|x| *x += g[0] * scale));
                    }
                    Some(ax) => {
                        let (outer, n, inner) = ops::split_axis(&shape, *ax);
                        let scale = if is_mean { T::from_f64(1.0 / n as f64) } else { T::one() };
                        self.accumulate(a, |ga, _| {
                            for o in 0..outer {
                                for j in 0..n {
                                    for i in 0..inner {
                                        ga[(o * n + j) * inner + i] += g[o * inner + i] * scale;
                                    }
                                }
                            }
                        });
                    }
                }
            }
            Op::Act(a, act) => {
                let (a, act) = (*a, *act);
                let out = self.nodes[idx].value.data().to_vec();
                self.accumulate(a, |ga, t| {
                    let x = t.data(a);
                    for i in 0..ga.len() {
                        ga[i] += g[i] * act.derivative(x[i], out[i]);
                    }
                });
            }
            Op::Softmax(a, axis) => {
                let (a, axis) = (*a, *axis);
                let y = self.nodes[idx].value.data().to_vec();
                let (outer, n, inner) = ops::split_axis(self.shape(a), axis);
                self.accumulate(a, |ga, _| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let id = |j: usize| (o * n + j) * inner + i;
                            let dot: T = (0..n).map(|j| g[id(j)] * y[id(j)]).sum();
                            for j in 0..n {
                                ga[id(j)] += y[id(j)] * (g[id(j)] - dot);
                            }
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                shift,
                xhat,
                inv_std,
            } => {
                let (x, gain, shift) = (*x, *gain, *shift);
                let d = self.shape(gain)[0];
                let rows = inv_std.len();
                self.accumulate(gain, |gg, _| {
                    for r in 0..rows {
                        for j in 0..d {
                            gg[j] += g[r * d + j] * xhat[r * d + j];
                        }
                    }
                });
                self.accumulate(shift, |gs, _| {
                    for r in 0..rows {
                        for j in 0..d {
                            gs[j] += g[r * d + j];
                        }
                    }
                });
                self.accumulate(x, |gx, t| {
                    let gd = t.data(gain);
                    let dn = T::from_f64(d as f64);
                    for r in 0..rows {
                        let row = r * d..(r + 1) * d;
                        let dxhat: Vec<T> = row.clone().map(|i| g[i] * gd[i - r * d]).collect();
                        let sum_d: T = dxhat.iter().copied().sum();
                        let sum_dx: T = dxhat.iter().zip(&xhat[row.clone()]).map(|(&a, &b)| a * b).sum();
                        for (j, i) in row.enumerate() {
                            gx[i] += inv_std[r] / dn * (dn * dxhat[j] - sum_d - xhat[i] * sum_dx);
                        }
                    }
                });
            }
            Op::BceWithLogits(z, y) => {
                let (z, y) = (*z, *y);
                let n = T::from_f64(self.nodes[z.0].value.len().max(1) as f64);
                self.accumulate(z, |gz, t| {
                    let (zd, yd) = (t.data(z), t.data(y));
                    for i in 0..gz.len() {
                        gz[i] += g[0] * (ops::sigmoid(zd[i]) - yd[i]) / n;
                    }
                });
                self.accumulate(y, |gy, t| {
                    let zd = t.data(z);
                    for i in 0..gy.len() {
                        gy[i] += -g[0] * zd[i] / n;
                    }
                });
            }
            Op::Mse(p, t_) => {
                let (p, tv) = (*p, *t_);
                let n = T::from_f64(self.nodes[p.0].value.len().max(1) as f64);
                let two = T::from_f64(2.0);
                self.accumulate(p, |gp, t| {
                    let (pd, td) = (t.data(p), t.data(tv));
                    for i in 0..gp.len() {
                        gp[i] += g[0] * two * (pd[i] - td[i]) / n;
                    }
                });
                self.accumulate(tv, |gt, t| {
                    let (pd, td) = (t.data(p), t.data(tv));
                    for i in 0..gt.len() {
                        gt[i] += -(g[0] * two * (pd[i] - td[i]) / n);
                    }
                });
            }
        }
        self.nodes[idx].op = op;
    }
}

/// `f(a[i], b[i % b.len()])` over every element of `a`.
fn broadcast_zip<T: Element>(a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
    let mut out = Vec::with_capacity(a.len());
    for chunk in a.chunks(b.len().max(1)) {
        out.extend(chunk.iter().zip(b).map(|(&x, &y)| f(x, y)));
    }
    out
}
