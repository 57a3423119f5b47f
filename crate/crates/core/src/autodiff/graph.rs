//! Tape-based reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so the tape is already a
//! topological order and `backward` walks it once from the loss down.

use super::batchnorm::{BatchNormState, Mode};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Linear { x: Var, w: Var, b: Var },
    Relu { x: Var },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64>, train: bool },
    MaxOverPoints { x: Var, argmax: Vec<usize> },
    Concat { a: Var, b: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Div { a: Var, b: Var },
    Scale { x: Var, c: f64 },
    AddConst { x: Var },
    MulConst { x: Var, c: Vec<f64> },
    Unary { x: Var, deriv: Vec<f64> },
    Column { x: Var, j: usize },
    Stack { cols: Vec<Var> },
    Sum { x: Var },
    Mean { x: Var },
    RowNorm { x: Var },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, grad: None, op });
        Var(self.nodes.len() - 1)
    }

    /// Adds an input or parameter. Leaves receive gradients like any node.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient, `None` if `v` was never reached by `backward`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Affine map over the last axis: `x[..., in] · w[in, out] + b[out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if ws.len() != 2 || xs.is_empty() || xs[xs.len() - 1] != ws[0] || bs != [ws[1]] {
            return Err(Error::Shape(format!(
                "linear: x {xs:?}, w {ws:?}, b {bs:?}"
            )));
        }
        let (fan_in, fan_out) = (ws[0], ws[1]);
        let mut out_shape = xs.to_vec();
        *out_shape.last_mut().unwrap() = fan_out;
        let xv = self.value(x).data();
        let rows = xv.len() / fan_in;
        let mut out = Vec::with_capacity(rows * fan_out);
        for _ in 0..rows {
            out.extend_from_slice(self.value(b).data());
        }
        gemm(rows, fan_in, fan_out, xv, false, self.value(w).data(), false, 1.0, &mut out);
        let value = Tensor::new(out_shape, out)?;
        Ok(self.push(value, Op::Linear { x, w, b }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| v.max(0.0)).collect();
        let value = Tensor::new(xv.shape().to_vec(), data).unwrap();
        self.push(value, Op::Relu { x })
    }

    /// Per-channel normalization over every leading axis.
    ///
    /// In train mode the batch statistics are used and folded into the
    /// running averages; eval mode reads the running averages only.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        state: &mut BatchNormState,
        mode: Mode,
    ) -> Result<Var> {
        let ch = state.channels();
        let xs = self.shape(x);
        if xs.last() != Some(&ch) || self.shape(gamma) != [ch] || self.shape(beta) != [ch] {
            return Err(Error::Shape(format!(
                "batch_norm: x {xs:?} against {ch} channels"
            )));
        }
        let out_shape = xs.to_vec();
        let xv = self.value(x).data();
        let rows = xv.len() / ch;
        if rows == 0 {
            return Err(Error::Shape("batch_norm: empty input".into()));
        }

        let (mean, var) = match mode {
            Mode::Train => {
                let mut mean = vec![0.0; ch];
                for row in xv.chunks_exact(ch) {
                    for (m, v) in mean.iter_mut().zip(row) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= rows as f64);
                let mut var = vec![0.0; ch];
                for row in xv.chunks_exact(ch) {
                    for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                        let d = v - m;
                        *s += d * d;
                    }
                }
                var.iter_mut().for_each(|s| *s /= rows as f64);
                state.update_running(&mean, &var);
                (mean, var)
            }
            Mode::Eval => {
                if !state.initialized {
                    return Err(Error::UninitializedStats(state.name.clone()));
                }
                (state.running_mean.clone(), state.running_var.clone())
            }
        };

        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + state.eps).sqrt()).collect();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = Vec::with_capacity(xv.len());
        let mut out = Vec::with_capacity(xv.len());
        for row in xv.chunks_exact(ch) {
            for c in 0..ch {
                let h = (row[c] - mean[c]) * inv_std[c];
                xhat.push(h);
                out.push(g[c] * h + bt[c]);
            }
        }
        let value = Tensor::new(out_shape, out)?;
        Ok(self.push(
            value,
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, train: mode == Mode::Train },
        ))
    }

    /// `[batch, points, ch] -> [batch, ch]`; ties go to the lowest point index.
    pub fn max_over_points(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x);
        if xs.len() != 3 || xs[1] == 0 {
            return Err(Error::Shape(format!("max_over_points: x {xs:?}")));
        }
        let (batch, points, ch) = (xs[0], xs[1], xs[2]);
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(batch * ch);
        let mut argmax = Vec::with_capacity(batch * ch);
        for b in 0..batch {
            let base = b * points * ch;
            let first = &xv[base..base + ch];
            let mut best: Vec<f64> = first.to_vec();
            let mut idx: Vec<usize> = (0..ch).map(|c| base + c).collect();
            for p in 1..points {
                let off = base + p * ch;
                for c in 0..ch {
                    if xv[off + c] > best[c] {
                        best[c] = xv[off + c];
                        idx[c] = off + c;
                    }
                }
            }
            out.extend(best);
            argmax.extend(idx);
        }
        let value = Tensor::new(vec![batch, ch], out)?;
        Ok(self.push(value, Op::MaxOverPoints { x, argmax }))
    }

    /// Concatenates along the last axis.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.is_empty() || sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(Error::Shape(format!("concat_channels: {sa:?} + {sb:?}")));
        }
        let (ca, cb) = (sa[sa.len() - 1], sb[sb.len() - 1]);
        let mut shape = sa.to_vec();
        *shape.last_mut().unwrap() = ca + cb;
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(av.len() + bv.len());
        for (ra, rb) in av.chunks_exact(ca.max(1)).zip(bv.chunks_exact(cb.max(1))) {
            out.extend_from_slice(ra);
            out.extend_from_slice(rb);
        }
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::Concat { a, b }))
    }

    fn binary(&mut self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::Shape(format!("{name}: {sa:?} vs {sb:?}")));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(sa.to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(v, Op::Add { a, b }))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(v, Op::Sub { a, b }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(v, Op::Mul { a, b }))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "div", |x, y| x / y)?;
        Ok(self.push(v, Op::Div { a, b }))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let xv = self.value(x);
        let v = Tensor::new(xv.shape().to_vec(), xv.data().iter().map(|v| v * c).collect()).unwrap();
        self.push(v, Op::Scale { x, c })
    }

    /// `x + c` for a constant of the same shape.
    pub fn add_const(&mut self, x: Var, c: &[f64]) -> Result<Var> {
        let xv = self.value(x);
        if xv.len() != c.len() {
            return Err(Error::Shape(format!("add_const: {:?} vs {}", xv.shape(), c.len())));
        }
        let data = xv.data().iter().zip(c).map(|(a, b)| a + b).collect();
        let v = Tensor::new(xv.shape().to_vec(), data)?;
        Ok(self.push(v, Op::AddConst { x }))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let n = self.value(x).len();
        self.add_const(x, &vec![c; n]).unwrap()
    }

    /// `x ⊙ c` for a constant of the same shape.
    pub fn mul_const(&mut self, x: Var, c: &[f64]) -> Result<Var> {
        let xv = self.value(x);
        if xv.len() != c.len() {
            return Err(Error::Shape(format!("mul_const: {:?} vs {}", xv.shape(), c.len())));
        }
        let data = xv.data().iter().zip(c).map(|(a, b)| a * b).collect();
        let v = Tensor::new(xv.shape().to_vec(), data)?;
        Ok(self.push(v, Op::MulConst { x, c: c.to_vec() }))
    }

    /// Elementwise function given as `v ↦ (f(v), f'(v))`.
    pub fn unary(&mut self, x: Var, f: impl Fn(f64) -> (f64, f64)) -> Var {
        let xv = self.value(x);
        let (data, deriv): (Vec<f64>, Vec<f64>) = xv.data().iter().map(|&v| f(v)).unzip();
        let v = Tensor::new(xv.shape().to_vec(), data).unwrap();
        self.push(v, Op::Unary { x, deriv })
    }

    pub fn sin(&mut self, x: Var) -> Var {
        self.unary(x, |v| (v.sin(), v.cos()))
    }

    pub fn cos(&mut self, x: Var) -> Var {
        self.unary(x, |v| (v.cos(), -v.sin()))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| (v * v, 2.0 * v))
    }

    /// `arccos` with the argument clamped to `[-1 + eps, 1 - eps]`; zero
    /// gradient where the clamp is active.
    pub fn acos_clamped(&mut self, x: Var, eps: f64) -> Var {
        self.unary(x, |v| {
            let lo = -1.0 + eps;
            let hi = 1.0 - eps;
            if v <= lo || v >= hi {
                (v.clamp(lo, hi).acos(), 0.0)
            } else {
                (v.acos(), -1.0 / (1.0 - v * v).sqrt())
            }
        })
    }

    /// Selects channel `j` of a `[rows, ch]` tensor.
    pub fn column(&mut self, x: Var, j: usize) -> Result<Var> {
        let xs = self.shape(x);
        if xs.len() != 2 || j >= xs[1] {
            return Err(Error::Shape(format!("column {j} of {xs:?}")));
        }
        let ch = xs[1];
        let data: Vec<f64> = self.value(x).data().iter().skip(j).step_by(ch).copied().collect();
        let v = Tensor::from_vec(data);
        Ok(self.push(v, Op::Column { x, j }))
    }

    /// Stacks `[rows]` tensors into `[rows, cols.len()]`.
    pub fn stack_columns(&mut self, cols: &[Var]) -> Result<Var> {
        let rows = self.value(cols[0]).len();
        if cols.iter().any(|c| self.shape(*c) != [rows]) {
            return Err(Error::Shape("stack_columns: ragged columns".into()));
        }
        let k = cols.len();
        let mut data = vec![0.0; rows * k];
        for (j, c) in cols.iter().enumerate() {
            for (i, v) in self.value(*c).data().iter().enumerate() {
                data[i * k + j] = *v;
            }
        }
        let v = Tensor::new(vec![rows, k], data)?;
        Ok(self.push(v, Op::Stack { cols: cols.to_vec() }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum { x })
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x).data();
        let s = xv.iter().sum::<f64>() / xv.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean { x })
    }

    /// Euclidean norm of each row of `[rows, ch]`; gradient 0 at the origin.
    pub fn row_norm(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x);
        if xs.len() != 2 {
            return Err(Error::Shape(format!("row_norm: {xs:?}")));
        }
        let ch = xs[1];
        let data = self
            .value(x)
            .data()
            .chunks_exact(ch)
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        Ok(self.push(Tensor::from_vec(data), Op::RowNorm { x }))
    }

    /// Accumulates `d loss / d node` into every node reachable from `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut pending: Vec<Option<Vec<f64>>> = Vec::new();
        pending.resize_with(loss.0 + 1, || None);
        pending[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = pending[i].take() else { continue };
            self.propagate(i, &g, &mut pending);
            let node = &mut self.nodes[i];
            match &mut node.grad {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], pending: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let val = |v: Var| nodes[v.0].value.data();
        let len = |v: Var| nodes[v.0].value.len();

        match &nodes[i].op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let ws = nodes[w.0].value.shape();
                let (fan_in, fan_out) = (ws[0], ws[1]);
                let rows = g.len() / fan_out;
                gemm(rows, fan_out, fan_in, g, false, val(*w), true, 1.0, slot(pending, nodes, *x));
                gemm(fan_in, rows, fan_out, val(*x), true, g, false, 1.0, slot(pending, nodes, *w));
                let gb = slot(pending, nodes, *b);
                for row in g.chunks_exact(fan_out) {
                    gb.iter_mut().zip(row).for_each(|(a, r)| *a += r);
                }
            }
            Op::Relu { x } => {
                let out = nodes[i].value.data();
                let gx = slot(pending, nodes, *x);
                for ((a, o), gi) in gx.iter_mut().zip(out).zip(g) {
                    if *o > 0.0 {
                        *a += gi;
                    }
                }
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, train } => {
                let ch = inv_std.len();
                let rows = g.len() / ch;
                let gam = val(*gamma);
                let mut sum_dy = vec![0.0; ch];
                let mut sum_dy_xhat = vec![0.0; ch];
                for (gr, hr) in g.chunks_exact(ch).zip(xhat.chunks_exact(ch)) {
                    for c in 0..ch {
                        sum_dy[c] += gr[c];
                        sum_dy_xhat[c] += gr[c] * hr[c];
                    }
                }
                let gx = slot(pending, nodes, *x);
                if *train {
                    let n = rows as f64;
                    for ((xr, gr), hr) in gx.chunks_exact_mut(ch).zip(g.chunks_exact(ch)).zip(xhat.chunks_exact(ch)) {
                        for c in 0..ch {
                            let k = gam[c] * inv_std[c] / n;
                            xr[c] += k * (n * gr[c] - sum_dy[c] - hr[c] * sum_dy_xhat[c]);
                        }
                    }
                } else {
                    for (xr, gr) in gx.chunks_exact_mut(ch).zip(g.chunks_exact(ch)) {
                        for c in 0..ch {
                            xr[c] += gr[c] * gam[c] * inv_std[c];
                        }
                    }
                }
                slot(pending, nodes, *gamma).iter_mut().zip(&sum_dy_xhat).for_each(|(a, s)| *a += s);
                slot(pending, nodes, *beta).iter_mut().zip(&sum_dy).for_each(|(a, s)| *a += s);
            }
            Op::MaxOverPoints { x, argmax } => {
                let gx = slot(pending, nodes, *x);
                for (gi, &idx) in g.iter().zip(argmax) {
                    gx[idx] += gi;
                }
            }
            Op::Concat { a, b } => {
                let ca = nodes[a.0].value.last_dim();
                let cb = nodes[b.0].value.last_dim();
                {
                    let ga = slot(pending, nodes, *a);
                    for (dst, src) in ga.chunks_exact_mut(ca).zip(g.chunks_exact(ca + cb)) {
                        dst.iter_mut().zip(&src[..ca]).for_each(|(d, s)| *d += s);
                    }
                }
                let gb = slot(pending, nodes, *b);
                for (dst, src) in gb.chunks_exact_mut(cb).zip(g.chunks_exact(ca + cb)) {
                    dst.iter_mut().zip(&src[ca..]).for_each(|(d, s)| *d += s);
                }
            }
            Op::Add { a, b } => {
                slot(pending, nodes, *a).iter_mut().zip(g).for_each(|(d, s)| *d += s);
                slot(pending, nodes, *b).iter_mut().zip(g).for_each(|(d, s)| *d += s);
            }
            Op::Sub { a, b } => {
                slot(pending, nodes, *a).iter_mut().zip(g).for_each(|(d, s)| *d += s);
                slot(pending, nodes, *b).iter_mut().zip(g).for_each(|(d, s)| *d -= s);
            }
            Op::Mul { a, b } => {
                let (av, bv) = (val(*a), val(*b));
                slot(pending, nodes, *a).iter_mut().zip(g).zip(bv).for_each(|((d, s), y)| *d += s * y);
                slot(pending, nodes, *b).iter_mut().zip(g).zip(av).for_each(|((d, s), x)| *d += s * x);
            }
            Op::Div { a, b } => {
                let (av, bv) = (val(*a), val(*b));
                slot(pending, nodes, *a).iter_mut().zip(g).zip(bv).for_each(|((d, s), y)| *d += s / y);
                slot(pending, nodes, *b)
                    .iter_mut()
                    .zip(g)
                    .zip(av.iter().zip(bv))
                    .for_each(|((d, s), (x, y))| *d -= s * x / (y * y));
            }
            Op::Scale { x, c } => {
                slot(pending, nodes, *x).iter_mut().zip(g).for_each(|(d, s)| *d += s * c);
            }
            Op::AddConst { x } => {
                slot(pending, nodes, *x).iter_mut().zip(g).for_each(|(d, s)| *d += s);
            }
            Op::MulConst { x, c } => {
                slot(pending, nodes, *x).iter_mut().zip(g).zip(c).for_each(|((d, s), k)| *d += s * k);
            }
            Op::Unary { x, deriv } => {
                slot(pending, nodes, *x).iter_mut().zip(g).zip(deriv).for_each(|((d, s), k)| *d += s * k);
            }
            Op::Column { x, j } => {
                let ch = nodes[x.0].value.last_dim();
                let gx = slot(pending, nodes, *x);
                for (r, s) in g.iter().enumerate() {
                    gx[r * ch + j] += s;
                }
            }
            Op::Stack { cols } => {
                let k = cols.len();
                for (j, c) in cols.iter().enumerate() {
                    let gc = slot(pending, nodes, *c);
                    for (r, d) in gc.iter_mut().enumerate() {
                        *d += g[r * k + j];
                    }
                }
            }
            Op::Sum { x } => {
                slot(pending, nodes, *x).iter_mut().for_each(|d| *d += g[0]);
            }
            Op::Mean { x } => {
                let n = len(*x) as f64;
                slot(pending, nodes, *x).iter_mut().for_each(|d| *d += g[0] / n);
            }
            Op::RowNorm { x } => {
                let xv = val(*x);
                let norms = nodes[i].value.data();
                let ch = nodes[x.0].value.last_dim();
                let gx = slot(pending, nodes, *x);
                for (r, (dst, src)) in gx.chunks_exact_mut(ch).zip(xv.chunks_exact(ch)).enumerate() {
                    if norms[r] > 0.0 {
                        let k = g[r] / norms[r];
                        dst.iter_mut().zip(src).for_each(|(d, v)| *d += k * v);
                    }
                }
            }
        }
    }
}

fn slot<'a>(pending: &'a mut [Option<Vec<f64>>], nodes: &[Node], v: Var) -> &'a mut Vec<f64> {
    pending[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()])
}

/// `c = beta·c + a·b` with `a: m×k`, `b: k×n`, either given transposed in storage.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_transposed: bool,
    b: &[f64],
    b_transposed: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_transposed { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_transposed { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0,
            a.as_ptr(), rsa, csa,
            b.as_ptr(), rsb, csb,
            beta,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}
