use super::ops::{self, matmul_at_into, matmul_bt_into, matrix_dims};
use super::tensor::{check_finite, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Deliberately wrong backward rules, used to prove that the verification
/// suite notices a broken gradient.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradFault {
    /// Scales the right-hand (weight) gradient of `matmul` by 1.01.
    MatMulWeight,
    /// Drops the centering term of the softmax backward rule.
    Softmax,
    /// Scales the kernel gradient of `conv1d` by 1.01.
    Conv1dKernel,
}

impl std::str::FromStr for GradFault {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "matmul" => Ok(GradFault::MatMulWeight),
            "softmax" => Ok(GradFault::Softmax),
            "conv1d" => Ok(GradFault::Conv1dKernel),
            other => Err(Error::arg(format!("unknown gradient fault `{}`", other))),
        }
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRowBias(Var, Var),
    AddColBias(Var, Var),
    Gelu(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Conv1d {
        x: Var,
        k: Var,
        stride: usize,
        padding: usize,
    },
    Conv2dPatches {
        x: Var,
        k: Var,
        stride: (usize, usize),
    },
    AdaptiveAvgPool(Var),
    Bilinear(Var),
    Reshape(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    MeanRows(Var),
    SumRows(Var),
    SumAll(Var),
    DivScalar(Var, Var),
    Outer(Var, Var),
    CrossEntropy {
        logits: Var,
        target: usize,
        probs: Vec<f64>,
    },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            MatMul(a, b) | Add(a, b) | Mul(a, b) | AddRowBias(a, b) | AddColBias(a, b)
            | DivScalar(a, b) | Outer(a, b) => vec![*a, *b],
            Transpose(a) | Scale(a, _) | Gelu(a) | SoftmaxRows(a) | AdaptiveAvgPool(a)
            | Bilinear(a) | Reshape(a) | SliceRows(a, _) | SliceCols(a, _) | MeanRows(a)
            | SumRows(a) | SumAll(a) => vec![*a],
            LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
            Conv1d { x, k, .. } | Conv2dPatches { x, k, .. } => vec![*x, *k],
            ConcatRows(v) | ConcatCols(v) => v.clone(),
            CrossEntropy { logits, .. } => vec![*logits],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Define-by-run computation tape.
///
/// Every operation appends a node holding its value and the inputs needed
/// by its backward rule. Leaves registered with [`Tape::param`] track
/// gradients; [`Tape::constant`] leaves do not. A tape is single-owner and
/// is dropped after one backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    fault: Option<GradFault>,
}

/// Gradients of one backward pass, indexed by the leaf [`Var`]s.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of a tracked leaf; `None` for constants and interior nodes.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn with_fault(fault: GradFault) -> Self {
        Tape {
            nodes: Vec::new(),
            fault: Some(fault),
        }
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
        self.nodes[v.0].requires_grad
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Outputs of every softmax recorded so far, in recording order.
    pub fn softmax_outputs(&self) -> impl Iterator<Item = &Tensor> {
        self.nodes
            .iter()
            .filter(|n| matches!(n.op, Op::SoftmaxRows(_)))
            .map(|n| &n.value)
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = ops::matmul(self.value(a), self.value(b))?;
        Ok(self.push(y, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let y = ops::transpose(self.value(a))?;
        Ok(self.push(y, Op::Transpose(a)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.zip(a, b, "add", |x, y| x + y)?;
        Ok(self.push(y, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.zip(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(y, Op::Mul(a, b)))
    }

    fn zip(&self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::dim(format!(
                "{}: shapes {:?} and {:?} differ",
                what,
                ta.shape(),
                tb.shape()
            )));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        ops::finish(ta.shape().to_vec(), data, what)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let ta = self.value(a);
        let data = ta.data().iter().map(|v| v * c).collect();
        let y = ops::finish(ta.shape().to_vec(), data, "scale")?;
        Ok(self.push(y, Op::Scale(a, c)))
    }

    /// `a[m×n] + b[n]` broadcast over rows.
    pub fn add_row_bias(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, n) = matrix_dims(self.value(a), "add_row_bias")?;
        let tb = self.value(b);
        if tb.numel() != n {
            return Err(Error::dim(format!(
                "row bias of {} values for {} columns",
                tb.numel(),
                n
            )));
        }
        let mut data = self.value(a).data().to_vec();
        for i in 0..m {
            for (o, bv) in data[i * n..(i + 1) * n].iter_mut().zip(tb.data()) {
                *o += bv;
            }
        }
        let y = ops::finish(vec![m, n], data, "add_row_bias")?;
        Ok(self.push(y, Op::AddRowBias(a, b)))
    }

    /// `a[m×n] + b[m]` broadcast over columns.
    pub fn add_col_bias(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, n) = matrix_dims(self.value(a), "add_col_bias")?;
        let tb = self.value(b);
        if tb.numel() != m {
            return Err(Error::dim(format!(
                "column bias of {} values for {} rows",
                tb.numel(),
                m
            )));
        }
        let mut data = self.value(a).data().to_vec();
        for i in 0..m {
            let bv = tb.data()[i];
            for o in data[i * n..(i + 1) * n].iter_mut() {
                *o += bv;
            }
        }
        let y = ops::finish(vec![m, n], data, "add_col_bias")?;
        Ok(self.push(y, Op::AddColBias(a, b)))
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let y = ops::gelu(self.value(a))?;
        Ok(self.push(y, Op::Gelu(a)))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let y = ops::softmax_rows(self.value(a))?;
        Ok(self.push(y, Op::SoftmaxRows(a)))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (y, cache) =
            ops::layer_norm_cached(self.value(x), self.value(gain), self.value(bias), eps)?;
        Ok(self.push(
            y,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat: cache.xhat,
                inv_std: cache.inv_std,
            },
        ))
    }

    pub fn conv1d(&mut self, x: Var, k: Var, stride: usize, padding: usize) -> Result<Var> {
        let y = ops::conv1d(self.value(x), self.value(k), stride, padding)?;
        Ok(self.push(
            y,
            Op::Conv1d {
                x,
                k,
                stride,
                padding,
            },
        ))
    }

    pub fn conv2d_patches(&mut self, x: Var, k: Var, stride: (usize, usize)) -> Result<Var> {
        let y = ops::conv2d_patches(self.value(x), self.value(k), stride)?;
        Ok(self.push(y, Op::Conv2dPatches { x, k, stride }))
    }

    pub fn adaptive_avg_pool(&mut self, x: Var, target: usize) -> Result<Var> {
        let y = ops::adaptive_avg_pool(self.value(x), target)?;
        Ok(self.push(y, Op::AdaptiveAvgPool(x)))
    }

    pub fn bilinear_resize2d(&mut self, x: Var, target: (usize, usize)) -> Result<Var> {
        let y = ops::bilinear_resize2d(self.value(x), target)?;
        Ok(self.push(y, Op::Bilinear(x)))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let y = self.value(a).reshape(shape)?;
        Ok(self.push(y, Op::Reshape(a)))
    }

    /// Concatenates along the first axis; trailing axes must agree.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::arg("concat_rows needs at least one input"))?;
        let tail = self.shape(*first).get(1..).unwrap_or(&[]).to_vec();
        if self.shape(*first).is_empty() {
            return Err(Error::dim("concat_rows of a scalar"));
        }
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.rank() == 0 || t.shape()[1..] != tail[..] {
                return Err(Error::dim(format!(
                    "concat_rows: shape {:?} does not match trailing axes {:?}",
                    t.shape(),
                    tail
                )));
            }
            rows += t.shape()[0];
            data.extend_from_slice(t.data());
        }
        let mut shape = vec![rows];
        shape.extend(tail);
        let y = Tensor::from_parts(shape, data);
        Ok(self.push(y, Op::ConcatRows(parts.to_vec())))
    }

    /// Concatenates matrices side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::arg("concat_cols needs at least one input"))?;
        let (m, _) = matrix_dims(self.value(*first), "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (mi, ni) = matrix_dims(self.value(p), "concat_cols")?;
            if mi != m {
                return Err(Error::dim(format!(
                    "concat_cols: {} rows vs {} rows",
                    mi, m
                )));
            }
            widths.push(ni);
        }
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; m * total];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.value(p).data();
            for i in 0..m {
                data[i * total + off..i * total + off + w].copy_from_slice(&src[i * w..(i + 1) * w]);
            }
            off += w;
        }
        let y = Tensor::from_parts(vec![m, total], data);
        Ok(self.push(y, Op::ConcatCols(parts.to_vec())))
    }

    /// Rows `start..end` along the first axis.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(a);
        let rows = *t.shape().first().ok_or_else(|| Error::dim("slice of a scalar"))?;
        if start >= end || end > rows {
            return Err(Error::dim(format!(
                "slice_rows {}..{} out of {} rows",
                start, end, rows
            )));
        }
        let row_len = t.numel() / rows;
        let mut shape = t.shape().to_vec();
        shape[0] = end - start;
        let y = Tensor::from_parts(shape, t.data()[start * row_len..end * row_len].to_vec());
        Ok(self.push(y, Op::SliceRows(a, start)))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = matrix_dims(self.value(a), "slice_cols")?;
        if start >= end || end > n {
            return Err(Error::dim(format!(
                "slice_cols {}..{} out of {} columns",
                start, end, n
            )));
        }
        let w = end - start;
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(m * w);
        for i in 0..m {
            data.extend_from_slice(&src[i * n + start..i * n + end]);
        }
        let y = Tensor::from_parts(vec![m, w], data);
        Ok(self.push(y, Op::SliceCols(a, start)))
    }

    /// Mean over rows: `[m×n] -> [n]`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = matrix_dims(self.value(a), "mean_rows")?;
        let y = column_totals(self.value(a).data(), m, n, 1.0 / m as f64);
        Ok(self.push(y, Op::MeanRows(a)))
    }

    /// Sum over rows: `[m×n] -> [n]`.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = matrix_dims(self.value(a), "sum_rows")?;
        let y = column_totals(self.value(a).data(), m, n, 1.0);
        Ok(self.push(y, Op::SumRows(a)))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let y = Tensor::scalar(self.value(a).sum())?;
        Ok(self.push(y, Op::SumAll(a)))
    }

    /// Divides every element of `a` by the scalar `s`.
    pub fn div_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        let ts = self.value(s);
        if ts.numel() != 1 {
            return Err(Error::dim(format!(
                "div_scalar divisor has shape {:?}",
                ts.shape()
            )));
        }
        let d = ts.data()[0];
        let ta = self.value(a);
        let data = ta.data().iter().map(|v| v / d).collect();
        let y = ops::finish(ta.shape().to_vec(), data, "div_scalar")?;
        Ok(self.push(y, Op::DivScalar(a, s)))
    }

    /// Outer product of two vectors: `[n] ⊗ [m] -> [n×m]`.
    pub fn outer(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 1 || tb.rank() != 1 {
            return Err(Error::dim(format!(
                "outer expects vectors, got {:?} and {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let mut data = Vec::with_capacity(ta.numel() * tb.numel());
        for x in ta.data() {
            for y in tb.data() {
                data.push(x * y);
            }
        }
        let y = ops::finish(vec![ta.numel(), tb.numel()], data, "outer")?;
        Ok(self.push(y, Op::Outer(a, b)))
    }

    /// Softmax cross-entropy of a logit vector against a class index.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let z = self.value(logits);
        if z.rank() != 1 || target >= z.numel() {
            return Err(Error::dim(format!(
                "cross_entropy: logits {:?}, target {}",
                z.shape(),
                target
            )));
        }
        let max = z.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = z.data().iter().map(|v| (v - max).exp()).sum();
        let lse = max + total.ln();
        let probs: Vec<f64> = z.data().iter().map(|v| (v - lse).exp()).collect();
        let y = Tensor::scalar(lse - z.data()[target])?;
        Ok(self.push(
            y,
            Op::CrossEntropy {
                logits,
                target,
                probs,
            },
        ))
    }

    /// Reverse pass from a scalar `loss`.
    ///
    /// Every leaf registered with [`Tape::param`] receives `d loss / d leaf`;
    /// leaves the loss does not depend on receive zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
        }

        let mut out = Vec::with_capacity(n);
        for (node, g) in self.nodes.iter().zip(grads) {
            if node.requires_grad && matches!(node.op, Op::Leaf) {
                let data = g.unwrap_or_else(|| vec![0.0; node.value.numel()]);
                check_finite(&data, "gradient")?;
                out.push(Some(Tensor::from_parts(node.value.shape().to_vec(), data)));
            } else {
                out.push(None);
            }
        }
        Ok(Gradients { grads: out })
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        macro_rules! acc {
            ($v:expr) => {{
                let v: Var = $v;
                let len = self.nodes[v.0].value.numel();
                grads[v.0].get_or_insert_with(|| vec![0.0; len])
            }};
        }

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = val(*a).dims2().expect("matmul lhs");
                let n = val(*b).shape()[1];
                if wants(*a) {
                    matmul_bt_into(g, val(*b).data(), acc!(*a), m, n, k);
                }
                if wants(*b) {
                    let db = acc!(*b);
                    if self.fault == Some(GradFault::MatMulWeight) {
                        let mut tmp = vec![0.0; k * n];
                        matmul_at_into(val(*a).data(), g, &mut tmp, m, k, n);
                        for (d, t) in db.iter_mut().zip(tmp) {
                            *d += 1.01 * t;
                        }
                    } else {
                        matmul_at_into(val(*a).data(), g, db, m, k, n);
                    }
                }
            }
            Op::Transpose(a) => {
                if wants(*a) {
                    let (m, n) = val(*a).dims2().expect("transpose");
                    let da = acc!(*a);
                    for i in 0..m {
                        for j in 0..n {
                            da[i * n + j] += g[j * m + i];
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if wants(v) {
                        add_into(acc!(v), g);
                    }
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    let other = val(*b).data();
                    for ((d, gv), o) in acc!(*a).iter_mut().zip(g).zip(other) {
                        *d += gv * o;
                    }
                }
                if wants(*b) {
                    let other = val(*a).data();
                    for ((d, gv), o) in acc!(*b).iter_mut().zip(g).zip(other) {
                        *d += gv * o;
                    }
                }
            }
            Op::Scale(a, c) => {
                if wants(*a) {
                    for (d, gv) in acc!(*a).iter_mut().zip(g) {
                        *d += c * gv;
                    }
                }
            }
            Op::AddRowBias(a, b) => {
                if wants(*a) {
                    add_into(acc!(*a), g);
                }
                if wants(*b) {
                    let n = val(*b).numel();
                    let db = acc!(*b);
                    for row in g.chunks(n) {
                        add_into(db, row);
                    }
                }
            }
            Op::AddColBias(a, b) => {
                if wants(*a) {
                    add_into(acc!(*a), g);
                }
                if wants(*b) {
                    let m = val(*b).numel();
                    let n = g.len() / m;
                    let db = acc!(*b);
                    for i in 0..m {
                        db[i] += g[i * n..(i + 1) * n].iter().sum::<f64>();
                    }
                }
            }
            Op::Gelu(a) => {
                if wants(*a) {
                    let x = val(*a).data();
                    for ((d, gv), xv) in acc!(*a).iter_mut().zip(g).zip(x) {
                        *d += gv * ops::gelu_grad_scalar(*xv);
                    }
                }
            }
            Op::SoftmaxRows(a) => {
                if wants(*a) {
                    let y = node.value.data();
                    let n = *node.value.shape().last().expect("softmax rank");
                    let centered = self.fault != Some(GradFault::Softmax);
                    let da = acc!(*a);
                    for r in 0..y.len() / n {
                        let (yr, gr) = (&y[r * n..(r + 1) * n], &g[r * n..(r + 1) * n]);
                        let dot: f64 = if centered {
                            yr.iter().zip(gr).map(|(p, q)| p * q).sum()
                        } else {
                            0.0
                        };
                        for j in 0..n {
                            da[r * n + j] += yr[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let d = val(*gain).numel();
                let gn = val(*gain).data();
                if wants(*gain) {
                    let dg = acc!(*gain);
                    for (r, row) in g.chunks(d).enumerate() {
                        for j in 0..d {
                            dg[j] += row[j] * xhat[r * d + j];
                        }
                    }
                }
                if wants(*bias) {
                    let db = acc!(*bias);
                    for row in g.chunks(d) {
                        add_into(db, row);
                    }
                }
                if wants(*x) {
                    let dx = acc!(*x);
                    let mut dxhat = vec![0.0; d];
                    for (r, row) in g.chunks(d).enumerate() {
                        let xh = &xhat[r * d..(r + 1) * d];
                        for j in 0..d {
                            dxhat[j] = row[j] * gn[j];
                        }
                        let mean_d = dxhat.iter().sum::<f64>() / d as f64;
                        let mean_dx = dxhat.iter().zip(xh).map(|(p, q)| p * q).sum::<f64>()
                            / d as f64;
                        for j in 0..d {
                            dx[r * d + j] += inv_std[r] * (dxhat[j] - mean_d - xh[j] * mean_dx);
                        }
                    }
                }
            }
            Op::Conv1d {
                x,
                k,
                stride,
                padding,
            } => {
                let (cin, t) = val(*x).dims2().expect("conv1d input");
                let kshape = val(*k).shape();
                let (cout, ksz) = (kshape[0], kshape[2]);
                let tout = node.value.shape()[1];
                let (xd, kd) = (val(*x).data(), val(*k).data());
                let kscale = if self.fault == Some(GradFault::Conv1dKernel) {
                    1.01
                } else {
                    1.0
                };
                for (target, is_kernel) in [(*k, true), (*x, false)] {
                    if !wants(target) {
                        continue;
                    }
                    let dst = acc!(target);
                    for o in 0..cout {
                        for c in 0..cin {
                            let kb = (o * cin + c) * ksz;
                            for to in 0..tout {
                                let gv = g[o * tout + to];
                                if gv == 0.0 {
                                    continue;
                                }
                                let base = (to * stride) as isize - *padding as isize;
                                for j in 0..ksz {
                                    let ti = base + j as isize;
                                    if ti < 0 || ti as usize >= t {
                                        continue;
                                    }
                                    let xi = c * t + ti as usize;
                                    if is_kernel {
                                        dst[kb + j] += kscale * gv * xd[xi];
                                    } else {
                                        dst[xi] += gv * kd[kb + j];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Op::Conv2dPatches { x, k, stride } => {
                let xs = val(*x).shape();
                let (c, f, t) = (xs[0], xs[1], xs[2]);
                let ks = val(*k).shape();
                let (d, pf, pt) = (ks[0], ks[2], ks[3]);
                let (h, w) = (node.value.shape()[1], node.value.shape()[2]);
                let (xd, kd) = (val(*x).data(), val(*k).data());
                for (target, is_kernel) in [(*k, true), (*x, false)] {
                    if !wants(target) {
                        continue;
                    }
                    let dst = acc!(target);
                    for o in 0..d {
                        for i in 0..h {
                            for j in 0..w {
                                let gv = g[(o * h + i) * w + j];
                                if gv == 0.0 {
                                    continue;
                                }
                                for ch in 0..c {
                                    for a in 0..pf {
                                        let xr = ch * f * t + (i * stride.0 + a) * t + j * stride.1;
                                        let kr = ((o * c + ch) * pf + a) * pt;
                                        for b in 0..pt {
                                            if is_kernel {
                                                dst[kr + b] += gv * xd[xr + b];
                                            } else {
                                                dst[xr + b] += gv * kd[kr + b];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Op::AdaptiveAvgPool(a) => {
                if wants(*a) {
                    let (c, t) = val(*a).dims2().expect("pool input");
                    let target = node.value.shape()[1];
                    let da = acc!(*a);
                    for ch in 0..c {
                        for i in 0..target {
                            let (s, e) = ops::pool_bin(i, t, target);
                            let share = g[ch * target + i] / (e - s) as f64;
                            for v in &mut da[ch * t + s..ch * t + e] {
                                *v += share;
                            }
                        }
                    }
                }
            }
            Op::Bilinear(a) => {
                if wants(*a) {
                    let s = val(*a).shape();
                    let (d, h0, w0) = (s[0], s[1], s[2]);
                    let (h, w) = (node.value.shape()[1], node.value.shape()[2]);
                    let da = acc!(*a);
                    for i in 0..h {
                        let (y0, y1, wy) = ops::align_corners_coord(i, h0, h);
                        for j in 0..w {
                            let (x0, x1, wx) = ops::align_corners_coord(j, w0, w);
                            for c in 0..d {
                                let gv = g[(c * h + i) * w + j];
                                let base = c * h0 * w0;
                                da[base + y0 * w0 + x0] += gv * (1.0 - wy) * (1.0 - wx);
                                da[base + y0 * w0 + x1] += gv * (1.0 - wy) * wx;
                                da[base + y1 * w0 + x0] += gv * wy * (1.0 - wx);
                                da[base + y1 * w0 + x1] += gv * wy * wx;
                            }
                        }
                    }
                }
            }
            Op::Reshape(a) => {
                if wants(*a) {
                    add_into(acc!(*a), g);
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = val(p).numel();
                    if wants(p) {
                        add_into(acc!(p), &g[off..off + len]);
                    }
                    off += len;
                }
            }
            Op::ConcatCols(parts) => {
                let (m, total) = node.value.dims2().expect("concat_cols");
                let mut off = 0;
                for &p in parts {
                    let w = val(p).shape()[1];
                    if wants(p) {
                        let dp = acc!(p);
                        for i in 0..m {
                            add_into(
                                &mut dp[i * w..(i + 1) * w],
                                &g[i * total + off..i * total + off + w],
                            );
                        }
                    }
                    off += w;
                }
            }
            Op::SliceRows(a, start) => {
                if wants(*a) {
                    let rows = val(*a).shape()[0];
                    let row_len = val(*a).numel() / rows;
                    let off = start * row_len;
                    add_into(&mut acc!(*a)[off..off + g.len()], g);
                }
            }
            Op::SliceCols(a, start) => {
                if wants(*a) {
                    let (m, n) = val(*a).dims2().expect("slice_cols");
                    let w = node.value.shape()[1];
                    let da = acc!(*a);
                    for i in 0..m {
                        add_into(
                            &mut da[i * n + start..i * n + start + w],
                            &g[i * w..(i + 1) * w],
                        );
                    }
                }
            }
            Op::MeanRows(a) | Op::SumRows(a) => {
                if wants(*a) {
                    let m = val(*a).shape()[0];
                    let c = if matches!(node.op, Op::MeanRows(_)) {
                        1.0 / m as f64
                    } else {
                        1.0
                    };
                    let n = g.len();
                    let da = acc!(*a);
                    for i in 0..m {
                        for j in 0..n {
                            da[i * n + j] += c * g[j];
                        }
                    }
                }
            }
            Op::SumAll(a) => {
                if wants(*a) {
                    for d in acc!(*a).iter_mut() {
                        *d += g[0];
                    }
                }
            }
            Op::DivScalar(a, s) => {
                let sv = val(*s).data()[0];
                if wants(*a) {
                    for (d, gv) in acc!(*a).iter_mut().zip(g) {
                        *d += gv / sv;
                    }
                }
                if wants(*s) {
                    let num: f64 = g.iter().zip(val(*a).data()).map(|(p, q)| p * q).sum();
                    acc!(*s)[0] -= num / (sv * sv);
                }
            }
            Op::Outer(a, b) => {
                let (av, bv) = (val(*a).data(), val(*b).data());
                let m = bv.len();
                if wants(*a) {
                    let da = acc!(*a);
                    for i in 0..av.len() {
                        da[i] += g[i * m..(i + 1) * m].iter().zip(bv).map(|(p, q)| p * q).sum::<f64>();
                    }
                }
                if wants(*b) {
                    let db = acc!(*b);
                    for i in 0..av.len() {
                        for j in 0..m {
                            db[j] += g[i * m + j] * av[i];
                        }
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                target,
                probs,
            } => {
                if wants(*logits) {
                    let dz = acc!(*logits);
                    for (j, p) in probs.iter().enumerate() {
                        let onehot = if j == *target { 1.0 } else { 0.0 };
                        dz[j] += g[0] * (p - onehot);
                    }
                }
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn column_totals(data: &[f64], m: usize, n: usize, scale: f64) -> Tensor {
    let mut out = vec![0.0; n];
    for row in data.chunks(n).take(m) {
        add_into(&mut out, row);
    }
    for v in &mut out {
        *v *= scale;
    }
    Tensor::from_parts(vec![n], out)
}
