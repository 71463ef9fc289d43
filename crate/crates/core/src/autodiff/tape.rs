use crate::error::{Error, Result};
use crate::tensor::{gemm_into, Tensor};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Per-element maps with a recorded backward rule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Elementwise {
    /// `max(x, 0)`; the subgradient at 0 is 0.
    Relu,
    /// Natural log; every input entry must be strictly positive.
    Log,
    Exp,
    Scale(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduce {
    /// Average over rows, producing a single row.
    MeanRows,
    /// Per-column maximum over rows, producing a single row. Backward routes
    /// the gradient to the first maximal row.
    MaxCols,
    /// Sum of every entry, producing a 1×1 tensor.
    Sum,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Relu(Var),
    Log(Var),
    Exp(Var),
    Scale(Var, f64),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    MeanRows(Var),
    MaxCols(Var, Vec<usize>),
    Sum(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    Transpose(Var),
    Lookup(Var, Vec<usize>, usize),
    Unfold(Var, usize),
    Pick(Var, Vec<usize>),
    MulConst(Var, Tensor),
    NormalizeRows(Var, Vec<f64>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    requires_grad: bool,
    op: Op,
}

/// Records a forward computation so that [`Tape::backward`] can replay it in
/// reverse. Nodes are appended in evaluation order, so every node's inputs
/// precede it.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

const NORM_FLOOR: f64 = 1e-12;

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

    /// A trainable leaf: its gradient is populated by `backward`.
    pub fn param(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: "leaf" });
        }
        Ok(self.push_raw(value, requires_grad, Op::Leaf))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Gradient accumulated by the last `backward` call, if the node lies on
    /// a path from a trainable leaf to the loss.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    /// Scalar value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        let t = self.value(v);
        debug_assert_eq!(t.shape(), (1, 1));
        t.data()[0]
    }

    fn push_raw(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor, inputs: &[Var], op: Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_raw(value, requires_grad, op))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::Shape { op, lhs: sa, rhs: sb });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push("matmul", out, &[a, b], Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::from_vec(va.rows(), va.cols(), data)?;
        self.push("add", out, &[a, b], Op::Add(a, b))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::from_vec(va.rows(), va.cols(), data)?;
        self.push("mul", out, &[a, b], Op::Mul(a, b))
    }

    /// Elementwise product with a constant mask (used for dropout).
    pub fn mul_const(&mut self, a: Var, mask: Tensor) -> Result<Var> {
        let va = self.value(a);
        if va.shape() != mask.shape() {
            return Err(Error::Shape {
                op: "mul_const",
                lhs: va.shape(),
                rhs: mask.shape(),
            });
        }
        let data = va.data().iter().zip(mask.data()).map(|(x, m)| x * m).collect();
        let out = Tensor::from_vec(va.rows(), va.cols(), data)?;
        self.push("mul_const", out, &[a], Op::MulConst(a, mask))
    }

    /// Adds a 1×n bias row to every row of an m×n tensor.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(bias));
        if sb != (1, sa.1) {
            return Err(Error::Shape {
                op: "add_bias",
                lhs: sa,
                rhs: sb,
            });
        }
        let mut out = self.value(a).clone();
        let b = self.value(bias).data().to_vec();
        for r in 0..sa.0 {
            for (x, bv) in out.row_mut(r).iter_mut().zip(&b) {
                *x += bv;
            }
        }
        self.push("add_bias", out, &[a, bias], Op::AddBias(a, bias))
    }

    pub fn map(&mut self, a: Var, f: Elementwise) -> Result<Var> {
        let va = self.value(a);
        match f {
            Elementwise::Relu => {
                let out = va.map(|x| if x > 0.0 { x } else { 0.0 });
                self.push("relu", out, &[a], Op::Relu(a))
            }
            Elementwise::Log => {
                if let Some(bad) = va.data().iter().find(|&&x| x <= 0.0) {
                    return Err(Error::Domain {
                        op: "log",
                        msg: format!("non-positive entry {bad}"),
                    });
                }
                let out = va.map(f64::ln);
                self.push("log", out, &[a], Op::Log(a))
            }
            Elementwise::Exp => {
                let out = va.map(f64::exp);
                self.push("exp", out, &[a], Op::Exp(a))
            }
            Elementwise::Scale(c) => {
                let out = va.map(|x| c * x);
                self.push("scale", out, &[a], Op::Scale(a, c))
            }
        }
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.map(a, Elementwise::Relu)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.map(a, Elementwise::Scale(c))
    }

    /// Row-wise softmax, computed after subtracting each row's maximum.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let out = softmax_rows(self.value(a));
        self.push("softmax_rows", out, &[a], Op::SoftmaxRows(a))
    }

    /// Row-wise log-softmax via the log-sum-exp shift.
    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        let mut out = va.clone();
        for r in 0..va.rows() {
            let row = out.row_mut(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            for x in row.iter_mut() {
                *x -= lse;
            }
        }
        self.push("log_softmax_rows", out, &[a], Op::LogSoftmaxRows(a))
    }

    pub fn reduce(&mut self, a: Var, kind: Reduce) -> Result<Var> {
        let va = self.value(a);
        if va.is_empty() {
            return Err(Error::Shape {
                op: "reduce",
                lhs: va.shape(),
                rhs: (1, 1),
            });
        }
        let (m, n) = va.shape();
        match kind {
            Reduce::MeanRows => {
                let mut out = Tensor::zeros(1, n);
                for r in 0..m {
                    for (o, x) in out.data_mut().iter_mut().zip(va.row(r)) {
                        *o += x;
                    }
                }
                let inv = 1.0 / m as f64;
                out.data_mut().iter_mut().for_each(|o| *o *= inv);
                self.push("mean_rows", out, &[a], Op::MeanRows(a))
            }
            Reduce::MaxCols => {
                let mut out = Tensor::zeros(1, n);
                let mut arg = vec![0usize; n];
                for c in 0..n {
                    let mut best = va.get(0, c);
                    for r in 1..m {
                        let x = va.get(r, c);
                        if x > best {
                            best = x;
                            arg[c] = r;
                        }
                    }
                    out.data_mut()[c] = best;
                }
                self.push("max_cols", out, &[a], Op::MaxCols(a, arg))
            }
            Reduce::Sum => {
                let out = Tensor::filled(1, 1, va.sum());
                self.push("sum", out, &[a], Op::Sum(a))
            }
        }
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.reduce(a, Reduce::Sum)
    }

    /// Appends columns of every part, in argument order.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::Contract("concat_cols of no parts".into()));
        };
        let rows = self.shape(first).0;
        let mut cols = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.0 != rows {
                return Err(Error::Shape {
                    op: "concat_cols",
                    lhs: self.shape(first),
                    rhs: s,
                });
            }
            cols += s.1;
        }
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for &p in parts {
                let src = self.value(p).row(r);
                out.row_mut(r)[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        self.push("concat_cols", out, parts, Op::ConcatCols(parts.to_vec()))
    }

    /// Stacks parts vertically, in argument order.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::Contract("concat_rows of no parts".into()));
        };
        let cols = self.shape(first).1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            if v.cols() != cols {
                return Err(Error::Shape {
                    op: "concat_rows",
                    lhs: self.shape(first),
                    rhs: v.shape(),
                });
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let out = Tensor::from_vec(rows, cols, data)?;
        self.push("concat_rows", out, parts, Op::ConcatRows(parts.to_vec()))
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let va = self.value(a);
        if start + len > va.cols() {
            return Err(Error::Shape {
                op: "slice_cols",
                lhs: va.shape(),
                rhs: (start, len),
            });
        }
        let mut out = Tensor::zeros(va.rows(), len);
        for r in 0..va.rows() {
            out.row_mut(r).copy_from_slice(&va.row(r)[start..start + len]);
        }
        self.push("slice_cols", out, &[a], Op::SliceCols(a, start))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose();
        self.push("transpose", out, &[a], Op::Transpose(a))
    }

    /// Row lookup into an embedding table. Positions whose id equals `pad`
    /// produce a zero row and send no gradient back to the table.
    pub fn lookup(&mut self, table: Var, ids: &[usize], pad: usize) -> Result<Var> {
        let t = self.value(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= t.rows()) {
            return Err(Error::Input(format!(
                "token id {bad} outside table of {} rows",
                t.rows()
            )));
        }
        let mut out = Tensor::zeros(ids.len(), t.cols());
        for (r, &id) in ids.iter().enumerate() {
            if id != pad {
                out.row_mut(r).copy_from_slice(t.row(id));
            }
        }
        self.push("lookup", out, &[table], Op::Lookup(table, ids.to_vec(), pad))
    }

    /// Sliding windows over rows: output row `i` is the concatenation of
    /// input rows `i..i + window`.
    pub fn unfold(&mut self, a: Var, window: usize) -> Result<Var> {
        let va = self.value(a);
        let (m, d) = va.shape();
        if window == 0 || window > m {
            return Err(Error::Config(format!(
                "window {window} does not fit a sequence of length {m}"
            )));
        }
        let n = m - window + 1;
        let mut out = Tensor::zeros(n, window * d);
        for i in 0..n {
            out.row_mut(i)
                .copy_from_slice(&va.data()[i * d..(i + window) * d]);
        }
        self.push("unfold", out, &[a], Op::Unfold(a, window))
    }

    /// Selects entry `(i, cols[i])` of every row, producing an m×1 column.
    pub fn pick(&mut self, a: Var, cols: &[usize]) -> Result<Var> {
        let va = self.value(a);
        if cols.len() != va.rows() {
            return Err(Error::Shape {
                op: "pick",
                lhs: va.shape(),
                rhs: (cols.len(), 1),
            });
        }
        if let Some(&bad) = cols.iter().find(|&&c| c >= va.cols()) {
            return Err(Error::Input(format!(
                "column {bad} out of range for {} columns",
                va.cols()
            )));
        }
        let data = cols.iter().enumerate().map(|(r, &c)| va.get(r, c)).collect();
        let out = Tensor::from_vec(cols.len(), 1, data)?;
        self.push("pick", out, &[a], Op::Pick(a, cols.to_vec()))
    }

    /// Scales every row to unit Euclidean norm.
    pub fn normalize_rows(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        let mut out = va.clone();
        let mut norms = Vec::with_capacity(va.rows());
        for r in 0..va.rows() {
            let row = out.row_mut(r);
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt().max(NORM_FLOOR);
            row.iter_mut().for_each(|x| *x /= norm);
            norms.push(norm);
        }
        self.push("normalize_rows", out, &[a], Op::NormalizeRows(a, norms))
    }

    /// Reverse traversal from a scalar loss, seeding its gradient with 1.
    ///
    /// Any gradients from an earlier call are discarded first, so repeated
    /// calls over the same tape give identical results.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::Contract("backward on an empty tape".into()));
        }
        if self.shape(loss) != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a 1x1 loss, got {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(1, 1, 1.0));

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }

        for (node, g) in self.nodes.iter_mut().zip(grads) {
            node.grad = if node.requires_grad { g } else { None };
        }
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let nodes = &self.nodes;
        let out = &nodes[i].value;
        let wants = |v: Var| nodes[v.0].requires_grad;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut Tensor)| {
            if !nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| {
                let (r, c) = nodes[v.0].value.shape();
                Tensor::zeros(r, c)
            });
            f(slot);
        };

        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                if wants(*a) {
                    acc(*a, &mut |ga| gemm_into(ga, 1.0, g.view(), vb.view().t()));
                }
                if wants(*b) {
                    acc(*b, &mut |gb| gemm_into(gb, 1.0, va.view().t(), g.view()));
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    acc(v, &mut |ga| add_into(ga.data_mut(), g.data()));
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                acc(*a, &mut |ga| {
                    for ((x, gi), y) in ga.data_mut().iter_mut().zip(g.data()).zip(vb.data()) {
                        *x += gi * y;
                    }
                });
                acc(*b, &mut |gb| {
                    for ((x, gi), y) in gb.data_mut().iter_mut().zip(g.data()).zip(va.data()) {
                        *x += gi * y;
                    }
                });
            }
            Op::MulConst(a, mask) => acc(*a, &mut |ga| {
                for ((x, gi), m) in ga.data_mut().iter_mut().zip(g.data()).zip(mask.data()) {
                    *x += gi * m;
                }
            }),
            Op::AddBias(a, b) => {
                acc(*a, &mut |ga| add_into(ga.data_mut(), g.data()));
                acc(*b, &mut |gb| {
                    for r in 0..g.rows() {
                        add_into(gb.data_mut(), g.row(r));
                    }
                });
            }
            Op::Relu(a) => acc(*a, &mut |ga| {
                for ((x, gi), y) in ga.data_mut().iter_mut().zip(g.data()).zip(out.data()) {
                    if *y > 0.0 {
                        *x += gi;
                    }
                }
            }),
            Op::Log(a) => {
                let va = &nodes[a.0].value;
                acc(*a, &mut |ga| {
                    for ((x, gi), xin) in ga.data_mut().iter_mut().zip(g.data()).zip(va.data()) {
                        *x += gi / xin;
                    }
                })
            }
            Op::Exp(a) => acc(*a, &mut |ga| {
                for ((x, gi), y) in ga.data_mut().iter_mut().zip(g.data()).zip(out.data()) {
                    *x += gi * y;
                }
            }),
            Op::Scale(a, c) => acc(*a, &mut |ga| {
                for (x, gi) in ga.data_mut().iter_mut().zip(g.data()) {
                    *x += c * gi;
                }
            }),
            Op::SoftmaxRows(a) => acc(*a, &mut |ga| {
                for r in 0..out.rows() {
                    let (y, gr) = (out.row(r), g.row(r));
                    let dot: f64 = y.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for ((x, p), q) in ga.row_mut(r).iter_mut().zip(y).zip(gr) {
                        *x += p * (q - dot);
                    }
                }
            }),
            Op::LogSoftmaxRows(a) => acc(*a, &mut |ga| {
                for r in 0..out.rows() {
                    let (y, gr) = (out.row(r), g.row(r));
                    let total: f64 = gr.iter().sum();
                    for ((x, ly), q) in ga.row_mut(r).iter_mut().zip(y).zip(gr) {
                        *x += q - ly.exp() * total;
                    }
                }
            }),
            Op::MeanRows(a) => {
                let m = nodes[a.0].value.rows();
                let inv = 1.0 / m as f64;
                acc(*a, &mut |ga| {
                    for r in 0..m {
                        for (x, gi) in ga.row_mut(r).iter_mut().zip(g.data()) {
                            *x += gi * inv;
                        }
                    }
                })
            }
            Op::MaxCols(a, arg) => acc(*a, &mut |ga| {
                for (c, &r) in arg.iter().enumerate() {
                    let v = ga.get(r, c) + g.data()[c];
                    ga.set(r, c, v);
                }
            }),
            Op::Sum(a) => {
                let s = g.data()[0];
                acc(*a, &mut |ga| ga.data_mut().iter_mut().for_each(|x| *x += s))
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = nodes[p.0].value.cols();
                    acc(p, &mut |gp| {
                        for r in 0..g.rows() {
                            add_into(gp.row_mut(r), &g.row(r)[off..off + w]);
                        }
                    });
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = nodes[p.0].value.len();
                    acc(p, &mut |gp| add_into(gp.data_mut(), &g.data()[off..off + len]));
                    off += len;
                }
            }
            Op::SliceCols(a, start) => acc(*a, &mut |ga| {
                let w = g.cols();
                for r in 0..g.rows() {
                    add_into(&mut ga.row_mut(r)[*start..start + w], g.row(r));
                }
            }),
            Op::Transpose(a) => acc(*a, &mut |ga| {
                let gt = g.transpose();
                add_into(ga.data_mut(), gt.data());
            }),
            Op::Lookup(table, ids, pad) => acc(*table, &mut |gt| {
                for (r, &id) in ids.iter().enumerate() {
                    if id != *pad {
                        add_into(gt.row_mut(id), g.row(r));
                    }
                }
            }),
            Op::Unfold(a, window) => acc(*a, &mut |ga| {
                let d = ga.cols();
                for i in 0..g.rows() {
                    add_into(&mut ga.data_mut()[i * d..(i + window) * d], g.row(i));
                }
            }),
            Op::Pick(a, cols) => acc(*a, &mut |ga| {
                for (r, &c) in cols.iter().enumerate() {
                    let v = ga.get(r, c) + g.data()[r];
                    ga.set(r, c, v);
                }
            }),
            Op::NormalizeRows(a, norms) => acc(*a, &mut |ga| {
                for (r, norm) in norms.iter().enumerate() {
                    let (y, gr) = (out.row(r), g.row(r));
                    let dot: f64 = y.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for ((x, p), q) in ga.row_mut(r).iter_mut().zip(y).zip(gr) {
                        *x += (q - p * dot) / norm;
                    }
                }
            }),
        }
    }
}

#[inline]
fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Row-wise softmax of a plain tensor, with per-row max subtraction.
pub fn softmax_rows(t: &Tensor) -> Tensor {
    let mut out = t.clone();
    for r in 0..t.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            total += *x;
        }
        row.iter_mut().for_each(|x| *x /= total);
    }
    out
}
