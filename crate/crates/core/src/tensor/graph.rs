use super::{matmul_into, Shape, Tensor, TensorError};

/// Handle to a node of one [`Graph`]. Only meaningful for the graph that
/// created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Scale(NodeId, f64),
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    Softmax(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Sum(NodeId),
    MeanRows(NodeId, Vec<usize>),
    GatherRows(NodeId, Vec<usize>),
    Reshape(NodeId),
    LeakyRelu(NodeId, f64),
    Sigmoid(NodeId),
    LogSumExp(NodeId, Option<Tensor>),
    NormalizeRows(NodeId, Vec<f64>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Names of the differentiable operations the core provides.
pub fn op_set() -> &'static [&'static str] {
    &[
        "matmul",
        "transpose",
        "add",
        "sub",
        "mul",
        "add_row",
        "scale",
        "concat_cols",
        "concat_rows",
        "softmax_rows",
        "masked_softmax_rows",
        "exp",
        "log",
        "sum",
        "mean_rows",
        "gather_rows",
        "reshape",
        "leaky_relu",
        "sigmoid",
        "logsumexp_rows",
        "weighted_logsumexp_rows",
        "normalize_rows",
        "cosine_similarity",
        "scaled_dot_product_attention",
    ]
}

/// A computation recorded in creation order. Node indices are a
/// topological order, so backward is a single reverse sweep.
///
/// Gradients live in the graph: [`Graph::param`] leaves and every node
/// derived from one receive a gradient on [`Graph::backward`]. Calling
/// `backward` again without [`Graph::zero_grad`] adds to the stored
/// gradients.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

fn shape_err(op: &'static str, lhs: Shape, rhs: Shape) -> TensorError {
    TensorError::Shape { op, lhs, rhs }
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, requires_grad });
        self.grads.push(None);
        NodeId(self.nodes.len() - 1)
    }

    fn derived(&mut self, value: Tensor, op: Op, inputs: &[NodeId]) -> NodeId {
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        self.push(value, op, requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> Shape {
        self.nodes[id.0].value.shape()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Accumulated gradient, `None` if no gradient reached the node.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }

    /// Drops every node created after the first `len`. Ids of dropped
    /// nodes must not be used again.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
        self.grads.truncate(len);
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.derived(out, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).transpose();
        self.derived(out, Op::Transpose(a), &[a])
    }

    fn zip_with(
        &mut self,
        op_name: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<NodeId, TensorError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err(op_name, va.shape(), vb.shape()));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor { rows: va.rows, cols: va.cols, data };
        Ok(self.derived(out, op, &[a, b]))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.zip_with("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.zip_with("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.zip_with("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds the `1 x cols` row `row` to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId, TensorError> {
        let (va, vr) = (self.value(a), self.value(row));
        if vr.rows != 1 || vr.cols != va.cols {
            return Err(shape_err("add_row", va.shape(), vr.shape()));
        }
        let mut out = va.clone();
        for r in 0..out.rows {
            for (o, b) in out.data[r * out.cols..(r + 1) * out.cols].iter_mut().zip(&vr.data) {
                *o += b;
            }
        }
        Ok(self.derived(out, Op::AddRow(a, row), &[a, row]))
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        let out = self.value(a).map(|v| v * k);
        self.derived(out, Op::Scale(a, k), &[a])
    }

    /// Side-by-side concatenation; all parts share a row count.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId, TensorError> {
        let first = *parts.first().ok_or(TensorError::Invalid { op: "concat_cols", msg: "no inputs".into() })?;
        let rows = self.value(first).rows;
        let mut cols = 0;
        for &p in parts {
            let v = self.value(p);
            if v.rows != rows {
                return Err(shape_err("concat_cols", self.shape(first), v.shape()));
            }
            cols += v.cols;
        }
        let mut out = Tensor::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let v = self.value(p);
            for r in 0..rows {
                out.data[r * cols + offset..r * cols + offset + v.cols].copy_from_slice(v.row_slice(r));
            }
            offset += v.cols;
        }
        Ok(self.derived(out, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Vertical stacking; all parts share a column count.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId, TensorError> {
        let first = *parts.first().ok_or(TensorError::Invalid { op: "concat_rows", msg: "no inputs".into() })?;
        let cols = self.value(first).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            if v.cols != cols {
                return Err(shape_err("concat_rows", self.shape(first), v.shape()));
            }
            data.extend_from_slice(v.data());
            rows += v.rows;
        }
        let out = Tensor { rows, cols, data };
        Ok(self.derived(out, Op::ConcatRows(parts.to_vec()), parts))
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        let mut out = v.clone();
        for r in 0..v.rows {
            let row = &mut out.data[r * v.cols..(r + 1) * v.cols];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                total += *x;
            }
            row.iter_mut().for_each(|x| *x /= total);
        }
        self.derived(out, Op::Softmax(a), &[a])
    }

    /// Row softmax restricted to entries where `mask` is true; masked
    /// entries come out as exactly 0. Every row needs one unmasked entry.
    pub fn masked_softmax_rows(&mut self, a: NodeId, mask: &[bool]) -> Result<NodeId, TensorError> {
        let v = self.value(a);
        if mask.len() != v.len() {
            return Err(TensorError::Invalid {
                op: "masked_softmax_rows",
                msg: format!("mask has {} entries for a {:?} input", mask.len(), v.shape()),
            });
        }
        let mut out = Tensor::zeros(v.rows, v.cols);
        for r in 0..v.rows {
            let span = r * v.cols..(r + 1) * v.cols;
            let (x, m) = (&v.data[span.clone()], &mask[span.clone()]);
            let max = x.iter().zip(m).filter(|(_, &keep)| keep).map(|(&x, _)| x).fold(f64::NEG_INFINITY, f64::max);
            if !m.iter().any(|&keep| keep) {
                return Err(TensorError::Invalid {
                    op: "masked_softmax_rows",
                    msg: format!("row {r} is fully masked"),
                });
            }
            if !max.is_finite() || x.iter().zip(m).any(|(v, &keep)| keep && v.is_nan()) {
                return Err(TensorError::NonFinite(format!("masked_softmax_rows row {r}")));
            }
            let row = &mut out.data[span];
            let mut total = 0.0;
            for ((o, &xv), &keep) in row.iter_mut().zip(x).zip(m) {
                if keep {
                    *o = (xv - max).exp();
                    total += *o;
                }
            }
            row.iter_mut().for_each(|o| *o /= total);
        }
        // Backward only needs the output, so this shares the softmax rule.
        Ok(self.derived(out, Op::Softmax(a), &[a]))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(f64::exp);
        self.derived(out, Op::Exp(a), &[a])
    }

    /// Natural log; every entry must be positive.
    pub fn log(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let v = self.value(a);
        if let Some(bad) = v.data().iter().find(|&&x| x <= 0.0 || x.is_nan()) {
            return Err(TensorError::Invalid { op: "log", msg: format!("non-positive input {bad}") });
        }
        let out = v.map(f64::ln);
        Ok(self.derived(out, Op::Log(a), &[a]))
    }

    /// Sum of all entries as a 1x1 node.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let out = Tensor::scalar(self.value(a).data().iter().sum());
        self.derived(out, Op::Sum(a), &[a])
    }

    /// `1 x cols` mean of the listed rows (repeats count twice).
    pub fn mean_rows(&mut self, a: NodeId, rows: &[usize]) -> Result<NodeId, TensorError> {
        let v = self.value(a);
        if rows.is_empty() {
            return Err(TensorError::Invalid { op: "mean_rows", msg: "empty row subset".into() });
        }
        if let Some(&r) = rows.iter().find(|&&r| r >= v.rows) {
            return Err(TensorError::Invalid {
                op: "mean_rows",
                msg: format!("row {r} out of range for {:?}", v.shape()),
            });
        }
        let mut out = Tensor::zeros(1, v.cols);
        for &r in rows {
            for (o, x) in out.data.iter_mut().zip(v.row_slice(r)) {
                *o += x;
            }
        }
        let k = rows.len() as f64;
        out.data.iter_mut().for_each(|o| *o /= k);
        Ok(self.derived(out, Op::MeanRows(a, rows.to_vec()), &[a]))
    }

    /// Rows of `a` in the listed order.
    pub fn gather_rows(&mut self, a: NodeId, rows: &[usize]) -> Result<NodeId, TensorError> {
        let v = self.value(a);
        if let Some(&r) = rows.iter().find(|&&r| r >= v.rows) {
            return Err(TensorError::Invalid {
                op: "gather_rows",
                msg: format!("row {r} out of range for {:?}", v.shape()),
            });
        }
        let mut data = Vec::with_capacity(rows.len() * v.cols);
        for &r in rows {
            data.extend_from_slice(v.row_slice(r));
        }
        let out = Tensor { rows: rows.len(), cols: v.cols, data };
        Ok(self.derived(out, Op::GatherRows(a, rows.to_vec()), &[a]))
    }

    /// Reinterprets the row-major data under a new shape.
    pub fn reshape(&mut self, a: NodeId, rows: usize, cols: usize) -> Result<NodeId, TensorError> {
        let v = self.value(a);
        if v.len() != rows * cols {
            return Err(shape_err("reshape", v.shape(), (rows, cols)));
        }
        let out = Tensor { rows, cols, data: v.data.clone() };
        Ok(self.derived(out, Op::Reshape(a), &[a]))
    }

    pub fn leaky_relu(&mut self, a: NodeId, slope: f64) -> NodeId {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        self.derived(out, Op::LeakyRelu(a, slope), &[a])
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(|x| 1.0 / (1.0 + (-x).exp()));
        self.derived(out, Op::Sigmoid(a), &[a])
    }

    /// `rows x 1` log-sum-exp of each row.
    pub fn logsumexp_rows(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        self.lse(a, None)
    }

    /// `rows x 1` values `log sum_j w_ij exp(a_ij)` for nonnegative
    /// constant weights. Zero-weight entries are excluded; a row whose
    /// weights are all zero is an error.
    pub fn weighted_logsumexp_rows(&mut self, a: NodeId, weights: Tensor) -> Result<NodeId, TensorError> {
        if weights.shape() != self.shape(a) {
            return Err(shape_err("weighted_logsumexp_rows", self.shape(a), weights.shape()));
        }
        if weights.data().iter().any(|&w| !w.is_finite() || w < 0.0) {
            return Err(TensorError::Invalid {
                op: "weighted_logsumexp_rows",
                msg: "weights must be finite and nonnegative".into(),
            });
        }
        self.lse(a, Some(weights))
    }

    fn lse(&mut self, a: NodeId, weights: Option<Tensor>) -> Result<NodeId, TensorError> {
        let v = self.value(a);
        let mut out = Tensor::zeros(v.rows, 1);
        for r in 0..v.rows {
            let x = v.row_slice(r);
            let w = weights.as_ref().map(|w| w.row_slice(r));
            let keep = |c: usize| w.is_none_or(|w| w[c] > 0.0);
            if (0..v.cols).any(|c| keep(c) && x[c].is_nan()) {
                out.data[r] = f64::NAN;
                continue;
            }
            let max = (0..v.cols).filter(|&c| keep(c)).map(|c| x[c]).fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(TensorError::Invalid { op: "logsumexp_rows", msg: format!("row {r} has no terms") });
            }
            let total: f64 =
                (0..v.cols).filter(|&c| keep(c)).map(|c| w.map_or(1.0, |w| w[c]) * (x[c] - max).exp()).sum();
            out.data[r] = max + total.ln();
        }
        Ok(self.derived(out, Op::LogSumExp(a, weights), &[a]))
    }

    /// Scales each row to unit Euclidean norm. A zero row is an error
    /// reporting its index.
    pub fn normalize_rows(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let v = self.value(a);
        let mut out = v.clone();
        let mut norms = Vec::with_capacity(v.rows);
        for r in 0..v.rows {
            let row = &mut out.data[r * v.cols..(r + 1) * v.cols];
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !norm.is_finite() {
                return Err(TensorError::NonFinite(format!("normalize_rows row {r}")));
            }
            if norm == 0.0 {
                return Err(TensorError::ZeroNorm { op: "normalize_rows", row: r });
            }
            row.iter_mut().for_each(|x| *x /= norm);
            norms.push(norm);
        }
        Ok(self.derived(out, Op::NormalizeRows(a, norms), &[a]))
    }

    /// Pairwise cosine similarities: entry `(i, j)` compares row `i` of
    /// `a` with row `j` of `b`.
    pub fn cosine_similarity(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let na = self.normalize_rows(a)?;
        let nb = if a == b { na } else { self.normalize_rows(b)? };
        let nbt = self.transpose(nb);
        self.matmul(na, nbt)
    }

    /// `softmax(q k^T / sqrt(d_k)) v`. Returns the output and the
    /// attention weights.
    pub fn scaled_dot_product_attention(
        &mut self,
        q: NodeId,
        k: NodeId,
        v: NodeId,
    ) -> Result<(NodeId, NodeId), TensorError> {
        let dk = self.shape(k).1;
        if self.shape(q).1 != dk {
            return Err(shape_err("attention", self.shape(q), self.shape(k)));
        }
        let kt = self.transpose(k);
        let scores = self.matmul(q, kt)?;
        let scaled = self.scale(scores, 1.0 / (dk as f64).sqrt());
        let weights = self.softmax_rows(scaled);
        let out = self.matmul(weights, v)?;
        Ok((out, weights))
    }

    /// Reverse sweep from a 1x1 `loss`, adding into stored gradients.
    pub fn backward(&mut self, loss: NodeId) -> Result<(), TensorError> {
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(TensorError::NotScalar(shape));
        }
        let mut pass: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        pass[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = pass[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut pass);
            match &mut self.grads[i] {
                Some(acc) => acc.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Tensor, pass: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        let mut send = |target: NodeId, delta: Tensor| {
            debug_assert!(target.0 < i, "graph order violated");
            if !self.nodes[target.0].requires_grad {
                return;
            }
            match &mut pass[target.0] {
                Some(acc) => acc.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };
        let needs = |id: NodeId| self.nodes[id.0].requires_grad;
        let val = |id: NodeId| &self.nodes[id.0].value;

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                if needs(*a) {
                    let mut da = Tensor::zeros(va.rows, va.cols);
                    let bt = vb.transpose();
                    matmul_into(&g.data, &bt.data, &mut da.data, g.rows, g.cols, va.cols);
                    send(*a, da);
                }
                if needs(*b) {
                    let mut db = Tensor::zeros(vb.rows, vb.cols);
                    let at = va.transpose();
                    matmul_into(&at.data, &g.data, &mut db.data, va.cols, va.rows, g.cols);
                    send(*b, db);
                }
            }
            Op::Transpose(a) => send(*a, g.transpose()),
            Op::Add(a, b) => {
                send(*a, g.clone());
                send(*b, g.clone());
            }
            Op::Sub(a, b) => {
                send(*a, g.clone());
                send(*b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                if needs(*a) {
                    let d = g.data.iter().zip(&vb.data).map(|(g, y)| g * y).collect();
                    send(*a, Tensor { rows: g.rows, cols: g.cols, data: d });
                }
                if needs(*b) {
                    let d = g.data.iter().zip(&va.data).map(|(g, x)| g * x).collect();
                    send(*b, Tensor { rows: g.rows, cols: g.cols, data: d });
                }
            }
            Op::AddRow(a, row) => {
                send(*a, g.clone());
                if needs(*row) {
                    let mut d = Tensor::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for (o, x) in d.data.iter_mut().zip(g.row_slice(r)) {
                            *o += x;
                        }
                    }
                    send(*row, d);
                }
            }
            Op::Scale(a, k) => send(*a, g.map(|x| x * k)),
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let cols = val(p).cols;
                    if needs(p) {
                        let mut d = Tensor::zeros(g.rows, cols);
                        for r in 0..g.rows {
                            d.data[r * cols..(r + 1) * cols].copy_from_slice(&g.row_slice(r)[offset..offset + cols]);
                        }
                        send(p, d);
                    }
                    offset += cols;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (rows, cols) = val(p).shape();
                    if needs(p) {
                        let data = g.data[offset * cols..(offset + rows) * cols].to_vec();
                        send(p, Tensor { rows, cols, data });
                    }
                    offset += rows;
                }
            }
            Op::Softmax(a) => {
                let mut d = Tensor::zeros(out.rows, out.cols);
                for r in 0..out.rows {
                    let (y, gy) = (out.row_slice(r), g.row_slice(r));
                    let dot: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
                    for (c, o) in d.data[r * out.cols..(r + 1) * out.cols].iter_mut().enumerate() {
                        *o = y[c] * (gy[c] - dot);
                    }
                }
                send(*a, d);
            }
            Op::Exp(a) => {
                let d = g.data.iter().zip(&out.data).map(|(g, y)| g * y).collect();
                send(*a, Tensor { rows: g.rows, cols: g.cols, data: d });
            }
            Op::Log(a) => {
                let d = g.data.iter().zip(&val(*a).data).map(|(g, x)| g / x).collect();
                send(*a, Tensor { rows: g.rows, cols: g.cols, data: d });
            }
            Op::Sum(a) => {
                let (rows, cols) = val(*a).shape();
                send(*a, Tensor::filled(rows, cols, g.item()));
            }
            Op::MeanRows(a, rows) => {
                let (r_all, cols) = val(*a).shape();
                let mut d = Tensor::zeros(r_all, cols);
                let k = rows.len() as f64;
                for &r in rows {
                    for (o, x) in d.data[r * cols..(r + 1) * cols].iter_mut().zip(&g.data) {
                        *o += x / k;
                    }
                }
                send(*a, d);
            }
            Op::GatherRows(a, rows) => {
                let (r_all, cols) = val(*a).shape();
                let mut d = Tensor::zeros(r_all, cols);
                for (i, &r) in rows.iter().enumerate() {
                    for (o, x) in d.data[r * cols..(r + 1) * cols].iter_mut().zip(g.row_slice(i)) {
                        *o += x;
                    }
                }
                send(*a, d);
            }
            Op::Reshape(a) => {
                let (rows, cols) = val(*a).shape();
                send(*a, Tensor { rows, cols, data: g.data.clone() });
            }
            Op::LeakyRelu(a, slope) => {
                let d = g.data.iter().zip(&val(*a).data).map(|(g, &x)| if x > 0.0 { *g } else { g * slope }).collect();
                send(*a, Tensor { rows: g.rows, cols: g.cols, data: d });
            }
            Op::Sigmoid(a) => {
                let d = g.data.iter().zip(&out.data).map(|(g, y)| g * y * (1.0 - y)).collect();
                send(*a, Tensor { rows: g.rows, cols: g.cols, data: d });
            }
            Op::LogSumExp(a, weights) => {
                let x = val(*a);
                let mut d = Tensor::zeros(x.rows, x.cols);
                for r in 0..x.rows {
                    let (lse, gr) = (out.data[r], g.data[r]);
                    for c in 0..x.cols {
                        let w = weights.as_ref().map_or(1.0, |w| w.get(r, c));
                        if w > 0.0 {
                            d.data[r * x.cols + c] = gr * w * (x.get(r, c) - lse).exp();
                        }
                    }
                }
                send(*a, d);
            }
            Op::NormalizeRows(a, norms) => {
                let mut d = Tensor::zeros(out.rows, out.cols);
                for (r, norm) in norms.iter().enumerate() {
                    let (y, gy) = (out.row_slice(r), g.row_slice(r));
                    let dot: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
                    for (c, o) in d.data[r * out.cols..(r + 1) * out.cols].iter_mut().enumerate() {
                        *o = (gy[c] - y[c] * dot) / norm;
                    }
                }
                send(*a, d);
            }
        }
    }
}
