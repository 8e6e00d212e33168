use std::cell::RefCell;

use crate::error::{Error, Result};
use crate::tensor::sparsemax;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`]. Only valid for the tape that created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    pub(crate) id: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    /// Matrix [n,d] plus a row vector [d] broadcast over every row.
    AddBias(usize, usize),
    /// Matrix [n,d] plus a per-row scalar [n] broadcast along each row.
    AddChannelBias(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    /// Length-1 tensor broadcast to a length-n vector.
    BroadcastScalar(usize),
    /// Matrix [n,d] with row i scaled by v[i]; both differentiable.
    RowScale(usize, usize),
    /// 1-D concatenation of several vectors.
    Concat(Vec<usize>),
    /// Column-wise (last axis) concatenation of two matrices.
    ConcatCols(usize, usize),
    /// Stack equal-length vectors as the rows of a matrix.
    StackRows(Vec<usize>),
    GatherRows(usize, Vec<usize>),
    /// Rows of the input added into a zeroed matrix at the given indices;
    /// duplicate indices accumulate. The target row count is the node shape.
    ScatterAddRows(usize, Vec<usize>),
    SumAll(usize),
    MeanAll(usize),
    /// Mean along the last axis: [n,d] -> [n].
    RowMean(usize),
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    SparsemaxRows(usize),
    /// Cross-correlation of C kernels (each spanning all input rows)
    /// along the length axis. Kernels are packed as [C, rows*k].
    Conv1d {
        input: usize,
        kernels: usize,
        k: usize,
        same_padding: bool,
    },
    /// A single 1-D kernel applied independently to every row.
    Conv1dRows {
        input: usize,
        kernel: usize,
        same_padding: bool,
    },
    Reshape(usize),
    /// Binary cross-entropy against constant 0/1 labels: mean over rows,
    /// sum over columns. Probabilities are clamped to [1e-12, 1-1e-12].
    BceLoss { probs: usize, labels: Vec<f64> },
}

struct Node {
    op: Op,
    shape: Vec<usize>,
    value: Vec<f64>,
    requires_grad: bool,
}

/// Records a forward computation so gradients can be propagated in reverse.
///
/// Nodes are appended in creation order, which is already a topological
/// order; [`Tape::backward`] walks it once in reverse. A tape belongs to a
/// single logical execution; independent tapes may run in parallel.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

const CLAMP: f64 = 1e-12;

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    /// Record a trainable leaf; gradients will flow back to it.
    pub fn param(&self, t: &Tensor) -> Var {
        self.leaf(t, true)
    }

    /// Record a non-trainable leaf.
    pub fn constant(&self, t: &Tensor) -> Var {
        self.leaf(t, false)
    }

    fn leaf(&self, t: &Tensor, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            op: Op::Leaf,
            shape: t.shape().to_vec(),
            value: t.data().to_vec(),
            requires_grad,
        });
        Var {
            id: nodes.len() - 1,
        }
    }

    pub fn shape_of(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.id].shape.clone()
    }

    pub fn value_of(&self, v: Var) -> Tensor {
        let nodes = self.nodes.borrow();
        let n = &nodes[v.id];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("node holds a valid tensor")
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.id].requires_grad
    }

    fn push(&self, op: Op, shape: Vec<usize>, value: Vec<f64>, opname: &'static str) -> Result<Var> {
        if !value.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite { op: opname });
        }
        let requires_grad = {
            let nodes = self.nodes.borrow();
            op_inputs(&op).iter().any(|&i| nodes[i].requires_grad)
        };
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            op,
            shape,
            value,
            requires_grad,
        });
        Ok(Var {
            id: nodes.len() - 1,
        })
    }

    fn with_node<R>(&self, v: Var, f: impl FnOnce(&[usize], &[f64]) -> R) -> R {
        let nodes = self.nodes.borrow();
        let n = &nodes[v.id];
        f(&n.shape, &n.value)
    }

    // ---- primitive forward operations -------------------------------------

    /// Matrix product [a,b] x [b,c] -> [a,c].
    pub fn matmul(&self, lhs: Var, rhs: Var) -> Result<Var> {
        let (ls, lv) = self.snapshot(lhs);
        let (rs, rv) = self.snapshot(rhs);
        if ls.len() != 2 || rs.len() != 2 || ls[1] != rs[0] {
            return Err(Error::shapes("matmul", &ls, &rs));
        }
        let (n, k, m) = (ls[0], ls[1], rs[1]);
        let value = matmul_raw(&lv, &rv, n, k, m);
        self.push(Op::MatMul(lhs.id, rhs.id), vec![n, m], value, "matmul")
    }

    pub fn transpose(&self, a: Var) -> Result<Var> {
        let (s, v) = self.snapshot(a);
        if s.len() != 2 {
            return Err(Error::invalid("transpose", "expects a matrix"));
        }
        let (n, m) = (s[0], s[1]);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                out[j * n + i] = v[i * m + j];
            }
        }
        self.push(Op::Transpose(a.id), vec![m, n], out, "transpose")
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.zip("add", a, b, |x, y| x + y, Op::Add(a.id, b.id))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.zip("sub", a, b, |x, y| x - y, Op::Sub(a.id, b.id))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.zip("mul", a, b, |x, y| x * y, Op::Mul(a.id, b.id))
    }

    fn zip(
        &self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (sa, va) = self.snapshot(a);
        let (sb, vb) = self.snapshot(b);
        if sa != sb {
            return Err(Error::shapes(name, &sa, &sb));
        }
        let value = va.iter().zip(vb.iter()).map(|(&x, &y)| f(x, y)).collect();
        self.push(op, sa, value, name)
    }

    /// Add a row vector [d] to every row of a matrix [n,d].
    pub fn add_bias(&self, mat: Var, bias: Var) -> Result<Var> {
        let (ms, mv) = self.snapshot(mat);
        let (bs, bv) = self.snapshot(bias);
        if ms.len() != 2 || bs.len() != 1 || ms[1] != bs[0] {
            return Err(Error::shapes("add_bias", &ms, &bs));
        }
        let (n, d) = (ms[0], ms[1]);
        let mut out = mv;
        for i in 0..n {
            for j in 0..d {
                out[i * d + j] += bv[j];
            }
        }
        self.push(Op::AddBias(mat.id, bias.id), ms, out, "add_bias")
    }

    /// Add a per-row scalar [n] to every entry of row i of a matrix [n,d].
    pub fn add_channel_bias(&self, mat: Var, bias: Var) -> Result<Var> {
        let (ms, mv) = self.snapshot(mat);
        let (bs, bv) = self.snapshot(bias);
        if ms.len() != 2 || bs.len() != 1 || ms[0] != bs[0] {
            return Err(Error::shapes("add_channel_bias", &ms, &bs));
        }
        let (n, d) = (ms[0], ms[1]);
        let mut out = mv;
        for i in 0..n {
            for j in 0..d {
                out[i * d + j] += bv[i];
            }
        }
        self.push(Op::AddChannelBias(mat.id, bias.id), ms, out, "add_channel_bias")
    }

    pub fn scale(&self, a: Var, c: f64) -> Result<Var> {
        let (s, v) = self.snapshot(a);
        let value = v.iter().map(|x| x * c).collect();
        self.push(Op::Scale(a.id, c), s, value, "scale")
    }

    /// Broadcast a length-1 tensor to a length-n vector.
    pub fn broadcast_scalar(&self, a: Var, n: usize) -> Result<Var> {
        let (s, v) = self.snapshot(a);
        if v.len() != 1 {
            return Err(Error::invalid("broadcast_scalar", format!("expects a scalar, got {:?}", s)));
        }
        self.push(Op::BroadcastScalar(a.id), vec![n], vec![v[0]; n], "broadcast_scalar")
    }

    /// Scale row i of a matrix [n,d] by v[i].
    pub fn row_scale(&self, mat: Var, v: Var) -> Result<Var> {
        let (ms, mv) = self.snapshot(mat);
        let (vs, vv) = self.snapshot(v);
        if ms.len() != 2 || vs.len() != 1 || ms[0] != vs[0] {
            return Err(Error::shapes("row_scale", &ms, &vs));
        }
        let (n, d) = (ms[0], ms[1]);
        let mut out = mv;
        for i in 0..n {
            for j in 0..d {
                out[i * d + j] *= vv[i];
            }
        }
        self.push(Op::RowScale(mat.id, v.id), ms, out, "row_scale")
    }

    /// Concatenate vectors along the (only) axis.
    pub fn concat_many(&self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::invalid("concat", "no inputs"));
        }
        let mut out = Vec::new();
        for &p in parts {
            let (s, v) = self.snapshot(p);
            if s.len() != 1 {
                return Err(Error::invalid("concat", format!("expects vectors, got {:?}", s)));
            }
            out.extend_from_slice(&v);
        }
        let len = out.len();
        self.push(
            Op::Concat(parts.iter().map(|p| p.id).collect()),
            vec![len],
            out,
            "concat",
        )
    }

    pub fn concat(&self, a: Var, b: Var) -> Result<Var> {
        self.concat_many(&[a, b])
    }

    /// Concatenate two matrices along the last axis: [n,a] ++ [n,b] -> [n,a+b].
    pub fn concat_cols(&self, a: Var, b: Var) -> Result<Var> {
        let (sa, va) = self.snapshot(a);
        let (sb, vb) = self.snapshot(b);
        if sa.len() != 2 || sb.len() != 2 || sa[0] != sb[0] {
            return Err(Error::shapes("concat_cols", &sa, &sb));
        }
        let (n, ca, cb) = (sa[0], sa[1], sb[1]);
        let mut out = Vec::with_capacity(n * (ca + cb));
        for i in 0..n {
            out.extend_from_slice(&va[i * ca..(i + 1) * ca]);
            out.extend_from_slice(&vb[i * cb..(i + 1) * cb]);
        }
        self.push(Op::ConcatCols(a.id, b.id), vec![n, ca + cb], out, "concat_cols")
    }

    /// Stack equal-length vectors as matrix rows.
    pub fn stack_rows(&self, rows: &[Var]) -> Result<Var> {
        if rows.is_empty() {
            return Err(Error::invalid("stack_rows", "no inputs"));
        }
        let d = {
            let (s, _) = self.snapshot(rows[0]);
            if s.len() != 1 {
                return Err(Error::invalid("stack_rows", format!("expects vectors, got {:?}", s)));
            }
            s[0]
        };
        let mut out = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            let (s, v) = self.snapshot(r);
            if s != vec![d] {
                return Err(Error::shapes("stack_rows", &[d], &s));
            }
            out.extend_from_slice(&v);
        }
        self.push(
            Op::StackRows(rows.iter().map(|r| r.id).collect()),
            vec![rows.len(), d],
            out,
            "stack_rows",
        )
    }

    pub fn gather_rows(&self, mat: Var, indices: &[usize]) -> Result<Var> {
        let (s, v) = self.snapshot(mat);
        if s.len() != 2 {
            return Err(Error::invalid("gather_rows", "expects a matrix"));
        }
        let (n, d) = (s[0], s[1]);
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            if i >= n {
                return Err(Error::invalid(
                    "gather_rows",
                    format!("row index {} out of range (rows = {})", i, n),
                ));
            }
            out.extend_from_slice(&v[i * d..(i + 1) * d]);
        }
        self.push(
            Op::GatherRows(mat.id, indices.to_vec()),
            vec![indices.len(), d],
            out,
            "gather_rows",
        )
    }

    /// Add row r of the input into row indices[r] of a zeroed [n_rows, d]
    /// output; duplicate indices accumulate.
    pub fn scatter_add_rows(&self, src: Var, indices: &[usize], n_rows: usize) -> Result<Var> {
        let (s, v) = self.snapshot(src);
        if s.len() != 2 || s[0] != indices.len() {
            return Err(Error::invalid(
                "scatter_add_rows",
                format!("source rows {:?} vs {} indices", s, indices.len()),
            ));
        }
        let d = s[1];
        let mut out = vec![0.0; n_rows * d];
        for (r, &i) in indices.iter().enumerate() {
            if i >= n_rows {
                return Err(Error::invalid(
                    "scatter_add_rows",
                    format!("target index {} out of range (rows = {})", i, n_rows),
                ));
            }
            for j in 0..d {
                out[i * d + j] += v[r * d + j];
            }
        }
        self.push(
            Op::ScatterAddRows(src.id, indices.to_vec()),
            vec![n_rows, d],
            out,
            "scatter_add_rows",
        )
    }

    pub fn sum_all(&self, a: Var) -> Result<Var> {
        let (_, v) = self.snapshot(a);
        let s: f64 = v.iter().sum();
        self.push(Op::SumAll(a.id), vec![1], vec![s], "sum_all")
    }

    pub fn mean_all(&self, a: Var) -> Result<Var> {
        let (_, v) = self.snapshot(a);
        if v.is_empty() {
            return Err(Error::invalid("mean_all", "empty tensor"));
        }
        let s: f64 = v.iter().sum();
        self.push(Op::MeanAll(a.id), vec![1], vec![s / v.len() as f64], "mean_all")
    }

    /// Mean along the last axis of a matrix: [n,d] -> [n].
    pub fn row_mean(&self, a: Var) -> Result<Var> {
        let (s, v) = self.snapshot(a);
        if s.len() != 2 || s[1] == 0 {
            return Err(Error::invalid("row_mean", format!("expects a matrix with columns, got {:?}", s)));
        }
        let (n, d) = (s[0], s[1]);
        let out = (0..n)
            .map(|i| v[i * d..(i + 1) * d].iter().sum::<f64>() / d as f64)
            .collect();
        self.push(Op::RowMean(a.id), vec![n], out, "row_mean")
    }

    pub fn sigmoid(&self, a: Var) -> Result<Var> {
        let (s, v) = self.snapshot(a);
        let value = v.iter().map(|&x| stable_sigmoid(x)).collect();
        self.push(Op::Sigmoid(a.id), s, value, "sigmoid")
    }

    pub fn tanh(&self, a: Var) -> Result<Var> {
        let (s, v) = self.snapshot(a);
        let value = v.iter().map(|x| x.tanh()).collect();
        self.push(Op::Tanh(a.id), s, value, "tanh")
    }

    pub fn relu(&self, a: Var) -> Result<Var> {
        let (s, v) = self.snapshot(a);
        let value = v.iter().map(|x| x.max(0.0)).collect();
        self.push(Op::Relu(a.id), s, value, "relu")
    }

    /// Row-wise Euclidean projection onto the probability simplex.
    pub fn sparsemax_rows(&self, a: Var) -> Result<Var> {
        let (s, v) = self.snapshot(a);
        if s.len() != 2 {
            return Err(Error::invalid("sparsemax_rows", "expects a matrix"));
        }
        if !v.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite { op: "sparsemax_rows" });
        }
        let (n, m) = (s[0], s[1]);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let row = sparsemax::sparsemax_slice(&v[i * m..(i + 1) * m]);
            out[i * m..(i + 1) * m].copy_from_slice(&row);
        }
        self.push(Op::SparsemaxRows(a.id), s, out, "sparsemax_rows")
    }

    /// Cross-correlate C kernels against the whole input along the length
    /// axis. Kernels are packed as [C, rows*k]; every kernel consumes all
    /// input rows. With `same_padding` (k must be odd) the output keeps
    /// length d; otherwise the output length is d-k+1 and k <= d is
    /// required.
    pub fn conv1d(&self, input: Var, kernels: Var, k: usize, same_padding: bool) -> Result<Var> {
        let (is, iv) = self.snapshot(input);
        let (ks, kv) = self.snapshot(kernels);
        if is.len() != 2 || ks.len() != 2 {
            return Err(Error::shapes("conv1d", &is, &ks));
        }
        let (rows, d) = (is[0], is[1]);
        let channels = ks[0];
        if ks[1] != rows * k {
            return Err(Error::invalid(
                "conv1d",
                format!("kernel width {} incompatible with {} rows x k={}", ks[1], rows, k),
            ));
        }
        if same_padding && k % 2 == 0 {
            return Err(Error::invalid("conv1d", "same padding requires odd kernel size"));
        }
        if !same_padding && k > d {
            return Err(Error::invalid(
                "conv1d",
                format!("kernel size {} exceeds input length {} without padding", k, d),
            ));
        }
        let out_len = if same_padding { d } else { d - k + 1 };
        let pad = if same_padding { (k - 1) / 2 } else { 0 };
        let mut out = vec![0.0; channels * out_len];
        for c in 0..channels {
            let kern = &kv[c * rows * k..(c + 1) * rows * k];
            for p in 0..out_len {
                let mut acc = 0.0;
                for r in 0..rows {
                    for t in 0..k {
                        let pos = p + t;
                        if pos < pad || pos - pad >= d {
                            continue;
                        }
                        acc += kern[r * k + t] * iv[r * d + (pos - pad)];
                    }
                }
                out[c * out_len + p] = acc;
            }
        }
        self.push(
            Op::Conv1d {
                input: input.id,
                kernels: kernels.id,
                k,
                same_padding,
            },
            vec![channels, out_len],
            out,
            "conv1d",
        )
    }

    /// Apply one 1-D kernel [k] independently to every row of [n,d].
    /// Row i of the output equals `conv1d` of row i with the same kernel.
    pub fn conv1d_rows(&self, input: Var, kernel: Var, same_padding: bool) -> Result<Var> {
        let (is, iv) = self.snapshot(input);
        let (ks, kv) = self.snapshot(kernel);
        if is.len() != 2 || ks.len() != 1 {
            return Err(Error::shapes("conv1d_rows", &is, &ks));
        }
        let (n, d) = (is[0], is[1]);
        let k = ks[0];
        if same_padding && k % 2 == 0 {
            return Err(Error::invalid("conv1d_rows", "same padding requires odd kernel size"));
        }
        if !same_padding && k > d {
            return Err(Error::invalid(
                "conv1d_rows",
                format!("kernel size {} exceeds input length {} without padding", k, d),
            ));
        }
        let out_len = if same_padding { d } else { d - k + 1 };
        let pad = if same_padding { (k - 1) / 2 } else { 0 };
        let mut out = vec![0.0; n * out_len];
        for i in 0..n {
            for p in 0..out_len {
                let mut acc = 0.0;
                for t in 0..k {
                    let pos = p + t;
                    if pos < pad || pos - pad >= d {
                        continue;
                    }
                    acc += kv[t] * iv[i * d + (pos - pad)];
                }
                out[i * out_len + p] = acc;
            }
        }
        self.push(
            Op::Conv1dRows {
                input: input.id,
                kernel: kernel.id,
                same_padding,
            },
            vec![n, out_len],
            out,
            "conv1d_rows",
        )
    }

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Result<Var> {
        let (s, v) = self.snapshot(a);
        let numel: usize = shape.iter().product();
        if numel != v.len() || shape.is_empty() || shape.len() > 2 {
            return Err(Error::shapes("reshape", &s, shape));
        }
        self.push(Op::Reshape(a.id), shape.to_vec(), v, "reshape")
    }

    /// Binary cross-entropy of probabilities against 0/1 labels: mean over
    /// rows (samples), sum over columns (classes). Probabilities are
    /// clamped to [1e-12, 1-1e-12] before the logs.
    pub fn bce_loss(&self, probs: Var, labels: &Tensor) -> Result<Var> {
        let (s, v) = self.snapshot(probs);
        if s != labels.shape() {
            return Err(Error::shapes("bce_loss", &s, labels.shape()));
        }
        let samples = if s.len() == 2 { s[0] } else { 1 };
        let mut total = 0.0;
        for (&p, &y) in v.iter().zip(labels.data().iter()) {
            let p = p.clamp(CLAMP, 1.0 - CLAMP);
            total -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
        }
        let loss = total / samples as f64;
        self.push(
            Op::BceLoss {
                probs: probs.id,
                labels: labels.data().to_vec(),
            },
            vec![1],
            vec![loss],
            "bce_loss",
        )
    }

    fn snapshot(&self, v: Var) -> (Vec<usize>, Vec<f64>) {
        self.with_node(v, |s, d| (s.to_vec(), d.to_vec()))
    }

    // ---- reverse pass ------------------------------------------------------

    /// Propagate gradients of a scalar loss to every reachable node.
    ///
    /// Nodes the loss does not depend on keep a zero gradient. The tape is
    /// walked once in reverse topological order.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let n = &nodes[loss.id];
        if n.value.len() != 1 {
            return Err(Error::invalid(
                "backward",
                format!("loss must be scalar, got shape {:?}", n.shape),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[loss.id] = Some(vec![1.0]);

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let grad = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            backprop_node(node, &nodes, &grad, &mut grads);
            grads[id] = Some(grad);
        }

        let shapes = nodes.iter().map(|n| n.shape.clone()).collect();
        Ok(Gradients {
            shapes,
            grads,
        })
    }
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients {
    shapes: Vec<Vec<usize>>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient with respect to a tape variable; zero if the loss does not
    /// reach it.
    pub fn wrt(&self, v: Var) -> Tensor {
        let shape = &self.shapes[v.id];
        match &self.grads[v.id] {
            Some(g) => Tensor::new(shape.clone(), g.clone()).expect("gradient matches node shape"),
            None => Tensor::zeros(shape),
        }
    }

    pub fn is_zero(&self, v: Var) -> bool {
        match &self.grads[v.id] {
            None => true,
            Some(g) => g.iter().all(|&x| x == 0.0),
        }
    }
}

fn op_inputs(op: &Op) -> Vec<usize> {
    match op {
        Op::Leaf => vec![],
        Op::MatMul(a, b)
        | Op::Add(a, b)
        | Op::AddBias(a, b)
        | Op::AddChannelBias(a, b)
        | Op::Sub(a, b)
        | Op::Mul(a, b)
        | Op::RowScale(a, b)
        | Op::ConcatCols(a, b) => vec![*a, *b],
        Op::Transpose(a)
        | Op::Scale(a, _)
        | Op::BroadcastScalar(a)
        | Op::GatherRows(a, _)
        | Op::ScatterAddRows(a, _)
        | Op::SumAll(a)
        | Op::MeanAll(a)
        | Op::RowMean(a)
        | Op::Sigmoid(a)
        | Op::Tanh(a)
        | Op::Relu(a)
        | Op::SparsemaxRows(a)
        | Op::Reshape(a) => vec![*a],
        Op::Concat(parts) | Op::StackRows(parts) => parts.clone(),
        Op::Conv1d { input, kernels, .. } => vec![*input, *kernels],
        Op::Conv1dRows { input, kernel, .. } => vec![*input, *kernel],
        Op::BceLoss { probs, .. } => vec![*probs],
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], nodes: &[Node], id: usize, delta: &[f64]) {
    if !nodes[id].requires_grad {
        return;
    }
    let slot = grads[id].get_or_insert_with(|| vec![0.0; nodes[id].value.len()]);
    for (s, d) in slot.iter_mut().zip(delta.iter()) {
        *s += d;
    }
}

fn backprop_node(node: &Node, nodes: &[Node], grad: &[f64], grads: &mut [Option<Vec<f64>>]) {
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (n, m) = (node.shape[0], node.shape[1]);
            let k = nodes[*a].shape[1];
            // dA = g . B^T
            let bt = transpose_raw(&nodes[*b].value, k, m);
            let da = matmul_raw(grad, &bt, n, m, k);
            accumulate(grads, nodes, *a, &da);
            // dB = A^T . g
            let at = transpose_raw(&nodes[*a].value, n, k);
            let db = matmul_raw(&at, grad, k, n, m);
            accumulate(grads, nodes, *b, &db);
        }
        Op::Transpose(a) => {
            let (m, n) = (node.shape[0], node.shape[1]);
            let da = transpose_raw(grad, m, n);
            accumulate(grads, nodes, *a, &da);
        }
        Op::Add(a, b) => {
            accumulate(grads, nodes, *a, grad);
            accumulate(grads, nodes, *b, grad);
        }
        Op::AddBias(a, b) => {
            accumulate(grads, nodes, *a, grad);
            let (n, d) = (node.shape[0], node.shape[1]);
            let mut db = vec![0.0; d];
            for i in 0..n {
                for j in 0..d {
                    db[j] += grad[i * d + j];
                }
            }
            accumulate(grads, nodes, *b, &db);
        }
        Op::AddChannelBias(a, b) => {
            accumulate(grads, nodes, *a, grad);
            let (n, d) = (node.shape[0], node.shape[1]);
            let mut db = vec![0.0; n];
            for i in 0..n {
                for j in 0..d {
                    db[i] += grad[i * d + j];
                }
            }
            accumulate(grads, nodes, *b, &db);
        }
        Op::Sub(a, b) => {
            accumulate(grads, nodes, *a, grad);
            let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
            accumulate(grads, nodes, *b, &neg);
        }
        Op::Mul(a, b) => {
            let da: Vec<f64> = grad
                .iter()
                .zip(nodes[*b].value.iter())
                .map(|(g, y)| g * y)
                .collect();
            accumulate(grads, nodes, *a, &da);
            let db: Vec<f64> = grad
                .iter()
                .zip(nodes[*a].value.iter())
                .map(|(g, x)| g * x)
                .collect();
            accumulate(grads, nodes, *b, &db);
        }
        Op::Scale(a, c) => {
            let da: Vec<f64> = grad.iter().map(|g| g * c).collect();
            accumulate(grads, nodes, *a, &da);
        }
        Op::BroadcastScalar(a) => {
            let da = vec![grad.iter().sum::<f64>()];
            accumulate(grads, nodes, *a, &da);
        }
        Op::RowScale(a, b) => {
            let (n, d) = (node.shape[0], node.shape[1]);
            let vv = &nodes[*b].value;
            let mv = &nodes[*a].value;
            let mut da = vec![0.0; n * d];
            let mut db = vec![0.0; n];
            for i in 0..n {
                for j in 0..d {
                    da[i * d + j] = grad[i * d + j] * vv[i];
                    db[i] += grad[i * d + j] * mv[i * d + j];
                }
            }
            accumulate(grads, nodes, *a, &da);
            accumulate(grads, nodes, *b, &db);
        }
        Op::Concat(parts) => {
            let mut offset = 0;
            for &p in parts {
                let len = nodes[p].value.len();
                accumulate(grads, nodes, p, &grad[offset..offset + len]);
                offset += len;
            }
        }
        Op::ConcatCols(a, b) => {
            let n = node.shape[0];
            let ca = nodes[*a].shape[1];
            let cb = nodes[*b].shape[1];
            let mut da = vec![0.0; n * ca];
            let mut db = vec![0.0; n * cb];
            for i in 0..n {
                let row = &grad[i * (ca + cb)..(i + 1) * (ca + cb)];
                da[i * ca..(i + 1) * ca].copy_from_slice(&row[..ca]);
                db[i * cb..(i + 1) * cb].copy_from_slice(&row[ca..]);
            }
            accumulate(grads, nodes, *a, &da);
            accumulate(grads, nodes, *b, &db);
        }
        Op::StackRows(parts) => {
            let d = node.shape[1];
            for (r, &p) in parts.iter().enumerate() {
                accumulate(grads, nodes, p, &grad[r * d..(r + 1) * d]);
            }
        }
        Op::GatherRows(a, indices) => {
            let d = node.shape[1];
            let rows = nodes[*a].shape[0];
            let mut da = vec![0.0; rows * d];
            for (r, &i) in indices.iter().enumerate() {
                for j in 0..d {
                    da[i * d + j] += grad[r * d + j];
                }
            }
            accumulate(grads, nodes, *a, &da);
        }
        Op::ScatterAddRows(a, indices) => {
            let d = node.shape[1];
            let mut da = vec![0.0; indices.len() * d];
            for (r, &i) in indices.iter().enumerate() {
                da[r * d..(r + 1) * d].copy_from_slice(&grad[i * d..(i + 1) * d]);
            }
            accumulate(grads, nodes, *a, &da);
        }
        Op::SumAll(a) => {
            let da = vec![grad[0]; nodes[*a].value.len()];
            accumulate(grads, nodes, *a, &da);
        }
        Op::MeanAll(a) => {
            let numel = nodes[*a].value.len();
            let da = vec![grad[0] / numel as f64; numel];
            accumulate(grads, nodes, *a, &da);
        }
        Op::RowMean(a) => {
            let (n, d) = (nodes[*a].shape[0], nodes[*a].shape[1]);
            let mut da = vec![0.0; n * d];
            for i in 0..n {
                let g = grad[i] / d as f64;
                for j in 0..d {
                    da[i * d + j] = g;
                }
            }
            accumulate(grads, nodes, *a, &da);
        }
        Op::Sigmoid(a) => {
            let da: Vec<f64> = grad
                .iter()
                .zip(node.value.iter())
                .map(|(g, y)| g * y * (1.0 - y))
                .collect();
            accumulate(grads, nodes, *a, &da);
        }
        Op::Tanh(a) => {
            let da: Vec<f64> = grad
                .iter()
                .zip(node.value.iter())
                .map(|(g, y)| g * (1.0 - y * y))
                .collect();
            accumulate(grads, nodes, *a, &da);
        }
        Op::Relu(a) => {
            let da: Vec<f64> = grad
                .iter()
                .zip(nodes[*a].value.iter())
                .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                .collect();
            accumulate(grads, nodes, *a, &da);
        }
        Op::SparsemaxRows(a) => {
            // Subgradient restricted to the support: on the support S the
            // incoming gradient is recentered by its mean over S, elsewhere 0.
            let (n, m) = (node.shape[0], node.shape[1]);
            let mut da = vec![0.0; n * m];
            for i in 0..n {
                let y = &node.value[i * m..(i + 1) * m];
                let g = &grad[i * m..(i + 1) * m];
                let support: Vec<usize> = (0..m).filter(|&j| y[j] > 0.0).collect();
                if support.is_empty() {
                    continue;
                }
                let mean = support.iter().map(|&j| g[j]).sum::<f64>() / support.len() as f64;
                for &j in &support {
                    da[i * m + j] = g[j] - mean;
                }
            }
            accumulate(grads, nodes, *a, &da);
        }
        Op::Conv1d {
            input,
            kernels,
            k,
            same_padding,
        } => {
            let channels = node.shape[0];
            let out_len = node.shape[1];
            let (rows, d) = (nodes[*input].shape[0], nodes[*input].shape[1]);
            let pad = if *same_padding { (k - 1) / 2 } else { 0 };
            let iv = &nodes[*input].value;
            let kv = &nodes[*kernels].value;
            let mut din = vec![0.0; rows * d];
            let mut dker = vec![0.0; channels * rows * k];
            for c in 0..channels {
                let kern = &kv[c * rows * k..(c + 1) * rows * k];
                for p in 0..out_len {
                    let g = grad[c * out_len + p];
                    if g == 0.0 {
                        continue;
                    }
                    for r in 0..rows {
                        for t in 0..*k {
                            let pos = p + t;
                            if pos < pad || pos - pad >= d {
                                continue;
                            }
                            let col = pos - pad;
                            din[r * d + col] += g * kern[r * k + t];
                            dker[c * rows * k + r * k + t] += g * iv[r * d + col];
                        }
                    }
                }
            }
            accumulate(grads, nodes, *input, &din);
            accumulate(grads, nodes, *kernels, &dker);
        }
        Op::Conv1dRows {
            input,
            kernel,
            same_padding,
        } => {
            let (n, out_len) = (node.shape[0], node.shape[1]);
            let d = nodes[*input].shape[1];
            let k = nodes[*kernel].shape[0];
            let pad = if *same_padding { (k - 1) / 2 } else { 0 };
            let iv = &nodes[*input].value;
            let kv = &nodes[*kernel].value;
            let mut din = vec![0.0; n * d];
            let mut dker = vec![0.0; k];
            for i in 0..n {
                for p in 0..out_len {
                    let g = grad[i * out_len + p];
                    if g == 0.0 {
                        continue;
                    }
                    for t in 0..k {
                        let pos = p + t;
                        if pos < pad || pos - pad >= d {
                            continue;
                        }
                        let col = pos - pad;
                        din[i * d + col] += g * kv[t];
                        dker[t] += g * iv[i * d + col];
                    }
                }
            }
            accumulate(grads, nodes, *input, &din);
            accumulate(grads, nodes, *kernel, &dker);
        }
        Op::Reshape(a) => {
            accumulate(grads, nodes, *a, grad);
        }
        Op::BceLoss { probs, labels } => {
            let samples = if nodes[*probs].shape.len() == 2 {
                nodes[*probs].shape[0]
            } else {
                1
            } as f64;
            let pv = &nodes[*probs].value;
            let da: Vec<f64> = pv
                .iter()
                .zip(labels.iter())
                .map(|(&p, &y)| {
                    let p = p.clamp(CLAMP, 1.0 - CLAMP);
                    grad[0] * (-(y / p) + (1.0 - y) / (1.0 - p)) / samples
                })
                .collect();
            accumulate(grads, nodes, *probs, &da);
        }
    }
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn matmul_raw(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            let orow = &mut out[i * m..(i + 1) * m];
            for j in 0..m {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], n: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            out[j * n + i] = a[i * m + j];
        }
    }
    out
}
