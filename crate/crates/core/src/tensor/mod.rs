//! Dense tensors with tape-based reverse-mode automatic differentiation.
//!
//! Operations are recorded on a [`Tape`] during the forward pass; calling
//! [`Tape::backward`] walks the recorded operations once in reverse and
//! accumulates gradients into every node. Tensors are row-major `f64`
//! buffers; in [`Precision::F32`] mode every forward result (and every
//! finished gradient) is rounded through `f32`, which is what training
//! runs use, while verification runs keep full `f64`.
//!
//! The engine is deliberately small: first-order gradients only, no
//! broadcasting beyond a row-wise bias, single-threaded per tape.

mod gradcheck;

pub use gradcheck::grad_check;

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::cell::RefCell;
use std::rc::Rc;

/// Numeric mode for a tape: `F64` for verification (gradient checks),
/// `F32` for training, where values are stored rounded to `f32`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    #[inline]
    pub fn quantize(self, x: f64) -> f64 {
        match self {
            Precision::F64 => x,
            Precision::F32 => x as f32 as f64,
        }
    }

    fn quantize_all(self, xs: &mut [f64]) {
        if self == Precision::F32 {
            for x in xs {
                *x = *x as f32 as f64;
            }
        }
    }
}

impl std::str::FromStr for Precision {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" | "F32" | "train" => Ok(Precision::F32),
            "f64" | "F64" | "verify" => Ok(Precision::F64),
            other => Err(Error::Config(format!("unknown precision '{other}'"))),
        }
    }
}

enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddConst(usize),
    MatMul {
        a: usize,
        b: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Transpose {
        a: usize,
        rows: usize,
        cols: usize,
    },
    AddBias {
        a: usize,
        bias: usize,
    },
    GatherRows {
        table: usize,
        ids: Vec<usize>,
    },
    PickPerRow {
        a: usize,
        cols: Vec<usize>,
    },
    Row {
        a: usize,
        index: usize,
    },
    SliceCols {
        a: usize,
        start: usize,
        len: usize,
    },
    SliceRows {
        a: usize,
        start: usize,
        len: usize,
    },
    ConcatCols {
        parts: Vec<usize>,
    },
    Sum(usize),
    Mean(usize),
    StackScalars(Vec<usize>),
    LogSoftmax {
        a: usize,
        cols: usize,
    },
    Softmax {
        a: usize,
        cols: usize,
    },
    LogSigmoid(usize),
    Gelu(usize),
    LayerNorm {
        a: usize,
        gamma: usize,
        beta: usize,
        cols: usize,
        /// Per-row (mean, 1/std) cached by the forward pass.
        aux: Vec<(f64, f64)>,
    },
}

struct Node {
    data: Vec<f64>,
    shape: Vec<usize>,
    grad: Vec<f64>,
    requires_grad: bool,
    op: Op,
}

struct TapeInner {
    nodes: Vec<Node>,
    precision: Precision,
}

/// Records a computation for reverse-mode differentiation.
#[derive(Clone)]
pub struct Tape {
    inner: Rc<RefCell<TapeInner>>,
}

/// A handle to a tensor recorded on a [`Tape`].
#[derive(Clone)]
pub struct Var {
    tape: Tape,
    id: usize,
}

impl std::fmt::Debug for Var {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tape {
    pub fn new(precision: Precision) -> Self {
        Tape {
            inner: Rc::new(RefCell::new(TapeInner {
                nodes: Vec::new(),
                precision,
            })),
        }
    }

    pub fn precision(&self) -> Precision {
        self.inner.borrow().precision
    }

    /// Creates a leaf tensor. `requires_grad` marks it as a parameter whose
    /// gradient will be read back after `backward`.
    pub fn leaf(&self, shape: Vec<usize>, mut data: Vec<f64>, requires_grad: bool) -> Var {
        assert_eq!(
            numel(&shape),
            data.len(),
            "leaf data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        let mut inner = self.inner.borrow_mut();
        inner.precision.quantize_all(&mut data);
        let grad = vec![0.0; data.len()];
        inner.nodes.push(Node {
            data,
            shape,
            grad,
            requires_grad,
            op: Op::Leaf,
        });
        Var {
            tape: self.clone(),
            id: inner.nodes.len() - 1,
        }
    }

    /// A constant scalar (no gradient tracked into it).
    pub fn scalar(&self, v: f64) -> Var {
        self.leaf(vec![], vec![v], false)
    }

    /// A constant matrix (no gradient tracked into it).
    pub fn constant(&self, shape: Vec<usize>, data: Vec<f64>) -> Var {
        self.leaf(shape, data, false)
    }

    fn push(&self, shape: Vec<usize>, mut data: Vec<f64>, op: Op) -> Var {
        debug_assert_eq!(numel(&shape), data.len());
        let mut inner = self.inner.borrow_mut();
        inner.precision.quantize_all(&mut data);
        let grad = vec![0.0; data.len()];
        inner.nodes.push(Node {
            data,
            shape,
            grad,
            requires_grad: false,
            op,
        });
        Var {
            tape: self.clone(),
            id: inner.nodes.len() - 1,
        }
    }

    /// Zeroes every gradient buffer on the tape.
    pub fn reset_grads(&self) {
        for node in self.inner.borrow_mut().nodes.iter_mut() {
            node.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Reverse pass from a scalar loss. Gradients accumulate across calls;
    /// use [`Tape::reset_grads`] between independent passes.
    pub fn backward(&self, loss: &Var) -> Result<()> {
        assert!(
            Rc::ptr_eq(&self.inner, &loss.tape.inner),
            "loss was recorded on a different tape"
        );
        let mut inner = self.inner.borrow_mut();
        let precision = inner.precision;
        if !inner.nodes[loss.id].shape.is_empty() {
            return Err(Error::NotScalar(inner.nodes[loss.id].shape.clone()));
        }
        // Leaf gradients accumulate across passes; intermediate gradients are
        // scratch space for this pass only.
        for node in inner.nodes.iter_mut() {
            if !matches!(node.op, Op::Leaf) {
                node.grad.iter_mut().for_each(|g| *g = 0.0);
            }
        }
        inner.nodes[loss.id].grad[0] += 1.0;

        for i in (0..=loss.id).rev() {
            if precision == Precision::F32 {
                let node = &mut inner.nodes[i];
                node.grad.iter_mut().for_each(|g| *g = *g as f32 as f64);
            }
            // Take the op out so we can mutate other nodes' grads freely.
            let op = std::mem::replace(&mut inner.nodes[i].op, Op::Leaf);
            backward_step(&mut inner.nodes, i, &op);
            inner.nodes[i].op = op;
        }
        Ok(())
    }
}

#[allow(clippy::needless_range_loop)] // index arithmetic spans several buffers
fn backward_step(nodes: &mut [Node], out: usize, op: &Op) {
    macro_rules! go {
        () => {
            // Clone of the output grad to sidestep aliasing with input grads.
            nodes[out].grad.clone()
        };
    }
    match op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            let g = go!();
            for (i, gi) in g.iter().enumerate() {
                nodes[*a].grad[i] += gi;
            }
            for (i, gi) in g.iter().enumerate() {
                nodes[*b].grad[i] += gi;
            }
        }
        Op::Sub(a, b) => {
            let g = go!();
            for (i, gi) in g.iter().enumerate() {
                nodes[*a].grad[i] += gi;
            }
            for (i, gi) in g.iter().enumerate() {
                nodes[*b].grad[i] -= gi;
            }
        }
        Op::Mul(a, b) => {
            let g = go!();
            for i in 0..g.len() {
                let (av, bv) = (nodes[*a].data[i], nodes[*b].data[i]);
                nodes[*a].grad[i] += g[i] * bv;
                nodes[*b].grad[i] += g[i] * av;
            }
        }
        Op::Scale(a, c) => {
            let g = go!();
            for (i, gi) in g.iter().enumerate() {
                nodes[*a].grad[i] += gi * c;
            }
        }
        Op::AddConst(a) => {
            let g = go!();
            for (i, gi) in g.iter().enumerate() {
                nodes[*a].grad[i] += gi;
            }
        }
        Op::MatMul { a, b, m, k, n } => {
            let g = go!();
            let (m, k, n) = (*m, *k, *n);
            // dA += dC * B^T
            for i in 0..m {
                for p in 0..k {
                    let mut s = 0.0;
                    for j in 0..n {
                        s += g[i * n + j] * nodes[*b].data[p * n + j];
                    }
                    nodes[*a].grad[i * k + p] += s;
                }
            }
            // dB += A^T * dC
            for p in 0..k {
                for j in 0..n {
                    let mut s = 0.0;
                    for i in 0..m {
                        s += nodes[*a].data[i * k + p] * g[i * n + j];
                    }
                    nodes[*b].grad[p * n + j] += s;
                }
            }
        }
        Op::Transpose { a, rows, cols } => {
            let g = go!();
            for r in 0..*rows {
                for c in 0..*cols {
                    nodes[*a].grad[r * cols + c] += g[c * rows + r];
                }
            }
        }
        Op::AddBias { a, bias } => {
            let g = go!();
            let n = nodes[*bias].data.len();
            for (i, gi) in g.iter().enumerate() {
                nodes[*a].grad[i] += gi;
            }
            for (i, gi) in g.iter().enumerate() {
                nodes[*bias].grad[i % n] += gi;
            }
        }
        Op::GatherRows { table, ids } => {
            let g = go!();
            let d = nodes[*table].shape[1];
            for (row, &id) in ids.iter().enumerate() {
                for c in 0..d {
                    nodes[*table].grad[id * d + c] += g[row * d + c];
                }
            }
        }
        Op::PickPerRow { a, cols } => {
            let g = go!();
            let n = nodes[*a].shape[1];
            for (i, &c) in cols.iter().enumerate() {
                nodes[*a].grad[i * n + c] += g[i];
            }
        }
        Op::Row { a, index } => {
            let g = go!();
            let n = nodes[*a].shape[1];
            for c in 0..n {
                nodes[*a].grad[index * n + c] += g[c];
            }
        }
        Op::SliceCols { a, start, len } => {
            let g = go!();
            let n = nodes[*a].shape[1];
            let rows = nodes[*a].shape[0];
            for r in 0..rows {
                for c in 0..*len {
                    nodes[*a].grad[r * n + start + c] += g[r * len + c];
                }
            }
        }
        Op::SliceRows { a, start, len } => {
            let g = go!();
            let n = nodes[*a].shape[1];
            for r in 0..*len {
                for c in 0..n {
                    nodes[*a].grad[(start + r) * n + c] += g[r * n + c];
                }
            }
        }
        Op::ConcatCols { parts } => {
            let g = go!();
            let rows = nodes[out].shape[0];
            let total = nodes[out].shape[1];
            let mut offset = 0;
            for &p in parts {
                let w = nodes[p].shape[1];
                for r in 0..rows {
                    for c in 0..w {
                        nodes[p].grad[r * w + c] += g[r * total + offset + c];
                    }
                }
                offset += w;
            }
        }
        Op::Sum(a) => {
            let g = nodes[out].grad[0];
            for ga in nodes[*a].grad.iter_mut() {
                *ga += g;
            }
        }
        Op::Mean(a) => {
            let g = nodes[out].grad[0] / nodes[*a].data.len() as f64;
            for ga in nodes[*a].grad.iter_mut() {
                *ga += g;
            }
        }
        Op::StackScalars(parts) => {
            let g = go!();
            for (i, &p) in parts.iter().enumerate() {
                nodes[p].grad[0] += g[i];
            }
        }
        Op::LogSoftmax { a, cols } => {
            let g = go!();
            let rows = g.len() / cols;
            for r in 0..rows {
                let base = r * cols;
                let gsum: f64 = g[base..base + cols].iter().sum();
                for c in 0..*cols {
                    let p = nodes[out].data[base + c].exp();
                    nodes[*a].grad[base + c] += g[base + c] - p * gsum;
                }
            }
        }
        Op::Softmax { a, cols } => {
            let g = go!();
            let rows = g.len() / cols;
            for r in 0..rows {
                let base = r * cols;
                let dot: f64 = (0..*cols)
                    .map(|c| g[base + c] * nodes[out].data[base + c])
                    .sum();
                for c in 0..*cols {
                    let p = nodes[out].data[base + c];
                    nodes[*a].grad[base + c] += p * (g[base + c] - dot);
                }
            }
        }
        Op::LogSigmoid(a) => {
            let g = go!();
            for i in 0..g.len() {
                let x = nodes[*a].data[i];
                // d/dx log sigmoid(x) = sigmoid(-x), computed stably
                let s = if x >= 0.0 {
                    let e = (-x).exp();
                    e / (1.0 + e)
                } else {
                    1.0 / (1.0 + x.exp())
                };
                nodes[*a].grad[i] += g[i] * s;
            }
        }
        Op::Gelu(a) => {
            let g = go!();
            for i in 0..g.len() {
                nodes[*a].grad[i] += g[i] * gelu_deriv(nodes[*a].data[i]);
            }
        }
        Op::LayerNorm {
            a,
            gamma,
            beta,
            cols,
            aux,
        } => {
            let g = go!();
            let cols = *cols;
            let rows = g.len() / cols;
            for r in 0..rows {
                let (mean, rstd) = aux[r];
                let base = r * cols;
                // xhat and gamma-weighted output grads for this row
                let mut gsum = 0.0;
                let mut gxsum = 0.0;
                for c in 0..cols {
                    let xhat = (nodes[*a].data[base + c] - mean) * rstd;
                    let gw = g[base + c] * nodes[*gamma].data[c];
                    gsum += gw;
                    gxsum += gw * xhat;
                    nodes[*gamma].grad[c] += g[base + c] * xhat;
                    nodes[*beta].grad[c] += g[base + c];
                }
                let inv_n = 1.0 / cols as f64;
                for c in 0..cols {
                    let xhat = (nodes[*a].data[base + c] - mean) * rstd;
                    let gw = g[base + c] * nodes[*gamma].data[c];
                    nodes[*a].grad[base + c] +=
                        rstd * (gw - inv_n * gsum - xhat * inv_n * gxsum);
                }
            }
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_deriv(x: f64) -> f64 {
    let inner = GELU_C * (x + GELU_A * x * x * x);
    let t = inner.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn log_sigmoid(x: f64) -> f64 {
    // -softplus(-x), branch keeps the exponent argument non-positive
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

impl Var {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.inner.borrow().nodes[self.id].shape.clone()
    }

    pub fn data(&self) -> Vec<f64> {
        self.tape.inner.borrow().nodes[self.id].data.clone()
    }

    /// Value of a scalar tensor.
    pub fn value(&self) -> f64 {
        let inner = self.tape.inner.borrow();
        let node = &inner.nodes[self.id];
        assert!(node.shape.is_empty(), "value() on non-scalar {:?}", node.shape);
        node.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.inner.borrow().nodes[self.id].requires_grad
    }

    /// Gradient buffer accumulated by `backward`.
    pub fn grad(&self) -> Vec<f64> {
        self.tape.inner.borrow().nodes[self.id].grad.clone()
    }

    fn same_tape(&self, other: &Var) -> Tape {
        assert!(
            Rc::ptr_eq(&self.tape.inner, &other.tape.inner),
            "operands recorded on different tapes"
        );
        self.tape.clone()
    }

    pub fn add(&self, other: &Var) -> Var {
        let tape = self.same_tape(other);
        let (a, b) = {
            let inner = tape.inner.borrow();
            assert_eq!(
                inner.nodes[self.id].shape, inner.nodes[other.id].shape,
                "add: shape mismatch"
            );
            (
                inner.nodes[self.id].data.clone(),
                inner.nodes[other.id].data.clone(),
            )
        };
        let data = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        tape.push(self.shape(), data, Op::Add(self.id, other.id))
    }

    pub fn sub(&self, other: &Var) -> Var {
        let tape = self.same_tape(other);
        let (a, b) = {
            let inner = tape.inner.borrow();
            assert_eq!(
                inner.nodes[self.id].shape, inner.nodes[other.id].shape,
                "sub: shape mismatch"
            );
            (
                inner.nodes[self.id].data.clone(),
                inner.nodes[other.id].data.clone(),
            )
        };
        let data = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        tape.push(self.shape(), data, Op::Sub(self.id, other.id))
    }

    pub fn mul(&self, other: &Var) -> Var {
        let tape = self.same_tape(other);
        let (a, b) = {
            let inner = tape.inner.borrow();
            assert_eq!(
                inner.nodes[self.id].shape, inner.nodes[other.id].shape,
                "mul: shape mismatch"
            );
            (
                inner.nodes[self.id].data.clone(),
                inner.nodes[other.id].data.clone(),
            )
        };
        let data = a.iter().zip(&b).map(|(x, y)| x * y).collect();
        tape.push(self.shape(), data, Op::Mul(self.id, other.id))
    }

    pub fn scale(&self, c: f64) -> Var {
        let data = self.data().iter().map(|x| x * c).collect();
        self.tape.push(self.shape(), data, Op::Scale(self.id, c))
    }

    pub fn neg(&self) -> Var {
        self.scale(-1.0)
    }

    /// Elementwise `self + c`.
    pub fn add_const(&self, c: f64) -> Var {
        let data = self.data().iter().map(|x| x + c).collect();
        self.tape
            .push(self.shape(), data, Op::AddConst(self.id))
    }

    /// `self [m,k] @ other [k,n] -> [m,n]`.
    pub fn matmul(&self, other: &Var) -> Var {
        let tape = self.same_tape(other);
        let (sa, sb) = (self.shape(), other.shape());
        assert_eq!(sa.len(), 2, "matmul lhs must be 2-d, got {sa:?}");
        assert_eq!(sb.len(), 2, "matmul rhs must be 2-d, got {sb:?}");
        assert_eq!(sa[1], sb[0], "matmul: {sa:?} x {sb:?}");
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let (a, b) = (self.data(), other.data());
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let av = a[i * k + p];
                if av == 0.0 {
                    continue;
                }
                for j in 0..n {
                    data[i * n + j] += av * b[p * n + j];
                }
            }
        }
        tape.push(
            vec![m, n],
            data,
            Op::MatMul {
                a: self.id,
                b: other.id,
                m,
                k,
                n,
            },
        )
    }

    pub fn transpose(&self) -> Var {
        let s = self.shape();
        assert_eq!(s.len(), 2, "transpose needs 2-d, got {s:?}");
        let (rows, cols) = (s[0], s[1]);
        let a = self.data();
        let mut data = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                data[c * rows + r] = a[r * cols + c];
            }
        }
        self.tape.push(
            vec![cols, rows],
            data,
            Op::Transpose {
                a: self.id,
                rows,
                cols,
            },
        )
    }

    /// `self [m,n] + bias [n]`, broadcast over rows.
    pub fn add_bias(&self, bias: &Var) -> Var {
        let tape = self.same_tape(bias);
        let s = self.shape();
        let sb = bias.shape();
        assert_eq!(s.len(), 2, "add_bias lhs must be 2-d");
        assert_eq!(sb, vec![s[1]], "add_bias: bias shape {sb:?} vs {s:?}");
        let (a, b) = (self.data(), bias.data());
        let n = s[1];
        let data = a.iter().enumerate().map(|(i, x)| x + b[i % n]).collect();
        tape.push(
            s,
            data,
            Op::AddBias {
                a: self.id,
                bias: bias.id,
            },
        )
    }

    /// Row lookup: `self [V,d]` gathered at `ids` -> `[len(ids), d]`.
    pub fn gather_rows(&self, ids: &[usize]) -> Var {
        let s = self.shape();
        assert_eq!(s.len(), 2, "gather_rows needs 2-d table");
        let d = s[1];
        let table = self.data();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            assert!(id < s[0], "gather_rows: id {id} out of {}", s[0]);
            data.extend_from_slice(&table[id * d..(id + 1) * d]);
        }
        self.tape.push(
            vec![ids.len(), d],
            data,
            Op::GatherRows {
                table: self.id,
                ids: ids.to_vec(),
            },
        )
    }

    /// Picks `self[i, cols[i]]` for each row -> `[m]`.
    pub fn pick_per_row(&self, cols: &[usize]) -> Var {
        let s = self.shape();
        assert_eq!(s.len(), 2, "pick_per_row needs 2-d");
        assert_eq!(s[0], cols.len(), "pick_per_row: one column per row");
        let a = self.data();
        let n = s[1];
        let data = cols
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                assert!(c < n, "pick_per_row: col {c} out of {n}");
                a[i * n + c]
            })
            .collect();
        self.tape.push(
            vec![cols.len()],
            data,
            Op::PickPerRow {
                a: self.id,
                cols: cols.to_vec(),
            },
        )
    }

    /// Extracts one row as a `[1, n]` matrix.
    pub fn row(&self, index: usize) -> Var {
        let s = self.shape();
        assert_eq!(s.len(), 2, "row needs 2-d");
        assert!(index < s[0], "row {index} out of {}", s[0]);
        let n = s[1];
        let data = self.data()[index * n..(index + 1) * n].to_vec();
        self.tape.push(
            vec![1, n],
            data,
            Op::Row {
                a: self.id,
                index,
            },
        )
    }

    /// Column slice `self[:, start..start+len]`.
    pub fn slice_cols(&self, start: usize, len: usize) -> Var {
        let s = self.shape();
        assert_eq!(s.len(), 2, "slice_cols needs 2-d");
        assert!(start + len <= s[1], "slice_cols out of bounds");
        let a = self.data();
        let mut data = Vec::with_capacity(s[0] * len);
        for r in 0..s[0] {
            data.extend_from_slice(&a[r * s[1] + start..r * s[1] + start + len]);
        }
        self.tape.push(
            vec![s[0], len],
            data,
            Op::SliceCols {
                a: self.id,
                start,
                len,
            },
        )
    }

    /// Contiguous row slice `self[start..start+len, :]`.
    pub fn slice_rows(&self, start: usize, len: usize) -> Var {
        let s = self.shape();
        assert_eq!(s.len(), 2, "slice_rows needs 2-d");
        assert!(start + len <= s[0], "slice_rows out of bounds");
        let n = s[1];
        let data = self.data()[start * n..(start + len) * n].to_vec();
        self.tape.push(
            vec![len, n],
            data,
            Op::SliceRows {
                a: self.id,
                start,
                len,
            },
        )
    }

    /// Sum over every element -> scalar.
    pub fn sum(&self) -> Var {
        let data = vec![self.data().iter().sum()];
        self.tape.push(vec![], data, Op::Sum(self.id))
    }

    /// Mean over every element -> scalar.
    pub fn mean(&self) -> Var {
        let d = self.data();
        let data = vec![d.iter().sum::<f64>() / d.len() as f64];
        self.tape.push(vec![], data, Op::Mean(self.id))
    }

    /// Row-wise log-softmax over the last axis.
    ///
    /// Stabilized by max subtraction; rejects non-finite input, naming the
    /// offending flat index.
    pub fn log_softmax(&self) -> Result<Var> {
        let s = self.shape();
        assert!(!s.is_empty(), "log_softmax needs at least 1-d");
        let cols = *s.last().unwrap();
        assert!(cols >= 1, "log_softmax: empty last axis");
        let a = self.data();
        if let Some(index) = a.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                context: "log_softmax input".into(),
                index,
            });
        }
        let rows = a.len() / cols;
        let mut data = vec![0.0; a.len()];
        for r in 0..rows {
            let base = r * cols;
            let row = &a[base..base + cols];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max
                + row
                    .iter()
                    .map(|x| (x - max).exp())
                    .sum::<f64>()
                    .ln();
            for c in 0..cols {
                data[base + c] = row[c] - lse;
            }
        }
        Ok(self
            .tape
            .push(s, data, Op::LogSoftmax { a: self.id, cols }))
    }

    /// Row-wise softmax over the last axis (max-subtracted).
    pub fn softmax(&self) -> Var {
        let s = self.shape();
        assert!(!s.is_empty(), "softmax needs at least 1-d");
        let cols = *s.last().unwrap();
        let a = self.data();
        let rows = a.len() / cols;
        let mut data = vec![0.0; a.len()];
        for r in 0..rows {
            let base = r * cols;
            let row = &a[base..base + cols];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for c in 0..cols {
                let e = (row[c] - max).exp();
                data[base + c] = e;
                denom += e;
            }
            for c in 0..cols {
                data[base + c] /= denom;
            }
        }
        self.tape.push(s, data, Op::Softmax { a: self.id, cols })
    }

    /// Elementwise `log(sigmoid(x))`, computed as `-softplus(-x)`.
    pub fn log_sigmoid(&self) -> Var {
        let data = self.data().iter().map(|&x| log_sigmoid(x)).collect();
        self.tape
            .push(self.shape(), data, Op::LogSigmoid(self.id))
    }

    /// Elementwise GELU (tanh approximation).
    pub fn gelu(&self) -> Var {
        let data = self.data().iter().map(|&x| gelu(x)).collect();
        self.tape.push(self.shape(), data, Op::Gelu(self.id))
    }

    /// Per-row layer normalization of `self [m,n]` with `gamma [n]`, `beta [n]`.
    pub fn layer_norm(&self, gamma: &Var, beta: &Var, eps: f64) -> Var {
        let tape = self.same_tape(gamma);
        let _ = self.same_tape(beta);
        let s = self.shape();
        assert_eq!(s.len(), 2, "layer_norm needs 2-d");
        let cols = s[1];
        assert_eq!(gamma.shape(), vec![cols]);
        assert_eq!(beta.shape(), vec![cols]);
        let a = self.data();
        let g = gamma.data();
        let b = beta.data();
        let rows = s[0];
        let mut data = vec![0.0; a.len()];
        let mut aux = Vec::with_capacity(rows);
        for r in 0..rows {
            let base = r * cols;
            let row = &a[base..base + cols];
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / cols as f64;
            let rstd = 1.0 / (var + eps).sqrt();
            aux.push((mean, rstd));
            for c in 0..cols {
                data[base + c] = (row[c] - mean) * rstd * g[c] + b[c];
            }
        }
        tape.push(
            s,
            data,
            Op::LayerNorm {
                a: self.id,
                gamma: gamma.id,
                beta: beta.id,
                cols,
                aux,
            },
        )
    }
}

/// Stacks scalar tensors into a 1-d vector.
pub fn stack_scalars(tape: &Tape, parts: &[Var]) -> Var {
    assert!(!parts.is_empty(), "stack_scalars: empty input");
    let data = parts.iter().map(|p| p.value()).collect();
    let ids = parts.iter().map(|p| p.id).collect();
    tape.push(vec![parts.len()], data, Op::StackScalars(ids))
}

/// Concatenates matrices with equal row counts along the column axis.
pub fn concat_cols(tape: &Tape, parts: &[Var]) -> Var {
    assert!(!parts.is_empty(), "concat_cols: empty input");
    let rows = parts[0].shape()[0];
    let widths: Vec<usize> = parts
        .iter()
        .map(|p| {
            let s = p.shape();
            assert_eq!(s.len(), 2, "concat_cols needs 2-d parts");
            assert_eq!(s[0], rows, "concat_cols: row count mismatch");
            s[1]
        })
        .collect();
    let total: usize = widths.iter().sum();
    let datas: Vec<Vec<f64>> = parts.iter().map(|p| p.data()).collect();
    let mut data = Vec::with_capacity(rows * total);
    for r in 0..rows {
        for (p, w) in datas.iter().zip(&widths) {
            data.extend_from_slice(&p[r * w..(r + 1) * w]);
        }
    }
    let ids = parts.iter().map(|p| p.id).collect();
    tape.push(vec![rows, total], data, Op::ConcatCols { parts: ids })
}
