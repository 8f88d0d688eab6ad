//! Reverse-mode autodiff tape over [`Tensor`] values.
//!
//! Ops evaluate eagerly as they are recorded, so the node list is already in
//! topological order and the backward pass is a single reverse sweep. Shape
//! mismatches are programmer errors and panic at construction time with the
//! primitive's name.

use super::tensor::{matmul, set_aware_sum, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddRowBroadcast(usize, usize),
    MulRowBroadcast(usize, usize),
    MatMul(usize, usize),
    Transpose(usize),
    SoftmaxRows(usize),
    AttnMix(usize, usize),
    LayerNormRows { x: usize, eps: f64 },
    Gelu(usize),
    Exp(usize),
    GatherRows { table: usize, indices: Vec<usize> },
    SliceRows { x: usize, start: usize },
    SliceCols { x: usize, start: usize },
    ConcatRows(Vec<usize>),
    ConcatCols(Vec<usize>),
    SumAll(usize),
    MeanAll(usize),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Recorded computation graph.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

const GELU_C: f64 = 0.7978845608028654; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad_scalar(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; receives no gradient.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Parameter input bound to `slot`; its gradient is collected by
    /// [`Tape::backward`].
    pub fn param(&mut self, slot: usize, t: &Tensor) -> Var {
        self.push(t.clone(), Op::Param(slot))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert!(ta.same_shape(tb), "add: shapes {:?} vs {:?}", ta.shape(), tb.shape());
        let mut out = ta.clone();
        out.add_assign(tb);
        self.push(out, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert!(ta.same_shape(tb), "sub: shapes {:?} vs {:?}", ta.shape(), tb.shape());
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| x - y).collect();
        let out = Tensor::from_vec(ta.rows, ta.cols, data);
        self.push(out, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert!(ta.same_shape(tb), "mul: shapes {:?} vs {:?}", ta.shape(), tb.shape());
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| x * y).collect();
        let out = Tensor::from_vec(ta.rows, ta.cols, data);
        self.push(out, Op::Mul(a.0, b.0))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let ta = &self.nodes[a.0].value;
        let data = ta.data.iter().map(|x| x * c).collect();
        let out = Tensor::from_vec(ta.rows, ta.cols, data);
        self.push(out, Op::Scale(a.0, c))
    }

    /// out[i][j] = m[i][j] + r[0][j]
    pub fn add_row_broadcast(&mut self, m: Var, r: Var) -> Var {
        let (tm, tr) = (&self.nodes[m.0].value, &self.nodes[r.0].value);
        assert!(
            tr.rows == 1 && tr.cols == tm.cols,
            "add_row_broadcast: matrix {:?} row {:?}",
            tm.shape(),
            tr.shape()
        );
        let mut out = tm.clone();
        for i in 0..out.rows {
            for j in 0..out.cols {
                out.data[i * out.cols + j] += tr.data[j];
            }
        }
        self.push(out, Op::AddRowBroadcast(m.0, r.0))
    }

    /// out[i][j] = m[i][j] * r[0][j]
    pub fn mul_row_broadcast(&mut self, m: Var, r: Var) -> Var {
        let (tm, tr) = (&self.nodes[m.0].value, &self.nodes[r.0].value);
        assert!(
            tr.rows == 1 && tr.cols == tm.cols,
            "mul_row_broadcast: matrix {:?} row {:?}",
            tm.shape(),
            tr.shape()
        );
        let mut out = tm.clone();
        for i in 0..out.rows {
            for j in 0..out.cols {
                out.data[i * out.cols + j] *= tr.data[j];
            }
        }
        self.push(out, Op::MulRowBroadcast(m.0, r.0))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert!(
            ta.cols == tb.rows,
            "matmul: shapes {:?} vs {:?}",
            ta.shape(),
            tb.shape()
        );
        let out = matmul(ta, tb);
        self.push(out, Op::MatMul(a.0, b.0))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.nodes[a.0].value.transpose();
        self.push(out, Op::Transpose(a.0))
    }

    /// Row-wise softmax. Positions at or beyond `set_prefix` are treated as
    /// an unordered set when summing the normalizer (see
    /// [`set_aware_sum`](super::tensor::set_aware_sum)); pass `cols` for
    /// plain ordered behaviour. Mask keys by adding a large negative bias
    /// before this op.
    pub fn softmax_rows(&mut self, x: Var, set_prefix: usize) -> Var {
        let tx = &self.nodes[x.0].value;
        assert!(
            set_prefix <= tx.cols,
            "softmax_rows: set_prefix {} beyond {} cols",
            set_prefix,
            tx.cols
        );
        let mut out = Tensor::zeros(tx.rows, tx.cols);
        for i in 0..tx.rows {
            let row = tx.row(i);
            let mut m = f64::NEG_INFINITY;
            for &v in row {
                if v > m {
                    m = v;
                }
            }
            m += 0.0; // canonicalize -0.0
            let exps: Vec<f64> = row.iter().map(|&v| (v - m).exp()).collect();
            let z = set_aware_sum(exps.len(), set_prefix, |j| exps[j]);
            for j in 0..tx.cols {
                out.data[i * tx.cols + j] = exps[j] / z;
            }
        }
        self.push(out, Op::SoftmaxRows(x.0))
    }

    /// Attention mixing: out = w . v contracting over the sequence axis, with
    /// positions at or beyond `set_prefix` summed as an unordered set.
    pub fn attn_mix(&mut self, w: Var, v: Var, set_prefix: usize) -> Var {
        let (tw, tv) = (&self.nodes[w.0].value, &self.nodes[v.0].value);
        assert!(
            tw.cols == tv.rows,
            "attn_mix: shapes {:?} vs {:?}",
            tw.shape(),
            tv.shape()
        );
        let mut out = Tensor::zeros(tw.rows, tv.cols);
        for i in 0..tw.rows {
            let wrow = tw.row(i);
            for f in 0..tv.cols {
                out.data[i * tv.cols + f] =
                    set_aware_sum(tw.cols, set_prefix, |j| wrow[j] * tv.at(j, f));
            }
        }
        self.push(out, Op::AttnMix(w.0, v.0))
    }

    /// Per-row normalization to mean 0, variance 1 (no affine; compose with
    /// broadcast ops for gain/bias).
    pub fn layernorm_rows(&mut self, x: Var, eps: f64) -> Var {
        let tx = &self.nodes[x.0].value;
        let mut out = Tensor::zeros(tx.rows, tx.cols);
        for i in 0..tx.rows {
            let row = tx.row(i);
            let mean = row.iter().sum::<f64>() / tx.cols as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / tx.cols as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for j in 0..tx.cols {
                out.data[i * tx.cols + j] = (row[j] - mean) * inv;
            }
        }
        self.push(out, Op::LayerNormRows { x: x.0, eps })
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let tx = &self.nodes[x.0].value;
        let data = tx.data.iter().map(|&v| gelu_scalar(v)).collect();
        let out = Tensor::from_vec(tx.rows, tx.cols, data);
        self.push(out, Op::Gelu(x.0))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let tx = &self.nodes[x.0].value;
        let data = tx.data.iter().map(|&v| v.exp()).collect();
        let out = Tensor::from_vec(tx.rows, tx.cols, data);
        self.push(out, Op::Exp(x.0))
    }

    /// Embedding lookup: gather rows of `table` at `indices`.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Var {
        let tt = &self.nodes[table.0].value;
        for &i in indices {
            assert!(i < tt.rows, "gather_rows: index {} beyond {} rows", i, tt.rows);
        }
        let mut out = Tensor::zeros(indices.len(), tt.cols);
        for (r, &i) in indices.iter().enumerate() {
            out.data[r * tt.cols..(r + 1) * tt.cols].copy_from_slice(tt.row(i));
        }
        self.push(
            out,
            Op::GatherRows {
                table: table.0,
                indices: indices.to_vec(),
            },
        )
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Var {
        let tx = &self.nodes[x.0].value;
        assert!(
            start + len <= tx.rows,
            "slice_rows: {}..{} beyond {} rows",
            start,
            start + len,
            tx.rows
        );
        let mut out = Tensor::zeros(len, tx.cols);
        out.data
            .copy_from_slice(&tx.data[start * tx.cols..(start + len) * tx.cols]);
        self.push(out, Op::SliceRows { x: x.0, start })
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let tx = &self.nodes[x.0].value;
        assert!(
            start + len <= tx.cols,
            "slice_cols: {}..{} beyond {} cols",
            start,
            start + len,
            tx.cols
        );
        let mut out = Tensor::zeros(tx.rows, len);
        for i in 0..tx.rows {
            out.data[i * len..(i + 1) * len]
                .copy_from_slice(&tx.row(i)[start..start + len]);
        }
        self.push(out, Op::SliceCols { x: x.0, start })
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows: no parts");
        let cols = self.nodes[parts[0].0].value.cols;
        let rows: usize = parts.iter().map(|p| self.nodes[p.0].value.rows).sum();
        let mut out = Tensor::zeros(rows, cols);
        let mut at = 0;
        for p in parts {
            let t = &self.nodes[p.0].value;
            assert!(t.cols == cols, "concat_rows: column mismatch");
            out.data[at * cols..(at + t.rows) * cols].copy_from_slice(&t.data);
            at += t.rows;
        }
        self.push(out, Op::ConcatRows(parts.iter().map(|p| p.0).collect()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols: no parts");
        let rows = self.nodes[parts[0].0].value.rows;
        let cols: usize = parts.iter().map(|p| self.nodes[p.0].value.cols).sum();
        let mut out = Tensor::zeros(rows, cols);
        let mut at = 0;
        for p in parts {
            let t = &self.nodes[p.0].value;
            assert!(t.rows == rows, "concat_cols: row mismatch");
            for i in 0..rows {
                out.data[i * cols + at..i * cols + at + t.cols].copy_from_slice(t.row(i));
            }
            at += t.cols;
        }
        self.push(out, Op::ConcatCols(parts.iter().map(|p| p.0).collect()))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.nodes[x.0].value.data.iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(x.0))
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let t = &self.nodes[x.0].value;
        let s = t.data.iter().sum::<f64>() / t.len() as f64;
        self.push(Tensor::scalar(s), Op::MeanAll(x.0))
    }

    /// Mean squared error between two same-shape tensors (composed op).
    pub fn mse(&mut self, a: Var, b: Var) -> Var {
        let d = self.sub(a, b);
        let sq = self.mul(d, d);
        self.mean_all(sq)
    }

    /// Reverse sweep from scalar `loss`; returns one gradient per parameter
    /// slot in `0..n_slots` (zero tensors keep their parameter's shape when a
    /// slot was bound, 1x1 zero otherwise).
    pub fn backward(&self, loss: Var, n_slots: usize) -> Vec<Tensor> {
        let lt = &self.nodes[loss.0].value;
        assert!(lt.rows == 1 && lt.cols == 1, "backward: loss must be scalar");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[idx].op {
                Op::Leaf | Op::Param(_) => {
                    grads[idx] = Some(g);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, &g);
                    acc(&mut grads, *b, &g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, &g);
                    let neg = map(&g, |v| -v);
                    acc(&mut grads, *b, &neg);
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    let ga = zip(&g, tb, |x, y| x * y);
                    let gb = zip(&g, ta, |x, y| x * y);
                    acc(&mut grads, *a, &ga);
                    acc(&mut grads, *b, &gb);
                }
                Op::Scale(a, c) => {
                    let ga = map(&g, |v| v * c);
                    acc(&mut grads, *a, &ga);
                }
                Op::AddRowBroadcast(m, r) => {
                    acc(&mut grads, *m, &g);
                    let mut gr = Tensor::zeros(1, g.cols);
                    for i in 0..g.rows {
                        for j in 0..g.cols {
                            gr.data[j] += g.at(i, j);
                        }
                    }
                    acc(&mut grads, *r, &gr);
                }
                Op::MulRowBroadcast(m, r) => {
                    let (tm, tr) = (&self.nodes[*m].value, &self.nodes[*r].value);
                    let mut gm = g.clone();
                    for i in 0..gm.rows {
                        for j in 0..gm.cols {
                            gm.data[i * gm.cols + j] *= tr.data[j];
                        }
                    }
                    acc(&mut grads, *m, &gm);
                    let mut gr = Tensor::zeros(1, g.cols);
                    for i in 0..g.rows {
                        for j in 0..g.cols {
                            gr.data[j] += g.at(i, j) * tm.at(i, j);
                        }
                    }
                    acc(&mut grads, *r, &gr);
                }
                Op::MatMul(a, b) => {
                    let (ta, tb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    let ga = matmul(&g, &tb.transpose());
                    let gb = matmul(&ta.transpose(), &g);
                    acc(&mut grads, *a, &ga);
                    acc(&mut grads, *b, &gb);
                }
                Op::Transpose(a) => {
                    let ga = g.transpose();
                    acc(&mut grads, *a, &ga);
                }
                Op::SoftmaxRows(x) => {
                    let y = &self.nodes[idx].value;
                    let mut gx = Tensor::zeros(y.rows, y.cols);
                    for i in 0..y.rows {
                        let yr = y.row(i);
                        let gr = g.row(i);
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..y.cols {
                            gx.data[i * y.cols + j] = yr[j] * (gr[j] - dot);
                        }
                    }
                    acc(&mut grads, *x, &gx);
                }
                Op::AttnMix(w, v) => {
                    let (tw, tv) = (&self.nodes[*w].value, &self.nodes[*v].value);
                    let gw = matmul(&g, &tv.transpose());
                    let gv = matmul(&tw.transpose(), &g);
                    acc(&mut grads, *w, &gw);
                    acc(&mut grads, *v, &gv);
                }
                Op::LayerNormRows { x, eps } => {
                    let tx = &self.nodes[*x].value;
                    let y = &self.nodes[idx].value;
                    let n = tx.cols as f64;
                    let mut gx = Tensor::zeros(tx.rows, tx.cols);
                    for i in 0..tx.rows {
                        let xr = tx.row(i);
                        let yr = y.row(i);
                        let gr = g.row(i);
                        let mean = xr.iter().sum::<f64>() / n;
                        let var = xr.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                        let inv = 1.0 / (var + eps).sqrt();
                        let g_mean = gr.iter().sum::<f64>() / n;
                        let gy_dot = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / n;
                        for j in 0..tx.cols {
                            gx.data[i * tx.cols + j] = inv * (gr[j] - g_mean - yr[j] * gy_dot);
                        }
                    }
                    acc(&mut grads, *x, &gx);
                }
                Op::Gelu(a) => {
                    let ta = &self.nodes[*a].value;
                    let ga = zip(&g, ta, |gv, xv| gv * gelu_grad_scalar(xv));
                    acc(&mut grads, *a, &ga);
                }
                Op::Exp(a) => {
                    let y = &self.nodes[idx].value;
                    let ga = zip(&g, y, |gv, yv| gv * yv);
                    acc(&mut grads, *a, &ga);
                }
                Op::GatherRows { table, indices } => {
                    let tt = &self.nodes[*table].value;
                    let mut gt = Tensor::zeros(tt.rows, tt.cols);
                    for (r, &i) in indices.iter().enumerate() {
                        for j in 0..tt.cols {
                            gt.data[i * tt.cols + j] += g.at(r, j);
                        }
                    }
                    acc(&mut grads, *table, &gt);
                }
                Op::SliceRows { x, start } => {
                    let tx = &self.nodes[*x].value;
                    let mut gx = Tensor::zeros(tx.rows, tx.cols);
                    gx.data[start * tx.cols..(start + g.rows) * tx.cols]
                        .copy_from_slice(&g.data);
                    acc(&mut grads, *x, &gx);
                }
                Op::SliceCols { x, start } => {
                    let tx = &self.nodes[*x].value;
                    let mut gx = Tensor::zeros(tx.rows, tx.cols);
                    for i in 0..g.rows {
                        gx.data[i * tx.cols + start..i * tx.cols + start + g.cols]
                            .copy_from_slice(g.row(i));
                    }
                    acc(&mut grads, *x, &gx);
                }
                Op::ConcatRows(parts) => {
                    let mut at = 0;
                    for &p in parts {
                        let rows = self.nodes[p].value.rows;
                        let cols = self.nodes[p].value.cols;
                        let mut gp = Tensor::zeros(rows, cols);
                        gp.data.copy_from_slice(&g.data[at * cols..(at + rows) * cols]);
                        acc(&mut grads, p, &gp);
                        at += rows;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut at = 0;
                    for &p in parts {
                        let rows = self.nodes[p].value.rows;
                        let cols = self.nodes[p].value.cols;
                        let mut gp = Tensor::zeros(rows, cols);
                        for i in 0..rows {
                            gp.data[i * cols..(i + 1) * cols]
                                .copy_from_slice(&g.row(i)[at..at + cols]);
                        }
                        acc(&mut grads, p, &gp);
                        at += cols;
                    }
                }
                Op::SumAll(a) => {
                    let ta = &self.nodes[*a].value;
                    let ga = Tensor::from_vec(
                        ta.rows,
                        ta.cols,
                        vec![g.data[0]; ta.len()],
                    );
                    acc(&mut grads, *a, &ga);
                }
                Op::MeanAll(a) => {
                    let ta = &self.nodes[*a].value;
                    let gv = g.data[0] / ta.len() as f64;
                    let ga = Tensor::from_vec(ta.rows, ta.cols, vec![gv; ta.len()]);
                    acc(&mut grads, *a, &ga);
                }
            }
        }

        let mut slot_grads: Vec<Tensor> = vec![Tensor::scalar(0.0); n_slots];
        let mut filled = vec![false; n_slots];
        for (idx, node) in self.nodes.iter().enumerate() {
            if let Op::Param(slot) = node.op {
                let g = grads[idx]
                    .take()
                    .unwrap_or_else(|| Tensor::zeros(node.value.rows, node.value.cols));
                if filled[slot] {
                    slot_grads[slot].add_assign(&g);
                } else {
                    slot_grads[slot] = g;
                    filled[slot] = true;
                }
            }
        }
        for (slot, f) in filled.iter().enumerate() {
            if !f {
                slot_grads[slot] = Tensor::scalar(0.0);
            }
        }
        slot_grads
    }
}

fn acc(grads: &mut [Option<Tensor>], idx: usize, delta: &Tensor) {
    match &mut grads[idx] {
        Some(g) => g.add_assign(delta),
        slot => *slot = Some(delta.clone()),
    }
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::from_vec(t.rows, t.cols, t.data.iter().map(|&v| f(v)).collect())
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    assert!(a.same_shape(b));
    Tensor::from_vec(
        a.rows,
        a.cols,
        a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
    )
}
