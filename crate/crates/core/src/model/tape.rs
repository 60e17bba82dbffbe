//! Matrix-level reverse-mode differentiation.
//!
//! Every operation appends a node holding its value and enough context to
//! push gradients back to its inputs. [`Tape::backward`] walks the nodes in
//! reverse insertion order, which is a valid topological order because a
//! node can only reference nodes created before it.

use super::tensor::{dot, Matrix};

pub const RMS_EPS: f64 = 1e-6;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_K: f64 = 0.044_715;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    MatMulT(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    AddConst(NodeId),
    Scale(NodeId, f64),
    Gather {
        table: NodeId,
        ids: Vec<usize>,
    },
    RmsNorm {
        x: NodeId,
        gain: NodeId,
        normed: Matrix,
        inv_rms: Vec<f64>,
    },
    Gelu(NodeId),
    CausalSoftmax(NodeId),
    Columns {
        x: NodeId,
        start: usize,
    },
    ConcatColumns(Vec<NodeId>),
    MeanRows(NodeId),
    CrossEntropy {
        logits: NodeId,
        targets: Vec<(usize, usize)>,
        probs: Matrix,
    },
    Cosine(NodeId, NodeId),
    Affine(Vec<(NodeId, f64)>),
    WeightedSqDist {
        x: NodeId,
        anchor: Vec<f64>,
        weight: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Matrix> {
        self.grads[id.0].as_ref()
    }

    pub fn take(&mut self, id: NodeId) -> Option<Matrix> {
        self.grads[id.0].take()
    }
}

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

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Matrix, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Matrix) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).matmul_t(self.value(b));
        self.push(v, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        self.push(v, Op::Add(a, b))
    }

    /// Adds the `1 × n` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let bias = self.value(b).clone();
        assert_eq!(bias.rows, 1, "add_row expects a row vector");
        let mut v = self.value(a).clone();
        assert_eq!(v.cols, bias.cols, "add_row width");
        for r in 0..v.rows {
            for (x, b) in v.row_mut(r).iter_mut().zip(&bias.data) {
                *x += b;
            }
        }
        self.push(v, Op::AddRow(a, b))
    }

    /// Adds a constant (non-differentiated) matrix.
    pub fn add_const(&mut self, a: NodeId, c: &Matrix) -> NodeId {
        let mut v = self.value(a).clone();
        v.add_assign(c);
        self.push(v, Op::AddConst(a))
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let mut v = self.value(a).clone();
        v.data.iter_mut().for_each(|x| *x *= s);
        self.push(v, Op::Scale(a, s))
    }

    /// Selects rows of `table`.
    pub fn gather(&mut self, table: NodeId, ids: &[usize]) -> NodeId {
        let t = self.value(table);
        let mut v = Matrix::zeros(ids.len(), t.cols);
        for (r, &id) in ids.iter().enumerate() {
            v.row_mut(r).copy_from_slice(t.row(id));
        }
        self.push(
            v,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    /// Row-wise RMS normalization scaled by the `1 × d` gain.
    pub fn rms_norm(&mut self, x: NodeId, gain: NodeId) -> NodeId {
        let xv = self.value(x);
        let g = self.value(gain);
        assert_eq!((g.rows, g.cols), (1, xv.cols), "rms_norm gain shape");
        let mut normed = xv.clone();
        let mut inv_rms = Vec::with_capacity(xv.rows);
        for r in 0..xv.rows {
            let row = normed.row_mut(r);
            let inv = 1.0 / (dot(row, row) / row.len() as f64 + RMS_EPS).sqrt();
            row.iter_mut().for_each(|v| *v *= inv);
            inv_rms.push(inv);
        }
        let mut out = normed.clone();
        for r in 0..out.rows {
            for (v, g) in out.row_mut(r).iter_mut().zip(&g.data) {
                *v *= g;
            }
        }
        self.push(
            out,
            Op::RmsNorm {
                x,
                gain,
                normed,
                inv_rms,
            },
        )
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let mut v = self.value(a).clone();
        v.data.iter_mut().for_each(|x| {
            let u = GELU_C * (*x + GELU_K * *x * *x * *x);
            *x = 0.5 * *x * (1.0 + u.tanh());
        });
        self.push(v, Op::Gelu(a))
    }

    /// Row-wise softmax over columns `0..=row`; later columns are zero.
    pub fn causal_softmax(&mut self, a: NodeId) -> NodeId {
        let mut v = self.value(a).clone();
        assert_eq!(v.rows, v.cols, "causal_softmax expects square scores");
        for r in 0..v.rows {
            let row = v.row_mut(r);
            let max = row[..=r].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for x in &mut row[..=r] {
                *x = (*x - max).exp();
                sum += *x;
            }
            for x in &mut row[..=r] {
                *x /= sum;
            }
            row[r + 1..].iter_mut().for_each(|x| *x = 0.0);
        }
        self.push(v, Op::CausalSoftmax(a))
    }

    pub fn columns(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let xv = self.value(x);
        assert!(start + len <= xv.cols, "column slice out of bounds");
        let mut v = Matrix::zeros(xv.rows, len);
        for r in 0..xv.rows {
            v.row_mut(r).copy_from_slice(&xv.row(r)[start..start + len]);
        }
        self.push(v, Op::Columns { x, start })
    }

    pub fn concat_columns(&mut self, parts: &[NodeId]) -> NodeId {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut v = Matrix::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.rows, rows, "concat rows");
            for r in 0..rows {
                v.row_mut(r)[off..off + pv.cols].copy_from_slice(pv.row(r));
            }
            off += pv.cols;
        }
        self.push(v, Op::ConcatColumns(parts.to_vec()))
    }

    pub fn mean_rows(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let mut v = Matrix::zeros(1, xv.cols);
        for r in 0..xv.rows {
            for (a, b) in v.data.iter_mut().zip(xv.row(r)) {
                *a += b;
            }
        }
        let n = xv.rows as f64;
        v.data.iter_mut().for_each(|a| *a /= n);
        self.push(v, Op::MeanRows(x))
    }

    /// Mean negative log-likelihood of `(row, target)` pairs under row-wise softmax.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[(usize, usize)]) -> NodeId {
        let lv = self.value(logits);
        let mut probs = lv.clone();
        for r in 0..probs.rows {
            let row = probs.row_mut(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                sum += *x;
            }
            row.iter_mut().for_each(|x| *x /= sum);
        }
        let mut loss = 0.0;
        for &(r, t) in targets {
            let row = lv.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            loss += lse - row[t];
        }
        loss /= targets.len() as f64;
        self.push(
            Matrix::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        )
    }

    /// Cosine similarity of two vectors of equal length.
    pub fn cosine(&mut self, u: NodeId, v: NodeId) -> NodeId {
        let (a, b) = (&self.value(u).data, &self.value(v).data);
        assert_eq!(a.len(), b.len(), "cosine length");
        let c = dot(a, b) / (dot(a, a).sqrt() * dot(b, b).sqrt());
        self.push(Matrix::scalar(c), Op::Cosine(u, v))
    }

    /// `constant + Σ coef · term` over same-shaped inputs.
    pub fn affine(&mut self, terms: &[(NodeId, f64)], constant: f64) -> NodeId {
        assert!(!terms.is_empty(), "affine needs at least one term");
        let (r, c) = self.value(terms[0].0).shape();
        let mut v = Matrix::filled(r, c, constant);
        for &(id, coef) in terms {
            v.add_scaled(self.value(id), coef);
        }
        self.push(v, Op::Affine(terms.to_vec()))
    }

    /// `Σ weight_i (x_i − anchor_i)²` as a scalar.
    pub fn weighted_sq_dist(&mut self, x: NodeId, anchor: &[f64], weight: &[f64]) -> NodeId {
        let xv = &self.value(x).data;
        assert_eq!(xv.len(), anchor.len(), "anchor length");
        assert_eq!(xv.len(), weight.len(), "weight length");
        let s = xv
            .iter()
            .zip(anchor)
            .zip(weight)
            .map(|((x, a), w)| w * (x - a) * (x - a))
            .sum();
        self.push(
            Matrix::scalar(s),
            Op::WeightedSqDist {
                x,
                anchor: anchor.to_vec(),
                weight: weight.to_vec(),
            },
        )
    }

    /// Back-propagates from the scalar node `root`.
    pub fn backward(&self, root: NodeId) -> Gradients {
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        let rv = self.value(root);
        grads[root.0] = Some(Matrix::filled(rv.rows, rv.cols, 1.0));

        fn acc(grads: &mut [Option<Matrix>], id: NodeId, g: Matrix) {
            match &mut grads[id.0] {
                Some(existing) => existing.add_assign(&g),
                slot => *slot = Some(g),
            }
        }

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let da = g.matmul_t(self.value(*b));
                    let db = self.value(*a).t_matmul(&g);
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::MatMulT(a, b) => {
                    let da = g.matmul(self.value(*b));
                    let db = g.t_matmul(self.value(*a));
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::AddRow(a, b) => {
                    let mut db = Matrix::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for (d, x) in db.data.iter_mut().zip(g.row(r)) {
                            *d += x;
                        }
                    }
                    acc(&mut grads, *a, g);
                    acc(&mut grads, *b, db);
                }
                Op::AddConst(a) => acc(&mut grads, *a, g),
                Op::Scale(a, s) => {
                    let mut d = g;
                    d.data.iter_mut().for_each(|x| *x *= s);
                    acc(&mut grads, *a, d);
                }
                Op::Gather { table, ids } => {
                    let t = self.value(*table);
                    let mut d = Matrix::zeros(t.rows, t.cols);
                    for (r, &id) in ids.iter().enumerate() {
                        for (a, b) in d.row_mut(id).iter_mut().zip(g.row(r)) {
                            *a += b;
                        }
                    }
                    acc(&mut grads, *table, d);
                }
                Op::RmsNorm {
                    x,
                    gain,
                    normed,
                    inv_rms,
                } => {
                    let gv = &self.value(*gain).data;
                    let d = g.cols as f64;
                    let mut dgain = Matrix::zeros(1, g.cols);
                    let mut dx = Matrix::zeros(g.rows, g.cols);
                    for r in 0..g.rows {
                        let gy = g.row(r);
                        let n = normed.row(r);
                        let mut proj = 0.0;
                        for j in 0..g.cols {
                            dgain.data[j] += gy[j] * n[j];
                            proj += gy[j] * gv[j] * n[j];
                        }
                        proj /= d;
                        let out = dx.row_mut(r);
                        for j in 0..g.cols {
                            out[j] = (gy[j] * gv[j] - n[j] * proj) * inv_rms[r];
                        }
                    }
                    acc(&mut grads, *x, dx);
                    acc(&mut grads, *gain, dgain);
                }
                Op::Gelu(a) => {
                    let xv = self.value(*a);
                    let mut d = g;
                    for (dv, &x) in d.data.iter_mut().zip(&xv.data) {
                        let u = GELU_C * (x + GELU_K * x * x * x);
                        let t = u.tanh();
                        let du = GELU_C * (1.0 + 3.0 * GELU_K * x * x);
                        *dv *= 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
                    }
                    acc(&mut grads, *a, d);
                }
                Op::CausalSoftmax(a) => {
                    let y = &node.value;
                    let mut d = Matrix::zeros(y.rows, y.cols);
                    for r in 0..y.rows {
                        let yr = &y.row(r)[..=r];
                        let gr = &g.row(r)[..=r];
                        let s = dot(yr, gr);
                        for (j, o) in d.row_mut(r)[..=r].iter_mut().enumerate() {
                            *o = yr[j] * (gr[j] - s);
                        }
                    }
                    acc(&mut grads, *a, d);
                }
                Op::Columns { x, start } => {
                    let xv = self.value(*x);
                    let mut d = Matrix::zeros(xv.rows, xv.cols);
                    for r in 0..xv.rows {
                        d.row_mut(r)[*start..*start + g.cols].copy_from_slice(g.row(r));
                    }
                    acc(&mut grads, *x, d);
                }
                Op::ConcatColumns(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let w = self.value(p).cols;
                        let mut d = Matrix::zeros(g.rows, w);
                        for r in 0..g.rows {
                            d.row_mut(r).copy_from_slice(&g.row(r)[off..off + w]);
                        }
                        off += w;
                        acc(&mut grads, p, d);
                    }
                }
                Op::MeanRows(x) => {
                    let xv = self.value(*x);
                    let n = xv.rows as f64;
                    let mut d = Matrix::zeros(xv.rows, xv.cols);
                    for r in 0..xv.rows {
                        for (o, gv) in d.row_mut(r).iter_mut().zip(&g.data) {
                            *o = gv / n;
                        }
                    }
                    acc(&mut grads, *x, d);
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                } => {
                    let scale = g.item() / targets.len() as f64;
                    let mut d = Matrix::zeros(probs.rows, probs.cols);
                    for &(r, t) in targets {
                        for (o, p) in d.row_mut(r).iter_mut().zip(probs.row(r)) {
                            *o += scale * p;
                        }
                        d.data[r * probs.cols + t] -= scale;
                    }
                    acc(&mut grads, *logits, d);
                }
                Op::Cosine(u, v) => {
                    let (a, b) = (&self.value(*u).data, &self.value(*v).data);
                    let (na, nb) = (dot(a, a).sqrt(), dot(b, b).sqrt());
                    let c = node.value.item();
                    let gs = g.item();
                    let du: Vec<f64> = a
                        .iter()
                        .zip(b)
                        .map(|(x, y)| gs * (y / (na * nb) - c * x / (na * na)))
                        .collect();
                    let dv: Vec<f64> = a
                        .iter()
                        .zip(b)
                        .map(|(x, y)| gs * (x / (na * nb) - c * y / (nb * nb)))
                        .collect();
                    let (ur, uc) = self.value(*u).shape();
                    let (vr, vc) = self.value(*v).shape();
                    acc(&mut grads, *u, Matrix::from_vec(ur, uc, du));
                    acc(&mut grads, *v, Matrix::from_vec(vr, vc, dv));
                }
                Op::Affine(terms) => {
                    for &(id, coef) in terms {
                        let mut d = g.clone();
                        d.data.iter_mut().for_each(|x| *x *= coef);
                        acc(&mut grads, id, d);
                    }
                }
                Op::WeightedSqDist { x, anchor, weight } => {
                    let xv = self.value(*x);
                    let gs = g.item();
                    let d: Vec<f64> = xv
                        .data
                        .iter()
                        .zip(anchor)
                        .zip(weight)
                        .map(|((x, a), w)| gs * 2.0 * w * (x - a))
                        .collect();
                    acc(&mut grads, *x, Matrix::from_vec(xv.rows, xv.cols, d));
                }
            }
        }
        Gradients { grads }
    }
}
