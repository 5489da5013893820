//! Tape-based reverse-mode differentiation over 2-D tensors.
//!
//! A [`Graph`] records every operation in creation order, so node indices are a
//! topological order and the backward pass is a single reverse sweep.

use super::kernels::{dot, gemm_nn, gemm_nt, gemm_tn, softmax_in_place};
use super::{ParamId, ParameterSet, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Layer-norm variance stabilizer.
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(usize, usize),
    AddRow(usize, usize),
    Add(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Relu(usize),
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Attention {
        q: usize,
        k: usize,
        v: usize,
        group: usize,
        heads: usize,
        probs: Vec<f64>,
    },
    GatherRows(usize, Vec<usize>),
    GroupMean(usize, usize),
    ConcatCols(usize, usize),
    SelectCols(usize, Vec<usize>),
    Mse(usize, usize),
    SumAll(usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradients of a backward pass with respect to graph inputs.
#[derive(Debug)]
pub struct InputGrads {
    grads: Vec<Option<Tensor>>,
}

impl InputGrads {
    /// Gradient of the loss with respect to an input node, if it was reached.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

/// Computation tape.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    consumed: bool,
}

fn shape2(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.cols())
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Drop all nodes so the graph can be rebuilt.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.consumed = false;
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

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: usize) -> bool {
        self.nodes[v].needs_grad
    }

    /// Constant leaf. Its gradient is still reported by [`Graph::backward`].
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input, true)
    }

    /// Constant leaf excluded from differentiation.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input, false)
    }

    /// Trainable leaf; gradients flow into `params` on backward.
    pub fn param(&mut self, params: &ParameterSet, id: ParamId) -> Var {
        self.push(params.value(id).clone(), Op::Param(id), true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = shape2(self.value(a));
        let (k2, n) = shape2(self.value(b));
        if k != k2 {
            return Err(Error::Dimension {
                expected: k,
                got: k2,
                context: "matmul inner dimension",
            });
        }
        let mut out = vec![0.0; m * n];
        gemm_nn(m, k, n, self.value(a).data(), self.value(b).data(), &mut out);
        let ng = self.ng(a.0) || self.ng(b.0);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a.0, b.0), ng))
    }

    /// Broadcast-add a `1 × n` row to every row of an `m × n` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = shape2(self.value(a));
        let r = self.value(row);
        if r.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: r.len(),
                context: "broadcast row width",
            });
        }
        let mut out = self.value(a).data().to_vec();
        for chunk in out.chunks_mut(n) {
            for (o, &b) in chunk.iter_mut().zip(r.data()) {
                *o += b;
            }
        }
        let ng = self.ng(a.0) || self.ng(row.0);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::AddRow(a.0, row.0), ng))
    }

    fn same_shape(&self, a: Var, b: Var, context: &'static str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::Dimension {
                expected: self.value(a).len(),
                got: self.value(b).len(),
                context,
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "elementwise add")?;
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        let ng = self.ng(a.0) || self.ng(b.0);
        Ok(self.push(Tensor::new(shape, out)?, Op::Add(a.0, b.0), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "elementwise mul")?;
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        let ng = self.ng(a.0) || self.ng(b.0);
        Ok(self.push(Tensor::new(shape, out)?, Op::Mul(a.0, b.0), ng))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let t = self.value(a);
        let out = Tensor::new(t.shape().to_vec(), t.data().iter().map(|x| x * s).collect())
            .expect("same shape");
        let ng = self.ng(a.0);
        self.push(out, Op::Scale(a.0, s), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let out = Tensor::new(t.shape().to_vec(), t.data().iter().map(|x| x.max(0.0)).collect())
            .expect("same shape");
        let ng = self.ng(a.0);
        self.push(out, Op::Relu(a.0), ng)
    }

    /// Row-wise layer normalization with learned gain and bias (`1 × n` each).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (m, n) = shape2(self.value(x));
        if self.value(gain).len() != n || self.value(bias).len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: self.value(gain).len(),
                context: "layer norm gain/bias width",
            });
        }
        let xs = self.value(x).data();
        let gs = self.value(gain).data();
        let bs = self.value(bias).data();
        let mut xhat = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let row = &xs[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = is;
            for c in 0..n {
                let h = (row[c] - mean) * is;
                xhat[r * n + c] = h;
                out[r * n + c] = gs[c] * h + bs[c];
            }
        }
        let ng = self.ng(x.0) || self.ng(gain.0) || self.ng(bias.0);
        Ok(self.push(
            Tensor::matrix(m, n, out)?,
            Op::LayerNorm {
                x: x.0,
                gain: gain.0,
                bias: bias.0,
                xhat,
                inv_std,
            },
            ng,
        ))
    }

    /// Scaled dot-product attention inside consecutive row blocks.
    ///
    /// Rows of `q`, `k`, `v` are split into blocks of `group` rows; each block
    /// attends only to itself. Columns are split into `heads` equal slices and
    /// the per-head outputs are written side by side (no output projection).
    pub fn attention(&mut self, q: Var, k: Var, v: Var, group: usize, heads: usize) -> Result<Var> {
        let (n, d) = shape2(self.value(q));
        for other in [k, v] {
            if shape2(self.value(other)) != (n, d) {
                return Err(Error::Dimension {
                    expected: n * d,
                    got: self.value(other).len(),
                    context: "attention q/k/v shapes",
                });
            }
        }
        if group == 0 || n % group != 0 {
            return Err(Error::InvalidArgument(format!(
                "attention group size {group} does not divide {n} rows"
            )));
        }
        if heads == 0 || d % heads != 0 {
            return Err(Error::InvalidArgument(format!(
                "{heads} heads do not divide feature width {d}"
            )));
        }
        let dh = d / heads;
        let blocks = n / group;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qs, ks, vs) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut probs = vec![0.0; blocks * heads * group * group];
        let mut out = vec![0.0; n * d];
        let mut qb = vec![0.0; group * dh];
        let mut kb = vec![0.0; group * dh];
        let mut vb = vec![0.0; group * dh];
        let mut ob = vec![0.0; group * dh];
        for b in 0..blocks {
            for h in 0..heads {
                gather_block(qs, d, b * group, group, h * dh, dh, &mut qb);
                gather_block(ks, d, b * group, group, h * dh, dh, &mut kb);
                gather_block(vs, d, b * group, group, h * dh, dh, &mut vb);
                let off = (b * heads + h) * group * group;
                let p = &mut probs[off..off + group * group];
                gemm_nt(group, dh, group, &qb, &kb, p);
                for row in p.chunks_mut(group) {
                    for s in row.iter_mut() {
                        *s *= scale;
                    }
                    softmax_in_place(row);
                }
                ob.fill(0.0);
                gemm_nn(group, group, dh, p, &vb, &mut ob);
                scatter_block(&ob, &mut out, d, b * group, group, h * dh, dh, false);
            }
        }
        let ng = self.ng(q.0) || self.ng(k.0) || self.ng(v.0);
        Ok(self.push(
            Tensor::matrix(n, d, out)?,
            Op::Attention {
                q: q.0,
                k: k.0,
                v: v.0,
                group,
                heads,
                probs,
            },
            ng,
        ))
    }

    /// Attention weights of the most recent attention node built on `out`.
    pub fn attention_probs(&self, out: Var) -> Option<&[f64]> {
        match &self.nodes[out.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// `out[r] = a[index[r]]`.
    pub fn gather_rows(&mut self, a: Var, index: Vec<usize>) -> Result<Var> {
        let t = self.value(a);
        let (m, n) = shape2(t);
        if let Some(&bad) = index.iter().find(|&&i| i >= m) {
            return Err(Error::InvalidArgument(format!("row index {bad} out of {m} rows")));
        }
        let mut out = Vec::with_capacity(index.len() * n);
        for &i in &index {
            out.extend_from_slice(t.row(i));
        }
        let rows = index.len();
        let ng = self.ng(a.0);
        Ok(self.push(Tensor::matrix(rows, n, out)?, Op::GatherRows(a.0, index), ng))
    }

    /// Mean of each consecutive block of `group` rows.
    pub fn group_mean(&mut self, a: Var, group: usize) -> Result<Var> {
        let t = self.value(a);
        let (m, n) = shape2(t);
        if group == 0 || m % group != 0 {
            return Err(Error::InvalidArgument(format!(
                "group size {group} does not divide {m} rows"
            )));
        }
        let blocks = m / group;
        let mut out = vec![0.0; blocks * n];
        for b in 0..blocks {
            let o = &mut out[b * n..(b + 1) * n];
            for r in b * group..(b + 1) * group {
                for (x, &y) in o.iter_mut().zip(t.row(r)) {
                    *x += y;
                }
            }
            for x in o.iter_mut() {
                *x /= group as f64;
            }
        }
        let ng = self.ng(a.0);
        Ok(self.push(Tensor::matrix(blocks, n, out)?, Op::GroupMean(a.0, group), ng))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ma, na) = shape2(self.value(a));
        let (mb, nb) = shape2(self.value(b));
        if ma != mb {
            return Err(Error::Dimension {
                expected: ma,
                got: mb,
                context: "concat row count",
            });
        }
        let mut out = Vec::with_capacity(ma * (na + nb));
        for r in 0..ma {
            out.extend_from_slice(self.value(a).row(r));
            out.extend_from_slice(self.value(b).row(r));
        }
        let ng = self.ng(a.0) || self.ng(b.0);
        Ok(self.push(Tensor::matrix(ma, na + nb, out)?, Op::ConcatCols(a.0, b.0), ng))
    }

    /// Pick one column per row: `out[r] = a[r, cols[r]]`, an `m × 1` matrix.
    pub fn select_cols(&mut self, a: Var, cols: Vec<usize>) -> Result<Var> {
        let t = self.value(a);
        let (m, n) = shape2(t);
        if cols.len() != m {
            return Err(Error::Dimension {
                expected: m,
                got: cols.len(),
                context: "selected columns",
            });
        }
        if let Some(&bad) = cols.iter().find(|&&c| c >= n) {
            return Err(Error::InvalidArgument(format!("column {bad} out of {n}")));
        }
        let out: Vec<f64> = cols.iter().enumerate().map(|(r, &c)| t.get(r, c)).collect();
        let ng = self.ng(a.0);
        Ok(self.push(Tensor::matrix(m, 1, out)?, Op::SelectCols(a.0, cols), ng))
    }

    /// Mean squared error over all entries, a `1 × 1` node.
    pub fn mse(&mut self, a: Var, target: Var) -> Result<Var> {
        self.same_shape(a, target, "mse operands")?;
        let n = self.value(a).len() as f64;
        let s: f64 = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(target).data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        let ng = self.ng(a.0) || self.ng(target.0);
        Ok(self.push(Tensor::scalar(s / n), Op::Mse(a.0, target.0), ng))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let ng = self.ng(a.0);
        self.push(Tensor::scalar(s), Op::SumAll(a.0), ng)
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Parameter gradients are added into `params`; gradients of input leaves
    /// are returned. A graph supports one backward pass per build.
    pub fn backward(&mut self, loss: Var, params: &mut ParameterSet) -> Result<InputGrads> {
        if self.consumed {
            return Err(Error::GraphConsumed);
        }
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar loss, got {} entries",
                lv.len()
            )));
        }
        if !lv.is_finite() {
            return Err(Error::NonFinite("loss"));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = (match self.nodes[i].op {
                Op::Input => None,
                _ => grads[i].take(),
            }) else {
                continue;
            };
            self.backprop_node(i, g, &mut grads, params)?;
        }
        Ok(InputGrads { grads })
    }

    fn backprop_node(
        &self,
        i: usize,
        g: Tensor,
        grads: &mut [Option<Tensor>],
        params: &mut ParameterSet,
    ) -> Result<()> {
        let nodes = &self.nodes;
        let gd = g.data();
        match &nodes[i].op {
            Op::Input => {}
            Op::Param(id) => {
                let p = params.get_mut(*id);
                if p.grad.shape() != g.shape() {
                    return Err(Error::InvalidArgument(format!(
                        "parameter `{}` changed shape since the graph was built",
                        p.name
                    )));
                }
                for (a, b) in p.grad.data_mut().iter_mut().zip(gd) {
                    *a += b;
                }
            }
            &Op::MatMul(a, b) => {
                let (m, k) = shape2(&nodes[a].value);
                let n = nodes[b].value.cols();
                if nodes[a].needs_grad {
                    let ga = acc(grads, a, &nodes[a].value);
                    gemm_nt(m, n, k, gd, nodes[b].value.data(), ga);
                }
                if nodes[b].needs_grad {
                    let gb = acc(grads, b, &nodes[b].value);
                    gemm_tn(k, m, n, nodes[a].value.data(), gd, gb);
                }
            }
            &Op::AddRow(a, row) => {
                let n = nodes[a].value.cols();
                if nodes[a].needs_grad {
                    add_into(acc(grads, a, &nodes[a].value), gd);
                }
                if nodes[row].needs_grad {
                    let gr = acc(grads, row, &nodes[row].value);
                    for chunk in gd.chunks(n) {
                        add_into(gr, chunk);
                    }
                }
            }
            &Op::Add(a, b) => {
                for x in [a, b] {
                    if nodes[x].needs_grad {
                        add_into(acc(grads, x, &nodes[x].value), gd);
                    }
                }
            }
            &Op::Mul(a, b) => {
                if nodes[a].needs_grad {
                    let ga = acc(grads, a, &nodes[a].value);
                    for ((o, &d), &y) in ga.iter_mut().zip(gd).zip(nodes[b].value.data()) {
                        *o += d * y;
                    }
                }
                if nodes[b].needs_grad {
                    let gb = acc(grads, b, &nodes[b].value);
                    for ((o, &d), &x) in gb.iter_mut().zip(gd).zip(nodes[a].value.data()) {
                        *o += d * x;
                    }
                }
            }
            &Op::Scale(a, s) => {
                if nodes[a].needs_grad {
                    for (o, &d) in acc(grads, a, &nodes[a].value).iter_mut().zip(gd) {
                        *o += s * d;
                    }
                }
            }
            &Op::Relu(a) => {
                if nodes[a].needs_grad {
                    let ga = acc(grads, a, &nodes[a].value);
                    for ((o, &d), &x) in ga.iter_mut().zip(gd).zip(nodes[a].value.data()) {
                        if x > 0.0 {
                            *o += d;
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
                let (m, n) = shape2(&nodes[*x].value);
                if nodes[*gain].needs_grad {
                    let gg = acc(grads, *gain, &nodes[*gain].value);
                    for r in 0..m {
                        for c in 0..n {
                            gg[c] += gd[r * n + c] * xhat[r * n + c];
                        }
                    }
                }
                if nodes[*bias].needs_grad {
                    let gb = acc(grads, *bias, &nodes[*bias].value);
                    for chunk in gd.chunks(n) {
                        add_into(gb, chunk);
                    }
                }
                if nodes[*x].needs_grad {
                    let gains = nodes[*gain].value.data().to_vec();
                    let gx = acc(grads, *x, &nodes[*x].value);
                    let mut dxhat = vec![0.0; n];
                    for r in 0..m {
                        let mut mean_d = 0.0;
                        let mut mean_dx = 0.0;
                        for c in 0..n {
                            let v = gd[r * n + c] * gains[c];
                            dxhat[c] = v;
                            mean_d += v;
                            mean_dx += v * xhat[r * n + c];
                        }
                        mean_d /= n as f64;
                        mean_dx /= n as f64;
                        for c in 0..n {
                            gx[r * n + c] +=
                                inv_std[r] * (dxhat[c] - mean_d - xhat[r * n + c] * mean_dx);
                        }
                    }
                }
            }
            Op::Attention {
                q,
                k,
                v,
                group,
                heads,
                probs,
            } => {
                let (q, k, v, group, heads) = (*q, *k, *v, *group, *heads);
                let (n, d) = shape2(&nodes[q].value);
                let dh = d / heads;
                let blocks = n / group;
                let scale = 1.0 / (dh as f64).sqrt();
                let mut gq = vec![0.0; n * d];
                let mut gk = vec![0.0; n * d];
                let mut gv = vec![0.0; n * d];
                let mut qb = vec![0.0; group * dh];
                let mut kb = vec![0.0; group * dh];
                let mut vb = vec![0.0; group * dh];
                let mut dob = vec![0.0; group * dh];
                let mut dp = vec![0.0; group * group];
                let mut tmp = vec![0.0; group * dh];
                for b in 0..blocks {
                    for h in 0..heads {
                        gather_block(nodes[q].value.data(), d, b * group, group, h * dh, dh, &mut qb);
                        gather_block(nodes[k].value.data(), d, b * group, group, h * dh, dh, &mut kb);
                        gather_block(nodes[v].value.data(), d, b * group, group, h * dh, dh, &mut vb);
                        gather_block(gd, d, b * group, group, h * dh, dh, &mut dob);
                        let off = (b * heads + h) * group * group;
                        let p = &probs[off..off + group * group];
                        // dV = Pᵀ dO
                        tmp.fill(0.0);
                        gemm_tn(group, group, dh, p, &dob, &mut tmp);
                        scatter_block(&tmp, &mut gv, d, b * group, group, h * dh, dh, true);
                        // dP = dO Vᵀ, then softmax Jacobian
                        dp.fill(0.0);
                        gemm_nt(group, dh, group, &dob, &vb, &mut dp);
                        for (prow, dprow) in p.chunks(group).zip(dp.chunks_mut(group)) {
                            let inner = dot(prow, dprow);
                            for (ds, &pv) in dprow.iter_mut().zip(prow) {
                                *ds = pv * (*ds - inner) * scale;
                            }
                        }
                        // dQ = dS K, dK = dSᵀ Q
                        tmp.fill(0.0);
                        gemm_nn(group, group, dh, &dp, &kb, &mut tmp);
                        scatter_block(&tmp, &mut gq, d, b * group, group, h * dh, dh, true);
                        tmp.fill(0.0);
                        gemm_tn(group, group, dh, &dp, &qb, &mut tmp);
                        scatter_block(&tmp, &mut gk, d, b * group, group, h * dh, dh, true);
                    }
                }
                for (x, gx) in [(q, gq), (k, gk), (v, gv)] {
                    if nodes[x].needs_grad {
                        add_into(acc(grads, x, &nodes[x].value), &gx);
                    }
                }
            }
            Op::GatherRows(a, index) => {
                if nodes[*a].needs_grad {
                    let n = nodes[*a].value.cols();
                    let ga = acc(grads, *a, &nodes[*a].value);
                    for (r, &src) in index.iter().enumerate() {
                        add_into(&mut ga[src * n..(src + 1) * n], &gd[r * n..(r + 1) * n]);
                    }
                }
            }
            &Op::GroupMean(a, group) => {
                if nodes[a].needs_grad {
                    let (m, n) = shape2(&nodes[a].value);
                    let ga = acc(grads, a, &nodes[a].value);
                    let inv = 1.0 / group as f64;
                    for r in 0..m {
                        let b = r / group;
                        for c in 0..n {
                            ga[r * n + c] += gd[b * n + c] * inv;
                        }
                    }
                }
            }
            &Op::ConcatCols(a, b) => {
                let na = nodes[a].value.cols();
                let nb = nodes[b].value.cols();
                let rows = nodes[a].value.rows();
                if nodes[a].needs_grad {
                    let ga = acc(grads, a, &nodes[a].value);
                    for r in 0..rows {
                        add_into(
                            &mut ga[r * na..(r + 1) * na],
                            &gd[r * (na + nb)..r * (na + nb) + na],
                        );
                    }
                }
                if nodes[b].needs_grad {
                    let gb = acc(grads, b, &nodes[b].value);
                    for r in 0..rows {
                        add_into(
                            &mut gb[r * nb..(r + 1) * nb],
                            &gd[r * (na + nb) + na..(r + 1) * (na + nb)],
                        );
                    }
                }
            }
            Op::SelectCols(a, cols) => {
                if nodes[*a].needs_grad {
                    let n = nodes[*a].value.cols();
                    let ga = acc(grads, *a, &nodes[*a].value);
                    for (r, &c) in cols.iter().enumerate() {
                        ga[r * n + c] += gd[r];
                    }
                }
            }
            &Op::Mse(a, t) => {
                let len = nodes[a].value.len() as f64;
                let coef = 2.0 * gd[0] / len;
                let (av, tv) = (nodes[a].value.data(), nodes[t].value.data());
                if nodes[a].needs_grad {
                    let ga = acc(grads, a, &nodes[a].value);
                    for ((o, &x), &y) in ga.iter_mut().zip(av).zip(tv) {
                        *o += coef * (x - y);
                    }
                }
                if nodes[t].needs_grad {
                    let gt = acc(grads, t, &nodes[t].value);
                    for ((o, &x), &y) in gt.iter_mut().zip(av).zip(tv) {
                        *o -= coef * (x - y);
                    }
                }
            }
            &Op::SumAll(a) => {
                if nodes[a].needs_grad {
                    for o in acc(grads, a, &nodes[a].value).iter_mut() {
                        *o += gd[0];
                    }
                }
            }
        }
        Ok(())
    }
}

/// Gradient buffer of node `i`, created zeroed on first use.
fn acc<'a>(grads: &'a mut [Option<Tensor>], i: usize, like: &Tensor) -> &'a mut [f64] {
    grads[i]
        .get_or_insert_with(|| Tensor::zeros(like.shape()))
        .data_mut()
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Copy rows `row0..row0+rows`, columns `col0..col0+cols` of a matrix with
/// `stride` columns into a contiguous buffer.
fn gather_block(
    src: &[f64],
    stride: usize,
    row0: usize,
    rows: usize,
    col0: usize,
    cols: usize,
    dst: &mut [f64],
) {
    for r in 0..rows {
        let s = (row0 + r) * stride + col0;
        dst[r * cols..(r + 1) * cols].copy_from_slice(&src[s..s + cols]);
    }
}

#[allow(clippy::too_many_arguments)]
fn scatter_block(
    src: &[f64],
    dst: &mut [f64],
    stride: usize,
    row0: usize,
    rows: usize,
    col0: usize,
    cols: usize,
    accumulate: bool,
) {
    for r in 0..rows {
        let s = (row0 + r) * stride + col0;
        let d = &mut dst[s..s + cols];
        let block = &src[r * cols..(r + 1) * cols];
        if accumulate {
            add_into(d, block);
        } else {
            d.copy_from_slice(block);
        }
    }
}
