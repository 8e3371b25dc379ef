//! Reverse-mode tape over dense matrices.
//!
//! Every operation appends a node holding its forward value and whatever it
//! needs to run its backward rule. Node indices are a topological order, so
//! [`Tape::backward`] is a single reverse sweep. A tape is single use: once
//! backward has run, calling it again is an error.

use crate::error::TapeError;
use crate::params::{Grads, ParamId, ParamStore};
use crate::tensor::{gemm_nn, gemm_nt, gemm_tn, Tensor};

/// Variance floor used by [`Tape::batch_norm`].
pub const NORM_EPS: f64 = 1e-5;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Statistics source for [`Tape::batch_norm`].
#[derive(Debug, Clone, Copy)]
pub enum NormMode<'a> {
    /// Normalize each column over the rows of this input.
    Batch,
    /// Normalize with externally supplied per-column statistics.
    Fixed { mean: &'a [f64], var: &'a [f64] },
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Transpose(Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Hadamard(Var, Var),
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Mean {
        x: Var,
        axis: usize,
    },
    Sum(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    LogSoftmax {
        x: Var,
        axis: usize,
    },
    GatherRows {
        x: Var,
        index: Vec<usize>,
    },
    ScatterMean {
        x: Var,
        target: Vec<Option<usize>>,
        counts: Vec<usize>,
    },
    Pick {
        x: Var,
        row: usize,
        col: usize,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch: bool,
        mean: Vec<f64>,
        var: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        weights: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<Option<Var>>,
    consumed: bool,
}

fn mismatch(op: &'static str, left: [usize; 2], right: [usize; 2]) -> TapeError {
    TapeError::ShapeMismatch { op, left, right }
}

fn check_axis(op: &'static str, axis: usize) -> Result<(), TapeError> {
    if axis > 1 {
        return Err(TapeError::InvalidArgument {
            op,
            reason: format!("axis {axis} out of range for a matrix"),
        });
    }
    Ok(())
}

/// Lanes along `axis` of a `rows x cols` matrix: (lane count, lane length,
/// flat index of element `pos` in lane `lane`).
fn lanes(rows: usize, cols: usize, axis: usize) -> (usize, usize, impl Fn(usize, usize) -> usize) {
    let along_cols = axis == 1;
    let (count, len) = if along_cols { (rows, cols) } else { (cols, rows) };
    (count, len, move |lane: usize, pos: usize| {
        if along_cols {
            lane * cols + pos
        } else {
            pos * cols + lane
        }
    })
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last backward's loss with respect to `v`, if `v` was
    /// reachable from it.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let g = self.grads.get(v.0)?.as_ref()?;
        let [r, c] = self.shape(v);
        Tensor::from_vec(r, c, g.clone()).ok()
    }

    /// A leaf node. Leaves receive gradients like any other node.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Binds a parameter from `store`. Repeated calls with the same id return
    /// the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(Some(v)) = self.params.get(id.0) {
            return *v;
        }
        let v = self.push(store.get(id).clone(), Op::Param);
        if self.params.len() <= id.0 {
            self.params.resize(id.0 + 1, None);
        }
        self.params[id.0] = Some(v);
        v
    }

    /// Per-column statistics computed by a batch-mode [`Tape::batch_norm`]
    /// node: `(mean, population variance)`.
    pub fn batch_stats(&self, v: Var) -> Option<(&[f64], &[f64])> {
        match &self.nodes[v.0].op {
            Op::BatchNorm {
                batch: true,
                mean,
                var,
                ..
            } => Some((mean, var)),
            _ => None,
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa[1] != sb[0] {
            return Err(mismatch("matmul", sa, sb));
        }
        let mut out = Tensor::zeros(sa[0], sb[1]);
        gemm_nn(
            self.value(a).data(),
            self.value(b).data(),
            out.data_mut(),
            sa[0],
            sa[1],
            sb[1],
        );
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let [r, c] = t.shape();
        let mut out = Tensor::zeros(c, r);
        for i in 0..r {
            for j in 0..c {
                out.data_mut()[j * r + i] = t.get(i, j);
            }
        }
        self.push(out, Op::Transpose(x))
    }

    /// `x W^T + b` with `x: m x in`, `W: out x in`, `b: 1 x out`.
    pub fn linear(&mut self, w: Var, x: Var, b: Option<Var>) -> Result<Var, TapeError> {
        let (sw, sx) = (self.shape(w), self.shape(x));
        if sw[1] != sx[1] {
            return Err(mismatch("linear", sw, sx));
        }
        let mut out = Tensor::zeros(sx[0], sw[0]);
        gemm_nt(
            self.value(x).data(),
            self.value(w).data(),
            out.data_mut(),
            sx[0],
            sx[1],
            sw[0],
        );
        if let Some(b) = b {
            let sb = self.shape(b);
            if sb != [1, sw[0]] {
                return Err(mismatch("linear bias", sb, [1, sw[0]]));
            }
            let bias = self.value(b).data().to_vec();
            for row in out.data_mut().chunks_mut(sw[0]) {
                for (o, bv) in row.iter_mut().zip(&bias) {
                    *o += bv;
                }
            }
        }
        Ok(self.push(out, Op::Linear { x, w, b }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(mismatch("add", sa, sb));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let out = Tensor::from_vec(sa[0], sa[1], data)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// Adds the `1 x c` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb != [1, sa[1]] {
            return Err(mismatch("add_row", sa, sb));
        }
        let mut out = self.value(a).clone();
        let bias = self.value(b).data().to_vec();
        if sa[1] > 0 {
            for row in out.data_mut().chunks_mut(sa[1]) {
                for (o, bv) in row.iter_mut().zip(&bias) {
                    *o += bv;
                }
            }
        }
        Ok(self.push(out, Op::AddRow(a, b)))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|v| v * c).collect();
        let out = Tensor::from_vec(t.rows(), t.cols(), data).expect("same shape");
        self.push(out, Op::Scale(x, c))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(mismatch("hadamard", sa, sb));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let out = Tensor::from_vec(sa[0], sa[1], data)?;
        Ok(self.push(out, Op::Hadamard(a, b)))
    }

    /// Concatenates along `axis` (0 stacks rows, 1 joins columns).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, TapeError> {
        check_axis("concat", axis)?;
        let first = *parts.first().ok_or(TapeError::InvalidArgument {
            op: "concat",
            reason: "nothing to concatenate".into(),
        })?;
        let s0 = self.shape(first);
        for &p in &parts[1..] {
            let s = self.shape(p);
            if (axis == 1 && s[0] != s0[0]) || (axis == 0 && s[1] != s0[1]) {
                return Err(mismatch("concat", s0, s));
            }
        }
        let out = if axis == 0 {
            let rows: usize = parts.iter().map(|&p| self.shape(p)[0]).sum();
            let mut data = Vec::with_capacity(rows * s0[1]);
            for &p in parts {
                data.extend_from_slice(self.value(p).data());
            }
            Tensor::from_vec(rows, s0[1], data)?
        } else {
            let cols: usize = parts.iter().map(|&p| self.shape(p)[1]).sum();
            let mut data = Vec::with_capacity(s0[0] * cols);
            for r in 0..s0[0] {
                for &p in parts {
                    data.extend_from_slice(self.value(p).row_slice(r));
                }
            }
            Tensor::from_vec(s0[0], cols, data)?
        };
        Ok(self.push(
            out,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
        ))
    }

    /// Mean over `axis`: 0 collapses rows (result `1 x c`), 1 collapses
    /// columns (result `r x 1`).
    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var, TapeError> {
        check_axis("mean", axis)?;
        let t = self.value(x);
        let [r, c] = t.shape();
        let (count, len, at) = lanes(r, c, axis);
        if len == 0 {
            return Err(TapeError::InvalidArgument {
                op: "mean",
                reason: "mean over an empty axis".into(),
            });
        }
        let data: Vec<f64> = (0..count)
            .map(|lane| (0..len).map(|p| t.data()[at(lane, p)]).sum::<f64>() / len as f64)
            .collect();
        let out = if axis == 0 {
            Tensor::from_vec(1, c, data)?
        } else {
            Tensor::from_vec(r, 1, data)?
        };
        Ok(self.push(out, Op::Mean { x, axis }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| f(v)).collect();
        let out = Tensor::from_vec(t.rows(), t.cols(), data).expect("same shape");
        self.push(out, op)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    /// Softmax along `axis` (1 normalizes each row, 0 each column).
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var, TapeError> {
        check_axis("softmax", axis)?;
        let t = self.value(x);
        let [r, c] = t.shape();
        let mut out = Tensor::zeros(r, c);
        let (count, len, at) = lanes(r, c, axis);
        for lane in 0..count {
            let max = (0..len)
                .map(|p| t.data()[at(lane, p)])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for p in 0..len {
                let e = (t.data()[at(lane, p)] - max).exp();
                out.data_mut()[at(lane, p)] = e;
                z += e;
            }
            for p in 0..len {
                out.data_mut()[at(lane, p)] /= z;
            }
        }
        Ok(self.push(out, Op::Softmax { x, axis }))
    }

    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var, TapeError> {
        check_axis("log_softmax", axis)?;
        let t = self.value(x);
        let [r, c] = t.shape();
        let mut out = Tensor::zeros(r, c);
        let (count, len, at) = lanes(r, c, axis);
        for lane in 0..count {
            let max = (0..len)
                .map(|p| t.data()[at(lane, p)])
                .fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = (0..len).map(|p| (t.data()[at(lane, p)] - max).exp()).sum();
            let lse = max + z.ln();
            for p in 0..len {
                out.data_mut()[at(lane, p)] = t.data()[at(lane, p)] - lse;
            }
        }
        Ok(self.push(out, Op::LogSoftmax { x, axis }))
    }

    /// Row `r` of the result is row `index[r]` of `x`.
    pub fn gather_rows(&mut self, x: Var, index: &[usize]) -> Result<Var, TapeError> {
        let t = self.value(x);
        let [r, c] = t.shape();
        let mut data = Vec::with_capacity(index.len() * c);
        for &i in index {
            if i >= r {
                return Err(TapeError::InvalidArgument {
                    op: "gather_rows",
                    reason: format!("row {i} out of range for {r} rows"),
                });
            }
            data.extend_from_slice(t.row_slice(i));
        }
        let out = Tensor::from_vec(index.len(), c, data)?;
        Ok(self.push(
            out,
            Op::GatherRows {
                x,
                index: index.to_vec(),
            },
        ))
    }

    /// Row `t` of the `out_rows x c` result is the mean of the rows `r` of
    /// `x` with `target[r] == Some(t)`; rows with no contributors are zero.
    pub fn scatter_mean(
        &mut self,
        x: Var,
        target: &[Option<usize>],
        out_rows: usize,
    ) -> Result<Var, TapeError> {
        let t = self.value(x);
        let [r, c] = t.shape();
        if target.len() != r {
            return Err(mismatch("scatter_mean", [r, c], [target.len(), 1]));
        }
        let mut counts = vec![0usize; out_rows];
        let mut out = Tensor::zeros(out_rows, c);
        for (row, tgt) in target.iter().enumerate() {
            let Some(tgt) = *tgt else { continue };
            if tgt >= out_rows {
                return Err(TapeError::InvalidArgument {
                    op: "scatter_mean",
                    reason: format!("target {tgt} out of range for {out_rows} rows"),
                });
            }
            counts[tgt] += 1;
            let src = t.row_slice(row);
            for (o, s) in out.data_mut()[tgt * c..(tgt + 1) * c].iter_mut().zip(src) {
                *o += s;
            }
        }
        for (tgt, &n) in counts.iter().enumerate() {
            if n > 1 {
                for o in &mut out.data_mut()[tgt * c..(tgt + 1) * c] {
                    *o /= n as f64;
                }
            }
        }
        Ok(self.push(
            out,
            Op::ScatterMean {
                x,
                target: target.to_vec(),
                counts,
            },
        ))
    }

    /// The single element `(row, col)` as a `1 x 1` node.
    pub fn pick(&mut self, x: Var, row: usize, col: usize) -> Result<Var, TapeError> {
        let t = self.value(x);
        if row >= t.rows() || col >= t.cols() {
            return Err(TapeError::InvalidArgument {
                op: "pick",
                reason: format!("({row}, {col}) outside {:?}", t.shape()),
            });
        }
        let v = t.get(row, col);
        Ok(self.push(Tensor::scalar(v), Op::Pick { x, row, col }))
    }

    /// Per-column normalization followed by the affine map `gamma * xhat + beta`
    /// (`gamma`, `beta`: `1 x c`).
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: NormMode<'_>,
    ) -> Result<Var, TapeError> {
        let [r, c] = self.shape(x);
        for p in [gamma, beta] {
            if self.shape(p) != [1, c] {
                return Err(mismatch("batch_norm", [r, c], self.shape(p)));
            }
        }
        let t = self.value(x);
        let (mean, var, batch) = match mode {
            NormMode::Batch => {
                if r == 0 {
                    return Err(TapeError::InvalidArgument {
                        op: "batch_norm",
                        reason: "no rows to normalize over".into(),
                    });
                }
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for row in t.data().chunks(c) {
                    for (m, v) in mean.iter_mut().zip(row) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= r as f64);
                for row in t.data().chunks(c) {
                    for j in 0..c {
                        let d = row[j] - mean[j];
                        var[j] += d * d;
                    }
                }
                var.iter_mut().for_each(|v| *v /= r as f64);
                (mean, var, true)
            }
            NormMode::Fixed { mean, var } => {
                if mean.len() != c || var.len() != c {
                    return Err(mismatch("batch_norm stats", [r, c], [mean.len(), var.len()]));
                }
                (mean.to_vec(), var.to_vec(), false)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + NORM_EPS).sqrt()).collect();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![0.0; r * c];
        let mut out = Tensor::zeros(r, c);
        for i in 0..r {
            for j in 0..c {
                let k = i * c + j;
                xhat[k] = (t.data()[k] - mean[j]) * inv_std[j];
                out.data_mut()[k] = g[j] * xhat[k] + b[j];
            }
        }
        Ok(self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch,
                mean,
                var,
            },
        ))
    }

    /// Multi-head scaled dot-product attention on already projected inputs:
    /// `q: m x d`, `k, v: s x d`; the model dimension is split into `heads`
    /// contiguous column blocks and the per-head outputs are rejoined.
    pub fn multi_head_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
    ) -> Result<Var, TapeError> {
        let (sq, sk, sv) = (self.shape(q), self.shape(k), self.shape(v));
        if sq[1] != sk[1] {
            return Err(mismatch("attention query/key", sq, sk));
        }
        if sk != sv {
            return Err(mismatch("attention key/value", sk, sv));
        }
        if heads == 0 || sq[1] % heads != 0 {
            return Err(TapeError::InvalidArgument {
                op: "multi_head_attention",
                reason: format!("{heads} heads do not divide model dimension {}", sq[1]),
            });
        }
        if sk[0] == 0 {
            return Err(TapeError::InvalidArgument {
                op: "multi_head_attention",
                reason: "no keys to attend over".into(),
            });
        }
        let (m, s, d) = (sq[0], sk[0], sq[1]);
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut weights = vec![0.0; heads * m * s];
        let mut out = Tensor::zeros(m, d);
        for h in 0..heads {
            let o = h * dh;
            for i in 0..m {
                let w = &mut weights[(h * m + i) * s..(h * m + i + 1) * s];
                for j in 0..s {
                    let dot: f64 = (0..dh).map(|c| qd[i * d + o + c] * kd[j * d + o + c]).sum();
                    w[j] = dot * scale;
                }
                let max = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for x in w.iter_mut() {
                    *x = (*x - max).exp();
                    z += *x;
                }
                w.iter_mut().for_each(|x| *x /= z);
                for j in 0..s {
                    for c in 0..dh {
                        out.data_mut()[i * d + o + c] += w[j] * vd[j * d + o + c];
                    }
                }
            }
        }
        Ok(self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                weights,
            },
        ))
    }

    /// Single-head attention composed from elementary ops:
    /// `softmax(q k^T / sqrt(d)) v`.
    pub fn scaled_dot_attention(&mut self, q: Var, k: Var, v: Var) -> Result<Var, TapeError> {
        let d = self.shape(q)[1];
        if self.shape(k)[0] != self.shape(v)[0] {
            return Err(mismatch("attention key/value", self.shape(k), self.shape(v)));
        }
        let kt = self.transpose(k);
        let scores = self.matmul(q, kt)?;
        let scores = self.scale(scores, 1.0 / (d as f64).sqrt());
        let weights = self.softmax(scores, 1)?;
        self.matmul(weights, v)
    }

    /// Runs the reverse sweep from the scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<(), TapeError> {
        if self.consumed {
            return Err(TapeError::GraphConsumed);
        }
        let shape = self.shape(loss);
        if shape != [1, 1] {
            return Err(TapeError::NonScalarLoss(shape));
        }
        self.consumed = true;
        let Tape { nodes, grads, .. } = self;
        grads.clear();
        grads.resize(nodes.len(), None);
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            backprop(nodes, grads, i, &g);
            grads[i] = Some(g);
        }
        Ok(())
    }

    /// Gradients of every bound parameter after [`Tape::backward`]; entries of
    /// `store` that were never bound get zeros.
    pub fn param_grads(&self, store: &ParamStore) -> Grads {
        let mut out = Grads::zeros_like(store);
        for (id, var) in self.params.iter().enumerate() {
            let Some(var) = var else { continue };
            if let Some(Some(g)) = self.grads.get(var.0) {
                out.get_mut(ParamId(id)).data_mut().copy_from_slice(g);
            }
        }
        out
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn slot<'g>(grads: &'g mut [Option<Vec<f64>>], nodes: &[Node], v: Var) -> &'g mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()])
}

fn backprop(nodes: &[Node], grads: &mut [Option<Vec<f64>>], i: usize, g: &[f64]) {
    let node = &nodes[i];
    let y = node.value.data();
    let [rows, cols] = node.value.shape();
    match &node.op {
        Op::Leaf | Op::Param => {}
        Op::MatMul(a, b) => {
            let [m, k] = nodes[a.0].value.shape();
            let n = cols;
            let bv = nodes[b.0].value.data();
            let av = nodes[a.0].value.data();
            gemm_nt(g, bv, slot(grads, nodes, *a), m, n, k);
            gemm_tn(av, g, slot(grads, nodes, *b), m, k, n);
        }
        Op::Transpose(x) => {
            let dx = slot(grads, nodes, *x);
            // y is rows x cols, x is cols x rows
            for r in 0..rows {
                for c in 0..cols {
                    dx[c * rows + r] += g[r * cols + c];
                }
            }
        }
        Op::Linear { x, w, b } => {
            let [m, inp] = nodes[x.0].value.shape();
            let out = cols;
            let wv = nodes[w.0].value.data();
            let xv = nodes[x.0].value.data();
            gemm_nn(g, wv, slot(grads, nodes, *x), m, out, inp);
            gemm_tn(g, xv, slot(grads, nodes, *w), m, out, inp);
            if let Some(b) = b {
                let db = slot(grads, nodes, *b);
                for row in g.chunks(out) {
                    for (d, gv) in db.iter_mut().zip(row) {
                        *d += gv;
                    }
                }
            }
        }
        Op::Add(a, b) => {
            for v in [a, b] {
                let d = slot(grads, nodes, *v);
                for (dv, gv) in d.iter_mut().zip(g) {
                    *dv += gv;
                }
            }
        }
        Op::AddRow(a, b) => {
            let da = slot(grads, nodes, *a);
            for (dv, gv) in da.iter_mut().zip(g) {
                *dv += gv;
            }
            let db = slot(grads, nodes, *b);
            if cols > 0 {
                for row in g.chunks(cols) {
                    for (dv, gv) in db.iter_mut().zip(row) {
                        *dv += gv;
                    }
                }
            }
        }
        Op::Scale(x, c) => {
            let d = slot(grads, nodes, *x);
            for (dv, gv) in d.iter_mut().zip(g) {
                *dv += c * gv;
            }
        }
        Op::Hadamard(a, b) => {
            let bv = nodes[b.0].value.data();
            let da = slot(grads, nodes, *a);
            for ((dv, gv), o) in da.iter_mut().zip(g).zip(bv) {
                *dv += gv * o;
            }
            let av = nodes[a.0].value.data();
            let db = slot(grads, nodes, *b);
            for ((dv, gv), o) in db.iter_mut().zip(g).zip(av) {
                *dv += gv * o;
            }
        }
        Op::Concat { parts, axis } => {
            if *axis == 0 {
                let mut offset = 0;
                for p in parts {
                    let d = slot(grads, nodes, *p);
                    let len = d.len();
                    for (dv, gv) in d.iter_mut().zip(&g[offset..offset + len]) {
                        *dv += gv;
                    }
                    offset += len;
                }
            } else {
                let mut col0 = 0;
                for p in parts {
                    let pc = nodes[p.0].value.cols();
                    let d = slot(grads, nodes, *p);
                    for r in 0..rows {
                        for c in 0..pc {
                            d[r * pc + c] += g[r * cols + col0 + c];
                        }
                    }
                    col0 += pc;
                }
            }
        }
        Op::Mean { x, axis } => {
            let [xr, xc] = nodes[x.0].value.shape();
            let d = slot(grads, nodes, *x);
            for r in 0..xr {
                for c in 0..xc {
                    d[r * xc + c] += if *axis == 0 {
                        g[c] / xr as f64
                    } else {
                        g[r] / xc as f64
                    };
                }
            }
        }
        Op::Sum(x) => {
            let d = slot(grads, nodes, *x);
            d.iter_mut().for_each(|dv| *dv += g[0]);
        }
        Op::Relu(x) => {
            let xv = nodes[x.0].value.data();
            let d = slot(grads, nodes, *x);
            for ((dv, gv), xx) in d.iter_mut().zip(g).zip(xv) {
                if *xx > 0.0 {
                    *dv += gv;
                }
            }
        }
        Op::Sigmoid(x) => {
            let d = slot(grads, nodes, *x);
            for ((dv, gv), yy) in d.iter_mut().zip(g).zip(y) {
                *dv += gv * yy * (1.0 - yy);
            }
        }
        Op::Tanh(x) => {
            let d = slot(grads, nodes, *x);
            for ((dv, gv), yy) in d.iter_mut().zip(g).zip(y) {
                *dv += gv * (1.0 - yy * yy);
            }
        }
        Op::Softmax { x, axis } => {
            let (count, len, at) = lanes(rows, cols, *axis);
            let d = slot(grads, nodes, *x);
            for lane in 0..count {
                let dot: f64 = (0..len).map(|p| g[at(lane, p)] * y[at(lane, p)]).sum();
                for p in 0..len {
                    let k = at(lane, p);
                    d[k] += y[k] * (g[k] - dot);
                }
            }
        }
        Op::LogSoftmax { x, axis } => {
            let (count, len, at) = lanes(rows, cols, *axis);
            let d = slot(grads, nodes, *x);
            for lane in 0..count {
                let total: f64 = (0..len).map(|p| g[at(lane, p)]).sum();
                for p in 0..len {
                    let k = at(lane, p);
                    d[k] += g[k] - y[k].exp() * total;
                }
            }
        }
        Op::GatherRows { x, index } => {
            let d = slot(grads, nodes, *x);
            for (r, &src) in index.iter().enumerate() {
                for c in 0..cols {
                    d[src * cols + c] += g[r * cols + c];
                }
            }
        }
        Op::ScatterMean { x, target, counts } => {
            let d = slot(grads, nodes, *x);
            for (r, tgt) in target.iter().enumerate() {
                let Some(t) = *tgt else { continue };
                let n = counts[t] as f64;
                for c in 0..cols {
                    d[r * cols + c] += g[t * cols + c] / n;
                }
            }
        }
        Op::Pick { x, row, col } => {
            let xc = nodes[x.0].value.cols();
            slot(grads, nodes, *x)[row * xc + col] += g[0];
        }
        Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            batch,
            ..
        } => {
            let gm = nodes[gamma.0].value.data().to_vec();
            {
                let dg = slot(grads, nodes, *gamma);
                for r in 0..rows {
                    for c in 0..cols {
                        dg[c] += g[r * cols + c] * xhat[r * cols + c];
                    }
                }
            }
            {
                let db = slot(grads, nodes, *beta);
                for r in 0..rows {
                    for c in 0..cols {
                        db[c] += g[r * cols + c];
                    }
                }
            }
            let dx = slot(grads, nodes, *x);
            if *batch {
                let n = rows as f64;
                for c in 0..cols {
                    let mut sum_d = 0.0;
                    let mut sum_dx = 0.0;
                    for r in 0..rows {
                        let dxh = g[r * cols + c] * gm[c];
                        sum_d += dxh;
                        sum_dx += dxh * xhat[r * cols + c];
                    }
                    for r in 0..rows {
                        let k = r * cols + c;
                        let dxh = g[k] * gm[c];
                        dx[k] += inv_std[c] / n * (n * dxh - sum_d - xhat[k] * sum_dx);
                    }
                }
            } else {
                for r in 0..rows {
                    for c in 0..cols {
                        let k = r * cols + c;
                        dx[k] += g[k] * gm[c] * inv_std[c];
                    }
                }
            }
        }
        Op::Attention {
            q,
            k,
            v,
            heads,
            weights,
        } => {
            let (m, d) = (rows, cols);
            let s = nodes[k.0].value.rows();
            let dh = d / heads;
            let scale = 1.0 / (dh as f64).sqrt();
            let (qd, kd, vd) = (
                nodes[q.0].value.data(),
                nodes[k.0].value.data(),
                nodes[v.0].value.data(),
            );
            let mut dq = vec![0.0; m * d];
            let mut dk = vec![0.0; s * d];
            let mut dv = vec![0.0; s * d];
            let mut da = vec![0.0; s];
            for h in 0..*heads {
                let o = h * dh;
                for i in 0..m {
                    let w = &weights[(h * m + i) * s..(h * m + i + 1) * s];
                    for j in 0..s {
                        da[j] = (0..dh).map(|c| g[i * d + o + c] * vd[j * d + o + c]).sum();
                        for c in 0..dh {
                            dv[j * d + o + c] += w[j] * g[i * d + o + c];
                        }
                    }
                    let dot: f64 = w.iter().zip(&da).map(|(a, b)| a * b).sum();
                    for j in 0..s {
                        let ds = w[j] * (da[j] - dot) * scale;
                        for c in 0..dh {
                            dq[i * d + o + c] += ds * kd[j * d + o + c];
                            dk[j * d + o + c] += ds * qd[i * d + o + c];
                        }
                    }
                }
            }
            for (var, src) in [(q, dq), (k, dk), (v, dv)] {
                let dst = slot(grads, nodes, *var);
                for (a, b) in dst.iter_mut().zip(&src) {
                    *a += b;
                }
            }
        }
    }
}
