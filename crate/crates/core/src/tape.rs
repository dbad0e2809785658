//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every primitive as it executes. Nodes are appended in
//! execution order, so the record is already topologically sorted and
//! [`Tape::backward`] is a single reverse sweep that visits each node exactly
//! once. One tape lives for one training step and is dropped afterwards.
//!
//! Gradients only flow where they are needed: a node participates in the
//! backward sweep iff one of its ancestors is a leaf created with
//! `requires_grad = true`. Constant subgraphs (e.g. frozen teacher activations)
//! cost nothing at backward time.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`]. Only valid for the tape that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul { a: usize, b: usize },
    Transpose { x: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    AddRow { x: usize, row: usize },
    Scale { x: usize, c: f64 },
    SumAll { x: usize },
    MeanAll { x: usize },
    MeanRows { x: usize },
    Softmax { x: usize, axis: usize },
    LogSoftmax { x: usize, axis: usize },
    LeakyRelu { x: usize, slope: f64 },
    Elu { x: usize },
    Gelu { x: usize },
    LayerNorm { x: usize, gamma: usize, beta: usize, eps: f64 },
    Gather { table: usize, ids: Vec<usize> },
    ConcatRows { parts: Vec<usize> },
    ConcatCols { parts: Vec<usize> },
    SliceRows { x: usize, start: usize },
    Reshape { x: usize },
    Detach,
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Ordered record of primitive operations, with their values and gradients.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// `a [m x k] * b [k x n] -> [m x n]`, row-major.
fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
    c
}

/// `a [m x n] * b^T` where `b` is `[k x n]` row-major; output `[m x k]`.
fn matmul_nt_raw(a: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * k];
    for i in 0..m {
        let a_row = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let b_row = &b[p * n..(p + 1) * n];
            let mut s = 0.0;
            for (&av, &bv) in a_row.iter().zip(b_row) {
                s += av * bv;
            }
            c[i * k + p] = s;
        }
    }
    c
}

/// `a^T * b` where `a` is `[m x k]`, `b` is `[m x n]`; output `[k x n]`.
fn matmul_tn_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; k * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            let c_row = &mut c[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
    c
}

fn gelu_value(x: f64) -> f64 {
    let c = libm::sqrt(2.0 / core::f64::consts::PI);
    0.5 * x * (1.0 + libm::tanh(c * (x + 0.044715 * x * x * x)))
}

fn gelu_derivative(x: f64) -> f64 {
    let c = libm::sqrt(2.0 / core::f64::consts::PI);
    let inner = c * (x + 0.044715 * x * x * x);
    let t = libm::tanh(inner);
    let sech2 = 1.0 - t * t;
    let d_inner = c * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * sech2 * d_inner
}

/// Decomposes `shape` around `axis` into `(outer, axis_len, inner)` so that
/// element `(o, a, i)` sits at flat index `(o * axis_len + a) * inner + i`.
fn axis_split(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(CoreError::Domain(alloc::format!(
            "axis {axis} out of range for shape {shape:?}"
        )));
    }
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a leaf tensor. Gradients are tracked iff `requires_grad`.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Records a constant (a leaf that never receives gradients).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.constant(Tensor::scalar(v))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn data(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value.data
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    /// Value of a single-element tensor.
    pub fn scalar_value(&self, v: Var) -> Result<f64> {
        let t = self.value(v);
        if !t.is_scalar() {
            return Err(CoreError::Contract(alloc::format!(
                "expected a scalar, got shape {:?}",
                t.shape
            )));
        }
        Ok(t.data[0])
    }

    /// Gradient populated by [`Tape::backward`], if any flowed to this node.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    // ── forward primitives ──────────────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2()?;
        let (k2, n) = self.value(b).dims2()?;
        if k != k2 {
            return Err(CoreError::Dim {
                op: "matmul",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let data = matmul_raw(&self.nodes[a.0].value.data, &self.nodes[b.0].value.data, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            Tensor::new(vec![m, n], data)?,
            Op::MatMul { a: a.0, b: b.0 },
            rg,
        ))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        let src = &self.nodes[x.0].value.data;
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = src[i * c + j];
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![c, r], data)?, Op::Transpose { x: x.0 }, rg))
    }

    fn zip_same_shape(&mut self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(CoreError::Dim {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same_shape("add", a, b)?;
        let data: Vec<f64> = self.nodes[a.0]
            .value
            .data
            .iter()
            .zip(&self.nodes[b.0].value.data)
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(shape, data)?, Op::Add { a: a.0, b: b.0 }, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same_shape("sub", a, b)?;
        let data: Vec<f64> = self.nodes[a.0]
            .value
            .data
            .iter()
            .zip(&self.nodes[b.0].value.data)
            .map(|(x, y)| x - y)
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(shape, data)?, Op::Sub { a: a.0, b: b.0 }, rg))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same_shape("mul", a, b)?;
        let data: Vec<f64> = self.nodes[a.0]
            .value
            .data
            .iter()
            .zip(&self.nodes[b.0].value.data)
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(shape, data)?, Op::Mul { a: a.0, b: b.0 }, rg))
    }

    /// Adds a length-`c` row vector to every row of a `[r x c]` matrix.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        if self.value(row).len() != c {
            return Err(CoreError::Dim {
                op: "add_row",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(row).to_vec(),
            });
        }
        let mut data = self.nodes[x.0].value.data.clone();
        let rv = &self.nodes[row.0].value.data;
        for i in 0..r {
            for j in 0..c {
                data[i * c + j] += rv[j];
            }
        }
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x) || self.rg(row);
        Ok(self.push(
            Tensor::new(shape, data)?,
            Op::AddRow { x: x.0, row: row.0 },
            rg,
        ))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let data: Vec<f64> = self.nodes[x.0].value.data.iter().map(|v| v * c).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, data)?, Op::Scale { x: x.0, c }, rg))
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let s: f64 = self.nodes[x.0].value.data.iter().sum();
        let rg = self.rg(x);
        Ok(self.push(Tensor::scalar(s), Op::SumAll { x: x.0 }, rg))
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len() as f64;
        let s: f64 = self.nodes[x.0].value.data.iter().sum();
        let rg = self.rg(x);
        Ok(self.push(Tensor::scalar(s / n), Op::MeanAll { x: x.0 }, rg))
    }

    /// Column means of a `[r x c]` matrix: output `[1 x c]`, each entry the
    /// ordered sum down the column divided by `r`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        let src = &self.nodes[x.0].value.data;
        let mut out = vec![0.0; c];
        for i in 0..r {
            for j in 0..c {
                out[j] += src[i * c + j];
            }
        }
        for v in out.iter_mut() {
            *v /= r as f64;
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![1, c], out)?, Op::MeanRows { x: x.0 }, rg))
    }

    /// Softmax along `axis`, computed with max-subtraction.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (outer, alen, inner) = axis_split(&shape, axis)?;
        let src = &self.nodes[x.0].value.data;
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |a: usize| (o * alen + a) * inner + i;
                let mut mx = f64::NEG_INFINITY;
                for a in 0..alen {
                    mx = mx.max(src[at(a)]);
                }
                let mut denom = 0.0;
                for a in 0..alen {
                    let e = libm::exp(src[at(a)] - mx);
                    out[at(a)] = e;
                    denom += e;
                }
                for a in 0..alen {
                    out[at(a)] /= denom;
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::Softmax { x: x.0, axis }, rg))
    }

    /// Log-softmax along `axis`: `x - max - ln(sum(exp(x - max)))`.
    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (outer, alen, inner) = axis_split(&shape, axis)?;
        let src = &self.nodes[x.0].value.data;
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |a: usize| (o * alen + a) * inner + i;
                let mut mx = f64::NEG_INFINITY;
                for a in 0..alen {
                    mx = mx.max(src[at(a)]);
                }
                let mut denom = 0.0;
                for a in 0..alen {
                    denom += libm::exp(src[at(a)] - mx);
                }
                let lse = mx + libm::log(denom);
                for a in 0..alen {
                    out[at(a)] = src[at(a)] - lse;
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::LogSoftmax { x: x.0, axis },
            rg,
        ))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        if !(slope > 0.0 && slope < 1.0) {
            return Err(CoreError::Domain(alloc::format!(
                "leaky_relu slope must lie in (0, 1), got {slope}"
            )));
        }
        let data: Vec<f64> = self.nodes[x.0]
            .value
            .data
            .iter()
            .map(|&v| if v >= 0.0 { v } else { slope * v })
            .collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(shape, data)?,
            Op::LeakyRelu { x: x.0, slope },
            rg,
        ))
    }

    pub fn elu(&mut self, x: Var) -> Result<Var> {
        let data: Vec<f64> = self.nodes[x.0]
            .value
            .data
            .iter()
            .map(|&v| if v >= 0.0 { v } else { libm::exp(v) - 1.0 })
            .collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, data)?, Op::Elu { x: x.0 }, rg))
    }

    /// GELU with the tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let data: Vec<f64> = self.nodes[x.0].value.data.iter().map(|&v| gelu_value(v)).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, data)?, Op::Gelu { x: x.0 }, rg))
    }

    /// Layer normalization over the last dimension of a 2-D tensor.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        if self.value(gamma).len() != c || self.value(beta).len() != c {
            return Err(CoreError::Dim {
                op: "layer_norm",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(gamma).to_vec(),
            });
        }
        let src = &self.nodes[x.0].value.data;
        let g = &self.nodes[gamma.0].value.data;
        let b = &self.nodes[beta.0].value.data;
        let mut out = vec![0.0; src.len()];
        for i in 0..r {
            let row = &src[i * c..(i + 1) * c];
            let mean: f64 = row.iter().sum::<f64>() / c as f64;
            let var: f64 = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv_std = 1.0 / libm::sqrt(var + eps);
            for j in 0..c {
                out[i * c + j] = (row[j] - mean) * inv_std * g[j] + b[j];
            }
        }
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::LayerNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                eps,
            },
            rg,
        ))
    }

    /// Row lookup: output row `i` is row `ids[i]` of `table`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, h) = self.value(table).dims2()?;
        if let Some(&bad) = ids.iter().find(|&&id| id >= v) {
            return Err(CoreError::Domain(alloc::format!(
                "gather index {bad} out of range for table with {v} rows"
            )));
        }
        let src = &self.nodes[table.0].value.data;
        let mut out = Vec::with_capacity(ids.len() * h);
        for &id in ids {
            out.extend_from_slice(&src[id * h..(id + 1) * h]);
        }
        let rg = self.rg(table);
        Ok(self.push(
            Tensor::new(vec![ids.len(), h], out)?,
            Op::Gather {
                table: table.0,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Vertical concatenation of 2-D tensors sharing a column count.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(CoreError::Contract("concat_rows of zero tensors".into()));
        }
        let (_, c) = self.value(parts[0]).dims2()?;
        let mut rows = 0;
        let mut data = Vec::new();
        let mut rg = false;
        for &p in parts {
            let (r, pc) = self.value(p).dims2()?;
            if pc != c {
                return Err(CoreError::Dim {
                    op: "concat_rows",
                    lhs: self.shape(parts[0]).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
            rows += r;
            data.extend_from_slice(&self.nodes[p.0].value.data);
            rg |= self.rg(p);
        }
        Ok(self.push(
            Tensor::new(vec![rows, c], data)?,
            Op::ConcatRows {
                parts: parts.iter().map(|v| v.0).collect(),
            },
            rg,
        ))
    }

    /// Horizontal concatenation of 2-D tensors sharing a row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(CoreError::Contract("concat_cols of zero tensors".into()));
        }
        let (r, _) = self.value(parts[0]).dims2()?;
        let mut widths = Vec::with_capacity(parts.len());
        let mut rg = false;
        for &p in parts {
            let (pr, pc) = self.value(p).dims2()?;
            if pr != r {
                return Err(CoreError::Dim {
                    op: "concat_cols",
                    lhs: self.shape(parts[0]).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
            widths.push(pc);
            rg |= self.rg(p);
        }
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; r * total];
        let mut col0 = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = &self.nodes[p.0].value.data;
            for i in 0..r {
                data[i * total + col0..i * total + col0 + w]
                    .copy_from_slice(&src[i * w..(i + 1) * w]);
            }
            col0 += w;
        }
        Ok(self.push(
            Tensor::new(vec![r, total], data)?,
            Op::ConcatCols {
                parts: parts.iter().map(|v| v.0).collect(),
            },
            rg,
        ))
    }

    /// Rows `start..end` of a 2-D tensor.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        if start >= end || end > r {
            return Err(CoreError::Domain(alloc::format!(
                "slice_rows {start}..{end} out of range for {r} rows"
            )));
        }
        let data = self.nodes[x.0].value.data[start * c..end * c].to_vec();
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(vec![end - start, c], data)?,
            Op::SliceRows { x: x.0, start },
            rg,
        ))
    }

    /// Reinterprets the value buffer under a new shape of the same length.
    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.value(x).len() {
            return Err(CoreError::Dim {
                op: "reshape",
                lhs: self.shape(x).to_vec(),
                rhs: shape,
            });
        }
        let data = self.nodes[x.0].value.data.clone();
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, data)?, Op::Reshape { x: x.0 }, rg))
    }

    /// Copies the value and severs the gradient link.
    pub fn detach(&mut self, x: Var) -> Var {
        let value = self.nodes[x.0].value.clone();
        self.push(value, Op::Detach, false)
    }

    // ── backward ────────────────────────────────────────────────────────

    fn acc(&mut self, idx: usize, contribution: &[f64]) {
        if !self.nodes[idx].requires_grad {
            return;
        }
        let n = self.nodes[idx].value.len();
        let grad = self.nodes[idx].grad.get_or_insert_with(|| vec![0.0; n]);
        for (g, &c) in grad.iter_mut().zip(contribution) {
            *g += c;
        }
    }

    /// Reverse sweep from a scalar loss. Populates `grad` on every
    /// `requires_grad` ancestor of `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(CoreError::Contract(alloc::format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad || self.nodes[i].grad.is_none() {
                continue;
            }
            let grad = self.nodes[i].grad.clone().expect("grad present");
            let op = self.nodes[i].op.clone();
            match op {
                Op::Leaf | Op::Detach => {}

                Op::MatMul { a, b } => {
                    let (m, k) = self.nodes[a].value.dims2()?;
                    let n = self.nodes[i].value.shape[1];
                    if self.nodes[a].requires_grad {
                        let da = matmul_nt_raw(&grad, &self.nodes[b].value.data, m, n, k);
                        self.acc(a, &da);
                    }
                    if self.nodes[b].requires_grad {
                        let db = matmul_tn_raw(&self.nodes[a].value.data, &grad, m, k, n);
                        self.acc(b, &db);
                    }
                }

                Op::Transpose { x } => {
                    let (c, r) = self.nodes[i].value.dims2()?;
                    let mut dx = vec![0.0; grad.len()];
                    for j in 0..c {
                        for p in 0..r {
                            dx[p * c + j] = grad[j * r + p];
                        }
                    }
                    self.acc(x, &dx);
                }

                Op::Add { a, b } => {
                    self.acc(a, &grad);
                    self.acc(b, &grad);
                }

                Op::Sub { a, b } => {
                    self.acc(a, &grad);
                    let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
                    self.acc(b, &neg);
                }

                Op::Mul { a, b } => {
                    if self.nodes[a].requires_grad {
                        let da: Vec<f64> = grad
                            .iter()
                            .zip(&self.nodes[b].value.data)
                            .map(|(g, v)| g * v)
                            .collect();
                        self.acc(a, &da);
                    }
                    if self.nodes[b].requires_grad {
                        let db: Vec<f64> = grad
                            .iter()
                            .zip(&self.nodes[a].value.data)
                            .map(|(g, v)| g * v)
                            .collect();
                        self.acc(b, &db);
                    }
                }

                Op::AddRow { x, row } => {
                    self.acc(x, &grad);
                    if self.nodes[row].requires_grad {
                        let (r, c) = self.nodes[x].value.dims2()?;
                        let mut dr = vec![0.0; c];
                        for p in 0..r {
                            for j in 0..c {
                                dr[j] += grad[p * c + j];
                            }
                        }
                        self.acc(row, &dr);
                    }
                }

                Op::Scale { x, c } => {
                    let dx: Vec<f64> = grad.iter().map(|g| g * c).collect();
                    self.acc(x, &dx);
                }

                Op::SumAll { x } => {
                    let n = self.nodes[x].value.len();
                    let dx = vec![grad[0]; n];
                    self.acc(x, &dx);
                }

                Op::MeanAll { x } => {
                    let n = self.nodes[x].value.len();
                    let dx = vec![grad[0] / n as f64; n];
                    self.acc(x, &dx);
                }

                Op::MeanRows { x } => {
                    let (r, c) = self.nodes[x].value.dims2()?;
                    let mut dx = vec![0.0; r * c];
                    for p in 0..r {
                        for j in 0..c {
                            dx[p * c + j] = grad[j] / r as f64;
                        }
                    }
                    self.acc(x, &dx);
                }

                Op::Softmax { x, axis } => {
                    // dx = s * (g - sum(g * s)) per axis slice
                    let shape = self.nodes[i].value.shape.clone();
                    let (outer, alen, inner) = axis_split(&shape, axis)?;
                    let s = &self.nodes[i].value.data;
                    let mut dx = vec![0.0; s.len()];
                    for o in 0..outer {
                        for ii in 0..inner {
                            let at = |a: usize| (o * alen + a) * inner + ii;
                            let mut dot = 0.0;
                            for a in 0..alen {
                                dot += grad[at(a)] * s[at(a)];
                            }
                            for a in 0..alen {
                                dx[at(a)] = s[at(a)] * (grad[at(a)] - dot);
                            }
                        }
                    }
                    self.acc(x, &dx);
                }

                Op::LogSoftmax { x, axis } => {
                    // dx = g - exp(out) * sum(g) per axis slice
                    let shape = self.nodes[i].value.shape.clone();
                    let (outer, alen, inner) = axis_split(&shape, axis)?;
                    let out = &self.nodes[i].value.data;
                    let mut dx = vec![0.0; out.len()];
                    for o in 0..outer {
                        for ii in 0..inner {
                            let at = |a: usize| (o * alen + a) * inner + ii;
                            let mut gsum = 0.0;
                            for a in 0..alen {
                                gsum += grad[at(a)];
                            }
                            for a in 0..alen {
                                dx[at(a)] = grad[at(a)] - libm::exp(out[at(a)]) * gsum;
                            }
                        }
                    }
                    self.acc(x, &dx);
                }

                Op::LeakyRelu { x, slope } => {
                    let dx: Vec<f64> = grad
                        .iter()
                        .zip(&self.nodes[x].value.data)
                        .map(|(g, &v)| if v >= 0.0 { *g } else { g * slope })
                        .collect();
                    self.acc(x, &dx);
                }

                Op::Elu { x } => {
                    let dx: Vec<f64> = grad
                        .iter()
                        .zip(&self.nodes[x].value.data)
                        .map(|(g, &v)| if v >= 0.0 { *g } else { g * libm::exp(v) })
                        .collect();
                    self.acc(x, &dx);
                }

                Op::Gelu { x } => {
                    let dx: Vec<f64> = grad
                        .iter()
                        .zip(&self.nodes[x].value.data)
                        .map(|(g, &v)| g * gelu_derivative(v))
                        .collect();
                    self.acc(x, &dx);
                }

                Op::LayerNorm { x, gamma, beta, eps } => {
                    let (r, c) = self.nodes[x].value.dims2()?;
                    let src = self.nodes[x].value.data.clone();
                    let g = self.nodes[gamma].value.data.clone();
                    let mut dx = vec![0.0; r * c];
                    let mut dgamma = vec![0.0; c];
                    let mut dbeta = vec![0.0; c];
                    for p in 0..r {
                        let row = &src[p * c..(p + 1) * c];
                        let go = &grad[p * c..(p + 1) * c];
                        let mean: f64 = row.iter().sum::<f64>() / c as f64;
                        let var: f64 =
                            row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
                        let inv_std = 1.0 / libm::sqrt(var + eps);
                        let xhat: Vec<f64> = row.iter().map(|&v| (v - mean) * inv_std).collect();
                        let mut dxhat = vec![0.0; c];
                        for j in 0..c {
                            dgamma[j] += go[j] * xhat[j];
                            dbeta[j] += go[j];
                            dxhat[j] = go[j] * g[j];
                        }
                        let dxhat_sum: f64 = dxhat.iter().sum();
                        let dxhat_dot: f64 = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum();
                        let cf = c as f64;
                        for j in 0..c {
                            dx[p * c + j] =
                                inv_std / cf * (cf * dxhat[j] - dxhat_sum - xhat[j] * dxhat_dot);
                        }
                    }
                    self.acc(x, &dx);
                    self.acc(gamma, &dgamma);
                    self.acc(beta, &dbeta);
                }

                Op::Gather { table, ids } => {
                    if self.nodes[table].requires_grad {
                        let h = self.nodes[table].value.shape[1];
                        let n = self.nodes[table].value.len();
                        let mut dt = vec![0.0; n];
                        for (p, &id) in ids.iter().enumerate() {
                            for j in 0..h {
                                dt[id * h + j] += grad[p * h + j];
                            }
                        }
                        self.acc(table, &dt);
                    }
                }

                Op::ConcatRows { parts } => {
                    let mut offset = 0;
                    for p in parts {
                        let n = self.nodes[p].value.len();
                        let piece = grad[offset..offset + n].to_vec();
                        self.acc(p, &piece);
                        offset += n;
                    }
                }

                Op::ConcatCols { parts } => {
                    let (r, total) = self.nodes[i].value.dims2()?;
                    let mut col0 = 0;
                    for p in parts {
                        let (_, w) = self.nodes[p].value.dims2()?;
                        let mut dp = vec![0.0; r * w];
                        for pr in 0..r {
                            dp[pr * w..(pr + 1) * w]
                                .copy_from_slice(&grad[pr * total + col0..pr * total + col0 + w]);
                        }
                        self.acc(p, &dp);
                        col0 += w;
                    }
                }

                Op::SliceRows { x, start } => {
                    let (_, c) = self.nodes[x].value.dims2()?;
                    let n = self.nodes[x].value.len();
                    let mut dx = vec![0.0; n];
                    dx[start * c..start * c + grad.len()].copy_from_slice(&grad);
                    self.acc(x, &dx);
                }

                Op::Reshape { x } => {
                    self.acc(x, &grad);
                }
            }
        }
        Ok(())
    }
}
