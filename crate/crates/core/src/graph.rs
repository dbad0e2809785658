//! Domain-relational graphs: one two-layer graph attention network per
//! student layer, over the D domain nodes of a complete graph (self-loops
//! included), emitting a probability row of domain-relational ratios.
//!
//! First layer: K attention heads with per-head transform `W_k` and scoring
//! vector `a_k`; scores pass LeakyReLU then a row softmax; per-head node
//! outputs are ELU of the attention-weighted transformed neighbors,
//! concatenated across heads. Second layer: single-head with `W'` collapsing
//! to one channel and `a'` of length 2, followed by ELU and a softmax across
//! the D node scores.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::params::{ParamInit, ParamSet};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Negative slope of the LeakyReLU in attention scoring (GAT convention).
pub const LEAKY_SLOPE: f64 = 0.2;

/// Tolerance on each ratio row's sum.
pub const RATIO_ROW_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct GraphConfig {
    /// Number of per-layer graphs (student layers plus one for embeddings).
    pub layers: usize,
    /// Prototype width F.
    pub in_dim: usize,
    /// Intermediate width F' of the first GAT layer.
    pub hidden_dim: usize,
    /// Head count K of the first GAT layer.
    pub heads: usize,
}

impl GraphConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.in_dim == 0 || self.hidden_dim == 0 || self.heads == 0 {
            return Err(CoreError::Config("graph extents must be positive".into()));
        }
        Ok(())
    }
}

pub(crate) fn glorot(fan_in: usize, fan_out: usize) -> f64 {
    libm::sqrt(2.0 / (fan_in + fan_out) as f64)
}

/// Appends all graph parameters in the fixed order [`bind`] consumes.
pub fn append_params(ps: &mut ParamSet, init: &mut ParamInit, cfg: &GraphConfig) -> Result<()> {
    cfg.validate()?;
    let f = cfg.in_dim;
    let fp = cfg.hidden_dim;
    for m in 0..cfg.layers {
        for k in 0..cfg.heads {
            ps.push(
                alloc::format!("graph{m}.l1.h{k}.w"),
                init.normal_tensor(vec![fp, f], glorot(f, fp)),
            )?;
            ps.push(
                alloc::format!("graph{m}.l1.h{k}.a"),
                init.normal_tensor(vec![2 * fp], glorot(2 * fp, 1)),
            )?;
        }
        ps.push(
            alloc::format!("graph{m}.l2.w"),
            init.normal_tensor(vec![1, cfg.heads * fp], glorot(cfg.heads * fp, 1)),
        )?;
        ps.push(
            alloc::format!("graph{m}.l2.a"),
            init.normal_tensor(vec![2], glorot(2, 1)),
        )?;
    }
    Ok(())
}

/// Tape handles for one per-layer graph.
#[derive(Debug, Clone)]
pub struct BoundGraphLayer {
    pub head_w: Vec<Var>,
    pub head_a: Vec<Var>,
    pub w2: Var,
    pub a2: Var,
}

pub fn bind(vars: &[Var], cursor: &mut usize, cfg: &GraphConfig) -> Vec<BoundGraphLayer> {
    let mut next = || {
        let v = vars[*cursor];
        *cursor += 1;
        v
    };
    (0..cfg.layers)
        .map(|_| {
            let mut head_w = Vec::with_capacity(cfg.heads);
            let mut head_a = Vec::with_capacity(cfg.heads);
            for _ in 0..cfg.heads {
                head_w.push(next());
                head_a.push(next());
            }
            BoundGraphLayer {
                head_w,
                head_a,
                w2: next(),
                a2: next(),
            }
        })
        .collect()
}

fn require_finite(tape: &Tape, v: Var, what: &str) -> Result<()> {
    if !tape.value(v).all_finite() {
        return Err(CoreError::Contract(alloc::format!(
            "{what} contains non-finite values"
        )));
    }
    Ok(())
}

/// Pairwise score matrix `s[i][j] = u[i] + v[j]` from column vectors `u`, `v`.
fn pairwise_sum(tape: &mut Tape, u: Var, v: Var, d: usize) -> Result<Var> {
    let ones_row = tape.constant(Tensor::row(vec![1.0; d]));
    let ones_col = tape.constant(Tensor::col(vec![1.0; d]));
    let left = tape.matmul(u, ones_row)?;
    let vt = tape.transpose(v)?;
    let right = tape.matmul(ones_col, vt)?;
    tape.add(left, right)
}

#[derive(Debug, Clone)]
pub struct GatFirstOutput {
    /// Node features after head concatenation, `[D x K*F']`.
    pub features: Var,
    /// Attention coefficients per head, each `[D x D]` with rows summing to 1.
    pub attn: Vec<Var>,
}

/// First GAT layer over the complete domain graph.
pub fn gat_first_layer(
    tape: &mut Tape,
    inputs: Var,
    head_w: &[Var],
    head_a: &[Var],
) -> Result<GatFirstOutput> {
    require_finite(tape, inputs, "gat_first_layer inputs")?;
    if head_w.is_empty() || head_w.len() != head_a.len() {
        return Err(CoreError::Config(alloc::format!(
            "graph layer has {} transforms and {} scoring vectors",
            head_w.len(),
            head_a.len()
        )));
    }
    let (d, _f) = tape.value(inputs).dims2()?;
    let mut attn = Vec::with_capacity(head_w.len());
    let mut outputs = Vec::with_capacity(head_w.len());
    for (&w, &a) in head_w.iter().zip(head_a) {
        let (fp, _) = tape.value(w).dims2()?;
        let wt = tape.transpose(w)?;
        let transformed = tape.matmul(inputs, wt)?; // [D x F']
        let a_col = tape.reshape(a, vec![2 * fp, 1])?;
        let a_self = tape.slice_rows(a_col, 0, fp)?;
        let a_neigh = tape.slice_rows(a_col, fp, 2 * fp)?;
        let u = tape.matmul(transformed, a_self)?; // [D x 1]
        let v = tape.matmul(transformed, a_neigh)?; // [D x 1]
        let scores = pairwise_sum(tape, u, v, d)?;
        let scores = tape.leaky_relu(scores, LEAKY_SLOPE)?;
        let alpha = tape.softmax(scores, 1)?;
        let mixed = tape.matmul(alpha, transformed)?;
        outputs.push(tape.elu(mixed)?);
        attn.push(alpha);
    }
    let features = tape.concat_cols(&outputs)?;
    Ok(GatFirstOutput { features, attn })
}

#[derive(Debug, Clone)]
pub struct GatSecondOutput {
    /// Domain-relational ratio row `[1 x D]`, positive, summing to 1.
    pub ratios: Var,
    /// Attention coefficients `[D x D]`.
    pub attn: Var,
}

/// Second GAT layer: single head, scalar channel, softmax-normalized output.
pub fn gat_second_layer(tape: &mut Tape, features: Var, w2: Var, a2: Var) -> Result<GatSecondOutput> {
    require_finite(tape, features, "gat_second_layer inputs")?;
    let (d, _) = tape.value(features).dims2()?;
    let w2t = tape.transpose(w2)?;
    let channel = tape.matmul(features, w2t)?; // [D x 1]
    let a_col = tape.reshape(a2, vec![2, 1])?;
    let a_self = tape.slice_rows(a_col, 0, 1)?;
    let a_neigh = tape.slice_rows(a_col, 1, 2)?;
    let u = tape.matmul(channel, a_self)?;
    let v = tape.matmul(channel, a_neigh)?;
    let scores = pairwise_sum(tape, u, v, d)?;
    let scores = tape.leaky_relu(scores, LEAKY_SLOPE)?;
    let alpha = tape.softmax(scores, 1)?;
    let mixed = tape.matmul(alpha, channel)?; // [D x 1]
    let node_scores = tape.elu(mixed)?;
    let normalized = tape.softmax(node_scores, 0)?;
    let ratios = tape.transpose(normalized)?;
    Ok(GatSecondOutput { ratios, attn: alpha })
}

#[derive(Debug, Clone)]
pub struct RatioOutputs {
    /// One `[1 x D]` ratio row per layer.
    pub rows: Vec<Var>,
    /// First-layer attention per layer and head.
    pub first_attn: Vec<Vec<Var>>,
    /// Second-layer attention per layer.
    pub second_attn: Vec<Var>,
}

/// Runs every per-layer graph over its `[D x F]` input.
pub fn compute_ratios(
    tape: &mut Tape,
    inputs: &[Var],
    layers: &[BoundGraphLayer],
) -> Result<RatioOutputs> {
    if inputs.len() != layers.len() {
        return Err(CoreError::Config(alloc::format!(
            "{} graph inputs for {} per-layer graphs",
            inputs.len(),
            layers.len()
        )));
    }
    let mut rows = Vec::with_capacity(inputs.len());
    let mut first_attn = Vec::with_capacity(inputs.len());
    let mut second_attn = Vec::with_capacity(inputs.len());
    for (&input, layer) in inputs.iter().zip(layers) {
        let first = gat_first_layer(tape, input, &layer.head_w, &layer.head_a)?;
        let second = gat_second_layer(tape, first.features, layer.w2, layer.a2)?;
        rows.push(second.ratios);
        first_attn.push(first.attn);
        second_attn.push(second.attn);
    }
    Ok(RatioOutputs {
        rows,
        first_attn,
        second_attn,
    })
}

/// Plain-value ratio matrix `r[m][d]`, validated on construction: entries
/// positive, each row summing to 1 within [`RATIO_ROW_TOL`].
#[derive(Debug, Clone, PartialEq)]
pub struct RatioMatrix {
    pub rows: Vec<Vec<f64>>,
}

impl RatioMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        for (m, row) in rows.iter().enumerate() {
            if row.is_empty() {
                return Err(CoreError::Contract(alloc::format!("ratio row {m} is empty")));
            }
            if row.iter().any(|&r| !(r > 0.0)) {
                return Err(CoreError::Contract(alloc::format!(
                    "ratio row {m} has a non-positive entry"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > RATIO_ROW_TOL {
                return Err(CoreError::Contract(alloc::format!(
                    "ratio row {m} sums to {sum}"
                )));
            }
        }
        Ok(RatioMatrix { rows })
    }

    pub fn uniform(layers: usize, domains: usize) -> Self {
        RatioMatrix {
            rows: vec![vec![1.0 / domains as f64; domains]; layers],
        }
    }

    pub fn from_tape(tape: &Tape, rows: &[Var]) -> Result<Self> {
        RatioMatrix::new(rows.iter().map(|&r| tape.data(r).to_vec()).collect())
    }
}
