//! Distillation losses and the two total objectives.
//!
//! Four component losses bridge student and teacher activations: embedding
//! MSE behind a learnable projection, softened prediction cross-entropy,
//! per-head attention MSE, and hidden-state MSE behind per-layer projections.
//! [`total_base`] combines them with the prediction term weighted by `gamma`;
//! [`total_hrkd`] re-weights the per-layer feature terms by domain-relational
//! ratios and scales the prediction term by `gamma / D`.
//!
//! Every loss reduces by mean over the batch, and MSE averages over elements
//! so magnitudes stay comparable across layer widths. Teacher-side inputs are
//! expected as constants; no gradient reaches them.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::params::{ParamInit, ParamSet};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Prediction-loss weight used throughout the experiments.
pub const DEFAULT_GAMMA: f64 = 1.0;
/// Softmax temperature used throughout the experiments.
pub const DEFAULT_TEMPERATURE: f64 = 1.0;

/// Tolerance for the ratio-row normalization contract in [`total_hrkd`].
pub const RATIO_SUM_TOL: f64 = 1e-6;

fn last_axis(tape: &Tape, v: Var) -> usize {
    tape.shape(v).len().saturating_sub(1)
}

/// Mean squared error over all elements; scalar `[1]`.
fn mse(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let diff = tape.sub(a, b)?;
    let sq = tape.mul(diff, diff)?;
    tape.mean_all(sq)
}

/// Scalar `[1]` holding one element of a row vector.
fn pick(tape: &mut Tape, row: Var, index: usize) -> Result<Var> {
    let (_, c) = tape.value(row).dims2()?;
    let mut onehot = vec![0.0; c];
    onehot[index] = 1.0;
    let sel = tape.constant(Tensor::col(onehot));
    let out = tape.matmul(row, sel)?;
    tape.reshape(out, vec![1])
}

/// Embedding distillation: `MSE(E_S * W_embd, E_T)`.
pub fn embed_loss(tape: &mut Tape, e_s: Var, w_embd: Var, e_t: Var) -> Result<Var> {
    let projected = tape.matmul(e_s, w_embd)?;
    mse(tape, projected, e_t)
}

/// Hidden-state distillation at one layer: `MSE(H_S * W_hidn, H_T)`.
pub fn hidn_loss(tape: &mut Tape, h_s: Var, w_hidn: Var, h_t: Var) -> Result<Var> {
    let projected = tape.matmul(h_s, w_hidn)?;
    mse(tape, projected, h_t)
}

/// Attention distillation at one layer: mean over heads of per-head MSE.
pub fn attn_loss(tape: &mut Tape, a_s: &[Var], a_t: &[Var]) -> Result<Var> {
    if a_s.is_empty() || a_s.len() != a_t.len() {
        return Err(CoreError::Dim {
            op: "attn_loss",
            lhs: vec![a_s.len()],
            rhs: vec![a_t.len()],
        });
    }
    let mut acc = None;
    for (&s, &t) in a_s.iter().zip(a_t) {
        let head = mse(tape, s, t)?;
        acc = Some(match acc {
            None => head,
            Some(prev) => tape.add(prev, head)?,
        });
    }
    tape.scale(acc.expect("non-empty"), 1.0 / a_s.len() as f64)
}

/// Softened prediction cross-entropy, averaged over the batch:
/// `-sum_c softmax(z_T / t)[c] * log softmax(z_S / t)[c]`.
pub fn pred_loss(tape: &mut Tape, z_s: &[Var], z_t: &[Var], temperature: f64) -> Result<Var> {
    if temperature <= 0.0 {
        return Err(CoreError::Domain(alloc::format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    if z_s.is_empty() || z_s.len() != z_t.len() {
        return Err(CoreError::Contract(alloc::format!(
            "pred_loss got {} student and {} teacher logit rows",
            z_s.len(),
            z_t.len()
        )));
    }
    let mut acc = None;
    for (&s, &t) in z_s.iter().zip(z_t) {
        if tape.value(s).len() != tape.value(t).len() {
            return Err(CoreError::Dim {
                op: "pred_loss",
                lhs: tape.shape(s).to_vec(),
                rhs: tape.shape(t).to_vec(),
            });
        }
        let axis = last_axis(tape, s);
        let s_scaled = tape.scale(s, 1.0 / temperature)?;
        let s_logp = tape.log_softmax(s_scaled, axis)?;
        let t_axis = last_axis(tape, t);
        let t_scaled = tape.scale(t, 1.0 / temperature)?;
        let t_prob = tape.softmax(t_scaled, t_axis)?;
        // -(t_prob . s_logp)
        let t_row = {
            let n = tape.value(t_prob).len();
            tape.reshape(t_prob, vec![1, n])?
        };
        let s_col = {
            let n = tape.value(s_logp).len();
            tape.reshape(s_logp, vec![n, 1])?
        };
        let dot = tape.matmul(t_row, s_col)?;
        let dot = tape.reshape(dot, vec![1])?;
        let ce = tape.scale(dot, -1.0)?;
        acc = Some(match acc {
            None => ce,
            Some(prev) => tape.add(prev, ce)?,
        });
    }
    tape.scale(acc.expect("non-empty"), 1.0 / z_s.len() as f64)
}

/// Hard-label cross-entropy over first-token logits, averaged over the batch.
/// Used for teacher training; not a distillation loss.
pub fn hard_ce_loss(tape: &mut Tape, logits: &[Var], labels: &[usize]) -> Result<Var> {
    if logits.is_empty() || logits.len() != labels.len() {
        return Err(CoreError::Contract(alloc::format!(
            "hard_ce_loss got {} logit rows and {} labels",
            logits.len(),
            labels.len()
        )));
    }
    let mut acc = None;
    for (&z, &label) in logits.iter().zip(labels) {
        let c = tape.value(z).len();
        if label >= c {
            return Err(CoreError::Domain(alloc::format!(
                "label {label} out of range for {c} classes"
            )));
        }
        let axis = last_axis(tape, z);
        let logp = tape.log_softmax(z, axis)?;
        let logp = tape.reshape(logp, vec![1, c])?;
        let picked = pick(tape, logp, label)?;
        let nll = tape.scale(picked, -1.0)?;
        acc = Some(match acc {
            None => nll,
            Some(prev) => tape.add(prev, nll)?,
        });
    }
    tape.scale(acc.expect("non-empty"), 1.0 / logits.len() as f64)
}

// ── projections ─────────────────────────────────────────────────────────

/// Appends the student-to-teacher alignment projections: one for the
/// embedding layer, one per student transformer layer.
pub fn append_projection_params(
    ps: &mut ParamSet,
    init: &mut ParamInit,
    student_hidden: usize,
    teacher_hidden: usize,
    student_layers: usize,
) -> Result<()> {
    ps.push(
        "proj.embd",
        init.normal_tensor(vec![student_hidden, teacher_hidden], crate::encoder::WEIGHT_STD),
    )?;
    for m in 0..student_layers {
        ps.push(
            alloc::format!("proj.hidn{m}"),
            init.normal_tensor(vec![student_hidden, teacher_hidden], crate::encoder::WEIGHT_STD),
        )?;
    }
    Ok(())
}

/// Tape handles for the alignment projections.
#[derive(Debug, Clone)]
pub struct BoundProjection {
    pub embd: Var,
    pub hidn: Vec<Var>,
}

pub fn bind_projection(vars: &[Var], cursor: &mut usize, student_layers: usize) -> BoundProjection {
    let embd = vars[*cursor];
    *cursor += 1;
    let hidn = (0..student_layers)
        .map(|_| {
            let v = vars[*cursor];
            *cursor += 1;
            v
        })
        .collect();
    BoundProjection { embd, hidn }
}

// ── totals ──────────────────────────────────────────────────────────────

/// Per-domain, per-layer loss terms as tape nodes. Indexing: `embd[d]`,
/// `pred[d]`, `attn[m][d]`, `hidn[m][d]` with `m` over student layers.
#[derive(Debug, Clone)]
pub struct LossVars {
    pub embd: Vec<Var>,
    pub attn: Vec<Vec<Var>>,
    pub hidn: Vec<Vec<Var>>,
    pub pred: Vec<Var>,
}

impl LossVars {
    pub fn num_domains(&self) -> usize {
        self.embd.len()
    }

    pub fn num_layers(&self) -> usize {
        self.attn.len()
    }

    fn validate(&self) -> Result<()> {
        let d = self.num_domains();
        if self.pred.len() != d
            || self.attn.iter().any(|row| row.len() != d)
            || self.hidn.iter().any(|row| row.len() != d)
            || self.attn.len() != self.hidn.len()
        {
            return Err(CoreError::Contract(
                "loss component table has inconsistent dimensions".into(),
            ));
        }
        Ok(())
    }
}

/// Base multi-domain objective:
/// `sum_d [ embd_d + sum_m (attn_{m,d} + hidn_{m,d}) + gamma * pred_d ]`.
pub fn total_base(tape: &mut Tape, losses: &LossVars, gamma: f64) -> Result<Var> {
    losses.validate()?;
    let mut total = None;
    for d in 0..losses.num_domains() {
        let mut acc = losses.embd[d];
        for m in 0..losses.num_layers() {
            let pair = tape.add(losses.attn[m][d], losses.hidn[m][d])?;
            acc = tape.add(acc, pair)?;
        }
        let pred = tape.scale(losses.pred[d], gamma)?;
        acc = tape.add(acc, pred)?;
        total = Some(match total {
            None => acc,
            Some(prev) => tape.add(prev, acc)?,
        });
    }
    total.ok_or_else(|| CoreError::Contract("no domains in loss table".into()))
}

/// Ratio-weighted objective:
/// `sum_d [ r_{0,d} * embd_d + sum_m r_{m,d} * (attn + hidn) + (gamma / D) * pred_d ]`.
///
/// `ratios[m]` is the `[1 x D]` ratio row for layer `m` (`m = 0` is the
/// embedding layer), so `ratios.len()` must be the student layer count plus
/// one and every row must sum to 1 within [`RATIO_SUM_TOL`].
pub fn total_hrkd(tape: &mut Tape, losses: &LossVars, ratios: &[Var], gamma: f64) -> Result<Var> {
    losses.validate()?;
    let d_count = losses.num_domains();
    let m_count = losses.num_layers();
    if ratios.len() != m_count + 1 {
        return Err(CoreError::Config(alloc::format!(
            "expected {} ratio rows for {} student layers, got {}",
            m_count + 1,
            m_count,
            ratios.len()
        )));
    }
    for (m, &row) in ratios.iter().enumerate() {
        let v = tape.value(row);
        if v.len() != d_count {
            return Err(CoreError::Dim {
                op: "total_hrkd",
                lhs: v.shape.clone(),
                rhs: vec![1, d_count],
            });
        }
        let sum: f64 = v.data.iter().sum();
        if (sum - 1.0).abs() > RATIO_SUM_TOL {
            return Err(CoreError::Contract(alloc::format!(
                "ratio row {m} sums to {sum}, expected 1 within {RATIO_SUM_TOL}"
            )));
        }
    }

    let mut total = None;
    for d in 0..d_count {
        let r0 = pick(tape, ratios[0], d)?;
        let mut acc = tape.mul(r0, losses.embd[d])?;
        for m in 0..m_count {
            let rm = pick(tape, ratios[m + 1], d)?;
            let pair = tape.add(losses.attn[m][d], losses.hidn[m][d])?;
            let weighted = tape.mul(rm, pair)?;
            acc = tape.add(acc, weighted)?;
        }
        let pred = tape.scale(losses.pred[d], gamma / d_count as f64)?;
        acc = tape.add(acc, pred)?;
        total = Some(match total {
            None => acc,
            Some(prev) => tape.add(prev, acc)?,
        });
    }
    total.ok_or_else(|| CoreError::Contract("no domains in loss table".into()))
}

/// Plain-value snapshot of all loss components, for metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub embd: Vec<f64>,
    pub attn: Vec<Vec<f64>>,
    pub hidn: Vec<Vec<f64>>,
    pub pred: Vec<f64>,
    pub total: f64,
}

impl LossBreakdown {
    pub fn from_tape(tape: &Tape, losses: &LossVars, total: Var) -> Result<Self> {
        let read = |v: Var| tape.scalar_value(v);
        Ok(LossBreakdown {
            embd: losses.embd.iter().map(|&v| read(v)).collect::<Result<_>>()?,
            attn: losses
                .attn
                .iter()
                .map(|row| row.iter().map(|&v| read(v)).collect::<Result<_>>())
                .collect::<Result<_>>()?,
            hidn: losses
                .hidn
                .iter()
                .map(|row| row.iter().map(|&v| read(v)).collect::<Result<_>>())
                .collect::<Result<_>>()?,
            pred: losses.pred.iter().map(|&v| read(v)).collect::<Result<_>>()?,
            total: tape.scalar_value(total)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(tape: &mut Tape, shape: Vec<usize>, data: Vec<f64>) -> Var {
        tape.constant(Tensor::new(shape, data).unwrap())
    }

    #[test]
    fn embed_loss_zero_on_exact_projection() {
        let mut tape = Tape::new();
        let e_s = t(&mut tape, vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let w = t(&mut tape, vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        let e_t = t(&mut tape, vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let loss = embed_loss(&mut tape, e_s, w, e_t).unwrap();
        assert_eq!(tape.scalar_value(loss).unwrap(), 0.0);
    }

    #[test]
    fn embed_loss_constant_offset_is_one() {
        let mut tape = Tape::new();
        let e_s = t(&mut tape, vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let w = t(&mut tape, vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        let e_t = t(&mut tape, vec![2, 2], vec![2.0, 3.0, 4.0, 5.0]);
        let loss = embed_loss(&mut tape, e_s, w, e_t).unwrap();
        assert!((tape.scalar_value(loss).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn hidn_loss_constant_offset_two_is_four() {
        let mut tape = Tape::new();
        let h_s = t(&mut tape, vec![1, 2], vec![1.0, 2.0]);
        let w = t(&mut tape, vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        let h_t = t(&mut tape, vec![1, 2], vec![3.0, 4.0]);
        let loss = hidn_loss(&mut tape, h_s, w, h_t).unwrap();
        assert!((tape.scalar_value(loss).unwrap() - 4.0).abs() < 1e-15);
    }

    #[test]
    fn attn_loss_constant_gap() {
        let mut tape = Tape::new();
        let a_s = t(&mut tape, vec![2, 2], vec![0.5; 4]);
        let a_t = t(&mut tape, vec![2, 2], vec![0.25; 4]);
        let loss = attn_loss(&mut tape, &[a_s], &[a_t]).unwrap();
        assert!((tape.scalar_value(loss).unwrap() - 0.0625).abs() < 1e-15);
    }

    #[test]
    fn attn_loss_head_mismatch_is_dimension_error() {
        let mut tape = Tape::new();
        let a = t(&mut tape, vec![2, 2], vec![0.5; 4]);
        let err = attn_loss(&mut tape, &[a, a], &[a]).unwrap_err();
        assert!(matches!(err, CoreError::Dim { .. }));
    }

    #[test]
    fn pred_loss_uniform_two_classes_is_ln2() {
        let mut tape = Tape::new();
        let z = t(&mut tape, vec![1, 2], vec![0.0, 0.0]);
        let loss = pred_loss(&mut tape, &[z], &[z], 1.0).unwrap();
        assert!((tape.scalar_value(loss).unwrap() - libm::log(2.0)).abs() < 1e-12);
    }

    #[test]
    fn pred_loss_uniform_four_classes_is_ln4() {
        let mut tape = Tape::new();
        let z = t(&mut tape, vec![1, 4], vec![0.0; 4]);
        let loss = pred_loss(&mut tape, &[z], &[z], 1.0).unwrap();
        assert!((tape.scalar_value(loss).unwrap() - libm::log(4.0)).abs() < 1e-12);
    }

    #[test]
    fn pred_loss_rejects_non_positive_temperature() {
        let mut tape = Tape::new();
        let z = t(&mut tape, vec![1, 2], vec![0.0, 0.0]);
        assert!(matches!(
            pred_loss(&mut tape, &[z], &[z], 0.0),
            Err(CoreError::Domain(_))
        ));
    }

    #[test]
    fn total_base_direct_sum() {
        let mut tape = Tape::new();
        let s = |tape: &mut Tape, v: f64| tape.constant(Tensor::new(vec![1], vec![v]).unwrap());
        let losses = LossVars {
            embd: vec![s(&mut tape, 1.0)],
            attn: vec![vec![s(&mut tape, 2.0)]],
            hidn: vec![vec![s(&mut tape, 3.0)]],
            pred: vec![s(&mut tape, 4.0)],
        };
        let total = total_base(&mut tape, &losses, 1.0).unwrap();
        assert_eq!(tape.scalar_value(total).unwrap(), 10.0);
    }

    #[test]
    fn total_hrkd_single_domain_reduces_to_base() {
        let mut tape = Tape::new();
        let s = |tape: &mut Tape, v: f64| tape.constant(Tensor::new(vec![1], vec![v]).unwrap());
        let losses = LossVars {
            embd: vec![s(&mut tape, 0.7)],
            attn: vec![vec![s(&mut tape, 1.3)]],
            hidn: vec![vec![s(&mut tape, 0.2)]],
            pred: vec![s(&mut tape, 2.9)],
        };
        let ones = tape.constant(Tensor::row(vec![1.0]));
        let hrkd = total_hrkd(&mut tape, &losses, &[ones, ones], 0.8).unwrap();
        let base = total_base(&mut tape, &losses, 0.8).unwrap();
        assert_eq!(
            tape.scalar_value(hrkd).unwrap().to_bits(),
            tape.scalar_value(base).unwrap().to_bits()
        );
    }

    #[test]
    fn total_hrkd_rejects_unnormalized_rows() {
        let mut tape = Tape::new();
        let s = |tape: &mut Tape, v: f64| tape.constant(Tensor::new(vec![1], vec![v]).unwrap());
        let losses = LossVars {
            embd: vec![s(&mut tape, 1.0), s(&mut tape, 1.0)],
            attn: vec![],
            hidn: vec![],
            pred: vec![s(&mut tape, 1.0), s(&mut tape, 1.0)],
        };
        let bad = tape.constant(Tensor::row(vec![0.9, 0.3]));
        let err = total_hrkd(&mut tape, &losses, &[bad], 1.0).unwrap_err();
        assert!(matches!(err, CoreError::Contract(_)));
    }
}
