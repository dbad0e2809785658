//! Reference prototypes and the hierarchical compare-aggregate mechanism.
//!
//! For each layer, a self-attention over the D domain prototypes produces
//! reference prototypes that mix cross-domain information. Each domain then
//! scores its layer-0..m prototypes against its reference prototype and
//! aggregates them by the softmax of those scores. The aggregated prototypes
//! feed the domain-relational graphs.
//!
//! Three ablation switches reduce the mechanism: without self-attention the
//! references are the raw prototypes; without compare-aggregate the
//! aggregation is a plain layerwise mean; without the hierarchy each layer
//! passes its own prototype through untouched.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::graph::glorot;
use crate::params::{ParamInit, ParamSet};
use crate::prototype::PrototypeVars;
use crate::tape::{Tape, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateConfig {
    /// Prototype layers (student layers plus one).
    pub layers: usize,
    pub num_domains: usize,
    /// Prototype width F.
    pub dim: usize,
    /// Self-attention over same-layer prototypes when building references.
    pub self_attention: bool,
    /// Similarity-weighted aggregation; plain layerwise mean when false.
    pub comp_agg: bool,
    /// Aggregate over layers 0..=m; current layer only when false.
    pub hierarchical: bool,
}

impl AggregateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.num_domains == 0 || self.dim == 0 {
            return Err(CoreError::Config("aggregate extents must be positive".into()));
        }
        Ok(())
    }

    fn uses_reference_attention(&self) -> bool {
        self.hierarchical && self.comp_agg && self.self_attention
    }

    fn uses_similarity(&self) -> bool {
        self.hierarchical && self.comp_agg
    }
}

/// Appends compare-aggregate parameters in the order [`bind`] consumes.
/// Ablated paths own no parameters.
pub fn append_params(ps: &mut ParamSet, init: &mut ParamInit, cfg: &AggregateConfig) -> Result<()> {
    cfg.validate()?;
    let f = cfg.dim;
    for m in 0..cfg.layers {
        if cfg.uses_reference_attention() {
            ps.push(
                alloc::format!("agg{m}.wd"),
                init.normal_tensor(vec![f, f], glorot(f, f)),
            )?;
        }
        if cfg.uses_similarity() {
            for d in 0..cfg.num_domains {
                ps.push(
                    alloc::format!("agg{m}.d{d}.wh"),
                    init.normal_tensor(vec![f, f], glorot(f, f)),
                )?;
            }
        }
    }
    Ok(())
}

/// Tape handles for compare-aggregate parameters.
#[derive(Debug, Clone)]
pub struct BoundAggregate {
    /// Reference-attention matrix per layer, when in use.
    pub wd: Vec<Option<Var>>,
    /// Similarity matrices per layer and domain; empty rows when ablated.
    pub wh: Vec<Vec<Var>>,
}

pub fn bind(vars: &[Var], cursor: &mut usize, cfg: &AggregateConfig) -> BoundAggregate {
    let mut next = || {
        let v = vars[*cursor];
        *cursor += 1;
        v
    };
    let mut wd = Vec::with_capacity(cfg.layers);
    let mut wh = Vec::with_capacity(cfg.layers);
    for _ in 0..cfg.layers {
        wd.push(if cfg.uses_reference_attention() {
            Some(next())
        } else {
            None
        });
        wh.push(if cfg.uses_similarity() {
            (0..cfg.num_domains).map(|_| next()).collect()
        } else {
            Vec::new()
        });
    }
    BoundAggregate { wd, wh }
}

fn require_finite(tape: &Tape, v: Var, what: &str) -> Result<()> {
    if !tape.value(v).all_finite() {
        return Err(CoreError::Contract(alloc::format!(
            "{what} contains non-finite values"
        )));
    }
    Ok(())
}

/// Self-attention over same-layer prototypes:
/// `alpha = softmax_rows(h W h^T)`, `RP = alpha h`.
/// Returns `(RP [D x F], alpha [D x D])`.
pub fn reference_prototypes(tape: &mut Tape, h_m: Var, wd: Var) -> Result<(Var, Var)> {
    require_finite(tape, h_m, "reference_prototypes inputs")?;
    let hw = tape.matmul(h_m, wd)?;
    let ht = tape.transpose(h_m)?;
    let scores = tape.matmul(hw, ht)?;
    let alpha = tape.softmax(scores, 1)?;
    let rp = tape.matmul(alpha, h_m)?;
    Ok((rp, alpha))
}

/// Similarity-weighted aggregation of one domain's layer-0..m prototypes
/// against its reference prototype:
/// `alpha = softmax(h_stack W rp^T)`, `AP = alpha^T h_stack`.
/// Returns `(AP [1 x F], alpha [(m+1) x 1])`.
pub fn aggregate(tape: &mut Tape, h_stack: Var, rp_row: Var, wh: Var) -> Result<(Var, Var)> {
    let (rows, _) = tape.value(h_stack).dims2()?;
    if rows == 0 {
        return Err(CoreError::Contract("empty prototype stack".into()));
    }
    let hw = tape.matmul(h_stack, wh)?;
    let rpt = tape.transpose(rp_row)?;
    let scores = tape.matmul(hw, rpt)?;
    let alpha = tape.softmax(scores, 0)?;
    let at = tape.transpose(alpha)?;
    let ap = tape.matmul(at, h_stack)?;
    Ok((ap, alpha))
}

/// Aggregated prototypes plus the attention traces behind them.
#[derive(Debug, Clone)]
pub struct AggregatedSet {
    /// `ap[m][d]`: `[1 x F]` aggregated prototype.
    pub ap: Vec<Vec<Var>>,
    /// Reference prototypes per layer (`[D x F]`), when the compare path ran.
    pub rp: Vec<Option<Var>>,
    /// Reference-attention rows per layer (`[D x D]`), when computed.
    pub alpha_d: Vec<Option<Var>>,
    /// Similarity vectors per layer and domain (`[(m+1) x 1]`), when computed.
    pub alpha_h: Vec<Vec<Option<Var>>>,
}

/// Builds the full aggregated prototype set for all layers and domains.
pub fn build_aggregated_set(
    tape: &mut Tape,
    protos: &PrototypeVars,
    bound: &BoundAggregate,
    cfg: &AggregateConfig,
) -> Result<AggregatedSet> {
    cfg.validate()?;
    if protos.num_layers() != cfg.layers || protos.num_domains() != cfg.num_domains {
        return Err(CoreError::Config(alloc::format!(
            "prototype set is {}x{}, aggregate configured for {}x{}",
            protos.num_layers(),
            protos.num_domains(),
            cfg.layers,
            cfg.num_domains
        )));
    }
    let d_count = cfg.num_domains;
    let mut ap = Vec::with_capacity(cfg.layers);
    let mut rp_all = Vec::with_capacity(cfg.layers);
    let mut alpha_d = Vec::with_capacity(cfg.layers);
    let mut alpha_h = Vec::with_capacity(cfg.layers);

    for m in 0..cfg.layers {
        if !cfg.hierarchical {
            ap.push(protos.layers[m].clone());
            rp_all.push(None);
            alpha_d.push(None);
            alpha_h.push(vec![None; d_count]);
            continue;
        }
        if !cfg.comp_agg {
            let mut row = Vec::with_capacity(d_count);
            for d in 0..d_count {
                let stack: Vec<Var> = (0..=m).map(|l| protos.layers[l][d]).collect();
                let stacked = tape.concat_rows(&stack)?;
                row.push(tape.mean_rows(stacked)?);
            }
            ap.push(row);
            rp_all.push(None);
            alpha_d.push(None);
            alpha_h.push(vec![None; d_count]);
            continue;
        }

        let h_m = tape.concat_rows(&protos.layers[m])?;
        let (rp, a_d) = if cfg.self_attention {
            let wd = bound.wd[m].ok_or_else(|| {
                CoreError::Config(alloc::format!("layer {m} has no reference-attention matrix"))
            })?;
            let (rp, a) = reference_prototypes(tape, h_m, wd)?;
            (rp, Some(a))
        } else {
            (h_m, None)
        };

        let mut row = Vec::with_capacity(d_count);
        let mut sims = Vec::with_capacity(d_count);
        for d in 0..d_count {
            let wh = *bound.wh[m].get(d).ok_or_else(|| {
                CoreError::Config(alloc::format!("layer {m} lacks a similarity matrix for domain {d}"))
            })?;
            let rp_row = tape.slice_rows(rp, d, d + 1)?;
            let stack: Vec<Var> = (0..=m).map(|l| protos.layers[l][d]).collect();
            let stacked = tape.concat_rows(&stack)?;
            let (ap_md, a_h) = aggregate(tape, stacked, rp_row, wh)?;
            row.push(ap_md);
            sims.push(Some(a_h));
        }
        ap.push(row);
        rp_all.push(Some(rp));
        alpha_d.push(a_d);
        alpha_h.push(sims);
    }

    Ok(AggregatedSet {
        ap,
        rp: rp_all,
        alpha_d,
        alpha_h,
    })
}
