//! Per-layer, per-domain prototypes from student activations.
//!
//! A prototype is the mean of a domain batch's token vectors at one student
//! layer, taken over every unmasked token of every sample. Layer 0 uses the
//! embedding output; layers 1..=M use transformer outputs. Padding tokens are
//! excluded and the denominator is the unmasked token count.

use alloc::vec::Vec;

use crate::encoder::SampleOutput;
use crate::error::{CoreError, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// One domain's batched activations plus the masks they were produced under.
pub struct DomainActivations<'a> {
    pub samples: &'a [SampleOutput],
    pub masks: &'a [Vec<bool>],
}

/// Prototypes `layers[m][d]`, each a `[1 x F]` tape node, for
/// `m = 0..=M` (0 is the embedding layer) and `d = 0..D`.
#[derive(Debug, Clone)]
pub struct PrototypeVars {
    pub layers: Vec<Vec<Var>>,
}

impl PrototypeVars {
    /// Number of prototype layers, i.e. student layers plus one.
    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn num_domains(&self) -> usize {
        self.layers.first().map(|row| row.len()).unwrap_or(0)
    }
}

/// Computes prototypes for every domain, batch by batch.
///
/// With `detach` set, the prototypes are value copies and gradients do not
/// flow back into the encoder through them.
pub fn compute_prototypes(
    tape: &mut Tape,
    domains: &[DomainActivations<'_>],
    detach: bool,
) -> Result<PrototypeVars> {
    if domains.is_empty() {
        return Err(CoreError::Domain("no domains to compute prototypes for".into()));
    }
    let student_layers = domains[0]
        .samples
        .first()
        .map(|s| s.hidden.len())
        .unwrap_or(0);

    // Per domain: the constant [1 x L] mask row per sample, and the unmasked count.
    let mut mask_rows: Vec<Vec<Var>> = Vec::with_capacity(domains.len());
    let mut counts: Vec<f64> = Vec::with_capacity(domains.len());
    for (d, dom) in domains.iter().enumerate() {
        if dom.samples.is_empty() {
            return Err(CoreError::Domain(alloc::format!(
                "domain {d}: empty batch, prototype undefined"
            )));
        }
        if dom.samples.len() != dom.masks.len() {
            return Err(CoreError::Contract(alloc::format!(
                "domain {d}: {} samples but {} masks",
                dom.samples.len(),
                dom.masks.len()
            )));
        }
        let mut rows = Vec::with_capacity(dom.samples.len());
        let mut count = 0usize;
        for (sample, mask) in dom.samples.iter().zip(dom.masks) {
            if sample.hidden.len() != student_layers {
                return Err(CoreError::Contract(
                    "samples disagree on the number of layers".into(),
                ));
            }
            let row: Vec<f64> = mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
            count += mask.iter().filter(|&&m| m).count();
            rows.push(tape.constant(Tensor::row(row)));
        }
        if count == 0 {
            return Err(CoreError::Domain(alloc::format!(
                "domain {d}: all tokens masked, prototype undefined"
            )));
        }
        mask_rows.push(rows);
        counts.push(count as f64);
    }

    let mut layers = Vec::with_capacity(student_layers + 1);
    for m in 0..=student_layers {
        let mut per_domain = Vec::with_capacity(domains.len());
        for (d, dom) in domains.iter().enumerate() {
            let mut acc = None;
            for (s, sample) in dom.samples.iter().enumerate() {
                let src = if m == 0 {
                    sample.embeddings
                } else {
                    sample.hidden[m - 1]
                };
                let partial = tape.matmul(mask_rows[d][s], src)?;
                acc = Some(match acc {
                    None => partial,
                    Some(prev) => tape.add(prev, partial)?,
                });
            }
            let proto = tape.scale(acc.expect("non-empty batch"), 1.0 / counts[d])?;
            per_domain.push(if detach { tape.detach(proto) } else { proto });
        }
        layers.push(per_domain);
    }

    Ok(PrototypeVars { layers })
}
