//! Finite-difference gradient checking.
//!
//! [`grad_check`] compares reverse-mode gradients against central finite
//! differences `(f(p+h) - f(p-h)) / 2h`, parameter by parameter. The deviation
//! metric is relative: `|ad - fd| / max(|ad|, |fd|, 1e-6)`, with the floor
//! guarding against blowups where both gradients are numerically zero.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::params::ParamSet;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub name: String,
    pub max_rel_dev: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub tol: f64,
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn max_rel_dev(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.max_rel_dev)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_dev() <= self.tol
    }
}

fn rel_dev(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs()).max(REL_FLOOR);
    (a - b).abs() / denom
}

fn eval_scalar<F>(f: &mut F, values: &[Tensor]) -> Result<f64>
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = values.iter().map(|t| tape.leaf(t.clone(), false)).collect();
    let loss = f(&mut tape, &vars)?;
    tape.scalar_value(loss)
}

/// Checks the reverse-mode gradient of a deterministic scalar function of
/// `params` against central finite differences with step `h`.
///
/// The function is evaluated twice up front; if the two results differ
/// bitwise, the function is not deterministic and a contract error is
/// returned.
pub fn grad_check<F>(mut f: F, params: &ParamSet, h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var>,
{
    if h <= 0.0 {
        return Err(CoreError::Domain(alloc::format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let base: Vec<Tensor> = params.entries().iter().map(|e| e.value.clone()).collect();

    let first = eval_scalar(&mut f, &base)?;
    let second = eval_scalar(&mut f, &base)?;
    if first.to_bits() != second.to_bits() {
        return Err(CoreError::Contract(
            "grad_check requires a deterministic function; two evaluations at the same point differed"
                .into(),
        ));
    }

    // Reverse-mode gradients.
    let mut tape = Tape::new();
    let vars: Vec<Var> = base.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;
    let autodiff: Vec<Vec<f64>> = vars
        .iter()
        .zip(&base)
        .map(|(&v, t)| tape.grad(v).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; t.len()]))
        .collect();
    drop(tape);

    // Central differences, one coordinate at a time.
    let mut work = base.clone();
    let mut entries = Vec::with_capacity(params.len());
    for (p, entry) in params.entries().iter().enumerate() {
        let mut max_dev = 0.0f64;
        for j in 0..entry.value.len() {
            let orig = work[p].data[j];
            work[p].data[j] = orig + h;
            let plus = eval_scalar(&mut f, &work)?;
            work[p].data[j] = orig - h;
            let minus = eval_scalar(&mut f, &work)?;
            work[p].data[j] = orig;
            let fd = (plus - minus) / (2.0 * h);
            max_dev = max_dev.max(rel_dev(autodiff[p][j], fd));
        }
        entries.push(GradCheckEntry {
            name: entry.name.clone(),
            max_rel_dev: max_dev,
        });
    }

    Ok(GradCheckReport { tol, entries })
}
