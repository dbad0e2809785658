//! The gradient suite: finite-difference verification of every loss and of a
//! complete distillation step on a toy two-domain configuration.

use hrkd_core::check::{grad_check, GradCheckReport};
use hrkd_core::encoder::{self, EncoderConfig};
use hrkd_core::losses::{self, LossVars};
use hrkd_core::params::{ParamInit, ParamSet};
use hrkd_core::tensor::Tensor;

use crate::config::{Mode, RunConfig};
use crate::corpus::{generate_synthetic_corpus, make_batches, GenConfig, Vocabulary};
use crate::error::Result;
use crate::train::{
    bind_student, build_step_loss, init_student_params, teacher_targets, NormAudit,
};

#[derive(Debug, Clone)]
pub struct SuiteEntry {
    pub name: String,
    pub max_rel_dev: f64,
    pub tol: f64,
    pub passed: bool,
}

fn entry(name: &str, report: &GradCheckReport) -> SuiteEntry {
    SuiteEntry {
        name: name.to_string(),
        max_rel_dev: report.max_rel_dev(),
        tol: report.tol,
        passed: report.passed(),
    }
}

/// Toy configuration: two domains, a two-layer student of width 8 distilling
/// from a four-layer teacher of width 12.
pub fn toy_run_config() -> RunConfig {
    let domains = 2;
    let classes = vec![2; domains];
    RunConfig {
        teacher: EncoderConfig {
            num_layers: 4,
            hidden: 12,
            ffn_hidden: 24,
            heads: 2,
            vocab_size: 96,
            max_len: 6,
            num_domains: domains,
            classes_per_domain: classes.clone(),
        },
        student: EncoderConfig {
            num_layers: 2,
            hidden: 8,
            ffn_hidden: 16,
            heads: 2,
            vocab_size: 96,
            max_len: 6,
            num_domains: domains,
            classes_per_domain: classes,
        },
        graph_heads: 2,
        graph_dim: 4,
        batch_size: 2,
        seq_len: 6,
        mode: Mode::Hrkd,
        ..RunConfig::default()
    }
}

/// Runs every check; each compares reverse-mode gradients against central
/// finite differences with step `h` at relative tolerance `tol`.
pub fn run_gradient_suite(h: f64, tol: f64) -> Result<Vec<SuiteEntry>> {
    let mut init = ParamInit::new(12345);
    let mut entries = Vec::new();

    // Embedding MSE behind the alignment projection.
    let mut ps = ParamSet::new();
    ps.push("e_s", init.normal_tensor(vec![4, 8], 1.0))?;
    ps.push("w_embd", init.normal_tensor(vec![8, 12], 0.3))?;
    let e_t = init.normal_tensor(vec![4, 12], 1.0);
    let report = grad_check(
        move |tape, v| {
            let t = tape.constant(e_t.clone());
            losses::embed_loss(tape, v[0], v[1], t)
        },
        &ps,
        h,
        tol,
    )?;
    entries.push(entry("embedding loss", &report));

    // Softened prediction cross-entropy.
    let mut ps = ParamSet::new();
    ps.push("z_s0", init.normal_tensor(vec![1, 2], 1.0))?;
    ps.push("z_s1", init.normal_tensor(vec![1, 2], 1.0))?;
    let z_t: Vec<Tensor> = (0..2).map(|_| init.normal_tensor(vec![1, 2], 1.0)).collect();
    let report = grad_check(
        move |tape, v| {
            let t: Vec<_> = z_t.iter().map(|z| tape.constant(z.clone())).collect();
            losses::pred_loss(tape, &[v[0], v[1]], &t, 2.0)
        },
        &ps,
        h,
        tol,
    )?;
    entries.push(entry("prediction loss", &report));

    // Per-head attention MSE.
    let mut ps = ParamSet::new();
    ps.push("a_s0", init.normal_tensor(vec![4, 4], 0.5))?;
    ps.push("a_s1", init.normal_tensor(vec![4, 4], 0.5))?;
    let a_t: Vec<Tensor> = (0..2).map(|_| init.normal_tensor(vec![4, 4], 0.5)).collect();
    let report = grad_check(
        move |tape, v| {
            let t: Vec<_> = a_t.iter().map(|z| tape.constant(z.clone())).collect();
            losses::attn_loss(tape, &[v[0], v[1]], &t)
        },
        &ps,
        h,
        tol,
    )?;
    entries.push(entry("attention loss", &report));

    // Hidden-state MSE behind the per-layer projection.
    let mut ps = ParamSet::new();
    ps.push("h_s", init.normal_tensor(vec![4, 8], 1.0))?;
    ps.push("w_hidn", init.normal_tensor(vec![8, 12], 0.3))?;
    let h_t = init.normal_tensor(vec![4, 12], 1.0);
    let report = grad_check(
        move |tape, v| {
            let t = tape.constant(h_t.clone());
            losses::hidn_loss(tape, v[0], v[1], t)
        },
        &ps,
        h,
        tol,
    )?;
    entries.push(entry("hidden-state loss", &report));

    // The base total over a 2-domain, 2-layer table.
    let mut ps = ParamSet::new();
    ps.push("raw", init.normal_tensor(vec![1, 10], 1.0))?;
    let report = grad_check(
        |tape, v| {
            let sq = tape.mul(v[0], v[0])?;
            let pick = |tape: &mut hrkd_core::Tape, i: usize| -> hrkd_core::Result<_> {
                let row = tape.slice_rows(sq, 0, 1)?;
                let t = tape.transpose(row)?;
                let cell = tape.slice_rows(t, i, i + 1)?;
                tape.reshape(cell, vec![1])
            };
            let table = LossVars {
                embd: vec![pick(tape, 0)?, pick(tape, 1)?],
                attn: vec![
                    vec![pick(tape, 2)?, pick(tape, 3)?],
                    vec![pick(tape, 4)?, pick(tape, 5)?],
                ],
                hidn: vec![
                    vec![pick(tape, 6)?, pick(tape, 7)?],
                    vec![pick(tape, 8)?, pick(tape, 9)?],
                ],
                pred: vec![pick(tape, 0)?, pick(tape, 9)?],
            };
            losses::total_base(tape, &table, 1.0)
        },
        &ps,
        h,
        tol,
    )?;
    entries.push(entry("base total", &report));

    // The ratio-weighted total with learnable ratio logits.
    let mut ps = ParamSet::new();
    ps.push("raw", init.normal_tensor(vec![1, 10], 1.0))?;
    ps.push("ratio_logits", init.normal_tensor(vec![3, 2], 0.5))?;
    let report = grad_check(
        |tape, v| {
            let sq = tape.mul(v[0], v[0])?;
            let pick = |tape: &mut hrkd_core::Tape, i: usize| -> hrkd_core::Result<_> {
                let row = tape.slice_rows(sq, 0, 1)?;
                let t = tape.transpose(row)?;
                let cell = tape.slice_rows(t, i, i + 1)?;
                tape.reshape(cell, vec![1])
            };
            let table = LossVars {
                embd: vec![pick(tape, 0)?, pick(tape, 1)?],
                attn: vec![
                    vec![pick(tape, 2)?, pick(tape, 3)?],
                    vec![pick(tape, 4)?, pick(tape, 5)?],
                ],
                hidn: vec![
                    vec![pick(tape, 6)?, pick(tape, 7)?],
                    vec![pick(tape, 8)?, pick(tape, 9)?],
                ],
                pred: vec![pick(tape, 0)?, pick(tape, 9)?],
            };
            let rows: Vec<_> = (0..3)
                .map(|m| {
                    let row = tape.slice_rows(v[1], m, m + 1)?;
                    tape.softmax(row, 1)
                })
                .collect::<hrkd_core::Result<_>>()?;
            losses::total_hrkd(tape, &table, &rows, 1.0)
        },
        &ps,
        h,
        tol,
    )?;
    entries.push(entry("ratio-weighted total", &report));

    // Full step: every parameter group through the ratio-weighted total.
    let run = toy_run_config();
    let corpus = generate_synthetic_corpus(&GenConfig {
        num_domains: 2,
        train_per_domain: 2,
        dev_per_domain: 2,
        test_per_domain: 2,
        vocab: 96,
        min_tokens: 4,
        max_tokens: 5,
        pattern_tokens: 2,
        pool_size: 4,
        seed: 7,
        ..GenConfig::default()
    })?;
    let vocab = Vocabulary::build(&corpus, 1);
    let batches: Vec<_> = corpus
        .domains
        .iter()
        .enumerate()
        .map(|(d, dom)| make_batches(&dom.train, d, &vocab, run.seq_len, run.batch_size))
        .collect();
    let chosen: Vec<_> = batches.iter().map(|b| &b[0]).collect();
    let teacher = encoder::init_params(&run.teacher, 3)?;
    let layer_map = encoder::layer_map(run.student.num_layers, run.teacher.num_layers)?;
    let mut audit = NormAudit::default();
    let targets: Vec<_> = chosen
        .iter()
        .map(|b| teacher_targets(&teacher, &run.teacher, b, &layer_map, &mut audit))
        .collect::<Result<_>>()?;
    let student = init_student_params(&run)?;
    let run2 = run.clone();
    let chosen2: Vec<_> = chosen.iter().map(|b| (*b).clone()).collect();
    let report = grad_check(
        move |tape, vars| {
            let bound = bind_student(vars, &run2);
            let refs: Vec<_> = chosen2.iter().collect();
            let mut local_audit = NormAudit::default();
            let step = build_step_loss(tape, &bound, &run2, &refs, &targets, &mut local_audit)
                .map_err(|e| hrkd_core::CoreError::Contract(e.to_string()))?;
            Ok(step.total)
        },
        &student,
        h,
        tol,
    )?;
    entries.push(entry("full distillation step", &report));

    Ok(entries)
}

