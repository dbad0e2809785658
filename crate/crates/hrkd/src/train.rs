//! Teacher training, student distillation, and evaluation.
//!
//! Distillation runs one optimizer step per round: every domain contributes
//! one batch, the teacher is evaluated frozen on each of them, the student
//! runs on a shared tape, prototypes feed the compare-aggregate mechanism and
//! the domain-relational graphs (unless ablated), and a single backward pass
//! updates student, projection, graph, and compare-aggregate parameters
//! together. Domains of unequal size recycle their batches independently.
//!
//! Everything is seeded and single-threaded; two runs with the same config
//! and seed produce identical metrics files and checkpoints byte for byte.

use std::path::PathBuf;

use hrkd_core::aggregate::{self, AggregateConfig};
use hrkd_core::encoder::{self, DomainBatch, EncoderConfig, SampleOutput};
use hrkd_core::graph::{self, GraphConfig};
use hrkd_core::losses::{self, LossBreakdown, LossVars};
use hrkd_core::optim::{Adam, AdamConfig};
use hrkd_core::params::{ParamInit, ParamSet};
use hrkd_core::prototype::{self, DomainActivations};
use hrkd_core::tape::{Tape, Var};
use hrkd_core::tensor::Tensor;

use crate::config::{config_digest, Mode, RunConfig};
use crate::corpus::{make_batches, Corpus, Vocabulary};
use crate::error::{HarnessError, Result};
use crate::metrics::{MetricsRecord, MetricsWriter, RunSummary};
use crate::checkpoint;

pub const VOCAB_MIN_FREQ: usize = 2;

/// Running check that every probability row encountered sums to 1.
#[derive(Debug, Clone, Copy, Default)]
pub struct NormAudit {
    pub max_dev: f64,
    pub rows: u64,
}

impl NormAudit {
    fn row_sum(&mut self, sum: f64) {
        let dev = (sum - 1.0).abs();
        if dev > self.max_dev {
            self.max_dev = dev;
        }
        self.rows += 1;
    }

    fn matrix_rows(&mut self, data: &[f64], cols: usize) {
        for chunk in data.chunks(cols) {
            self.row_sum(chunk.iter().sum());
        }
    }

    fn vector(&mut self, data: &[f64]) {
        self.row_sum(data.iter().sum());
    }

    fn merge(&mut self, other: &NormAudit) {
        if other.max_dev > self.max_dev {
            self.max_dev = other.max_dev;
        }
        self.rows += other.rows;
    }
}

// ── teacher side ────────────────────────────────────────────────────────

/// Frozen teacher activations for one sample, at the mapped layers only.
#[derive(Debug, Clone)]
pub struct TeacherSampleTargets {
    pub embeddings: Tensor,
    /// `attn[slot][head]` where slot `m` holds teacher layer `layer_map[m]`.
    pub attn: Vec<Vec<Tensor>>,
    pub hidden: Vec<Tensor>,
    pub logits: Tensor,
}

/// Runs the teacher in evaluation mode (own tape, no gradients) and copies
/// out what distillation needs.
pub fn teacher_targets(
    teacher: &ParamSet,
    cfg: &EncoderConfig,
    batch: &DomainBatch,
    layer_map: &[usize],
    audit: &mut NormAudit,
) -> Result<Vec<TeacherSampleTargets>> {
    let mut tape = Tape::new();
    let vars = teacher.bind(&mut tape, false);
    let mut cursor = 0;
    let enc = encoder::bind(&vars, &mut cursor, cfg);
    let outs = encoder::forward_batch(&mut tape, &enc, cfg, batch)?;
    let mut targets = Vec::with_capacity(outs.len());
    for (out, ids) in outs.into_iter().zip(&batch.token_ids) {
        let l = ids.len();
        for layer in &out.attn {
            for &head in layer {
                audit.matrix_rows(tape.data(head), l);
            }
        }
        let attn = layer_map
            .iter()
            .map(|&n| {
                out.attn[n - 1]
                    .iter()
                    .map(|&a| tape.value(a).clone())
                    .collect()
            })
            .collect();
        let hidden = layer_map
            .iter()
            .map(|&n| tape.value(out.hidden[n - 1]).clone())
            .collect();
        targets.push(TeacherSampleTargets {
            embeddings: tape.value(out.embeddings).clone(),
            attn,
            hidden,
            logits: tape.value(out.logits).clone(),
        });
    }
    Ok(targets)
}

// ── student parameter assembly ──────────────────────────────────────────

fn relational_enabled(run: &RunConfig) -> bool {
    run.mode == Mode::Hrkd && !run.ablations.no_domain_rel
}

pub fn graph_config(run: &RunConfig) -> GraphConfig {
    GraphConfig {
        layers: run.student.num_layers + 1,
        in_dim: run.student.hidden,
        hidden_dim: run.graph_dim,
        heads: run.graph_heads,
    }
}

pub fn aggregate_config(run: &RunConfig) -> AggregateConfig {
    AggregateConfig {
        layers: run.student.num_layers + 1,
        num_domains: run.student.num_domains,
        dim: run.student.hidden,
        self_attention: !run.ablations.no_self_attention,
        comp_agg: !run.ablations.no_comp_agg,
        hierarchical: !run.ablations.no_hierarchical,
    }
}

/// All trainable distillation parameters: student encoder, alignment
/// projections, then (when the relational path is active) graph and
/// compare-aggregate parameters. The student draws from `seed + 1` so its
/// init stream never overlaps the teacher's.
pub fn init_student_params(run: &RunConfig) -> Result<ParamSet> {
    let mut init = ParamInit::new(run.seed.wrapping_add(1));
    let mut ps = ParamSet::new();
    encoder::append_params(&mut ps, &mut init, &run.student)?;
    losses::append_projection_params(
        &mut ps,
        &mut init,
        run.student.hidden,
        run.teacher.hidden,
        run.student.num_layers,
    )?;
    if relational_enabled(run) {
        graph::append_params(&mut ps, &mut init, &graph_config(run))?;
        aggregate::append_params(&mut ps, &mut init, &aggregate_config(run))?;
    }
    Ok(ps)
}

/// Tape bindings for everything in [`init_student_params`] order.
pub struct BoundStudent {
    pub enc: encoder::BoundEncoder,
    pub proj: losses::BoundProjection,
    pub graph_layers: Option<Vec<graph::BoundGraphLayer>>,
    pub agg: Option<aggregate::BoundAggregate>,
}

pub fn bind_student(vars: &[Var], run: &RunConfig) -> BoundStudent {
    let mut cursor = 0;
    let enc = encoder::bind(vars, &mut cursor, &run.student);
    let proj = losses::bind_projection(vars, &mut cursor, run.student.num_layers);
    let (graph_layers, agg) = if relational_enabled(run) {
        let g = graph::bind(vars, &mut cursor, &graph_config(run));
        let a = aggregate::bind(vars, &mut cursor, &aggregate_config(run));
        (Some(g), Some(a))
    } else {
        (None, None)
    };
    debug_assert_eq!(cursor, vars.len());
    BoundStudent {
        enc,
        proj,
        graph_layers,
        agg,
    }
}

// ── one distillation step ───────────────────────────────────────────────

fn batch_mean(tape: &mut Tape, terms: &[Var]) -> Result<Var> {
    let mut acc = None;
    for &t in terms {
        acc = Some(match acc {
            None => t,
            Some(prev) => tape.add(prev, t)?,
        });
    }
    let acc = acc.ok_or_else(|| HarnessError::Data("empty batch".into()))?;
    Ok(tape.scale(acc, 1.0 / terms.len() as f64)?)
}

/// Everything a step exposes for metrics, tracing, and the audit.
pub struct StepValues {
    pub losses: LossBreakdown,
    pub ratios: Vec<Vec<f64>>,
    pub prototypes: Vec<Vec<Vec<f64>>>,
    /// Reference prototypes per layer, flattened `D x F` row-major.
    pub reference_prototypes: Vec<Option<Vec<f64>>>,
    pub aggregated: Vec<Vec<Vec<f64>>>,
    pub alpha_d: Vec<Vec<Vec<f64>>>,
    /// `alpha_h[d][m]`, each of length `m + 1`.
    pub alpha_h: Vec<Vec<Vec<f64>>>,
}

/// Step trace passed to observers.
pub struct StepTrace<'a> {
    pub step: usize,
    pub values: &'a StepValues,
}

pub struct StepLoss {
    pub total: Var,
    pub values: StepValues,
}

/// Builds the full per-step loss graph over one batch per domain.
pub fn build_step_loss(
    tape: &mut Tape,
    bound: &BoundStudent,
    run: &RunConfig,
    batches: &[&DomainBatch],
    teacher: &[Vec<TeacherSampleTargets>],
    audit: &mut NormAudit,
) -> Result<StepLoss> {
    let d_count = run.student.num_domains;
    let m_count = run.student.num_layers;
    if batches.len() != d_count || teacher.len() != d_count {
        return Err(HarnessError::Config(format!(
            "step needs one batch and target set per domain ({d_count})"
        )));
    }

    let mut domain_outputs: Vec<Vec<SampleOutput>> = Vec::with_capacity(d_count);
    let mut embd = Vec::with_capacity(d_count);
    let mut pred = Vec::with_capacity(d_count);
    let mut attn: Vec<Vec<Var>> = vec![Vec::new(); m_count];
    let mut hidn: Vec<Vec<Var>> = vec![Vec::new(); m_count];

    for d in 0..d_count {
        let batch = batches[d];
        let outs = encoder::forward_batch(tape, &bound.enc, &run.student, batch)?;
        let targets = &teacher[d];
        if targets.len() != outs.len() {
            return Err(HarnessError::Config(format!(
                "domain {d}: {} teacher targets for {} samples",
                targets.len(),
                outs.len()
            )));
        }

        let mut embd_terms = Vec::with_capacity(outs.len());
        let mut attn_terms: Vec<Vec<Var>> = vec![Vec::new(); m_count];
        let mut hidn_terms: Vec<Vec<Var>> = vec![Vec::new(); m_count];
        let mut z_s = Vec::with_capacity(outs.len());
        let mut z_t = Vec::with_capacity(outs.len());
        for (out, target) in outs.iter().zip(targets) {
            let l = batch.token_ids[0].len();
            for layer in &out.attn {
                for &head in layer {
                    audit.matrix_rows(tape.data(head), l);
                }
            }
            let e_t = tape.constant(target.embeddings.clone());
            embd_terms.push(losses::embed_loss(tape, out.embeddings, bound.proj.embd, e_t)?);
            for m in 0..m_count {
                let a_t: Vec<Var> = target.attn[m]
                    .iter()
                    .map(|t| tape.constant(t.clone()))
                    .collect();
                attn_terms[m].push(losses::attn_loss(tape, &out.attn[m], &a_t)?);
                let h_t = tape.constant(target.hidden[m].clone());
                hidn_terms[m].push(losses::hidn_loss(
                    tape,
                    out.hidden[m],
                    bound.proj.hidn[m],
                    h_t,
                )?);
            }
            z_s.push(out.logits);
            z_t.push(tape.constant(target.logits.clone()));
        }
        embd.push(batch_mean(tape, &embd_terms)?);
        for m in 0..m_count {
            let a = batch_mean(tape, &attn_terms[m])?;
            attn[m].push(a);
            let h = batch_mean(tape, &hidn_terms[m])?;
            hidn[m].push(h);
        }
        pred.push(losses::pred_loss(tape, &z_s, &z_t, run.temperature)?);
        domain_outputs.push(outs);
    }

    let table = LossVars {
        embd,
        attn,
        hidn,
        pred,
    };

    let mut values = StepValues {
        losses: LossBreakdown {
            embd: vec![],
            attn: vec![],
            hidn: vec![],
            pred: vec![],
            total: 0.0,
        },
        ratios: Vec::new(),
        prototypes: Vec::new(),
        reference_prototypes: Vec::new(),
        aggregated: Vec::new(),
        alpha_d: Vec::new(),
        alpha_h: Vec::new(),
    };

    let total = match run.mode {
        Mode::BaseKd => losses::total_base(tape, &table, run.gamma)?,
        Mode::Hrkd if run.ablations.no_domain_rel => {
            let uniform: Vec<Var> = (0..=m_count)
                .map(|_| tape.constant(Tensor::row(vec![1.0 / d_count as f64; d_count])))
                .collect();
            for &row in &uniform {
                audit.vector(tape.data(row));
            }
            values.ratios = uniform.iter().map(|&r| tape.data(r).to_vec()).collect();
            losses::total_hrkd(tape, &table, &uniform, run.gamma)?
        }
        Mode::Hrkd => {
            let acts: Vec<DomainActivations> = (0..d_count)
                .map(|d| DomainActivations {
                    samples: &domain_outputs[d],
                    masks: &batches[d].attention_mask,
                })
                .collect();
            let protos = prototype::compute_prototypes(tape, &acts, run.detach_prototypes)?;
            let agg_cfg = aggregate_config(run);
            let bound_agg = bound.agg.as_ref().ok_or_else(|| {
                HarnessError::Config("relational path active but no aggregate binding".into())
            })?;
            let agg_set = aggregate::build_aggregated_set(tape, &protos, bound_agg, &agg_cfg)?;

            let mut inputs = Vec::with_capacity(agg_set.ap.len());
            for row in &agg_set.ap {
                inputs.push(tape.concat_rows(row)?);
            }
            let layers = bound.graph_layers.as_ref().ok_or_else(|| {
                HarnessError::Config("relational path active but no graph binding".into())
            })?;
            let ratios = graph::compute_ratios(tape, &inputs, layers)?;

            for &row in &ratios.rows {
                audit.vector(tape.data(row));
            }
            for per_layer in &ratios.first_attn {
                for &alpha in per_layer {
                    audit.matrix_rows(tape.data(alpha), d_count);
                }
            }
            for &alpha in &ratios.second_attn {
                audit.matrix_rows(tape.data(alpha), d_count);
            }
            for a in agg_set.alpha_d.iter().flatten() {
                audit.matrix_rows(tape.data(*a), d_count);
            }
            for per_domain in &agg_set.alpha_h {
                for a in per_domain.iter().flatten() {
                    audit.vector(tape.data(*a));
                }
            }

            values.prototypes = protos
                .layers
                .iter()
                .map(|row| row.iter().map(|&v| tape.data(v).to_vec()).collect())
                .collect();
            values.reference_prototypes = agg_set
                .rp
                .iter()
                .map(|rp| rp.map(|v| tape.data(v).to_vec()))
                .collect();
            values.aggregated = agg_set
                .ap
                .iter()
                .map(|row| row.iter().map(|&v| tape.data(v).to_vec()).collect())
                .collect();
            values.alpha_d = agg_set
                .alpha_d
                .iter()
                .map(|a| match a {
                    Some(v) => tape
                        .data(*v)
                        .chunks(d_count)
                        .map(|c| c.to_vec())
                        .collect(),
                    None => Vec::new(),
                })
                .collect();
            values.alpha_h = (0..d_count)
                .map(|d| {
                    agg_set
                        .alpha_h
                        .iter()
                        .map(|per_domain| match per_domain.get(d).and_then(|a| *a) {
                            Some(v) => tape.data(v).to_vec(),
                            None => Vec::new(),
                        })
                        .collect()
                })
                .collect();
            values.ratios = ratios.rows.iter().map(|&r| tape.data(r).to_vec()).collect();

            losses::total_hrkd(tape, &table, &ratios.rows, run.gamma)?
        }
    };

    values.losses = LossBreakdown::from_tape(tape, &table, total)?;
    Ok(StepLoss { total, values })
}

// ── teacher training ────────────────────────────────────────────────────

pub struct TeacherOutcome {
    pub params: ParamSet,
    /// Per-epoch, per-domain dev accuracy.
    pub dev_accuracy: Vec<Vec<f64>>,
}

/// Multi-task teacher training: shared trunk, per-domain heads, hard-label
/// cross-entropy, domains interleaved round-robin step by step.
pub fn train_teacher(run: &RunConfig, corpus: &Corpus) -> Result<TeacherOutcome> {
    run.validate()?;
    check_domains(run, corpus)?;
    let vocab = Vocabulary::build(corpus, VOCAB_MIN_FREQ);
    check_vocab(&vocab, &run.teacher)?;

    let batches: Vec<Vec<DomainBatch>> = corpus
        .domains
        .iter()
        .enumerate()
        .map(|(d, dom)| make_batches(&dom.train, d, &vocab, run.seq_len, run.batch_size))
        .collect();
    if batches.iter().any(|b| b.is_empty()) {
        return Err(HarnessError::Data("a domain has no training samples".into()));
    }

    let mut params = encoder::init_params(&run.teacher, run.seed)?;
    let total_steps: usize =
        run.teacher_epochs * batches.iter().map(|b| b.len()).sum::<usize>();
    let mut opt = Adam::new(
        AdamConfig {
            lr: run.teacher_lr,
            warmup_steps: total_steps / 10,
            ..AdamConfig::default()
        },
        &params,
    );

    let rounds = batches.iter().map(|b| b.len()).max().unwrap_or(0);
    let mut dev_accuracy = Vec::with_capacity(run.teacher_epochs);
    let mut step = 0usize;
    for _epoch in 0..run.teacher_epochs {
        for round in 0..rounds {
            for domain_batches in &batches {
                if round >= domain_batches.len() {
                    continue;
                }
                let batch = &domain_batches[round];
                step += 1;
                let mut tape = Tape::new();
                let vars = params.bind(&mut tape, true);
                let mut cursor = 0;
                let enc = encoder::bind(&vars, &mut cursor, &run.teacher);
                let outs = encoder::forward_batch(&mut tape, &enc, &run.teacher, batch)?;
                let logits: Vec<Var> = outs.iter().map(|o| o.logits).collect();
                let loss = losses::hard_ce_loss(&mut tape, &logits, &batch.labels)?;
                let loss_value = tape.scalar_value(loss)?;
                if !loss_value.is_finite() {
                    return Err(HarnessError::Diverged(format!(
                        "teacher loss became {loss_value} at step {step}"
                    )));
                }
                tape.backward(loss)?;
                let grads: Vec<Option<Vec<f64>>> = vars
                    .iter()
                    .map(|&v| tape.grad(v).map(|g| g.to_vec()))
                    .collect();
                opt.step(&mut params, &grads)?;
            }
        }
        let eval = evaluate(&params, &run.teacher, corpus, Split::Dev, run)?;
        dev_accuracy.push(eval.per_domain);
    }

    Ok(TeacherOutcome {
        params,
        dev_accuracy,
    })
}

// ── distillation ────────────────────────────────────────────────────────

pub struct DistillOptions<'a> {
    pub metrics_path: Option<PathBuf>,
    pub checkpoint_path: Option<PathBuf>,
    pub on_step: Option<&'a mut dyn FnMut(&StepTrace<'_>)>,
}

impl Default for DistillOptions<'_> {
    fn default() -> Self {
        DistillOptions {
            metrics_path: None,
            checkpoint_path: None,
            on_step: None,
        }
    }
}

#[derive(Debug)]
pub struct DistillOutcome {
    pub params: ParamSet,
    pub summary: RunSummary,
}

fn check_domains(run: &RunConfig, corpus: &Corpus) -> Result<()> {
    if corpus.num_domains() != run.student.num_domains {
        return Err(HarnessError::Config(format!(
            "corpus has {} domains, config expects {}",
            corpus.num_domains(),
            run.student.num_domains
        )));
    }
    Ok(())
}

fn check_vocab(vocab: &Vocabulary, cfg: &EncoderConfig) -> Result<()> {
    if vocab.len() > cfg.vocab_size {
        return Err(HarnessError::Config(format!(
            "vocabulary of {} tokens exceeds configured vocab_size {}",
            vocab.len(),
            cfg.vocab_size
        )));
    }
    Ok(())
}

/// Verifies that a loaded parameter set has exactly the encoder layout the
/// config describes (names and shapes; values are the checkpoint's).
pub fn check_encoder_layout(params: &ParamSet, cfg: &EncoderConfig) -> Result<()> {
    let expected = encoder::init_params(cfg, 0)?;
    if params.len() != expected.len() {
        return Err(HarnessError::Config(format!(
            "checkpoint has {} parameters, config expects {}",
            params.len(),
            expected.len()
        )));
    }
    for (got, want) in params.entries().iter().zip(expected.entries()) {
        if got.name != want.name || got.value.shape != want.value.shape {
            return Err(HarnessError::Config(format!(
                "checkpoint entry {:?} {:?} does not match expected {:?} {:?}",
                got.name, got.value.shape, want.name, want.value.shape
            )));
        }
    }
    Ok(())
}

pub fn distill_student(
    run: &RunConfig,
    corpus: &Corpus,
    teacher: &ParamSet,
    mut opts: DistillOptions<'_>,
) -> Result<DistillOutcome> {
    run.validate()?;
    check_domains(run, corpus)?;
    check_encoder_layout(teacher, &run.teacher)?;
    let layer_map = encoder::layer_map(run.student.num_layers, run.teacher.num_layers)?;
    let vocab = Vocabulary::build(corpus, VOCAB_MIN_FREQ);
    check_vocab(&vocab, &run.teacher)?;
    check_vocab(&vocab, &run.student)?;

    let batches: Vec<Vec<DomainBatch>> = corpus
        .domains
        .iter()
        .enumerate()
        .map(|(d, dom)| make_batches(&dom.train, d, &vocab, run.seq_len, run.batch_size))
        .collect();
    if batches.iter().any(|b| b.is_empty()) {
        return Err(HarnessError::Data("a domain has no training samples".into()));
    }

    let mut params = init_student_params(run)?;
    let steps_per_epoch = batches.iter().map(|b| b.len()).max().unwrap_or(0);
    let total_steps = run.student_epochs * steps_per_epoch;
    let mut opt = Adam::new(
        AdamConfig {
            lr: run.student_lr,
            warmup_steps: total_steps / 10,
            ..AdamConfig::default()
        },
        &params,
    );

    let mut writer = match &opts.metrics_path {
        Some(path) => Some(MetricsWriter::create(path)?),
        None => None,
    };
    let digest = config_digest(&run.student);

    let mut audit = NormAudit::default();
    let mut summary = RunSummary::default();
    let mut step = 0usize;
    for _epoch in 0..run.student_epochs {
        for _round in 0..steps_per_epoch {
            step += 1;
            let chosen: Vec<&DomainBatch> = batches
                .iter()
                .map(|b| &b[(step - 1) % b.len()])
                .collect();

            let mut step_audit = NormAudit::default();
            let teacher_out: Vec<Vec<TeacherSampleTargets>> = chosen
                .iter()
                .map(|batch| {
                    teacher_targets(teacher, &run.teacher, batch, &layer_map, &mut step_audit)
                })
                .collect::<Result<_>>()?;

            let mut tape = Tape::new();
            let vars = params.bind(&mut tape, true);
            let bound = bind_student(&vars, run);
            let step_loss = build_step_loss(
                &mut tape,
                &bound,
                run,
                &chosen,
                &teacher_out,
                &mut step_audit,
            )?;
            let total_value = step_loss.values.losses.total;
            if !total_value.is_finite() {
                return Err(HarnessError::Diverged(format!(
                    "distillation loss became {total_value} at step {step}"
                )));
            }
            tape.backward(step_loss.total)?;
            let grads: Vec<Option<Vec<f64>>> = vars
                .iter()
                .map(|&v| tape.grad(v).map(|g| g.to_vec()))
                .collect();
            drop(tape);
            opt.step(&mut params, &grads)?;
            audit.merge(&step_audit);

            if step == 1 {
                summary.first_total_loss = total_value;
            }
            summary.final_total_loss = total_value;

            let epoch_end = step % steps_per_epoch == 0;
            let dev_accuracy = if epoch_end {
                let eval = evaluate(&params, &run.student, corpus, Split::Dev, run)?;
                Some(eval.per_domain)
            } else {
                None
            };
            if let Some(acc) = &dev_accuracy {
                summary.final_dev_accuracy = acc.clone();
            }

            if let Some(cb) = opts.on_step.as_deref_mut() {
                cb(&StepTrace {
                    step,
                    values: &step_loss.values,
                });
            }
            if let Some(w) = writer.as_mut() {
                w.append(&MetricsRecord {
                    step,
                    losses: step_loss.values.losses.clone(),
                    ratios: step_loss.values.ratios.clone(),
                    alpha_d: step_loss.values.alpha_d.clone(),
                    alpha_h: step_loss.values.alpha_h.clone(),
                    dev_accuracy,
                })?;
            }
        }
        if let Some(path) = &opts.checkpoint_path {
            checkpoint::save(path, &digest, &params)?;
        }
    }

    if let Some(w) = writer {
        w.finish()?;
    }
    if let Some(path) = &opts.checkpoint_path {
        checkpoint::save(path, &digest, &params)?;
    }

    summary.steps = step;
    summary.max_row_sum_dev = audit.max_dev;
    summary.rows_audited = audit.rows;
    Ok(DistillOutcome { params, summary })
}

// ── evaluation ──────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Dev,
    Test,
}

impl std::str::FromStr for Split {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(HarnessError::Config(format!(
                "unknown split {other:?} (expected dev or test)"
            ))),
        }
    }
}

pub struct EvalResult {
    pub per_domain: Vec<f64>,
    pub macro_avg: f64,
    /// `(predicted, label)` pairs per domain, in corpus order.
    pub predictions: Vec<Vec<(usize, usize)>>,
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

/// Argmax-of-logits accuracy per domain plus the macro average. `params`
/// may carry trailing non-encoder entries (projections, graph weights); the
/// encoder prefix is what is evaluated.
pub fn evaluate(
    params: &ParamSet,
    cfg: &EncoderConfig,
    corpus: &Corpus,
    split: Split,
    run: &RunConfig,
) -> Result<EvalResult> {
    check_domains(run, corpus)?;
    let vocab = Vocabulary::build(corpus, VOCAB_MIN_FREQ);
    check_vocab(&vocab, cfg)?;
    let mut per_domain = Vec::with_capacity(corpus.num_domains());
    let mut predictions = Vec::with_capacity(corpus.num_domains());
    for (d, domain) in corpus.domains.iter().enumerate() {
        let samples = match split {
            Split::Dev => &domain.dev,
            Split::Test => &domain.test,
        };
        if samples.is_empty() {
            return Err(HarnessError::Data(format!(
                "domain {d}: empty {split:?} split"
            )));
        }
        let mut correct = 0usize;
        let mut preds = Vec::with_capacity(samples.len());
        for batch in make_batches(samples, d, &vocab, run.seq_len, run.batch_size) {
            let mut tape = Tape::new();
            let vars = params.bind(&mut tape, false);
            let mut cursor = 0;
            let enc = encoder::bind(&vars, &mut cursor, cfg);
            let outs = encoder::forward_batch(&mut tape, &enc, cfg, &batch)?;
            for (out, &label) in outs.iter().zip(&batch.labels) {
                let pred = argmax(tape.data(out.logits));
                if pred == label {
                    correct += 1;
                }
                preds.push((pred, label));
            }
        }
        per_domain.push(correct as f64 / samples.len() as f64);
        predictions.push(preds);
    }
    let macro_avg = per_domain.iter().sum::<f64>() / per_domain.len() as f64;
    Ok(EvalResult {
        per_domain,
        macro_avg,
        predictions,
    })
}
