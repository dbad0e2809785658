//! Miniature BERT-style transformer encoder.
//!
//! The encoder exposes everything distillation needs: post-softmax per-head
//! attention matrices, per-layer hidden states, the embedding output, and
//! per-domain classification logits. The trunk (embeddings and transformer
//! layers) is shared across domains; each domain owns only its prediction
//! head over the first token's final hidden state.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::params::{ParamInit, ParamSet};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Standard deviation for weight initialization.
pub const WEIGHT_STD: f64 = 0.02;
/// Layer-norm stabilizer.
pub const LN_EPS: f64 = 1e-12;
/// Additive pre-softmax score for masked key positions.
pub const MASK_PENALTY: f64 = -1e9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub hidden: usize,
    pub ffn_hidden: usize,
    pub heads: usize,
    pub vocab_size: usize,
    pub max_len: usize,
    pub num_domains: usize,
    pub classes_per_domain: Vec<usize>,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0
            || self.hidden == 0
            || self.ffn_hidden == 0
            || self.heads == 0
            || self.vocab_size == 0
        {
            return Err(CoreError::Config("encoder extents must be positive".into()));
        }
        if self.hidden % self.heads != 0 {
            return Err(CoreError::Config(alloc::format!(
                "hidden size {} not divisible by {} heads",
                self.hidden,
                self.heads
            )));
        }
        if self.max_len < 1 {
            return Err(CoreError::Config("max_len must be at least 1".into()));
        }
        if self.num_domains < 1 {
            return Err(CoreError::Config("num_domains must be at least 1".into()));
        }
        if self.classes_per_domain.len() != self.num_domains {
            return Err(CoreError::Config(alloc::format!(
                "classes_per_domain has {} entries for {} domains",
                self.classes_per_domain.len(),
                self.num_domains
            )));
        }
        if self.classes_per_domain.iter().any(|&c| c < 2) {
            return Err(CoreError::Config(
                "every domain needs at least 2 classes".into(),
            ));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }
}

/// Tokenized samples plus labels for one domain.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainBatch {
    pub domain_id: usize,
    pub token_ids: Vec<Vec<usize>>,
    pub labels: Vec<usize>,
    pub attention_mask: Vec<Vec<bool>>,
}

impl DomainBatch {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    pub fn validate(&self, cfg: &EncoderConfig) -> Result<()> {
        if self.domain_id >= cfg.num_domains {
            return Err(CoreError::Domain(alloc::format!(
                "domain id {} out of range for {} domains",
                self.domain_id,
                cfg.num_domains
            )));
        }
        if self.token_ids.len() != self.labels.len()
            || self.token_ids.len() != self.attention_mask.len()
        {
            return Err(CoreError::Contract(
                "batch fields have inconsistent lengths".into(),
            ));
        }
        for (ids, mask) in self.token_ids.iter().zip(&self.attention_mask) {
            if ids.len() != mask.len() || ids.is_empty() || ids.len() > cfg.max_len {
                return Err(CoreError::Contract(alloc::format!(
                    "sequence length {} invalid for max_len {}",
                    ids.len(),
                    cfg.max_len
                )));
            }
            if let Some(&bad) = ids.iter().find(|&&t| t >= cfg.vocab_size) {
                return Err(CoreError::Domain(alloc::format!(
                    "token id {bad} out of range for vocab size {}",
                    cfg.vocab_size
                )));
            }
        }
        Ok(())
    }
}

/// Uniform teacher/student layer matching: student layer `m` distills from
/// teacher layer `m * (N / M)` (both 1-based). Index `i` of the returned map
/// holds the teacher layer for student layer `i + 1`.
pub fn layer_map(student_layers: usize, teacher_layers: usize) -> Result<Vec<usize>> {
    if student_layers == 0 || teacher_layers == 0 {
        return Err(CoreError::Config("layer counts must be positive".into()));
    }
    if teacher_layers % student_layers != 0 {
        return Err(CoreError::Config(alloc::format!(
            "uniform layer matching undefined: teacher has {teacher_layers} layers, \
             not divisible by student's {student_layers}"
        )));
    }
    let stride = teacher_layers / student_layers;
    Ok((1..=student_layers).map(|m| m * stride).collect())
}

// ── parameters ──────────────────────────────────────────────────────────

/// Appends all encoder parameters to `ps` in the fixed layout order that
/// [`bind`] consumes.
pub fn append_params(ps: &mut ParamSet, init: &mut ParamInit, cfg: &EncoderConfig) -> Result<()> {
    cfg.validate()?;
    let h = cfg.hidden;
    let dk = cfg.head_dim();
    ps.push(
        "embed.token",
        init.normal_tensor(vec![cfg.vocab_size, h], WEIGHT_STD),
    )?;
    ps.push(
        "embed.pos",
        init.normal_tensor(vec![cfg.max_len, h], WEIGHT_STD),
    )?;
    ps.push("embed.ln.g", init.ones(vec![h]))?;
    ps.push("embed.ln.b", init.zeros(vec![h]))?;
    for m in 0..cfg.num_layers {
        for k in 0..cfg.heads {
            ps.push(
                alloc::format!("layer{m}.attn.h{k}.wq"),
                init.normal_tensor(vec![h, dk], WEIGHT_STD),
            )?;
            ps.push(alloc::format!("layer{m}.attn.h{k}.bq"), init.zeros(vec![dk]))?;
            ps.push(
                alloc::format!("layer{m}.attn.h{k}.wk"),
                init.normal_tensor(vec![h, dk], WEIGHT_STD),
            )?;
            ps.push(alloc::format!("layer{m}.attn.h{k}.bk"), init.zeros(vec![dk]))?;
            ps.push(
                alloc::format!("layer{m}.attn.h{k}.wv"),
                init.normal_tensor(vec![h, dk], WEIGHT_STD),
            )?;
            ps.push(alloc::format!("layer{m}.attn.h{k}.bv"), init.zeros(vec![dk]))?;
        }
        ps.push(
            alloc::format!("layer{m}.attn.wo"),
            init.normal_tensor(vec![h, h], WEIGHT_STD),
        )?;
        ps.push(alloc::format!("layer{m}.attn.bo"), init.zeros(vec![h]))?;
        ps.push(alloc::format!("layer{m}.attn.ln.g"), init.ones(vec![h]))?;
        ps.push(alloc::format!("layer{m}.attn.ln.b"), init.zeros(vec![h]))?;
        ps.push(
            alloc::format!("layer{m}.ffn.w1"),
            init.normal_tensor(vec![h, cfg.ffn_hidden], WEIGHT_STD),
        )?;
        ps.push(alloc::format!("layer{m}.ffn.b1"), init.zeros(vec![cfg.ffn_hidden]))?;
        ps.push(
            alloc::format!("layer{m}.ffn.w2"),
            init.normal_tensor(vec![cfg.ffn_hidden, h], WEIGHT_STD),
        )?;
        ps.push(alloc::format!("layer{m}.ffn.b2"), init.zeros(vec![h]))?;
        ps.push(alloc::format!("layer{m}.ffn.ln.g"), init.ones(vec![h]))?;
        ps.push(alloc::format!("layer{m}.ffn.ln.b"), init.zeros(vec![h]))?;
    }
    for (d, &classes) in cfg.classes_per_domain.iter().enumerate() {
        ps.push(
            alloc::format!("head{d}.w"),
            init.normal_tensor(vec![h, classes], WEIGHT_STD),
        )?;
        ps.push(alloc::format!("head{d}.b"), init.zeros(vec![classes]))?;
    }
    Ok(())
}

/// Fresh deterministic parameter set. Same seed, same bits.
pub fn init_params(cfg: &EncoderConfig, seed: u64) -> Result<ParamSet> {
    let mut ps = ParamSet::new();
    let mut init = ParamInit::new(seed);
    append_params(&mut ps, &mut init, cfg)?;
    Ok(ps)
}

#[derive(Debug, Clone)]
pub struct BoundHead {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
}

#[derive(Debug, Clone)]
pub struct BoundLayer {
    pub heads: Vec<BoundHead>,
    pub wo: Var,
    pub bo: Var,
    pub ln1_g: Var,
    pub ln1_b: Var,
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
    pub ln2_g: Var,
    pub ln2_b: Var,
}

/// Tape handles for one encoder's parameters.
#[derive(Debug, Clone)]
pub struct BoundEncoder {
    pub token: Var,
    pub pos: Var,
    pub emb_ln_g: Var,
    pub emb_ln_b: Var,
    pub layers: Vec<BoundLayer>,
    pub domain_heads: Vec<(Var, Var)>,
}

/// Walks `vars` from `*cursor`, consuming parameters in [`append_params`]
/// order.
pub fn bind(vars: &[Var], cursor: &mut usize, cfg: &EncoderConfig) -> BoundEncoder {
    let mut next = || {
        let v = vars[*cursor];
        *cursor += 1;
        v
    };
    let token = next();
    let pos = next();
    let emb_ln_g = next();
    let emb_ln_b = next();
    let mut layers = Vec::with_capacity(cfg.num_layers);
    for _ in 0..cfg.num_layers {
        let mut heads = Vec::with_capacity(cfg.heads);
        for _ in 0..cfg.heads {
            heads.push(BoundHead {
                wq: next(),
                bq: next(),
                wk: next(),
                bk: next(),
                wv: next(),
                bv: next(),
            });
        }
        layers.push(BoundLayer {
            heads,
            wo: next(),
            bo: next(),
            ln1_g: next(),
            ln1_b: next(),
            w1: next(),
            b1: next(),
            w2: next(),
            b2: next(),
            ln2_g: next(),
            ln2_b: next(),
        });
    }
    let domain_heads = (0..cfg.num_domains).map(|_| (next(), next())).collect();
    BoundEncoder {
        token,
        pos,
        emb_ln_g,
        emb_ln_b,
        layers,
        domain_heads,
    }
}

/// One sample's exposed activations.
#[derive(Debug, Clone)]
pub struct SampleOutput {
    /// Embedding-layer output, `[L x hidden]`.
    pub embeddings: Var,
    /// Post-softmax attention, `attn[layer][head]`, each `[L x L]`.
    pub attn: Vec<Vec<Var>>,
    /// Transformer layer outputs, `[L x hidden]` each.
    pub hidden: Vec<Var>,
    /// Domain-head logits over the first token, `[1 x classes]`.
    pub logits: Var,
}

/// Forward pass for one sample.
pub fn forward(
    tape: &mut Tape,
    enc: &BoundEncoder,
    cfg: &EncoderConfig,
    token_ids: &[usize],
    mask: &[bool],
    domain_id: usize,
) -> Result<SampleOutput> {
    if domain_id >= cfg.num_domains {
        return Err(CoreError::Domain(alloc::format!(
            "domain id {domain_id} out of range for {} domains",
            cfg.num_domains
        )));
    }
    let l = token_ids.len();
    if l == 0 || l > cfg.max_len || mask.len() != l {
        return Err(CoreError::Contract(alloc::format!(
            "sequence of length {l} with mask length {} under max_len {}",
            mask.len(),
            cfg.max_len
        )));
    }

    let tok_e = tape.gather(enc.token, token_ids)?;
    let positions: Vec<usize> = (0..l).collect();
    let pos_e = tape.gather(enc.pos, &positions)?;
    let summed = tape.add(tok_e, pos_e)?;
    let embeddings = tape.layer_norm(summed, enc.emb_ln_g, enc.emb_ln_b, LN_EPS)?;

    // Additive penalty on masked keys, one [L x L] constant per sample.
    let mut pen = vec![0.0; l * l];
    for i in 0..l {
        for (j, &keep) in mask.iter().enumerate() {
            if !keep {
                pen[i * l + j] = MASK_PENALTY;
            }
        }
    }
    let penalty = tape.constant(Tensor::new(vec![l, l], pen)?);

    let scale = 1.0 / libm::sqrt(cfg.head_dim() as f64);
    let mut x = embeddings;
    let mut attn = Vec::with_capacity(cfg.num_layers);
    let mut hidden = Vec::with_capacity(cfg.num_layers);
    for layer in &enc.layers {
        let mut layer_attn = Vec::with_capacity(layer.heads.len());
        let mut head_outs = Vec::with_capacity(layer.heads.len());
        for head in &layer.heads {
            let q = tape.matmul(x, head.wq)?;
            let q = tape.add_row(q, head.bq)?;
            let k = tape.matmul(x, head.wk)?;
            let k = tape.add_row(k, head.bk)?;
            let v = tape.matmul(x, head.wv)?;
            let v = tape.add_row(v, head.bv)?;
            let kt = tape.transpose(k)?;
            let scores = tape.matmul(q, kt)?;
            let scores = tape.scale(scores, scale)?;
            let scores = tape.add(scores, penalty)?;
            let a = tape.softmax(scores, 1)?;
            layer_attn.push(a);
            head_outs.push(tape.matmul(a, v)?);
        }
        let merged = tape.concat_cols(&head_outs)?;
        let o = tape.matmul(merged, layer.wo)?;
        let o = tape.add_row(o, layer.bo)?;
        let res1 = tape.add(x, o)?;
        let n1 = tape.layer_norm(res1, layer.ln1_g, layer.ln1_b, LN_EPS)?;
        let f1 = tape.matmul(n1, layer.w1)?;
        let f1 = tape.add_row(f1, layer.b1)?;
        let act = tape.gelu(f1)?;
        let f2 = tape.matmul(act, layer.w2)?;
        let f2 = tape.add_row(f2, layer.b2)?;
        let res2 = tape.add(n1, f2)?;
        x = tape.layer_norm(res2, layer.ln2_g, layer.ln2_b, LN_EPS)?;
        attn.push(layer_attn);
        hidden.push(x);
    }

    let (head_w, head_b) = enc.domain_heads[domain_id];
    let first = tape.slice_rows(x, 0, 1)?;
    let logits = tape.matmul(first, head_w)?;
    let logits = tape.add_row(logits, head_b)?;

    Ok(SampleOutput {
        embeddings,
        attn,
        hidden,
        logits,
    })
}

/// Forward pass for a whole batch, one [`SampleOutput`] per sample.
pub fn forward_batch(
    tape: &mut Tape,
    enc: &BoundEncoder,
    cfg: &EncoderConfig,
    batch: &DomainBatch,
) -> Result<Vec<SampleOutput>> {
    batch.validate(cfg)?;
    batch
        .token_ids
        .iter()
        .zip(&batch.attention_mask)
        .map(|(ids, mask)| forward(tape, enc, cfg, ids, mask, batch.domain_id))
        .collect()
}
