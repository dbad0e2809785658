//! Encoder tests: an independent straight-line forward pass as the value
//! oracle, a closed-form parameter count, and the masking/shared-trunk
//! contracts.

use hrkd_core::encoder::{
    self, DomainBatch, EncoderConfig, MASK_PENALTY,
};
use hrkd_core::params::ParamSet;
use hrkd_core::tape::Tape;

fn toy_config() -> EncoderConfig {
    EncoderConfig {
        num_layers: 2,
        hidden: 8,
        ffn_hidden: 16,
        heads: 2,
        vocab_size: 23,
        max_len: 6,
        num_domains: 2,
        classes_per_domain: vec![2, 3],
    }
}

// ── straight-line reference implementation (no tape, lookups by name) ────

fn p<'a>(ps: &'a ParamSet, name: &str) -> &'a [f64] {
    &ps.get(name).unwrap_or_else(|| panic!("missing {name}")).data
}

fn mm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for t in 0..k {
                s += a[i * k + t] * b[t * n + j];
            }
            c[i * n + j] = s;
        }
    }
    c
}

fn add_bias(x: &mut [f64], bias: &[f64]) {
    let c = bias.len();
    for (i, v) in x.iter_mut().enumerate() {
        *v += bias[i % c];
    }
}

fn layer_norm_ref(x: &[f64], g: &[f64], b: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        let mean: f64 = row.iter().sum::<f64>() / cols as f64;
        let var: f64 = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
        let inv = 1.0 / (var + 1e-12).sqrt();
        for c in 0..cols {
            out[r * cols + c] = (row[c] - mean) * inv * g[c] + b[c];
        }
    }
    out
}

fn softmax_rows_ref(x: &mut [f64], rows: usize, cols: usize) {
    for r in 0..rows {
        let row = &mut x[r * cols..(r + 1) * cols];
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for v in row.iter_mut() {
            *v = (*v - mx).exp();
            denom += *v;
        }
        for v in row.iter_mut() {
            *v /= denom;
        }
    }
}

fn gelu_ref(x: &mut [f64]) {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    for v in x.iter_mut() {
        *v = 0.5 * *v * (1.0 + (c * (*v + 0.044715 * *v * *v * *v)).tanh());
    }
}

struct RefOutput {
    embeddings: Vec<f64>,
    attn: Vec<Vec<Vec<f64>>>,
    hidden: Vec<Vec<f64>>,
    logits: Vec<f64>,
}

fn reference_forward(
    ps: &ParamSet,
    cfg: &EncoderConfig,
    ids: &[usize],
    mask: &[bool],
    domain: usize,
) -> RefOutput {
    let l = ids.len();
    let h = cfg.hidden;
    let dk = cfg.hidden / cfg.heads;

    let tok = p(ps, "embed.token");
    let pos = p(ps, "embed.pos");
    let mut e = vec![0.0; l * h];
    for (i, &id) in ids.iter().enumerate() {
        for j in 0..h {
            e[i * h + j] = tok[id * h + j] + pos[i * h + j];
        }
    }
    let embeddings = layer_norm_ref(&e, p(ps, "embed.ln.g"), p(ps, "embed.ln.b"), l, h);

    let mut x = embeddings.clone();
    let mut attn_all = Vec::new();
    let mut hidden_all = Vec::new();
    for m in 0..cfg.num_layers {
        let mut layer_attn = Vec::new();
        let mut concat = vec![0.0; l * h];
        for k in 0..cfg.heads {
            let name = |s: &str| format!("layer{m}.attn.h{k}.{s}");
            let mut q = mm(&x, p(ps, &name("wq")), l, h, dk);
            add_bias(&mut q, p(ps, &name("bq")));
            let mut kk = mm(&x, p(ps, &name("wk")), l, h, dk);
            add_bias(&mut kk, p(ps, &name("bk")));
            let mut v = mm(&x, p(ps, &name("wv")), l, h, dk);
            add_bias(&mut v, p(ps, &name("bv")));
            // scores = Q K^T / sqrt(dk) + penalty
            let mut scores = vec![0.0; l * l];
            let scale = 1.0 / (dk as f64).sqrt();
            for i in 0..l {
                for j in 0..l {
                    let mut s = 0.0;
                    for t in 0..dk {
                        s += q[i * dk + t] * kk[j * dk + t];
                    }
                    scores[i * l + j] =
                        s * scale + if mask[j] { 0.0 } else { MASK_PENALTY };
                }
            }
            softmax_rows_ref(&mut scores, l, l);
            let head_out = mm(&scores, &v, l, l, dk);
            for i in 0..l {
                for t in 0..dk {
                    concat[i * h + k * dk + t] = head_out[i * dk + t];
                }
            }
            layer_attn.push(scores);
        }
        let mut o = mm(&concat, p(ps, &format!("layer{m}.attn.wo")), l, h, h);
        add_bias(&mut o, p(ps, &format!("layer{m}.attn.bo")));
        let res1: Vec<f64> = x.iter().zip(&o).map(|(a, b)| a + b).collect();
        let n1 = layer_norm_ref(
            &res1,
            p(ps, &format!("layer{m}.attn.ln.g")),
            p(ps, &format!("layer{m}.attn.ln.b")),
            l,
            h,
        );
        let mut f1 = mm(&n1, p(ps, &format!("layer{m}.ffn.w1")), l, h, cfg.ffn_hidden);
        add_bias(&mut f1, p(ps, &format!("layer{m}.ffn.b1")));
        gelu_ref(&mut f1);
        let mut f2 = mm(&f1, p(ps, &format!("layer{m}.ffn.w2")), l, cfg.ffn_hidden, h);
        add_bias(&mut f2, p(ps, &format!("layer{m}.ffn.b2")));
        let res2: Vec<f64> = n1.iter().zip(&f2).map(|(a, b)| a + b).collect();
        x = layer_norm_ref(
            &res2,
            p(ps, &format!("layer{m}.ffn.ln.g")),
            p(ps, &format!("layer{m}.ffn.ln.b")),
            l,
            h,
        );
        attn_all.push(layer_attn);
        hidden_all.push(x.clone());
    }

    let mut logits = mm(&x[..h], p(ps, &format!("head{domain}.w")), 1, h, cfg.classes_per_domain[domain]);
    add_bias(&mut logits, p(ps, &format!("head{domain}.b")));

    RefOutput {
        embeddings,
        attn: attn_all,
        hidden: hidden_all,
        logits,
    }
}

fn run_forward(
    ps: &ParamSet,
    cfg: &EncoderConfig,
    ids: &[usize],
    mask: &[bool],
    domain: usize,
) -> (Vec<f64>, Vec<Vec<Vec<f64>>>, Vec<Vec<f64>>, Vec<f64>) {
    let mut tape = Tape::new();
    let vars = ps.bind(&mut tape, false);
    let mut cursor = 0;
    let enc = encoder::bind(&vars, &mut cursor, cfg);
    let out = encoder::forward(&mut tape, &enc, cfg, ids, mask, domain).unwrap();
    (
        tape.data(out.embeddings).to_vec(),
        out.attn
            .iter()
            .map(|layer| layer.iter().map(|&a| tape.data(a).to_vec()).collect())
            .collect(),
        out.hidden.iter().map(|&v| tape.data(v).to_vec()).collect(),
        tape.data(out.logits).to_vec(),
    )
}

fn assert_close(a: &[f64], b: &[f64], tol: f64, what: &str) {
    assert_eq!(a.len(), b.len(), "{what}: length mismatch");
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        assert!(
            (x - y).abs() <= tol,
            "{what}[{i}]: {x} vs {y}"
        );
    }
}

#[test]
fn forward_matches_straight_line_reimplementation() {
    let cfg = toy_config();
    let ps = encoder::init_params(&cfg, 2024).unwrap();
    let ids = [2, 7, 19, 4, 0, 0];
    let mask = [true, true, true, true, false, false];

    let expect = reference_forward(&ps, &cfg, &ids, &mask, 1);
    let (emb, attn, hidden, logits) = run_forward(&ps, &cfg, &ids, &mask, 1);

    assert_close(&emb, &expect.embeddings, 1e-10, "embeddings");
    for m in 0..cfg.num_layers {
        for k in 0..cfg.heads {
            assert_close(&attn[m][k], &expect.attn[m][k], 1e-10, "attention");
        }
        assert_close(&hidden[m], &expect.hidden[m], 1e-10, "hidden");
    }
    assert_close(&logits, &expect.logits, 1e-10, "logits");
}

#[test]
fn attention_rows_sum_to_one_even_with_masking() {
    let cfg = toy_config();
    let ps = encoder::init_params(&cfg, 5).unwrap();
    let ids = [1, 2, 3, 9, 9, 9];
    let mask = [true, true, true, false, false, false];
    let (_, attn, _, _) = run_forward(&ps, &cfg, &ids, &mask, 0);
    let l = ids.len();
    for layer in &attn {
        for head in layer {
            for r in 0..l {
                let sum: f64 = head[r * l..(r + 1) * l].iter().sum();
                assert!((sum - 1.0).abs() < 1e-6, "row {r} sums to {sum}");
            }
        }
    }
}

#[test]
fn permuting_masked_positions_leaves_logits_unchanged() {
    let cfg = toy_config();
    let ps = encoder::init_params(&cfg, 6).unwrap();
    // Two masked positions carry different (garbage) token ids.
    let ids_a = [3, 8, 0, 11, 17, 0];
    let ids_b = [3, 8, 0, 17, 11, 0];
    let mask = [true, true, true, false, false, false];
    let (_, _, _, la) = run_forward(&ps, &cfg, &ids_a, &mask, 0);
    let (_, _, _, lb) = run_forward(&ps, &cfg, &ids_b, &mask, 0);
    let bits_a: Vec<u64> = la.iter().map(|v| v.to_bits()).collect();
    let bits_b: Vec<u64> = lb.iter().map(|v| v.to_bits()).collect();
    assert_eq!(bits_a, bits_b);
}

#[test]
fn changing_one_domain_head_never_touches_trunk_or_other_logits() {
    let cfg = toy_config();
    let ps = encoder::init_params(&cfg, 7).unwrap();
    let mut altered = ps.clone();
    for v in altered.get_mut("head1.w").unwrap().data.iter_mut() {
        *v += 0.5;
    }
    for v in altered.get_mut("head1.b").unwrap().data.iter_mut() {
        *v -= 0.25;
    }
    let ids = [1, 4, 6];
    let mask = [true, true, true];
    let (emb_a, _, hid_a, logit_a) = run_forward(&ps, &cfg, &ids, &mask, 0);
    let (emb_b, _, hid_b, logit_b) = run_forward(&altered, &cfg, &ids, &mask, 0);
    assert_eq!(emb_a, emb_b);
    assert_eq!(hid_a, hid_b);
    assert_eq!(logit_a, logit_b);
    // The altered head must change its own domain's logits.
    let (_, _, _, own_a) = run_forward(&ps, &cfg, &ids, &mask, 1);
    let (_, _, _, own_b) = run_forward(&altered, &cfg, &ids, &mask, 1);
    assert_ne!(own_a, own_b);
}

#[test]
fn parameter_count_matches_closed_form() {
    // Independently derived: embeddings + per-layer attention/FFN/norms + heads.
    let cfg = EncoderConfig {
        num_layers: 2,
        hidden: 32,
        ffn_hidden: 64,
        heads: 2,
        vocab_size: 100,
        max_len: 16,
        num_domains: 3,
        classes_per_domain: vec![2, 2, 2],
    };
    let h = cfg.hidden;
    let dk = h / cfg.heads;
    let embeddings = cfg.vocab_size * h + cfg.max_len * h + 2 * h;
    let per_layer = cfg.heads * 3 * (h * dk + dk)   // qkv with biases
        + h * h + h                                  // output projection
        + 2 * h                                      // attention layer norm
        + h * cfg.ffn_hidden + cfg.ffn_hidden        // ffn in
        + cfg.ffn_hidden * h + h                     // ffn out
        + 2 * h;                                     // ffn layer norm
    let heads: usize = cfg
        .classes_per_domain
        .iter()
        .map(|&c| h * c + c)
        .sum();
    let expect = embeddings + cfg.num_layers * per_layer + heads;

    let ps = encoder::init_params(&cfg, 1).unwrap();
    assert_eq!(ps.value_count(), expect);
}

#[test]
fn forward_is_deterministic() {
    let cfg = toy_config();
    let ps = encoder::init_params(&cfg, 11).unwrap();
    let ids = [5, 9, 13];
    let mask = [true, true, true];
    let (a, _, _, la) = run_forward(&ps, &cfg, &ids, &mask, 0);
    let (b, _, _, lb) = run_forward(&ps, &cfg, &ids, &mask, 0);
    assert_eq!(a, b);
    assert_eq!(la, lb);
}

#[test]
fn batch_forward_validates_token_range() {
    let cfg = toy_config();
    let ps = encoder::init_params(&cfg, 12).unwrap();
    let mut tape = Tape::new();
    let vars = ps.bind(&mut tape, false);
    let mut cursor = 0;
    let enc = encoder::bind(&vars, &mut cursor, &cfg);
    let batch = DomainBatch {
        domain_id: 0,
        token_ids: vec![vec![1, 99]],
        labels: vec![0],
        attention_mask: vec![vec![true, true]],
    };
    let err = encoder::forward_batch(&mut tape, &enc, &cfg, &batch).unwrap_err();
    assert!(matches!(err, hrkd_core::CoreError::Domain(_)));
}
