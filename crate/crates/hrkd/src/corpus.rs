//! Corpora: synthetic generation, TSV ingestion, vocabulary, batching.
//!
//! The synthetic generator plants class-specific pattern tokens in otherwise
//! noisy word sequences, so every label is a deterministic function of the
//! tokens present and a rule-based classifier reaches 100% by construction.
//! A `sharing` knob controls what fraction of each class's pattern pool (and
//! of the noise pool) is common across domains, which makes cross-domain
//! transfer real and tunable: at 0 the domains use pairwise-disjoint
//! vocabularies, at 1 they draw from identical pools.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use hrkd_core::encoder::DomainBatch;
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub text: String,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DomainData {
    pub name: String,
    pub train: Vec<Sample>,
    pub dev: Vec<Sample>,
    pub test: Vec<Sample>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub domains: Vec<DomainData>,
}

impl Corpus {
    pub fn num_domains(&self) -> usize {
        self.domains.len()
    }
}

// ── synthetic generation ────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub num_domains: usize,
    pub classes: usize,
    /// Total distinct word types available to the generator.
    pub vocab: usize,
    /// Fraction of pattern and noise pools shared across domains, in [0, 1].
    pub sharing: f64,
    pub seed: u64,
    pub train_per_domain: usize,
    pub dev_per_domain: usize,
    pub test_per_domain: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
    /// Pattern tokens planted per sample.
    pub pattern_tokens: usize,
    /// Words per (domain, class) pattern pool and per noise pool.
    pub pool_size: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            num_domains: 3,
            classes: 2,
            vocab: 512,
            sharing: 0.5,
            seed: 0,
            train_per_domain: 2000,
            dev_per_domain: 300,
            test_per_domain: 300,
            min_tokens: 10,
            max_tokens: 24,
            pattern_tokens: 5,
            pool_size: 8,
        }
    }
}

fn word(i: usize) -> String {
    format!("w{i:05}")
}

/// Word-index pools. `pattern[d][c]` and `noise[d]` are the effective pools a
/// domain draws from; sharing decides how much of each comes from the common
/// block.
pub struct Pools {
    pub pattern: Vec<Vec<Vec<usize>>>,
    pub noise: Vec<Vec<usize>>,
}

pub fn build_pools(cfg: &GenConfig) -> Result<Pools> {
    if !(0.0..=1.0).contains(&cfg.sharing) {
        return Err(HarnessError::Config(format!(
            "sharing must lie in [0, 1], got {}",
            cfg.sharing
        )));
    }
    if cfg.num_domains == 0 || cfg.classes < 2 || cfg.pool_size == 0 {
        return Err(HarnessError::Config(
            "generator needs at least 1 domain, 2 classes, and a positive pool size".into(),
        ));
    }
    if cfg.min_tokens == 0 || cfg.min_tokens > cfg.max_tokens {
        return Err(HarnessError::Config(format!(
            "token range {}..={} is invalid",
            cfg.min_tokens, cfg.max_tokens
        )));
    }
    let p = cfg.pool_size;
    let shared_pattern = cfg.classes * p;
    let private_pattern = cfg.num_domains * cfg.classes * p;
    let shared_noise = p * 4;
    let private_noise = cfg.num_domains * p * 4;
    let needed = shared_pattern + private_pattern + shared_noise + private_noise;
    if needed > cfg.vocab {
        return Err(HarnessError::Config(format!(
            "vocab of {} words is too small for the requested pools ({needed} needed)",
            cfg.vocab
        )));
    }

    // Word-index layout: [shared patterns | private patterns | shared noise | private noise].
    let shared_of = |c: usize| -> Vec<usize> { (c * p..(c + 1) * p).collect() };
    let private_of = |d: usize, c: usize| -> Vec<usize> {
        let base = shared_pattern + (d * cfg.classes + c) * p;
        (base..base + p).collect()
    };
    let noise_shared: Vec<usize> =
        (shared_pattern + private_pattern..shared_pattern + private_pattern + shared_noise).collect();
    let noise_private = |d: usize| -> Vec<usize> {
        let base = shared_pattern + private_pattern + shared_noise + d * p * 4;
        (base..base + p * 4).collect()
    };

    let take_shared = ((cfg.sharing * p as f64).round() as usize).min(p);
    let take_shared_noise = ((cfg.sharing * shared_noise as f64).round() as usize).min(shared_noise);

    let pattern = (0..cfg.num_domains)
        .map(|d| {
            (0..cfg.classes)
                .map(|c| {
                    let mut pool: Vec<usize> =
                        shared_of(c).into_iter().take(take_shared).collect();
                    pool.extend(private_of(d, c).into_iter().take(p - take_shared));
                    pool
                })
                .collect()
        })
        .collect();
    let noise = (0..cfg.num_domains)
        .map(|d| {
            let mut pool: Vec<usize> = noise_shared.iter().copied().take(take_shared_noise).collect();
            pool.extend(noise_private(d).into_iter().take(shared_noise - take_shared_noise));
            pool
        })
        .collect();
    Ok(Pools { pattern, noise })
}

fn rng_below(rng: &mut ChaCha8Rng, n: usize) -> usize {
    (rng.next_u64() % n as u64) as usize
}

pub fn generate_synthetic_corpus(cfg: &GenConfig) -> Result<Corpus> {
    let pools = build_pools(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let make_sample = |rng: &mut ChaCha8Rng, d: usize| -> Sample {
        let label = rng_below(rng, cfg.classes);
        let len = cfg.min_tokens + rng_below(rng, cfg.max_tokens - cfg.min_tokens + 1);
        let k = cfg.pattern_tokens.min(len);
        // Choose k distinct positions for pattern tokens.
        let mut positions: Vec<usize> = (0..len).collect();
        for i in 0..k {
            let j = i + rng_below(rng, len - i);
            positions.swap(i, j);
        }
        let pattern_at: BTreeSet<usize> = positions[..k].iter().copied().collect();
        let words: Vec<String> = (0..len)
            .map(|pos| {
                let pool = if pattern_at.contains(&pos) {
                    &pools.pattern[d][label]
                } else {
                    &pools.noise[d]
                };
                word(pool[rng_below(rng, pool.len())])
            })
            .collect();
        Sample {
            text: words.join(" "),
            label,
        }
    };

    let domains = (0..cfg.num_domains)
        .map(|d| {
            let split = |rng: &mut ChaCha8Rng, n: usize| -> Vec<Sample> {
                (0..n).map(|_| make_sample(rng, d)).collect()
            };
            DomainData {
                name: format!("domain{d}"),
                train: split(&mut rng, cfg.train_per_domain),
                dev: split(&mut rng, cfg.dev_per_domain),
                test: split(&mut rng, cfg.test_per_domain),
            }
        })
        .collect();
    Ok(Corpus { domains })
}

/// The planted-pattern classifier: counts pattern-pool hits per class. By
/// construction only the true label's pool appears in a sample.
pub fn pattern_classify(pools: &Pools, domain: usize, text: &str) -> Option<usize> {
    let sets: Vec<BTreeSet<String>> = pools.pattern[domain]
        .iter()
        .map(|pool| pool.iter().map(|&i| word(i)).collect())
        .collect();
    let mut counts = vec![0usize; sets.len()];
    for token in text.split_whitespace() {
        for (c, set) in sets.iter().enumerate() {
            if set.contains(token) {
                counts[c] += 1;
            }
        }
    }
    let best = counts.iter().max().copied()?;
    if best == 0 {
        return None;
    }
    let winners: Vec<usize> = (0..counts.len()).filter(|&c| counts[c] == best).collect();
    if winners.len() == 1 {
        Some(winners[0])
    } else {
        None
    }
}

// ── few-shot subsampling ────────────────────────────────────────────────

/// Keeps the first `ceil(rate * n)` training samples per domain; dev and
/// test splits pass through untouched.
pub fn subsample(corpus: &Corpus, rate: f64) -> Result<Corpus> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(HarnessError::Config(format!(
            "sample rate must lie in (0, 1], got {rate}"
        )));
    }
    let domains = corpus
        .domains
        .iter()
        .map(|d| {
            let keep = ((rate * d.train.len() as f64).ceil() as usize).min(d.train.len());
            DomainData {
                name: d.name.clone(),
                train: d.train[..keep].to_vec(),
                dev: d.dev.clone(),
                test: d.test.clone(),
            }
        })
        .collect();
    Ok(Corpus { domains })
}

// ── TSV round trip ──────────────────────────────────────────────────────

pub fn write_tsv(corpus: &Corpus, train: &Path, dev: &Path, test: &Path) -> Result<()> {
    for (path, pick) in [
        (train, 0usize),
        (dev, 1),
        (test, 2),
    ] {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        for domain in &corpus.domains {
            let split = match pick {
                0 => &domain.train,
                1 => &domain.dev,
                _ => &domain.test,
            };
            for sample in split {
                writeln!(file, "{}\t{}\t{}", domain.name, sample.label, sample.text)?;
            }
        }
    }
    Ok(())
}

fn parse_rows(path: &Path) -> Result<Vec<(String, usize, String)>> {
    let file = std::fs::File::open(path)
        .map_err(|e| HarnessError::Data(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let mut parts = line.splitn(3, '\t');
        let (domain, label, text) = match (parts.next(), parts.next(), parts.next()) {
            (Some(d), Some(l), Some(t)) if !d.is_empty() => (d, l, t),
            _ => {
                return Err(HarnessError::Data(format!(
                    "{}: line {}: expected domain<TAB>label<TAB>text",
                    path.display(),
                    idx + 1
                )))
            }
        };
        let label: usize = label.parse().map_err(|_| {
            HarnessError::Data(format!(
                "{}: line {}: label {label:?} is not a non-negative integer",
                path.display(),
                idx + 1
            ))
        })?;
        rows.push((domain.to_string(), label, text.to_string()));
    }
    if rows.is_empty() {
        return Err(HarnessError::Data(format!(
            "{}: no samples",
            path.display()
        )));
    }
    Ok(rows)
}

/// Reads `domain<TAB>label<TAB>text` rows for each split. Domains are defined
/// by the train split, in first-appearance order; dev/test rows naming an
/// unknown domain are an error.
pub fn ingest_tsv(train: &Path, dev: &Path, test: &Path) -> Result<Corpus> {
    let train_rows = parse_rows(train)?;
    let mut order: Vec<String> = Vec::new();
    for (domain, _, _) in &train_rows {
        if !order.contains(domain) {
            order.push(domain.clone());
        }
    }
    let index: HashMap<&str, usize> = order
        .iter()
        .enumerate()
        .map(|(i, d)| (d.as_str(), i))
        .collect();

    let mut domains: Vec<DomainData> = order
        .iter()
        .map(|name| DomainData {
            name: name.clone(),
            train: Vec::new(),
            dev: Vec::new(),
            test: Vec::new(),
        })
        .collect();
    for (domain, label, text) in train_rows {
        let d = index[domain.as_str()];
        domains[d].train.push(Sample { text, label });
    }
    for (path, pick) in [(dev, 1usize), (test, 2)] {
        for (domain, label, text) in parse_rows(path)? {
            let d = *index.get(domain.as_str()).ok_or_else(|| {
                HarnessError::Data(format!(
                    "{}: unknown domain {domain:?} (not present in the train split)",
                    path.display()
                ))
            })?;
            let sample = Sample { text, label };
            if pick == 1 {
                domains[d].dev.push(sample);
            } else {
                domains[d].test.push(sample);
            }
        }
    }
    Ok(Corpus { domains })
}

// ── vocabulary and batching ─────────────────────────────────────────────

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const CLS: usize = 2;

/// Whitespace vocabulary built from the train splits: tokens seen at least
/// `min_freq` times, ordered by descending frequency then lexicographically,
/// after the three specials.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn build(corpus: &Corpus, min_freq: usize) -> Self {
        let mut freq: HashMap<&str, usize> = HashMap::new();
        for domain in &corpus.domains {
            for sample in &domain.train {
                for token in sample.text.split_whitespace() {
                    *freq.entry(token).or_insert(0) += 1;
                }
            }
        }
        let mut candidates: Vec<(&str, usize)> = freq
            .into_iter()
            .filter(|&(_, n)| n >= min_freq)
            .collect();
        candidates.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

        let mut tokens = vec!["[PAD]".to_string(), "[UNK]".to_string(), "[CLS]".to_string()];
        tokens.extend(candidates.into_iter().map(|(t, _)| t.to_string()));
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id_of(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// `[CLS]`-prefixed ids padded to `seq_len`, plus the attention mask.
    pub fn encode(&self, text: &str, seq_len: usize) -> (Vec<usize>, Vec<bool>) {
        let mut ids = vec![CLS];
        for token in text.split_whitespace() {
            if ids.len() == seq_len {
                break;
            }
            ids.push(self.id_of(token));
        }
        let used = ids.len();
        ids.resize(seq_len, PAD);
        let mut mask = vec![true; used];
        mask.resize(seq_len, false);
        (ids, mask)
    }
}

/// Splits one domain's samples into in-order batches.
pub fn make_batches(
    samples: &[Sample],
    domain_id: usize,
    vocab: &Vocabulary,
    seq_len: usize,
    batch_size: usize,
) -> Vec<DomainBatch> {
    samples
        .chunks(batch_size)
        .map(|chunk| {
            let mut token_ids = Vec::with_capacity(chunk.len());
            let mut attention_mask = Vec::with_capacity(chunk.len());
            let mut labels = Vec::with_capacity(chunk.len());
            for sample in chunk {
                let (ids, mask) = vocab.encode(&sample.text, seq_len);
                token_ids.push(ids);
                attention_mask.push(mask);
                labels.push(sample.label);
            }
            DomainBatch {
                domain_id,
                token_ids,
                labels,
                attention_mask,
            }
        })
        .collect()
}
