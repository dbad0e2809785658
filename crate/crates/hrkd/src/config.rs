//! Run configuration: desk-scale defaults, TOML loading, digests.

use std::path::Path;

use hrkd_core::encoder::EncoderConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

/// Which objective drives distillation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Plain multi-domain distillation: every feature term weighted 1,
    /// prediction term weighted by gamma.
    BaseKd,
    /// Ratio-weighted distillation through prototypes, compare-aggregate,
    /// and the domain-relational graphs.
    Hrkd,
}

impl std::str::FromStr for Mode {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base_kd" | "base-kd" => Ok(Mode::BaseKd),
            "hrkd" => Ok(Mode::Hrkd),
            other => Err(HarnessError::Config(format!(
                "unknown mode {other:?} (expected base_kd or hrkd)"
            ))),
        }
    }
}

/// The four ablation switches. Each disables exactly one computation path.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablations {
    /// References become the raw prototypes.
    pub no_self_attention: bool,
    /// Aggregation becomes a plain layerwise mean.
    pub no_comp_agg: bool,
    /// Each graph sees only its own layer's prototypes.
    pub no_hierarchical: bool,
    /// No graphs at all; ratios are uniform 1/D.
    pub no_domain_rel: bool,
}

impl Ablations {
    pub fn parse_list(s: &str) -> Result<Self> {
        let mut out = Ablations::default();
        for item in s.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match item {
                "no_self_attention" => out.no_self_attention = true,
                "no_comp_agg" => out.no_comp_agg = true,
                "no_hierarchical" => out.no_hierarchical = true,
                "no_domain_rel" => out.no_domain_rel = true,
                other => {
                    return Err(HarnessError::Config(format!(
                        "unknown ablation {other:?}"
                    )))
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub teacher: EncoderConfig,
    pub student: EncoderConfig,
    /// Head count K of the first graph-attention layer.
    pub graph_heads: usize,
    /// Intermediate width F' of the first graph-attention layer.
    pub graph_dim: usize,
    pub gamma: f64,
    pub temperature: f64,
    pub teacher_lr: f64,
    pub student_lr: f64,
    pub teacher_epochs: usize,
    pub student_epochs: usize,
    pub batch_size: usize,
    pub seq_len: usize,
    pub seed: u64,
    /// Fraction of each domain's training split to use (taken from the front).
    pub sample_rate: f64,
    pub mode: Mode,
    pub ablations: Ablations,
    /// Sever gradients flowing from the relational machinery into the encoder.
    pub detach_prototypes: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let domains = 3;
        let classes = vec![2; domains];
        RunConfig {
            teacher: EncoderConfig {
                num_layers: 4,
                hidden: 64,
                ffn_hidden: 128,
                heads: 2,
                vocab_size: 512,
                max_len: 32,
                num_domains: domains,
                classes_per_domain: classes.clone(),
            },
            student: EncoderConfig {
                num_layers: 2,
                hidden: 32,
                ffn_hidden: 64,
                heads: 2,
                vocab_size: 512,
                max_len: 32,
                num_domains: domains,
                classes_per_domain: classes,
            },
            graph_heads: 2,
            graph_dim: 16,
            gamma: 1.0,
            temperature: 1.0,
            teacher_lr: 1e-3,
            student_lr: 2e-3,
            teacher_epochs: 3,
            student_epochs: 10,
            batch_size: 32,
            seq_len: 32,
            seed: 0,
            sample_rate: 1.0,
            mode: Mode::Hrkd,
            ablations: Ablations::default(),
            detach_prototypes: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.teacher.validate()?;
        self.student.validate()?;
        if !(self.sample_rate > 0.0 && self.sample_rate <= 1.0) {
            return Err(HarnessError::Config(format!(
                "sample_rate must lie in (0, 1], got {}",
                self.sample_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(HarnessError::Config("batch_size must be positive".into()));
        }
        if self.seq_len < 2 || self.seq_len > self.teacher.max_len || self.seq_len > self.student.max_len
        {
            return Err(HarnessError::Config(format!(
                "seq_len {} must lie in 2..=min(teacher max_len {}, student max_len {})",
                self.seq_len, self.teacher.max_len, self.student.max_len
            )));
        }
        if self.teacher.num_domains != self.student.num_domains
            || self.teacher.classes_per_domain != self.student.classes_per_domain
        {
            return Err(HarnessError::Config(
                "teacher and student must agree on domains and class counts".into(),
            ));
        }
        if self.teacher.heads != self.student.heads {
            return Err(HarnessError::Config(format!(
                "attention distillation needs equal head counts, teacher has {} and student {}",
                self.teacher.heads, self.student.heads
            )));
        }
        if self.teacher.num_layers % self.student.num_layers != 0 {
            return Err(HarnessError::Config(format!(
                "uniform layer matching undefined: teacher {} layers, student {}",
                self.teacher.num_layers, self.student.num_layers
            )));
        }
        if self.graph_heads == 0 || self.graph_dim == 0 {
            return Err(HarnessError::Config(
                "graph_heads and graph_dim must be positive".into(),
            ));
        }
        if !(self.gamma >= 0.0) || !(self.temperature > 0.0) {
            return Err(HarnessError::Config(
                "gamma must be non-negative and temperature positive".into(),
            ));
        }
        Ok(())
    }

    pub fn load_toml(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

/// SHA-256 of a value's canonical JSON; identifies a config in checkpoints.
pub fn config_digest<T: Serialize>(value: &T) -> [u8; 32] {
    let json = serde_json::to_string(value).expect("serializable");
    let mut hasher = Sha256::new();
    hasher.update(json.as_bytes());
    hasher.finalize().into()
}
