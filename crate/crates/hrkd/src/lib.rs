//! Multi-domain knowledge distillation harness.
//!
//! Builds on `hrkd-core` for all numerics and adds what a run needs: a
//! synthetic multi-domain corpus generator (with TSV ingestion for real
//! data), tokenization, multi-task teacher training, ratio-weighted student
//! distillation with ablation switches and few-shot subsampling, binary
//! checkpoints, line-delimited metrics, reports, and a gradient-check suite.

pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod error;
pub mod grad_suite;
pub mod metrics;
pub mod train;

pub use config::{Ablations, Mode, RunConfig};
pub use error::{HarnessError, Result};
