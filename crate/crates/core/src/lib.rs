//! Core numerics for hierarchical relational knowledge distillation.
//!
//! Everything in this crate is pure computation: a dense-tensor tape with
//! reverse-mode differentiation, a miniature transformer encoder with per-layer
//! attention and hidden-state exposure, the distillation losses, per-domain
//! prototypes, the two-layer domain-relational graph attention network, and the
//! hierarchical compare-aggregate mechanism. IO, file formats, and the training
//! harness live in the companion `hrkd` crate.
//!
//! The crate is `no_std` (with `alloc`) so the math can be embedded anywhere;
//! float transcendentals go through `libm`.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod aggregate;
pub mod check;
pub mod encoder;
pub mod error;
pub mod graph;
pub mod losses;
pub mod optim;
pub mod params;
pub mod prototype;
pub mod tape;
pub mod tensor;

pub use error::{CoreError, Result};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
