//! Expressivity laboratory for selective state-space sequence layers.
//!
//! The crate answers one question from several directions: what functions
//! of an input sequence can a selective state-space (S6) layer compute,
//! compared with attention and with time-invariant state-space layers?
//!
//! - [`layers`] runs the models themselves: LTI scans, the selective S6
//!   recurrence and its simplified variants, causal linear and softmax
//!   attention, and the full gated block.
//! - [`polyalg`] unrolls each layer symbolically into an exact sparse
//!   multivariate polynomial, making degree claims checkable.
//! - [`construct`] goes the other way: it compiles a target monomial or
//!   polynomial into explicit block weights and certifies the result
//!   numerically.
//! - [`genbound`] evaluates a norm-based generalization certificate for the
//!   S6 classifier, including its length sweep.
//! - [`datasets`], [`trainer`], and [`cli`] provide the synthetic
//!   benchmarks, deterministic desk-scale training, and the command-line
//!   front end.
//!
//! Everything is f64, single-threaded per run, and deterministic: a seed
//! fixes every artifact byte.

pub mod cli;
pub mod construct;
pub mod datasets;
pub mod error;
pub mod genbound;
pub mod layers;
pub mod numerics;
pub mod polyalg;
pub mod trainer;

pub use error::{Error, Result};
