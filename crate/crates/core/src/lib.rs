//! Sexagenary-cycle temporal representation and temporal-alignment training
//! for small autoregressive language models.
//!
//! The pipeline runs from calendar arithmetic ([`calendar`]) through spiral
//! coordinates and sinusoidal encodings ([`geometry`]), corpus annotation
//! ([`annotate`]), a toy transformer with reverse-mode gradients ([`model`]),
//! the alignment objective and trainer ([`alignment`]), to evaluation
//! ([`eval`]) and the end-to-end desk experiment ([`experiment`]).

pub mod alignment;
pub mod annotate;
pub mod calendar;
mod error;
pub mod eval;
pub mod experiment;
pub mod geometry;
pub mod model;

pub use error::{Error, Result};
