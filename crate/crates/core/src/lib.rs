//! Solver and diagnostics for the one-phase Bernoulli problem
//! `J_Q(u) = ∫ |∇u|^2 + Q^2 χ_{u>0}` with `Q = dist(x, Γ)^γ`.

// `!(x > 0.0)` is the validation idiom: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audit;
pub mod blowup;
pub mod cli;
pub mod error;
pub mod field;
pub mod geometry;
pub mod minimizer;
pub mod strata;
pub mod weiss;

pub use error::{Error, Result};
