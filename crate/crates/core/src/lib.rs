//! Semi-supervised training with a bias attractor.
//!
//! During training a small residual network `Δf_ω` is added on top of the
//! linear classifier's logits and absorbs the bias that class imbalance and
//! noisy pseudo-labels put into the training loss. Its parameters are tuned
//! one level up, against a class-balanced loss, through a single unrolled
//! step of the classifier. At test time the attractor is dropped.

// `!(x >= 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bilevel;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod numcore;
pub mod pseudo;
pub mod selfcheck;

pub use error::{Error, Result};
