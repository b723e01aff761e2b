//! 2D compliance-minimization topology optimization plus a convolutional
//! surrogate model.
//!
//! The pipeline: [`fem`] solves plane-stress problems on a regular quad grid,
//! [`simp`] runs the density-based optimizer that produces near-optimal
//! layouts, [`dataset`] samples problem conditions and persists
//! (initial-field tensor, optimized layout) pairs, [`nn`] is a small dense
//! CNN engine with reverse-mode gradients, [`unet`] assembles the
//! encoder-decoder surrogate and its training loop, and [`eval`] scores
//! predictions against the optimizer (compliance / pixel / volume errors and
//! disconnection detection).

pub mod dataset;
pub mod eval;
pub mod fem;
pub mod nn;
pub mod simp;
pub mod unet;
pub mod util;
