//! Joint training of a student network on labeled base-domain data and
//! unlabeled target-domain data via consistency distillation against an
//! exponential-moving-average teacher, followed by episodic N-way K-shot
//! evaluation and feature-clustering analysis. Everything runs on a minimal
//! f64 reverse-mode autodiff core, deterministically under explicit seeds.

#![forbid(unsafe_code)]

pub mod checkpoint;
pub mod data;
pub mod distill;
pub mod error;
pub mod eval;
pub mod model;
pub mod ops;
pub mod optim;
pub mod seeding;
pub mod tensor;
mod util;

pub use error::{Error, Result};
pub use tensor::Tensor;
