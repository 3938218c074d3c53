//! Variational linear attention: a recurrent memory that writes with the
//! exact rank-one update of a regularised least-squares objective, together
//! with linear, delta-rule and softmax baselines, a parallel scan, stability
//! diagnostics, synthetic recall tasks and an experiment harness.

pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod kernels;
pub mod linalg;
pub mod rng;
pub mod scan;
pub mod stream;
pub mod tasks;

pub use error::{Error, Result};
pub use kernels::{HeadConfig, KernelKind, Key, Memory, PenaltyDirection, VlaState};
pub use linalg::{Matrix, Vector};
