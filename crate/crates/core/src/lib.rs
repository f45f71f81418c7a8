//! Lifelong learner built from a sparse mixture of experts with
//! retrieval-enhanced gating, a Dirichlet-process task mixture that decides
//! when to grow new experts, and a three-layer control stack, plus the
//! synthetic-stream harness that measures regret, forgetting and sample
//! complexity.

pub mod dpmm;
pub mod error;
pub mod harness;
pub mod prag;
pub mod rsho;
pub mod moe;
pub mod numerics;
pub mod trainer;

pub use error::{DraeError, Result};
