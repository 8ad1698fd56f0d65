//! Robust fixed-order dynamic output feedback for interval fractional-order
//! LTI systems `D^alpha x = A x + B u`, `y = C x`, `0 < alpha < 2`.
//!
//! The crate assembles the synthesis LMIs for the `0 < alpha < 1` and
//! `1 <= alpha < 2` regimes, solves them with a self-contained
//! semidefinite feasibility solver, recovers controller matrices, certifies
//! them against the interval family, and simulates the closed loop with a
//! Grünwald-Letnikov scheme.

pub mod cli;
pub mod error;
pub mod fosim;
pub mod interval;
pub mod linalg;
pub mod lmi;
pub mod sdp;
pub mod stability;
pub mod synthesis;

pub use error::{Error, Result};
