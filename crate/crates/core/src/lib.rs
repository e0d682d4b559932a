//! Numerical laboratory for random compositions of Liverani–Saussol–Vaienti
//! intermittent maps.
//!
//! The crate is `no_std` (with `alloc`). Enable `parallel` to spread per-anchor
//! work over a rayon pool; results are always reduced in anchor order, so the
//! numbers do not depend on the thread count.
//!
//! Layout:
//! - [`lsv`]: the maps `T_γ`, their inverse left branch and parameter velocities.
//! - [`grid`]: graded partitions of `[0, 1]` and cell-average functions on them.
//! - [`transfer`]: Ulam transfer operators, cocycle compositions, equivariant
//!   densities, cone diagnostics and decay measurements.
//! - [`base`]: the ergodic driver and the parameter processes `β`, `δ`.
//! - [`stats`]: observables, Birkhoff-sum CLT experiments, Green–Kubo variance.
//! - [`response`]: response densities and the derivative of the variance.
#![cfg_attr(not(feature = "std"), no_std)]
// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod base;
pub mod error;
pub mod fit;
pub mod grid;
pub mod lsv;
mod math;
pub mod profile;
pub mod response;
pub mod stats;
pub mod transfer;

pub use error::{Error, Result};
pub use math::pairwise_sum;

/// Outcome of an experiment whose theoretical statement is asymptotic.
///
/// `Inconclusive` means the error budget was too large to decide, which is
/// different from the measured rate contradicting the theory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::Inconclusive => "inconclusive",
        }
    }
}
