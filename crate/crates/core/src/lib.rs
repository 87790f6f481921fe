//! Numerical laboratory for degenerate Itô SDEs
//! `dX = √(1/ψ(X))·σ(X) dW + G(X) dt` with discontinuous coefficients.
//!
//! The pieces: coefficient families and pointwise audits
//! ([`coefficients`]), hypothesis arithmetic ([`conditions`]), the stationary
//! density and drift split ([`density`]), the weighted parabolic semigroup
//! ([`semigroup`]), Euler–Maruyama ensembles ([`simulator`]) and statistical
//! cross-checks ([`diagnostics`]).

pub mod coefficients;
pub mod density;
pub mod diagnostics;
pub mod conditions;
pub mod error;
pub mod grid;
pub mod linalg;
pub mod report;
pub mod rng;
pub mod semigroup;
pub mod simulator;
pub mod testfn;

pub use error::{Error, Result};
