//! Distributionally robust stability-constrained scheduling.
//!
//! The crate covers the whole chain from a lossless network model to a
//! unit-commitment schedule:
//!
//! * [`grid`]: admittance assembly, Kron reduction and the gSCR index.
//! * [`regression`]: training data and the boundary-aware linear surrogate,
//!   backed by an active-set QP solver.
//! * [`sensitivity`]: KKT and eigenvalue perturbation, Delta-method moments.
//! * [`dro`]: the second-order-cone form of the moment-based chance constraint.
//! * [`uc`]: unit commitment by branch-and-bound over a conic interior point method.
//! * [`mc`]: Monte Carlo oracles and experiment drivers.

pub mod desk;
pub mod dro;
pub mod error;
pub mod grid;
pub mod regression;
pub mod sensitivity;
pub mod mc;
pub mod uc;

pub use error::{Error, Result};
