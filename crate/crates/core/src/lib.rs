//! Two-species Kawasaki dynamics with annihilation on the discrete torus,
//! its discretized reaction-diffusion system, and the two-phase Stefan
//! problem obtained in the fast-reaction limit.
//!
//! The crate is organised by level of description:
//!
//! * [`lattice`]: torus geometry, fields, difference operators, snapshots.
//! * [`sim`]: exact event-driven simulation of the particle system.
//! * [`hydro`]: the discretized hydrodynamic system, the torus heat kernel
//!   and the a-priori bounds on its solutions.
//! * [`stefan`]: the limiting equation `∂t w = Δ𝒟(w)`, its weak form and
//!   interface diagnostics in one dimension.
//! * [`flow`]: averaging kernels, flows on boxes, local averages, the
//!   telescoping identity and the quadratic-exponential concentration bound.
//! * [`oracle`]: exact master-equation computations on tiny lattices.
//! * [`harness`]: configuration, convergence experiments and CSV reports.

pub mod error;
pub mod flow;
pub mod harness;
pub mod hydro;
pub mod lattice;
pub mod library;
pub mod ode;
pub mod oracle;
pub mod rng;
pub mod sim;
pub mod stats;
pub mod stefan;

pub use error::{Error, Result};
pub use lattice::{DensityField, PairConfig, Species, Torus};
