//! Simulation and analysis of photon interference between independent
//! two-level emitters routed into programmable spatial modes.
//!
//! The crate is split along the physical pipeline:
//!
//! * [`dynamics`]: Lindblad evolution of the emitter ensemble and brute-force
//!   correlation functions via the quantum regression theorem.
//! * [`correlation`]: closed-form common-mode g²(τ), detector response and
//!   reference baselines.
//! * [`fitting`]: histogram normalization and joint reduced-χ² fitting.
//! * [`holography`]: phase-only hologram synthesis, lens propagation and
//!   single-layer wavefront matching.
//! * [`hom`]: pulsed two-emitter Hong–Ou–Mandel coincidences and visibility.
//! * [`io`]: configuration, file formats and the scenario runner behind the
//!   `qdinterf` binary.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod correlation;
pub mod dynamics;
pub mod error;
pub mod fitting;
pub mod holography;
pub mod hom;
pub mod io;
pub mod trace;
pub mod units;

pub use error::{Error, Result};
pub use trace::CorrelationTrace;

pub use num_complex::Complex64 as C64;
