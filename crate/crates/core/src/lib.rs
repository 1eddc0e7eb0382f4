//! Workbench for diffusive molecular communication.
//!
//! A transmitter at the origin releases impulses of information molecules
//! (on/off keying); a passive spherical receiver counts the molecules inside
//! it at fixed times in every bit interval. The crate provides
//!
//! * [`env`]: physical parameters and elementary relations,
//! * [`channel`]: the analytic expected signal and Poisson statistics,
//! * [`mutual_info`]: dependence between two receiver observations,
//! * [`sim`]: a particle-based stochastic simulator,
//! * [`detect`]: maximum-likelihood sequence and weighted-sum detectors,
//! * [`ber`]: analytic and Monte Carlo bit-error analysis,
//! * [`config`] and [`experiments`]: the batch experiment harness.

// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ber;
pub mod channel;
pub mod config;
pub mod detect;
pub mod env;
pub mod error;
pub mod experiments;
pub mod mutual_info;
pub mod parallel;
pub mod quadrature;
pub mod sim;

pub use channel::{BitSequence, CdfMethod, DegradationMode, SignalModel};
pub use env::{Environment, NoiseProfile, RateMode, TransmissionSpec};
pub use error::{Error, Result};
pub use parallel::Execution;
pub use sim::{EnzymeMode, ObservationMatrix, Propagation, SimConfig};
