//! Software model of a 1D-CNN digital predistortion chain.
//!
//! The crate covers the whole loop: an OFDM stimulus ([`signal`]), a
//! memory-polynomial PA surrogate ([`pa`]), a from-scratch 1D-CNN with
//! backpropagation ([`neural`]), indirect-learning training ([`ila`]),
//! a bit-accurate fixed-point inference engine ([`quant`]), linearity
//! metrics ([`metrics`]), a PA-modelling comparison ([`benchmark`]) and a
//! multiplier-count estimator ([`hw`]).

pub mod benchmark;
pub mod error;
pub mod hw;
pub mod ila;
pub mod metrics;
pub mod neural;
pub mod pa;
pub mod par;
pub mod quant;
pub mod rng;
pub mod scenario;
pub mod signal;

pub use error::{Error, Result};
pub use signal::ComplexSignal;
