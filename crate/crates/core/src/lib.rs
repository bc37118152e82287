//! Exact simulation and key-rate analysis of two-sender secure dense coding
//! with a shared GHZ state over noisy quantum channels.
//!
//! The crate covers the whole pipeline: dense linear algebra ([`linalg`]),
//! states and measurements ([`states`]), Kraus noise models ([`channels`]),
//! exact run statistics ([`protocol`]), ancilla-based equivalence checks
//! ([`purification`]), entropic rate bounds ([`rates`]) and a finite-size
//! sampling and hashing demonstrator ([`postprocess`]).

pub mod channels;
pub mod error;
pub mod linalg;
pub mod postprocess;
pub mod protocol;
pub mod purification;
pub mod rates;
pub mod states;

pub use error::{Error, Result};
