//! Fuzzy-attention decoding of steady-state visual evoked potentials.
//!
//! The crate covers the whole experimental loop: synthetic SSVEP
//! recordings ([`signal`]), the fuzzy attention filter ([`fuzzy`]), the
//! two-filter classifier ([`network`]), training and leave-one-subject-out
//! transfer ([`optim`]), scoring ([`eval`]), model inspection
//! ([`explain`]) and the experiment driver behind the CLI ([`experiment`]).

pub mod error;
pub mod eval;
pub mod experiment;
pub mod explain;
pub mod fuzzy;
pub mod gradcheck;
pub mod network;
pub mod optim;
pub mod params;
pub mod rng;
pub mod signal;

pub use error::{Error, Result};
