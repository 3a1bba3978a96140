//! Photon emission of undriven quantum systems when counter-rotating
//! couplings are kept.
//!
//! The crate computes stationary emission rates of a single bosonic system
//! and of a collective atomic mode coupled to a lossy cavity, by three
//! independent routes: closed-form expressions, steady states of the
//! second-moment equations, and density-matrix master-equation dynamics on
//! truncated Fock spaces.

// `!(a < b)` guards are deliberate: NaN must fail them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bath;
pub mod composite;
pub mod error;
pub mod master;
pub mod operators;
pub mod single;
pub mod validation;

pub use error::{Error, Result};
pub use operators::C64;
