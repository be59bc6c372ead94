//! Spectra of the almost Mathieu operator at golden-mean frequency and a
//! renormalization operator acting on commuting pairs of skew-product maps.

pub mod amspec;
pub mod arith;
pub mod cocycle;
pub mod error;
pub mod experiments;
pub mod renorm;
pub mod sl2;

pub use error::{Error, Result};
