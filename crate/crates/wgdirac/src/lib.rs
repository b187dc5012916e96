//! Boundary-integral spectral solver for obstacle-lined waveguides.

pub mod bands;
pub mod dirac;
pub mod error;
pub mod fdoracle;
pub mod gapgreens;
pub mod geometry;
pub mod interface;
pub mod io;
pub mod layerops;
pub mod qpgreens;
mod special;

pub use error::{Error, Result};
