//! Generalized time-reversal (Loschmidt echo) experiments on a quantized
//! chaotic 2D well and its sign-randomized band-matrix counterpart.
//!
//! Pipeline: [`model::diagonalize_reference`] builds the windowed model,
//! [`preparation`] makes the initial state, [`propagation`] runs the forward
//! and reversed evolution, and [`analysis`] extracts the compensation time.

pub mod analysis;
pub mod basis;
pub mod constants;
pub mod ermt;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod model;
pub mod preparation;
pub mod propagation;

pub use error::{Error, Result};
