//! Common and individual feature analysis for linked data sets.
//!
//! Blocks `Y_n` that share a row dimension are split into a common
//! orthonormal basis `Ā` shared by every block and per-block individual
//! parts. The crate covers preprocessing, sequential (unknown `c`) and
//! fixed-`c` extraction, random-projection scaling, source separation and
//! nonnegative factorisation on the common space, and the classification
//! and clustering applications built on top.

pub mod apps;
pub mod bench;
pub mod cifa;
pub mod cobe;
pub mod cobec;
pub mod error;
pub mod linalg;
pub mod multiblock;
pub mod preprocess;
pub mod rng;
pub mod scaling;

pub use error::{Error, Result};
