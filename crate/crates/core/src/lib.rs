//! Geometry of weighted InfoNCE optima.

pub mod cli;
pub mod descent;
pub mod distgeo;
pub mod error;
pub mod experiments;
pub mod infonce;
pub mod io;
pub mod linalg;
pub mod matrices;
pub mod metrics;
pub mod optima;
pub mod weights;

pub use error::{Error, Result};
