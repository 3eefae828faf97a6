//! Split-step quantum walks, their band geometry, quench dynamics and
//! state tomography.

pub mod dynamics;
pub mod error;
pub mod geometry;
pub mod spin;
pub mod tomography;
pub mod walk;

pub use error::{Error, Result};
