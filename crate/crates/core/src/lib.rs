//! Simulation twin of a lattice-structured EIT tactile skin: geometry and
//! meshing, the forward problem, touch phantoms, sensitivity sweeps, image
//! reconstruction, datasets, metrics, gesture recognition and a session
//! service for live rendering.

pub mod dataset;
pub mod error;
pub mod forward;
pub mod geometry;
pub mod gestures;
pub mod inverse;
pub mod linalg;
pub mod metrics;
pub mod phantom;
pub mod rng;
pub mod service;
pub mod sweep;

pub use error::{Error, Result};
