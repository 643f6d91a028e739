//! Equivalent-dipole extraction from magnitude-only near-field scans.
//!
//! Reconstructs a small set of infinitesimal electric/magnetic dipoles that
//! radiate the same field magnitudes measured on one or two arbitrary scan
//! surfaces. A genetic algorithm searches over dipole kind, position and
//! count, while a back-and-forth magnitude-enforcement iteration recovers
//! the complex moments per candidate layout through complex linear least
//! squares. The extracted model also retrieves field phase that the
//! magnitude-only measurement never observed.
//!
//! Module map:
//! - [`scan`] — scan geometry, field datasets, CSV I/O
//! - [`forward`] — dipole fields, PEC ground images, transfer matrices
//! - [`solver`] — relative errors, complex least squares, the iteration
//! - [`ga`] — the genetic search and the dipole-count outer loop
//! - [`sources`] — wire-antenna oracle and synthetic scene generation

pub mod constants;
pub mod error;
pub mod forward;
pub mod ga;
pub mod scan;
pub mod solver;
pub mod sources;

pub use error::{Error, Result};
