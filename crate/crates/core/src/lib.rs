//! Plane-wave ground states of the periodic Schrödinger–Poisson crystal
//! model on 3D tori, 2D cylindrical cells and 1D slabs.
//!
//! The pipeline is: build a [`geometry::Cell`], describe the ions with
//! [`densities::IonSpecies`], wrap an initial electron field in an
//! [`energy::Configuration`], run [`minimizer::minimize`] and assemble a
//! [`groundstate::GroundStateResult`].

pub mod densities;
pub mod energy;
pub mod error;
pub mod geometry;
pub mod groundstate;
pub mod minimizer;
pub mod persist;
pub mod problem;
pub mod spectral;

pub use error::{Error, Result};
pub use num_complex::Complex64;
