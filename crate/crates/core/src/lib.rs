//! Numerical toolkit for the elliptic snapshot of the water-waves problem on a
//! two-dimensional vertical fluid slice.
//!
//! The crate solves the mixed Dirichlet/Neumann Laplace problem for the
//! velocity potential on sigma-mapped triangulations, assembles the discrete
//! Dirichlet-to-Neumann operator of the free surface, and evaluates the
//! boundary functionals that bound the size of the region enclosed between
//! two bottoms.

pub mod acceptance;
pub mod dtn;
pub mod error;
pub mod functionals;
pub mod geometry;
pub mod harness;
pub mod linalg;
pub mod mesh;
pub mod quadrature;
pub mod report;
pub mod solver;

pub use error::{Error, Result};
pub use geometry::{CavityDescription, FluidDomain, Profile};
pub use mesh::{BoundaryTag, Mesh};
pub use solver::{ScalarField, SolverOptions, SurfaceTrace};
