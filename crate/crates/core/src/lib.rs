//! Reconstruction of Young's modulus fields inside tetrahedral elastic bodies
//! from displacement observations of a subset of vertices.
//!
//! The crate is organised bottom-up:
//!
//! - [`mesh`]: tetrahedral meshes, plate generation, region maps, JSON and VTK I/O.
//! - [`fem`]: constant-strain tetrahedron stiffness, assembly and sparse direct solves.
//! - [`observation`]: observation masks, observed displacement matrices, data residual.
//! - [`superelement`]: clustering of elements around movable centers.
//! - [`reconstruct`]: the composite objective, CMA-ES, and the alternating solver.
//!
//! Units are kPa (= N/mm²) for moduli, mm for lengths and displacements, N for forces.

pub mod error;
pub mod fem;
pub mod mesh;
pub mod observation;
pub mod reconstruct;
pub mod superelement;

pub use error::{Error, Result};

/// A point or vector in 3D, in mm unless stated otherwise.
pub type Point3 = [f64; 3];
