//! Meshfree GMLS discretizations of vector Laplacians and covariant
//! derivatives on point clouds sampled from closed manifolds.

pub mod analytic;
pub mod error;
pub mod extrinsic;
pub mod geometry;
pub mod gmls;
pub mod harness;
pub mod intrinsic;
pub mod io;
pub mod jet;
pub mod operators;
pub mod pde;
pub mod tangent;

pub use error::{Error, Result};
pub use geometry::Manifold;
