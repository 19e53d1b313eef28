//! Part-aware non-rigid fitting of triangle meshes to labeled point clouds.
//!
//! A template mesh is deformed by minimizing a sum of quadratic regularizers
//! on per-edge affine transforms and a nonlinear data term that pulls each
//! labeled part toward the matching part of a point cloud.

pub mod data_terms;
pub mod energy;
pub mod error;
pub mod io;
pub mod mesh;
pub mod metrics;
pub mod optimizer;
pub mod shapes;
pub mod sharp;
pub mod sparse;
pub mod spatial;
pub mod transforms;

pub use error::{Error, Result};
pub use mesh::{LabeledPointCloud, Mesh, PartLabel};
