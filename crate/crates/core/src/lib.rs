//! Progressive point cloud attribute codec.

pub mod cloud;
pub mod codec;
pub mod entropy;
pub mod error;
pub mod fs;
pub mod layers;
pub mod metrics;
pub mod morton;
pub mod nn;
pub mod normals;
pub mod octree;
pub mod ply;

pub use cloud::{ColorSpace, PointCloud};
pub use error::{Error, Result};
