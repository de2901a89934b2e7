//! Geometry quality assessment for point clouds.
//!
//! The crate covers the full chain used to score a distorted point cloud
//! against its reference:
//!
//! - [`pointcloud`]: the point cloud type, PLY I/O and an exact k-d tree.
//! - [`voxel`]: block partitioning and binary / TDF / TSDF voxel grids.
//! - [`voxel_metrics`]: BCE, WBCE, focal loss, naBCE and TDF MSE on grids.
//! - [`pointset`]: point-to-point (D1) and point-to-plane (D2) MSE and PSNR,
//!   with quadric-fit normal estimation.
//! - [`autoencoder`]: a small 3D convolutional autoencoder with hand-written
//!   forward/backward passes and Adam, used to learn a latent space.
//! - [`perceptual`]: latent-space MSE between two clouds (perceptual loss)
//!   and feature-map analysis.
//! - [`eval`]: logistic fitting, leave-one-content-out cross-validation and
//!   the correlation statistics used to rank metrics against MOS.

pub mod autoencoder;
pub mod error;
pub mod eval;
pub mod perceptual;
pub mod pipeline;
pub mod pointcloud;
pub mod pointset;
pub mod voxel;
pub mod voxel_metrics;

pub use error::{Error, Result};
pub use pointcloud::{Point, PointCloud, SpatialIndex};
pub use voxel::{Repr, VoxelGrid};
