//! Layered Gaussian-splat avatars.
//!
//! Gaussians live on a pair of 2D maps (front and back) anchored to a template
//! surface. This crate covers everything downstream of the map prediction:
//!
//! - [`map`], [`gaussians`], [`topology`], [`normals`]: the map data model,
//!   Gaussian extraction, pixel adjacency with front/back stitching, and
//!   surface normals computed from the pixel neighbourhood.
//! - [`skinning`]: forward kinematics and linear blend skinning of positions,
//!   covariances and normals.
//! - [`losses`]: every geometric, segmentation and image loss term, with
//!   analytic gradients for the point-based ones.
//! - [`render`]: a deterministic forward splat rasterizer.
//! - [`collision`]: Laplacian-based body/clothing collision handling used when
//!   transferring a garment between avatars.
//! - [`pipeline`]: clothing segmentation, desk-scale layer fitting, transfer
//!   and animation.
//! - [`io`], [`synth`], [`config`]: file formats, synthetic scenes and the
//!   global configuration file.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod collision;
pub mod config;
pub mod error;
pub mod gaussians;
pub mod io;
pub mod losses;
pub mod map;
pub mod math;
pub mod normals;
pub mod pipeline;
pub mod render;
pub mod skinning;
pub mod spatial;
pub mod synth;
pub mod topology;

pub use error::{Error, Result};
pub use gaussians::{covariance_from_params, extract_gaussians, GaussianSet};
pub use map::{GaussianMap, MapSide, PixelRef, TemplateGeometry, TemplateMap};
pub use math::{Mat3, Vec3};
pub use normals::compute_normals;
pub use topology::{build_adjacency, AdjacencyGraph};
