//! Saliency estimation for omni-directional (360°) images.
//!
//! An equirectangular (ERP) image is cut into gnomonic tangent patches on a
//! regular grid of viewing directions and at several angles of view. A 2D
//! saliency backend scores every patch, a learned per-elevation bias grid
//! reweights it, a pixel-wise attention network fuses the angles of view,
//! and the patch maps are projected back onto the sphere and averaged.
//!
//! All numeric code is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the scalar to `f64`, which the command-line tool uses.

pub mod backend;
pub mod bias;
pub mod config;
pub mod error;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod learning;
pub mod metrics;
pub mod multiscale;
pub mod patching;
pub mod pipeline;
pub mod scalar;
pub mod synthetic;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Grid64 = grid::Grid<f64>;
pub type Grid32 = grid::Grid<f32>;
pub type Direction = geometry::Direction<f64>;
pub type Frustum = geometry::ViewFrustum<f64>;
pub type Patch = patching::Patch<f64>;
pub type BiasGrid = bias::BiasGrid<f64>;
pub type AttentionParams = multiscale::AttentionParams<f64>;
pub type ScaleStack = multiscale::ScaleStack<f64>;
pub type FixationSet = metrics::FixationSet<f64>;
