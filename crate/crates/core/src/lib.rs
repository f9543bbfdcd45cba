//! Align complete proxy Gaussian-splat objects to degraded partial objects in a
//! reconstructed scene, then refine their appearance.
//!
//! The pipeline is coarse 7-DOF registration, iterative correspondence-driven
//! pose and anisotropic shape refinement, and SH-only appearance fitting. A
//! synthetic benchmark generator with planted ground truth is included.

pub mod appearance;
pub mod cli;
pub mod correspond;
pub mod error;
pub mod grid;
pub mod io;
pub mod kdtree;
pub mod math;
pub mod optim;
pub mod register;
pub mod render;
pub mod splat;
pub mod synth;
pub mod viewsel;

pub use error::{Error, Result};
pub use grid::{ColorImage, DepthMap, Grid, Mask};
pub use math::{Aabb, Mat3, Vec3};
pub use splat::{AnisotropicTransform, Camera, GaussianPrimitive, SimilarityTransform, SplatCloud};
