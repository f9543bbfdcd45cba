//! Synthetic scenes with planted ground truth, view dropping, degradation and metrics.

mod bundle;
mod degrade;
pub mod metrics;
mod scene;

pub use bundle::{file_sha256, BundleManifest, SceneBundle, BUNDLE_VERSION};
pub use degrade::{degrade_object, drop_views, visibility, Degraded};
pub use metrics::{chamfer, emd, miou};
pub use scene::{camera_ring, gen_scene, object_masks, Scene, ShapeKind};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_objects: usize,
    pub primitives_per_object: usize,
    pub sh_degree: usize,
    pub n_views: usize,
    pub image_width: usize,
    pub image_height: usize,
    pub focal: f64,
    pub ring_radius: f64,
    pub ring_height: f64,
    /// Plane splats per side.
    pub plane_resolution: usize,
    /// Range of the planted isotropic scale.
    pub scale_range: [f64; 2],
    /// When false the planted rotation is the identity.
    pub random_rotation: bool,
    /// Per-axis planted scale deviation `s·(1 ± anisotropy)`.
    pub anisotropy: f64,
    /// Per-channel albedo offset between proxy and true object.
    pub albedo_mismatch: f64,
    pub max_placement_attempts: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_objects: 1,
            primitives_per_object: 800,
            sh_degree: 1,
            n_views: 35,
            image_width: 128,
            image_height: 96,
            focal: 130.0,
            ring_radius: 3.0,
            ring_height: 1.8,
            plane_resolution: 20,
            scale_range: [0.8, 1.25],
            random_rotation: true,
            anisotropy: 0.1,
            albedo_mismatch: 0.15,
            max_placement_attempts: 200,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Validation(format!("synth: {m}")));
        if self.n_objects == 0 {
            return bad("n_objects must be ≥ 1");
        }
        if self.primitives_per_object < 8 {
            return bad("primitives_per_object must be ≥ 8");
        }
        if self.sh_degree > crate::splat::MAX_SH_DEGREE {
            return bad("sh_degree must be ≤ 3");
        }
        if self.n_views < 2 || self.image_width == 0 || self.image_height == 0 {
            return bad("need ≥ 2 views and nonzero image size");
        }
        if !(self.focal > 0.0 && self.ring_radius > 0.0 && self.ring_height.is_finite()) {
            return bad("focal and ring_radius must be positive");
        }
        let [lo, hi] = self.scale_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return bad("scale_range must satisfy 0 < lo ≤ hi");
        }
        if !(0.0..0.5).contains(&self.anisotropy) || !(0.0..0.5).contains(&self.albedo_mismatch) {
            return bad("anisotropy and albedo_mismatch must lie in [0, 0.5)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DegradeConfig {
    /// Fraction of views moved to the test split.
    pub drop_fraction: f64,
    /// Position jitter of surviving primitives, × object bbox mean dimension.
    pub jitter_factor: f64,
    /// Minimum blend weight in some training view for a primitive to survive.
    pub coverage_threshold: f64,
}

impl Default for DegradeConfig {
    fn default() -> Self {
        Self {
            drop_fraction: 6.0 / 7.0,
            jitter_factor: 0.002,
            coverage_threshold: 0.01,
        }
    }
}

impl DegradeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.drop_fraction) {
            return Err(Error::Validation(format!(
                "degrade.drop_fraction {} outside [0, 1)",
                self.drop_fraction
            )));
        }
        if !(self.jitter_factor >= 0.0) || !(self.coverage_threshold > 0.0) {
            return Err(Error::Validation("degrade: jitter must be ≥ 0 and threshold > 0".into()));
        }
        Ok(())
    }
}
